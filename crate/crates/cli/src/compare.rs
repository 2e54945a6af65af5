//! Sparsity-level parity: sweep a surrogate baseline over the weight grid
//! and re-solve with the budgeted method at each distinct sparsity level
//! the baseline reaches.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use cardsca::baselines::{baseline_solve, default_mu_sweep};
use cardsca::instances::{base_problem, read_instance, to_problem};
use cardsca::qp::solve_qp;
use cardsca::sca::sca_solve;
use clap::Args;

use crate::{CliError, CmdResult, Method, Tuning};

#[derive(Args)]
pub(crate) struct CompareArgs {
    /// Instance file in the mvqp text format
    pub instance: PathBuf,
    /// Surrogate baseline to sweep (sca-lp or sca-exp)
    #[arg(long, value_enum, default_value_t = Method::ScaLp)]
    pub method: Method,
    /// Optional CSV output (columns mu,baseline_obj,baseline_card,budget_obj,rel_gap)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

pub(crate) fn run(args: CompareArgs) -> CmdResult {
    if args.method == Method::ScaRp {
        return Err(CliError::Usage(
            "compare sweeps a surrogate baseline; pick --method sca-lp or sca-exp".into(),
        ));
    }
    let inst = read_instance(&args.instance)?;
    let n = inst.n();
    let base = base_problem(&inst)?;
    let settings = args.tuning.qp_settings();
    let config = args.tuning.sca_config();
    println!("instance: {} (n = {n})", args.instance.display());
    println!("baseline: {}", args.method.tag());

    // One budgeted solve per distinct sparsity level the sweep reaches.  A
    // dense level (card = n) leaves the budget vacuous, so it pairs with
    // the relaxed optimum instead.
    let mut budget_objectives: BTreeMap<usize, f64> = BTreeMap::new();
    let mut table: Vec<(f64, f64, usize, Option<f64>)> = Vec::new();
    for mu in default_mu_sweep() {
        let spec = args.tuning.surrogate(args.method, mu)?;
        let result = baseline_solve(&base, &spec, args.tuning.zero_tol, &settings)?;
        let card = result.cardinality;
        let budget_obj = if card == 0 {
            // An all-zero iterate leaves nothing to match a budget against.
            None
        } else {
            if !budget_objectives.contains_key(&card) {
                let objective = if card == n {
                    solve_qp(&base, &settings)?.objective
                } else {
                    sca_solve(&to_problem(&inst, card)?, &config)?.objective
                };
                budget_objectives.insert(card, objective);
            }
            budget_objectives.get(&card).copied()
        };
        table.push((mu, result.objective, card, budget_obj));
    }

    println!(
        "{:>10}  {:>16}  {:>5}  {:>16}  {:>10}",
        "mu", "baseline_obj", "card", "budget_obj", "rel_gap"
    );
    let mut worst_gap = 0.0f64;
    let mut csv = String::from("mu,baseline_obj,baseline_card,budget_obj,rel_gap\n");
    for &(mu, baseline_obj, card, budget_obj) in &table {
        match budget_obj {
            Some(bo) => {
                let rel_gap = (bo - baseline_obj) / baseline_obj.abs().max(1e-12);
                worst_gap = worst_gap.max(rel_gap.abs());
                println!(
                    "{mu:>10.1e}  {baseline_obj:>16.9e}  {card:>5}  {bo:>16.9e}  {rel_gap:>10.3e}"
                );
                let _ = writeln!(csv, "{mu:.6e},{baseline_obj:.9e},{card},{bo:.9e},{rel_gap:.6e}");
            }
            None => {
                println!("{mu:>10.1e}  {baseline_obj:>16.9e}  {card:>5}  {:>16}  {:>10}", "-", "-");
                let _ = writeln!(csv, "{mu:.6e},{baseline_obj:.9e},{card},,");
            }
        }
    }
    println!("distinct sparsity levels: {}", budget_objectives.len());
    println!("worst |rel_gap|: {worst_gap:.3e}");
    if let Some(path) = &args.out {
        fs::write(path, csv)
            .map_err(|e| CliError::Run(format!("writing {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
