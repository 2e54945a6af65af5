//! Single-instance solving and instance-file generation.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cardsca::baselines::{baseline_solve, default_mu_sweep, BaselineResult};
use cardsca::instances::{
    base_problem, generate_mv, read_instance, render_instance, to_problem, write_instance,
    MvInstance,
};
use cardsca::qp::ConvexQpProblem;
use cardsca::sca::{sca_solve, ScaStatus};
use cardsca::sparsity::SupportSet;
use clap::Args;

use crate::{CliError, CmdResult, Method, Tuning};

#[derive(Args)]
pub(crate) struct SolveArgs {
    /// Instance file in the mvqp text format
    pub instance: PathBuf,
    /// Cardinality budget K (must be below the asset count)
    #[arg(long)]
    pub k: usize,
    /// Solver to run
    #[arg(long, value_enum, default_value_t = Method::ScaRp)]
    pub method: Method,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Args)]
pub(crate) struct GenerateArgs {
    /// Asset count (at least 3)
    #[arg(long)]
    pub n: usize,
    /// Sparsity hint: caps are drawn so some K-sparse portfolio is feasible
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Diagonal dominance of the covariance draw (conditioning knob)
    #[arg(long, default_value_t = 1.0)]
    pub dominance: f64,
    /// Output path; stdout when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub(crate) fn run_generate(args: GenerateArgs) -> CmdResult {
    let inst = generate_mv(args.n, args.k, args.seed, args.dominance)?;
    match &args.out {
        Some(path) => {
            write_instance(&inst, path)?;
            println!("wrote {} (n = {}, seed {})", path.display(), args.n, args.seed);
        }
        None => print!("{}", render_instance(&inst)),
    }
    Ok(ExitCode::SUCCESS)
}

pub(crate) fn run_solve(args: SolveArgs) -> CmdResult {
    let inst = read_instance(&args.instance)?;
    let n = inst.n();
    if args.k == 0 || args.k >= n {
        return Err(CliError::Usage(format!(
            "budget K must satisfy 1 <= K < n; got K = {}, n = {n}",
            args.k
        )));
    }
    println!("instance: {} (n = {n})", args.instance.display());
    println!("method: {}", args.method.tag());
    match args.method {
        Method::ScaRp => solve_budgeted(&inst, &args),
        Method::ScaLp | Method::ScaExp => solve_baseline(&inst, &args),
    }
}

fn solve_budgeted(inst: &MvInstance, args: &SolveArgs) -> CmdResult {
    let problem = to_problem(inst, args.k)?;
    let config = args.tuning.sca_config();
    let started = Instant::now();
    let result = sca_solve(&problem, &config)?;
    let wall = started.elapsed().as_secs_f64();
    let support = SupportSet::from_vector(&result.x, config.zero_tol);
    let card = support.len();
    println!("status: {:?}", result.status);
    println!("objective: {:.12e}", result.objective);
    println!("cardinality: {card} (budget {})", args.k);
    println!("support: {:?}", support.indices());
    println!("outer iterations: {}", result.outer_iterations);
    println!("subproblem iterations: {}", result.subproblem_iterations_total());
    println!("penalty gap: {:.3e}", result.penalty_gap);
    let cert = &result.certification;
    if cert.restricted_infeasible {
        println!("certification: failed (support restriction infeasible)");
    } else {
        println!(
            "certification: {} (restricted objective {:.12e}, gap {:.3e})",
            if cert.passed { "passed" } else { "failed" },
            cert.restricted_objective,
            cert.gap
        );
    }
    if result.invariant_violations.is_empty() {
        println!("invariant violations: none");
    } else {
        for v in &result.invariant_violations {
            println!("invariant violation: {v}");
        }
    }
    println!("wall seconds: {wall:.3}");
    let certified = cert.passed && result.status != ScaStatus::MaxIterations;
    machine_lines(&[
        ("method", args.method.tag().to_string()),
        ("status", format!("{:?}", result.status)),
        ("objective", format!("{:.12e}", result.objective)),
        ("cardinality", card.to_string()),
        ("support", join_indices(support.indices())),
        ("outer_iterations", result.outer_iterations.to_string()),
        ("subproblem_iterations", result.subproblem_iterations_total().to_string()),
        ("penalty_gap", format!("{:.6e}", result.penalty_gap)),
        ("certified", certified.to_string()),
    ]);
    Ok(if certified { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn solve_baseline(inst: &MvInstance, args: &SolveArgs) -> CmdResult {
    let base = base_problem(inst)?;
    let (result, mu, met_budget, wall) =
        baseline_to_budget(&base, args.method, args.k, &args.tuning)?;
    let support = SupportSet::from_vector(&result.x, args.tuning.zero_tol);
    println!("status: {}", if result.converged { "converged" } else { "stalled" });
    println!("objective: {:.12e}", result.objective);
    println!(
        "cardinality: {} (budget {} requested; the surrogate does not control it)",
        result.cardinality, args.k
    );
    println!("support: {:?}", support.indices());
    println!("weight: {mu:.3e} (met budget: {met_budget})");
    println!("iterations: {}", result.iterations);
    println!(
        "subproblem iterations: {}",
        result.subproblem_iterations.iter().sum::<usize>()
    );
    if let Some(last) = result.penalized_objectives.last() {
        println!("penalized objective: {last:.12e}");
    }
    println!("wall seconds: {wall:.3}");
    let success = if args.tuning.mu.is_some() { result.converged } else { met_budget };
    machine_lines(&[
        ("method", args.method.tag().to_string()),
        ("status", if result.converged { "converged".into() } else { "stalled".into() }),
        ("objective", format!("{:.12e}", result.objective)),
        ("cardinality", result.cardinality.to_string()),
        ("support", join_indices(support.indices())),
        ("iterations", result.iterations.to_string()),
        (
            "subproblem_iterations",
            result.subproblem_iterations.iter().sum::<usize>().to_string(),
        ),
        ("mu", format!("{mu:.6e}")),
        ("met_budget", met_budget.to_string()),
    ]);
    Ok(if success { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// Runs the surrogate baseline at the fixed weight from the flags, or
/// sweeps the default weight grid until the budget is met (first hit wins,
/// the largest weight otherwise).  Returns the chosen run, its weight,
/// whether it met the budget, and the wall seconds of that run alone.
pub(crate) fn baseline_to_budget(
    base: &ConvexQpProblem,
    method: Method,
    budget: usize,
    tuning: &Tuning,
) -> Result<(BaselineResult, f64, bool, f64), CliError> {
    let settings = tuning.qp_settings();
    if let Some(mu) = tuning.mu {
        let spec = tuning.surrogate(method, mu)?;
        let started = Instant::now();
        let result = baseline_solve(base, &spec, tuning.zero_tol, &settings)?;
        let wall = started.elapsed().as_secs_f64();
        let met = result.cardinality <= budget;
        return Ok((result, mu, met, wall));
    }
    let mut last: Option<(BaselineResult, f64, f64)> = None;
    for mu in default_mu_sweep() {
        let spec = tuning.surrogate(method, mu)?;
        let started = Instant::now();
        let result = baseline_solve(base, &spec, tuning.zero_tol, &settings)?;
        let wall = started.elapsed().as_secs_f64();
        if result.cardinality <= budget {
            return Ok((result, mu, true, wall));
        }
        last = Some((result, mu, wall));
    }
    let (result, mu, wall) = last.expect("the weight grid is never empty");
    Ok((result, mu, false, wall))
}

fn machine_lines(pairs: &[(&str, String)]) {
    println!("---");
    for (key, value) in pairs {
        println!("{key}={value}");
    }
}

fn join_indices(indices: &[usize]) -> String {
    indices.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}
