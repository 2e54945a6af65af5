//! Benchmark grid: seeded instances × budgets × methods, one CSV row per
//! configuration (seed-averaged by default).

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use cardsca::instances::{base_problem, generate_mv, to_problem};
use cardsca::sca::sca_solve;
use cardsca::sparsity::numeric_card;
use clap::Args;
use rayon::prelude::*;

use crate::solve::baseline_to_budget;
use crate::{CliError, CmdResult, Method, Tuning};

#[derive(Args)]
pub(crate) struct BenchArgs {
    /// Comma-separated asset counts
    #[arg(long, value_delimiter = ',', default_values_t = vec![20, 50, 100])]
    pub n_list: Vec<usize>,
    /// Comma-separated budgets (each at least 3 and below every asset count)
    #[arg(long, value_delimiter = ',', default_values_t = vec![3, 5, 8])]
    pub k_list: Vec<usize>,
    /// Seeds 0..seeds at every grid point
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Methods to run
    #[arg(long, value_enum, value_delimiter = ',',
          default_values_t = vec![Method::ScaRp, Method::ScaLp, Method::ScaExp])]
    pub methods: Vec<Method>,
    /// Output CSV path
    #[arg(long, default_value = "bench.csv")]
    pub out: PathBuf,
    /// Worker threads for the fan-out; 0 uses every core
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Diagonal dominance of the generated covariances
    #[arg(long, default_value_t = 1.0)]
    pub dominance: f64,
    /// One CSV row per seed instead of seed-averaged rows
    #[arg(long)]
    pub per_seed: bool,
    #[command(flatten)]
    pub tuning: Tuning,
}

/// Per-run measurements feeding one CSV row (or a seed-average of rows).
struct RunMetrics {
    card: f64,
    obj: f64,
    iter_a: f64,
    time_a: f64,
    iter_s: f64,
    time_s: f64,
}

struct Task {
    method: Method,
    n: usize,
    k: usize,
    seed: u64,
}

struct BenchRow {
    n: usize,
    k_target: usize,
    k_aver: f64,
    obj: f64,
    iter_a: f64,
    time_a: f64,
    iter_s: f64,
    time_s: f64,
    method: String,
}

pub(crate) fn run(args: BenchArgs) -> CmdResult {
    validate(&args)?;
    let gen_hint = *args.k_list.iter().min().expect("validated non-empty");

    let mut tasks = Vec::new();
    for &method in &args.methods {
        for &n in &args.n_list {
            for &k in &args.k_list {
                for seed in 0..args.seeds {
                    tasks.push(Task { method, n, k, seed });
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| CliError::Run(format!("building the worker pool: {e}")))?;
    let outcomes: Vec<Result<RunMetrics, String>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| run_task(t, gen_hint, args.dominance, &args.tuning))
            .collect()
    });

    let (rows, failures) = aggregate(&args, &outcomes);
    let mut csv = String::from("n,K_target,K_aver,obj,iter_a,time_a,iter_s,time_s,method\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{:.4},{:.9e},{:.2},{:.6},{:.2},{:.6},{}",
            r.n, r.k_target, r.k_aver, r.obj, r.iter_a, r.time_a, r.iter_s, r.time_s, r.method
        );
    }
    fs::write(&args.out, csv)
        .map_err(|e| CliError::Run(format!("writing {}: {e}", args.out.display())))?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    if failures > 0 {
        println!("{failures} runs failed; their rows carry a trailing * on the method tag");
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(args: &BenchArgs) -> Result<(), CliError> {
    if args.n_list.is_empty() || args.k_list.is_empty() || args.methods.is_empty() {
        return Err(CliError::Usage("n-list, k-list, and methods must be non-empty".into()));
    }
    if args.seeds == 0 {
        return Err(CliError::Usage("seeds must be at least 1".into()));
    }
    for &k in &args.k_list {
        if k < 3 {
            return Err(CliError::Usage(format!(
                "budget K = {k} is below 3; the cap draw needs at least three assets"
            )));
        }
        for &n in &args.n_list {
            if k >= n {
                return Err(CliError::Usage(format!(
                    "budget K = {k} does not fit below asset count n = {n}"
                )));
            }
        }
    }
    Ok(())
}

fn run_task(
    task: &Task,
    gen_hint: usize,
    dominance: f64,
    tuning: &Tuning,
) -> Result<RunMetrics, String> {
    let inst = generate_mv(task.n, gen_hint, task.seed, dominance).map_err(|e| e.to_string())?;
    match task.method {
        Method::ScaRp => {
            let problem = to_problem(&inst, task.k).map_err(|e| e.to_string())?;
            let config = tuning.sca_config();
            let started = Instant::now();
            let result = sca_solve(&problem, &config).map_err(|e| e.to_string())?;
            let wall = started.elapsed().as_secs_f64();
            Ok(RunMetrics {
                card: numeric_card(&result.x, config.zero_tol) as f64,
                obj: result.objective,
                iter_a: result.outer_iterations as f64,
                time_a: wall,
                iter_s: result.subproblem_iterations_total() as f64,
                time_s: result.subproblem_seconds,
            })
        }
        Method::ScaLp | Method::ScaExp => {
            let base = base_problem(&inst).map_err(|e| e.to_string())?;
            let (result, _, _, wall) = baseline_to_budget(&base, task.method, task.k, tuning)
                .map_err(|e| match e {
                    CliError::Usage(m) | CliError::Run(m) => m,
                })?;
            Ok(RunMetrics {
                card: result.cardinality as f64,
                obj: result.objective,
                iter_a: result.iterations as f64,
                time_a: wall,
                iter_s: result.subproblem_iterations.iter().sum::<usize>() as f64,
                time_s: result.subproblem_seconds,
            })
        }
    }
}

/// Groups the outcomes back into grid order, averages over seeds unless
/// per-seed rows were asked for, and stable-sorts by (method, n, K).
fn aggregate(args: &BenchArgs, outcomes: &[Result<RunMetrics, String>]) -> (Vec<BenchRow>, usize) {
    let seeds = args.seeds as usize;
    let mut rows = Vec::new();
    let mut failures = 0usize;
    let mut idx = 0usize;
    for &method in &args.methods {
        for &n in &args.n_list {
            for &k in &args.k_list {
                let chunk = &outcomes[idx..idx + seeds];
                idx += seeds;
                for (seed, outcome) in chunk.iter().enumerate() {
                    if let Err(msg) = outcome {
                        failures += 1;
                        log::warn!(
                            "run failed (method {}, n {n}, K {k}, seed {seed}): {msg}",
                            method.tag()
                        );
                    }
                }
                if args.per_seed {
                    for outcome in chunk {
                        rows.push(match outcome {
                            Ok(m) => row_from(n, k, method.tag().to_string(), m),
                            Err(_) => failed_row(n, k, method),
                        });
                    }
                } else {
                    let ok: Vec<&RunMetrics> =
                        chunk.iter().filter_map(|o| o.as_ref().ok()).collect();
                    if ok.is_empty() {
                        rows.push(failed_row(n, k, method));
                        continue;
                    }
                    let mean = |f: fn(&RunMetrics) -> f64| {
                        ok.iter().map(|m| f(m)).sum::<f64>() / ok.len() as f64
                    };
                    let tag = if ok.len() < seeds {
                        format!("{}*", method.tag())
                    } else {
                        method.tag().to_string()
                    };
                    rows.push(BenchRow {
                        n,
                        k_target: k,
                        k_aver: mean(|m| m.card),
                        obj: mean(|m| m.obj),
                        iter_a: mean(|m| m.iter_a),
                        time_a: mean(|m| m.time_a),
                        iter_s: mean(|m| m.iter_s),
                        time_s: mean(|m| m.time_s),
                        method: tag,
                    });
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        (a.method.as_str(), a.n, a.k_target).cmp(&(b.method.as_str(), b.n, b.k_target))
    });
    (rows, failures)
}

fn row_from(n: usize, k: usize, method: String, m: &RunMetrics) -> BenchRow {
    BenchRow {
        n,
        k_target: k,
        k_aver: m.card,
        obj: m.obj,
        iter_a: m.iter_a,
        time_a: m.time_a,
        iter_s: m.iter_s,
        time_s: m.time_s,
        method,
    }
}

fn failed_row(n: usize, k: usize, method: Method) -> BenchRow {
    BenchRow {
        n,
        k_target: k,
        k_aver: f64::NAN,
        obj: f64::NAN,
        iter_a: f64::NAN,
        time_a: f64::NAN,
        iter_s: f64::NAN,
        time_s: f64::NAN,
        method: format!("{}*", method.tag()),
    }
}
