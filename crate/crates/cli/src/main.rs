//! `tvr`: run single robust optimizations, replicate benchmarks and turn
//! summaries into plot-ready series.

mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde_json::json;
use tvr_core::bench::{quantile7, replicate, SummaryTable};
use tvr_core::driver::{config_hash, run, History};
use tvr_core::TvrError;

use config::{load, resolve, ExperimentConfig, Resolved, META_KIND};

#[derive(Parser)]
#[command(name = "tvr", version, about = "Robust Bayesian optimization with targeted variance reduction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One optimization run; writes history.csv and meta.json.
    Run(Flags),
    /// Replicated method comparison; writes summary.csv, meta.json and per-trial histories.
    Bench(Flags),
    /// Per-method mean and 10/90% quantile gap series from a summary.csv.
    Report(ReportArgs),
}

#[derive(Args, Default)]
struct Flags {
    /// JSON experiment file (a meta.json from an earlier run also works).
    #[arg(long)]
    config: Option<PathBuf>,
    /// motivating, trig, trid or brake-like.
    #[arg(long)]
    problem: Option<String>,
    /// Noise distribution; for bench a comma-separated list.
    #[arg(long)]
    noise: Option<String>,
    /// Acquisition method; for bench a comma-separated list.
    #[arg(long)]
    method: Option<String>,
    /// Initial design size.
    #[arg(long)]
    n_init: Option<usize>,
    /// Sequential evaluations after the initial design.
    #[arg(long)]
    n_seq: Option<usize>,
    /// Points per round (ktvr only; must divide n-seq).
    #[arg(long)]
    batch_size: Option<usize>,
    /// Replications per method (bench).
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for bench (0 = one per core).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Multi-start count for acquisition and solution search.
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    summary: PathBuf,
    /// Output directory (defaults to the summary's directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<TvrError> for Failure {
    fn from(e: TvrError) -> Self {
        match e {
            TvrError::Config(_) | TvrError::Unknown { .. } | TvrError::Json(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn build_config(flags: &Flags, bench: bool) -> Result<Resolved, Failure> {
    let mut c = match &flags.config {
        Some(p) => load(p).map_err(Failure::Usage)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &flags.problem {
        c.problem = v.clone();
    }
    if let Some(v) = &flags.noise {
        if bench {
            c.noises = vec![v.clone()];
            c.noise = None;
        } else {
            c.noise = Some(v.clone());
        }
    }
    if let Some(v) = &flags.method {
        if bench {
            c.methods = vec![v.clone()];
        } else {
            c.method = v.clone();
        }
    }
    if let Some(v) = flags.n_init {
        c.n_init = v;
    }
    if let Some(v) = flags.n_seq {
        c.n_seq = v;
    }
    if let Some(v) = flags.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = flags.trials {
        c.trials = v;
    }
    if let Some(v) = flags.seed {
        c.seed = v;
    }
    if let Some(v) = flags.jobs {
        c.jobs = v;
    }
    if let Some(v) = &flags.out {
        c.out = v.clone();
    }
    if let Some(v) = flags.restarts {
        c.run.opt.restarts = v;
    }
    if bench && flags.noise.is_some() && c.noises.len() == 1 && !c.noises[0].contains(',') {
        c.noise = Some(c.noises[0].clone());
    }
    resolve(c, bench).map_err(Failure::Usage)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_history(h: &History, dir: &Path, name: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(io_err(&path))?;
    h.write_csv(BufWriter::new(f))?;
    Ok(())
}

fn cmd_run(flags: &Flags) -> Result<(), Failure> {
    let r = build_config(flags, false)?;
    let c = &r.config;
    let problem = &r.problems[0];
    let method = r.methods[0];
    let rounds = r.budgets().rounds(method)?;
    let history = run(&problem.spec, method, c.n_init, rounds, c.seed, &c.run)?;

    fs::create_dir_all(&c.out).map_err(io_err(&c.out))?;
    write_history(&history, &c.out, "history.csv")?;
    if !history.failures.is_empty() {
        let path = c.out.join("failures.csv");
        history.write_failures_csv(File::create(&path).map_err(io_err(&path))?)?;
        warn!("{} evaluations failed; see {}", history.failures.len(), path.display());
    }
    let solution = history.final_solution();
    let gap = solution.as_ref().map(|(x, _)| problem.gap(x));
    let meta = json!({
        "kind": META_KIND,
        "command": "run",
        "config": c,
        "config_hash": config_hash(c)?,
        "problem": problem.label(),
        "maximize": problem.spec.maximize,
        "notes": problem.notes,
        "budget": format!(
            "fixed evaluation budget: {} design points then {} acquisition rounds of {} point(s)",
            c.n_init, rounds, if method == tvr_core::driver::Method::Ktvr { c.batch_size } else { 1 }
        ),
        "evaluations": history.records.len(),
        "failed_evaluations": history.failures.len(),
        "final_solution": solution.as_ref().map(|(x, m)| json!({"x": x, "posterior_mean": m})),
        "final_gap": gap.map(|(g, e)| json!({"gap": g, "oracle_error": e})),
        "reference_optimum": problem.reference(),
    });
    write_json(&c.out.join("meta.json"), &meta)?;
    if let Some((x, m)) = solution {
        println!("solution x* = {x:?}, posterior mean {m:.6}");
    }
    if let Some((g, _)) = gap {
        println!("optimization gap {g:.6}");
    }
    println!("wrote {}", c.out.display());
    Ok(())
}

fn dir_name(label: &str) -> String {
    label.replace('/', "-")
}

fn cmd_bench(flags: &Flags) -> Result<(), Failure> {
    let r = build_config(flags, true)?;
    let c = &r.config;
    let budgets = r.budgets();
    let mut warnings = 0;
    let nested = r.problems.len() > 1;
    for problem in &r.problems {
        let dir = if nested { c.out.join(dir_name(&problem.label())) } else { c.out.clone() };
        let hist_dir = dir.join("histories");
        fs::create_dir_all(&hist_dir).map_err(io_err(&hist_dir))?;
        eprintln!("{}: {} trials of {} method(s)", problem.label(), c.trials, r.methods.len());
        let table = replicate(problem, &r.methods, c.trials, &budgets, c.seed, &c.run, c.jobs)?;
        for (method, trial, h) in &table.histories {
            write_history(h, &hist_dir, &format!("{method}-trial{trial:03}.csv"))?;
        }
        let path = dir.join("summary.csv");
        table.write_csv(BufWriter::new(File::create(&path).map_err(io_err(&path))?))?;
        for f in &table.failures {
            warn!("{} {} trial {} failed: {}", f.problem, f.method, f.trial, f.message);
        }
        warnings += table.failures.len();
        let seeds: Vec<u64> = (0..c.trials as u64).map(|t| tvr_core::sub_seed(c.seed, t)).collect();
        let meta = json!({
            "kind": META_KIND,
            "command": "bench",
            "config": c,
            "config_hash": config_hash(c)?,
            "problem": problem.label(),
            "maximize": problem.spec.maximize,
            "notes": problem.notes,
            "trial_seeds": seeds,
            "budget": "fixed evaluation budget per trial, identical initial design across methods",
            "reference_optimum": problem.reference(),
            "max_oracle_error": table.max_oracle_error,
            "failed_trials": table.failures,
        });
        write_json(&dir.join("meta.json"), &meta)?;
        print_final_table(problem.label(), &table);
    }
    if warnings > 0 {
        eprintln!("warning: {warnings} trial(s) failed");
    }
    Ok(())
}

fn print_final_table(label: String, table: &SummaryTable) {
    println!("{label}: final optimization gap");
    println!("{:<10} {:>6} {:>12} {:>12} {:>12}", "method", "trials", "mean", "q10", "q90");
    let mut methods: Vec<&str> = table.rows.iter().map(|r| r.method.as_str()).collect();
    methods.dedup();
    methods.sort();
    methods.dedup();
    for m in methods {
        let g = table.final_gap_by_trial(&label, m);
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        println!(
            "{m:<10} {:>6} {mean:>12.6} {:>12.6} {:>12.6}",
            g.len(),
            quantile7(&g, 0.1),
            quantile7(&g, 0.9)
        );
    }
}

fn cmd_report(args: &ReportArgs) -> Result<(), Failure> {
    let f = File::open(&args.summary).map_err(|e| Failure::Usage(format!("{}: {e}", args.summary.display())))?;
    let table = SummaryTable::read_csv(f).map_err(|e| Failure::Usage(format!("{}: {e}", args.summary.display())))?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.summary.parent().map(Path::to_path_buf).unwrap_or_default());
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let curves = table.curves();
    let single_problem = curves.keys().map(|(p, _)| p).collect::<std::collections::BTreeSet<_>>().len() == 1;
    for ((problem, method), points) in curves {
        let name = if single_problem {
            format!("series-{method}.csv")
        } else {
            format!("series-{}-{method}.csv", dir_name(&problem))
        };
        let path = out.join(name);
        let mut text = String::from("iteration,n_evals,mean,q10,q90,trials\n");
        for p in points {
            text += &format!("{},{},{},{},{},{}\n", p.iteration, p.n_evals, p.mean, p.q10, p.q90, p.trials);
        }
        fs::write(&path, text).map_err(io_err(&path))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(f) => cmd_run(f),
        Cmd::Bench(f) => cmd_bench(f),
        Cmd::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
