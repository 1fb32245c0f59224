//! Benchmark driver: solves one configuration and writes a JSON report, or
//! runs a named sweep grid and writes per-cell reports plus a CSV summary.

use anyhow::{bail, Context};
use clap::{ArgGroup, Parser};
use std::path::PathBuf;
use std::process::ExitCode;
use wrmg::bench::{
    export_snapshots, run_with_state, sweep, summary_table, RunConfig, SolverMode, SweepOverrides,
};
use wrmg::problems::{ProblemConfig, ProblemKind};

fn parse_problem(s: &str) -> Result<ProblemKind, String> {
    s.parse().map_err(|e: wrmg::Error| e.to_string())
}

fn parse_solver(s: &str) -> Result<SolverMode, String> {
    s.parse().map_err(|e: wrmg::Error| e.to_string())
}

/// Space-time multigrid benchmarks on the unit square.
#[derive(Parser)]
#[command(name = "wrmg", version, about)]
#[command(group(ArgGroup::new("target").required(true).args(["problem", "sweep"])))]
struct Args {
    /// Problem to solve: heat | chorin | cavity
    #[arg(long, value_parser = parse_problem)]
    problem: Option<ProblemKind>,

    /// Named sweep grid: heat-mref3 | heat-mref4 | chorin | cavity
    #[arg(long)]
    sweep: Option<String>,

    /// Temporal polynomial degree (0..3)
    #[arg(long)]
    q: Option<usize>,

    /// Spatial polynomial degree (1..3); pressure degree for the flow
    /// problems (velocity runs one higher), limited to {1,2}
    #[arg(long)]
    k: Option<usize>,

    /// Spatial refinements of the 10x10 base mesh (0..4)
    #[arg(long)]
    mref: Option<u32>,

    /// Number of temporal elements
    #[arg(long)]
    nt: Option<usize>,

    /// End of the time interval (defaults per problem)
    #[arg(long = "t-final", conflicts_with = "sweep")]
    t_final: Option<f64>,

    /// Reynolds number (flow problems)
    #[arg(long)]
    reynolds: Option<f64>,

    /// Solver mode: wrmg | direct | timestep
    #[arg(long, value_parser = parse_solver)]
    solver: Option<SolverMode>,

    /// Linear relative tolerance
    #[arg(long, conflicts_with = "sweep")]
    rtol: Option<f64>,

    /// Linear absolute tolerance
    #[arg(long, conflicts_with = "sweep")]
    atol: Option<f64>,

    /// Newton relative tolerance
    #[arg(long = "newton-rtol", conflicts_with = "sweep")]
    newton_rtol: Option<f64>,

    /// Linear iteration cap
    #[arg(long = "max-it", conflicts_with = "sweep")]
    max_it: Option<usize>,

    /// Seed for the spectral-radius estimation
    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads (this build computes on one thread)
    #[arg(long)]
    threads: Option<usize>,

    /// Report path for a run, output directory for a sweep
    #[arg(long)]
    out: Option<PathBuf>,

    /// Comma-separated times to sample onto a point lattice, written as
    /// CSV files next to the report
    #[arg(long = "snapshot-times", value_delimiter = ',', conflicts_with = "sweep")]
    snapshot_times: Vec<f64>,
}

/// Intervals per side of the snapshot sampling lattice.
const SNAPSHOT_LATTICE: usize = 50;

fn run_single(args: &Args, kind: ProblemKind) -> anyhow::Result<bool> {
    let mut problem = ProblemConfig::new(kind);
    if let Some(q) = args.q {
        problem.q = q;
    }
    if let Some(k) = args.k {
        problem.k = k;
    }
    if let Some(mref) = args.mref {
        problem.mref = mref;
    }
    if let Some(nt) = args.nt {
        problem.n_time = nt;
    }
    if let Some(t) = args.t_final {
        problem.t_final = t;
    }
    if let Some(r) = args.reynolds {
        problem.reynolds = r;
    }
    let mut cfg = RunConfig::new(problem);
    if let Some(s) = args.solver {
        cfg.solver = s;
    }
    if let Some(v) = args.rtol {
        cfg.rtol = v;
    }
    if let Some(v) = args.atol {
        cfg.atol = v;
    }
    if let Some(v) = args.newton_rtol {
        cfg.newton_rtol = v;
    }
    if let Some(v) = args.max_it {
        cfg.max_it = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }

    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("report.json"));
    let (report, solution) = run_with_state(&cfg)?;
    let text = serde_json::to_string_pretty(&report).expect("report serialization");
    std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;

    println!(
        "{} {} q={} k={} mref={} nt={}: {}",
        report.problem, report.solver, report.q, report.k, report.mref, report.n_time,
        report.status
    );
    println!(
        "  dofs {}  nnz {:.3e}  wall {:.2}s",
        report.dofs, report.nnz as f64, report.wall_seconds
    );
    if let Some(n) = report.newton_iterations {
        println!("  newton {}  linear total {}", n, report.linear_total);
    } else {
        println!("  linear iterations {:?}", report.linear_iterations);
    }
    if let Some(e) = report.error_l2 {
        println!("  velocity error {e:.3e}");
    }
    println!("  report {}", out.display());

    if !args.snapshot_times.is_empty() {
        if report.converged {
            let prefix = out.with_extension("");
            let files =
                export_snapshots(&solution, &args.snapshot_times, SNAPSHOT_LATTICE, &prefix)?;
            for f in files {
                println!("  snapshot {}", f.display());
            }
        } else {
            eprintln!("skipping snapshots: solve did not converge");
        }
    }
    Ok(report.converged)
}

fn run_sweep(args: &Args, name: &str) -> anyhow::Result<()> {
    let ov = SweepOverrides {
        mref: args.mref,
        nt: args.nt,
        reynolds: args.reynolds,
        q: args.q,
        k: args.k,
        solver: args.solver,
        seed: args.seed,
    };
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("sweep-{name}")));
    let summary = sweep(name, &ov, &out_dir)?;
    print!("{}", summary_table(&summary));
    if let Some(csv) = &summary.csv_path {
        println!("summary {}", csv.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    if args.threads.is_some_and(|t| t > 1) {
        eprintln!("note: this build computes on a single thread; --threads is recorded only");
    }
    let outcome = match (&args.problem, &args.sweep) {
        (Some(kind), None) => run_single(&args, *kind),
        (None, Some(name)) => run_sweep(&args, name).map(|()| true),
        _ => (|| bail!("exactly one of --problem or --sweep is required"))(),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
