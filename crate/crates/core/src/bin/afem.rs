//! Command-line front end: run adaptive experiments, fit rates from traces,
//! list the problem catalog and export replayed meshes.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use afem2d::driver::{self, AfemConfig, DriverError};
use afem2d::problems;

#[derive(Parser)]
#[command(name = "afem", about = "Adaptive finite elements for 2D elliptic problems", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the adaptive loop and write trace.csv, summary.json and mesh files
    Run(RunArgs),
    /// Fit a log-log rate from a trace CSV
    Rates(RatesArgs),
    /// List the problem catalog
    ListProblems,
    /// Reconstruct and print the mesh of a given iteration from a trace directory
    ExportMesh(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Problem id from the catalog
    #[arg(long)]
    problem: Option<String>,
    /// Polynomial degree (1 or 2)
    #[arg(long)]
    degree: Option<usize>,
    /// Dörfler parameter θ in (0, 1)
    #[arg(long)]
    theta: Option<f64>,
    /// Stop once the number of degrees of freedom reaches this
    #[arg(long)]
    max_dofs: Option<usize>,
    /// Stop once the estimator η drops below this
    #[arg(long)]
    tol: Option<f64>,
    /// γ for the contraction diagnostic (default: fitted C₁)
    #[arg(long)]
    gamma: Option<f64>,
    /// Bisections per marked element
    #[arg(long)]
    bisections: Option<u32>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write per-iteration indicator CSVs
    #[arg(long)]
    dump_indicators: bool,
    /// Mark all elements every iteration (uniform baseline)
    #[arg(long)]
    uniform: bool,
    /// Rate-fit window (trailing iterations)
    #[arg(long)]
    window: Option<usize>,
    /// JSON config file; explicit flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct RatesArgs {
    /// Path to a trace.csv
    trace: PathBuf,
    /// Window of trailing rows to fit over (default: last half)
    #[arg(long)]
    window: Option<usize>,
    /// Abscissa column
    #[arg(long, default_value = "dofs")]
    x: String,
    /// Ordinate column
    #[arg(long, default_value = "eta")]
    y: String,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory written by `afem run --out`
    trace_dir: PathBuf,
    /// Iteration whose mesh to reconstruct
    #[arg(long)]
    iteration: usize,
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(1)
}

fn run_command(args: RunArgs) -> ExitCode {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => return usage_error(&format!("cannot read {}: {e}", path.display())),
            };
            match serde_json::from_str::<AfemConfig>(&text) {
                Ok(c) => c,
                Err(e) => return usage_error(&format!("bad config {}: {e}", path.display())),
            }
        }
        None => match &args.problem {
            Some(p) => AfemConfig::new(p),
            None => return usage_error("--problem is required (or provide --config)"),
        },
    };
    if let Some(p) = args.problem {
        cfg.problem = p;
    }
    if let Some(v) = args.degree {
        cfg.degree = v;
    }
    if let Some(v) = args.theta {
        cfg.theta = v;
    }
    if let Some(v) = args.max_dofs {
        cfg.max_dofs = v;
    }
    if let Some(v) = args.tol {
        cfg.tol = Some(v);
    }
    if let Some(v) = args.gamma {
        cfg.gamma = Some(v);
    }
    if let Some(v) = args.bisections {
        cfg.bisections = v;
    }
    if let Some(v) = args.out {
        cfg.out = Some(v);
    }
    if args.dump_indicators {
        cfg.dump_indicators = true;
    }
    if args.uniform {
        cfg.uniform = true;
    }
    if let Some(v) = args.window {
        cfg.window = Some(v);
    }

    match driver::run(&cfg) {
        Ok(trace) => {
            let last = trace.records.last();
            println!(
                "completed {} iterations, {} dofs, eta {:.6e}",
                trace.records.len(),
                last.map_or(0, |r| r.dofs),
                last.map_or(0.0, |r| r.eta),
            );
            if let Some(s) = trace.eta_slope {
                println!("eta slope vs dofs: {s:.4}");
            }
            if let Some(s) = trace.error_slope {
                println!("energy error slope vs dofs: {s:.4}");
            }
            ExitCode::SUCCESS
        }
        Err(e @ (DriverError::Config(_) | DriverError::Problem(_))) => {
            usage_error(&e.to_string())
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn rates_command(args: RatesArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&args.trace) {
        Ok(t) => t,
        Err(e) => return usage_error(&format!("cannot read {}: {e}", args.trace.display())),
    };
    let mut lines = text.lines();
    let header: Vec<&str> = match lines.next() {
        Some(h) => h.split(',').collect(),
        None => return usage_error("empty trace file"),
    };
    let col = |name: &str| header.iter().position(|&h| h == name);
    let (xcol, ycol) = match (col(&args.x), col(&args.y)) {
        (Some(x), Some(y)) => (x, y),
        (None, _) => return usage_error(&format!("column {:?} not in trace header", args.x)),
        (_, None) => return usage_error(&format!("column {:?} not in trace header", args.y)),
    };
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| fields.get(i).and_then(|s| s.parse::<f64>().ok());
        if let (Some(x), Some(y)) = (parse(xcol), parse(ycol)) {
            if x > 0.0 && y > 0.0 {
                pts.push((x, y));
            }
        }
    }
    let w = args.window.unwrap_or_else(|| pts.len().div_ceil(2)).max(3).min(pts.len());
    let tail = &pts[pts.len().saturating_sub(w)..];
    let xs: Vec<f64> = tail.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = tail.iter().map(|p| p.1).collect();
    match driver::fit_rate(&xs, &ys) {
        Ok(slope) => {
            println!("slope={slope:.6} n={}", xs.len());
            ExitCode::SUCCESS
        }
        Err(e) => usage_error(&e.to_string()),
    }
}

fn export_command(args: ExportArgs) -> ExitCode {
    match driver::replay_mesh(&args.trace_dir, args.iteration) {
        Ok(m) => {
            print!("{}", m.to_text());
            ExitCode::SUCCESS
        }
        Err(e @ (DriverError::Io(_) | DriverError::Config(_))) => usage_error(&e.to_string()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help/version requests are success; anything else is a usage error.
            if e.use_stderr() {
                let _ = e.print();
                return ExitCode::from(1);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match cli.command {
        Command::Run(args) => run_command(args),
        Command::Rates(args) => rates_command(args),
        Command::ListProblems => {
            for (id, desc) in problems::catalog_descriptions() {
                println!("{id}  {desc}");
            }
            ExitCode::SUCCESS
        }
        Command::ExportMesh(args) => export_command(args),
    }
}
