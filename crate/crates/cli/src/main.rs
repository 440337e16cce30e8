//! `unfold`: command-line driver for the unfolding benchmark.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use unfold_core::benchmark::{
    self, generate_instance, run_methods, write_outputs, write_scan_csv, DistributionRun, Instance, SCAN_FILE,
};
use unfold_core::methods::{discrepancy_grid, LambdaChoice};
use unfold_core::plot::emit_plot;
use unfold_core::{BenchmarkConfig, Method, Result, UnfoldError};

#[derive(Parser)]
#[command(name = "unfold", version, about = "Histogram unfolding benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file, for `unfold`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated methods, e.g. `MI,IBU,CD`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
}

#[derive(Subcommand)]
enum Command {
    /// Write truth, response and pseudo-data per distribution as JSON.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Unfold a generated instance file.
    Unfold {
        /// Instance JSON written by `generate`.
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        /// A number, or `discrepancy`.
        #[arg(long)]
        lambda: Option<String>,
    },
    /// Run the full benchmark and write CSV, JSON and SVG outputs.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// A number, or `discrepancy`.
        #[arg(long)]
        lambda: Option<String>,
    },
    /// Scan fixed regularization strengths for the optimization methods.
    ScanLambda {
        #[command(flatten)]
        common: Common,
        /// Comma-separated grid; defaults to 0 plus 1e-5..1e1 at four points per decade.
        #[arg(long, value_delimiter = ',')]
        lambda: Option<Vec<f64>>,
    },
    /// Re-render figures from a `results.json`.
    Plot {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_methods(list: &[String]) -> Result<Vec<Method>> {
    list.iter().filter(|s| !s.trim().is_empty()).map(|s| s.parse()).collect()
}

fn load_config(common: &Common) -> Result<BenchmarkConfig> {
    let mut cfg = match &common.config {
        Some(path) => BenchmarkConfig::load(path)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(list) = &common.methods {
        cfg.methods = parse_methods(list)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_lambda(cfg: &mut BenchmarkConfig, lambda: Option<&str>) -> Result<()> {
    if let Some(l) = lambda {
        cfg.lambda = l.parse::<LambdaChoice>()?;
    }
    Ok(())
}

fn io_err(path: &Path, e: impl ToString) -> UnfoldError {
    UnfoldError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| UnfoldError::invalid(format!("{}: {e}", path.display())))
}

fn print_summary(runs: &[DistributionRun]) {
    for run in runs {
        for rec in &run.records {
            match (&rec.error, rec.chi2) {
                (Some(e), _) => println!("{:<14} {:<7} failed: {e}", run.distribution, rec.method),
                (None, Some(c)) => println!("{:<14} {:<7} chi2 = {c:.3}", run.distribution, rec.method),
                (None, None) => println!("{:<14} {:<7} no chi2", run.distribution, rec.method),
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let cfg = load_config(&common)?;
            fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
            for d in 0..cfg.distributions.len() {
                let inst = generate_instance(&cfg, d)?;
                let path = cfg.output_dir.join(format!("{}.json", inst.distribution));
                benchmark::write_json(&inst, &path)?;
                println!("{}", path.display());
            }
        }
        Command::Unfold { input, common, lambda } => {
            let mut cfg = load_config(&common)?;
            apply_lambda(&mut cfg, lambda.as_deref())?;
            let mut inst: Instance = read_json(&input)?;
            if let Some(seed) = common.seed {
                inst.seed = seed;
            }
            let run = run_methods(&inst, &cfg.methods, &cfg.settings(), cfg.bootstrap_toys);
            match &common.out {
                Some(path) => {
                    benchmark::write_json(&run, path)?;
                    print_summary(std::slice::from_ref(&run));
                }
                None => println!(
                    "{}",
                    serde_json::to_string_pretty(&run).map_err(|e| UnfoldError::invalid(e.to_string()))?
                ),
            }
        }
        Command::Benchmark { common, lambda } => {
            let mut cfg = load_config(&common)?;
            apply_lambda(&mut cfg, lambda.as_deref())?;
            let report = unfold_core::run_benchmark(&cfg)?;
            let written = write_outputs(&report, &cfg.output_dir)?;
            print_summary(&report.runs);
            for p in written {
                println!("wrote {}", p.display());
            }
        }
        Command::ScanLambda { common, lambda } => {
            let cfg = load_config(&common)?;
            let grid = lambda.unwrap_or_else(|| {
                let mut g = vec![0.0];
                g.extend(discrepancy_grid());
                g
            });
            let methods = common.methods.as_ref().map(|_| cfg.methods.clone());
            let rows = unfold_core::scan_lambda(&cfg, &grid, methods.as_deref())?;
            fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
            let path = cfg.output_dir.join(SCAN_FILE);
            write_scan_csv(&rows, &path)?;
            for r in rows.iter().filter(|r| r.is_argmin) {
                println!(
                    "{:<14} {:<7} best lambda = {} (chi2 {:.3})",
                    r.distribution,
                    r.method,
                    r.lambda,
                    r.chi2.unwrap_or(f64::NAN)
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Plot { input, out } => {
            let report: benchmark::BenchmarkReport = read_json(&input)?;
            let dir = out.unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
            fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
            for run in &report.runs {
                let path = benchmark::svg_path(&dir, &run.distribution);
                emit_plot(run, &path)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::from(2)
        }
    }
}
