use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hindsight::harness::{self, HarnessError, RunConfig};

/// Overrides the default output directory of `run` and `sweep`.
const OUT_DIR_ENV: &str = "HINDSIGHT_OUT_DIR";

#[derive(Parser)]
#[command(name = "hindsight", version, about = "Curiosity agents in a noisy maze, and exact oracle checks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one agent and write its metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one config for several seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the information-theoretic identities on seeded instances.
    Oracle {
        /// lemmas, theorem1, theorem2 or all.
        #[arg(long)]
        suite: String,
        /// Directory for the JSON report `oracle_<suite>.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw one metric column as an SVG line chart. Each input is a file or a
    /// comma-separated group of files (seeds), optionally prefixed by `label=`.
    Plot {
        #[arg(long)]
        metric: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<String>,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("runs"))
}

fn parse_group(arg: &str) -> (String, Vec<PathBuf>) {
    let (label, files) = match arg.split_once('=') {
        Some((l, f)) => (l.to_string(), f),
        None => (arg.to_string(), arg),
    };
    (label, files.split(',').map(PathBuf::from).collect())
}

fn fail(e: HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        HarnessError::Config(_) | HarnessError::Usage(_) | HarnessError::MissingColumn { .. } => ExitCode::from(1),
        _ => ExitCode::from(3),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match cli.cmd {
        Cmd::Run { config, seed, out } => match harness::run_experiment(&config, seed, &out_dir(out)) {
            Ok(s) => {
                println!("{} ({} env steps, {} updates)", s.paths.metrics.display(), s.env_steps, s.updates);
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Cmd::Sweep { config, seeds, out } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            match harness::sweep(&cfg, &seeds, &out_dir(out)) {
                Ok(runs) => {
                    for s in runs {
                        println!("{}", s.paths.metrics.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Cmd::Oracle { suite, out } => match harness::run_oracle_suite(&suite) {
            Ok(report) => {
                print!("{}", report.render());
                let dir = out_dir(out);
                let path = dir.join(format!("oracle_{suite}.json"));
                if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(&path, report.to_json())) {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(3);
                }
                println!("report: {}", path.display());
                if report.all_passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(2)
                }
            }
            Err(e) => fail(e),
        },
        Cmd::Plot { metric, out, inputs } => {
            let groups: Vec<_> = inputs.iter().map(|a| parse_group(a)).collect();
            match harness::plot(&groups, &metric, &out) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(e),
            }
        }
    }
}
