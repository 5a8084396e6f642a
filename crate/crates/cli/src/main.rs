use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use riskpo_cli::checks::{run_suite, Suite};
use riskpo_cli::plot::{plot_runs, plot_sweep_entropy};
use riskpo_cli::runner::run_experiment;
use riskpo_cli::sweep::{run_sweep, Axis, SweepPlan};
use riskpo_cli::{CliError, Result, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "riskpo", version, about = "Risk-sensitive policy optimization on synthetic verifiable-reward tasks")]
struct Cli {
    /// Root for default output directories.
    #[arg(long, global = true, env = "RISKPO_OUT_ROOT", default_value = "runs")]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one configuration and write its artifacts.
    Run {
        /// JSON run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: <out-root>/<name>-<objective>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace a non-empty output directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Run one configuration per axis value and seed.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// quantile_levels, bundle_size, omega or objective.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; quantile levels are written alpha:beta.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds (default: the configured seed).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Overrides the configured seed when --seeds is absent.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory (default: <out-root>/sweep-<axis>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Run numerical check suites; exits with status 2 on any failure.
    Check {
        /// grad, entropy, cov, layercake, transform or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the reports as JSON to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG line charts from run or sweep directories.
    Plot {
        /// Run directories holding metrics.csv and evals.csv.
        #[arg(long = "run", num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Comma-separated metric names, e.g. entropy,pass@16.
        #[arg(long, value_delimiter = ',', default_value = "entropy,mean_reward,rvar_lower,pass@16")]
        metrics: Vec<String>,
        /// Sweep directory whose entropy trajectories are plotted per axis value.
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, seed, overwrite } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let out = out.unwrap_or_else(|| {
                cli.out_root.join(format!("{}-{}-seed{}", cfg.name, cfg.train.objective.as_str(), cfg.train.seed))
            });
            let s = run_experiment(&cfg, &out, overwrite, &command_line())?;
            println!(
                "{}: mean_reward {:.4}, entropy {:.4}, rvar_lower {:.4}, pass@16 {:.4}",
                s.dir.display(),
                s.last.mean_reward,
                s.last.entropy,
                s.last.rvar_lower,
                s.last_eval.pass_at_16
            );
        }
        Command::Sweep { config, axis, values, seeds, seed, jobs, out, overwrite } => {
            let base = load_config(config.as_deref(), seed)?;
            let axis: Axis = axis.parse()?;
            let seeds = if seeds.is_empty() { vec![base.train.seed] } else { seeds };
            let out = out.unwrap_or_else(|| cli.out_root.join(format!("sweep-{}", axis.name())));
            let plan = SweepPlan { base, axis, values, seeds };
            let cells = run_sweep(&plan, &out, overwrite, jobs)?;
            for c in &cells {
                println!(
                    "{}={} seed {}: entropy {:.4}, rvar_lower {:.4}, pass@16 {:.4}",
                    axis.name(),
                    c.value,
                    c.seed,
                    c.summary.last.entropy,
                    c.summary.last.rvar_lower,
                    c.summary.last_eval.pass_at_16
                );
            }
            println!("summary: {}", out.join("summary.csv").display());
        }
        Command::Check { suite, seed, out } => {
            let suite: Suite = suite.parse()?;
            let reports = run_suite(suite, seed)?;
            for r in &reports {
                println!("{:<6} {:<20} {:>8.3}s", if r.passed() { "PASS" } else { "FAIL" }, r.name, r.runtime_secs);
                for c in r.comparisons.iter().filter(|c| !c.passed) {
                    println!("         {}: measured {:e}, reference {:e}, tol {:e}", c.label, c.measured, c.reference, c.tolerance);
                }
                for n in &r.notes {
                    println!("         {n}");
                }
            }
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&reports)?).map_err(CliError::io(&path))?;
            }
            let failed = reports.iter().filter(|r| !r.passed()).count();
            if failed > 0 {
                return Err(CliError::ChecksFailed(failed));
            }
        }
        Command::Plot { runs, metrics, sweep, out } => {
            if runs.is_empty() && sweep.is_none() {
                return Err(CliError::Usage("plot needs --run DIR... or --sweep DIR".into()));
            }
            let mut written = Vec::new();
            if !runs.is_empty() {
                written.extend(plot_runs(&runs, &metrics, &out)?);
            }
            if let Some(dir) = sweep {
                written.push(plot_sweep_entropy(&dir, &out)?);
            }
            for p in written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Clap would exit 2 on bad arguments; that code is reserved for failed checks.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
