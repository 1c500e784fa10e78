use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use mvsense::harness::{self, plot, ScenarioConfig};

#[derive(Parser)]
#[command(name = "mvsense", version, about = "Occlusion-aware voxel sensing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario sweep and write records, aggregates, dumps and plots.
    Run(ScenarioArgs),
    /// Evaluate the sensing-range analysis for a scenario geometry.
    Validate(ScenarioArgs),
    /// Re-render plots from a finished run directory.
    Plot { dir: PathBuf },
    /// Print a built-in scenario as TOML.
    ShowPreset { name: String },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    config: Option<PathBuf>,
    /// Built-in scenario instead of a file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory; overrides the scenario's.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => ScenarioConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?,
            (None, Some(name)) => harness::preset(name)
                .with_context(|| format!("unknown preset {name:?}; available: {}", harness::PRESETS.join(", ")))?,
            _ => bail!("give a scenario file or --preset"),
        };
        if let Some(seed) = self.seed {
            cfg.sweep.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.sweep.trials = trials;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: &ScenarioArgs) -> Result<()> {
    let cfg = args.load()?;
    let out = harness::run_scenario(&cfg)?;
    harness::write_outputs(&cfg, &out, &cfg.output.dir)?;
    for a in out.aggregates() {
        println!(
            "{}={} {:<8} median in-range mse {:.3e}  full {:.3e}  converged {:.0}%",
            a.sweep_variable,
            a.sweep_value,
            a.solver,
            a.median_mse_in_range,
            a.median_mse_full,
            100.0 * a.converged_fraction
        );
    }
    info!("wrote {}", cfg.output.dir.display());
    Ok(())
}

fn validate(args: &ScenarioArgs) -> Result<()> {
    let cfg = args.load()?;
    let report = harness::validate_analysis(&cfg)?;
    harness::write_analysis(&report, &cfg.output.dir)?;
    print!("{report}");
    Ok(())
}

fn replot(dir: &Path) -> Result<()> {
    for p in plot::plot_dir(dir)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Run(a) => run(a),
        Command::Validate(a) => validate(a),
        Command::Plot { dir } => replot(dir),
        Command::ShowPreset { name } => match harness::preset(name) {
            Some(cfg) => cfg.to_toml_string().map(|s| print!("{s}")).map_err(Into::into),
            None => Err(anyhow::anyhow!("unknown preset {name:?}; available: {}", harness::PRESETS.join(", "))),
        },
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
