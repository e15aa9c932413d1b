use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use texflow::experiments::{collapse, fid, flow_recover, gradcheck, silhouette_fit, Experiment, ExperimentConfig, Report};
use texflow::sampler::ModulationMode;
use texflow::{Error, Result};

#[derive(Parser)]
#[command(name = "texflow", version, about = "Variance-modulated texture sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON file overriding the experiment defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics.csv and renders
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    mode: Option<ModulationMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Coordinate-gradient norms on a uniform image sampled at cell centres
    Collapse(Common),
    /// Recover a known warp with and without the variance branch
    FlowRecover(Common),
    /// Fit an icosphere deformation to target silhouettes
    SilhouetteFit(Common),
    /// Fréchet distance between two image sets
    Fid {
        #[command(flatten)]
        common: Common,
        /// PNG files or directories of PNGs
        #[arg(long = "set-a", required = true, num_args = 1..)]
        set_a: Vec<PathBuf>,
        #[arg(long = "set-b", required = true, num_args = 1..)]
        set_b: Vec<PathBuf>,
        /// Patch grid of the feature extractor
        #[arg(long, default_value_t = 4)]
        grid: usize,
    },
    /// Finite-difference check of every analytic gradient
    Gradcheck(Common),
}

fn load_config(experiment: Experiment, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(experiment, path)?,
        None => ExperimentConfig::defaults(experiment),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Writes whatever was recorded, then passes the run's outcome on.
fn finish(report: &Report, out: &Path, outcome: Result<()>) -> Result<()> {
    report.write_csv(out.join("metrics.csv"))?;
    outcome
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Collapse(c) => {
            let cfg = load_config(Experiment::Collapse, &c)?;
            prepare_out(&c.out)?;
            let report = collapse::run(&cfg)?;
            finish(&report, &c.out, Ok(()))
        }
        Command::FlowRecover(c) => {
            let cfg = load_config(Experiment::FlowRecover, &c)?;
            prepare_out(&c.out)?;
            let mut report = Report::new(Experiment::FlowRecover.name(), &cfg.hash());
            let outcome = flow_recover::run_into(&cfg, Some(&c.out), &mut report).map(|_| ());
            finish(&report, &c.out, outcome)
        }
        Command::SilhouetteFit(c) => {
            let cfg = load_config(Experiment::SilhouetteFit, &c)?;
            prepare_out(&c.out)?;
            let mut report = Report::new(Experiment::SilhouetteFit.name(), &cfg.hash());
            let outcome = silhouette_fit::run_into(&cfg, Some(&c.out), &mut report).map(|_| ());
            finish(&report, &c.out, outcome)
        }
        Command::Fid {
            common,
            set_a,
            set_b,
            grid,
        } => {
            let cfg = load_config(Experiment::Fid, &common)?;
            prepare_out(&common.out)?;
            let report = fid::run(&cfg, &set_a, &set_b, grid)?;
            finish(&report, &common.out, Ok(()))
        }
        Command::Gradcheck(c) => {
            let cfg = load_config(Experiment::Gradcheck, &c)?;
            prepare_out(&c.out)?;
            let report = gradcheck::run(&cfg)?;
            let failed: Vec<&str> = gradcheck::CHECKS
                .iter()
                .copied()
                .filter(|name| report.summary(name, "passed") != Some(1.0))
                .collect();
            let outcome = if failed.is_empty() {
                Ok(())
            } else {
                Err(Error::Numeric(format!("gradient checks failed: {}", failed.join(", "))))
            };
            finish(&report, &c.out, outcome)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
