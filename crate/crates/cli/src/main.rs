use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sabn::harness::{self, Experiment, ExperimentConfig};
use sabn::Error;

/// Sandwich batch normalization experiments.
#[derive(Parser)]
#[command(name = "sabn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Conditional GAN on a 2-D Gaussian mixture.
    RunGan(RunArgs),
    /// Architecture search on the planted-optimum task.
    RunNas(RunArgs),
    /// Adversarial training with auxiliary normalization branches.
    RunAdv(RunArgs),
    /// Toy style transfer with AdaIN or SaAdaIN.
    RunStyle(RunArgs),
    /// Converts a run directory's metrics into one CSV per metric.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Run directory holding `*.jsonl` metrics.
    #[arg(long)]
    run: PathBuf,
    /// Destination for the CSV files [default: <run>/plotdata].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(expected: Experiment, args: &RunArgs) -> sabn::Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    if cfg.experiment != expected {
        return Err(Error::ConfigInvalid(format!(
            "config is for {}, but this subcommand runs {expected}",
            cfg.experiment
        )));
    }
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::ConfigInvalid("no output directory: pass --out or set output_dir".into()))?;
    let summary = harness::run(&cfg, &out)?;
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
    println!("wrote {}", summary.manifest.display());
    Ok(())
}

fn export(run_dir: &Path, out: Option<&Path>) -> sabn::Result<()> {
    let out = out.map_or_else(|| run_dir.join("plotdata"), Path::to_path_buf);
    for f in harness::export_plotdata(run_dir, &out)? {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ConfigInvalid(_) => 2,
        e if e.is_numerical() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::RunGan(a) => run(Experiment::Gan, a),
        Command::RunNas(a) => run(Experiment::Nas, a),
        Command::RunAdv(a) => run(Experiment::Adv, a),
        Command::RunStyle(a) => run(Experiment::Style, a),
        Command::Export(a) => export(&a.run, a.out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
