use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ssrecon_cli::{cmd_ablate, cmd_eval, cmd_simulate, cmd_train, cmd_verify, commands::load_params, ExperimentSpec};

#[derive(Parser)]
#[command(name = "ssrecon", version, about = "Self-supervised k-space reconstruction lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment spec; defaults apply when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Master seed, overriding the spec.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the spec.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sampling preset, overriding the spec.
    #[arg(long)]
    preset: Option<String>,
    /// Training steps, overriding the spec.
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write phantoms, coil maps and example masks.
    Simulate(Common),
    /// Train under the selected preset.
    Train(Common),
    /// Evaluate a checkpoint over the spec's (scenario, R) grid.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train and score the five sampling-stochasticity variants.
    Ablate(Common),
    /// Run the numerical theory checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Score a deliberately biased model in the unbiasedness check.
        #[arg(long)]
        debug_inject_bias: bool,
    },
}

fn resolve(c: &Common) -> ssrecon_cli::Result<ExperimentSpec> {
    let mut spec = match &c.spec {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = c.seed {
        spec.seed = s;
    }
    if let Some(o) = &c.out {
        spec.out = o.clone();
    }
    if let Some(p) = &c.preset {
        spec.preset = p.clone();
        spec.plan = None;
    }
    if let Some(n) = c.steps {
        spec.train.steps = n;
    }
    spec.validate()?;
    Ok(spec)
}

fn run(cli: Cli) -> ssrecon_cli::Result<bool> {
    match cli.command {
        Command::Simulate(c) => {
            let spec = resolve(&c)?;
            let m = cmd_simulate(&spec, &spec.out)?;
            println!("wrote {} files to {}", m.files.len() + 1, spec.out.display());
        }
        Command::Train(c) => {
            let spec = resolve(&c)?;
            let run = cmd_train(&spec, &spec.train_config()?, &spec.out)?;
            let last = run.logs.last().map_or(f64::NAN, |l| l.loss);
            println!("{} steps, final loss {last:.6}", run.logs.len());
            if let Some(s) = run.stopped_at {
                println!("early stop at step {s}");
            }
        }
        Command::Eval { common, checkpoint } => {
            let spec = resolve(&common)?;
            let params = load_params(&checkpoint)?;
            for row in cmd_eval(&spec, &params, &spec.out)? {
                println!(
                    "{:<14} SSIM {:.4} ± {:.4}  PSNR {:.2} ± {:.2} dB",
                    row.condition, row.ssim_mean, row.ssim_std, row.psnr_mean, row.psnr_std
                );
            }
        }
        Command::Ablate(c) => {
            let spec = resolve(&c)?;
            for row in cmd_ablate(&spec, &spec.out)? {
                println!("{:<18} {:<14} SSIM {:.4} ± {:.4}", row.variant, row.condition, row.ssim_mean, row.ssim_std);
            }
        }
        Command::Verify { common, debug_inject_bias } => {
            let spec = resolve(&common)?;
            let reports = cmd_verify(&spec, &spec.out, debug_inject_bias)?;
            for r in &reports {
                println!("{}", r.summary());
            }
            let failed = reports.iter().filter(|r| !r.pass).count();
            println!("{} checks, {failed} failed", reports.len());
            return Ok(failed == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
