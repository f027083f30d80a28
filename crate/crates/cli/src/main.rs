//! `upet`: phantom data synthesis, training, evaluation, inference,
//! attention export and gradient verification.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage, 3 configuration,
//! 4 I/O, 5 malformed data, 6 corrupt checkpoint, 7 architecture fingerprint
//! mismatch, 8 model has no attention gates, 9 gradient check failed,
//! 10 precision refused, 11 non-finite loss or gradient, 12 unusable input
//! volume.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use upet::verify::Fault;

use upet_cli::commands;
use upet_cli::config::RunConfig;
use upet_cli::error::{CliError, Kind, Result};

#[derive(Parser)]
#[command(
    name = "upet",
    version,
    about = "Multi-task 3D attention U-Net: MRI classification with synthetic PET"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines, `#` comments).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable. Applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory holding (or receiving) `manifest.csv` and the volumes.
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AblationArgs {
    /// Build the model without attention gates.
    #[arg(long)]
    no_attention: bool,
    /// Build the model without the PET decoder (classification only).
    #[arg(long)]
    no_pet_head: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic phantom dataset and its manifest.
    SynthData {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train on the train split, select the best epoch on the validation split.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        ablation: AblationArgs,
        /// Directory receiving checkpoints, the epoch log and the resolved config.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Classify one MRI volume and optionally write its synthetic PET.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// MRI payload (`.raw` with a `.json` header beside it).
        #[arg(long)]
        mri: PathBuf,
        /// Where to write the synthetic PET volume.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write attention maps of one MRI as volumes and mid-slice graymaps.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        mri: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// all, skip, cls, or one gate such as skip-0.
        #[arg(long, default_value = "all")]
        gates: String,
    },
    /// Compare analytic and finite-difference gradients of every operator
    /// and of a tiny end-to-end network.
    GradCheck {
        /// Floating-point width; only 64 is accepted.
        #[arg(long, default_value_t = 64, value_parser = PossibleValuesParser::new(["32", "64"]).map(|s| s.parse::<u32>().expect("listed values")))]
        precision: u32,
        /// Deliberately corrupt one derivative (test fixture).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    for a in &args.set {
        cfg.set_assignment(a)?;
    }
    if let Some(d) = &args.data_dir {
        cfg.data_dir = d.clone();
    }
    Ok(cfg)
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData { config } => print(&commands::synth_data(&resolve(&config)?)?),
        Command::Train {
            config,
            ablation,
            out_dir,
        } => {
            let mut cfg = resolve(&config)?;
            if let Some(d) = out_dir {
                cfg.out_dir = d;
            }
            if ablation.no_attention {
                cfg.model.use_attention = false;
            }
            if ablation.no_pet_head {
                cfg.model.use_pet_head = false;
            }
            let summary = commands::train(&cfg, |line| print(&format!("{line}\n")))?;
            print(&summary);
        }
        Command::Eval {
            config,
            checkpoint,
            split,
        } => print(&commands::eval(&resolve(&config)?, &checkpoint, &split)?),
        Command::Predict {
            checkpoint,
            mri,
            out,
        } => print(&commands::predict(&checkpoint, &mri, out.as_deref())?),
        Command::ExportAttention {
            checkpoint,
            mri,
            out_dir,
            gates,
        } => print(&commands::export_attention(
            &checkpoint,
            &mri,
            &out_dir,
            &gates,
        )?),
        Command::GradCheck {
            precision,
            inject_fault,
        } => {
            let fault = inject_fault
                .map(|f| f.parse::<Fault>().map_err(CliError::config))
                .transpose()?;
            let (table, passed) = commands::grad_check(precision, fault)?;
            print(&table);
            if !passed {
                return Err(CliError::new(
                    Kind::GradCheckFailed,
                    "gradient check failed: analytic and numeric gradients disagree beyond 1e-5",
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind.code() as u8)
        }
    }
}
