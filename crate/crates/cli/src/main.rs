use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use microvolumetry::data::PhantomSpec;
use microvolumetry_cli::commands::{
    cmd_evaluate, cmd_gen, cmd_predict, cmd_train, cmd_volumetry, EvaluateArgs, GenArgs, PredictArgs, VolumetryArgs,
};
use microvolumetry_cli::{exit_code, EXIT_ARGUMENT, EXIT_OK};

#[derive(Parser, Debug)]
#[command(
    name = "microvolumetry",
    version,
    about = "Bone segmentation and volumetry for micro-CT slices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic phantom slices with ground-truth masks.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Implant radius as a fraction of the slice size.
        #[arg(long, default_value_t = PhantomSpec::default().implant_radius)]
        implant_radius: f64,
        /// Fraction of the peri-implant annulus that is bone.
        #[arg(long, default_value_t = PhantomSpec::default().bone_density)]
        bone_density: f64,
        #[arg(long, default_value_t = PhantomSpec::default().noise_sigma)]
        noise_sigma: f64,
        /// Number of bright metal-artifact streaks per slice.
        #[arg(long, default_value_t = PhantomSpec::default().artifact_streaks)]
        streaks: usize,
    },
    /// Train a network from a run configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Segment every image in a directory with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted masks against reference masks.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// CSV destination; defaults to evaluation.csv inside --pred.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibrate the predicted bone volume against a reference measurement.
    Volumetry {
        #[arg(long)]
        pred: PathBuf,
        /// Two-line file: pixels_M=<int>, V_M_mm3=<decimal>.
        #[arg(long)]
        reference: PathBuf,
        /// Reference masks; adds accuracy and Dice to the report.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// CSV destination; defaults to volumetry.csv inside --pred.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(command: Command, out: &mut dyn Write) -> microvolumetry::Result<()> {
    match command {
        Command::Gen {
            out: dir,
            count,
            size,
            seed,
            implant_radius,
            bone_density,
            noise_sigma,
            streaks,
        } => {
            let phantom = PhantomSpec {
                size,
                implant_radius,
                bone_density,
                noise_sigma,
                artifact_streaks: streaks,
                seed: 0,
            };
            cmd_gen(
                &GenArgs {
                    out: dir,
                    count,
                    seed,
                    phantom,
                },
                out,
            )
            .map(drop)
        }
        Command::Train { config } => cmd_train(&config, out).map(drop),
        Command::Predict {
            checkpoint,
            images,
            out: dir,
        } => cmd_predict(
            &PredictArgs {
                checkpoint,
                images,
                out: dir,
            },
            out,
        )
        .map(drop),
        Command::Evaluate { pred, truth, out: csv } => {
            cmd_evaluate(&EvaluateArgs { pred, truth, out: csv }, out).map(drop)
        }
        Command::Volumetry {
            pred,
            reference,
            truth,
            out: csv,
        } => cmd_volumetry(
            &VolumetryArgs {
                pred,
                reference,
                truth,
                out: csv,
            },
            out,
        )
        .map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ARGUMENT } else { EXIT_OK });
        }
    };
    let stdout = io::stdout();
    match run(cli.command, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
