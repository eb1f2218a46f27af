use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mcdnn_cli::{commands, CliError, RunConfig};
use mcdnn_core::augment::{BlurParams, DistortionParams, ElasticParams};

#[derive(Parser)]
#[command(
    name = "mcdnn",
    version,
    about = "Train and evaluate multi-column deep convolutional networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_pad(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or("expected HxW")?;
    Ok((
        h.parse().map_err(|_| "bad height")?,
        w.parse().map_err(|_| "bad width")?,
    ))
}

#[derive(Subcommand)]
enum Command {
    /// Train every column described by a key = value config file.
    Train { config: PathBuf },
    /// Evaluate a model file or a manifest of model files on a dataset.
    Eval {
        model: PathBuf,
        dataset: PathBuf,
        /// Directory for error, confusion, rejection and error-list files.
        #[arg(long, default_value = "report")]
        out: PathBuf,
        /// Center images on an HxW canvas first.
        #[arg(long, value_parser = parse_pad)]
        pad: Option<(usize, usize)>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Print layer shapes and parameter counts of an architecture string.
    Inspect { descriptor: String },
    /// Apply a preprocessor chain and write an MCDS1 dataset.
    Preprocess {
        dataset: PathBuf,
        chain: String,
        out: PathBuf,
        #[arg(long, value_parser = parse_pad)]
        pad: Option<(usize, usize)>,
    },
    /// Write originals and distorted versions of the first images.
    AugmentPreview {
        dataset: PathBuf,
        out: PathBuf,
        #[arg(short, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Maximum translation as a fraction of the image extent.
        #[arg(long, default_value_t = 0.0)]
        translate: f64,
        /// Maximum rotation in degrees.
        #[arg(long, default_value_t = 0.0)]
        rotate: f64,
        /// Maximum scale deviation.
        #[arg(long, default_value_t = 0.0)]
        scale: f64,
        #[arg(long, requires = "elastic_alpha")]
        elastic_sigma: Option<f64>,
        #[arg(long, requires = "elastic_sigma")]
        elastic_alpha: Option<f64>,
        #[arg(long, requires = "blur_sigma")]
        blur_radius: Option<usize>,
        #[arg(long, requires = "blur_radius")]
        blur_sigma: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let log = |s: &str| println!("{s}");
    match cli.command {
        Command::Train { config } => {
            let cfg = RunConfig::load(&config)?;
            commands::train(&cfg, &log)?;
        }
        Command::Eval {
            model,
            dataset,
            out,
            pad,
            threads,
        } => {
            commands::eval(&model, &dataset, pad, &out, threads, &log)?;
        }
        Command::Inspect { descriptor } => print!("{}", commands::inspect(&descriptor)?),
        Command::Preprocess {
            dataset,
            chain,
            out,
            pad,
        } => {
            commands::preprocess(&dataset, &chain, &out, pad, &log)?;
        }
        Command::AugmentPreview {
            dataset,
            out,
            n,
            seed,
            translate,
            rotate,
            scale,
            elastic_sigma,
            elastic_alpha,
            blur_radius,
            blur_sigma,
        } => {
            let params = DistortionParams {
                max_translate: translate,
                max_rotate: rotate,
                max_scale: scale,
                elastic: elastic_sigma
                    .zip(elastic_alpha)
                    .map(|(sigma, alpha)| ElasticParams { sigma, alpha }),
                blur: blur_radius
                    .zip(blur_sigma)
                    .map(|(radius, sigma)| BlurParams { radius, sigma }),
                ..DistortionParams::none()
            };
            commands::augment_preview(&dataset, &params, n, seed, &out, &log)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
