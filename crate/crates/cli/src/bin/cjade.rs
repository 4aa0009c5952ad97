use std::path::PathBuf;
use std::process::ExitCode;

use cjade_cli::{
    classify, export_split, load_image, load_manifest, load_split, render_result, run_batch,
    run_bench, summary_line, write_batch, BatchOptions, BenchArgs, CliError, ClientArgs,
    ImageSource, SampleRef,
};
use cjade_core::dataset::{DatasetManifest, Split};
use clap::{Parser, Subcommand};

/// Edge client for the cascade classifier.
#[derive(Debug, Parser)]
#[command(name = "cjade", version)]
struct Cli {
    #[arg(long, env = "CJADE_LOG_LEVEL", default_value = "warn", global = true)]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify one image (binary PPM) or one dataset sample.
    Classify {
        #[arg(required_unless_present = "sample", conflicts_with = "sample")]
        image: Option<PathBuf>,
        /// A dataset sample as split:index.
        #[arg(long)]
        sample: Option<SampleRef>,
        /// Dataset manifest for --sample; the default dataset otherwise.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Print only the JSON line.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        client: ClientArgs,
    },
    /// Classify a whole split into a JSON-lines file.
    Batch {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// Connections used in parallel.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Keep wall-clock timing in each line.
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        client: ClientArgs,
    },
    /// Benchmark pipeline.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
    /// Dataset manifests and image dumps.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Debug, Subcommand)]
enum BenchCommand {
    /// Train, evaluate and write the reports.
    Run(BenchArgs),
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Write a manifest.
    Manifest {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        samples_per_class: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dump a split as PPM images.
    Export {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
}

fn split(name: &str) -> Result<Split, CliError> {
    Split::parse(name).ok_or_else(|| CliError::input(format!("unknown split {name:?}")))
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Classify {
            image,
            sample,
            manifest,
            json,
            client,
        } => {
            let source = match (image, sample) {
                (Some(p), _) => ImageSource::File(p),
                (None, Some(sample)) => ImageSource::Sample { manifest, sample },
                (None, None) => return Err(CliError::input("no image given")),
            };
            let (img, truth) = load_image(&source)?;
            let r = classify(&client, &img)?;
            if !json {
                print!("{}", render_result(&r));
                if let Some((label, condition)) = truth {
                    println!("truth {label} ({})", condition.name());
                }
            }
            println!("{}", serde_json::to_string(&r).expect("result serializes"));
        }
        Command::Batch {
            manifest,
            split: name,
            out,
            parallel,
            timings,
            client,
        } => {
            let m = load_manifest(manifest.as_deref())?;
            let samples = load_split(&m, split(&name)?)?;
            let options = BatchOptions { parallel, timings };
            let (lines, summary) = run_batch(&client, &samples, &options)?;
            write_batch(&out, &lines, &summary)?;
            println!("{}", summary_line(&summary));
        }
        Command::Bench {
            command: BenchCommand::Run(args),
        } => print!("{}", run_bench(&args)?),
        Command::Dataset { command } => match command {
            DatasetCommand::Manifest {
                out,
                classes,
                samples_per_class,
                seed,
            } => {
                let mut m = DatasetManifest::default();
                m.class_count = classes.unwrap_or(m.class_count);
                m.samples_per_class = samples_per_class.unwrap_or(m.samples_per_class);
                m.master_seed = seed.unwrap_or(m.master_seed);
                m.validate().map_err(CliError::input)?;
                m.save(&out)
                    .map_err(|e| CliError::input(format!("{}: {e}", out.display())))?;
                println!("{}", m.hash());
            }
            DatasetCommand::Export {
                manifest,
                split: name,
                out,
                limit,
            } => {
                let m = load_manifest(manifest.as_deref())?;
                let n = export_split(&m, split(&name)?, &out, limit)?;
                println!("wrote {n} images to {}", out.display());
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cjade: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
