//! The `revcorpus` command line: one subcommand per pipeline stage.
//!
//! Stages write into `<paths.out>/<stage>/` unless `--out` says otherwise,
//! and read the upstream stage's directory unless `--in` says otherwise.

pub mod config;
pub mod error;
pub mod stages;

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use revcorpus::corpus::DatasetSplit;
use revcorpus::experience::TargetClass;

pub use config::PipelineConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "revcorpus",
    version,
    about = "Experience-aware review comment corpus pipeline"
)]
pub struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for shuffling and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root of the stage output directories.
    #[arg(long, global = true, value_name = "DIR")]
    pub workdir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resolve reviewer and time of every comment, live or from fixtures.
    Mine {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drop deleted, bot and code-only comments; write the ledger.
    Curate {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        bots: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attach ACO, RSO and the experience quadrant to every example.
    Experience {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Output of `mine`, for review participation.
        #[arg(long)]
        mined: Option<PathBuf>,
        #[arg(long)]
        repos: Option<PathBuf>,
        #[arg(long)]
        identities: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quadrant distribution per split.
    Stats {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Oversample the target class in training and emit the three splits.
    #[command(visible_alias = "emit")]
    Oversample {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        target: Option<TargetClass>,
        #[arg(long)]
        factor: Option<u32>,
        #[arg(long)]
        no_shuffle: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score generated comments against a split's references.
    Bleu {
        /// Output of `oversample`.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: DatasetSplit,
        /// One generated comment per line, aligned with the split.
        #[arg(long)]
        hypotheses: PathBuf,
        #[arg(long)]
        by_partition: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Size and draw the blinded human-evaluation sample.
    Sample {
        /// Output of `oversample`.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Generated comments of one model, aligned with the test split.
        #[arg(long = "model", value_name = "NAME=PATH", value_parser = stages::parse_model)]
        models: Vec<(String, PathBuf)>,
        #[arg(long)]
        size: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the annotation service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of sample frames.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Event log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Built annotation UI to host under /ui.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
    /// Unblind exported annotations and write the results tables.
    Report {
        /// Export of a closed annotation session.
        #[arg(long)]
        export: PathBuf,
        /// Output of `sample`.
        #[arg(long)]
        sample: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drop cached API responses.
    InvalidateCache {
        #[arg(long)]
        repo: Option<String>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

fn or_stage(dir: Option<PathBuf>, config: &PipelineConfig, stage: &str) -> PathBuf {
    dir.unwrap_or_else(|| config.stage_dir(stage))
}

/// Loads the configuration and applies the global flags.
pub fn effective_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(dir) = &cli.workdir {
        config.paths.out = dir.clone();
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = effective_config(&cli)?;
    match cli.command {
        Command::Mine {
            corpus,
            fixtures,
            cache,
            out,
        } => {
            if let Some(p) = corpus {
                config.paths.corpus = p;
            }
            if let Some(p) = fixtures {
                config.paths.fixtures = Some(p);
            }
            if let Some(p) = cache {
                config.paths.cache = p;
            }
            let out = or_stage(out, &config, "mine");
            stages::mine(&config, &out)?;
        }
        Command::Curate { input, bots, out } => {
            if let Some(p) = bots {
                config.paths.bots = Some(p);
            }
            let input = or_stage(input, &config, "mine");
            let out = or_stage(out, &config, "curate");
            stages::curate(&config, &input, &out)?;
        }
        Command::Experience {
            input,
            mined,
            repos,
            identities,
            threshold,
            out,
        } => {
            if let Some(p) = repos {
                config.paths.repos = p;
            }
            if let Some(p) = identities {
                config.paths.identities = Some(p);
            }
            if let Some(t) = threshold {
                config.experience.threshold = t;
            }
            let input = or_stage(input, &config, "curate");
            let mined = or_stage(mined, &config, "mine");
            let out = or_stage(out, &config, "experience");
            stages::experience(&config, &input, &mined, &out)?;
        }
        Command::Stats { input, out } => {
            let input = or_stage(input, &config, "experience");
            let out = or_stage(out, &config, "stats");
            print!("{}", stages::stats(&config, &input, &out)?);
        }
        Command::Oversample {
            input,
            target,
            factor,
            no_shuffle,
            out,
        } => {
            if let Some(t) = target {
                config.oversample.target = t;
            }
            if let Some(k) = factor {
                config.oversample.factor = k;
            }
            if no_shuffle {
                config.oversample.shuffle = false;
            }
            let input = or_stage(input, &config, "experience");
            let out = or_stage(out, &config, "splits");
            stages::oversample(&config, &input, &out)?;
        }
        Command::Bleu {
            input,
            split,
            hypotheses,
            by_partition,
            out,
        } => {
            let input = or_stage(input, &config, "splits");
            let out = or_stage(out, &config, "bleu");
            print!(
                "{}",
                stages::bleu(&config, &input, split, &hypotheses, by_partition, &out)?
            );
        }
        Command::Sample {
            input,
            models,
            size,
            out,
        } => {
            if size.is_some() {
                config.sampling.size = size;
            }
            let input = or_stage(input, &config, "splits");
            let out = or_stage(out, &config, "sample");
            stages::sample(&config, &input, &models, &out)?;
        }
        Command::Serve { addr, frames, log, ui } => {
            let frames = frames.unwrap_or_else(|| config.stage_dir("sample").join("frames"));
            let log = log.unwrap_or_else(|| config.stage_dir("annotations").join("events.jsonl"));
            let store = annotate::FrameStore::load_dir(&frames)?;
            let service = annotate::Service::open(&log, store, annotate::service::system_clock())?;
            let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            runtime.block_on(annotate::serve(addr, service, ui))?;
        }
        Command::Report { export, sample, out } => {
            let sample = or_stage(sample, &config, "sample");
            let out = or_stage(out, &config, "report");
            stages::report(&config, &export, &sample, &out)?;
        }
        Command::InvalidateCache { repo, cache } => {
            if let Some(p) = cache {
                config.paths.cache = p;
            }
            stages::invalidate_cache(&config, repo.as_deref())?;
        }
    }
    Ok(())
}
