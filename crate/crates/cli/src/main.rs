use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adfuse::features::Partition;
use adfuse::pipeline::{self, ConfigOverrides, FixtureConfig, PipelineConfig};
use adfuse::{chat, eval};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

/// Alzheimer's detection from picture descriptions: transcript normalization,
/// feature fusion and linear SVM training.
#[derive(Parser, Debug)]
#[command(name = "adfuse", version, about)]
struct Cli {
    /// Directory that relative paths in configs and flags are resolved against.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize every .cha file in a directory to JSON.
    Normalize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Word counts of the manifest's transcripts by partition.
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        /// Also write stats.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic corpora for testing.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
    /// Select C on the development split and save the model.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a partition with a saved model against its labels.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        partition: Partition,
    },
    /// Score a partition with a saved model; labels are not needed.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "test")]
        partition: Partition,
    },
}

#[derive(Subcommand, Debug)]
enum FixturesCommand {
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 108)]
        n_train: usize,
        #[arg(long, default_value_t = 48)]
        n_test: usize,
        #[arg(long, default_value_t = 64)]
        text_dim: usize,
        #[arg(long, default_value_t = 1.5)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        shuffle_labels: bool,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON pipeline config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Feature sources joined by '+', e.g. linguistic-document+acoustic:xvec_sre.
    #[arg(long)]
    system: Option<String>,
    /// mean or max over sentences.
    #[arg(long)]
    pooling: Option<String>,
    /// Inclusive hidden-layer range, e.g. 2..12.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    dev_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated C values.
    #[arg(long)]
    c_grid: Option<String>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(self, root: &Path) -> Result<PipelineConfig> {
        let base = match &self.config {
            Some(path) => PipelineConfig::load(root.join(path))?,
            None => {
                let Some(manifest) = &self.manifest else {
                    bail!("either --config or --manifest is required");
                };
                PipelineConfig::new(manifest)
            }
        };
        Ok(base.with_overrides(ConfigOverrides {
            manifest: self.manifest,
            system: self.system,
            pooling: self.pooling,
            layers: self.layers,
            dev_fraction: self.dev_fraction,
            seed: self.seed,
            c_grid: self.c_grid,
            tolerance: self.tolerance,
            out: self.out,
        })?)
    }
}

fn print_stats(stats: &chat::CorpusStats) {
    println!("{:<14} {:>8} {:>8}", "partition", "words", "unique");
    for (name, p) in &stats.per_partition {
        println!("{name:<14} {:>8} {:>8}", p.total, p.unique);
    }
    println!("{:<14} {:>8} {:>8}", "total", stats.total_words, stats.unique_words);
}

fn run(cli: Cli) -> Result<()> {
    let root = cli.root;
    match cli.command {
        Command::Normalize { input, output } => {
            let stats = pipeline::cmd_normalize(&root.join(input), &root.join(output))?;
            print_stats(&stats);
        }
        Command::Stats { manifest, out } => {
            let stats = pipeline::cmd_stats(&root, &manifest, out.as_deref())?;
            print_stats(&stats);
        }
        Command::Fixtures {
            command:
                FixturesCommand::Generate {
                    out,
                    n_train,
                    n_test,
                    text_dim,
                    separation,
                    seed,
                    shuffle_labels,
                },
        } => {
            let config = FixtureConfig {
                n_train,
                n_test,
                text_dim,
                separation,
                seed,
                shuffle_labels,
                ..FixtureConfig::default()
            };
            let out = root.join(out);
            let m = pipeline::generate_fixtures(&out, &config)
                .with_context(|| format!("generating fixtures in {}", out.display()))?;
            println!("wrote {} subjects to {}", m.subjects.len(), out.display());
        }
        Command::Train { run } => {
            let config = run.config(&root)?;
            let outcome = pipeline::cmd_train(&root, &config)?;
            print!("{}", outcome.report.render());
        }
        Command::Evaluate { run, model, partition } => {
            let config = run.config(&root)?;
            let outcome = pipeline::cmd_evaluate(&root, &config, &model, partition)?;
            print!("{}", eval::render_table(&[(&outcome.system, &outcome.report)]));
        }
        Command::Predict { run, model, partition } => {
            let config = run.config(&root)?;
            for p in pipeline::cmd_predict(&root, &config, &model, partition)? {
                println!("{}\t{}\t{:.6}", p.subject, p.predicted.name(), p.mean_score);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
