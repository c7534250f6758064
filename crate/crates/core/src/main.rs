use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use bnas::cli::{self, ExportFormat, Overrides};
use bnas::ops::Precision;
use bnas::pipeline::{DatasetSpec, RunConfig};

#[derive(Parser)]
#[command(name = "bnas", version, about = "Binarized neural architecture search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// synthetic, synthetic:JSON or cifar10:PATH
    #[arg(long)]
    dataset: Option<DatasetSpec>,
    /// Number of candidate ops per edge (2..=8).
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long)]
    cells: Option<usize>,
    /// Training epochs for the derived network.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Mode {
    #[value(alias = "full-precision")]
    FullPrecision,
    Bnn,
    #[value(alias = "one-bit")]
    OneBit,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Full,
    Bitpacked,
}

#[derive(Subcommand)]
enum Command {
    /// Search a cell architecture and write genotype, report, plots and supernet.
    Search {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the stand-alone network of a genotype.
    Train {
        #[arg(long)]
        genotype: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Test accuracy of a trained checkpoint.
    Eval {
        #[arg(long)]
        genotype: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Convert a checkpoint, or render a genotype (or supernet checkpoint) as DOT.
    Export {
        #[arg(long)]
        genotype: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Write a DOT graph instead of a checkpoint.
        #[arg(long)]
        dot: bool,
        #[arg(long, value_enum, default_value = "bitpacked")]
        format: Format,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a checkpoint, search report or genotype.
    Inspect { path: PathBuf },
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let overrides = Overrides {
            seed: self.seed,
            mode: self.mode.map(|m| match m {
                Mode::FullPrecision => Precision::FullPrecision,
                Mode::Bnn => Precision::Bnn,
                Mode::OneBit => Precision::OneBit,
            }),
            dataset: self.dataset.clone(),
            k0: self.k0,
            cells: self.cells,
            epochs: self.epochs,
        };
        Ok(cli::effective_config(self.config.as_deref(), &overrides)?)
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("BNAS_THREADS") {
        let n: usize = v.parse().with_context(|| format!("BNAS_THREADS={v} is not a number"))?;
        if n == 0 {
            bail!("BNAS_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let args = Cli::parse();
    init_threads()?;
    match args.command {
        Command::Search { common, out } => {
            let s = cli::cmd_search(&common.config()?, &out).context("search failed")?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "{} rounds, {} evaluations in {:.1}s; genotype written to {}",
                s.rounds,
                s.evaluations,
                s.wall_ms as f64 / 1000.0,
                s.genotype.display()
            );
        }
        Command::Train { genotype, common, out } => {
            let s = cli::cmd_train(&genotype, &common.config()?, &out).context("training failed")?;
            println!(
                "{} epochs, {} parameters, test accuracy {:.4}; checkpoint {}",
                s.epochs,
                s.parameters,
                s.test_accuracy,
                s.checkpoint.display()
            );
        }
        Command::Eval {
            genotype,
            checkpoint,
            common,
        } => {
            let acc = cli::cmd_eval(&genotype, &checkpoint, &common.config()?).context("evaluation failed")?;
            println!("test accuracy {acc:.4}");
        }
        Command::Export {
            genotype,
            checkpoint,
            dot,
            format,
            common,
            out,
        } => {
            let format = match (dot, format) {
                (true, _) => ExportFormat::Dot,
                (false, Format::Full) => ExportFormat::Full,
                (false, Format::Bitpacked) => ExportFormat::Bitpacked,
            };
            cli::cmd_export(genotype.as_deref(), checkpoint.as_deref(), format, &common.config()?, &out)
                .context("export failed")?;
            println!("wrote {}", out.display());
        }
        Command::Inspect { path } => print!("{}", cli::cmd_inspect(&path)?),
    }
    Ok(())
}
