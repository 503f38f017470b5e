use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tpm_embed::cltree::MixtureOfTrees;
use tpm_embed::config::ExperimentConfig;
use tpm_embed::error::Error;
use tpm_embed::pipeline::{run_experiment, Stage};
use tpm_embed::spn::Spn;

/// Tractable density estimators and random-query embeddings over binary
/// datasets.
#[derive(Parser)]
#[command(name = "tpm-embed", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's output_dir)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for within-stage parallelism; never affects outputs
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Override every seed in the config
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline: genqueries, fit, embed, eval
    Run {
        #[command(flatten)]
        args: RunArgs,
        /// Run a single stage against stored artifacts
        #[arg(long)]
        stage: Option<String>,
    },
    /// Fit the density model only
    Fit {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Generate the query set (or patch dataset) only
    Genqueries {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Compute embeddings from stored model and queries
    Embed {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Run the evaluation sweep on stored embeddings
    Eval {
        #[command(flatten)]
        args: RunArgs,
    },
    /// Validate a stored model file (SPN or MT format)
    Validate {
        /// Path to a model file
        #[arg(long)]
        model: PathBuf,
    },
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.model = cfg.model.clone().with_seed(seed);
        cfg.embedding = cfg.embedding.clone().with_seed(seed);
    }
    Ok(cfg)
}

fn execute(args: &RunArgs, stage: Option<Stage>) -> Result<(), Error> {
    let cfg = load_config(args)?;
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let paths = run_experiment(&cfg, &out_dir, args.workers, stage)?;
    println!("artifacts written to {}", paths.out_dir.display());
    Ok(())
}

fn validate_model(path: &PathBuf) -> Result<(), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.starts_with("MT ") {
        MixtureOfTrees::from_text(&text)?;
        println!("ok: mixture of trees");
    } else {
        // Spn::from_text already rejects invalid structures, but report the
        // violations instead of just failing
        let spn = Spn::from_text(&text)?;
        let report = spn.validate();
        if report.is_ok() {
            println!("ok: spn with {} nodes", spn.num_nodes());
        } else {
            for v in &report.violations {
                println!("violation at node {}: {}", v.node, v.detail);
            }
            return Err(Error::Structure("model failed validation".into()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { args, stage } => match stage
            .as_deref()
            .map(str::parse::<Stage>)
            .transpose()
        {
            Ok(stage) => execute(args, stage),
            Err(e) => Err(e),
        },
        Command::Fit { args } => execute(args, Some(Stage::Fit)),
        Command::Genqueries { args } => execute(args, Some(Stage::GenQueries)),
        Command::Embed { args } => execute(args, Some(Stage::Embed)),
        Command::Eval { args } => execute(args, Some(Stage::Eval)),
        Command::Validate { model } => validate_model(model),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e @ Error::Stage { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
