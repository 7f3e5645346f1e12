use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::matrix::{reproduce_matrix, MatrixOptions};
use crate::pipeline::Run;
use crate::stage::VERSION;
use crate::variant::{ModelId, Variant};

#[derive(Debug, Parser)]
#[command(name = "distortkd", version = VERSION, about = "Distortion-robust distillation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration (JSON). Defaults apply to anything left out.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed; every stage seed is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads for independent distillation cells.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus and noise banks.
    GenCorpus,
    /// Fit pseudo-labels and pre-train the teacher on clean audio.
    PretrainTeacher,
    /// Continue teacher training on distorted audio.
    AdaptTeacher,
    /// Distill one student variant, e.g. `S4'` or `S1+DAT`.
    Distill {
        #[arg(long)]
        variant: String,
    },
    /// Train the downstream probe of a model (T1, T1' or a variant id).
    Probe {
        #[arg(long)]
        model: String,
    },
    /// Evaluate a model whose probe has been trained.
    Eval {
        #[arg(long)]
        model: String,
    },
    /// Split-averaged embeddings, t-SNE and silhouettes for a model.
    Visualize {
        #[arg(long)]
        model: String,
    },
    /// Every variant over `matrix.replicates` seeds plus the summary table.
    ReproduceMatrix,
}

impl Cli {
    fn load_config(&self) -> Result<RunConfig> {
        match &self.config {
            Some(path) => RunConfig::load(path),
            None => Ok(RunConfig::default()),
        }
    }
}

/// Executes one invocation and returns the JSON printed on stdout.
pub fn execute(cli: &Cli) -> Result<serde_json::Value> {
    let config = cli.load_config()?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set output_dir".into()))?;
    if let Command::ReproduceMatrix = cli.command {
        let opts = MatrixOptions {
            jobs: cli.jobs.max(1),
            verbose: !cli.quiet,
        };
        let table = reproduce_matrix(&out, &config, cli.seed, opts)?;
        if !cli.quiet {
            eprint!("{}", table.to_text());
        }
        return Ok(json!({
            "stage": "reproduce-matrix",
            "status": "done",
            "dir": out,
            "replicates": table.replicates.len(),
            "config_sha256": table.config_sha256,
        }));
    }
    let mut run = Run::new(out, config, cli.seed);
    run.verbose = !cli.quiet;
    let outcome = match &cli.command {
        Command::GenCorpus => run.gen_corpus()?,
        Command::PretrainTeacher => run.pretrain_teacher()?,
        Command::AdaptTeacher => run.adapt_teacher()?,
        Command::Distill { variant } => run.distill(&Variant::parse(variant)?)?,
        Command::Probe { model } => run.probe(&ModelId::parse(model)?)?,
        Command::Eval { model } => run.eval(&ModelId::parse(model)?)?,
        Command::Visualize { model } => run.visualize(&ModelId::parse(model)?)?,
        Command::ReproduceMatrix => unreachable!("handled above"),
    };
    Ok(serde_json::to_value(&outcome)?)
}
