//! `seqset`: train, evaluate, predict, explain, run modality-erasure and
//! ablation studies, gradient-check the engine, and generate the synthetic
//! benchmark.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seqset_cli::commands::{
    cmd_ablate, cmd_erase_eval, cmd_eval, cmd_explain, cmd_gradcheck, cmd_predict, cmd_synth,
    cmd_train, gradcheck_exit_code, gradcheck_to_text, metrics_to_json, predictions_to_jsonl,
    reports_to_json, synth_summary, GradCheckOptions,
};
use seqset_cli::config::RunConfig;
use seqset_cli::synth::SynthSpec;
use seqset_core::data::TaskKind;
use seqset_core::mra::Similarity;
use seqset_core::{Error, Result};

#[derive(Parser)]
#[command(name = "seqset", version, about = "Set-aware multimodal sequence-set learning engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut run = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            run.seed = seed;
        }
        if let Some(out) = &self.out {
            run.out_dir = out.clone();
        }
        Ok(run)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint path (default `<out_dir>/checkpoint.json`).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset split to read.
    #[arg(long, default_value = "test")]
    split: String,
    /// Classification decision threshold.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train(ConfigArgs),
    /// Evaluate a checkpoint; metrics JSON to stdout.
    Eval(EvalArgs),
    /// Per-sample predictions as JSONL to stdout.
    Predict(EvalArgs),
    /// Attention-weight explanation for selected samples.
    Explain {
        #[command(flatten)]
        eval: EvalArgs,
        /// Comma-separated sample ids.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        /// Also render a static HTML heat view to this path.
        #[arg(long)]
        html: Option<PathBuf>,
    },
    /// Per-modality erasure study; CSV to stdout.
    EraseEval {
        #[command(flatten)]
        eval: EvalArgs,
        /// Also write the CSV here.
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Train/evaluate the MRA variant grid; CSV to stdout.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Similarity axis (`additive`, `scaled_dot`).
        #[arg(long, value_delimiter = ',', default_value = "additive")]
        similarities: Vec<String>,
        /// Residual axis (`on`, `off`).
        #[arg(long, value_delimiter = ',', default_value = "on")]
        residuals: Vec<String>,
        /// Also write the CSV here.
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Finite-difference check of every backward rule on a toy model.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 3)]
        modalities: usize,
        #[arg(long, default_value_t = 5)]
        max_len: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        epsilon: f64,
    },
    /// Generate the planted-signal benchmark dataset.
    Synth {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        modalities: usize,
        #[arg(long, default_value_t = 200)]
        vocab_size: usize,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 500)]
        valid: usize,
        #[arg(long, default_value_t = 500)]
        test: usize,
        #[arg(long, default_value_t = 3)]
        len_min: usize,
        #[arg(long, default_value_t = 8)]
        len_max: usize,
    },
}

/// Write to stdout, treating a closed pipe (e.g. `seqset explain | head`)
/// as a clean exit.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        other => Ok(other?),
    }
}

fn parse_similarities(names: &[String]) -> Result<Vec<Similarity>> {
    names
        .iter()
        .map(|n| match n.as_str() {
            "additive" => Ok(Similarity::Additive),
            "scaled_dot" => Ok(Similarity::ScaledDot),
            other => Err(Error::Config(format!("unknown similarity `{other}`"))),
        })
        .collect()
}

fn parse_residuals(names: &[String]) -> Result<Vec<bool>> {
    names
        .iter()
        .map(|n| match n.as_str() {
            "on" | "true" => Ok(true),
            "off" | "false" => Ok(false),
            other => Err(Error::Config(format!("unknown residual setting `{other}`"))),
        })
        .collect()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(args) => {
            let run = args.load()?;
            let dir = cmd_train(&run)?;
            emit(&format!("{}\n", dir.display()))?;
        }
        Command::Eval(args) => {
            let run = args.config.load()?;
            let threshold = args.threshold.unwrap_or(run.threshold);
            let report = cmd_eval(&run, args.checkpoint.as_deref(), &args.split, threshold)?;
            emit(&format!("{}\n", metrics_to_json(&report)?))?;
        }
        Command::Predict(args) => {
            let run = args.config.load()?;
            let predictions = cmd_predict(&run, args.checkpoint.as_deref(), &args.split)?;
            emit(&predictions_to_jsonl(&predictions)?)?;
        }
        Command::Explain { eval, ids, html } => {
            let run = eval.config.load()?;
            let reports = cmd_explain(
                &run,
                eval.checkpoint.as_deref(),
                &eval.split,
                &ids,
                html.as_deref(),
            )?;
            emit(&format!("{}\n", reports_to_json(&reports)?))?;
        }
        Command::EraseEval { eval, out_csv } => {
            let run = eval.config.load()?;
            let threshold = eval.threshold.unwrap_or(run.threshold);
            let table = cmd_erase_eval(&run, eval.checkpoint.as_deref(), &eval.split, threshold)?;
            let csv = table.to_csv();
            if let Some(path) = out_csv {
                std::fs::write(path, &csv)?;
            }
            emit(&csv)?;
        }
        Command::Ablate {
            config,
            similarities,
            residuals,
            out_csv,
        } => {
            let run = config.load()?;
            let sims = parse_similarities(&similarities)?;
            let ress = parse_residuals(&residuals)?;
            let table = cmd_ablate(&run, &sims, &ress)?;
            let csv = table.to_csv();
            if let Some(path) = out_csv {
                std::fs::write(path, &csv)?;
            }
            emit(&csv)?;
        }
        Command::Gradcheck {
            d,
            modalities,
            max_len,
            classes,
            seed,
            epsilon,
        } => {
            let opts = GradCheckOptions {
                d,
                modalities,
                max_len,
                classes,
                seed,
                epsilon,
                threshold: 1e-4,
            };
            let report = cmd_gradcheck(&opts)?;
            emit(&gradcheck_to_text(&report))?;
            let code = gradcheck_exit_code(&report);
            if code != 0 {
                return Ok(ExitCode::from(code));
            }
        }
        Command::Synth {
            out,
            seed,
            modalities,
            vocab_size,
            train,
            valid,
            test,
            len_min,
            len_max,
        } => {
            let spec = SynthSpec {
                modalities,
                vocab_size,
                train,
                valid,
                test,
                len_min,
                len_max,
                task: TaskKind::Binary,
                seed,
            };
            let output = cmd_synth(&spec, &out)?;
            emit(&synth_summary(&output))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
