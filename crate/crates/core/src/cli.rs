//! The `misca` command line: train, eval, predict, gradcheck and inspect.
//!
//! Config values come from an optional TOML file and are overridden by
//! flags. Every artifact starts with the effective configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{parse_corpus, Sample, Schema, Split};
use crate::decoders::write_predictions;
use crate::error::{Error, Result};
use crate::model::{Ablation, LossOptions, MiscaModel};
use crate::numerics::GradcheckOptions;
use crate::synthetic::{toy_dims, toy_sample, toy_schema};
use crate::training::{build_model, evaluate, grid_search, train, Checkpoint, TrainConfig, GRID_LAMBDAS, GRID_WORD_DIMS};

#[derive(Debug, Parser)]
#[command(name = "misca", version, about = "Joint multiple intent detection and slot filling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on `train.txt`, select on `dev.txt`, write the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Write predictions for one split or corpus file.
    Predict(PredictArgs),
    /// Finite-difference check of every gradient on a toy model.
    Gradcheck(GradcheckArgs),
    /// Dump the co-attention matrices for one utterance.
    Inspect(InspectArgs),
}

/// Flags that map onto [`TrainConfig`] fields.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with config fields; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub word_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// full, no_slot_label_attention or no_coattention.
    #[arg(long)]
    pub ablation: Option<Ablation>,
    /// Dimension preset: mixatis, mixsnips, small or tiny.
    #[arg(long)]
    pub dims: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub stop_at_overall: Option<f64>,
    /// Forbid invalid BIO transitions when decoding.
    #[arg(long)]
    pub hard_bio: bool,
    /// Add the coarse-level slot BCE term to the loss.
    #[arg(long)]
    pub hierarchy_bce: bool,
}

impl ConfigArgs {
    /// Layers the file (if any) over `base`, then the flags over that.
    pub fn resolve(&self, base: TrainConfig) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => TrainConfig::from_toml_file(path)?,
            None => base,
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    c.$field = v.clone();
                }
            )*};
        }
        set!(levels, lambda, lr, epochs, seed, ablation, dims, batch_size, dropout);
        if self.dataset_dir.is_some() {
            c.dataset_dir = self.dataset_dir.clone();
        }
        if self.word_dim.is_some() {
            c.word_dim = self.word_dim;
        }
        if self.clip_norm.is_some() {
            c.clip_norm = self.clip_norm;
        }
        if self.stop_at_overall.is_some() {
            c.stop_at_overall = self.stop_at_overall;
        }
        c.hard_bio |= self.hard_bio;
        c.hierarchy_bce |= self.hierarchy_bce;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Where the selected checkpoint goes.
    #[arg(long, default_value = "best.ckpt")]
    pub checkpoint: PathBuf,
    /// Where the training log goes.
    #[arg(long, default_value = "train.log")]
    pub log: PathBuf,
    /// Search word_dim x lambda over the standard grid instead of one run.
    #[arg(long)]
    pub grid: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Also write the key=value report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// A corpus file to read instead of a split of the dataset directory.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Prediction file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub levels: usize,
    #[arg(long, default_value_t = Ablation::Full)]
    pub ablation: Ablation,
    #[arg(long)]
    pub hierarchy_bce: bool,
    /// Report file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Model to inspect; a toy model built from `--seed` when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Whitespace-separated tokens.
    #[arg(long, conflicts_with = "index")]
    pub utterance: Option<String>,
    /// Take this utterance of `--split` instead.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long, default_value = "dev")]
    pub split: Split,
    #[arg(long)]
    pub dataset_dir: Option<PathBuf>,
    /// Dump file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => run_train(&a),
        Command::Eval(a) => run_eval(&a),
        Command::Predict(a) => run_predict(&a),
        Command::Gradcheck(a) => run_gradcheck(&a),
        Command::Inspect(a) => run_inspect(&a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dataset_dir(config: &TrainConfig) -> Result<&Path> {
    config
        .dataset_dir
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset directory: pass --dataset-dir or set dataset_dir".into()))
}

fn load_split(config: &TrainConfig, split: Split) -> Result<Vec<Sample>> {
    parse_corpus(split.path_in(dataset_dir(config)?))
}

fn config_header(config: &TrainConfig) -> Vec<String> {
    config.to_key_values().into_iter().map(|kv| format!("config {kv}")).collect()
}

fn run_train(a: &TrainArgs) -> Result<()> {
    let config = a.config.resolve(TrainConfig::default())?;
    let train_split = load_split(&config, Split::Train)?;
    let dev = load_split(&config, Split::Dev)?;

    let mut log = String::new();
    let line = |log: &mut String, text: String| {
        println!("{text}");
        let _ = writeln!(log, "{text}");
    };
    let parameters = build_model(&config, Schema::from_train(&train_split, config.levels)?)?.parameter_count();
    line(
        &mut log,
        format!("# ablation {} with {parameters} parameters", config.ablation),
    );
    for h in config_header(&config) {
        line(&mut log, format!("# {h}"));
    }
    line(
        &mut log,
        format!("# {} training and {} validation utterances", train_split.len(), dev.len()),
    );

    let outcome = if a.grid {
        let mut runs = Vec::new();
        let grid = grid_search(&config, &GRID_WORD_DIMS, &GRID_LAMBDAS, &train_split, &dev, &mut |r| {
            runs.push(format!(
                "grid word_dim={} lambda={} best_epoch={} val_overall_acc={:.4}",
                r.word_dim, r.lambda, r.best_epoch, r.val_overall_accuracy
            ))
        })?;
        for r in runs {
            line(&mut log, r);
        }
        grid.best
    } else {
        let mut epochs = Vec::new();
        let out = train(&config, &train_split, &dev, &mut |r| {
            println!("{r}");
            epochs.push(r.to_string());
        })?;
        for e in epochs {
            let _ = writeln!(log, "{e}");
        }
        out
    };
    line(
        &mut log,
        format!(
            "best epoch {} val_overall_acc {:.4}",
            outcome.best_epoch(),
            outcome.checkpoint.val_overall_accuracy
        ),
    );
    outcome.checkpoint.save(&a.checkpoint)?;
    line(&mut log, format!("checkpoint {}", a.checkpoint.display()));
    write_file(&a.log, &log)
}

/// The checkpoint's model under the effective config. Flags that change the
/// architecture surface as a checkpoint mismatch.
fn load_model(path: &Path, args: &ConfigArgs) -> Result<(MiscaModel, TrainConfig)> {
    let ckpt = Checkpoint::load(path)?;
    let config = args.resolve(ckpt.config.clone())?;
    let mut model = MiscaModel::new(ckpt.schema.clone(), config.model_dims()?, config.ablation, config.seed)?;
    if model.levels() != config.levels {
        return Err(Error::CheckpointMismatch {
            name: "schema".into(),
            message: format!(
                "checkpoint labels have {} levels, config asks for {}",
                model.levels(),
                config.levels
            ),
        });
    }
    ckpt.restore_into(&mut model)?;
    Ok((model, config))
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let (model, config) = load_model(&a.checkpoint, &a.config)?;
    let samples = load_split(&config, a.split)?;
    let (report, _) = evaluate(&model, &samples, config.hard_bio)?;
    print!("{report}");
    if let Some(path) = &a.report {
        let mut text = String::new();
        for kv in config.to_key_values() {
            let _ = writeln!(text, "config.{kv}");
        }
        let _ = writeln!(text, "checkpoint={}", a.checkpoint.display());
        let _ = writeln!(text, "split={}", a.split.name());
        text.push_str(&report.to_key_values());
        write_file(path, &text)?;
    }
    Ok(())
}

fn run_predict(a: &PredictArgs) -> Result<()> {
    let (model, config) = load_model(&a.checkpoint, &a.config)?;
    let (source, samples) = match &a.input {
        Some(path) => (path.display().to_string(), parse_corpus(path)?),
        None => (a.split.name().to_string(), load_split(&config, a.split)?),
    };
    let preds = model.predict_all(&samples, config.hard_bio)?;
    let mut header = config_header(&config);
    header.push(format!("checkpoint {}", a.checkpoint.display()));
    header.push(format!("input {source}"));
    emit(a.output.as_deref(), &write_predictions(&header, &samples, &preds)?)
}

fn run_gradcheck(a: &GradcheckArgs) -> Result<()> {
    let model = MiscaModel::new(toy_schema(a.levels), toy_dims(), a.ablation, a.seed)?;
    let opts = LossOptions {
        hierarchy_bce: a.hierarchy_bce,
        ..LossOptions::default()
    };
    let report = model.gradcheck_sample(&toy_sample(), opts, GradcheckOptions::default())?;
    let text = format!(
        "# gradcheck seed={} levels={} ablation={} hierarchy_bce={} parameters={} entries={}\n{report}\n",
        a.seed,
        a.levels,
        a.ablation,
        a.hierarchy_bce,
        model.parameter_count(),
        report.checked_entries()
    );
    emit(a.output.as_deref(), &text)?;
    if report.passed() {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "gradient check failed: max relative error {:.3e}",
            report.max_rel_error()
        )))
    }
}

fn run_inspect(a: &InspectArgs) -> Result<()> {
    let (model, mut header, dataset) = match &a.checkpoint {
        Some(path) => {
            let args = ConfigArgs {
                dataset_dir: a.dataset_dir.clone(),
                ..ConfigArgs::default()
            };
            let (model, config) = load_model(path, &args)?;
            let mut h = config_header(&config);
            h.push(format!("checkpoint {}", path.display()));
            (model, h, config.dataset_dir)
        }
        None => {
            let model = MiscaModel::new(toy_schema(2), toy_dims(), Ablation::Full, a.seed)?;
            (model, vec![format!("toy model seed {}", a.seed)], a.dataset_dir.clone())
        }
    };
    let sample = match (&a.utterance, a.index) {
        (Some(text), _) => {
            let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
            if tokens.is_empty() {
                return Err(Error::Config("--utterance has no tokens".into()));
            }
            let tags = vec!["O".to_string(); tokens.len()];
            Sample::new(tokens, tags, [])
        }
        (None, Some(i)) => {
            let dir = dataset.ok_or_else(|| Error::Config("--index needs --dataset-dir".into()))?;
            let samples = parse_corpus(a.split.path_in(&dir))?;
            samples
                .get(i)
                .cloned()
                .ok_or_else(|| Error::Config(format!("{} has {} utterances, no index {i}", a.split.name(), samples.len())))?
        }
        (None, None) => toy_sample(),
    };
    header.push(format!("utterance {}", sample.tokens.join(" ")));
    let mut text = String::new();
    for h in &header {
        let _ = writeln!(text, "# {h}");
    }
    text.push_str(&model.coattention_dump(&sample)?);
    emit(a.output.as_deref(), &text)
}
