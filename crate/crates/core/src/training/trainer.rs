use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamW, AdamWConfig, Checkpoint, TrainConfig};
use crate::corpus::{make_batches, Sample, Schema};
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, Prediction};
use crate::model::{LossOptions, MiscaModel};
use crate::numerics::{Graph, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-utterance joint loss over the epoch.
    pub train_loss: f64,
    pub val_intent_accuracy: f64,
    pub val_slot_f1: f64,
    pub val_overall_accuracy: f64,
    pub best_so_far: bool,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {:>4}  loss {:.6}  val_intent_acc {:.4}  val_slot_f1 {:.4}  val_overall_acc {:.4}{}",
            self.epoch,
            self.train_loss,
            self.val_intent_accuracy,
            self.val_slot_f1,
            self.val_overall_accuracy,
            if self.best_so_far { "  *" } else { "" }
        )
    }
}

pub struct TrainOutcome {
    /// Holds the selected (best validation) parameters.
    pub model: MiscaModel,
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best_epoch(&self) -> usize {
        self.checkpoint.epoch
    }
}

pub fn adamw_config(c: &TrainConfig) -> AdamWConfig {
    AdamWConfig {
        lr: c.lr,
        beta1: c.beta1,
        beta2: c.beta2,
        eps: c.eps,
        weight_decay: c.weight_decay,
        clip_norm: c.clip_norm,
    }
}

/// Builds the model the config describes over `schema`.
pub fn build_model(config: &TrainConfig, schema: Schema) -> Result<MiscaModel> {
    config.validate()?;
    MiscaModel::new(schema, config.model_dims()?, config.ablation, config.seed)
}

pub fn evaluate(model: &MiscaModel, samples: &[Sample], hard_bio: bool) -> Result<(EvalReport, Vec<Prediction>)> {
    let preds = model.predict_all(samples, hard_bio)?;
    let report = EvalReport::compute(&preds, samples)?;
    Ok((report, preds))
}

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn norm_diagnostics(model: &MiscaModel) -> String {
    let mut norms: Vec<(f64, &str)> = model
        .store
        .iter()
        .map(|(_, p)| (p.value.norm(), p.name.as_str()))
        .collect();
    norms.sort_by(|a, b| b.0.total_cmp(&a.0));
    let shown: Vec<String> = norms.iter().take(5).map(|(n, name)| format!("{name}={n:.4e}")).collect();
    format!(
        "largest parameter norms: {}; gradient norm {:.4e}",
        shown.join(", "),
        model.store.global_grad_norm()
    )
}

/// One pass over `train` in shuffled mini-batches. Returns the mean
/// per-utterance loss.
pub fn train_epoch(
    model: &mut MiscaModel,
    opt: &mut AdamW,
    config: &TrainConfig,
    train: &[Sample],
    epoch: usize,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let opts = LossOptions {
        lambda: config.lambda,
        hierarchy_bce: config.hierarchy_bce,
    };
    let batches = make_batches(train, &model.schema, config.batch_size, Some(shuffle_seed(config.seed, epoch)));
    let mut total = 0.0;
    for (bi, batch) in batches.iter().enumerate() {
        model.store.zero_grad();
        let scale = 1.0 / batch.len() as f64;
        for b in 0..batch.len() {
            let (utt, gold) = (batch.utterance(b), batch.gold(b));
            let grads = {
                let mut g = Graph::new(&model.store);
                let dropout = (config.dropout > 0.0).then_some((config.dropout, &mut *dropout_rng));
                let out = model.forward_with_dropout(&mut g, &utt, dropout)?;
                let parts = model.loss(&mut g, &out, &gold, opts)?;
                let loss = g.value(parts.total).get(0, 0);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: bi,
                        diagnostics: format!("utterance {}: {}", batch.sample_index[b], norm_diagnostics(model)),
                    });
                }
                total += loss;
                g.backward(parts.total)?
            };
            model.store.accumulate(&grads, scale)?;
        }
        opt.step(&mut model.store);
    }
    Ok(total / train.len() as f64)
}

/// Trains for `config.epochs` epochs and keeps the parameters with the
/// highest validation overall accuracy (earliest epoch on ties).
pub fn train(
    config: &TrainConfig,
    train: &[Sample],
    dev: &[Sample],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Config("training and validation splits must be non-empty".into()));
    }
    let schema = Schema::from_train(train, config.levels)?;
    let mut model = build_model(config, schema)?;
    train_model(&mut model, config, train, dev, on_epoch)
        .map(|(checkpoint, history)| TrainOutcome { model, checkpoint, history })
}

/// Like [`train`] for an already-built model; on return `model` holds the
/// selected parameters.
pub fn train_model(
    model: &mut MiscaModel,
    config: &TrainConfig,
    train: &[Sample],
    dev: &[Sample],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    let mut opt = AdamW::new(&model.store, adamw_config(config));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<Matrix>)> = None;

    for epoch in 1..=config.epochs {
        let train_loss = train_epoch(model, &mut opt, config, train, epoch, &mut dropout_rng)?;
        let (report, _) = evaluate(model, dev, config.hard_bio)?;
        let improved = best.as_ref().is_none_or(|(_, acc, _)| report.overall_accuracy > *acc);
        if improved {
            let snapshot = model.store.iter().map(|(_, p)| p.value.clone()).collect();
            best = Some((epoch, report.overall_accuracy, snapshot));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_intent_accuracy: report.intent_accuracy,
            val_slot_f1: report.slot.f1,
            val_overall_accuracy: report.overall_accuracy,
            best_so_far: improved,
        };
        log::info!("{record}");
        on_epoch(&record);
        history.push(record);
        if config.stop_at_overall.is_some_and(|t| report.overall_accuracy >= t) {
            break;
        }
    }

    let (epoch, acc, snapshot) = best.expect("at least one epoch");
    for (p, v) in model.store.iter_mut().zip(snapshot) {
        p.value = v;
    }
    Ok((Checkpoint::capture(model, config, epoch, acc), history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub word_dim: usize,
    pub lambda: f64,
    pub best_epoch: usize,
    pub val_overall_accuracy: f64,
}

pub struct GridOutcome {
    pub runs: Vec<GridRun>,
    /// Winner by validation overall accuracy; the first run wins ties.
    pub best: TrainOutcome,
}

/// Trains every `word_dim x lambda` combination in order.
pub fn grid_search(
    base: &TrainConfig,
    word_dims: &[usize],
    lambdas: &[f64],
    train_split: &[Sample],
    dev: &[Sample],
    on_run: &mut dyn FnMut(&GridRun),
) -> Result<GridOutcome> {
    let mut runs = Vec::new();
    let mut best: Option<TrainOutcome> = None;
    for &word_dim in word_dims {
        for &lambda in lambdas {
            let config = TrainConfig {
                word_dim: Some(word_dim),
                lambda,
                ..base.clone()
            };
            let outcome = train(&config, train_split, dev, &mut |_| {})?;
            let run = GridRun {
                word_dim,
                lambda,
                best_epoch: outcome.best_epoch(),
                val_overall_accuracy: outcome.checkpoint.val_overall_accuracy,
            };
            on_run(&run);
            runs.push(run);
            let better = best
                .as_ref()
                .is_none_or(|b| outcome.checkpoint.val_overall_accuracy > b.checkpoint.val_overall_accuracy);
            if better {
                best = Some(outcome);
            }
        }
    }
    let best = best.ok_or_else(|| Error::Config("grid search needs at least one word_dim and lambda".into()))?;
    Ok(GridOutcome { runs, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticSpec};

    fn corpus() -> (Vec<Sample>, Vec<Sample>) {
        let c = generate(SyntheticSpec {
            train: 12,
            dev: 4,
            ..Default::default()
        });
        (c.train, c.dev)
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            dims: "tiny".into(),
            lr: 1e-2,
            batch_size: 4,
            epochs,
            ..TrainConfig::default()
        }
    }

    fn batch_loss(model: &MiscaModel, samples: &[Sample]) -> f64 {
        let batch = &make_batches(samples, &model.schema, samples.len(), None)[0];
        (0..batch.len())
            .map(|b| {
                let mut g = Graph::new(&model.store);
                let out = model.forward(&mut g, &batch.utterance(b)).unwrap();
                let parts = model.loss(&mut g, &out, &batch.gold(b), LossOptions::default()).unwrap();
                g.value(parts.total).get(0, 0)
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    #[test]
    fn a_small_step_lowers_the_batch_loss() {
        let (train_split, _) = corpus();
        let cfg = TrainConfig {
            lr: 1e-4,
            batch_size: train_split.len(),
            ..config(1)
        };
        let mut model = build_model(&cfg, Schema::from_train(&train_split, 2).unwrap()).unwrap();
        let before = batch_loss(&model, &train_split);
        let mut opt = AdamW::new(&model.store, adamw_config(&cfg));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let reported = train_epoch(&mut model, &mut opt, &cfg, &train_split, 1, &mut rng).unwrap();
        assert!((reported - before).abs() < 1e-9, "{reported} vs {before}");
        assert!(batch_loss(&model, &train_split) < before);
    }

    #[test]
    fn selected_model_reproduces_its_validation_score() {
        let (train_split, dev) = corpus();
        let out = train(&config(6), &train_split, &dev, &mut |_| {}).unwrap();
        assert_eq!(out.history.len(), 6);
        let best = out
            .history
            .iter()
            .map(|r| r.val_overall_accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        let first = out.history.iter().find(|r| r.val_overall_accuracy == best).unwrap();
        assert_eq!(out.best_epoch(), first.epoch);
        assert_eq!(out.checkpoint.val_overall_accuracy, best);
        let (report, _) = evaluate(&out.model, &dev, false).unwrap();
        assert_eq!(report.overall_accuracy, best);
        let marked: Vec<usize> = out.history.iter().filter(|r| r.best_so_far).map(|r| r.epoch).collect();
        assert_eq!(marked.last(), Some(&first.epoch));
    }

    #[test]
    fn same_seed_same_history() {
        let (train_split, dev) = corpus();
        let cfg = TrainConfig { dropout: 0.3, ..config(2) };
        let a = train(&cfg, &train_split, &dev, &mut |_| {}).unwrap();
        let b = train(&cfg, &train_split, &dev, &mut |_| {}).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint, b.checkpoint);
        let c = train(&TrainConfig { seed: 2, ..cfg }, &train_split, &dev, &mut |_| {}).unwrap();
        assert_ne!(a.history[0].train_loss, c.history[0].train_loss);
    }

    #[test]
    fn stops_early_at_the_threshold() {
        let (train_split, dev) = corpus();
        let cfg = TrainConfig {
            stop_at_overall: Some(0.0),
            ..config(5)
        };
        let out = train(&cfg, &train_split, &dev, &mut |_| {}).unwrap();
        assert_eq!(out.history.len(), 1);
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostics() {
        let (train_split, dev) = corpus();
        let cfg = config(1);
        let mut model = build_model(&cfg, Schema::from_train(&train_split, 2).unwrap()).unwrap();
        let id = model.store.iter().find(|(_, p)| p.name == "crf.transitions").unwrap().0;
        model.store.value_mut(id).set(0, 0, f64::NAN);
        match train_model(&mut model, &cfg, &train_split, &dev, &mut |_| {}) {
            Err(Error::NonFiniteLoss { epoch, diagnostics, .. }) => {
                assert_eq!(epoch, 1);
                assert!(diagnostics.contains("largest parameter norms"), "{diagnostics}");
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected an abort"),
        }
    }

    #[test]
    fn grid_runs_every_combination_and_keeps_the_best() {
        let (train_split, dev) = corpus();
        let mut seen = Vec::new();
        let out = grid_search(&config(2), &[4, 6], &[0.25, 0.75], &train_split, &dev, &mut |r| {
            seen.push((r.word_dim, r.lambda))
        })
        .unwrap();
        assert_eq!(seen, vec![(4, 0.25), (4, 0.75), (6, 0.25), (6, 0.75)]);
        let top = out.runs.iter().map(|r| r.val_overall_accuracy).fold(f64::NEG_INFINITY, f64::max);
        let winner = out.runs.iter().find(|r| r.val_overall_accuracy == top).unwrap();
        assert_eq!(out.best.checkpoint.val_overall_accuracy, top);
        assert_eq!(out.best.checkpoint.config.word_dim, Some(winner.word_dim));
        assert_eq!(out.best.checkpoint.config.lambda, winner.lambda);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let (train_split, _) = corpus();
        assert!(matches!(train(&config(1), &train_split, &[], &mut |_| {}), Err(Error::Config(_))));
    }

    #[test]
    fn log_line_marks_improvements() {
        let r = EpochRecord {
            epoch: 3,
            train_loss: 1.5,
            val_intent_accuracy: 0.5,
            val_slot_f1: 0.25,
            val_overall_accuracy: 0.125,
            best_so_far: true,
        };
        assert_eq!(
            r.to_string(),
            "epoch    3  loss 1.500000  val_intent_acc 0.5000  val_slot_f1 0.2500  val_overall_acc 0.1250  *"
        );
    }
}
