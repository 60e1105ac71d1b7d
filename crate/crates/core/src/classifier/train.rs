// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    Classifier, ClassRegistry, ClassifierError, ClassifierResult, DecisionPolicy, ModelConfig, MultiScaleModel, Prediction,
};
use crate::metrics::{evaluate_predictions, tally, MetricsReport};
use crate::nn::{bce_with_logits, Adam, Mode};
use crate::raster::{build_pyramid, ChannelStack, NativeRaster, Pyramid};
use crate::synth::{DatasetManifest, Split};

/// A labeled native raster held as bitmaps.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub raster: NativeRaster,
    pub label: usize,
    pub instances: u64,
}

impl TrainingSample {
    pub fn pyramid(&self, full: usize) -> ClassifierResult<Pyramid> {
        Ok(build_pyramid(&self.raster.resized(full))?)
    }
}

/// Loads the samples of `split` (or all samples) listed in a manifest.
pub fn load_samples(manifest: &DatasetManifest, dir: impl AsRef<Path>, split: Option<Split>) -> ClassifierResult<Vec<TrainingSample>> {
    let dir = dir.as_ref();
    manifest
        .samples
        .iter()
        .filter(|s| split.is_none_or(|sp| s.split == sp))
        .map(|s| {
            let stack = ChannelStack::load(dir.join(&s.stack_file))?;
            Ok(TrainingSample { raster: NativeRaster::from_stack(&stack), label: s.label, instances: s.instances })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Stop after the epoch that crosses this wall-clock budget.
    pub time_budget_secs: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch: 8, lr: 1e-3, patience: 10, max_epochs: 100, seed: 0, time_budget_secs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_ng_identification_rate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the epoch with the lowest validation loss.
    pub model: MultiScaleModel<f32>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub epoch_seconds: Vec<f64>,
}

fn check_labels(samples: &[TrainingSample], k: usize, what: &str) -> ClassifierResult<()> {
    if let Some(s) = samples.iter().find(|s| s.label >= k) {
        return Err(ClassifierError::Data(format!("{what} label {} outside {k} classes", s.label)));
    }
    Ok(())
}

fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    // Batch norm needs two samples; fold a trailing singleton into its neighbour.
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let n = out.len();
        let start = (n - 1) * size;
        out[n - 1] = &order[start..];
    }
    out
}

fn one_hot(labels: impl Iterator<Item = usize>, k: usize) -> Vec<f32> {
    let mut t = Vec::new();
    for l in labels {
        let start = t.len();
        t.resize(start + k, 0.0);
        t[start + l] = 1.0;
    }
    t
}

/// Mini-batch training with BCE on one-hot targets, Adam and early
/// stopping on validation loss.
pub fn train(
    mut model: MultiScaleModel<f32>,
    train: &[TrainingSample],
    val: &[TrainingSample],
    registry: &ClassRegistry,
    cfg: &TrainConfig,
) -> ClassifierResult<TrainOutcome> {
    let k = model.config().class_count;
    if train.len() < 2 || val.is_empty() {
        return Err(ClassifierError::Data(format!(
            "need at least 2 training and 1 validation sample, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    if registry.len() != k {
        return Err(ClassifierError::Config(format!("registry has {} classes, model {k}", registry.len())));
    }
    if cfg.batch < 2 {
        return Err(ClassifierError::Config("batch size must be at least 2".into()));
    }
    check_labels(train, k, "training")?;
    check_labels(val, k, "validation")?;
    let full = model.config().full_size();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut epoch_seconds = Vec::new();
    let mut best: Option<(f64, usize, MultiScaleModel<f32>)> = None;
    let mut bad = 0;
    let started = Instant::now();

    for epoch in 0..cfg.max_epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for b in batches(&order, cfg.batch) {
            let pyrs = b.iter().map(|&i| train[i].pyramid(full)).collect::<ClassifierResult<Vec<_>>>()?;
            let refs: Vec<&Pyramid> = pyrs.iter().collect();
            let inputs = super::scale_inputs::<f32>(model.config(), &refs)?;
            model.zero_grad();
            let logits = model.forward(&inputs, Mode::Train)?;
            let targets = one_hot(b.iter().map(|&i| train[i].label), k);
            let (loss, grad) = bce_with_logits(&logits, &targets)?;
            model.backward(&grad)?;
            let mut slots = Vec::new();
            model.slots(&mut slots);
            adam.step(slots);
            loss_sum += loss as f64 * b.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        let (val_loss, preds) = validate(&mut model, val, registry)?;
        let verdicts: Vec<_> = preds.iter().map(|p| p.verdict).collect();
        let labels: Vec<usize> = val.iter().map(|s| s.label).collect();
        let counts = tally(&verdicts, &labels, registry);
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_accuracy: counts.accuracy(),
            val_ng_identification_rate: counts.ng_identification_rate(),
        });
        epoch_seconds.push(t0.elapsed().as_secs_f64());
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}, val loss {val_loss:.5}, val accuracy {:?}",
            counts.accuracy()
        );
        if best.as_ref().is_none_or(|(l, _, _)| val_loss < *l) {
            best = Some((val_loss, epoch, model.clone()));
            bad = 0;
        } else {
            bad += 1;
            if bad > cfg.patience {
                break;
            }
        }
        if cfg.time_budget_secs.is_some_and(|b| started.elapsed().as_secs_f64() >= b) {
            log::info!("time budget reached after epoch {epoch}");
            break;
        }
    }
    let (_, best_epoch, model) = best.ok_or_else(|| ClassifierError::Config("max_epochs must be at least 1".into()))?;
    Ok(TrainOutcome { model, history, best_epoch, epoch_seconds })
}

const EVAL_BATCH: usize = 16;

fn validate(
    model: &mut MultiScaleModel<f32>,
    samples: &[TrainingSample],
    registry: &ClassRegistry,
) -> ClassifierResult<(f64, Vec<Prediction>)> {
    let k = model.config().class_count;
    let full = model.config().full_size();
    let policy = DecisionPolicy::default();
    let mut loss_sum = 0.0;
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let pyrs = chunk.iter().map(|s| s.pyramid(full)).collect::<ClassifierResult<Vec<_>>>()?;
        let refs: Vec<&Pyramid> = pyrs.iter().collect();
        let inputs = super::scale_inputs::<f32>(model.config(), &refs)?;
        let logits = model.forward(&inputs, Mode::Eval)?.cast::<f64>();
        let targets: Vec<f64> = one_hot(chunk.iter().map(|s| s.label), k).into_iter().map(f64::from).collect();
        let (loss, _) = bce_with_logits(&logits, &targets)?;
        loss_sum += loss * chunk.len() as f64;
        for row in crate::nn::sigmoid(&logits).data().chunks(k) {
            preds.push(Prediction::from_scores(row.to_vec(), &policy, registry));
        }
    }
    Ok((loss_sum / samples.len() as f64, preds))
}

/// Predictions for samples, in order.
pub fn predict_samples(
    model: &mut dyn Classifier,
    samples: &[TrainingSample],
    policy: &DecisionPolicy,
    registry: &ClassRegistry,
) -> ClassifierResult<Vec<Prediction>> {
    let full = model.input_size();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let pyrs = chunk.iter().map(|s| s.pyramid(full)).collect::<ClassifierResult<Vec<_>>>()?;
        let refs: Vec<&Pyramid> = pyrs.iter().collect();
        out.extend(model.predict(&refs, policy, registry)?);
    }
    Ok(out)
}

/// Metrics over labeled samples; `per_instance` adds the instance-weighted
/// tally.
pub fn evaluate(
    model: &mut dyn Classifier,
    samples: &[TrainingSample],
    policy: &DecisionPolicy,
    registry: &ClassRegistry,
    ks: &[usize],
    per_instance: bool,
) -> ClassifierResult<MetricsReport> {
    let preds = predict_samples(model, samples, policy, registry)?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let inst: Vec<u64> = samples.iter().map(|s| s.instances).collect();
    Ok(evaluate_predictions(&preds, &labels, per_instance.then_some(&inst[..]), registry, ks))
}

/// Model config sized for a registry and raster channel count.
pub fn config_for(registry: &ClassRegistry, channels: usize, desk: bool) -> ModelConfig {
    if desk {
        ModelConfig::desk(channels, registry.len())
    } else {
        ModelConfig { input_channels: channels, class_count: registry.len(), ..ModelConfig::default() }
    }
}
