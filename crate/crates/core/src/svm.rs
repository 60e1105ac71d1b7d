// SPDX-License-Identifier: Apache-2.0

//! Baseline classifier: per-channel x/y projection histograms and a linear
//! one-vs-rest SVM trained by stochastic subgradient descent.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    argmax, top_k, ClassRegistry, Classifier, ClassifierError, ClassifierResult, DecisionPolicy, Prediction, TrainingSample,
    Verdict,
};
use crate::nn::checkpoint::{Blob, Container, FORMAT_VERSION};
use crate::nn::NnError;
use crate::raster::{ChannelStack, Pyramid};

pub const SVM_MAGIC: [u8; 4] = *b"LTGS";

/// Column sums then row sums of every channel, each divided by the side
/// length, concatenated channel by channel.
pub fn extract_histograms(stack: &ChannelStack) -> ClassifierResult<Vec<f32>> {
    let (c, h, w) = stack.dims();
    if h != w || h == 0 {
        return Err(ClassifierError::Nn(NnError::Dim(format!("histogram input must be square, got {h}x{w}"))));
    }
    let n = h;
    let inv = 1.0 / n as f32;
    let mut out = vec![0.0f32; c * 2 * n];
    for ch in 0..c {
        let plane = stack.channel(ch);
        let (xs, ys) = out[ch * 2 * n..][..2 * n].split_at_mut(n);
        for y in 0..n {
            let row = &plane[y * n..][..n];
            let mut rs = 0.0;
            for (x, &v) in row.iter().enumerate() {
                xs[x] += v;
                rs += v;
            }
            ys[y] = rs * inv;
        }
        xs.iter_mut().for_each(|v| *v *= inv);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { lambda: 1e-4, epochs: 30, lr: 0.05, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub classes: usize,
    pub dim: usize,
    /// Input side the histograms are taken at.
    pub input_size: usize,
    pub channels: usize,
    /// `classes x dim`, row-major.
    pub weights: Vec<f32>,
    pub biases: Vec<f32>,
}

impl SvmModel {
    pub fn zeros(classes: usize, channels: usize, input_size: usize) -> Self {
        let dim = channels * 2 * input_size;
        Self { classes, dim, input_size, channels, weights: vec![0.0; classes * dim], biases: vec![0.0; classes] }
    }

    pub fn scores(&self, feature: &[f32]) -> Vec<f64> {
        self.weights
            .chunks(self.dim)
            .zip(&self.biases)
            .map(|(w, &b)| w.iter().zip(feature).map(|(&a, &x)| a as f64 * x as f64).sum::<f64>() + b as f64)
            .collect()
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|&w| (w as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Highest-scoring class, ties to the lowest index; NG is an ordinary
    /// class here and yields a not-generatable verdict.
    pub fn predict(&self, feature: &[f32], k: usize, registry: &ClassRegistry) -> Prediction {
        let scores = self.scores(feature);
        let c = argmax(&scores, usize::MAX);
        let verdict = if registry.is_ng(c) { Verdict::NotGeneratable } else { Verdict::Generatable { class: c } };
        let top_k = top_k(&scores, k.min(scores.len()));
        Prediction { probs: scores, verdict, top_k }
    }
}

/// Trains one hinge-loss classifier per class with L2 regularization.
pub fn train_svm(features: &[Vec<f32>], labels: &[usize], classes: usize, cfg: &SvmConfig, channels: usize) -> ClassifierResult<SvmModel> {
    if features.is_empty() || features.len() != labels.len() {
        return Err(ClassifierError::Data(format!("{} features for {} labels", features.len(), labels.len())));
    }
    if labels.iter().any(|&l| l >= classes) {
        return Err(ClassifierError::Data(format!("label outside {classes} classes")));
    }
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(ClassifierError::Data("training set holds a single class".into()));
    }
    let dim = features[0].len();
    if dim == 0 || channels == 0 || !dim.is_multiple_of(2 * channels) || features.iter().any(|f| f.len() != dim) {
        return Err(ClassifierError::Data("features must share one length of channels x 2 x side".into()));
    }
    let mut m = SvmModel::zeros(classes, channels, dim / (2 * channels));
    let mut w = vec![0.0f64; classes * dim];
    let mut b = vec![0.0f64; classes];
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let eta = cfg.lr / (1.0 + cfg.lr * cfg.lambda * t as f64);
            let shrink = (1.0 - eta * cfg.lambda).max(0.0);
            let x = &features[i];
            for c in 0..classes {
                let y = if labels[i] == c { 1.0 } else { -1.0 };
                let wc = &mut w[c * dim..][..dim];
                let s: f64 = wc.iter().zip(x).map(|(&a, &v)| a * v as f64).sum::<f64>() + b[c];
                wc.iter_mut().for_each(|a| *a *= shrink);
                if y * s < 1.0 {
                    for (a, &v) in wc.iter_mut().zip(x) {
                        *a += eta * y * v as f64;
                    }
                    b[c] += eta * y;
                }
            }
            t += 1;
        }
    }
    m.weights = w.iter().map(|&v| v as f32).collect();
    m.biases = b.iter().map(|&v| v as f32).collect();
    if m.weights.iter().chain(&m.biases).any(|v| !v.is_finite()) {
        return Err(ClassifierError::Data("training diverged".into()));
    }
    Ok(m)
}

/// Histogram features of samples at the given side.
pub fn sample_features(samples: &[TrainingSample], input_size: usize) -> ClassifierResult<Vec<Vec<f32>>> {
    samples.iter().map(|s| extract_histograms(&s.raster.resized(input_size))).collect()
}

impl Classifier for SvmModel {
    fn input_size(&self) -> usize {
        self.input_size
    }

    fn input_channels(&self) -> usize {
        self.channels
    }

    fn predict(&mut self, pyramids: &[&Pyramid], policy: &DecisionPolicy, registry: &ClassRegistry) -> ClassifierResult<Vec<Prediction>> {
        pyramids
            .iter()
            .map(|p| {
                let f = extract_histograms(p.full())?;
                if f.len() != self.dim {
                    return Err(ClassifierError::Nn(NnError::Dim(format!("feature length {} for a {}-wide model", f.len(), self.dim))));
                }
                Ok(SvmModel::predict(self, &f, policy.top_k, registry))
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct SvmHeader {
    classes: usize,
    channels: usize,
    input_size: usize,
    registry: ClassRegistry,
}

pub fn save_svm(m: &SvmModel, registry: &ClassRegistry, w: impl Write) -> ClassifierResult<()> {
    if registry.len() != m.classes {
        return Err(ClassifierError::Config(format!("registry has {} classes, model {}", registry.len(), m.classes)));
    }
    let header = SvmHeader { classes: m.classes, channels: m.channels, input_size: m.input_size, registry: registry.clone() };
    let config = serde_json::to_string(&header).map_err(|e| ClassifierError::Format(e.to_string()))?;
    let blobs = vec![
        Blob { name: "w".into(), dims: vec![m.classes, m.dim], data: m.weights.clone() },
        Blob { name: "b".into(), dims: vec![m.classes], data: m.biases.clone() },
    ];
    Container { magic: SVM_MAGIC, version: FORMAT_VERSION, config, blobs }.write_to(w)?;
    Ok(())
}

pub fn load_svm(r: impl Read) -> ClassifierResult<(SvmModel, ClassRegistry)> {
    let c = Container::read_from(r, &SVM_MAGIC, FORMAT_VERSION)?;
    let h: SvmHeader = serde_json::from_str(&c.config).map_err(|e| ClassifierError::Format(e.to_string()))?;
    let mut m = SvmModel::zeros(h.classes, h.channels, h.input_size);
    match &c.blobs[..] {
        [w, b] if w.name == "w" && b.name == "b" && w.dims == [m.classes, m.dim] && b.dims == [m.classes] => {
            m.weights.clone_from(&w.data);
            m.biases.clone_from(&b.data);
        }
        _ => return Err(ClassifierError::Format("SVM checkpoint needs blobs w and b of matching shape".into())),
    }
    if h.registry.len() != m.classes {
        return Err(ClassifierError::Format("registry size differs from class count".into()));
    }
    Ok((m, h.registry))
}

/// Loads either a CNN checkpoint or an SVM model, told apart by the file
/// magic.
pub fn load_classifier_file(
    path: impl AsRef<std::path::Path>,
) -> ClassifierResult<(Box<dyn Classifier + Send>, ClassRegistry)> {
    let bytes = std::fs::read(path)?;
    match bytes.get(..4) {
        Some(m) if m == SVM_MAGIC => {
            let (m, reg) = load_svm(&bytes[..])?;
            Ok((Box::new(m), reg))
        }
        Some(m) if m == crate::classifier::MODEL_MAGIC => {
            let (m, reg) = crate::classifier::load_checkpoint(&bytes[..])?;
            Ok((Box::new(m), reg))
        }
        _ => Err(ClassifierError::Format("not a model file".into())),
    }
}
