// SPDX-License-Identifier: Apache-2.0

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassRegistry, ClassifierError, ClassifierResult};
use crate::nn::checkpoint::{export_blobs, import_blobs, Container, FORMAT_VERSION};
use crate::nn::gradcheck::{finite_difference, Coord, GradCheckReport};
use crate::nn::{
    join, sigmoid, AvgPool2d, BatchNorm2d, Conv2d, GlobalAvgPool, Linear, Mode, Module, NnError, NnResult, Real, Relu,
    ResidualBlock, Slot, SlotList, Tensor,
};
use crate::raster::{ChannelStack, Pyramid};

pub const MODEL_MAGIC: [u8; 4] = *b"LTGM";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub class_count: usize,
    pub stem_width: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Input sides, coarse to fine: three successive doublings, or one side.
    pub scales: Vec<usize>,
    /// Spatial side every sub-network pools to after its stem.
    pub trunk_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_channels: 21,
            class_count: 52,
            stem_width: 16,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: 2,
            scales: vec![64, 128, 256],
            trunk_size: 32,
        }
    }
}

impl ModelConfig {
    /// Narrow single-block variant for CPU training on small datasets.
    pub fn desk(input_channels: usize, class_count: usize) -> Self {
        Self {
            input_channels,
            class_count,
            stem_width: 8,
            stage_widths: vec![8, 16, 32],
            blocks_per_stage: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> ClassifierResult<()> {
        let bad = |m: String| Err(ClassifierError::Config(m));
        if self.class_count < 2 {
            return bad(format!("class count must be at least 2, got {}", self.class_count));
        }
        if self.input_channels == 0 || self.stem_width == 0 || self.blocks_per_stage == 0 || self.trunk_size == 0 {
            return bad("channel, width, block and trunk sizes must be positive".into());
        }
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return bad(format!("invalid stage widths {:?}", self.stage_widths));
        }
        match self.scales[..] {
            [s] | [s, _, _] if s > 0 => {}
            _ => return bad(format!("scales must hold one or three sides, got {:?}", self.scales)),
        }
        if self.scales.len() == 3 && (self.scales[1] != 2 * self.scales[0] || self.scales[2] != 2 * self.scales[1]) {
            return bad(format!("scales {:?} are not successive doublings", self.scales));
        }
        for &s in &self.scales {
            pool_factor(self, s)?;
        }
        Ok(())
    }

    pub fn feature_width(&self) -> usize {
        *self.stage_widths.last().expect("validated")
    }

    pub fn concat_width(&self) -> usize {
        self.feature_width() * self.scales.len()
    }

    /// Side of the full-resolution input.
    pub fn full_size(&self) -> usize {
        *self.scales.last().expect("validated")
    }
}

fn pool_factor(cfg: &ModelConfig, n: usize) -> ClassifierResult<usize> {
    if n < 2 || !n.is_multiple_of(2) || !(n / 2).is_multiple_of(cfg.trunk_size) {
        return Err(ClassifierError::Config(format!(
            "input side {n} does not reduce to trunk size {} after a stride-2 stem",
            cfg.trunk_size
        )));
    }
    Ok(n / 2 / cfg.trunk_size)
}

/// One base network: stride-2 stem, average pool to the trunk size,
/// residual stages and global average pooling.
#[derive(Debug, Clone)]
pub struct SubNetwork<T> {
    pub scale: usize,
    stem: Conv2d<T>,
    stem_bn: BatchNorm2d<T>,
    stem_relu: Relu,
    pool: AvgPool2d,
    blocks: Vec<ResidualBlock<T>>,
    gap: GlobalAvgPool,
}

pub fn build_base_model<T: Real>(cfg: &ModelConfig, n: usize, rng: &mut ChaCha8Rng) -> ClassifierResult<SubNetwork<T>> {
    cfg.validate()?;
    if !cfg.scales.contains(&n) {
        return Err(ClassifierError::Config(format!("input side {n} is not one of {:?}", cfg.scales)));
    }
    let k = pool_factor(cfg, n)?;
    let stem = Conv2d::new(cfg.input_channels, cfg.stem_width, 3, 2, rng).without_input_grad();
    let mut blocks = Vec::new();
    let mut cin = cfg.stem_width;
    for (si, &w) in cfg.stage_widths.iter().enumerate() {
        for b in 0..cfg.blocks_per_stage {
            let stride = if b == 0 && si > 0 { 2 } else { 1 };
            blocks.push(ResidualBlock::new(cin, w, stride, b == 0, rng));
            cin = w;
        }
    }
    Ok(SubNetwork {
        scale: n,
        stem,
        stem_bn: BatchNorm2d::new(cfg.stem_width),
        stem_relu: Relu::new(),
        pool: AvgPool2d::new(k),
        blocks,
        gap: GlobalAvgPool::new(),
    })
}

impl<T: Real> Module<T> for SubNetwork<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> NnResult<Tensor<T>> {
        let (_, _, h, w) = x.nchw()?;
        if h != self.scale || w != self.scale {
            return Err(NnError::Dim(format!("sub-network for {0}x{0} got {h}x{w}", self.scale)));
        }
        let mut a = self.stem.forward(x, mode)?;
        a = self.stem_bn.forward(&a, mode)?;
        a = self.stem_relu.forward(&a, mode)?;
        a = self.pool.forward(&a, mode)?;
        for b in &mut self.blocks {
            a = b.forward(&a, mode)?;
        }
        self.gap.forward(&a, mode)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> NnResult<Tensor<T>> {
        let mut g = self.gap.backward(grad)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        g = self.pool.backward(&g)?;
        g = self.stem_relu.backward(&g)?;
        g = self.stem_bn.backward(&g)?;
        self.stem.backward(&g)
    }

    fn slots<'a>(&'a mut self, prefix: &str, out: &mut SlotList<'a, T>) {
        self.stem.slots(&join(prefix, "stem"), out);
        self.stem_bn.slots(&join(prefix, "stem_bn"), out);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.slots(&join(prefix, &format!("block{i}")), out);
        }
    }
}

/// Sub-networks over each scale, concatenated features and a linear head
/// with one logit per class.
#[derive(Debug, Clone)]
pub struct MultiScaleModel<T> {
    config: ModelConfig,
    pub subnets: Vec<SubNetwork<T>>,
    pub head: Linear<T>,
    batch: usize,
}

impl<T: Real> MultiScaleModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> ClassifierResult<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let subnets =
            config.scales.iter().map(|&s| build_base_model(&config, s, &mut rng)).collect::<ClassifierResult<Vec<_>>>()?;
        let head = Linear::new(config.concat_width(), config.class_count, &mut rng);
        Ok(Self { config, subnets, head, batch: 0 })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Logits `N x K` for one input tensor per scale, coarse to fine.
    pub fn forward(&mut self, inputs: &[Tensor<T>], mode: Mode) -> NnResult<Tensor<T>> {
        if inputs.len() != self.subnets.len() {
            return Err(NnError::Dim(format!("{} scale inputs for {} sub-networks", inputs.len(), self.subnets.len())));
        }
        let n = inputs[0].dims()[0];
        let fw = self.config.feature_width();
        let cw = self.config.concat_width();
        let mut concat = Tensor::zeros(&[n, cw]);
        for (si, (net, x)) in self.subnets.iter_mut().zip(inputs).enumerate() {
            let (xn, c, _, _) = x.nchw()?;
            if xn != n || c != self.config.input_channels {
                return Err(NnError::Dim(format!("scale input {:?}, expected batch {n} and {} channels", x.dims(), self.config.input_channels)));
            }
            let f = net.forward(x, mode)?;
            for i in 0..n {
                concat.data_mut()[i * cw + si * fw..][..fw].copy_from_slice(f.row(i));
            }
        }
        self.batch = n;
        self.head.forward(&concat, mode)
    }

    /// Back-propagates logit gradients into every parameter.
    pub fn backward(&mut self, grad: &Tensor<T>) -> NnResult<()> {
        let g = self.head.backward(grad)?;
        let (n, fw, cw) = (self.batch, self.config.feature_width(), self.config.concat_width());
        for (si, net) in self.subnets.iter_mut().enumerate() {
            let mut part = Tensor::zeros(&[n, fw]);
            for i in 0..n {
                part.data_mut()[i * fw..][..fw].copy_from_slice(&g.data()[i * cw + si * fw..][..fw]);
            }
            net.backward(&part)?;
        }
        Ok(())
    }

    pub fn slots<'a>(&'a mut self, out: &mut SlotList<'a, T>) {
        for (i, net) in self.subnets.iter_mut().enumerate() {
            net.slots(&format!("scale{}", i), out);
        }
        self.head.slots("head", out);
    }

    pub fn zero_grad(&mut self) {
        for net in &mut self.subnets {
            net.zero_grad();
        }
        self.head.zero_grad();
    }

    pub fn param_count(&mut self) -> usize {
        self.subnets.iter_mut().map(|n| n.param_count()).sum::<usize>() + self.head.param_count()
    }

    /// Eval-mode class probabilities, one row per pyramid.
    pub fn predict_probs(&mut self, pyramids: &[&Pyramid]) -> ClassifierResult<Vec<Vec<f64>>> {
        if pyramids.is_empty() {
            return Ok(Vec::new());
        }
        let inputs = scale_inputs(&self.config, pyramids)?;
        let logits = self.forward(&inputs, Mode::Eval)?;
        let k = self.config.class_count;
        Ok(sigmoid(&logits.cast::<f64>()).data().chunks(k).map(<[f64]>::to_vec).collect())
    }
}

/// Per-scale input batches for the model, picking the pyramid level whose
/// side matches each configured scale.
pub fn scale_inputs<T: Real>(cfg: &ModelConfig, pyramids: &[&Pyramid]) -> ClassifierResult<Vec<Tensor<T>>> {
    cfg.scales
        .iter()
        .map(|&s| {
            let level = |p: &Pyramid| -> ClassifierResult<ChannelStack> {
                p.levels
                    .iter()
                    .find(|l| l.height() == s && l.width() == s)
                    .cloned()
                    .ok_or_else(|| ClassifierError::Nn(NnError::Dim(format!("pyramid has no {s}x{s} level"))))
            };
            let mut data = Vec::with_capacity(pyramids.len() * cfg.input_channels * s * s);
            for p in pyramids {
                let l = level(p)?;
                if l.channels() != cfg.input_channels {
                    return Err(ClassifierError::Nn(NnError::Dim(format!(
                        "pyramid has {} channels, model expects {}",
                        l.channels(),
                        cfg.input_channels
                    ))));
                }
                data.extend(l.data().iter().map(|&v| T::of(v as f64)));
            }
            Ok(Tensor::from_vec(&[pyramids.len(), cfg.input_channels, s, s], data)?)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    model: ModelConfig,
    registry: ClassRegistry,
}

/// Writes config, registry, parameters and running statistics.
pub fn save_checkpoint(model: &mut MultiScaleModel<f32>, registry: &ClassRegistry, w: impl Write) -> ClassifierResult<()> {
    if registry.len() != model.config.class_count {
        return Err(ClassifierError::Config(format!(
            "registry has {} classes, model {}",
            registry.len(),
            model.config.class_count
        )));
    }
    let config = serde_json::to_string(&CheckpointConfig { model: model.config.clone(), registry: registry.clone() })
        .map_err(|e| ClassifierError::Format(e.to_string()))?;
    let mut slots = Vec::new();
    model.slots(&mut slots);
    let blobs = export_blobs(slots);
    Container { magic: MODEL_MAGIC, version: FORMAT_VERSION, config, blobs }.write_to(w)?;
    Ok(())
}

pub fn load_checkpoint(r: impl Read) -> ClassifierResult<(MultiScaleModel<f32>, ClassRegistry)> {
    let c = Container::read_from(r, &MODEL_MAGIC, FORMAT_VERSION)?;
    let cfg: CheckpointConfig = serde_json::from_str(&c.config).map_err(|e| ClassifierError::Format(e.to_string()))?;
    if cfg.registry.len() != cfg.model.class_count {
        return Err(ClassifierError::Format("registry size differs from class count".into()));
    }
    let mut model = MultiScaleModel::new(cfg.model, 0)?;
    let mut slots = Vec::new();
    model.slots(&mut slots);
    import_blobs(slots, &c.blobs)?;
    Ok((model, cfg.registry))
}

pub fn save_checkpoint_file(model: &mut MultiScaleModel<f32>, registry: &ClassRegistry, path: impl AsRef<std::path::Path>) -> ClassifierResult<()> {
    let mut buf = Vec::new();
    save_checkpoint(model, registry, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint_file(path: impl AsRef<std::path::Path>) -> ClassifierResult<(MultiScaleModel<f32>, ClassRegistry)> {
    let bytes = std::fs::read(path)?;
    load_checkpoint(&bytes[..])
}

/// Finite-difference check of every parameter gradient of a model under
/// the loss `sum(r * logits)` in training mode.
pub fn check_model_gradients(
    model: &mut MultiScaleModel<f64>,
    inputs: &[Tensor<f64>],
    limit: usize,
    rng: &mut impl Rng,
) -> ClassifierResult<GradCheckReport> {
    model.zero_grad();
    let y = model.forward(inputs, Mode::Train)?;
    let r = Tensor::<f64>::uniform(y.dims(), 1.0, rng);
    model.backward(&r)?;
    let mut grads = Vec::new();
    {
        let mut slots = Vec::new();
        model.slots(&mut slots);
        for (name, slot) in slots {
            if let Slot::Param(p) = slot {
                grads.push((name, p.grad.clone()));
            }
        }
    }
    let mut coords: Vec<Coord<'_, MultiScaleModel<f64>>> = Vec::new();
    for (name, g) in grads {
        let n = g.len();
        let picks: Vec<usize> = if n <= limit { (0..n).collect() } else { (0..limit).map(|_| rng.random_range(0..n)).collect() };
        for i in picks {
            let target = name.clone();
            coords.push(Coord {
                label: format!("{name}[{i}]"),
                analytic: g[i],
                nudge: Box::new(move |m: &mut MultiScaleModel<f64>, d| {
                    let mut slots = Vec::new();
                    m.slots(&mut slots);
                    if let Some((_, Slot::Param(p))) = slots.into_iter().find(|(n, _)| *n == target) {
                        p.value.data_mut()[i] += d;
                    }
                }),
            });
        }
    }
    Ok(finite_difference(model, coords, 1e-4, |m| {
        let y = m.forward(inputs, Mode::Train)?;
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    })?)
}
