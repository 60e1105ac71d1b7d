// SPDX-License-Identifier: Apache-2.0

//! Class registry, decision rule and the multi-scale classifier.

mod decision;
mod model;
mod registry;
mod train;

pub use decision::{argmax, decide, top_k, DecisionPolicy, Prediction, Verdict};
pub use model::{
    build_base_model, load_checkpoint, load_checkpoint_file, save_checkpoint, save_checkpoint_file, scale_inputs,
    check_model_gradients, ModelConfig, MultiScaleModel, SubNetwork, MODEL_MAGIC,
};
pub use registry::{ClassEntry, ClassRegistry, RegistryError, NG_ID};
pub use train::{
    config_for, evaluate, load_samples, predict_samples, train, EpochStats, TrainConfig, TrainOutcome, TrainingSample,
};

use crate::nn::NnError;
use crate::raster::{Pyramid, RasterError};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type ClassifierResult<T> = Result<T, ClassifierError>;

/// Anything that scores pyramids into per-class predictions.
pub trait Classifier {
    /// Side of the full-resolution level the classifier consumes.
    fn input_size(&self) -> usize;
    fn input_channels(&self) -> usize;
    fn predict(&mut self, pyramids: &[&Pyramid], policy: &DecisionPolicy, registry: &ClassRegistry) -> ClassifierResult<Vec<Prediction>>;
}

impl<C: Classifier + ?Sized> Classifier for &mut C {
    fn input_size(&self) -> usize {
        (**self).input_size()
    }

    fn input_channels(&self) -> usize {
        (**self).input_channels()
    }

    fn predict(&mut self, pyramids: &[&Pyramid], policy: &DecisionPolicy, registry: &ClassRegistry) -> ClassifierResult<Vec<Prediction>> {
        (**self).predict(pyramids, policy, registry)
    }
}

impl<C: Classifier + ?Sized> Classifier for Box<C> {
    fn input_size(&self) -> usize {
        (**self).input_size()
    }

    fn input_channels(&self) -> usize {
        (**self).input_channels()
    }

    fn predict(&mut self, pyramids: &[&Pyramid], policy: &DecisionPolicy, registry: &ClassRegistry) -> ClassifierResult<Vec<Prediction>> {
        (**self).predict(pyramids, policy, registry)
    }
}

impl Classifier for MultiScaleModel<f32> {
    fn input_size(&self) -> usize {
        self.config().full_size()
    }

    fn input_channels(&self) -> usize {
        self.config().input_channels
    }

    fn predict(&mut self, pyramids: &[&Pyramid], policy: &DecisionPolicy, registry: &ClassRegistry) -> ClassifierResult<Vec<Prediction>> {
        Ok(self.predict_probs(pyramids)?.into_iter().map(|p| Prediction::from_scores(p, policy, registry)).collect())
    }
}
