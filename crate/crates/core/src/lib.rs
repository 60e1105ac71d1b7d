// SPDX-License-Identifier: Apache-2.0

pub mod layout;
pub mod raster;
pub mod classifier;
pub mod synth;
pub mod nn;
pub mod metrics;
pub mod svm;
pub mod examiner;
