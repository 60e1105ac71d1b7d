// SPDX-License-Identifier: Apache-2.0

use super::{Real, Slot, SlotList};

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0 }
    }

    /// One update of every parameter in `slots` from its accumulated
    /// gradient.
    pub fn step<T: Real>(&mut self, slots: SlotList<'_, T>) {
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        for (_, slot) in slots {
            let Slot::Param(p) = slot else { continue };
            let value = p.value.data_mut();
            for i in 0..value.len() {
                let g = p.grad[i];
                p.m[i] = b1 * p.m[i] + (T::one() - b1) * g;
                p.v[i] = b2 * p.v[i] + (T::one() - b2) * g * g;
                let mh = p.m[i] / c1;
                let vh = p.v[i] / c2;
                value[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
