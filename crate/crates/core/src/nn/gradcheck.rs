// SPDX-License-Identifier: Apache-2.0

//! Central finite-difference gradient checks.
//!
//! While a check runs, every ReLU folds its activation mask into a
//! thread-local fingerprint. A coordinate whose `+h` or `-h` evaluation
//! changes the fingerprint straddles a kink; its difference quotient is not
//! a derivative, so it is counted as skipped instead of compared.

use std::cell::Cell;

use rand::Rng;

use super::{Mode, Module, NnResult, Slot, Tensor};

thread_local! {
    static TRACE: Cell<Option<u64>> = const { Cell::new(None) };
}

pub(crate) fn trace_mask(mask: &[bool]) {
    TRACE.with(|t| {
        if let Some(mut h) = t.get() {
            for chunk in mask.chunks(64) {
                let bits = chunk.iter().enumerate().fold(0u64, |acc, (i, &b)| acc | (b as u64) << i);
                h = (h ^ bits).wrapping_mul(0x100_0000_01b3).rotate_left(7);
            }
            t.set(Some(h));
        }
    });
}

fn traced<R>(f: impl FnOnce() -> R) -> (R, u64) {
    TRACE.with(|t| t.set(Some(0xcbf2_9ce4_8422_2325)));
    let r = f();
    let fp = TRACE.with(|t| t.replace(None)).unwrap_or(0);
    (r, fp)
}

/// Relative error with a small floor on the denominator.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= tol && self.skipped_kinks * 20 <= self.checked
    }

    fn record(&mut self, label: String, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = rel_err(analytic, numeric);
        if e > self.max_rel_err {
            self.max_rel_err = e;
            self.worst = format!("{label}: analytic {analytic:e}, numeric {numeric:e}");
        }
    }
}

/// One coordinate to check: a label, the analytic derivative, and a
/// function that shifts the coordinate by `delta`.
pub struct Coord<'f, S> {
    pub label: String,
    pub analytic: f64,
    pub nudge: Box<dyn Fn(&mut S, f64) + 'f>,
}

/// Compares analytic derivatives with `(L(x+h) - L(x-h)) / 2h`.
pub fn finite_difference<S>(
    state: &mut S,
    coords: Vec<Coord<'_, S>>,
    h: f64,
    mut loss: impl FnMut(&mut S) -> NnResult<f64>,
) -> NnResult<GradCheckReport> {
    let (_, fp0) = traced(|| loss(state));
    let mut report = GradCheckReport::default();
    for c in coords {
        (c.nudge)(state, h);
        let (lp, fpp) = traced(|| loss(state));
        (c.nudge)(state, -2.0 * h);
        let (lm, fpm) = traced(|| loss(state));
        (c.nudge)(state, h);
        if fpp != fp0 || fpm != fp0 {
            report.skipped_kinks += 1;
            continue;
        }
        report.record(c.label, c.analytic, (lp? - lm?) / (2.0 * h));
    }
    Ok(report)
}

fn pick(n: usize, limit: usize, rng: &mut impl Rng) -> Vec<usize> {
    if n <= limit {
        return (0..n).collect();
    }
    let mut v: Vec<usize> = (0..limit).map(|_| rng.random_range(0..n)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Checks input and parameter gradients of a module under the loss
/// `sum(r * f(x))` for a fixed random `r`. At most `limit` coordinates per
/// tensor are sampled.
pub fn check_module(
    m: &mut dyn Module<f64>,
    x: &Tensor<f64>,
    mode: Mode,
    h: f64,
    limit: usize,
    rng: &mut impl Rng,
) -> NnResult<GradCheckReport> {
    m.zero_grad();
    let y = m.forward(x, mode)?;
    let r = Tensor::<f64>::uniform(y.dims(), 1.0, rng);
    let dx = m.backward(&r)?;

    let mut coords: Vec<Coord<'_, (&mut dyn Module<f64>, Tensor<f64>)>> = Vec::new();
    if !dx.is_empty() {
        for i in pick(x.len(), limit, rng) {
            coords.push(Coord {
                label: format!("input[{i}]"),
                analytic: dx.data()[i],
                nudge: Box::new(move |s, d| s.1.data_mut()[i] += d),
            });
        }
    }
    let mut grads = Vec::new();
    {
        let mut slots = Vec::new();
        m.slots("", &mut slots);
        for (name, slot) in slots {
            if let Slot::Param(p) = slot {
                grads.push((name, p.grad.clone()));
            }
        }
    }
    for (name, g) in grads {
        for i in pick(g.len(), limit, rng) {
            let n2 = name.clone();
            coords.push(Coord {
                label: format!("{name}[{i}]"),
                analytic: g[i],
                nudge: Box::new(move |s, d| {
                    let mut slots = Vec::new();
                    s.0.slots("", &mut slots);
                    for (n, slot) in slots {
                        if n == n2 {
                            if let Slot::Param(p) = slot {
                                p.value.data_mut()[i] += d;
                            }
                        }
                    }
                }),
            });
        }
    }
    let mut state = (m, x.clone());
    finite_difference(&mut state, coords, h, |s| {
        let y = s.0.forward(&s.1, mode)?;
        Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
    })
}
