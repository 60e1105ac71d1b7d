// SPDX-License-Identifier: Apache-2.0

//! Generatable / not-generatable confusion tallies and the metrics derived
//! from them. Ratios with a zero denominator are `None` (undefined).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::{top_k, ClassRegistry, Prediction, Verdict};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// Inferred generatable with the correct class.
    pub cgi: u64,
    /// Inferred generatable but wrong: another class, or the sample is NG.
    pub igi: u64,
    /// Inferred NG, sample NG.
    pub cni: u64,
    /// Inferred NG, sample generatable.
    pub ini: u64,
    /// The part of `igi` whose sample is NG.
    pub ng_as_generatable: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn new(cgi: u64, igi: u64, cni: u64, ini: u64) -> Self {
        Self { cgi, igi, cni, ini, ng_as_generatable: 0 }
    }

    pub fn total(&self) -> u64 {
        self.cgi + self.igi + self.cni + self.ini
    }

    pub fn add(&mut self, verdict: Verdict, label: usize, registry: &ClassRegistry, weight: u64) {
        let label_ng = registry.is_ng(label);
        match verdict {
            Verdict::Generatable { class } if class == label && !label_ng => self.cgi += weight,
            Verdict::Generatable { .. } => {
                self.igi += weight;
                if label_ng {
                    self.ng_as_generatable += weight;
                }
            }
            Verdict::NotGeneratable if label_ng => self.cni += weight,
            Verdict::NotGeneratable => self.ini += weight,
        }
    }

    pub fn merge(&self, o: &Self) -> Self {
        Self {
            cgi: self.cgi + o.cgi,
            igi: self.igi + o.igi,
            cni: self.cni + o.cni,
            ini: self.ini + o.ini,
            ng_as_generatable: self.ng_as_generatable + o.ng_as_generatable,
        }
    }

    pub fn scaled(&self, m: u64) -> Self {
        Self {
            cgi: self.cgi * m,
            igi: self.igi * m,
            cni: self.cni * m,
            ini: self.ini * m,
            ng_as_generatable: self.ng_as_generatable * m,
        }
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.cgi, self.cgi + self.igi)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.cgi, self.cgi + self.ini)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.cgi + self.cni, self.total())
    }

    pub fn f_half(&self) -> Option<f64> {
        f_half(self.precision()?, self.recall()?)
    }

    /// `CNI / (CNI + INI)`.
    pub fn ngir(&self) -> Option<f64> {
        ratio(self.cni, self.cni + self.ini)
    }

    /// Fraction of NG samples inferred NG: `CNI / (CNI + NG samples
    /// inferred generatable)`.
    pub fn ng_identification_rate(&self) -> Option<f64> {
        ratio(self.cni, self.cni + self.ng_as_generatable)
    }
}

/// F-0.5 score from precision and recall.
pub fn f_half(p: f64, r: f64) -> Option<f64> {
    let den = 0.25 * p + r;
    (den > 0.0).then(|| 1.25 * p * r / den)
}

pub fn tally(verdicts: &[Verdict], labels: &[usize], registry: &ClassRegistry) -> ConfusionCounts {
    assert_eq!(verdicts.len(), labels.len(), "one label per prediction");
    let mut c = ConfusionCounts::default();
    for (v, &l) in verdicts.iter().zip(labels) {
        c.add(*v, l, registry, 1);
    }
    c
}

/// Sum of per-design tallies, each multiplied by its instance count.
pub fn per_instance_weighting(per_design: &[ConfusionCounts], multiplicity: &[u64]) -> ConfusionCounts {
    assert_eq!(per_design.len(), multiplicity.len(), "one multiplicity per design");
    per_design.iter().zip(multiplicity).fold(ConfusionCounts::default(), |acc, (c, &m)| acc.merge(&c.scaled(m)))
}

/// Fraction of samples whose label is among the `k` highest scores.
pub fn topk_accuracy(predictions: &[Prediction], labels: &[usize], k: usize) -> Option<f64> {
    let hits = predictions.iter().zip(labels).filter(|(p, &l)| top_k(&p.probs, k).iter().any(|&(c, _)| c == l)).count();
    ratio(hits as u64, labels.len() as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub index: usize,
    pub id: String,
    pub support: u64,
    /// Samples of this class whose verdict names it (or NG for the NG row).
    pub correct: u64,
    /// Samples whose verdict names this class.
    pub predicted: u64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub f_half: Option<f64>,
    pub ngir: Option<f64>,
    pub ng_identification_rate: Option<f64>,
}

impl From<&ConfusionCounts> for Rates {
    fn from(c: &ConfusionCounts) -> Self {
        Self {
            precision: c.precision(),
            recall: c.recall(),
            accuracy: c.accuracy(),
            f_half: c.f_half(),
            ngir: c.ngir(),
            ng_identification_rate: c.ng_identification_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub counts: ConfusionCounts,
    pub rates: Rates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub counts: ConfusionCounts,
    pub rates: Rates,
    pub top_k_accuracy: BTreeMap<usize, Option<f64>>,
    pub per_class: Vec<ClassRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_instance: Option<InstanceSummary>,
}

/// Scores predictions against labels. With `instances` given, also reports
/// the tally weighted by each design's instance count.
pub fn evaluate_predictions(
    predictions: &[Prediction],
    labels: &[usize],
    instances: Option<&[u64]>,
    registry: &ClassRegistry,
    ks: &[usize],
) -> MetricsReport {
    let verdicts: Vec<Verdict> = predictions.iter().map(|p| p.verdict).collect();
    let counts = tally(&verdicts, labels, registry);
    let top_k_accuracy = ks.iter().map(|&k| (k, topk_accuracy(predictions, labels, k))).collect();
    let mut per_class: Vec<ClassRow> = registry
        .entries()
        .iter()
        .map(|e| ClassRow {
            index: e.index,
            id: e.id.clone(),
            support: 0,
            correct: 0,
            predicted: 0,
            recall: None,
            precision: None,
        })
        .collect();
    for (v, &l) in verdicts.iter().zip(labels) {
        let p = v.class_index(registry);
        per_class[l].support += 1;
        per_class[p].predicted += 1;
        if p == l {
            per_class[l].correct += 1;
        }
    }
    for row in &mut per_class {
        row.recall = ratio(row.correct, row.support);
        row.precision = ratio(row.correct, row.predicted);
    }
    let per_instance = instances.map(|m| {
        let per_design: Vec<ConfusionCounts> =
            verdicts.iter().zip(labels).map(|(v, &l)| tally(&[*v], &[l], registry)).collect();
        let counts = per_instance_weighting(&per_design, m);
        InstanceSummary { rates: Rates::from(&counts), counts }
    });
    MetricsReport { samples: labels.len(), rates: Rates::from(&counts), counts, top_k_accuracy, per_class, per_instance }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{:.1}%", 100.0 * x))
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = &self.counts;
        let _ = writeln!(s, "samples: {}", self.samples);
        let _ = writeln!(s, "CGI {}  IGI {}  CNI {}  INI {}", c.cgi, c.igi, c.cni, c.ini);
        write_rates(&mut s, &self.rates);
        for (k, v) in &self.top_k_accuracy {
            let _ = writeln!(s, "top-{k} accuracy: {}", pct(*v));
        }
        if let Some(pi) = &self.per_instance {
            let c = &pi.counts;
            let _ = writeln!(s, "\nper instance: CGI {}  IGI {}  CNI {}  INI {}", c.cgi, c.igi, c.cni, c.ini);
            write_rates(&mut s, &pi.rates);
        }
        let width = self.per_class.iter().map(|r| r.id.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "\n{:<width$}  {:>7}  {:>7}  {:>9}  {:>9}  {:>9}", "class", "support", "correct", "predicted", "recall", "precision");
        for r in self.per_class.iter().filter(|r| r.support > 0 || r.predicted > 0) {
            let _ = writeln!(
                s,
                "{:<width$}  {:>7}  {:>7}  {:>9}  {:>9}  {:>9}",
                r.id,
                r.support,
                r.correct,
                r.predicted,
                pct(r.recall),
                pct(r.precision)
            );
        }
        s
    }
}

fn write_rates(s: &mut String, r: &Rates) {
    let _ = writeln!(s, "precision: {}", pct(r.precision));
    let _ = writeln!(s, "recall: {}", pct(r.recall));
    let _ = writeln!(s, "accuracy: {}", pct(r.accuracy));
    let _ = writeln!(s, "F-0.5: {}", pct(r.f_half));
    let _ = writeln!(s, "NGIR: {}", pct(r.ngir));
    let _ = writeln!(s, "NG identification rate: {}", pct(r.ng_identification_rate));
}
