// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::{ClassRegistry, ClassifierError, ClassifierResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionPolicy {
    pub threshold: f64,
    pub top_k: usize,
}

impl Default for DecisionPolicy {
    fn default() -> Self {
        Self { threshold: 0.5, top_k: 3 }
    }
}

impl DecisionPolicy {
    pub fn new(threshold: f64, top_k: usize) -> ClassifierResult<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(ClassifierError::Config(format!("threshold must lie in (0, 1), got {threshold}")));
        }
        if top_k == 0 {
            return Err(ClassifierError::Config("top_k must be at least 1".into()));
        }
        Ok(Self { threshold, top_k })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Generatable { class: usize },
    NotGeneratable,
}

impl Verdict {
    /// Predicted class index, with NG mapped to the registry's NG entry.
    pub fn class_index(&self, registry: &ClassRegistry) -> usize {
        match *self {
            Verdict::Generatable { class } => class,
            Verdict::NotGeneratable => registry.ng_index(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub verdict: Verdict,
    pub top_k: Vec<(usize, f64)>,
}

impl Prediction {
    pub fn from_scores(scores: Vec<f64>, policy: &DecisionPolicy, registry: &ClassRegistry) -> Self {
        let verdict = decide(&scores, policy, registry);
        let top_k = top_k(&scores, policy.top_k.min(scores.len()));
        Self { probs: scores, verdict, top_k }
    }
}

/// Index of the largest score. Ties go to the NG index when it is among
/// them, else to the lowest index. NaN never wins.
pub fn argmax(scores: &[f64], ng_index: usize) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] || scores[best].is_nan() && !s.is_nan() {
            best = i;
        }
    }
    if scores.get(ng_index) == Some(&scores[best]) {
        return ng_index;
    }
    best
}

pub fn decide(probs: &[f64], policy: &DecisionPolicy, registry: &ClassRegistry) -> Verdict {
    let ng = registry.ng_index();
    if probs.is_empty() {
        return Verdict::NotGeneratable;
    }
    let c = argmax(probs, ng);
    if c == ng || !(probs[c] >= policy.threshold) {
        Verdict::NotGeneratable
    } else {
        Verdict::Generatable { class: c }
    }
}

/// The `k` highest scores, descending, ties to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.into_iter().take(k).map(|i| (i, scores[i])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> ClassRegistry {
        ClassRegistry::from_generators(&["a", "b", "c", "d"]).unwrap()
    }

    #[test]
    fn rule_examples() {
        let r = reg();
        let p = DecisionPolicy::default();
        assert_eq!(decide(&[0.8, 0.2, 0.1, 0.3, 0.9], &p, &r), Verdict::NotGeneratable);
        assert_eq!(decide(&[0.1, 0.2, 0.1, 0.95, 0.1], &p, &r), Verdict::Generatable { class: 3 });
        assert_eq!(decide(&[0.4, 0.2, 0.1, 0.3, 0.1], &p, &r), Verdict::NotGeneratable);
        assert_eq!(decide(&[0.5, 0.2, 0.1, 0.3, 0.1], &p, &r), Verdict::Generatable { class: 0 });
        assert_eq!(decide(&[0.7, 0.7, 0.1, 0.3, 0.7], &p, &r), Verdict::NotGeneratable);
        assert_eq!(decide(&[0.1, 0.7, 0.7, 0.3, 0.2], &p, &r), Verdict::Generatable { class: 1 });
    }

    #[test]
    fn ranking() {
        assert_eq!(top_k(&[0.25; 5], 3), vec![(0, 0.25), (1, 0.25), (2, 0.25)]);
        let s = [0.1, 0.9, 0.3, 0.9];
        assert_eq!(top_k(&s, 1)[0].0, argmax(&s, 9));
        assert_eq!(top_k(&s, 4).iter().map(|t| t.0).collect::<Vec<_>>(), vec![1, 3, 2, 0]);
    }

    #[test]
    fn policy_validation() {
        assert!(DecisionPolicy::new(0.0, 3).is_err());
        assert!(DecisionPolicy::new(1.0, 3).is_err());
        assert!(DecisionPolicy::new(0.5, 0).is_err());
        assert!(DecisionPolicy::new(0.3, 1).is_ok());
    }
}
