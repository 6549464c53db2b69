//! Binary classification metrics and stratified splitting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_labels(truth: &[u8], predicted: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t, p) {
                (1, 1) => c.tp += 1,
                (0, 1) => c.fp += 1,
                (1, _) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub confusion: Confusion,
    pub classification_rate_per_s: f64,
}

impl Metrics {
    pub fn from_confusion(c: Confusion, classification_rate_per_s: f64) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            accuracy: ratio(c.tp + c.tn, c.total()),
            fpr: ratio(c.fp, c.fp + c.tn),
            fnr: ratio(c.fn_, c.fn_ + c.tp),
            f1,
            precision,
            recall,
            confusion: c,
            classification_rate_per_s,
        }
    }
}

/// Row indices grouped by label, each group shuffled with `seed`.
fn shuffled_by_class(labels: &[u8], seed: u64) -> [Vec<usize>; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        by[usize::from(l.min(1))].push(i);
    }
    for v in &mut by {
        v.shuffle(&mut rng);
    }
    by
}

/// Stratified (train, test) split holding out `test_fraction` of each class.
pub fn stratified_split(labels: &[u8], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let by = shuffled_by_class(labels, seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for class in by {
        let k = (class.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&class[..k]);
        train.extend_from_slice(&class[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Fold index of every row for stratified k-fold.
pub fn stratified_folds(labels: &[u8], k: usize, seed: u64) -> Vec<usize> {
    let mut fold = vec![0; labels.len()];
    let mut offset = 0;
    for class in shuffled_by_class(labels, seed) {
        for (i, r) in class.into_iter().enumerate() {
            fold[r] = (i + offset) % k;
        }
        // continue the round-robin so small classes do not all land in fold 0
        offset += 1;
    }
    fold
}
