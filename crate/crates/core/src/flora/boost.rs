//! Gradient boosting over oblivious (symmetric) trees with logistic loss.
//!
//! Every level of a tree applies one `(feature, threshold)` test, so a tree
//! of depth d is a lookup table of 2^d leaves indexed by the test outcomes.
//! Features are pre-binned on quantile borders; a split at border `b`
//! sends `x > b` right.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::features::FeatureVector;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BoostError {
    #[error("training data holds a single class")]
    SingleClass,
    #[error("training data is empty")]
    Empty,
    #[error("row has {got} features, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("feature `{0}` is missing or not a number")]
    MissingFeature(String),
    #[error("unsupported model version {0}")]
    Version(u32),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostConfig {
    pub tree_count: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub l2_leaf_reg: f64,
    pub seed: u64,
    /// Row fraction each tree is fit on (ignored in ordered mode).
    pub subsample: f64,
    /// Upper bound on quantile borders per feature.
    pub border_count: usize,
    /// Ordered boosting: gradients for split search come from models that
    /// never saw the row.
    pub ordered: bool,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            tree_count: 200,
            max_depth: 6,
            learning_rate: 0.1,
            l2_leaf_reg: 3.0,
            seed: 0,
            subsample: 0.8,
            border_count: 64,
            ordered: false,
        }
    }
}

impl BoostConfig {
    fn validate(&self) -> Result<(), BoostError> {
        let bad = |m: &str| Err(BoostError::Config(m.to_string()));
        if self.max_depth == 0 || self.max_depth > 16 {
            return bad("max_depth must be in 1..=16");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2_leaf_reg >= 0.0) {
            return bad("l2_leaf_reg must be non-negative");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must be in (0, 1]");
        }
        if self.border_count == 0 || self.border_count > 254 {
            return bad("border_count must be in 1..=254");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub feature: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObliviousTree {
    pub levels: Vec<Level>,
    pub leaf_values: Vec<f64>,
}

impl ObliviousTree {
    pub fn leaf(&self, row: &[f64]) -> usize {
        self.levels
            .iter()
            .enumerate()
            .map(|(d, l)| usize::from(row[l.feature] > l.threshold) << d)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub features: Vec<String>,
    pub learning_rate: f64,
    pub tree_count: usize,
    pub max_depth: usize,
    pub l2_leaf_reg: f64,
    pub seed: u64,
    pub ordered: bool,
    pub trees: Vec<ObliviousTree>,
    /// Total split gain credited to each feature.
    pub importance: Vec<f64>,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Negative log-likelihood of label `y` under logit `z`.
pub fn logistic_loss(y: f64, z: f64) -> f64 {
    // log(1 + e^z) - y z, stable form
    let softplus = if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus - y * z
}

pub fn logistic_grad(y: f64, z: f64) -> f64 {
    sigmoid(z) - y
}

pub fn logistic_hess(z: f64) -> f64 {
    let p = sigmoid(z);
    (p * (1.0 - p)).max(1e-16)
}

impl TrainedModel {
    pub fn empty(features: Vec<String>, cfg: &BoostConfig) -> Self {
        Self {
            version: MODEL_VERSION,
            importance: vec![0.0; features.len()],
            features,
            learning_rate: cfg.learning_rate,
            tree_count: 0,
            max_depth: cfg.max_depth,
            l2_leaf_reg: cfg.l2_leaf_reg,
            seed: cfg.seed,
            ordered: cfg.ordered,
            trees: Vec::new(),
        }
    }

    pub fn raw(&self, row: &[f64]) -> f64 {
        self.learning_rate
            * self
                .trees
                .iter()
                .map(|t| t.leaf_values[t.leaf(row)])
                .sum::<f64>()
    }

    pub fn predict_row(&self, row: &[f64]) -> Result<f64, BoostError> {
        if row.len() != self.features.len() {
            return Err(BoostError::DimensionMismatch {
                expected: self.features.len(),
                got: row.len(),
            });
        }
        if let Some(i) = row.iter().position(|v| v.is_nan()) {
            return Err(BoostError::MissingFeature(self.features[i].clone()));
        }
        Ok(sigmoid(self.raw(row)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, Box<dyn std::error::Error + Send + Sync>> {
        let m: Self = serde_json::from_str(s)?;
        if m.version != MODEL_VERSION {
            return Err(Box::new(BoostError::Version(m.version)));
        }
        Ok(m)
    }
}

/// Probability of the attack class and the label at the 0.5 threshold.
pub fn predict_flow(model: &TrainedModel, v: &FeatureVector) -> Result<(f64, u8), BoostError> {
    let row = model
        .features
        .iter()
        .map(|name| {
            v.get(name)
                .filter(|x| !x.is_nan())
                .ok_or_else(|| BoostError::MissingFeature(name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let p = sigmoid(model.raw(&row));
    Ok((p, u8::from(p >= 0.5)))
}

fn quantile_borders(values: &mut Vec<f64>, max_borders: usize) -> Vec<f64> {
    values.sort_by(|a, b| a.total_cmp(b));
    values.dedup();
    if values.len() < 2 {
        return Vec::new();
    }
    if values.len() <= max_borders + 1 {
        return values.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let n = values.len();
    let mut borders: Vec<f64> = (1..=max_borders)
        .map(|i| {
            let q = (i * n) / (max_borders + 1);
            let q = q.clamp(1, n - 1);
            0.5 * (values[q - 1] + values[q])
        })
        .collect();
    borders.dedup();
    borders
}

struct Binned {
    borders: Vec<Vec<f64>>,
    /// column-major bin indices
    bins: Vec<Vec<u8>>,
}

fn bin_features(x: &[Vec<f64>], max_borders: usize) -> Binned {
    let nf = x.first().map_or(0, |r| r.len());
    let mut borders = Vec::with_capacity(nf);
    let mut bins = Vec::with_capacity(nf);
    for f in 0..nf {
        let mut col: Vec<f64> = x.iter().map(|r| r[f]).collect();
        let b = quantile_borders(&mut col, max_borders);
        bins.push(
            x.iter()
                .map(|r| b.partition_point(|t| *t < r[f]) as u8)
                .collect(),
        );
        borders.push(b);
    }
    Binned { borders, bins }
}

struct SplitChoice {
    feature: usize,
    border: usize,
    gain: f64,
}

/// Best oblivious split for the current leaf assignment.
fn best_split(
    binned: &Binned,
    rows: &[usize],
    leaf_of: &[usize],
    n_leaves: usize,
    g: &[f64],
    h: &[f64],
    lambda: f64,
) -> Option<SplitChoice> {
    let mut best: Option<SplitChoice> = None;
    for (f, borders) in binned.borders.iter().enumerate() {
        if borders.is_empty() {
            continue;
        }
        let nb = borders.len() + 1;
        let mut hist = vec![(0.0f64, 0.0f64); n_leaves * nb];
        let col = &binned.bins[f];
        for &r in rows {
            let cell = &mut hist[leaf_of[r] * nb + col[r] as usize];
            cell.0 += g[r];
            cell.1 += h[r];
        }
        let mut totals = vec![(0.0, 0.0); n_leaves];
        for l in 0..n_leaves {
            for b in 0..nb {
                let c = hist[l * nb + b];
                totals[l].0 += c.0;
                totals[l].1 += c.1;
            }
        }
        let parent: f64 = totals.iter().map(|(gs, hs)| gs * gs / (hs + lambda)).sum();
        let mut score = vec![0.0; nb - 1];
        for l in 0..n_leaves {
            let (mut gl, mut hl) = (0.0, 0.0);
            let (gt, ht) = totals[l];
            for (b, s) in score.iter_mut().enumerate() {
                let c = hist[l * nb + b];
                gl += c.0;
                hl += c.1;
                let (gr, hr) = (gt - gl, ht - hl);
                *s += gl * gl / (hl + lambda) + gr * gr / (hr + lambda);
            }
        }
        for (b, s) in score.into_iter().enumerate() {
            let gain = s - parent;
            if gain > 1e-12 && best.as_ref().is_none_or(|c| gain > c.gain) {
                best = Some(SplitChoice {
                    feature: f,
                    border: b,
                    gain,
                });
            }
        }
    }
    best
}

fn leaf_values(
    rows: &[usize],
    leaf_of: &[usize],
    n_leaves: usize,
    g: &[f64],
    h: &[f64],
    lambda: f64,
) -> Vec<f64> {
    let mut sums = vec![(0.0, 0.0); n_leaves];
    for &r in rows {
        sums[leaf_of[r]].0 += g[r];
        sums[leaf_of[r]].1 += h[r];
    }
    sums.iter()
        .map(|(gs, hs)| if *hs > 0.0 { -gs / (hs + lambda) } else { 0.0 })
        .collect()
}

/// Grows one tree structure on `rows` with gradients (g, h).
fn grow(
    binned: &Binned,
    rows: &[usize],
    g: &[f64],
    h: &[f64],
    cfg: &BoostConfig,
    importance: &mut [f64],
) -> (Vec<Level>, Vec<usize>) {
    let n = g.len();
    let mut leaf_of = vec![0usize; n];
    let mut levels = Vec::new();
    for d in 0..cfg.max_depth {
        let Some(s) = best_split(binned, rows, &leaf_of, 1 << d, g, h, cfg.l2_leaf_reg) else {
            break;
        };
        importance[s.feature] += s.gain;
        let col = &binned.bins[s.feature];
        for (r, l) in leaf_of.iter_mut().enumerate() {
            if col[r] as usize > s.border {
                *l |= 1 << d;
            }
        }
        levels.push(Level {
            feature: s.feature,
            threshold: binned.borders[s.feature][s.border],
        });
    }
    (levels, leaf_of)
}

pub fn train_classifier(data: &Dataset, cfg: &BoostConfig) -> Result<TrainedModel, BoostError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(BoostError::Empty);
    }
    let (neg, pos) = data.class_counts();
    if neg == 0 || pos == 0 {
        return Err(BoostError::SingleClass);
    }
    for row in &data.x {
        if row.len() != data.n_features() {
            return Err(BoostError::DimensionMismatch {
                expected: data.n_features(),
                got: row.len(),
            });
        }
        if let Some(i) = row.iter().position(|v| v.is_nan()) {
            return Err(BoostError::MissingFeature(data.feature_names[i].clone()));
        }
    }
    let n = data.len();
    let y: Vec<f64> = data.y.iter().map(|&l| f64::from(l)).collect();
    let binned = bin_features(&data.x, cfg.border_count);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = TrainedModel::empty(data.feature_names.clone(), cfg);
    let mut raw = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let all: Vec<usize> = (0..n).collect();

    // ordered mode state: a permutation and models fit on its prefixes
    let mut perm_pos = vec![0usize; n];
    let mut prefix_sizes = Vec::new();
    let mut prefix_raw: Vec<Vec<f64>> = Vec::new();
    if cfg.ordered {
        let mut perm = all.clone();
        perm.shuffle(&mut rng);
        for (p, &r) in perm.iter().enumerate() {
            perm_pos[r] = p;
        }
        let mut s = 1;
        while s < n {
            prefix_sizes.push(s);
            s *= 2;
        }
        prefix_raw = vec![vec![0.0; n]; prefix_sizes.len()];
    }

    for _ in 0..cfg.tree_count {
        let rows: Vec<usize> = if cfg.ordered || cfg.subsample >= 1.0 {
            all.clone()
        } else {
            all.iter()
                .copied()
                .filter(|_| rng.random_bool(cfg.subsample))
                .collect()
        };
        if cfg.ordered {
            for r in 0..n {
                let p = perm_pos[r];
                let z = if p == 0 {
                    0.0
                } else {
                    prefix_raw[p.ilog2() as usize][r]
                };
                g[r] = logistic_grad(y[r], z);
                h[r] = logistic_hess(z);
            }
        } else {
            for r in 0..n {
                g[r] = logistic_grad(y[r], raw[r]);
                h[r] = logistic_hess(raw[r]);
            }
        }
        let (levels, leaf_of) = grow(&binned, &rows, &g, &h, cfg, &mut model.importance);
        let n_leaves = 1 << levels.len();
        if cfg.ordered {
            for (j, &size) in prefix_sizes.iter().enumerate() {
                let prefix: Vec<usize> = (0..n).filter(|&r| perm_pos[r] < size).collect();
                let (gj, hj): (Vec<f64>, Vec<f64>) = (0..n)
                    .map(|r| {
                        let z = prefix_raw[j][r];
                        (logistic_grad(y[r], z), logistic_hess(z))
                    })
                    .unzip();
                let vals = leaf_values(&prefix, &leaf_of, n_leaves, &gj, &hj, cfg.l2_leaf_reg);
                for r in 0..n {
                    prefix_raw[j][r] += cfg.learning_rate * vals[leaf_of[r]];
                }
            }
            for r in 0..n {
                g[r] = logistic_grad(y[r], raw[r]);
                h[r] = logistic_hess(raw[r]);
            }
        }
        let vals = leaf_values(&rows, &leaf_of, n_leaves, &g, &h, cfg.l2_leaf_reg);
        for r in 0..n {
            raw[r] += cfg.learning_rate * vals[leaf_of[r]];
        }
        model.trees.push(ObliviousTree {
            levels,
            leaf_values: vals,
        });
    }
    model.tree_count = model.trees.len();
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::new(vec!["a".into(), "b".into()]);
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            // margin around the separating line a + b = 0
            if (a + b).abs() < 0.05 {
                continue;
            }
            d.x.push(vec![a, b]);
            d.y.push(u8::from(a + b > 0.0));
        }
        d
    }

    #[test]
    fn separable_toy_set_is_memorised() {
        let d = toy(230, 1);
        assert!(d.len() >= 200);
        let m = train_classifier(&d, &BoostConfig::default()).unwrap();
        for (row, &y) in d.x.iter().zip(&d.y) {
            let p = m.predict_row(row).unwrap();
            assert_eq!(u8::from(p >= 0.5), y);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let mut d = toy(50, 2);
        d.y.iter_mut().for_each(|y| *y = 0);
        assert_eq!(
            train_classifier(&d, &BoostConfig::default()).unwrap_err(),
            BoostError::SingleClass
        );
    }

    #[test]
    fn training_is_deterministic() {
        let d = toy(300, 3);
        let cfg = BoostConfig {
            tree_count: 30,
            ..Default::default()
        };
        let a = train_classifier(&d, &cfg).unwrap();
        let b = train_classifier(&d, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_trees_predict_half() {
        let d = toy(50, 4);
        let cfg = BoostConfig {
            tree_count: 0,
            ..Default::default()
        };
        let m = train_classifier(&d, &cfg).unwrap();
        assert_eq!(m.predict_row(&[0.3, -0.9]).unwrap(), 0.5);
    }

    #[test]
    fn ordered_mode_learns_toy_set() {
        let d = toy(300, 5);
        let cfg = BoostConfig {
            tree_count: 60,
            ordered: true,
            ..Default::default()
        };
        let m = train_classifier(&d, &cfg).unwrap();
        let correct =
            d.x.iter()
                .zip(&d.y)
                .filter(|(r, y)| u8::from(m.predict_row(r).unwrap() >= 0.5) == **y)
                .count();
        assert!(correct as f64 / d.len() as f64 > 0.97);
    }

    #[test]
    fn every_level_shares_one_test() {
        let d = toy(300, 6);
        let m = train_classifier(
            &d,
            &BoostConfig {
                tree_count: 5,
                ..Default::default()
            },
        )
        .unwrap();
        for t in &m.trees {
            assert_eq!(t.leaf_values.len(), 1 << t.levels.len());
        }
    }

    #[test]
    fn json_roundtrip() {
        let d = toy(100, 7);
        let m = train_classifier(
            &d,
            &BoostConfig {
                tree_count: 3,
                ..Default::default()
            },
        )
        .unwrap();
        let back = TrainedModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_feature_and_shape_errors() {
        let m = TrainedModel::empty(vec!["a".into()], &BoostConfig::default());
        assert!(matches!(
            m.predict_row(&[f64::NAN]),
            Err(BoostError::MissingFeature(_))
        ));
        assert!(matches!(
            m.predict_row(&[1.0, 2.0]),
            Err(BoostError::DimensionMismatch { .. })
        ));
        let v = super::super::features::FeatureVector {
            flow_id: String::new(),
            src_ip: std::net::Ipv4Addr::UNSPECIFIED,
            duration_s: 0.0,
            pkt_count: 0.0,
            byte_count: 0.0,
            mean_dur_src: 0.0,
            mean_pkt_src: 0.0,
            mean_byte_src: 0.0,
            cv_dur_src: 0.0,
            cv_pkt_src: 0.0,
            cv_byte_src: 0.0,
            paf_s: 0.0,
            crs_pct: 0.0,
            psi: false,
            label: None,
        };
        assert_eq!(
            predict_flow(&m, &v).unwrap_err(),
            BoostError::MissingFeature("a".into())
        );
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let z: f64 = rng.random_range(-8.0..8.0);
            let y = f64::from(u8::from(rng.random_bool(0.5)));
            let eps = 1e-5;
            let fd = (logistic_loss(y, z + eps) - logistic_loss(y, z - eps)) / (2.0 * eps);
            let an = logistic_grad(y, z);
            let rel = (fd - an).abs() / an.abs().max(1e-3);
            assert!(rel < 1e-5, "z={z} y={y} fd={fd} an={an}");
        }
    }
}
