//! Recursive feature elimination with stratified cross-validation.

use serde::{Deserialize, Serialize};

use super::boost::{train_classifier, BoostConfig, BoostError};
use super::dataset::Dataset;
use super::metrics::stratified_folds;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RfecvError {
    #[error("dataset holds a single class")]
    SingleClass,
    #[error("{folds} folds need at least {need} rows per class, smallest class has {have}")]
    TooFewSamples {
        folds: usize,
        need: usize,
        have: usize,
    },
    #[error("need at least 2 folds and a positive step")]
    Config,
    #[error("dataset has no features")]
    NoFeatures,
    #[error(transparent)]
    Boost(#[from] BoostError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfecvResult {
    pub selected: Vec<String>,
    /// 1 for selected features; eliminated ones count up in reverse removal order.
    pub ranking: Vec<(String, usize)>,
    /// Share of total split gain per feature (percent) with all features in.
    pub importance: Vec<(String, f64)>,
    /// Mean CV accuracy of each evaluated subset, largest subset first.
    pub scores: Vec<(Vec<String>, f64)>,
}

fn cv_accuracy(
    data: &Dataset,
    folds: &[usize],
    k: usize,
    cfg: &BoostConfig,
) -> Result<f64, BoostError> {
    let mut acc = 0.0;
    for f in 0..k {
        let train: Vec<usize> = (0..data.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..data.len()).filter(|&i| folds[i] == f).collect();
        let model = train_classifier(&data.subset(&train), cfg)?;
        let correct = test
            .iter()
            .filter(|&&i| u8::from(model.raw(&data.x[i]) >= 0.0) == data.y[i])
            .count();
        acc += correct as f64 / test.len() as f64;
    }
    Ok(acc / k as f64)
}

pub fn rfecv_select(
    data: &Dataset,
    cfg: &BoostConfig,
    folds: usize,
    step: usize,
    seed: u64,
) -> Result<RfecvResult, RfecvError> {
    if folds < 2 || step == 0 {
        return Err(RfecvError::Config);
    }
    if data.n_features() == 0 {
        return Err(RfecvError::NoFeatures);
    }
    let (neg, pos) = data.class_counts();
    if neg == 0 || pos == 0 {
        return Err(RfecvError::SingleClass);
    }
    let need = 2 * folds;
    if neg.min(pos) < need {
        return Err(RfecvError::TooFewSamples {
            folds,
            need,
            have: neg.min(pos),
        });
    }
    let fold_of = stratified_folds(&data.y, folds, seed);
    let names = &data.feature_names;
    let mut current: Vec<usize> = (0..data.n_features()).collect();
    let mut removed: Vec<usize> = Vec::new();
    let mut history: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut importance = Vec::new();
    loop {
        let sub = data.select_columns(&current);
        let score = cv_accuracy(&sub, &fold_of, folds, cfg)?;
        history.push((current.clone(), score));
        if current.len() == 1 {
            break;
        }
        let model = train_classifier(&sub, cfg)?;
        if importance.is_empty() {
            let total: f64 = model.importance.iter().sum::<f64>().max(f64::MIN_POSITIVE);
            importance = current
                .iter()
                .zip(&model.importance)
                .map(|(&c, imp)| (names[c].clone(), 100.0 * imp / total))
                .collect();
        }
        // lowest importance first; among equals the later column goes first
        let mut order: Vec<usize> = (0..current.len()).collect();
        order.sort_by(|&a, &b| {
            model.importance[a]
                .total_cmp(&model.importance[b])
                .then(b.cmp(&a))
        });
        let drop_n = step.min(current.len() - 1);
        let mut drop: Vec<usize> = order[..drop_n].to_vec();
        for &d in &drop {
            removed.push(current[d]);
        }
        drop.sort_unstable_by(|a, b| b.cmp(a));
        for d in drop {
            current.remove(d);
        }
    }
    let best = history.iter().map(|(_, s)| *s).fold(f64::MIN, f64::max);
    let (chosen, _) = history
        .iter()
        .rev()
        .find(|(_, s)| *s >= best - 1e-12)
        .expect("non-empty history");
    let mut ranking: Vec<(String, usize)> = chosen.iter().map(|&c| (names[c].clone(), 1)).collect();
    let mut rank = 2;
    for &c in removed.iter().rev() {
        if !chosen.contains(&c) {
            ranking.push((names[c].clone(), rank));
            rank += 1;
        }
    }
    Ok(RfecvResult {
        selected: chosen.iter().map(|&c| names[c].clone()).collect(),
        ranking,
        importance,
        scores: history
            .into_iter()
            .map(|(cols, s)| (cols.iter().map(|&c| names[c].clone()).collect(), s))
            .collect(),
    })
}
