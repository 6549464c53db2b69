//! Multi-run orchestration: the four-set dataset, the five train/test
//! splits, recon against a configured network, and artifact export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::{ConfigFileError, ExperimentConfig, ScenarioConfig};
use super::scenario::{run_scenario, sub_seed, RunOptions, ScenarioError, ScenarioResult};
use crate::flora::boost::{train_classifier, BoostConfig, BoostError, TrainedModel};
use crate::flora::dataset::{Dataset, DatasetError};
use crate::flora::metrics::{stratified_split, Confusion, Metrics};
use crate::flora::rfecv::RfecvResult;
use crate::netsim::Simulator;
use crate::recon::{run_recon, ReconError, ReconReport, TimeoutSearch};

/// Train/test proportions of the five evaluation splits.
pub const SPLITS: [(u32, u32); 5] = [(80, 20), (75, 25), (70, 30), (65, 35), (60, 40)];

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("dataset holds a single class")]
    SingleClass,
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// One labelled dataset assembled from the four background/attack sets.
#[derive(Debug, Clone)]
pub struct DatasetBuild {
    pub dataset: Dataset,
    /// (normal, attack) rows contributed by each set.
    pub per_set: Vec<(usize, usize)>,
    pub runs: Vec<ScenarioResult>,
}

/// Runs the four sets (detector off) in parallel and concatenates the
/// labelled rows in set order.
pub fn build_dataset(exp: &ExperimentConfig) -> Result<DatasetBuild, HarnessError> {
    let cfgs: Vec<ScenarioConfig> = (1..=4)
        .map(|set| {
            let mut c = exp.with_set(set);
            c.detector.enabled = false;
            c.seed = sub_seed(exp.seed, 100 + set as u64);
            c.resolve()
        })
        .collect::<Result<_, _>>()?;
    let opts = RunOptions {
        collect_dataset: true,
        model: None,
    };
    let results: Vec<Result<ScenarioResult, ScenarioError>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfgs
            .iter()
            .map(|c| s.spawn(|| run_scenario(c, &opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect()
    });
    let mut dataset: Option<Dataset> = None;
    let mut per_set = Vec::new();
    let mut runs = Vec::new();
    for r in results {
        let mut r = r?;
        let d = r.dataset.take().expect("collected");
        per_set.push(d.class_counts());
        match dataset.as_mut() {
            Some(all) => all.append(&d),
            None => dataset = Some(d),
        }
        runs.push(r);
    }
    Ok(DatasetBuild {
        dataset: dataset.expect("four sets"),
        per_set,
        runs,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitOutcome {
    pub train_pct: u32,
    pub test_pct: u32,
    pub train_rows: usize,
    pub test_rows: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct SplitEvaluation {
    pub splits: Vec<SplitOutcome>,
    /// Index of the split with the highest accuracy (earliest on ties).
    pub best: usize,
    pub rows: usize,
    pub normal_rows: usize,
    pub attack_rows: usize,
}

impl SplitEvaluation {
    pub fn best_metrics(&self) -> &Metrics {
        &self.splits[self.best].metrics
    }
}

fn predict_all(model: &TrainedModel, data: &Dataset, rows: &[usize]) -> Vec<u8> {
    rows.iter()
        .map(|&i| u8::from(model.raw(&data.x[i]) >= 0.0))
        .collect()
}

/// Median predictions per second over five timed passes.
pub fn classification_rate(model: &TrainedModel, data: &Dataset, rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut rates: Vec<f64> = (0..5)
        .map(|_| {
            let t0 = Instant::now();
            let p = predict_all(model, data, rows);
            std::hint::black_box(p);
            rows.len() as f64 / t0.elapsed().as_secs_f64().max(1e-9)
        })
        .collect();
    rates.sort_by(f64::total_cmp);
    rates[2]
}

pub fn evaluate_splits(
    data: &Dataset,
    cfg: &BoostConfig,
    split_seed: u64,
) -> Result<SplitEvaluation, HarnessError> {
    let (normal_rows, attack_rows) = data.class_counts();
    if normal_rows == 0 || attack_rows == 0 {
        return Err(HarnessError::SingleClass);
    }
    let mut splits = Vec::with_capacity(SPLITS.len());
    for (train_pct, test_pct) in SPLITS {
        let (train, test) = stratified_split(&data.y, f64::from(test_pct) / 100.0, split_seed);
        let model = train_classifier(&data.subset(&train), cfg)?;
        let pred = predict_all(&model, data, &test);
        let truth: Vec<u8> = test.iter().map(|&i| data.y[i]).collect();
        let rate = classification_rate(&model, data, &test);
        splits.push(SplitOutcome {
            train_pct,
            test_pct,
            train_rows: train.len(),
            test_rows: test.len(),
            metrics: Metrics::from_confusion(Confusion::from_labels(&truth, &pred), rate),
        });
    }
    let best = (0..splits.len())
        .rev()
        .max_by(|&a, &b| {
            splits[a]
                .metrics
                .accuracy
                .total_cmp(&splits[b].metrics.accuracy)
        })
        .expect("five splits");
    Ok(SplitEvaluation {
        splits,
        best,
        rows: data.len(),
        normal_rows,
        attack_rows,
    })
}

/// Timeout and match-field reconnaissance from the first attacker against the first
/// legitimate host on another access switch.
pub fn run_recon_scenario(
    cfg: &ScenarioConfig,
    repetitions: usize,
) -> Result<ReconReport, HarnessError> {
    use crate::netsim::HostRole;
    let mut sim =
        Simulator::new(cfg.topology.clone(), sub_seed(cfg.seed, 3)).map_err(ScenarioError::from)?;
    let attackers = sim.endpoints(Some(HostRole::Attacker));
    let legit = sim.endpoints(Some(HostRole::Legitimate));
    let src = attackers
        .first()
        .or(legit.first())
        .ok_or(ScenarioError::NoHosts("probing"))?;
    let dst = legit
        .iter()
        .find(|e| e.switch != src.switch)
        .or(legit.iter().find(|e| e.host != src.host))
        .ok_or(ScenarioError::NoHosts("target"))?;
    let (s, d) = (src.host, dst.host);
    Ok(run_recon(
        &mut sim,
        s,
        d,
        repetitions,
        &TimeoutSearch::default(),
    )?)
}

/// Everything an experiment may export; absent parts are skipped.
#[derive(Debug, Default)]
pub struct Artifacts<'a> {
    pub config: Option<&'a ExperimentConfig>,
    pub scenario: Option<&'a ScenarioResult>,
    pub dataset: Option<&'a Dataset>,
    pub evaluation: Option<&'a SplitEvaluation>,
    pub model: Option<&'a TrainedModel>,
    pub recon: Option<&'a ReconReport>,
    pub rfecv: Option<&'a RfecvResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: Option<serde_json::Value>,
    pub files: Vec<String>,
}

pub const MANIFEST_FILE_NAME: &str = "manifest.json";

fn write_file(
    dir: &Path,
    name: &str,
    bytes: &[u8],
    files: &mut Vec<String>,
) -> Result<(), HarnessError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| HarnessError::Io { path, source })?;
    files.push(name.to_string());
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serialisable");
    s.push('\n');
    s.into_bytes()
}

/// Writes the artifacts plus a manifest listing every file.
pub fn export_artifacts(a: &Artifacts<'_>, out: &Path) -> Result<Manifest, HarnessError> {
    std::fs::create_dir_all(out).map_err(|source| HarnessError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    if let Some(r) = a.scenario {
        let mut buf = Vec::new();
        r.write_occupancy_csv(&mut buf).expect("in-memory csv");
        write_file(out, "occupancy.csv", &buf, &mut files)?;
        write_file(out, "scenario.json", &to_json(r), &mut files)?;
    }
    if let Some(d) = a.dataset {
        let mut buf = Vec::new();
        d.write_csv(&mut buf)?;
        write_file(out, "dataset.csv", &buf, &mut files)?;
    }
    if let Some(e) = a.evaluation {
        write_file(out, "metrics.json", &to_json(e.best_metrics()), &mut files)?;
        write_file(out, "splits.json", &to_json(e), &mut files)?;
    }
    if let Some(m) = a.model {
        write_file(out, "model.json", m.to_json().as_bytes(), &mut files)?;
    }
    if let Some(r) = a.recon {
        write_file(out, "recon.json", &to_json(r), &mut files)?;
    }
    if let Some(r) = a.rfecv {
        write_file(out, "rfecv.json", &to_json(r), &mut files)?;
    }
    if let Some(c) = a.config {
        write_file(out, "config.toml", c.to_toml().as_bytes(), &mut files)?;
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: a.config.map(|c| c.seed),
        config: a
            .config
            .map(|c| serde_json::to_value(c).expect("serialisable")),
        files,
    };
    let mut ignored = Vec::new();
    write_file(out, MANIFEST_FILE_NAME, &to_json(&manifest), &mut ignored)?;
    Ok(manifest)
}
