use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flora_core::flora::{rfecv_select, train_classifier, RfecvResult};
use flora_core::harness::{
    build_dataset, evaluate_splits, export_artifacts, run_recon_scenario, run_scenario, Artifacts,
    HarnessError, RunOptions,
};
use flora_core::{Dataset, ExperimentConfig, TrainedModel};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "flora", version, about = "Flow-table overflow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and export its occupancy series.
    Simulate(Common),
    /// Infer the match fields and idle timeout of the configured network.
    Recon {
        #[command(flatten)]
        common: Common,
        /// Probes per field during match-field inference.
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
    },
    /// Run the four sets and write the labelled dataset.
    BuildDataset(Common),
    /// Train the classifier on a dataset CSV, or on a freshly built one.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score the five train/test splits.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Dataset, evaluation, final model, defended scenario and recon.
    Full {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "flora-out")]
    out: PathBuf,
    /// Full-length sets instead of the shortened desk profile.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let kind = match &e {
            HarnessError::Config(_) => "config",
            HarnessError::Scenario(_) => "scenario",
            HarnessError::Boost(_) => "classifier",
            HarnessError::Recon(_) => "recon",
            HarnessError::Dataset(_) => "dataset",
            HarnessError::SingleClass => "single_class",
            HarnessError::Io { .. } => "io",
        };
        Failure {
            kind,
            message: e.to_string(),
        }
    }
}

fn fail(kind: &'static str, e: impl std::fmt::Display) -> Failure {
    Failure {
        kind,
        message: e.to_string(),
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::from(HarnessError::from(e)))?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.paper_scale |= c.paper_scale;
    // fail fast on a bad file, before any subcommand does real work
    cfg.resolve()
        .map_err(|e| Failure::from(HarnessError::from(e)))?;
    Ok(cfg)
}

fn read_dataset(p: &Path) -> Result<Dataset, Failure> {
    let f =
        std::fs::File::open(p).map_err(|e| fail("io", format!("reading {}: {e}", p.display())))?;
    Dataset::read_csv(f).map_err(|e| fail("dataset", e))
}

fn dataset_for(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<(Dataset, bool), Failure> {
    match path {
        Some(p) => Ok((read_dataset(p)?, false)),
        None => Ok((build_dataset(cfg)?.dataset, true)),
    }
}

/// Final model on all rows, after feature selection when configured.
fn fit(
    cfg: &ExperimentConfig,
    data: &Dataset,
) -> Result<(TrainedModel, Option<RfecvResult>), Failure> {
    let boost = cfg.classifier.boost();
    let (data, sel) = if cfg.classifier.rfecv {
        let c = &cfg.classifier;
        let r = rfecv_select(data, &boost, c.rfecv_folds, c.rfecv_step, c.split_seed)
            .map_err(|e| fail("rfecv", e))?;
        let cols: Vec<usize> = r
            .selected
            .iter()
            .filter_map(|n| data.feature_names.iter().position(|f| f == n))
            .collect();
        (data.select_columns(&cols), Some(r))
    } else {
        (data.clone(), None)
    };
    let model = train_classifier(&data, &boost).map_err(|e| fail("classifier", e))?;
    Ok((model, sel))
}

fn dataset_summary(d: &Dataset) -> Value {
    let (normal, attack) = d.class_counts();
    json!({"rows": d.len(), "normal_rows": normal, "attack_rows": attack})
}

fn run(cli: Cli) -> Result<Value, Failure> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = load_config(&c)?;
            let sc = cfg.resolve().map_err(HarnessError::from)?;
            let r = run_scenario(&sc, &RunOptions::default()).map_err(HarnessError::from)?;
            let m = export_artifacts(
                &Artifacts {
                    config: Some(&cfg),
                    scenario: Some(&r),
                    ..Default::default()
                },
                &c.out,
            )?;
            Ok(json!({
                "total_overflows": r.total_overflows,
                "first_full_s": r.first_full_s,
                "mean_utilization": r.mean_utilization,
                "first_detection_s": r.first_detection_s,
                "blocked_sources": r.blocked_sources.len(),
                "files": m.files,
            }))
        }
        Command::Recon {
            common,
            repetitions,
        } => {
            let cfg = load_config(&common)?;
            let sc = cfg.resolve().map_err(HarnessError::from)?;
            let rep = run_recon_scenario(&sc, repetitions)?;
            let m = export_artifacts(
                &Artifacts {
                    config: Some(&cfg),
                    recon: Some(&rep),
                    ..Default::default()
                },
                &common.out,
            )?;
            Ok(json!({"recon": rep, "files": m.files}))
        }
        Command::BuildDataset(c) => {
            let cfg = load_config(&c)?;
            let b = build_dataset(&cfg)?;
            let m = export_artifacts(
                &Artifacts {
                    config: Some(&cfg),
                    dataset: Some(&b.dataset),
                    ..Default::default()
                },
                &c.out,
            )?;
            let mut s = dataset_summary(&b.dataset);
            s["per_set"] = json!(b.per_set);
            s["files"] = json!(m.files);
            Ok(s)
        }
        Command::Train { common, dataset } => {
            let cfg = load_config(&common)?;
            let (data, built) = dataset_for(&cfg, dataset.as_deref())?;
            let (model, sel) = fit(&cfg, &data)?;
            let m = export_artifacts(
                &Artifacts {
                    config: Some(&cfg),
                    dataset: built.then_some(&data),
                    model: Some(&model),
                    rfecv: sel.as_ref(),
                    ..Default::default()
                },
                &common.out,
            )?;
            let mut s = dataset_summary(&data);
            s["features"] = json!(model.features);
            s["files"] = json!(m.files);
            Ok(s)
        }
        Command::Evaluate { common, dataset } => {
            let cfg = load_config(&common)?;
            let (data, built) = dataset_for(&cfg, dataset.as_deref())?;
            let e = evaluate_splits(&data, &cfg.classifier.boost(), cfg.classifier.split_seed)?;
            let m = export_artifacts(
                &Artifacts {
                    config: Some(&cfg),
                    dataset: built.then_some(&data),
                    evaluation: Some(&e),
                    ..Default::default()
                },
                &common.out,
            )?;
            let best = &e.splits[e.best];
            Ok(json!({
                "rows": e.rows,
                "best_split": [best.train_pct, best.test_pct],
                "metrics": best.metrics,
                "files": m.files,
            }))
        }
        Command::Full {
            common,
            repetitions,
        } => {
            let cfg = load_config(&common)?;
            let b = build_dataset(&cfg)?;
            let e = evaluate_splits(
                &b.dataset,
                &cfg.classifier.boost(),
                cfg.classifier.split_seed,
            )?;
            let (model, sel) = fit(&cfg, &b.dataset)?;
            let mut defended = cfg.clone();
            defended.detector.enabled = true;
            let sc = defended.resolve().map_err(HarnessError::from)?;
            let opts = RunOptions {
                collect_dataset: false,
                model: Some(model.clone()),
            };
            let r = run_scenario(&sc, &opts).map_err(HarnessError::from)?;
            let rep = run_recon_scenario(&sc, repetitions)?;
            let m = export_artifacts(
                &Artifacts {
                    config: Some(&defended),
                    scenario: Some(&r),
                    dataset: Some(&b.dataset),
                    evaluation: Some(&e),
                    model: Some(&model),
                    recon: Some(&rep),
                    rfecv: sel.as_ref(),
                },
                &common.out,
            )?;
            let best = &e.splits[e.best];
            Ok(json!({
                "dataset": dataset_summary(&b.dataset),
                "best_split": [best.train_pct, best.test_pct],
                "metrics": best.metrics,
                "total_overflows": r.total_overflows,
                "mean_utilization": r.mean_utilization,
                "max_attack_share": r.first_detection_s.map(|t| r.max_attack_share_from(t)),
                "recon": rep,
                "files": m.files,
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", json!({"error": "usage", "message": msg.trim()}));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("json");
            // a closed pipe downstream is not a failure of the run
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{}", json!({"error": f.kind, "message": f.message}));
            ExitCode::FAILURE
        }
    }
}
