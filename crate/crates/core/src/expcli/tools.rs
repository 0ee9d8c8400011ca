//! Single-step commands: write datasets, train one model, score influence.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::presets::{majority_minority, run_mat_pipeline, with_auto_lr};
use super::OutputDir;
use crate::error::Result;
use crate::heldout::ProbeConfig;
use crate::influence::{default_bin_edges, self_influence_all, AlgorithmHandle};
use crate::synthdata::{gen_classification, seeded_rng, write_binary, write_csv, ClassificationConfig, Split};
use crate::training::{evaluate_groups, train_erm_monitored, Monitor, TrainConfig, ValidationSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    Binary,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Erm,
    Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub seed: u64,
    pub data: ClassificationConfig,
    pub n_valid: usize,
    pub n_test: usize,
    pub format: DataFormat,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { seed: 0, data: ClassificationConfig::default(), n_valid: 400, n_test: 10_000, format: DataFormat::Csv }
    }
}

/// Writes train/valid/test splits drawn in that order from one stream.
pub fn run_generate(cfg: &GenerateConfig, out: &mut OutputDir) -> Result<Value> {
    let data = ClassificationConfig { seed: cfg.seed, ..cfg.data.clone() };
    data.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let mut counts = serde_json::Map::new();
    for (split, n) in [(Split::Train, data.n), (Split::Valid, cfg.n_valid), (Split::Test, cfg.n_test)] {
        let ds = gen_classification(&ClassificationConfig { n, ..data.clone() }, split, &mut rng)?;
        let name = split.as_str();
        if matches!(cfg.format, DataFormat::Csv | DataFormat::Both) {
            out.write_with(&format!("{name}.csv"), |p| write_csv(&ds, p))?;
        }
        if matches!(cfg.format, DataFormat::Binary | DataFormat::Both) {
            out.write_with(&format!("{name}.bin"), |p| write_binary(&ds, p))?;
        }
        counts.insert(name.to_string(), json!(ds.group_counts()));
    }
    let summary = json!({ "group_counts": counts });
    out.write_json("summary.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCommandConfig {
    pub seed: u64,
    pub data: ClassificationConfig,
    pub n_valid: usize,
    pub n_test: usize,
    pub algorithm: AlgorithmName,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub auto_lr: bool,
    /// Select the snapshot with the best validation worst-group accuracy.
    pub early_stopping: bool,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: ClassificationConfig::default(),
            n_valid: 400,
            n_test: 10_000,
            algorithm: AlgorithmName::Erm,
            train: TrainConfig { lambda: 0.01, ..TrainConfig::default() },
            probe: ProbeConfig::default(),
            auto_lr: true,
            early_stopping: false,
        }
    }
}

pub fn run_train(cfg: &TrainCommandConfig, out: &mut OutputDir) -> Result<Value> {
    let data = ClassificationConfig { seed: cfg.seed, ..cfg.data.clone() };
    data.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let train = gen_classification(&data, Split::Train, &mut rng)?;
    let valid = gen_classification(&ClassificationConfig { n: cfg.n_valid, ..data.clone() }, Split::Valid, &mut rng)?;
    let test = gen_classification(&ClassificationConfig { n: cfg.n_test, ..data.clone() }, Split::Test, &mut rng)?;
    let x = train.design();
    let tcfg = TrainConfig { seed: cfg.seed, ..with_auto_lr(&cfg.train, &x, cfg.auto_lr) };
    let monitor =
        Monitor { eval: Some(&test), valid: cfg.early_stopping.then(|| ValidationSet::with_true_groups(&valid)) };
    let (model, trace) = match cfg.algorithm {
        AlgorithmName::Erm => train_erm_monitored(&train, &tcfg, &monitor, &mut seeded_rng(cfg.seed))?,
        AlgorithmName::Mat => {
            let probe = ProbeConfig {
                twin: TrainConfig { seed: cfg.seed, ..with_auto_lr(&cfg.probe.twin, &x, cfg.auto_lr) },
                ..cfg.probe.clone()
            };
            let run = run_mat_pipeline(&train, &probe, &tcfg, &monitor, cfg.seed)?;
            out.write_with("probe.csv", |p| run.probe.write_csv(p))?;
            out.write_json("calibration.json", &run.calibration)?;
            (run.model, run.trace)
        }
    };
    out.write_bytes("model.json", model.to_json().as_bytes())?;
    out.write_bytes("trace.csv", trace.to_csv().as_bytes())?;
    let na = data.num_spurious;
    let mut summary = serde_json::Map::new();
    for (name, ds) in [("train", &train), ("valid", &valid), ("test", &test)] {
        let m = evaluate_groups(&model, ds)?;
        let (maj, min) = majority_minority(&m, na);
        summary.insert(name.into(), json!({ "metrics": m, "majority": maj, "minority": min }));
    }
    summary.insert("best_step".into(), json!(trace.best_step));
    let summary = Value::Object(summary);
    out.write_json("metrics.json", &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InfluenceCommandConfig {
    pub seed: u64,
    pub data: ClassificationConfig,
    pub algorithm: AlgorithmName,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub auto_lr: bool,
    pub subsample: Option<usize>,
    pub bin_edges: Vec<f64>,
}

impl Default for InfluenceCommandConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: ClassificationConfig { n: 200, ..ClassificationConfig::default() },
            algorithm: AlgorithmName::Erm,
            train: TrainConfig { lambda: 0.01, steps: 2000, ..TrainConfig::default() },
            probe: ProbeConfig::default(),
            auto_lr: true,
            subsample: None,
            bin_edges: default_bin_edges(),
        }
    }
}

pub fn run_influence(cfg: &InfluenceCommandConfig, out: &mut OutputDir) -> Result<Value> {
    let data = ClassificationConfig { seed: cfg.seed, ..cfg.data.clone() };
    data.validate()?;
    let train = gen_classification(&data, Split::Train, &mut seeded_rng(cfg.seed))?;
    let x = train.design();
    let tcfg = TrainConfig { seed: cfg.seed, ..with_auto_lr(&cfg.train, &x, cfg.auto_lr) };
    let handle = match cfg.algorithm {
        AlgorithmName::Erm => AlgorithmHandle::erm(tcfg, cfg.seed),
        AlgorithmName::Mat => {
            let probe = ProbeConfig {
                twin: TrainConfig { seed: cfg.seed, ..with_auto_lr(&cfg.probe.twin, &x, cfg.auto_lr) },
                ..cfg.probe.clone()
            };
            let tau = tcfg.tau;
            AlgorithmHandle::mat(probe, tau, tcfg, cfg.seed)
        }
    };
    let report = self_influence_all(&handle, &train, cfg.subsample, &cfg.bin_edges, &mut seeded_rng(cfg.seed))?;
    out.write_with("scores.csv", |p| report.write_csv(p))?;
    out.write_json("summary.json", &report.summary)?;
    Ok(serde_json::to_value(&report.summary)?)
}
