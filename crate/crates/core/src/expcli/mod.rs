//! Experiment presets, layered JSON configuration, hashed output manifests
//! and the acceptance runner behind the `spurlab` binary.

pub mod accept;
pub mod presets;
pub mod tools;

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use crate::regression::RegressionFit;

/// Every runnable command that writes results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Fig1Toy,
    Fig3Regression,
    Fig4Margin,
    Fig6Multispurious,
    Fig2Influence,
    Thm1Verify,
    Generate,
    Train,
    Influence,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::Fig1Toy,
        Preset::Fig3Regression,
        Preset::Fig4Margin,
        Preset::Fig6Multispurious,
        Preset::Fig2Influence,
        Preset::Thm1Verify,
        Preset::Generate,
        Preset::Train,
        Preset::Influence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1Toy => "fig1_toy",
            Preset::Fig3Regression => "fig3_regression",
            Preset::Fig4Margin => "fig4_margin",
            Preset::Fig6Multispurious => "fig6_multispurious",
            Preset::Fig2Influence => "fig2_influence",
            Preset::Thm1Verify => "thm1_verify",
            Preset::Generate => "generate",
            Preset::Train => "train",
            Preset::Influence => "influence",
        }
    }

    /// Accepts the full name or its short prefix (`fig1`, `thm1`, ...).
    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s || p.name().split('_').next() == Some(s))
            .ok_or_else(|| Error::Config(format!("unknown preset '{s}'")))
    }

    /// The preset's built-in configuration as JSON.
    pub fn defaults(self) -> Value {
        let v = match self {
            Preset::Fig1Toy => serde_json::to_value(presets::Fig1Config::default()),
            Preset::Fig3Regression => serde_json::to_value(presets::Fig3Config::default()),
            Preset::Fig4Margin => serde_json::to_value(presets::Fig4Config::default()),
            Preset::Fig6Multispurious => serde_json::to_value(presets::Fig6Config::default()),
            Preset::Fig2Influence => serde_json::to_value(presets::Fig2Config::default()),
            Preset::Thm1Verify => serde_json::to_value(presets::Thm1Config::default()),
            Preset::Generate => serde_json::to_value(tools::GenerateConfig::default()),
            Preset::Train => serde_json::to_value(tools::TrainCommandConfig::default()),
            Preset::Influence => serde_json::to_value(tools::InfluenceCommandConfig::default()),
        };
        v.expect("preset defaults serialize")
    }
}

/// One requested run: preset, layered overrides, destination.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub preset: Preset,
    pub config_file: Option<PathBuf>,
    /// `key=value` pairs; dotted keys address nested fields.
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn new(preset: Preset, out_dir: impl Into<PathBuf>) -> Self {
        Self { preset, config_file: None, overrides: Vec::new(), seed: None, out_dir: out_dir.into() }
    }

    /// Defaults < config file < `--set` overrides < `--seed`.
    pub fn resolved_config(&self) -> Result<Value> {
        let mut cfg = self.preset.defaults();
        if let Some(path) = &self.config_file {
            let file: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            merge(&mut cfg, &file, "")?;
        }
        for kv in &self.overrides {
            let (key, raw) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{kv}' is not of the form key=value")))?;
            set_path(&mut cfg, key.trim(), parse_value(raw.trim()))?;
        }
        if let Some(seed) = self.seed {
            set_path(&mut cfg, "seed", Value::from(seed))?;
        }
        Ok(cfg)
    }
}

/// Numbers, booleans, null, arrays and objects parse as JSON; anything else
/// is taken as a string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn merge(base: &mut Value, patch: &Value, prefix: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                let slot = b.get_mut(k).ok_or_else(|| Error::Config(format!("unknown config key '{path}'")))?;
                if slot.is_object() && v.is_object() && !is_tagged(slot) {
                    merge(slot, v, &path)?;
                } else {
                    *slot = v.clone();
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

/// Internally tagged enums are replaced wholesale rather than merged.
fn is_tagged(v: &Value) -> bool {
    v.get("kind").is_some()
}

fn set_path(cfg: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = cfg;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let obj: &mut Map<String, Value> =
            cur.as_object_mut().ok_or_else(|| Error::Config(format!("config key '{key}' goes below a scalar")))?;
        let slot = obj.get_mut(*part).ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        if depth + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        if slot.is_null() {
            return Err(Error::Config(format!("config key '{key}' goes below an unset option")));
        }
        cur = slot;
    }
    unreachable!("split always yields one part")
}

/// Deserializes a resolved config, turning type errors into config errors.
pub fn typed<T: DeserializeOwned>(cfg: &Value) -> Result<T> {
    serde_json::from_value(cfg.clone()).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: String,
    pub config: Value,
    pub files: Vec<ManifestEntry>,
}

/// Output directory that records a content hash for every file it writes.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<ManifestEntry>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.path(name), bytes)?;
        self.record(name, bytes);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write_bytes(name, s.as_bytes())
    }

    /// Lets an existing file writer produce `name`, then hashes the result.
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let p = self.path(name);
        f(&p)?;
        let bytes = std::fs::read(&p)?;
        self.record(name, &bytes);
        Ok(())
    }

    fn record(&mut self, name: &str, bytes: &[u8]) {
        self.files.retain(|e| e.path != name);
        self.files.push(ManifestEntry {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
    }

    pub fn finish(mut self, preset: Preset, config: Value) -> Result<Manifest> {
        self.files.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = Manifest { preset: preset.name().into(), config, files: self.files.clone() };
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        std::fs::write(self.root.join("manifest.json"), s)?;
        Ok(manifest)
    }
}

/// Resolves the configuration, runs the preset and writes its manifest.
/// Returns the manifest and the run's summary.
type Writer = Box<dyn FnOnce(&mut OutputDir) -> Result<Value>>;

pub fn run(spec: &ExperimentSpec) -> Result<(Manifest, Value)> {
    let cfg = spec.resolved_config()?;
    // Reject bad keys and types before touching the output directory.
    let summary_fn: Writer = match spec.preset {
        Preset::Fig1Toy => {
            let c: presets::Fig1Config = typed(&cfg)?;
            Box::new(move |out| presets::run_fig1(&c)?.write(out))
        }
        Preset::Fig3Regression => {
            let c: presets::Fig3Config = typed(&cfg)?;
            Box::new(move |out| presets::run_fig3(&c)?.write(out))
        }
        Preset::Fig4Margin => {
            let c: presets::Fig4Config = typed(&cfg)?;
            Box::new(move |out| presets::run_fig4(&c)?.write(out))
        }
        Preset::Fig6Multispurious => {
            let c: presets::Fig6Config = typed(&cfg)?;
            Box::new(move |out| presets::run_fig6(&c)?.write(out))
        }
        Preset::Fig2Influence => {
            let c: presets::Fig2Config = typed(&cfg)?;
            Box::new(move |out| presets::run_fig2(&c)?.write(out))
        }
        Preset::Thm1Verify => {
            let c: presets::Thm1Config = typed(&cfg)?;
            Box::new(move |out| presets::run_thm1(&c)?.write(out))
        }
        Preset::Generate => {
            let c: tools::GenerateConfig = typed(&cfg)?;
            Box::new(move |out| tools::run_generate(&c, out))
        }
        Preset::Train => {
            let c: tools::TrainCommandConfig = typed(&cfg)?;
            Box::new(move |out| tools::run_train(&c, out))
        }
        Preset::Influence => {
            let c: tools::InfluenceCommandConfig = typed(&cfg)?;
            Box::new(move |out| tools::run_influence(&c, out))
        }
    };
    let mut out = OutputDir::create(&spec.out_dir)?;
    let summary = summary_fn(&mut out)?;
    let manifest = out.finish(spec.preset, cfg)?;
    Ok((manifest, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_and_aliases() {
        for p in Preset::ALL {
            assert_eq!(Preset::from_name(p.name()).unwrap(), p);
        }
        assert_eq!(Preset::from_name("fig1").unwrap(), Preset::Fig1Toy);
        assert_eq!(Preset::from_name("thm1").unwrap(), Preset::Thm1Verify);
        assert!(Preset::from_name("fig5").is_err());
    }

    #[test]
    fn every_default_round_trips() {
        for p in Preset::ALL {
            let spec = ExperimentSpec::new(p, "unused");
            let cfg = spec.resolved_config().unwrap();
            assert_eq!(cfg, p.defaults());
        }
    }

    #[test]
    fn overrides_layer_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"data": {"gamma": 7.0, "n": 50}, "mat": {"tau": 0.5}}"#).unwrap();
        let mut spec = ExperimentSpec::new(Preset::Fig1Toy, dir.path());
        spec.config_file = Some(file);
        spec.overrides = vec!["data.n=60".into(), "mat.lambda=0.1".into()];
        spec.seed = Some(9);
        let c: presets::Fig1Config = typed(&spec.resolved_config().unwrap()).unwrap();
        assert_eq!(c.data.gamma, 7.0);
        assert_eq!(c.data.n, 60);
        assert_eq!(c.mat.tau, 0.5);
        assert_eq!(c.mat.lambda, 0.1);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut spec = ExperimentSpec::new(Preset::Fig1Toy, "unused");
        spec.overrides = vec!["data.gama=3".into()];
        assert!(matches!(spec.resolved_config(), Err(Error::Config(_))));
        spec.overrides = vec!["nonsense".into()];
        assert!(spec.resolved_config().is_err());
        spec.overrides = vec!["data.n.x=3".into()];
        assert!(spec.resolved_config().is_err());

        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.json");
        std::fs::write(&file, r#"{"data": {"gamma": 7.0, "bogus": 1}}"#).unwrap();
        let mut spec = ExperimentSpec::new(Preset::Fig1Toy, dir.path());
        spec.config_file = Some(file);
        assert!(spec.resolved_config().is_err());
    }

    #[test]
    fn wrong_types_fail_before_running() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("never");
        let mut spec = ExperimentSpec::new(Preset::Fig1Toy, &out);
        spec.overrides = vec!["data.n=lots".into()];
        assert!(matches!(run(&spec), Err(Error::Config(_))));
        assert!(!out.exists());
    }

    #[test]
    fn output_dir_hashes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write_bytes("b.txt", b"abc").unwrap();
        out.write_json("a.json", &serde_json::json!({"x": 1})).unwrap();
        let m = out.finish(Preset::Generate, Value::Null).unwrap();
        assert_eq!(m.files[0].path, "a.json");
        assert_eq!(m.files[1].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(dir.path().join("manifest.json").exists());
    }
}
