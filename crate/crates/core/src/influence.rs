//! Exact leave-one-out influence: retrain without example i and compare the
//! probability the model assigns to example j's label.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heldout::{mat_inputs, xrm_probe_design, ProbeConfig};
use crate::linmodel::{logits, softmax, LinearModel};
use crate::synthdata::{seeded_rng, Dataset, SeededRng};
use crate::training::{
    fit, mat_shifts, train_shifted, Design, Monitor, Objective, Optimizer, Solver, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Algorithm {
    Erm,
    /// The probe and calibration are recomputed on whatever data the handle
    /// is trained on, so a removed example cannot leak through p̄ʰᵒ.
    Mat { probe: ProbeConfig, tau: f64 },
    /// Per-example weights keyed by example id.
    Reweight { weights: BTreeMap<u64, f64> },
    /// Per-example binary margin shifts keyed by example id.
    Shift { deltas: BTreeMap<u64, f64> },
}

/// A deterministic training algorithm: same data in, bit-identical model out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmHandle {
    pub algorithm: Algorithm,
    /// `steps == 0` means "return the zero model", which ignores the data.
    pub config: TrainConfig,
    pub seed: u64,
}

impl AlgorithmHandle {
    pub fn erm(config: TrainConfig, seed: u64) -> Self {
        Self { algorithm: Algorithm::Erm, config, seed }
    }

    pub fn mat(probe: ProbeConfig, tau: f64, config: TrainConfig, seed: u64) -> Self {
        Self { algorithm: Algorithm::Mat { probe, tau }, config, seed }
    }

    pub fn train(&self, data: &Dataset) -> Result<LinearModel> {
        let idx: Vec<usize> = (0..data.len()).collect();
        self.train_subset(data, &self.design_for(data), &idx)
    }

    /// Precomputes the Gram matrix once when every retraining will use it.
    fn design_for(&self, data: &Dataset) -> Design {
        let x = data.design();
        let gram_used = self.config.optimizer == Optimizer::Gd
            && !self.config.fit_bias
            && match self.config.solver {
                Solver::Gram => true,
                Solver::Primal => false,
                Solver::Auto => x.cols > x.rows,
            };
        if gram_used && matches!(self.algorithm, Algorithm::Erm | Algorithm::Mat { .. } | Algorithm::Reweight { .. }) {
            Design::with_gram(x)
        } else {
            Design::new(x)
        }
    }

    fn train_subset(&self, data: &Dataset, design: &Design, idx: &[usize]) -> Result<LinearModel> {
        if idx.is_empty() {
            return Err(Error::Contract("cannot train on an empty dataset".into()));
        }
        let k = data.num_classes();
        if self.config.steps == 0 {
            return Ok(LinearModel::zeros(k, data.dim(), self.config.fit_bias));
        }
        let sub = design.subset(idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.examples[i].y).collect();
        let groups: Vec<usize> = idx.iter().map(|&i| data.examples[i].group).collect();
        let ids: Vec<u64> = idx.iter().map(|&i| data.examples[i].id).collect();
        let mut rng = seeded_rng(self.seed);
        let model = match &self.algorithm {
            Algorithm::Erm => {
                let obj = Objective::plain(&labels, k);
                fit(&sub, &obj, &groups, &self.config, &Monitor::default(), &mut rng)?.0
            }
            Algorithm::Mat { probe, tau } => {
                let probe = xrm_probe_design(&sub, &labels, &ids, k, probe, &mut rng)?;
                let (_, pbar) = mat_inputs(&probe, *tau)?;
                let shifts = mat_shifts(&pbar);
                let obj = Objective { labels: &labels, k, weights: None, shifts: Some(&shifts) };
                let mut rng = seeded_rng(self.seed);
                fit(&sub, &obj, &groups, &self.config, &Monitor::default(), &mut rng)?.0
            }
            Algorithm::Reweight { weights } => {
                let w = lookup(weights, &ids, "weight")?;
                let obj = Objective { labels: &labels, k, weights: Some(&w), shifts: None };
                fit(&sub, &obj, &groups, &self.config, &Monitor::default(), &mut rng)?.0
            }
            Algorithm::Shift { deltas } => {
                let d = lookup(deltas, &ids, "shift")?;
                train_shifted(&data.subset(idx), &d, &self.config)?.0
            }
        };
        Ok(model)
    }
}

fn lookup(map: &BTreeMap<u64, f64>, ids: &[u64], what: &str) -> Result<Vec<f64>> {
    ids.iter()
        .map(|id| map.get(id).copied().ok_or_else(|| Error::Contract(format!("no {what} for example id {id}"))))
        .collect()
}

fn label_prob(model: &LinearModel, x: &[f64], y: usize) -> Result<f64> {
    Ok(softmax(&logits(model, x)?)[y])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfluenceResult {
    /// `p_full − p_ablated`.
    pub value: f64,
    pub i: usize,
    pub j: usize,
    pub id_i: u64,
    pub id_j: u64,
    pub p_full: f64,
    pub p_ablated: f64,
}

fn check_index(index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::Index { index, len });
    }
    Ok(())
}

/// p̂_D(y_j | x_j) − p̂_{D∖i}(y_j | x_j) under the same handle.
pub fn influence(handle: &AlgorithmHandle, data: &Dataset, i: usize, j: usize) -> Result<InfluenceResult> {
    check_index(i, data.len())?;
    check_index(j, data.len())?;
    let design = handle.design_for(data);
    let all: Vec<usize> = (0..data.len()).collect();
    let full = handle.train_subset(data, &design, &all)?;
    influence_with(handle, data, &design, &full, i, j)
}

fn influence_with(
    handle: &AlgorithmHandle,
    data: &Dataset,
    design: &Design,
    full: &LinearModel,
    i: usize,
    j: usize,
) -> Result<InfluenceResult> {
    let keep: Vec<usize> = (0..data.len()).filter(|&r| r != i).collect();
    let ablated = handle.train_subset(data, design, &keep)?;
    let ej = &data.examples[j];
    let p_full = label_prob(full, &ej.x, ej.y)?;
    let p_ablated = label_prob(&ablated, &ej.x, ej.y)?;
    Ok(InfluenceResult { value: p_full - p_ablated, i, j, id_i: data.examples[i].id, id_j: ej.id, p_full, p_ablated })
}

pub fn self_influence(handle: &AlgorithmHandle, data: &Dataset, i: usize) -> Result<InfluenceResult> {
    influence(handle, data, i, i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfInfluenceScore {
    pub id: u64,
    pub group: usize,
    pub y: usize,
    pub a: Vec<u8>,
    pub value: f64,
    pub p_full: f64,
    pub p_ablated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceStats {
    pub count: usize,
    pub mean: f64,
    /// Fraction of scores per histogram bin; sums to 1 when count > 0.
    pub proportions: Vec<f64>,
}

impl InfluenceStats {
    fn from_scores(values: &[f64], edges: &[f64]) -> Self {
        let bins = edges.len() - 1;
        let mut counts = vec![0usize; bins];
        for &v in values {
            counts[bin_of(v, edges)] += 1;
        }
        let n = values.len();
        Self {
            count: n,
            mean: if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 },
            proportions: counts.iter().map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 }).collect(),
        }
    }
}

/// Bins are half-open [eᵢ, eᵢ₊₁) except the last; values outside the edges
/// go to the nearest end bin.
fn bin_of(v: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    edges[1..bins].iter().take_while(|&&e| v >= e).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInfluenceSummary {
    pub bin_edges: Vec<f64>,
    pub per_group: BTreeMap<usize, InfluenceStats>,
    pub majority: InfluenceStats,
    pub minority: InfluenceStats,
    pub overall: InfluenceStats,
}

impl GroupInfluenceSummary {
    pub fn from_scores(scores: &[SelfInfluenceScore], edges: &[f64]) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("bin edges must be strictly increasing with at least two entries".into()));
        }
        let mut by_group: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let (mut maj, mut min) = (Vec::new(), Vec::new());
        for s in scores {
            by_group.entry(s.group).or_default().push(s.value);
            if s.a.iter().all(|&a| a as usize == s.y) {
                maj.push(s.value);
            } else {
                min.push(s.value);
            }
        }
        let all: Vec<f64> = scores.iter().map(|s| s.value).collect();
        Ok(Self {
            bin_edges: edges.to_vec(),
            per_group: by_group.iter().map(|(&g, v)| (g, InfluenceStats::from_scores(v, edges))).collect(),
            majority: InfluenceStats::from_scores(&maj, edges),
            minority: InfluenceStats::from_scores(&min, edges),
            overall: InfluenceStats::from_scores(&all, edges),
        })
    }

    /// Minority mean minus majority mean.
    pub fn gap(&self) -> f64 {
        self.minority.mean - self.majority.mean
    }
}

/// Ten uniform bins on [−0.1, 1].
pub fn default_bin_edges() -> Vec<f64> {
    (0..=10).map(|i| -0.1 + 1.1 * i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfInfluenceReport {
    pub scores: Vec<SelfInfluenceScore>,
    pub summary: GroupInfluenceSummary,
}

impl SelfInfluenceReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["example_id", "group", "y", "a", "self_influence"])?;
        for s in &self.scores {
            let a: Vec<String> = s.a.iter().map(|v| v.to_string()).collect();
            w.write_record([s.id.to_string(), s.group.to_string(), s.y.to_string(), a.join(";"), format!("{:?}", s.value)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.summary)?)?;
        Ok(())
    }
}

/// Self-influence of every example (or `subsample` uniformly chosen ones),
/// with one full training and one ablated training per scored example.
pub fn self_influence_all(
    handle: &AlgorithmHandle,
    data: &Dataset,
    subsample: Option<usize>,
    edges: &[f64],
    rng: &mut SeededRng,
) -> Result<SelfInfluenceReport> {
    let n = data.len();
    let mut idx: Vec<usize> = match subsample {
        Some(m) if m < n => sample(rng, n, m).into_vec(),
        _ => (0..n).collect(),
    };
    idx.sort_unstable();
    let design = handle.design_for(data);
    let all: Vec<usize> = (0..n).collect();
    let full = handle.train_subset(data, &design, &all)?;
    let results: Vec<Result<InfluenceResult>> =
        idx.par_iter().map(|&i| influence_with(handle, data, &design, &full, i, i)).collect();
    let mut scores = Vec::with_capacity(idx.len());
    for r in results {
        let r = r?;
        let e = &data.examples[r.i];
        scores.push(SelfInfluenceScore {
            id: e.id,
            group: e.group,
            y: e.y,
            a: e.a.clone(),
            value: r.value,
            p_full: r.p_full,
            p_ablated: r.p_ablated,
        });
    }
    let summary = GroupInfluenceSummary::from_scores(&scores, edges)?;
    Ok(SelfInfluenceReport { scores, summary })
}
