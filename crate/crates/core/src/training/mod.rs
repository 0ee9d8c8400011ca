//! Training loops (ERM, MAT, reweighted, margin-shifted), group metrics,
//! early stopping, and the stationarity / max-margin oracles.

mod engine;
pub mod margin;
mod newton;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use engine::{Design, Objective};
pub use margin::{
    angle_deg, binary_to_model, max_margin_direction, train_binary, train_shifted, trajectory_points, MaxMargin,
    TrajectoryPoint,
};

use crate::error::{Error, Result};
use crate::heldout::{CalibratedProbs, HeldOutProbe};
use crate::linmodel::{predict, LinearModel};
use crate::matrix::{argmax, Mat};
use crate::synthdata::{seeded_rng, ClassificationConfig, Dataset, SeededRng};

/// Floor applied to calibrated probabilities before taking logs.
pub const LOG_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Batch {
    Full,
    Minibatch { size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Gd,
    NewtonCg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// lr / current data loss (normalized GD for separable logistic problems).
    InverseLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    /// Gram parameterization when bias-free and p > n.
    Auto,
    Primal,
    Gram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch: Batch,
    pub lambda: f64,
    pub patience: usize,
    pub eval_every: usize,
    pub tau: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub schedule: Schedule,
    pub solver: Solver,
    pub fit_bias: bool,
    /// Newton stopping threshold on the gradient norm.
    pub grad_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            steps: 3000,
            batch: Batch::Full,
            lambda: 0.0,
            patience: 10,
            eval_every: 50,
            tau: 0.01,
            seed: 0,
            optimizer: Optimizer::Gd,
            schedule: Schedule::Constant,
            solver: Solver::Auto,
            fit_bias: false,
            grad_tol: 1e-6,
            cg_max_iter: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.steps < 1 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.eval_every < 1 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub per_group: BTreeMap<usize, f64>,
    pub counts: BTreeMap<usize, usize>,
    /// Fraction of all examples classified correctly.
    pub average: f64,
    pub worst: f64,
}

impl GroupMetrics {
    pub fn from_correct(correct: &[bool], groups: &[usize]) -> Self {
        let mut hits: BTreeMap<usize, usize> = BTreeMap::new();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for (&c, &g) in correct.iter().zip(groups) {
            *counts.entry(g).or_insert(0) += 1;
            *hits.entry(g).or_insert(0) += usize::from(c);
        }
        let per_group: BTreeMap<usize, f64> =
            counts.iter().map(|(&g, &k)| (g, hits[&g] as f64 / k as f64)).collect();
        let total = correct.len().max(1) as f64;
        Self {
            average: correct.iter().filter(|&&c| c).count() as f64 / total,
            worst: per_group.values().copied().fold(1.0, f64::min),
            per_group,
            counts,
        }
    }

    pub fn best(&self) -> f64 {
        self.per_group.values().copied().fold(0.0, f64::max)
    }

    pub fn group(&self, g: usize) -> Option<f64> {
        self.per_group.get(&g).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: f64,
    pub train: GroupMetrics,
    /// Metrics on a monitored held-out set, when one is attached.
    pub eval: Option<GroupMetrics>,
    pub valid_worst: Option<f64>,
    pub w_norm: f64,
    /// Binary weight vector (class-1 row minus class-0 row) for 2-D runs.
    pub w2d: Option<[f64; 2]>,
    pub b2d: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub best_step: Option<usize>,
    pub stopped_early: bool,
    pub grad_norm: Option<f64>,
}

impl Trace {
    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// CSV with columns step, loss, acc_avg, acc_worst, acc_group_<id>…,
    /// then eval_* columns when a monitored set was attached, valid_worst when
    /// validating, w_norm, and w0, w1 (plus b) for 2-D runs.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let Some(first) = self.records.first() else {
            return "step,loss,acc_avg,acc_worst,w_norm\n".into();
        };
        let groups: Vec<usize> = first.train.per_group.keys().copied().collect();
        let eval_groups: Option<Vec<usize>> = first.eval.as_ref().map(|e| e.per_group.keys().copied().collect());
        let has_valid = first.valid_worst.is_some();
        let has_2d = first.w2d.is_some();
        let has_b = first.b2d.is_some();
        let mut h = vec!["step".to_string(), "loss".into(), "acc_avg".into(), "acc_worst".into()];
        h.extend(groups.iter().map(|g| format!("acc_group_{g}")));
        if let Some(eg) = &eval_groups {
            h.push("eval_acc_avg".into());
            h.push("eval_acc_worst".into());
            h.extend(eg.iter().map(|g| format!("eval_acc_group_{g}")));
        }
        if has_valid {
            h.push("valid_worst".into());
        }
        h.push("w_norm".into());
        if has_2d {
            h.push("w0".into());
            h.push("w1".into());
        }
        if has_b {
            h.push("b".into());
        }
        let mut out = h.join(",");
        out.push('\n');
        let num = |v: f64| format!("{v:?}");
        for r in &self.records {
            let mut row = vec![r.step.to_string(), num(r.loss), num(r.train.average), num(r.train.worst)];
            row.extend(groups.iter().map(|g| r.train.group(*g).map_or(String::new(), num)));
            if let Some(eg) = &eval_groups {
                let e = r.eval.as_ref();
                row.push(e.map_or(String::new(), |e| num(e.average)));
                row.push(e.map_or(String::new(), |e| num(e.worst)));
                row.extend(eg.iter().map(|g| e.and_then(|e| e.group(*g)).map_or(String::new(), num)));
            }
            if has_valid {
                row.push(r.valid_worst.map_or(String::new(), num));
            }
            row.push(num(r.w_norm));
            if has_2d {
                let w = r.w2d.unwrap_or([f64::NAN; 2]);
                row.push(num(w[0]));
                row.push(num(w[1]));
            }
            if has_b {
                row.push(r.b2d.map_or(String::new(), num));
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Validation data with the group labels used for worst-group selection
/// (true groups, or label × inferred-flag pseudo-groups).
#[derive(Debug, Clone)]
pub struct ValidationSet<'a> {
    pub data: &'a Dataset,
    pub groups: Vec<usize>,
}

impl<'a> ValidationSet<'a> {
    pub fn with_true_groups(data: &'a Dataset) -> Self {
        Self { data, groups: data.groups() }
    }

    pub fn with_flags(data: &'a Dataset, flags: &[bool]) -> Result<Self> {
        if flags.len() != data.len() {
            return Err(Error::Dimension { expected: data.len(), got: flags.len() });
        }
        Ok(Self { data, groups: pseudo_groups(&data.labels(), flags) })
    }
}

/// Optional sets evaluated during training.
#[derive(Debug, Clone, Default)]
pub struct Monitor<'a> {
    /// Recorded in the trace (e.g. the test split); never used for selection.
    pub eval: Option<&'a Dataset>,
    /// Drives early stopping and best-snapshot selection.
    pub valid: Option<ValidationSet<'a>>,
}

pub fn evaluate_groups(model: &LinearModel, data: &Dataset) -> Result<GroupMetrics> {
    evaluate_with_groups(model, data, &data.groups())
}

pub fn evaluate_with_groups(model: &LinearModel, data: &Dataset, groups: &[usize]) -> Result<GroupMetrics> {
    if data.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty dataset".into()));
    }
    if data.dim() != model.p {
        return Err(Error::Dimension { expected: model.p, got: data.dim() });
    }
    let correct: Vec<bool> = data.examples.iter().map(|e| predict(model, &e.x) == e.y).collect();
    Ok(GroupMetrics::from_correct(&correct, groups))
}

/// Shared entry point: builds the objective's backend and runs the chosen
/// optimizer.
pub fn fit(
    design: &Design,
    obj: &Objective,
    groups: &[usize],
    cfg: &TrainConfig,
    monitor: &Monitor,
    rng: &mut SeededRng,
) -> Result<(LinearModel, Trace)> {
    fit_inner(design, obj, groups, cfg, monitor, rng, false)
}

pub(crate) fn fit_inner(
    design: &Design,
    obj: &Objective,
    groups: &[usize],
    cfg: &TrainConfig,
    monitor: &Monitor,
    rng: &mut SeededRng,
    flip_labels: bool,
) -> Result<(LinearModel, Trace)> {
    cfg.validate()?;
    if obj.n() != design.x.rows {
        return Err(Error::Dimension { expected: design.x.rows, got: obj.n() });
    }
    match cfg.optimizer {
        Optimizer::Gd => {
            let mut backend = engine::make_backend(design, obj.k, cfg)?;
            engine::descend(backend.as_mut(), obj, groups, cfg, monitor, rng, flip_labels)
        }
        Optimizer::NewtonCg => {
            if flip_labels {
                return Err(Error::Config("label flipping needs the GD optimizer".into()));
            }
            newton::newton_cg(&design.x, obj, groups, cfg)
        }
    }
}

pub fn train_erm(data: &Dataset, cfg: &TrainConfig, rng: &mut SeededRng) -> Result<(LinearModel, Trace)> {
    train_erm_monitored(data, cfg, &Monitor::default(), rng)
}

pub fn train_erm_monitored(
    data: &Dataset,
    cfg: &TrainConfig,
    monitor: &Monitor,
    rng: &mut SeededRng,
) -> Result<(LinearModel, Trace)> {
    if data.is_empty() {
        return Err(Error::Contract("empty training set".into()));
    }
    let labels = data.labels();
    let obj = Objective::plain(&labels, data.num_classes());
    fit(&Design::new(data.design()), &obj, &data.groups(), cfg, monitor, rng)
}

/// Per-example logit shifts log max(p̄, 1e-12).
pub fn mat_shifts(pbar: &CalibratedProbs) -> Mat {
    let mut s = pbar.probs.clone();
    for v in s.data.iter_mut() {
        *v = v.max(LOG_PROB_FLOOR).ln();
    }
    s
}

fn check_pbar(pbar: &CalibratedProbs, n: usize, k: usize) -> Result<()> {
    if pbar.probs.rows != n || pbar.probs.cols != k {
        return Err(Error::Contract(format!(
            "calibrated probabilities are {}×{}, training data needs {n}×{k}",
            pbar.probs.rows, pbar.probs.cols
        )));
    }
    for i in 0..n {
        let s: f64 = pbar.probs.row(i).iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("calibrated row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// GD on the MAT loss: cross-entropy of softmax(f(x) + log p̄ʰᵒ(·|x)).
/// Returns the best validation snapshot when a validation set is given.
pub fn train_mat(
    train: &Dataset,
    valid: Option<ValidationSet>,
    pbar: &CalibratedProbs,
    cfg: &TrainConfig,
) -> Result<(LinearModel, Trace)> {
    let monitor = Monitor { eval: None, valid };
    train_mat_monitored(train, pbar, cfg, &monitor)
}

pub fn train_mat_monitored(
    train: &Dataset,
    pbar: &CalibratedProbs,
    cfg: &TrainConfig,
    monitor: &Monitor,
) -> Result<(LinearModel, Trace)> {
    let k = train.num_classes();
    check_pbar(pbar, train.len(), k)?;
    let labels = train.labels();
    let shifts = mat_shifts(pbar);
    let obj = Objective { labels: &labels, k, weights: None, shifts: Some(&shifts) };
    let mut rng = seeded_rng(cfg.seed);
    fit(&Design::new(train.design()), &obj, &train.groups(), cfg, monitor, &mut rng)
}

/// GD on (1/n) Σ wᵢ CE(softmax(f(xᵢ)), yᵢ).
pub fn train_reweighted(data: &Dataset, weights: &[f64], cfg: &TrainConfig) -> Result<(LinearModel, Trace)> {
    if weights.len() != data.len() {
        return Err(Error::Dimension { expected: data.len(), got: weights.len() });
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Contract("example weights must be positive".into()));
    }
    let labels = data.labels();
    let obj = Objective { labels: &labels, k: data.num_classes(), weights: Some(weights), shifts: None };
    let mut rng = seeded_rng(cfg.seed);
    fit(&Design::new(data.design()), &obj, &data.groups(), cfg, &Monitor::default(), &mut rng)
}

/// Flags examples whose held-out argmax disagrees with the label.
pub fn infer_annotations(probe: &HeldOutProbe, data: &Dataset) -> Result<Vec<bool>> {
    if probe.logits.rows != data.len() {
        return Err(Error::Dimension { expected: data.len(), got: probe.logits.rows });
    }
    Ok(data.examples.iter().enumerate().map(|(i, e)| argmax(probe.logits.row(i)) != e.y).collect())
}

/// Pseudo-group id label·2 + flag.
pub fn pseudo_groups(labels: &[usize], flags: &[bool]) -> Vec<usize> {
    labels.iter().zip(flags).map(|(&y, &f)| y * 2 + usize::from(f)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualWeights {
    pub alpha: Vec<f64>,
    /// ‖w₁ − Xᵀα‖ for the class-1 row w₁.
    pub residual: f64,
    pub relative_residual: f64,
    pub alpha_norm: f64,
    /// 1/(λ√n).
    pub bound: f64,
}

/// αᵢ = (πᵢ − π̂ᵢ)/(nλ) with πᵢ = 1{yᵢ = 1} and π̂ᵢ the class-1 probability.
pub fn dual_weights(model: &LinearModel, data: &Dataset, lambda: f64) -> Result<DualWeights> {
    if !(lambda > 0.0) {
        return Err(Error::Config("dual weights need lambda > 0".into()));
    }
    if model.k != 2 {
        return Err(Error::Contract("dual weights are defined for binary models".into()));
    }
    let n = data.len();
    let eta = n as f64 * lambda;
    let alpha: Vec<f64> = data
        .examples
        .iter()
        .map(|e| {
            let pi_hat = crate::linmodel::softmax(&crate::linmodel::logits_unchecked(model, &e.x))[1];
            (f64::from(u8::from(e.y == 1)) - pi_hat) / eta
        })
        .collect();
    let mut recon = vec![0.0; model.p];
    for (a, e) in alpha.iter().zip(&data.examples) {
        crate::matrix::axpy(*a, &e.x, &mut recon);
    }
    let w1 = model.row(1);
    let residual = w1.iter().zip(&recon).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let wn = crate::matrix::norm(w1);
    Ok(DualWeights {
        residual,
        relative_residual: if wn > 0.0 { residual / wn } else { residual },
        alpha_norm: crate::matrix::norm(&alpha),
        bound: 1.0 / (lambda * (n as f64).sqrt()),
        alpha,
    })
}

/// Largest eigenvalue of XᵀX/n by power iteration.
pub fn gram_top_eigenvalue(x: &Mat, iters: usize) -> f64 {
    let (n, p) = (x.rows, x.cols);
    if n == 0 || p == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (p as f64).sqrt(); p];
    let mut lam = 0.0;
    for _ in 0..iters {
        let xv: Vec<f64> = (0..n).map(|i| crate::matrix::dot(x.row(i), &v)).collect();
        let mut w = vec![0.0; p];
        for (i, s) in xv.iter().enumerate() {
            crate::matrix::axpy(*s / n as f64, x.row(i), &mut w);
        }
        let nw = crate::matrix::norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        lam = nw;
        v = w.into_iter().map(|e| e / nw).collect();
    }
    lam
}

/// Smoothness bound of the softmax objective: ½·λ_max(XᵀX/n) + λ.
pub fn lipschitz_bound(x: &Mat, lambda: f64) -> f64 {
    0.5 * gram_top_eigenvalue(x, 100) * 1.01 + lambda
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// d / ln n.
    pub dim_ratio: f64,
    /// γ / (σ_ε √(d/m)) with m = ρᵗʳ n.
    pub noise_ratio: f64,
    pub dim_ok: bool,
    pub noise_ok: bool,
}

impl ConditionReport {
    /// ρᵗʳ n, recomputed on demand.
    pub fn m(cfg: &ClassificationConfig, n: usize) -> f64 {
        cfg.rho_train * n as f64
    }
}

/// Ratio threshold standing in for "≫".
pub const CONDITION_RATIO: f64 = 10.0;

pub fn theorem_conditions(cfg: &ClassificationConfig, n: usize) -> ConditionReport {
    let dim_ratio = cfg.d as f64 / (n as f64).ln();
    let spread = cfg.sigma_eps * (cfg.d as f64 / ConditionReport::m(cfg, n)).sqrt();
    let noise_ratio = if spread == 0.0 { f64::INFINITY } else { cfg.gamma / spread };
    ConditionReport {
        dim_ratio,
        noise_ratio,
        dim_ok: dim_ratio >= CONDITION_RATIO,
        noise_ok: noise_ratio >= CONDITION_RATIO,
    }
}
