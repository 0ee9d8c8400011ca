//! The six experiment presets. Each `run_*` computes in memory and returns a
//! result whose `write` emits plot-ready CSVs plus a JSON summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::OutputDir;
use crate::error::{Error, Result};
use crate::heldout::{mat_inputs, xrm_probe, CalibrationMatrix, HeldOutProbe, ProbeConfig};
use crate::influence::{default_bin_edges, self_influence_all, AlgorithmHandle, SelfInfluenceReport};
use crate::linmodel::{predict, LinearModel};
use crate::matrix::Mat;
use crate::regression::{fit_min_norm, summarize, RegressionFit, RegressionSummary};
use crate::synthdata::{
    decode_group, gen_classification, gen_gaussian_2d_with, gen_regression, seeded_rng, ClassificationConfig,
    Dataset, Gaussian2dConfig, RegressionConfig, Split,
};
use crate::training::{
    angle_deg, dual_weights, evaluate_groups, lipschitz_bound, max_margin_direction, theorem_conditions,
    train_binary, train_erm, train_erm_monitored, train_mat_monitored, trajectory_points, ConditionReport,
    GroupMetrics, MaxMargin, Monitor, Optimizer, Schedule, Solver, TrainConfig, Trace, TrajectoryPoint,
};

// ---------------------------------------------------------------------------
// Shared pieces

/// `cfg` with lr = 1/L for the design `x` when `auto` is set.
pub fn with_auto_lr(cfg: &TrainConfig, x: &Mat, auto: bool) -> TrainConfig {
    let mut c = cfg.clone();
    if auto {
        c.lr = 1.0 / lipschitz_bound(x, c.lambda);
    }
    c
}

/// Count-weighted accuracy over majority groups (every attribute equals the
/// label) and over the rest.
pub fn majority_minority(m: &GroupMetrics, num_attr: usize) -> (f64, f64) {
    let (mut hit, mut tot) = ([0.0; 2], [0.0; 2]);
    for (&g, &acc) in &m.per_group {
        let (y, a) = decode_group(g, num_attr);
        let slot = usize::from(!a.iter().all(|&v| v as usize == y));
        let c = m.counts[&g] as f64;
        hit[slot] += acc * c;
        tot[slot] += c;
    }
    let f = |s: usize| if tot[s] > 0.0 { hit[s] / tot[s] } else { f64::NAN };
    (f(0), f(1))
}

/// Fraction of examples whose prediction equals the first attribute.
pub fn attribute_agreement(model: &LinearModel, data: &Dataset) -> f64 {
    let hits = data.examples.iter().filter(|e| predict(model, &e.x) == e.a[0] as usize).count();
    hits as f64 / data.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub train: GroupMetrics,
    pub test: GroupMetrics,
    pub train_majority: f64,
    pub train_minority: f64,
    pub test_majority: f64,
    pub test_minority: f64,
    pub test_attribute_agreement: f64,
    pub final_loss: f64,
    pub steps_run: usize,
}

fn regime_summary(model: &LinearModel, trace: &Trace, train: &Dataset, test: &Dataset, num_attr: usize) -> Result<RegimeSummary> {
    let tr = evaluate_groups(model, train)?;
    let te = evaluate_groups(model, test)?;
    let (train_majority, train_minority) = majority_minority(&tr, num_attr);
    let (test_majority, test_minority) = majority_minority(&te, num_attr);
    let last = trace.last().ok_or_else(|| Error::Contract("empty trace".into()))?;
    Ok(RegimeSummary {
        train: tr,
        test: te,
        train_majority,
        train_minority,
        test_majority,
        test_minority,
        test_attribute_agreement: attribute_agreement(model, test),
        final_loss: last.loss,
        steps_run: last.step,
    })
}

/// Columns: step, loss, train_{avg,worst,majority,minority}, then the same
/// four for the monitored test split.
pub fn curves_csv(trace: &Trace, num_attr: usize) -> String {
    let mut out = String::from(
        "step,loss,train_avg,train_worst,train_majority,train_minority,test_avg,test_worst,test_majority,test_minority\n",
    );
    for r in &trace.records {
        let (tmaj, tmin) = majority_minority(&r.train, num_attr);
        let _ = write!(out, "{},{:?},{:?},{:?},{:?},{:?}", r.step, r.loss, r.train.average, r.train.worst, tmaj, tmin);
        match &r.eval {
            Some(e) => {
                let (emaj, emin) = majority_minority(e, num_attr);
                let _ = writeln!(out, ",{:?},{:?},{:?},{:?}", e.average, e.worst, emaj, emin);
            }
            None => out.push_str(",,,,\n"),
        }
    }
    out
}

/// Held-out probe, calibration and the MAT model trained on its shifts.
#[derive(Debug, Clone)]
pub struct MatRun {
    pub model: LinearModel,
    pub trace: Trace,
    pub probe: HeldOutProbe,
    pub calibration: CalibrationMatrix,
}

pub fn run_mat_pipeline(
    train: &Dataset,
    probe_cfg: &ProbeConfig,
    mat_cfg: &TrainConfig,
    monitor: &Monitor,
    seed: u64,
) -> Result<MatRun> {
    let probe = xrm_probe(train, probe_cfg, &mut seeded_rng(seed ^ 0x9e37_79b9))?;
    let (calibration, pbar) = mat_inputs(&probe, mat_cfg.tau)?;
    let (model, trace) = train_mat_monitored(train, &pbar, mat_cfg, monitor)?;
    Ok(MatRun { model, trace, probe, calibration })
}

/// Probe and MAT configs with the auto step size applied.
fn mat_configs(probe: &ProbeConfig, mat: &TrainConfig, x: &Mat, auto: bool, seed: u64) -> (ProbeConfig, TrainConfig) {
    let p = ProbeConfig { twin: TrainConfig { seed, ..with_auto_lr(&probe.twin, x, auto) }, ..probe.clone() };
    (p, TrainConfig { seed, ..with_auto_lr(mat, x, auto) })
}

fn gd(lambda: f64, steps: usize) -> TrainConfig {
    TrainConfig { lambda, steps, eval_every: 50, ..TrainConfig::default() }
}

/// Training split followed by a test split of `n_test` from one stream.
fn train_test(data: &ClassificationConfig, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = seeded_rng(seed);
    let train = gen_classification(data, Split::Train, &mut rng)?;
    let test = gen_classification(&ClassificationConfig { n: n_test, ..data.clone() }, Split::Test, &mut rng)?;
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Fig. 1: ERM without / with example-specific features, and MAT.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig1Config {
    pub seed: u64,
    /// Noisy configuration; the clean run uses the same draws with σ_ε = 0.
    pub data: ClassificationConfig,
    pub n_test: usize,
    pub erm: TrainConfig,
    pub mat: TrainConfig,
    pub probe: ProbeConfig,
    /// Overrides each lr with 1/L for its design.
    pub auto_lr: bool,
}

impl Default for Fig1Config {
    fn default() -> Self {
        Self {
            seed: 0,
            data: ClassificationConfig::default(),
            n_test: 10_000,
            erm: gd(0.01, 3000),
            mat: TrainConfig { tau: 0.01, ..gd(0.3, 3000) },
            probe: ProbeConfig { twin: gd(0.01, 3000), label_flip: false },
            auto_lr: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fig1Result {
    pub traces: Vec<(String, Trace)>,
    pub summary: BTreeMap<String, RegimeSummary>,
    pub calibration: CalibrationMatrix,
    pub num_attr: usize,
}

pub fn run_fig1(cfg: &Fig1Config) -> Result<Fig1Result> {
    let data = ClassificationConfig { seed: cfg.seed, ..cfg.data.clone() };
    data.validate()?;
    let clean_cfg = ClassificationConfig { sigma_eps: 0.0, ..data.clone() };
    let (noisy, noisy_test) = train_test(&data, cfg.n_test, cfg.seed)?;
    let (clean, clean_test) = train_test(&clean_cfg, cfg.n_test, cfg.seed)?;
    let na = data.num_spurious;
    let mut traces = Vec::new();
    let mut summary = BTreeMap::new();

    for (name, train, test) in [("erm_clean", &clean, &clean_test), ("erm_noisy", &noisy, &noisy_test)] {
        let c = TrainConfig { seed: cfg.seed, ..with_auto_lr(&cfg.erm, &train.design(), cfg.auto_lr) };
        let monitor = Monitor { eval: Some(test), valid: None };
        let (m, t) = train_erm_monitored(train, &c, &monitor, &mut seeded_rng(cfg.seed))?;
        summary.insert(name.to_string(), regime_summary(&m, &t, train, test, na)?);
        traces.push((name.to_string(), t));
    }

    let (probe, mat) = mat_configs(&cfg.probe, &cfg.mat, &noisy.design(), cfg.auto_lr, cfg.seed);
    let monitor = Monitor { eval: Some(&noisy_test), valid: None };
    let run = run_mat_pipeline(&noisy, &probe, &mat, &monitor, cfg.seed)?;
    summary.insert("mat_noisy".into(), regime_summary(&run.model, &run.trace, &noisy, &noisy_test, na)?);
    traces.push(("mat_noisy".into(), run.trace));
    Ok(Fig1Result { traces, summary, calibration: run.calibration, num_attr: na })
}

impl Fig1Result {
    pub fn write(&self, out: &mut OutputDir) -> Result<Value> {
        for (name, t) in &self.traces {
            out.write_bytes(&format!("{name}.csv"), curves_csv(t, self.num_attr).as_bytes())?;
        }
        out.write_json("calibration.json", &self.calibration)?;
        out.write_json("summary.json", &self.summary)?;
        Ok(serde_json::to_value(&self.summary)?)
    }
}

// ---------------------------------------------------------------------------
// Exact-minimizer checks: stationary points under the three regimes.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thm1Config {
    pub seed: u64,
    /// Memorization-regime data; the sweep replaces n.
    pub data: ClassificationConfig,
    pub n_test: usize,
    /// λ for the main point (and the MAT probe's companion ERM).
    pub lambda: f64,
    pub lambdas: Vec<f64>,
    pub ns: Vec<usize>,
    /// Exact-minimizer solver settings.
    pub solver: TrainConfig,
    /// Perfect-fit check on the Fig. 1 configuration.
    pub fit_data: ClassificationConfig,
    pub fit_lambda: f64,
    pub mat: TrainConfig,
    pub probe: ProbeConfig,
    pub auto_lr: bool,
    pub dual_n: usize,
    pub dual_lambda: f64,
}

impl Default for Thm1Config {
    fn default() -> Self {
        Self {
            seed: 0,
            data: ClassificationConfig { gamma: 11.0, d: 1250, ..ClassificationConfig::default() },
            n_test: 10_000,
            lambda: 0.01,
            lambdas: vec![0.01, 0.001],
            ns: vec![200, 400],
            solver: TrainConfig {
                optimizer: Optimizer::NewtonCg,
                steps: 200,
                grad_tol: 1e-6,
                eval_every: 1,
                ..TrainConfig::default()
            },
            fit_data: ClassificationConfig::default(),
            fit_lambda: 1e-4,
            mat: TrainConfig { tau: 0.01, ..gd(0.5, 3000) },
            probe: ProbeConfig { twin: gd(0.01, 3000), label_flip: false },
            auto_lr: true,
            dual_n: 200,
            dual_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm1Row {
    pub lambda: f64,
    pub n: usize,
    pub conditions: ConditionReport,
    pub noisy_train_accuracy: f64,
    pub noisy_grad_norm: f64,
    pub clean_test_accuracy: f64,
    pub clean_grad_norm: f64,
    pub noisy_test_attribute_agreement: f64,
    pub noisy_test_minority: f64,
    pub noisy_test_worst: f64,
}

/// Minimizers with and without example-specific features at (n, λ).
pub fn thm1_point(cfg: &Thm1Config, n: usize, lambda: f64) -> Result<Thm1Row> {
    let data = ClassificationConfig { n, seed: cfg.seed, ..cfg.data.clone() };
    data.validate()?;
    let solver = TrainConfig { lambda, seed: cfg.seed, ..cfg.solver.clone() };
    let (noisy, noisy_test) = train_test(&data, cfg.n_test, cfg.seed)?;
    let (clean, clean_test) = train_test(&ClassificationConfig { sigma_eps: 0.0, ..data.clone() }, cfg.n_test, cfg.seed)?;
    let (mn, tn) = train_erm(&noisy, &solver, &mut seeded_rng(cfg.seed))?;
    let (mc, tc) = train_erm(&clean, &solver, &mut seeded_rng(cfg.seed))?;
    let test = evaluate_groups(&mn, &noisy_test)?;
    Ok(Thm1Row {
        lambda,
        n,
        conditions: theorem_conditions(&data, n),
        noisy_train_accuracy: evaluate_groups(&mn, &noisy)?.average,
        noisy_grad_norm: tn.grad_norm.unwrap_or(f64::NAN),
        clean_test_accuracy: evaluate_groups(&mc, &clean_test)?.average,
        clean_grad_norm: tc.grad_norm.unwrap_or(f64::NAN),
        noisy_test_attribute_agreement: attribute_agreement(&mn, &noisy_test),
        noisy_test_minority: majority_minority(&test, data.num_spurious).1,
        noisy_test_worst: test.worst,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitCheck {
    pub lambda: f64,
    pub train_accuracy: f64,
    pub grad_norm: f64,
}

/// Training accuracy of the exact minimizer on the Fig. 1 configuration.
pub fn thm1_fit_check(cfg: &Thm1Config) -> Result<FitCheck> {
    let data = ClassificationConfig { seed: cfg.seed, ..cfg.fit_data.clone() };
    let train = gen_classification(&data, Split::Train, &mut seeded_rng(cfg.seed))?;
    let solver = TrainConfig { lambda: cfg.fit_lambda, seed: cfg.seed, ..cfg.solver.clone() };
    let (m, t) = train_erm(&train, &solver, &mut seeded_rng(cfg.seed))?;
    Ok(FitCheck {
        lambda: cfg.fit_lambda,
        train_accuracy: evaluate_groups(&m, &train)?.average,
        grad_norm: t.grad_norm.unwrap_or(f64::NAN),
    })
}

/// MAT on the memorization-regime data at the main n.
pub fn thm1_mat_rescue(cfg: &Thm1Config) -> Result<RegimeSummary> {
    let data = ClassificationConfig { seed: cfg.seed, ..cfg.data.clone() };
    let (train, test) = train_test(&data, cfg.n_test, cfg.seed)?;
    let (probe, mat) = mat_configs(&cfg.probe, &cfg.mat, &train.design(), cfg.auto_lr, cfg.seed);
    let run = run_mat_pipeline(&train, &probe, &mat, &Monitor::default(), cfg.seed)?;
    regime_summary(&run.model, &run.trace, &train, &test, data.num_spurious)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCheck {
    pub n: usize,
    pub lambda: f64,
    pub grad_norm: f64,
    pub relative_residual: f64,
    pub alpha_norm: f64,
    pub bound: f64,
}

/// Converged binary ERM and its dual weights.
pub fn thm1_dual_check(cfg: &Thm1Config) -> Result<DualCheck> {
    let data = ClassificationConfig { n: cfg.dual_n, seed: cfg.seed, ..cfg.data.clone() };
    let train = gen_classification(&data, Split::Train, &mut seeded_rng(cfg.seed))?;
    let solver = TrainConfig { lambda: cfg.dual_lambda, grad_tol: 1e-10, seed: cfg.seed, ..cfg.solver.clone() };
    let (m, t) = train_erm(&train, &solver, &mut seeded_rng(cfg.seed))?;
    let dw = dual_weights(&m, &train, cfg.dual_lambda)?;
    Ok(DualCheck {
        n: cfg.dual_n,
        lambda: cfg.dual_lambda,
        grad_norm: t.grad_norm.unwrap_or(f64::NAN),
        relative_residual: dw.relative_residual,
        alpha_norm: dw.alpha_norm,
        bound: dw.bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thm1Result {
    pub main: Thm1Row,
    pub sweep: Vec<Thm1Row>,
    pub fit: FitCheck,
    pub mat_rescue: RegimeSummary,
    pub dual: DualCheck,
}

pub fn run_thm1(cfg: &Thm1Config) -> Result<Thm1Result> {
    let main = thm1_point(cfg, cfg.data.n, cfg.lambda)?;
    let mut sweep = Vec::new();
    for &n in &cfg.ns {
        for &l in &cfg.lambdas {
            sweep.push(if n == cfg.data.n && l == cfg.lambda { main.clone() } else { thm1_point(cfg, n, l)? });
        }
    }
    Ok(Thm1Result {
        main,
        sweep,
        fit: thm1_fit_check(cfg)?,
        mat_rescue: thm1_mat_rescue(cfg)?,
        dual: thm1_dual_check(cfg)?,
    })
}

impl Thm1Result {
    pub fn write(&self, out: &mut OutputDir) -> Result<Value> {
        let mut csv = String::from(
            "lambda,n,dim_ratio,noise_ratio,dim_ok,noise_ok,noisy_train_accuracy,noisy_grad_norm,clean_test_accuracy,\
             clean_grad_norm,noisy_test_attribute_agreement,noisy_test_minority,noisy_test_worst\n",
        );
        for r in &self.sweep {
            let c = &r.conditions;
            let _ = writeln!(
                csv,
                "{:?},{},{:?},{:?},{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                r.lambda,
                r.n,
                c.dim_ratio,
                c.noise_ratio,
                c.dim_ok,
                c.noise_ok,
                r.noisy_train_accuracy,
                r.noisy_grad_norm,
                r.clean_test_accuracy,
                r.clean_grad_norm,
                r.noisy_test_attribute_agreement,
                r.noisy_test_minority,
                r.noisy_test_worst
            );
        }
        out.write_bytes("sweep.csv", csv.as_bytes())?;
        out.write_json("summary.json", self)?;
        Ok(serde_json::to_value(self)?)
    }
}

// ---------------------------------------------------------------------------
// Fig. 6: two spurious attributes, eight groups.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig6Config {
    pub seed: u64,
    pub data: ClassificationConfig,
    pub n_test: usize,
    pub erm: TrainConfig,
    pub mat: TrainConfig,
    pub probe: ProbeConfig,
    pub auto_lr: bool,
}

impl Default for Fig6Config {
    fn default() -> Self {
        Self {
            seed: 1,
            data: ClassificationConfig { num_spurious: 2, sigma_eps: 0.2, ..ClassificationConfig::default() },
            n_test: 8000,
            erm: gd(0.01, 3000),
            mat: TrainConfig { tau: 0.01, ..gd(0.03, 3000) },
            probe: ProbeConfig { twin: gd(0.01, 3000), label_flip: false },
            auto_lr: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fig6Result {
    pub traces: Vec<(String, Trace)>,
    pub summary: BTreeMap<String, RegimeSummary>,
}

pub fn run_fig6(cfg: &Fig6Config) -> Result<Fig6Result> {
    let data = ClassificationConfig { seed: cfg.seed, ..cfg.data.clone() };
    data.validate()?;
    let (train, test) = train_test(&data, cfg.n_test, cfg.seed)?;
    let x = train.design();
    let monitor = Monitor { eval: Some(&test), valid: None };
    let na = data.num_spurious;
    let erm_cfg = TrainConfig { seed: cfg.seed, ..with_auto_lr(&cfg.erm, &x, cfg.auto_lr) };
    let (em, et) = train_erm_monitored(&train, &erm_cfg, &monitor, &mut seeded_rng(cfg.seed))?;
    let (probe, mat) = mat_configs(&cfg.probe, &cfg.mat, &x, cfg.auto_lr, cfg.seed);
    let run = run_mat_pipeline(&train, &probe, &mat, &monitor, cfg.seed)?;
    let mut summary = BTreeMap::new();
    summary.insert("erm".to_string(), regime_summary(&em, &et, &train, &test, na)?);
    summary.insert("mat".to_string(), regime_summary(&run.model, &run.trace, &train, &test, na)?);
    Ok(Fig6Result { traces: vec![("erm".into(), et), ("mat".into(), run.trace)], summary })
}

impl Fig6Result {
    pub fn write(&self, out: &mut OutputDir) -> Result<Value> {
        for (name, t) in &self.traces {
            out.write_bytes(&format!("{name}.csv"), t.to_csv().as_bytes())?;
        }
        out.write_json("summary.json", &self.summary)?;
        Ok(serde_json::to_value(&self.summary)?)
    }
}

// ---------------------------------------------------------------------------
// Fig. 2: self-influence by subpopulation under ERM and MAT.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig2Config {
    pub seed: u64,
    pub data: ClassificationConfig,
    pub erm: TrainConfig,
    pub mat: TrainConfig,
    pub probe: ProbeConfig,
    pub auto_lr: bool,
    pub subsample: Option<usize>,
    pub bin_edges: Vec<f64>,
}

impl Default for Fig2Config {
    fn default() -> Self {
        Self {
            seed: 0,
            data: ClassificationConfig { n: 200, ..ClassificationConfig::default() },
            erm: gd(0.01, 2000),
            mat: TrainConfig { tau: 0.01, ..gd(1.0, 2000) },
            probe: ProbeConfig { twin: gd(0.01, 2000), label_flip: false },
            auto_lr: true,
            subsample: None,
            bin_edges: default_bin_edges(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Result {
    pub erm: SelfInfluenceReport,
    pub mat: SelfInfluenceReport,
}

/// The ERM and MAT handles used by the self-influence experiment.
pub fn fig2_handles(cfg: &Fig2Config, train: &Dataset) -> (AlgorithmHandle, AlgorithmHandle) {
    let x = train.design();
    let erm = AlgorithmHandle::erm(TrainConfig { seed: cfg.seed, ..with_auto_lr(&cfg.erm, &x, cfg.auto_lr) }, cfg.seed);
    let (probe, mat) = mat_configs(&cfg.probe, &cfg.mat, &x, cfg.auto_lr, cfg.seed);
    let tau = mat.tau;
    (erm, AlgorithmHandle::mat(probe, tau, mat, cfg.seed))
}

pub fn run_fig2(cfg: &Fig2Config) -> Result<Fig2Result> {
    let data = ClassificationConfig { seed: cfg.seed, ..cfg.data.clone() };
    data.validate()?;
    let train = gen_classification(&data, Split::Train, &mut seeded_rng(cfg.seed))?;
    let (erm, mat) = fig2_handles(cfg, &train);
    let erm = self_influence_all(&erm, &train, cfg.subsample, &cfg.bin_edges, &mut seeded_rng(cfg.seed))?;
    let mat = self_influence_all(&mat, &train, cfg.subsample, &cfg.bin_edges, &mut seeded_rng(cfg.seed))?;
    Ok(Fig2Result { erm, mat })
}

impl Fig2Result {
    pub fn write(&self, out: &mut OutputDir) -> Result<Value> {
        out.write_with("erm_scores.csv", |p| self.erm.write_csv(p))?;
        out.write_with("mat_scores.csv", |p| self.mat.write_csv(p))?;
        let summary = serde_json::json!({ "erm": self.erm.summary, "mat": self.mat.summary });
        out.write_json("summary.json", &summary)?;
        Ok(summary)
    }
}

// ---------------------------------------------------------------------------
// Fig. 3: interpolating regression under three example-specific noise scales.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3Config {
    pub seed: u64,
    /// `sigma_eps` here is replaced by each entry of `sigma_eps_values`.
    pub data: RegressionConfig,
    pub sigma_eps_values: Vec<f64>,
}

impl Default for Fig3Config {
    fn default() -> Self {
        Self { seed: 0, data: RegressionConfig::default(), sigma_eps_values: vec![1e-4, 1e-3, 0.0] }
    }
}

#[derive(Debug, Clone)]
pub struct Fig3Result {
    pub fits: Vec<(RegressionSummary, RegressionFit)>,
    pub config: Fig3Config,
}

pub fn run_fig3(cfg: &Fig3Config) -> Result<Fig3Result> {
    let mut fits = Vec::new();
    for &s in &cfg.sigma_eps_values {
        let data_cfg = RegressionConfig { sigma_eps: s, seed: cfg.seed, ..cfg.data.clone() };
        // Same seed for every noise scale: x, ξ and the ε directions coincide.
        let data = gen_regression(&data_cfg, &mut seeded_rng(cfg.seed))?;
        let mut fit = fit_min_norm(&data)?;
        let summary = summarize(&fit, &data);
        fit.eps_coef = Vec::new();
        fits.push((summary, fit));
    }
    Ok(Fig3Result { fits, config: cfg.clone() })
}

impl Fig3Result {
    pub fn summary_for(&self, sigma_eps: f64) -> Option<&RegressionSummary> {
        self.fits.iter().map(|(s, _)| s).find(|s| s.sigma_eps == sigma_eps)
    }

    pub fn write(&self, out: &mut OutputDir) -> Result<Value> {
        for (s, fit) in &self.fits {
            let name = format!("grid_sigma_eps_{:e}.csv", s.sigma_eps);
            out.write_with(&name, |p| fit.write_grid_csv(&self.config.data.truth, p))?;
        }
        let summaries: Vec<&RegressionSummary> = self.fits.iter().map(|(s, _)| s).collect();
        out.write_json("summary.json", &summaries)?;
        Ok(serde_json::to_value(summaries)?)
    }
}

// ---------------------------------------------------------------------------
// Fig. 4: ERM, reweighting and margin shifts on a separable 2-D mixture.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig4Config {
    pub seed: u64,
    pub data: Gaussian2dConfig,
    /// Weight of the flagged half under reweighting.
    pub weight: f64,
    /// Margin shift of the flagged half.
    pub delta: f64,
    pub train: TrainConfig,
    /// Extra draws tried when a draw is not linearly separable.
    pub max_retries: usize,
}

impl Default for Fig4Config {
    fn default() -> Self {
        Self {
            seed: 2,
            data: Gaussian2dConfig::default(),
            weight: 0.1,
            delta: 2.0,
            train: TrainConfig {
                lr: 0.1,
                steps: 20_000,
                eval_every: 100,
                schedule: Schedule::InverseLoss,
                fit_bias: true,
                solver: Solver::Primal,
                ..TrainConfig::default()
            },
            max_retries: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4Regime {
    pub angle_to_max_margin: f64,
    pub direction: Vec<f64>,
    pub bias: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig4Summary {
    pub data_seed: u64,
    pub max_margin: MaxMargin,
    pub erm: Fig4Regime,
    pub reweight: Fig4Regime,
    pub shift: Fig4Regime,
    /// Largest distance between the ERM and reweighted trajectory points
    /// over the first tenth of the run.
    pub early_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct Fig4Result {
    pub summary: Fig4Summary,
    pub trajectories: Vec<(String, Vec<TrajectoryPoint>)>,
}

pub fn run_fig4(cfg: &Fig4Config) -> Result<Fig4Result> {
    let mut found = None;
    for attempt in 0..=cfg.max_retries as u64 {
        let seed = cfg.seed + attempt;
        let ds = gen_gaussian_2d_with(&cfg.data, &mut seeded_rng(seed))?;
        match max_margin_direction(&ds) {
            Ok(mm) => {
                found = Some((seed, ds, mm));
                break;
            }
            Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    let (data_seed, ds, mm) = found.ok_or_else(|| {
        Error::Infeasible(format!("no separable draw in {} attempts", cfg.max_retries + 1))
    })?;
    let n = ds.len();
    let flagged: Vec<bool> = ds.examples.iter().map(|e| e.a[0] == 1).collect();
    let ones = vec![1.0; n];
    let zeros = vec![0.0; n];
    let weights: Vec<f64> = flagged.iter().map(|&f| if f { cfg.weight } else { 1.0 }).collect();
    let deltas: Vec<f64> = flagged.iter().map(|&f| if f { cfg.delta } else { 0.0 }).collect();
    let tcfg = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };

    let mut regimes = Vec::new();
    let mut trajectories = Vec::new();
    for (name, w, d) in [("erm", &ones, &zeros), ("reweight", &weights, &zeros), ("shift", &ones, &deltas)] {
        let (m, t) = train_binary(&ds, w, d, &tcfg)?;
        let dir = m.binary_direction();
        let b = m.bias.as_ref().map_or(0.0, |b| b[1] - b[0]);
        regimes.push(Fig4Regime {
            angle_to_max_margin: angle_deg(&dir, &mm.direction),
            direction: dir,
            bias: b,
            train_accuracy: evaluate_groups(&m, &ds)?.average,
        });
        trajectories.push((name.to_string(), trajectory_points(&t)?));
    }
    let horizon = cfg.train.steps / 10;
    let early_deviation = trajectories[0]
        .1
        .iter()
        .zip(&trajectories[1].1)
        .filter(|(a, _)| a.step <= horizon)
        .filter_map(|(a, b)| Some((a.point?, b.point?)))
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    let shift = regimes.pop().expect("three regimes");
    let reweight = regimes.pop().expect("three regimes");
    let erm = regimes.pop().expect("three regimes");
    Ok(Fig4Result {
        summary: Fig4Summary { data_seed, max_margin: mm, erm, reweight, shift, early_deviation },
        trajectories,
    })
}

impl Fig4Result {
    pub fn write(&self, out: &mut OutputDir) -> Result<Value> {
        for (name, pts) in &self.trajectories {
            let mut csv = String::from("step,x,y\n");
            for p in pts {
                match p.point {
                    Some([x, y]) => {
                        let _ = writeln!(csv, "{},{x:?},{y:?}", p.step);
                    }
                    None => {
                        let _ = writeln!(csv, "{},,", p.step);
                    }
                }
            }
            out.write_bytes(&format!("{name}_trajectory.csv"), csv.as_bytes())?;
        }
        out.write_json("angles.json", &self.summary)?;
        Ok(serde_json::to_value(&self.summary)?)
    }
}
