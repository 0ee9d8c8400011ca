//! Acceptance runner: each criterion measures something, compares it with a
//! fixed threshold and reports a verdict. Errors and panics inside a
//! criterion become named failures.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::presets::{
    run_fig2, run_fig3, run_fig4, run_fig6, thm1_dual_check, thm1_fit_check, thm1_mat_rescue, thm1_point,
    Fig2Config, Fig3Config, Fig4Config, Fig6Config, Thm1Config, Thm1Row,
};
use super::{ExperimentSpec, Preset};
use crate::error::{Error, Result};
use crate::heldout::{calibrated_heldout, calibration_joint, calibration_matrix};
use crate::linmodel::{erm_grad, erm_loss, shift_logits, softmax, LinearModel};
use crate::matrix::Mat;
use crate::synthdata::{seeded_rng, Dataset, Split};
use crate::training::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AcceptOptions {
    /// Replaces the step size of every gradient-descent run and disables the
    /// automatic 1/L choice.
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub suite: String,
    pub measured: String,
    pub threshold: String,
    pub pass: bool,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {:<24} measured: {} | threshold: {} | {:.1}s",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured,
            self.threshold,
            self.seconds
        )
    }
}

struct Outcome {
    measured: String,
    threshold: String,
    pass: bool,
}

struct Ctx {
    opts: AcceptOptions,
    thm1_main: OnceLock<std::result::Result<Thm1Row, String>>,
}

impl Ctx {
    fn gd(&self, cfg: &mut TrainConfig, auto_lr: &mut bool) {
        if let Some(lr) = self.opts.lr {
            cfg.lr = lr;
            *auto_lr = false;
        }
    }

    fn thm1_config(&self) -> Thm1Config {
        let mut c = Thm1Config::default();
        if let Some(lr) = self.opts.lr {
            c.mat.lr = lr;
            c.probe.twin.lr = lr;
            c.auto_lr = false;
        }
        c
    }

    fn thm1_main(&self) -> Result<Thm1Row> {
        self.thm1_main
            .get_or_init(|| {
                let c = self.thm1_config();
                thm1_point(&c, c.data.n, c.lambda).map_err(|e| e.to_string())
            })
            .clone()
            .map_err(Error::Contract)
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    suite: &'static str,
    run: fn(&Ctx) -> Result<Outcome>,
}

const CRITERIA: [Criterion; 13] = [
    Criterion { id: 1, name: "softmax-shift", suite: "linmodel", run: c1_shift_identity },
    Criterion { id: 2, name: "gradient-oracle", suite: "linmodel", run: c2_gradient },
    Criterion { id: 3, name: "perfect-fit", suite: "training", run: c3_fit },
    Criterion { id: 4, name: "core-only-without-eps", suite: "training", run: c4_clean },
    Criterion { id: 5, name: "memorization-regime", suite: "training", run: c5_memorization },
    Criterion { id: 6, name: "mat-rescue", suite: "heldout", run: c6_mat_rescue },
    Criterion { id: 7, name: "multi-spurious", suite: "heldout", run: c7_multi },
    Criterion { id: 8, name: "dual-representation", suite: "training", run: c8_dual },
    Criterion { id: 9, name: "margin-fixed-points", suite: "training", run: c9_margin },
    Criterion { id: 10, name: "calibration-fixture", suite: "heldout", run: c10_calibration },
    Criterion { id: 11, name: "self-influence-order", suite: "influence", run: c11_influence },
    Criterion { id: 12, name: "regression-regimes", suite: "expcli", run: c12_regression },
    Criterion { id: 13, name: "determinism", suite: "expcli", run: c13_determinism },
];

pub const SUITES: [&str; 6] = ["all", "linmodel", "training", "heldout", "influence", "expcli"];

/// Runs the criteria selected by `suite` ("all", a module name or a
/// criterion number), calling `report` after each one.
pub fn run_accept(
    suite: &str,
    opts: &AcceptOptions,
    mut report: impl FnMut(&CriterionResult),
) -> Result<Vec<CriterionResult>> {
    let selected: Vec<&Criterion> = match suite.parse::<u32>() {
        Ok(id) => CRITERIA.iter().filter(|c| c.id == id).collect(),
        Err(_) if SUITES.contains(&suite) => CRITERIA.iter().filter(|c| suite == "all" || c.suite == suite).collect(),
        Err(_) => Vec::new(),
    };
    if selected.is_empty() {
        return Err(Error::Config(format!("unknown acceptance suite '{suite}'")));
    }
    let ctx = Ctx { opts: opts.clone(), thm1_main: OnceLock::new() };
    let mut results = Vec::new();
    for c in selected {
        let start = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(|| (c.run)(&ctx))) {
            Ok(Ok(o)) => o,
            Ok(Err(e)) => Outcome { measured: format!("error: {e}"), threshold: "runs to completion".into(), pass: false },
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".into());
                Outcome { measured: format!("panic: {msg}"), threshold: "runs to completion".into(), pass: false }
            }
        };
        let r = CriterionResult {
            id: c.id,
            name: c.name.into(),
            suite: c.suite.into(),
            measured: outcome.measured,
            threshold: outcome.threshold,
            pass: outcome.pass,
            seconds: start.elapsed().as_secs_f64(),
        };
        report(&r);
        results.push(r);
    }
    Ok(results)
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn c1_shift_identity(_: &Ctx) -> Result<Outcome> {
    let mut rng = seeded_rng(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(2..=8);
        let v: Vec<f64> = (0..k).map(|_| 5.0 * normal(&mut rng)).collect();
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(1e-3..1.0)).collect();
        let log_w: Vec<f64> = w.iter().map(|x| x.ln()).collect();
        let lhs = softmax(&shift_logits(&v, &log_w)?);
        let s = softmax(&v);
        let un: Vec<f64> = s.iter().zip(&w).map(|(a, b)| a * b).collect();
        let z: f64 = un.iter().sum();
        for (a, b) in lhs.iter().zip(&un) {
            worst = worst.max((a - b / z).abs());
        }
    }
    Ok(Outcome { measured: format!("max |diff| {worst:.3e}"), threshold: "< 1e-12".into(), pass: worst < 1e-12 })
}

fn c2_gradient(_: &Ctx) -> Result<Outcome> {
    let mut rng = seeded_rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k = rng.random_range(2..=3);
        let p = rng.random_range(1..=10);
        let n = rng.random_range(k..=20);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| normal(&mut rng)).collect()).collect();
        let y: Vec<usize> = (0..n).map(|i| i % k).collect();
        let ds = Dataset::from_xy(x, y, Split::Train)?;
        let lambda = rng.random_range(0.0..0.1);
        let with_bias = rng.random_bool(0.5);
        let mut m = LinearModel::zeros(k, p, with_bias);
        m.w.iter_mut().for_each(|w| *w = normal(&mut rng));
        if let Some(b) = m.bias.as_mut() {
            b.iter_mut().for_each(|v| *v = normal(&mut rng));
        }
        let g = erm_grad(&m, &ds, lambda);
        let h = 1e-5;
        let mut fd = Vec::new();
        for idx in 0..m.w.len() {
            let mut a = m.clone();
            a.w[idx] += h;
            let mut b = m.clone();
            b.w[idx] -= h;
            fd.push((erm_loss(&a, &ds, lambda) - erm_loss(&b, &ds, lambda)) / (2.0 * h));
        }
        for idx in 0..m.bias.as_ref().map_or(0, |b| b.len()) {
            let mut a = m.clone();
            a.bias.as_mut().unwrap()[idx] += h;
            let mut b = m.clone();
            b.bias.as_mut().unwrap()[idx] -= h;
            fd.push((erm_loss(&a, &ds, lambda) - erm_loss(&b, &ds, lambda)) / (2.0 * h));
        }
        let analytic: Vec<f64> = g.w.iter().chain(g.bias.iter().flatten()).copied().collect();
        let diff = analytic.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(diff / g.norm().max(1e-8));
    }
    Ok(Outcome { measured: format!("max relative error {worst:.3e}"), threshold: "< 1e-5".into(), pass: worst < 1e-5 })
}

fn c3_fit(ctx: &Ctx) -> Result<Outcome> {
    let f = thm1_fit_check(&ctx.thm1_config())?;
    Ok(Outcome {
        measured: format!("train accuracy {:.4}, gradient norm {:.2e}", f.train_accuracy, f.grad_norm),
        threshold: "accuracy >= 0.99 at gradient norm < 1e-6".into(),
        pass: f.train_accuracy >= 0.99 && f.grad_norm < 1e-6,
    })
}

fn c4_clean(ctx: &Ctx) -> Result<Outcome> {
    let r = ctx.thm1_main()?;
    Ok(Outcome {
        measured: format!("test accuracy {:.4}", r.clean_test_accuracy),
        threshold: ">= 0.95".into(),
        pass: r.clean_test_accuracy >= 0.95,
    })
}

fn c5_memorization(ctx: &Ctx) -> Result<Outcome> {
    let r = ctx.thm1_main()?;
    let c = &r.conditions;
    Ok(Outcome {
        measured: format!(
            "flags ({}, {}), agreement with a {:.4}, minority accuracy {:.4}",
            c.dim_ok, c.noise_ok, r.noisy_test_attribute_agreement, r.noisy_test_minority
        ),
        threshold: "both flags, agreement >= 0.90, minority <= 0.10".into(),
        pass: c.dim_ok && c.noise_ok && r.noisy_test_attribute_agreement >= 0.90 && r.noisy_test_minority <= 0.10,
    })
}

fn c6_mat_rescue(ctx: &Ctx) -> Result<Outcome> {
    let s = thm1_mat_rescue(&ctx.thm1_config())?;
    Ok(Outcome {
        measured: format!("minority {:.4}, worst group {:.4}", s.test_minority, s.test.worst),
        threshold: "minority >= 0.90, worst >= 0.85".into(),
        pass: s.test_minority >= 0.90 && s.test.worst >= 0.85,
    })
}

fn c7_multi(ctx: &Ctx) -> Result<Outcome> {
    let mut c = Fig6Config::default();
    let mut auto = c.auto_lr;
    ctx.gd(&mut c.erm, &mut auto);
    ctx.gd(&mut c.mat, &mut auto);
    ctx.gd(&mut c.probe.twin, &mut auto);
    c.auto_lr = auto;
    let r = run_fig6(&c)?;
    let (mat, erm) = (r.summary["mat"].test.worst, r.summary["erm"].test.worst);
    Ok(Outcome {
        measured: format!("MAT worst of 8 {mat:.4}, ERM worst {erm:.4}"),
        threshold: "MAT >= 0.85, ERM <= 0.60".into(),
        pass: mat >= 0.85 && erm <= 0.60,
    })
}

fn c8_dual(ctx: &Ctx) -> Result<Outcome> {
    let d = thm1_dual_check(&ctx.thm1_config())?;
    Ok(Outcome {
        measured: format!(
            "relative residual {:.2e}, |alpha| {:.4} vs bound {:.4} (gradient norm {:.1e})",
            d.relative_residual, d.alpha_norm, d.bound, d.grad_norm
        ),
        threshold: "residual < 1e-4, |alpha| <= 1/(lambda sqrt n)".into(),
        pass: d.relative_residual < 1e-4 && d.alpha_norm <= d.bound,
    })
}

fn c9_margin(ctx: &Ctx) -> Result<Outcome> {
    let mut c = Fig4Config::default();
    let mut auto = false;
    ctx.gd(&mut c.train, &mut auto);
    let s = run_fig4(&c)?.summary;
    let (e, r, sh) = (s.erm.angle_to_max_margin, s.reweight.angle_to_max_margin, s.shift.angle_to_max_margin);
    Ok(Outcome {
        measured: format!("angles ERM {e:.3}°, reweight {r:.3}°, shift {sh:.3}°"),
        threshold: "ERM < 1°, reweight < 1°, shift > 5°".into(),
        pass: e < 1.0 && r < 1.0 && sh > 5.0,
    })
}

fn c10_calibration(_: &Ctx) -> Result<Outcome> {
    let probs = Mat::from_rows(&[vec![0.8, 0.2], vec![0.6, 0.4], vec![0.3, 0.7], vec![0.1, 0.9]])?;
    let labels = [0, 0, 1, 1];
    let joint = calibration_joint(&probs, &labels)?;
    let cond = calibration_matrix(&joint);
    let cal = calibrated_heldout(&probs, &cond)?;
    let want_joint = [0.35, 0.15, 0.10, 0.40];
    let want_cond = [0.35 / 0.45, 0.15 / 0.55, 0.10 / 0.45, 0.40 / 0.55];
    let mut err: f64 = 0.0;
    for (a, b) in joint.data.iter().zip(want_joint).chain(cond.data.iter().zip(want_cond)) {
        err = err.max((a - b).abs());
    }
    for i in 0..4 {
        for y in 0..2 {
            let want: f64 = (0..2).map(|c| want_cond[y * 2 + c] * probs.get(i, c)).sum();
            err = err.max((cal.probs.get(i, y) - want).abs());
        }
    }
    Ok(Outcome { measured: format!("max |diff| {err:.2e}"), threshold: "< 1e-12".into(), pass: err < 1e-12 })
}

fn c11_influence(ctx: &Ctx) -> Result<Outcome> {
    let mut c = Fig2Config::default();
    let mut auto = c.auto_lr;
    ctx.gd(&mut c.erm, &mut auto);
    ctx.gd(&mut c.mat, &mut auto);
    ctx.gd(&mut c.probe.twin, &mut auto);
    c.auto_lr = auto;
    let r = run_fig2(&c)?;
    let (eg, mg) = (r.erm.summary.gap(), r.mat.summary.gap());
    let (em, mm) = (r.erm.summary.overall.mean, r.mat.summary.overall.mean);
    Ok(Outcome {
        measured: format!("ERM gap {eg:.4}, MAT gap {mg:.4}, means ERM {em:.4} / MAT {mm:.4}"),
        threshold: "ERM gap >= 0.1, MAT gap < ERM gap / 2, MAT mean < ERM mean".into(),
        pass: eg >= 0.1 && mg < eg / 2.0 && mm < em,
    })
}

fn c12_regression(_: &Ctx) -> Result<Outcome> {
    let r = run_fig3(&Fig3Config::default())?;
    let get = |s: f64| r.summary_for(s).ok_or_else(|| Error::Contract(format!("no run at sigma_eps {s}")));
    let (good, bad, none) = (get(1e-4)?, get(1e-3)?, get(0.0)?);
    Ok(Outcome {
        measured: format!(
            "MSE {:.4} (1e-4) vs {:.4} (1e-3); TV {:.2} vs truth {:.2}",
            good.clean_mse, bad.clean_mse, none.total_variation, none.truth_total_variation
        ),
        threshold: "MSE(1e-4) < MSE(1e-3), TV(0) > TV(f)".into(),
        pass: good.clean_mse < bad.clean_mse && none.total_variation > none.truth_total_variation,
    })
}

fn scratch_dir(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("spurlab-accept-{}-{tag}", std::process::id()))
}

fn c13_determinism(ctx: &Ctx) -> Result<Outcome> {
    let dirs = [scratch_dir("a"), scratch_dir("b")];
    let mut manifests = Vec::new();
    for d in &dirs {
        let mut spec = ExperimentSpec::new(Preset::Fig1Toy, d);
        spec.seed = Some(7);
        if let Some(lr) = ctx.opts.lr {
            spec.overrides = vec![
                "auto_lr=false".into(),
                format!("erm.lr={lr}"),
                format!("mat.lr={lr}"),
                format!("probe.twin.lr={lr}"),
            ];
        }
        let res = super::run(&spec);
        if res.is_err() {
            dirs.iter().for_each(|d| drop(std::fs::remove_dir_all(d)));
        }
        manifests.push(res?.0);
    }
    let mut compared = 0;
    let mut same = true;
    for e in manifests[0].files.iter().filter(|e| e.path.ends_with(".csv")) {
        let a = std::fs::read(dirs[0].join(&e.path))?;
        let b = std::fs::read(dirs[1].join(&e.path))?;
        same &= a == b;
        compared += 1;
    }
    same &= manifests[0].files == manifests[1].files;
    dirs.iter().for_each(|d| drop(std::fs::remove_dir_all(d)));
    Ok(Outcome {
        measured: format!("{compared} CSV files, identical: {same}"),
        threshold: "byte-identical".into(),
        pass: same && compared > 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_criteria_pass() {
        for id in ["1", "2", "10"] {
            let r = run_accept(id, &AcceptOptions::default(), |_| {}).unwrap();
            assert!(r[0].pass, "{}", r[0].line());
        }
    }

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_accept("bogus", &AcceptOptions::default(), |_| {}).is_err());
        assert!(run_accept("99", &AcceptOptions::default(), |_| {}).is_err());
    }

    #[test]
    fn suite_selects_module() {
        let r = run_accept("linmodel", &AcceptOptions::default(), |_| {}).unwrap();
        assert_eq!(r.iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn divergence_is_a_named_failure() {
        let r = run_accept("7", &AcceptOptions { lr: Some(1e3) }, |_| {}).unwrap();
        assert!(!r[0].pass);
        assert!(r[0].measured.contains("error"), "{}", r[0].measured);
    }
}
