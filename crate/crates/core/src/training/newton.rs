//! Truncated Newton (conjugate-gradient inner solve) for the regularized
//! objective. Used when a check needs an essentially exact minimizer, which
//! plain GD reaches only after ~L/λ steps.

use super::engine::{metrics_from_logits, Objective};
use super::{TrainConfig, Trace, TraceRecord};
use crate::error::{Error, Result};
use crate::linmodel::{softmax_in_place, LinearModel, PROB_FLOOR};
use crate::matrix::{axpy, dot, Mat};

struct State {
    loss: f64,
    grad: Vec<f64>,
    /// Per-example probabilities after shifting, n×K.
    probs: Vec<f64>,
    logits: Vec<f64>,
}

fn evaluate(x: &Mat, w: &[f64], obj: &Objective, lambda: f64, with_grad: bool) -> State {
    let (n, p, k) = (x.rows, x.cols, obj.k);
    let mut logits = vec![0.0; n * k];
    for i in 0..n {
        for c in 0..k {
            logits[i * k + c] = dot(&w[c * p..(c + 1) * p], x.row(i));
        }
    }
    let mut probs = logits.clone();
    let mut loss = 0.0;
    let mut grad = if with_grad { w.iter().map(|v| lambda * v).collect() } else { Vec::new() };
    for i in 0..n {
        let r = &mut probs[i * k..(i + 1) * k];
        if let Some(s) = obj.shifts {
            for (rc, sc) in r.iter_mut().zip(s.row(i)) {
                *rc += sc;
            }
        }
        softmax_in_place(r, 1.0);
        let y = obj.labels[i];
        let wt = obj.weights.map_or(1.0, |w| w[i]);
        loss += -wt * r[y].max(PROB_FLOOR).ln();
        if with_grad {
            for c in 0..k {
                let e = wt * (r[c] - f64::from(u8::from(c == y))) / n as f64;
                if e != 0.0 {
                    axpy(e, x.row(i), &mut grad[c * p..(c + 1) * p]);
                }
            }
        }
    }
    loss = loss / n as f64 + 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    State { loss, grad, probs, logits }
}

fn hess_vec(x: &Mat, probs: &[f64], obj: &Objective, lambda: f64, v: &[f64]) -> Vec<f64> {
    let (n, p, k) = (x.rows, x.cols, obj.k);
    let mut out: Vec<f64> = v.iter().map(|e| lambda * e).collect();
    let mut u = vec![0.0; k];
    for i in 0..n {
        let xi = x.row(i);
        for c in 0..k {
            u[c] = dot(&v[c * p..(c + 1) * p], xi);
        }
        let s = &probs[i * k..(i + 1) * k];
        let su: f64 = s.iter().zip(&u).map(|(a, b)| a * b).sum();
        let wt = obj.weights.map_or(1.0, |w| w[i]);
        for c in 0..k {
            let q = wt * s[c] * (u[c] - su) / n as f64;
            if q != 0.0 {
                axpy(q, xi, &mut out[c * p..(c + 1) * p]);
            }
        }
    }
    out
}

/// Minimizes the objective from W = 0 until ‖∇‖ < `cfg.grad_tol` or
/// `cfg.steps` Newton iterations.
pub(crate) fn newton_cg(
    x: &Mat,
    obj: &Objective,
    groups: &[usize],
    cfg: &TrainConfig,
) -> Result<(LinearModel, Trace)> {
    if cfg.fit_bias {
        return Err(Error::Config("the Newton solver does not fit a bias".into()));
    }
    if x.rows == 0 {
        return Err(Error::Contract("empty training set".into()));
    }
    let (p, k) = (x.cols, obj.k);
    let lambda = cfg.lambda;
    let mut w = vec![0.0; k * p];
    let mut trace = Trace::default();
    let mut st = evaluate(x, &w, obj, lambda, true);
    for it in 0..=cfg.steps {
        if !st.loss.is_finite() {
            return Err(Error::Divergence { step: it, loss: st.loss });
        }
        let gnorm = dot(&st.grad, &st.grad).sqrt();
        let done = gnorm < cfg.grad_tol || it == cfg.steps;
        if it % cfg.eval_every.max(1) == 0 || done {
            trace.records.push(TraceRecord {
                step: it,
                loss: st.loss,
                train: metrics_from_logits(&st.logits, k, obj.labels, groups),
                eval: None,
                valid_worst: None,
                w_norm: dot(&w, &w).sqrt(),
                w2d: None,
                b2d: None,
            });
            trace.grad_norm = Some(gnorm);
        }
        if done {
            break;
        }
        // CG on H d = −g with a forcing term that tightens near the optimum.
        let tol = gnorm * gnorm.sqrt().min(0.5);
        let mut d = vec![0.0; w.len()];
        let mut r: Vec<f64> = st.grad.iter().map(|g| -g).collect();
        let mut q = r.clone();
        let mut rr = dot(&r, &r);
        for _ in 0..cfg.cg_max_iter {
            if rr.sqrt() <= tol {
                break;
            }
            let hq = hess_vec(x, &st.probs, obj, lambda, &q);
            let curv = dot(&q, &hq);
            if curv <= 0.0 {
                break;
            }
            let a = rr / curv;
            axpy(a, &q, &mut d);
            axpy(-a, &hq, &mut r);
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for (qi, ri) in q.iter_mut().zip(&r) {
                *qi = ri + beta * *qi;
            }
        }
        if d.iter().all(|v| *v == 0.0) {
            d = st.grad.iter().map(|g| -g).collect();
        }
        // Armijo backtracking.
        let slope = dot(&st.grad, &d);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = w.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let ts = evaluate(x, &trial, obj, lambda, false);
            if ts.loss.is_finite() && ts.loss <= st.loss + 1e-4 * t * slope {
                accepted = Some(trial);
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some(trial) => {
                w = trial;
                st = evaluate(x, &w, obj, lambda, true);
            }
            None => {
                // No decrease representable in floating point: at the optimum.
                trace.grad_norm = Some(gnorm);
                break;
            }
        }
    }
    Ok((LinearModel { k, p, w, bias: None }, trace))
}
