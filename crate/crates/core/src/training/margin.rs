//! Binary logistic regression with per-example weights and norm-scaled
//! margin shifts, the brute-force max-margin oracle, and trajectory helpers
//! for the 2-D reweight-vs-shift experiment.

use serde::{Deserialize, Serialize};

use super::{GroupMetrics, TrainConfig, Trace, TraceRecord};
use crate::error::{Error, Result};
use crate::linmodel::LinearModel;
use crate::synthdata::{to_pm, Dataset};

/// All index triples i < j < l.
fn triples(n: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).flat_map(move |j| (j + 1..n).map(move |l| (i, j, l))))
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Embeds a binary (v, b) as a K=2 softmax model with antisymmetric rows, so
/// that the logit difference is v·x + b.
pub fn binary_to_model(v: &[f64], b: Option<f64>) -> LinearModel {
    let mut w: Vec<f64> = v.iter().map(|e| -0.5 * e).collect();
    w.extend(v.iter().map(|e| 0.5 * e));
    LinearModel { k: 2, p: v.len(), w, bias: b.map(|b| vec![-0.5 * b, 0.5 * b]) }
}

/// GD on (1/n) Σ wᵢ log(1 + exp(−yᵢ(xᵢ·v + b + δᵢ‖v‖))) + (λ/2)‖v‖² with
/// ±1 labels. The shift enters only the training loss; recorded accuracies
/// use the unshifted score.
pub fn train_binary(
    data: &Dataset,
    weights: &[f64],
    deltas: &[f64],
    cfg: &TrainConfig,
) -> Result<(LinearModel, Trace)> {
    cfg.validate()?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Contract("empty training set".into()));
    }
    if weights.len() != n || deltas.len() != n {
        return Err(Error::Dimension { expected: n, got: weights.len().min(deltas.len()) });
    }
    if data.examples.iter().any(|e| e.y > 1) {
        return Err(Error::Contract("margin-shift training needs binary labels".into()));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Contract("example weights must be positive".into()));
    }
    let p = data.dim();
    let ys: Vec<f64> = data.examples.iter().map(|e| to_pm(e.y)).collect();
    let groups = data.groups();
    let mut v = vec![0.0; p];
    let mut b = 0.0;
    let mut trace = Trace::default();
    let mut gv = vec![0.0; p];
    for step in 0..=cfg.steps {
        let vn = v.iter().map(|e| e * e).sum::<f64>().sqrt();
        let mut loss = 0.0;
        let mut correct = Vec::with_capacity(n);
        gv.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        let mut gshift = 0.0;
        for (i, e) in data.examples.iter().enumerate() {
            let score = crate::matrix::dot(&v, &e.x) + if cfg.fit_bias { b } else { 0.0 };
            correct.push((score > 0.0) == (ys[i] > 0.0));
            let m = ys[i] * (score + deltas[i] * vn);
            loss += weights[i] * softplus(-m);
            let g = -weights[i] * ys[i] * sigmoid(-m) / n as f64;
            crate::matrix::axpy(g, &e.x, &mut gv);
            gb += g;
            gshift += g * deltas[i];
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        if step % cfg.eval_every == 0 || step == cfg.steps {
            trace.records.push(TraceRecord {
                step,
                loss: loss + 0.5 * cfg.lambda * vn * vn,
                train: GroupMetrics::from_correct(&correct, &groups),
                eval: None,
                valid_worst: None,
                w_norm: vn,
                w2d: (p == 2).then(|| [v[0], v[1]]),
                b2d: (p == 2 && cfg.fit_bias).then_some(b),
            });
        }
        if step == cfg.steps {
            break;
        }
        if vn > 0.0 && gshift != 0.0 {
            crate::matrix::axpy(gshift / vn, &v.clone(), &mut gv);
        }
        let lr = match cfg.schedule {
            super::Schedule::Constant => cfg.lr,
            super::Schedule::InverseLoss => cfg.lr / loss.max(1e-300),
        };
        for (vi, gi) in v.iter_mut().zip(&gv) {
            *vi -= lr * (gi + cfg.lambda * *vi);
        }
        if cfg.fit_bias {
            b -= lr * gb;
        }
    }
    Ok((binary_to_model(&v, cfg.fit_bias.then_some(b)), trace))
}

/// Logistic GD with margin shifts δᵢ‖w‖ on the flagged examples.
pub fn train_shifted(data: &Dataset, deltas: &[f64], cfg: &TrainConfig) -> Result<(LinearModel, Trace)> {
    if deltas.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::Contract("shifts must be non-negative".into()));
    }
    train_binary(data, &vec![1.0; data.len()], deltas, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMargin {
    pub direction: Vec<f64>,
    pub bias: f64,
    /// Smallest signed distance of any point to the separator.
    pub margin: f64,
}

/// Hard-margin separator in ℝ² found by enumerating candidate support sets
/// (opposite-label pairs and all triples) and keeping the feasible candidate
/// with the largest minimum margin.
pub fn max_margin_direction(data: &Dataset) -> Result<MaxMargin> {
    if data.dim() != 2 {
        return Err(Error::Dimension { expected: 2, got: data.dim() });
    }
    let pts: Vec<[f64; 2]> = data.examples.iter().map(|e| [e.x[0], e.x[1]]).collect();
    let ys: Vec<f64> = data.examples.iter().map(|e| to_pm(e.y)).collect();
    let n = pts.len();
    let min_margin = |u: [f64; 2], b: f64| -> f64 {
        pts.iter().zip(&ys).map(|(x, y)| y * (u[0] * x[0] + u[1] * x[1] + b)).fold(f64::INFINITY, f64::min)
    };
    let mut best: Option<MaxMargin> = None;
    let mut consider = |u: [f64; 2], b: f64| {
        let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
        if !(nu > 0.0) || !nu.is_finite() {
            return;
        }
        let (u, b) = ([u[0] / nu, u[1] / nu], b / nu);
        let m = min_margin(u, b);
        if best.as_ref().is_none_or(|bm| m > bm.margin) {
            best = Some(MaxMargin { direction: u.to_vec(), bias: b, margin: m });
        }
    };
    for i in 0..n {
        for j in i + 1..n {
            if ys[i] == ys[j] {
                continue;
            }
            let u = [ys[i] * (pts[i][0] - pts[j][0]), ys[i] * (pts[i][1] - pts[j][1])];
            let mid = [(pts[i][0] + pts[j][0]) / 2.0, (pts[i][1] + pts[j][1]) / 2.0];
            consider(u, -(u[0] * mid[0] + u[1] * mid[1]));
        }
    }
    for (i, j, l) in triples(n) {
        if ys[i] == ys[j] && ys[j] == ys[l] {
            continue;
        }
        // Solve [x_t, 1]·(u, b) = y_t for the three points (Cramer's rule).
        let a = [[pts[i][0], pts[i][1], 1.0], [pts[j][0], pts[j][1], 1.0], [pts[l][0], pts[l][1], 1.0]];
        let r = [ys[i], ys[j], ys[l]];
        let det = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(&a);
        if d.abs() < 1e-12 {
            continue;
        }
        let mut sol = [0.0; 3];
        for (c, s) in sol.iter_mut().enumerate() {
            let mut m = a;
            for row in 0..3 {
                m[row][c] = r[row];
            }
            *s = det(&m) / d;
        }
        consider([sol[0], sol[1]], sol[2]);
    }
    match best {
        Some(b) if b.margin > 1e-12 => Ok(b),
        Some(b) => Err(Error::Infeasible(format!("best candidate margin {:.3e}", b.margin))),
        None => Err(Error::Infeasible("no candidate separators".into())),
    }
}

/// Angle in degrees between two vectors.
pub fn angle_deg(u: &[f64], v: &[f64]) -> f64 {
    let nu = crate::matrix::norm(u);
    let nv = crate::matrix::norm(v);
    let c = (crate::matrix::dot(u, v) / (nu * nv)).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    /// `None` marks a skipped zero-norm snapshot.
    pub point: Option<[f64; 2]>,
}

/// Normalized 2-D weight snapshots scaled by ln(step).
pub fn trajectory_points(trace: &Trace) -> Result<Vec<TrajectoryPoint>> {
    let mut out = Vec::with_capacity(trace.records.len());
    for r in &trace.records {
        let w = r.w2d.ok_or_else(|| Error::Contract("trace has no 2-D weight snapshots".into()))?;
        if r.step == 0 {
            continue;
        }
        let nw = (w[0] * w[0] + w[1] * w[1]).sqrt();
        let point = (nw > 0.0).then(|| {
            let s = (r.step as f64).ln();
            [w[0] / nw * s, w[1] / nw * s]
        });
        out.push(TrajectoryPoint { step: r.step, point });
    }
    Ok(out)
}
