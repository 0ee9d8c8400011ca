//! Linear softmax models: logits, temperature softmax, logit shifts,
//! cross-entropy, the regularized ERM objective and its gradient.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::matrix::{argmax, dot, Mat};
use crate::synthdata::Dataset;

/// Floor applied to probabilities inside the cross-entropy.
pub const PROB_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub k: usize,
    pub p: usize,
    /// Row-major K×p.
    pub w: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl LinearModel {
    pub fn zeros(k: usize, p: usize, with_bias: bool) -> Self {
        Self { k, p, w: vec![0.0; k * p], bias: with_bias.then(|| vec![0.0; k]) }
    }

    pub fn from_rows(rows: &[Vec<f64>], bias: Option<Vec<f64>>) -> Result<Self> {
        let m = Mat::from_rows(rows)?;
        if let Some(b) = &bias {
            if b.len() != m.rows {
                return Err(Error::Dimension { expected: m.rows, got: b.len() });
            }
        }
        Ok(Self { k: m.rows, p: m.cols, w: m.data, bias })
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.w[c * self.p..(c + 1) * self.p]
    }

    pub fn weight_sq_norm(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum()
    }

    /// Difference of the class-1 and class-0 rows: the binary weight vector.
    pub fn binary_direction(&self) -> Vec<f64> {
        self.row(1).iter().zip(self.row(0)).map(|(a, b)| a - b).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|v| v.is_finite())
            && self.bias.as_ref().is_none_or(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// Checkpoint JSON with every weight printed to 17 significant digits.
    pub fn to_json(&self) -> String {
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(", ");
        let bias = match &self.bias {
            Some(b) => format!("[{}]", fmt(b)),
            None => "null".into(),
        };
        format!(
            "{{\n  \"format\": \"spurlab-linear-v1\",\n  \"k\": {},\n  \"p\": {},\n  \"weights\": [{}],\n  \"bias\": {}\n}}\n",
            self.k,
            self.p,
            fmt(&self.w),
            bias
        )
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Ckpt {
            k: usize,
            p: usize,
            weights: Vec<f64>,
            bias: Option<Vec<f64>>,
        }
        let c: Ckpt = serde_json::from_str(s)?;
        if c.weights.len() != c.k * c.p {
            return Err(Error::Dimension { expected: c.k * c.p, got: c.weights.len() });
        }
        Ok(Self { k: c.k, p: c.p, w: c.weights, bias: c.bias })
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn logits(model: &LinearModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.p {
        return Err(Error::Dimension { expected: model.p, got: x.len() });
    }
    Ok(logits_unchecked(model, x))
}

pub(crate) fn logits_unchecked(model: &LinearModel, x: &[f64]) -> Vec<f64> {
    (0..model.k)
        .map(|c| dot(model.row(c), x) + model.bias.as_ref().map_or(0.0, |b| b[c]))
        .collect()
}

/// softmax(v / τ) with max subtraction.
pub fn softmax_temp(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out, tau);
    Ok(out)
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    softmax_in_place(&mut out, 1.0);
    out
}

pub(crate) fn softmax_in_place(v: &mut [f64], tau: f64) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for e in v.iter_mut() {
        *e = ((*e - m) / tau).exp();
        s += *e;
    }
    for e in v.iter_mut() {
        *e /= s;
    }
}

pub fn shift_logits(v: &[f64], log_w: &[f64]) -> Result<Vec<f64>> {
    if v.len() != log_w.len() {
        return Err(Error::Dimension { expected: v.len(), got: log_w.len() });
    }
    Ok(v.iter().zip(log_w).map(|(a, b)| a + b).collect())
}

pub fn cross_entropy(p: &[f64], y: usize) -> f64 {
    -p[y].max(PROB_FLOOR).ln()
}

pub fn predict(model: &LinearModel, x: &[f64]) -> usize {
    argmax(&logits_unchecked(model, x))
}

/// Mean cross-entropy plus (λ/2)‖W‖²; the bias is not penalized.
pub fn erm_loss(model: &LinearModel, data: &Dataset, lambda: f64) -> f64 {
    let mut total = 0.0;
    for e in &data.examples {
        let p = softmax(&logits_unchecked(model, &e.x));
        total += cross_entropy(&p, e.y);
    }
    total / data.len().max(1) as f64 + 0.5 * lambda * model.weight_sq_norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        let b: f64 = self.bias.as_ref().map_or(0.0, |b| b.iter().map(|v| v * v).sum());
        (self.w.iter().map(|v| v * v).sum::<f64>() + b).sqrt()
    }
}

/// (1/n) Σᵢ (softmax(Wxᵢ) − onehot(yᵢ)) xᵢᵀ + λW.
pub fn erm_grad(model: &LinearModel, data: &Dataset, lambda: f64) -> Gradient {
    let n = data.len().max(1) as f64;
    let mut gw = vec![0.0; model.k * model.p];
    let mut gb = model.bias.as_ref().map(|_| vec![0.0; model.k]);
    for e in &data.examples {
        let mut r = softmax(&logits_unchecked(model, &e.x));
        r[e.y] -= 1.0;
        for c in 0..model.k {
            let coef = r[c] / n;
            for (g, xv) in gw[c * model.p..(c + 1) * model.p].iter_mut().zip(&e.x) {
                *g += coef * xv;
            }
            if let Some(b) = gb.as_mut() {
                b[c] += coef;
            }
        }
    }
    for (g, w) in gw.iter_mut().zip(&model.w) {
        *g += lambda * w;
    }
    Gradient { w: gw, bias: gb }
}
