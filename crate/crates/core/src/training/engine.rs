//! Full-batch / minibatch gradient descent shared by every objective.
//!
//! Two parameterizations are supported. The primal one stores W (and an
//! optional bias) directly. The Gram one stores coefficients C with W = C·X;
//! it is exact for bias-free models started at zero because every GD update
//! lies in the row span of X, and it costs O(K·n²) per step instead of
//! O(K·n·p).

use rand::seq::SliceRandom;

use super::{Batch, GroupMetrics, Monitor, Schedule, TrainConfig, Trace, TraceRecord};
use crate::error::{Error, Result};
use crate::linmodel::{softmax_in_place, LinearModel, PROB_FLOOR};
use crate::matrix::{argmax, axpy, dot, Mat};
use crate::synthdata::SeededRng;

/// Per-example terms of the training loss
/// `(1/n) Σ wᵢ · CE(softmax(f(xᵢ) + sᵢ), yᵢ) + (λ/2)‖W‖²`.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub labels: &'a [usize],
    pub k: usize,
    pub weights: Option<&'a [f64]>,
    /// n×K additive logit shifts.
    pub shifts: Option<&'a Mat>,
}

impl<'a> Objective<'a> {
    pub fn plain(labels: &'a [usize], k: usize) -> Self {
        Self { labels, k, weights: None, shifts: None }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    /// Fills `resid` with wᵢ(softmax(fᵢ + sᵢ) − e_{yᵢ}) and returns the summed
    /// weighted cross-entropy (not divided by n).
    pub fn residuals(&self, logits: &[f64], resid: &mut [f64]) -> f64 {
        let k = self.k;
        let mut total = 0.0;
        for i in 0..self.n() {
            let r = &mut resid[i * k..(i + 1) * k];
            r.copy_from_slice(&logits[i * k..(i + 1) * k]);
            if let Some(s) = self.shifts {
                for (rc, sc) in r.iter_mut().zip(s.row(i)) {
                    *rc += sc;
                }
            }
            softmax_in_place(r, 1.0);
            let y = self.labels[i];
            let w = self.weights.map_or(1.0, |w| w[i]);
            total += -w * r[y].max(PROB_FLOOR).ln();
            r[y] -= 1.0;
            if w != 1.0 {
                for rc in r.iter_mut() {
                    *rc *= w;
                }
            }
        }
        total
    }
}

/// Training data in one of the two parameterizations.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: Mat,
    pub gram: Option<Mat>,
}

impl Design {
    pub fn new(x: Mat) -> Self {
        Self { x, gram: None }
    }

    pub fn with_gram(x: Mat) -> Self {
        let g = x.gram();
        Self { x, gram: Some(g) }
    }

    /// Rows `idx` of X and the matching principal sub-matrix of the Gram.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let gram = self.gram.as_ref().map(|g| {
            let m = idx.len();
            let mut s = Mat::zeros(m, m);
            for (a, &i) in idx.iter().enumerate() {
                let row = g.row(i);
                for (b, &j) in idx.iter().enumerate() {
                    s.data[a * m + b] = row[j];
                }
            }
            s
        });
        Self { x: self.x.select_rows(idx), gram }
    }
}

pub(crate) trait Backend {
    fn rows(&self) -> usize;
    fn dim(&self) -> usize;
    /// n×K logits of the current parameters.
    fn logits(&self, out: &mut [f64]);
    /// W ← (1 − decay)·W − scale·Rᵀ X, bias ← bias − scale·Σ R.
    fn step(&mut self, resid: &[f64], scale: f64, decay: f64);
    fn sq_norm(&self) -> f64;
    fn model(&self) -> LinearModel;
}

pub(crate) struct Primal {
    x: Mat,
    w: Vec<f64>,
    bias: Option<Vec<f64>>,
    k: usize,
}

impl Primal {
    pub fn new(x: Mat, k: usize, fit_bias: bool) -> Self {
        let p = x.cols;
        Self { x, w: vec![0.0; k * p], bias: fit_bias.then(|| vec![0.0; k]), k }
    }
}

impl Backend for Primal {
    fn rows(&self) -> usize {
        self.x.rows
    }

    fn dim(&self) -> usize {
        self.x.cols
    }

    fn logits(&self, out: &mut [f64]) {
        let p = self.x.cols;
        for i in 0..self.x.rows {
            let xi = self.x.row(i);
            for c in 0..self.k {
                let b = self.bias.as_ref().map_or(0.0, |b| b[c]);
                out[i * self.k + c] = dot(&self.w[c * p..(c + 1) * p], xi) + b;
            }
        }
    }

    fn step(&mut self, resid: &[f64], scale: f64, decay: f64) {
        let p = self.x.cols;
        if decay != 0.0 {
            for w in self.w.iter_mut() {
                *w *= 1.0 - decay;
            }
        }
        for i in 0..self.x.rows {
            let xi = self.x.row(i);
            for c in 0..self.k {
                let r = resid[i * self.k + c];
                if r != 0.0 {
                    axpy(-scale * r, xi, &mut self.w[c * p..(c + 1) * p]);
                }
            }
        }
        if let Some(b) = self.bias.as_mut() {
            for c in 0..self.k {
                let s: f64 = (0..self.x.rows).map(|i| resid[i * self.k + c]).sum();
                b[c] -= scale * s;
            }
        }
    }

    fn sq_norm(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum()
    }

    fn model(&self) -> LinearModel {
        LinearModel { k: self.k, p: self.x.cols, w: self.w.clone(), bias: self.bias.clone() }
    }
}

pub(crate) struct GramBackend {
    x: Mat,
    g: Mat,
    /// K×n coefficients, W = C·X.
    c: Vec<f64>,
    k: usize,
}

impl GramBackend {
    pub fn new(x: Mat, g: Mat, k: usize) -> Self {
        let n = x.rows;
        Self { x, g, c: vec![0.0; k * n], k }
    }
}

impl Backend for GramBackend {
    fn rows(&self) -> usize {
        self.x.rows
    }

    fn dim(&self) -> usize {
        self.x.cols
    }

    fn logits(&self, out: &mut [f64]) {
        let n = self.x.rows;
        for i in 0..n {
            let gi = self.g.row(i);
            for c in 0..self.k {
                out[i * self.k + c] = dot(&self.c[c * n..(c + 1) * n], gi);
            }
        }
    }

    fn step(&mut self, resid: &[f64], scale: f64, decay: f64) {
        let n = self.x.rows;
        for c in 0..self.k {
            for i in 0..n {
                let v = &mut self.c[c * n + i];
                *v = *v * (1.0 - decay) - scale * resid[i * self.k + c];
            }
        }
    }

    fn sq_norm(&self) -> f64 {
        let n = self.x.rows;
        let mut s = 0.0;
        let mut tmp = vec![0.0; n];
        for c in 0..self.k {
            let cc = &self.c[c * n..(c + 1) * n];
            for (i, t) in tmp.iter_mut().enumerate() {
                *t = dot(cc, self.g.row(i));
            }
            s += dot(cc, &tmp);
        }
        s
    }

    fn model(&self) -> LinearModel {
        let (n, p) = (self.x.rows, self.x.cols);
        let mut w = vec![0.0; self.k * p];
        for c in 0..self.k {
            for i in 0..n {
                let coef = self.c[c * n + i];
                if coef != 0.0 {
                    axpy(coef, self.x.row(i), &mut w[c * p..(c + 1) * p]);
                }
            }
        }
        LinearModel { k: self.k, p, w, bias: None }
    }
}

pub(crate) fn make_backend(design: &Design, k: usize, cfg: &TrainConfig) -> Result<Box<dyn Backend>> {
    use super::Solver;
    let gram_ok = !cfg.fit_bias;
    let use_gram = match cfg.solver {
        Solver::Primal => false,
        Solver::Gram => {
            if !gram_ok {
                return Err(Error::Config("the Gram solver does not support a bias".into()));
            }
            true
        }
        Solver::Auto => gram_ok && design.x.cols > design.x.rows,
    };
    Ok(if use_gram {
        let g = design.gram.clone().unwrap_or_else(|| design.x.gram());
        Box::new(GramBackend::new(design.x.clone(), g, k))
    } else {
        Box::new(Primal::new(design.x.clone(), k, cfg.fit_bias))
    })
}

/// Group accuracies from a logits table.
pub(crate) fn metrics_from_logits(logits: &[f64], k: usize, labels: &[usize], groups: &[usize]) -> GroupMetrics {
    let correct: Vec<bool> =
        labels.iter().enumerate().map(|(i, &y)| argmax(&logits[i * k..(i + 1) * k]) == y).collect();
    GroupMetrics::from_correct(&correct, groups)
}

/// Bias amplification: each label is replaced by the model's prediction with
/// probability equal to the model's confidence, starting from the originals.
fn relabel(logits: &[f64], k: usize, original: &[usize], labels: &mut [usize], rng: &mut SeededRng) {
    use rand::Rng;
    for (i, slot) in labels.iter_mut().enumerate() {
        let mut p = logits[i * k..(i + 1) * k].to_vec();
        softmax_in_place(&mut p, 1.0);
        let pred = argmax(&p);
        *slot = if rng.random::<f64>() < p[pred] { pred } else { original[i] };
    }
}

/// Runs gradient descent from zero. With a validation set, the returned
/// model is the snapshot with the highest validation worst-group accuracy
/// (earliest on ties) and training stops after `patience` evaluations
/// without a strict improvement.
pub(crate) fn descend(
    backend: &mut dyn Backend,
    obj: &Objective,
    groups: &[usize],
    cfg: &TrainConfig,
    monitor: &Monitor,
    rng: &mut SeededRng,
    flip_labels: bool,
) -> Result<(LinearModel, Trace)> {
    let n = backend.rows();
    let k = obj.k;
    if n == 0 {
        return Err(Error::Contract("empty training set".into()));
    }
    if obj.n() != n || groups.len() != n {
        return Err(Error::Dimension { expected: n, got: obj.n().min(groups.len()) });
    }
    cfg.validate()?;
    let mut logits = vec![0.0; n * k];
    let mut resid = vec![0.0; n * k];
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut trace = Trace::default();
    let mut best: Option<(f64, LinearModel, usize)> = None;
    let mut since_best = 0usize;

    let mut labels = obj.labels.to_vec();
    for step in 0..=cfg.steps {
        backend.logits(&mut logits);
        if flip_labels && step > 0 && step % cfg.eval_every == 0 {
            relabel(&logits, k, obj.labels, &mut labels, rng);
        }
        let obj = &Objective { labels: &labels, ..*obj };
        let data_loss = obj.residuals(&logits, &mut resid) / n as f64;
        if !data_loss.is_finite() || !logits.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { step, loss: data_loss });
        }
        let is_eval = step % cfg.eval_every == 0 || step == cfg.steps;
        if is_eval {
            let sq = backend.sq_norm();
            let loss = data_loss + 0.5 * cfg.lambda * sq;
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            let needs_model = monitor.eval.is_some() || monitor.valid.is_some() || (backend.dim() == 2 && k == 2);
            let model = needs_model.then(|| backend.model());
            let mut rec = TraceRecord {
                step,
                loss,
                train: metrics_from_logits(&logits, k, obj.labels, groups),
                eval: None,
                valid_worst: None,
                w_norm: sq.sqrt(),
                w2d: None,
                b2d: None,
            };
            if let Some(m) = &model {
                if m.p == 2 && m.k == 2 {
                    let v = m.binary_direction();
                    rec.w2d = Some([v[0], v[1]]);
                    rec.b2d = m.bias.as_ref().map(|b| b[1] - b[0]);
                }
                if let Some(eval) = monitor.eval {
                    rec.eval = Some(super::evaluate_groups(m, eval)?);
                }
            }
            let mut stop = false;
            if let (Some(v), Some(m)) = (&monitor.valid, model) {
                let worst = super::evaluate_with_groups(&m, v.data, &v.groups)?.worst;
                rec.valid_worst = Some(worst);
                if best.as_ref().is_none_or(|(b, _, _)| worst > *b) {
                    best = Some((worst, m, step));
                    since_best = 0;
                } else {
                    since_best += 1;
                    stop = since_best >= cfg.patience;
                }
            }
            trace.records.push(rec);
            if stop {
                trace.stopped_early = true;
                break;
            }
        }
        if step == cfg.steps {
            break;
        }
        let mut lr = cfg.lr;
        if cfg.schedule == Schedule::InverseLoss {
            lr /= data_loss.max(1e-300);
        }
        match cfg.batch {
            Batch::Full => backend.step(&resid, lr / n as f64, lr * cfg.lambda),
            Batch::Minibatch { size } => {
                let size = size.clamp(1, n);
                if cursor + size > n {
                    order.shuffle(rng);
                    cursor = 0;
                }
                let mut masked = vec![0.0; n * k];
                for &i in &order[cursor..cursor + size] {
                    masked[i * k..(i + 1) * k].copy_from_slice(&resid[i * k..(i + 1) * k]);
                }
                cursor += size;
                backend.step(&masked, lr / size as f64, lr * cfg.lambda);
            }
        }
    }
    match best {
        Some((_, m, step)) => {
            trace.best_step = Some(step);
            Ok((m, trace))
        }
        None => Ok((backend.model(), trace)),
    }
}
