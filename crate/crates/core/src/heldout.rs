//! Held-out probabilities from a twin probe and the calibration that turns
//! them into MAT's per-example logit shifts.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmodel::softmax_in_place;
use crate::matrix::{dot, Mat};
use crate::synthdata::{Dataset, SeededRng};
use crate::training::{fit_inner, Design, Monitor, Objective, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub twin: TrainConfig,
    /// Replace labels by confident twin predictions during twin training.
    pub label_flip: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { twin: TrainConfig { lambda: 0.01, ..TrainConfig::default() }, label_flip: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeldOutProbe {
    /// n×K logits, row i from the twin that did not train on example i.
    pub logits: Mat,
    /// Twin (0 or 1) that produced each row.
    pub twin: Vec<u8>,
    /// Half (0 or 1) each example was trained in.
    pub half: Vec<u8>,
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    pub config: ProbeConfig,
}

impl HeldOutProbe {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut h = vec!["index".to_string(), "id".into(), "y".into()];
        h.extend((0..self.logits.cols).map(|c| format!("logit_{c}")));
        h.push("twin".into());
        w.write_record(&h)?;
        for i in 0..self.logits.rows {
            let mut r = vec![i.to_string(), self.ids[i].to_string(), self.labels[i].to_string()];
            r.extend(self.logits.row(i).iter().map(|v| format!("{v:?}")));
            r.push(self.twin[i].to_string());
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Splits the training set into random halves, trains one ERM twin per half
/// and gives every example the logits of the twin that never saw it.
pub fn xrm_probe(train: &Dataset, cfg: &ProbeConfig, rng: &mut SeededRng) -> Result<HeldOutProbe> {
    let ids: Vec<u64> = train.examples.iter().map(|e| e.id).collect();
    xrm_probe_design(&Design::new(train.design()), &train.labels(), &ids, train.num_classes(), cfg, rng)
}

pub(crate) fn xrm_probe_design(
    design: &Design,
    labels: &[usize],
    ids: &[u64],
    k: usize,
    cfg: &ProbeConfig,
    rng: &mut SeededRng,
) -> Result<HeldOutProbe> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::Contract("the probe needs at least two examples".into()));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut halves = [perm[..n / 2].to_vec(), perm[n / 2..].to_vec()];
    for h in halves.iter_mut() {
        h.sort_unstable();
    }
    let mut half = vec![0u8; n];
    for &i in &halves[1] {
        half[i] = 1;
    }
    let mut models = Vec::with_capacity(2);
    for (t, idx) in halves.iter().enumerate() {
        let sub_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let first = sub_labels[0];
        if sub_labels.iter().all(|&y| y == first) {
            return Err(Error::DegenerateHalf(format!("half {t} contains only class {first}")));
        }
        let sub = design.subset(idx);
        let obj = Objective::plain(&sub_labels, k);
        let (m, _) = fit_inner(&sub, &obj, &sub_labels, &cfg.twin, &Monitor::default(), rng, cfg.label_flip)?;
        models.push(m);
    }
    let mut logits = Mat::zeros(n, k);
    let mut twin = vec![0u8; n];
    for i in 0..n {
        let other = 1 - half[i] as usize;
        let m = &models[other];
        for c in 0..k {
            logits.set(i, c, dot(m.row(c), design.x.row(i)));
        }
        twin[i] = other as u8;
    }
    Ok(HeldOutProbe { logits, twin, half, ids: ids.to_vec(), labels: labels.to_vec(), config: cfg.clone() })
}

/// Row-wise softmax(f ʰᵒ / τ).
pub fn heldout_probs(probe: &HeldOutProbe, tau: f64) -> Result<Mat> {
    probs_from_logits(&probe.logits, tau)
}

pub fn probs_from_logits(logits: &Mat, tau: f64) -> Result<Mat> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let mut p = logits.clone();
    for i in 0..p.rows {
        softmax_in_place(p.row_mut(i), tau);
    }
    Ok(p)
}

/// Joint table: entry (y, yʰᵒ) = (1/n) Σ_{i: yᵢ = y} p(yʰᵒ | xᵢ).
pub fn calibration_joint(probs: &Mat, labels: &[usize]) -> Result<Mat> {
    if probs.rows != labels.len() {
        return Err(Error::Dimension { expected: probs.rows, got: labels.len() });
    }
    let k = probs.cols;
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Contract(format!("label {bad} outside {k} classes")));
    }
    let n = labels.len().max(1) as f64;
    let mut joint = Mat::zeros(k, k);
    for (i, &y) in labels.iter().enumerate() {
        for (c, p) in probs.row(i).iter().enumerate() {
            joint.data[y * k + c] += p;
        }
    }
    for v in joint.data.iter_mut() {
        *v /= n;
    }
    Ok(joint)
}

/// Normalizes each column (fixed yʰᵒ) over y; empty columns become uniform.
pub fn calibration_matrix(joint: &Mat) -> Mat {
    let k = joint.rows;
    let mut cond = Mat::zeros(k, k);
    for c in 0..joint.cols {
        let mass: f64 = (0..k).map(|y| joint.get(y, c)).sum();
        for y in 0..k {
            cond.set(y, c, if mass > 0.0 { joint.get(y, c) / mass } else { 1.0 / k as f64 });
        }
    }
    cond
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMatrix {
    /// Rows indexed by y, columns by yʰᵒ.
    pub joint: Mat,
    pub conditional: Mat,
}

impl CalibrationMatrix {
    pub fn from_probs(probs: &Mat, labels: &[usize]) -> Result<Self> {
        let joint = calibration_joint(probs, labels)?;
        let conditional = calibration_matrix(&joint);
        Ok(Self { joint, conditional })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedProbs {
    /// n×K rows p̄ʰᵒ(y | xᵢ).
    pub probs: Mat,
}

impl CalibratedProbs {
    pub fn uniform(n: usize, k: usize) -> Self {
        Self { probs: Mat::from_vec(n, k, vec![1.0 / k as f64; n * k]).expect("shape") }
    }
}

/// p̄ʰᵒ(y | xᵢ) = Σ_{yʰᵒ} p(y | yʰᵒ) p(yʰᵒ | xᵢ).
pub fn calibrated_heldout(probs: &Mat, conditional: &Mat) -> Result<CalibratedProbs> {
    if conditional.cols != probs.cols || conditional.rows != probs.cols {
        return Err(Error::Dimension { expected: probs.cols, got: conditional.cols });
    }
    let k = probs.cols;
    let mut out = Mat::zeros(probs.rows, k);
    for i in 0..probs.rows {
        let pi = probs.row(i);
        for y in 0..k {
            out.set(i, y, dot(conditional.row(y), pi));
        }
    }
    Ok(CalibratedProbs { probs: out })
}

/// Probe → temperature softmax → calibration → calibrated probabilities.
pub fn mat_inputs(probe: &HeldOutProbe, tau: f64) -> Result<(CalibrationMatrix, CalibratedProbs)> {
    let probs = heldout_probs(probe, tau)?;
    let cal = CalibrationMatrix::from_probs(&probs, &probe.labels)?;
    let pbar = calibrated_heldout(&probs, &cal.conditional)?;
    Ok((cal, pbar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{gen_classification, seeded_rng, ClassificationConfig, Split};
    use proptest::prelude::*;

    fn fixture() -> (Mat, Vec<usize>) {
        let probs = Mat::from_rows(&[vec![0.8, 0.2], vec![0.6, 0.4], vec![0.3, 0.7], vec![0.1, 0.9]]).unwrap();
        (probs, vec![0, 0, 1, 1])
    }

    #[test]
    fn fixture_joint_conditional_and_calibrated() {
        let (probs, labels) = fixture();
        let joint = calibration_joint(&probs, &labels).unwrap();
        let want = [0.35, 0.15, 0.10, 0.40];
        for (a, b) in joint.data.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let cond = calibration_matrix(&joint);
        let want_c = [0.35 / 0.45, 0.15 / 0.55, 0.10 / 0.45, 0.40 / 0.55];
        for (a, b) in cond.data.iter().zip(want_c) {
            assert!((a - b).abs() < 1e-12);
        }
        let cal = calibrated_heldout(&probs, &cond).unwrap();
        let r0 = cal.probs.row(0);
        assert!((r0[0] - (0.8 * (0.35 / 0.45) + 0.2 * (0.15 / 0.55))).abs() < 1e-12);
        assert!((r0[1] - (0.8 * (0.10 / 0.45) + 0.2 * (0.40 / 0.55))).abs() < 1e-12);
    }

    #[test]
    fn one_hot_probs_give_diagonal_joint() {
        let probs = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let joint = calibration_joint(&probs, &[0, 1, 1]).unwrap();
        assert_eq!(joint.data, vec![1.0 / 3.0, 0.0, 0.0, 2.0 / 3.0]);
        assert_eq!(calibration_matrix(&joint), Mat::identity(2));
    }

    #[test]
    fn empty_column_is_uniform() {
        let joint = Mat::from_rows(&[vec![0.5, 0.0], vec![0.5, 0.0]]).unwrap();
        let c = calibration_matrix(&joint);
        assert_eq!(c.get(0, 1), 0.5);
        assert_eq!(c.get(1, 1), 0.5);
    }

    #[test]
    fn identity_and_uniform_conditionals() {
        let (probs, _) = fixture();
        assert_eq!(calibrated_heldout(&probs, &Mat::identity(2)).unwrap().probs, probs);
        let u = Mat::from_vec(2, 2, vec![0.5; 4]).unwrap();
        let cal = calibrated_heldout(&probs, &u).unwrap();
        assert!(cal.probs.data.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(calibrated_heldout(&probs, &Mat::identity(3)).is_err());
    }

    #[test]
    fn heldout_probs_cases() {
        let z = Mat::zeros(3, 2);
        let probe = HeldOutProbe {
            logits: z,
            twin: vec![0; 3],
            half: vec![1; 3],
            ids: vec![0, 1, 2],
            labels: vec![0, 1, 0],
            config: ProbeConfig::default(),
        };
        assert!(heldout_probs(&probe, 1.0).unwrap().data.iter().all(|&v| v == 0.5));
        let sharp = probs_from_logits(&Mat::from_rows(&[vec![0.3, 0.2]]).unwrap(), 0.001).unwrap();
        assert!(sharp.get(0, 0) > 1.0 - 1e-4);
        assert!(heldout_probs(&probe, 0.0).is_err());
    }

    #[test]
    fn misaligned_labels_rejected() {
        let (probs, _) = fixture();
        assert!(calibration_joint(&probs, &[0, 1]).is_err());
        assert!(calibration_joint(&probs, &[0, 1, 2, 0]).is_err());
    }

    #[test]
    fn probe_provenance_and_halves() {
        let c = ClassificationConfig { n: 60, d: 20, ..Default::default() };
        let ds = gen_classification(&c, Split::Train, &mut seeded_rng(1)).unwrap();
        let cfg = ProbeConfig { twin: TrainConfig { steps: 50, lr: 0.02, ..Default::default() }, label_flip: false };
        let probe = xrm_probe(&ds, &cfg, &mut seeded_rng(2)).unwrap();
        assert_eq!(probe.logits.rows, 60);
        assert!(probe.twin.iter().zip(&probe.half).all(|(t, h)| t != h));
        assert_eq!(probe.half.iter().filter(|&&h| h == 0).count(), 30);
        let again = xrm_probe(&ds, &cfg, &mut seeded_rng(2)).unwrap();
        assert_eq!(probe, again);
    }

    #[test]
    fn single_class_half_is_an_error() {
        let ds = Dataset::from_xy(vec![vec![1.0]; 4], vec![0, 0, 0, 1], Split::Train).unwrap();
        let mut hit = false;
        for seed in 0..20 {
            if let Err(Error::DegenerateHalf(_)) = xrm_probe(&ds, &ProbeConfig::default(), &mut seeded_rng(seed)) {
                hit = true;
            }
        }
        assert!(hit);
    }

    /// Label flipping only changes twin training, and is deterministic.
    #[test]
    fn label_flip_runs_deterministically() {
        let c = ClassificationConfig { n: 40, d: 10, ..Default::default() };
        let ds = gen_classification(&c, Split::Train, &mut seeded_rng(3)).unwrap();
        let cfg = ProbeConfig {
            twin: TrainConfig { steps: 200, lr: 0.02, eval_every: 20, ..Default::default() },
            label_flip: true,
        };
        let a = xrm_probe(&ds, &cfg, &mut seeded_rng(4)).unwrap();
        let b = xrm_probe(&ds, &cfg, &mut seeded_rng(4)).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn rows_and_columns_stay_stochastic(raw in proptest::collection::vec(-5f64..5.0, 6..40), tau in 0.05f64..3.0) {
            let n = raw.len() / 2;
            let logits = Mat::from_vec(n, 2, raw[..2 * n].to_vec()).unwrap();
            let labels: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % 2).collect();
            let probs = probs_from_logits(&logits, tau).unwrap();
            for i in 0..n {
                prop_assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let cal = CalibrationMatrix::from_probs(&probs, &labels).unwrap();
            prop_assert!((cal.joint.data.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(cal.joint.data.iter().all(|&v| v >= 0.0));
            for c in 0..2 {
                prop_assert!(((0..2).map(|y| cal.conditional.get(y, c)).sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let pbar = calibrated_heldout(&probs, &cal.conditional).unwrap();
            for i in 0..n {
                prop_assert!((pbar.probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(pbar.probs.row(i).iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn permutation_equivariance(raw in proptest::collection::vec(-5f64..5.0, 8..30), seed in any::<u64>()) {
            let n = raw.len() / 2;
            let probs = probs_from_logits(&Mat::from_vec(n, 2, raw[..2 * n].to_vec()).unwrap(), 1.0).unwrap();
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut seeded_rng(seed));
            let pp = probs.select_rows(&perm);
            let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
            let a = CalibrationMatrix::from_probs(&probs, &labels).unwrap();
            let b = CalibrationMatrix::from_probs(&pp, &pl).unwrap();
            for (x, y) in a.joint.data.iter().zip(&b.joint.data) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let ca = calibrated_heldout(&probs, &a.conditional).unwrap();
            let cb = calibrated_heldout(&pp, &b.conditional).unwrap();
            for (r, &i) in perm.iter().enumerate() {
                for c in 0..2 {
                    prop_assert!((cb.probs.get(r, c) - ca.probs.get(i, c)).abs() < 1e-12);
                }
            }
        }

        /// At W = 0 the shifted loss of example i is −log p̄(yᵢ|xᵢ). When the
        /// calibration is informative, a probe that is more confident in the
        /// true label makes the example easier.
        #[test]
        fn shifted_loss_follows_probe_confidence(raw in proptest::collection::vec(0.01f64..0.99, 8..40)) {
            let n = raw.len();
            let logits = Mat::from_vec(n, 2, raw.iter().flat_map(|&p| [p.ln(), (1.0 - p).ln()]).collect()).unwrap();
            let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let probs = probs_from_logits(&logits, 1.0).unwrap();
            let cal = CalibrationMatrix::from_probs(&probs, &labels).unwrap();
            prop_assume!(cal.conditional.get(0, 0) > cal.conditional.get(0, 1));
            let pbar = calibrated_heldout(&probs, &cal.conditional).unwrap();
            let loss = |i: usize| -pbar.probs.get(i, 0).max(1e-12).ln();
            for i in (0..n).step_by(2) {
                for j in (0..n).step_by(2) {
                    if probs.get(i, 0) > probs.get(j, 0) {
                        prop_assert!(loss(i) <= loss(j) + 1e-12);
                    }
                }
            }
        }
    }
}
