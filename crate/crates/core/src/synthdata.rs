//! Synthetic datasets: the spurious-correlation classification setup (one or
//! two spurious coordinates), the noisy regression setup, and the 2-D
//! Gaussian mixture used for the reweight-vs-shift experiment.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Mat;

pub type SeededRng = ChaCha20Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Test-time correlation between attribute and label.
pub const RHO_TEST: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationConfig {
    pub n: usize,
    pub d: usize,
    pub rho_train: f64,
    pub rho_test: f64,
    pub gamma: f64,
    pub sigma_y: f64,
    pub sigma_a: f64,
    pub sigma_eps: f64,
    pub num_spurious: usize,
    pub seed: u64,
}

impl Default for ClassificationConfig {
    fn default() -> Self {
        Self {
            n: 400,
            d: 1000,
            rho_train: 0.9,
            rho_test: RHO_TEST,
            gamma: 5.0,
            sigma_y: 0.1,
            sigma_a: 0.1,
            sigma_eps: 0.5,
            num_spurious: 1,
            seed: 0,
        }
    }
}

impl ClassificationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.rho_train > 0.0 && self.rho_train < 1.0) {
            return bad("rho_train must lie in (0, 1)");
        }
        if self.rho_test != RHO_TEST {
            return bad("rho_test is fixed at 0.5");
        }
        if !(self.gamma > 0.0) || !(self.sigma_y > 0.0) || !(self.sigma_a > 0.0) {
            return bad("gamma, sigma_y and sigma_a must be positive");
        }
        if !(self.sigma_eps >= 0.0) || !self.sigma_eps.is_finite() {
            return bad("sigma_eps must be finite and non-negative");
        }
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if !(1..=2).contains(&self.num_spurious) {
            return bad("num_spurious must be 1 or 2");
        }
        Ok(())
    }

    /// Input dimensionality: core coordinate, spurious coordinates, ε.
    pub fn dim(&self) -> usize {
        1 + self.num_spurious + self.d
    }

    pub fn num_groups(&self) -> usize {
        1 << (1 + self.num_spurious)
    }

    pub fn rho(&self, split: Split) -> f64 {
        match split {
            Split::Train | Split::Valid => self.rho_train,
            Split::Test => self.rho_test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    /// Stable id assigned at generation; survives subsetting.
    pub id: u64,
    pub x: Vec<f64>,
    pub y: usize,
    pub a: Vec<u8>,
    pub group: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Classification(ClassificationConfig),
    Gaussian2d(Gaussian2dConfig),
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub split: Split,
    pub source: DataSource,
}

impl Dataset {
    /// Builds a dataset from raw rows; attributes default to none and the
    /// group is the label.
    pub fn from_xy(x: Vec<Vec<f64>>, y: Vec<usize>, split: Split) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension { expected: x.len(), got: y.len() });
        }
        let examples = x
            .into_iter()
            .zip(y)
            .enumerate()
            .map(|(i, (x, y))| Example { id: i as u64, x, y, a: Vec::new(), group: y })
            .collect();
        let ds = Self { examples, split, source: DataSource::Custom };
        ds.check_dims()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.x.len())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.y).collect()
    }

    pub fn groups(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.group).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.examples.iter().map(|e| e.y + 1).max().unwrap_or(0).max(2)
    }

    pub fn design(&self) -> Mat {
        let p = self.dim();
        let mut data = Vec::with_capacity(self.len() * p);
        for e in &self.examples {
            data.extend_from_slice(&e.x);
        }
        Mat { rows: self.len(), cols: p, data }
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            examples: idx.iter().map(|&i| self.examples[i].clone()).collect(),
            split: self.split,
            source: self.source.clone(),
        }
    }

    /// Copy without example `i`; ids of the remaining examples are unchanged.
    pub fn without(&self, i: usize) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&j| j != i).collect();
        self.subset(&idx)
    }

    pub fn position_of(&self, id: u64) -> Option<usize> {
        self.examples.iter().position(|e| e.id == id)
    }

    pub fn group_counts(&self) -> std::collections::BTreeMap<usize, usize> {
        let mut m = std::collections::BTreeMap::new();
        for e in &self.examples {
            *m.entry(e.group).or_insert(0) += 1;
        }
        m
    }

    /// Examples whose (first) attribute agrees with the label.
    pub fn is_majority(e: &Example) -> bool {
        e.a.iter().all(|&a| a as usize == e.y)
    }

    fn check_dims(&self) -> Result<()> {
        let p = self.dim();
        for e in &self.examples {
            if e.x.len() != p {
                return Err(Error::Dimension { expected: p, got: e.x.len() });
            }
        }
        Ok(())
    }
}

/// Maps a {0,1} label or attribute to ±1.
#[inline]
pub fn to_pm(v: usize) -> f64 {
    if v == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Group id: label as the most significant bit, then the attributes in order.
pub fn group_of(y: usize, a: &[u8]) -> usize {
    a.iter().fold(y, |acc, &ai| acc * 2 + ai as usize)
}

pub fn decode_group(group: usize, num_attr: usize) -> (usize, Vec<u8>) {
    let mut a = vec![0u8; num_attr];
    for (k, slot) in a.iter_mut().enumerate() {
        *slot = ((group >> (num_attr - 1 - k)) & 1) as u8;
    }
    (group >> num_attr, a)
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gen_classification(
    cfg: &ClassificationConfig,
    split: Split,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    cfg.validate()?;
    let rho = cfg.rho(split);
    let mut examples = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let y = usize::from(rng.random_bool(0.5));
        let a: Vec<u8> = (0..cfg.num_spurious)
            .map(|_| if rng.random_bool(rho) { y as u8 } else { 1 - y as u8 })
            .collect();
        let mut x = Vec::with_capacity(cfg.dim());
        x.push(to_pm(y) + cfg.sigma_y * normal(rng));
        for &ak in &a {
            x.push(cfg.gamma * to_pm(ak as usize) + cfg.sigma_a * normal(rng));
        }
        for _ in 0..cfg.d {
            let z = normal(rng);
            x.push(if cfg.sigma_eps == 0.0 { 0.0 } else { cfg.sigma_eps * z });
        }
        let group = group_of(y, &a);
        examples.push(Example { id: i as u64, x, y, a, group });
    }
    Ok(Dataset { examples, split, source: DataSource::Classification(cfg.clone()) })
}

pub fn gen_multi_spurious(
    cfg: &ClassificationConfig,
    split: Split,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    if cfg.num_spurious != 2 {
        return Err(Error::Config(format!(
            "multi-spurious generation needs num_spurious = 2, got {}",
            cfg.num_spurious
        )));
    }
    gen_classification(cfg, split, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Gaussian2dConfig {
    pub n: usize,
    /// Class means are ±(offset, offset) before standardization.
    pub offset: f64,
    pub std: f64,
}

impl Default for Gaussian2dConfig {
    fn default() -> Self {
        Self { n: 100, offset: 1.0, std: 0.5 }
    }
}

pub fn gen_gaussian_2d(n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    gen_gaussian_2d_with(&Gaussian2dConfig { n, ..Default::default() }, rng)
}

/// Two standardized Gaussian classes in ℝ². The attribute marks the flagged
/// half of class 1: the examples nearest class 0 along the mean difference.
pub fn gen_gaussian_2d_with(cfg: &Gaussian2dConfig, rng: &mut impl Rng) -> Result<Dataset> {
    if cfg.n < 4 {
        return Err(Error::Config("gaussian mixture needs n >= 4".into()));
    }
    let n = cfg.n;
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i >= n / 2)).collect();
    labels.shuffle(rng);
    let mut pts: Vec<[f64; 2]> = labels
        .iter()
        .map(|&y| {
            let m = to_pm(y) * cfg.offset;
            [m + cfg.std * normal(rng), m + cfg.std * normal(rng)]
        })
        .collect();
    for c in 0..2 {
        let mean = pts.iter().map(|p| p[c]).sum::<f64>() / n as f64;
        for p in pts.iter_mut() {
            p[c] -= mean;
        }
        let sd = (pts.iter().map(|p| p[c] * p[c]).sum::<f64>() / n as f64).sqrt();
        for p in pts.iter_mut() {
            p[c] /= sd;
        }
    }
    let class_mean = |y: usize| {
        let (mut s, mut k) = ([0.0; 2], 0.0);
        for (p, &l) in pts.iter().zip(&labels) {
            if l == y {
                s[0] += p[0];
                s[1] += p[1];
                k += 1.0;
            }
        }
        [s[0] / k, s[1] / k]
    };
    let (m0, m1) = (class_mean(0), class_mean(1));
    let dir = [m1[0] - m0[0], m1[1] - m0[1]];
    let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
    let proj = |i: usize| pts[i][0] * dir[0] + pts[i][1] * dir[1];
    pos.sort_by(|&i, &j| proj(i).total_cmp(&proj(j)).then(i.cmp(&j)));
    let mut flagged = vec![0u8; n];
    for &i in pos.iter().take(pos.len() / 2) {
        flagged[i] = 1;
    }
    let examples = (0..n)
        .map(|i| {
            let a = vec![flagged[i]];
            Example { id: i as u64, x: pts[i].to_vec(), y: labels[i], group: group_of(labels[i], &a), a }
        })
        .collect();
    Ok(Dataset { examples, split: Split::Train, source: DataSource::Gaussian2d(cfg.clone()) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    /// sin(2π · cycles · x)
    Sine { cycles: f64 },
    /// Coefficients in increasing degree.
    Polynomial { coeffs: Vec<f64> },
}

impl GroundTruth {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            GroundTruth::Sine { cycles } => (2.0 * std::f64::consts::PI * cycles * x).sin(),
            GroundTruth::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionConfig {
    pub n: usize,
    pub d: usize,
    pub sigma_eps: f64,
    pub sigma_xi: f64,
    pub basis_size: usize,
    pub x_range: (f64, f64),
    pub truth: GroundTruth,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            n: 20,
            d: 1_000_000,
            sigma_eps: 1e-4,
            sigma_xi: 0.1,
            basis_size: 25,
            x_range: (-1.0, 1.0),
            truth: GroundTruth::Sine { cycles: 1.0 },
            seed: 0,
        }
    }
}

impl RegressionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_xi >= 0.0) || !(self.sigma_eps >= 0.0) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        if self.basis_size < 1 {
            return Err(Error::Config("basis_size must be at least 1".into()));
        }
        if !(self.x_range.0 < self.x_range.1) {
            return Err(Error::Config("x_range must be a non-empty interval".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDataset {
    /// Rows of length d + 1: `[x_y, ε…]`.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub y_star: Vec<f64>,
    pub config: RegressionConfig,
}

pub fn gen_regression(cfg: &RegressionConfig, rng: &mut impl Rng) -> Result<RegressionDataset> {
    cfg.validate()?;
    let (lo, hi) = cfg.x_range;
    let mut x = Vec::with_capacity(cfg.n);
    let mut y = Vec::with_capacity(cfg.n);
    let mut y_star = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let xy = rng.random_range(lo..hi);
        let ys = cfg.truth.eval(xy);
        let xi = normal(rng);
        let mut row = Vec::with_capacity(cfg.d + 1);
        row.push(xy);
        for _ in 0..cfg.d {
            let z = normal(rng);
            row.push(if cfg.sigma_eps == 0.0 { 0.0 } else { cfg.sigma_eps * z });
        }
        x.push(row);
        y_star.push(ys);
        y.push(if cfg.sigma_xi == 0.0 { ys } else { ys + cfg.sigma_xi * xi });
    }
    Ok(RegressionDataset { x, y, y_star, config: cfg.clone() })
}

// ---------------------------------------------------------------------------
// Serialization

pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let num_attr = ds.examples.first().map_or(0, |e| e.a.len());
    let mut header = vec!["id".to_string(), "group".into(), "y".into()];
    header.extend((0..num_attr).map(|k| format!("a{k}")));
    header.extend((0..ds.dim()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for e in &ds.examples {
        let mut rec = vec![e.id.to_string(), e.group.to_string(), e.y.to_string()];
        rec.extend(e.a.iter().map(|a| a.to_string()));
        rec.extend(e.x.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path, split: Split) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let num_attr = header.iter().filter(|h| h.starts_with('a')).count();
    let mut examples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::Contract(format!("missing column {i}")))
        };
        let parse_err = |s: &str| Error::Contract(format!("bad number {s:?}"));
        let id = field(0)?.parse::<u64>().map_err(|_| parse_err(field(0).unwrap_or("")))?;
        let group = field(1)?.parse::<usize>().map_err(|_| parse_err(field(1).unwrap_or("")))?;
        let y = field(2)?.parse::<usize>().map_err(|_| parse_err(field(2).unwrap_or("")))?;
        let mut a = Vec::with_capacity(num_attr);
        for k in 0..num_attr {
            let s = field(3 + k)?;
            a.push(s.parse::<u8>().map_err(|_| parse_err(s))?);
        }
        let mut x = Vec::with_capacity(rec.len() - 3 - num_attr);
        for s in rec.iter().skip(3 + num_attr) {
            x.push(s.parse::<f64>().map_err(|_| parse_err(s))?);
        }
        examples.push(Example { id, x, y, a, group });
    }
    let ds = Dataset { examples, split, source: DataSource::Custom };
    ds.check_dims()?;
    Ok(ds)
}

#[derive(Debug, Serialize, Deserialize)]
struct BinaryHeader {
    format: String,
    n: usize,
    p: usize,
    num_attr: usize,
    split: Split,
    source: DataSource,
    /// Per-example payload: id u64, y u32, group u32, attrs u8…, x f64… (all LE).
    record_bytes: usize,
}

const BINARY_FORMAT: &str = "spurlab-dataset-v1";

/// One JSON header line, then the little-endian payload.
pub fn write_binary(ds: &Dataset, path: &Path) -> Result<()> {
    let num_attr = ds.examples.first().map_or(0, |e| e.a.len());
    let p = ds.dim();
    let header = BinaryHeader {
        format: BINARY_FORMAT.into(),
        n: ds.len(),
        p,
        num_attr,
        split: ds.split,
        source: ds.source.clone(),
        record_bytes: 16 + num_attr + 8 * p,
    };
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    for e in &ds.examples {
        buf.extend_from_slice(&e.id.to_le_bytes());
        buf.extend_from_slice(&(e.y as u32).to_le_bytes());
        buf.extend_from_slice(&(e.group as u32).to_le_bytes());
        buf.extend_from_slice(&e.a);
        for v in &e.x {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Contract("missing header line".into()))?;
    let header: BinaryHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.format != BINARY_FORMAT {
        return Err(Error::Contract(format!("unknown format {}", header.format)));
    }
    let payload = &bytes[nl + 1..];
    if payload.len() != header.n * header.record_bytes {
        return Err(Error::Dimension { expected: header.n * header.record_bytes, got: payload.len() });
    }
    let u64_at = |b: &[u8]| u64::from_le_bytes(b[..8].try_into().expect("8 bytes"));
    let u32_at = |b: &[u8]| u32::from_le_bytes(b[..4].try_into().expect("4 bytes"));
    let examples = payload
        .chunks_exact(header.record_bytes)
        .map(|r| {
            let a = r[16..16 + header.num_attr].to_vec();
            let xs = &r[16 + header.num_attr..];
            let x = xs
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Example { id: u64_at(r), y: u32_at(&r[8..]) as usize, group: u32_at(&r[12..]) as usize, a, x }
        })
        .collect();
    Ok(Dataset { examples, split: header.split, source: header.source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize) -> ClassificationConfig {
        ClassificationConfig { n, d: 3, ..Default::default() }
    }

    #[test]
    fn symmetric_coin_when_rho_half() {
        let c = ClassificationConfig { rho_train: 0.5, n: 100_000, d: 0, ..Default::default() };
        let ds = gen_classification(&c, Split::Train, &mut seeded_rng(1)).unwrap();
        let agree = ds.examples.iter().filter(|e| Dataset::is_majority(e)).count() as f64;
        assert!((agree / 1e5 - 0.5).abs() < 0.01);
    }

    #[test]
    fn majority_fraction_tracks_rho() {
        let c = ClassificationConfig { n: 10_000, d: 0, ..Default::default() };
        let ds = gen_classification(&c, Split::Train, &mut seeded_rng(2)).unwrap();
        let agree = ds.examples.iter().filter(|e| Dataset::is_majority(e)).count() as f64;
        assert!((agree / 1e4 - 0.9).abs() < 0.01);
    }

    #[test]
    fn zero_sigma_eps_gives_exact_zeros() {
        let c = ClassificationConfig { sigma_eps: 0.0, ..cfg(50) };
        let ds = gen_classification(&c, Split::Train, &mut seeded_rng(3)).unwrap();
        for e in &ds.examples {
            assert_eq!(e.x.len(), 5);
            assert!(e.x[2..].iter().all(|&v| v == 0.0 && v.is_sign_positive()));
        }
    }

    #[test]
    fn marginals_at_large_n() {
        let c = ClassificationConfig { n: 100_000, d: 0, ..Default::default() };
        let ds = gen_classification(&c, Split::Train, &mut seeded_rng(4)).unwrap();
        let n = ds.len() as f64;
        let agree = ds.examples.iter().filter(|e| Dataset::is_majority(e)).count() as f64 / n;
        let std = (0.9f64 * 0.1 / n).sqrt();
        assert!((agree - 0.9).abs() < 3.0 * std);
        for y in 0..2 {
            let xs: Vec<f64> = ds.examples.iter().filter(|e| e.y == y).map(|e| e.x[0]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            assert!((m - to_pm(y)).abs() < 3.0 * c.sigma_y / (xs.len() as f64).sqrt());
        }
        assert_eq!(ds.group_counts().values().sum::<usize>(), ds.len());
    }

    #[test]
    fn test_split_decorrelates_attribute() {
        let c = ClassificationConfig { n: 100_000, d: 0, ..Default::default() };
        let ds = gen_classification(&c, Split::Test, &mut seeded_rng(5)).unwrap();
        let n = ds.len() as f64;
        let ys: Vec<f64> = ds.examples.iter().map(|e| to_pm(e.y)).collect();
        let as_: Vec<f64> = ds.examples.iter().map(|e| to_pm(e.a[0] as usize)).collect();
        let my = ys.iter().sum::<f64>() / n;
        let ma = as_.iter().sum::<f64>() / n;
        let cov = ys.iter().zip(&as_).map(|(y, a)| (y - my) * (a - ma)).sum::<f64>() / n;
        let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
        let va = as_.iter().map(|a| (a - ma).powi(2)).sum::<f64>() / n;
        assert!((cov / (vy * va).sqrt()).abs() < 0.01);
    }

    #[test]
    fn two_spurious_group_sizes() {
        let c = ClassificationConfig { n: 10_000, d: 0, num_spurious: 2, ..Default::default() };
        let ds = gen_multi_spurious(&c, Split::Train, &mut seeded_rng(6)).unwrap();
        let counts = ds.group_counts();
        let class1: usize = (4..8).map(|g| counts.get(&g).copied().unwrap_or(0)).sum();
        let big = counts[&group_of(1, &[1, 1])] as f64 / class1 as f64;
        let small = counts.get(&group_of(1, &[0, 0])).copied().unwrap_or(0) as f64 / class1 as f64;
        assert!((big - 0.81).abs() < 0.03, "big {big}");
        assert!((small - 0.01).abs() < 0.01, "small {small}");
        for g in 4..8 {
            assert!(counts.get(&g).copied().unwrap_or(0) as f64 / class1 as f64 <= big);
        }
    }

    #[test]
    fn two_spurious_balanced_when_rho_half() {
        let c = ClassificationConfig { n: 80_000, d: 0, num_spurious: 2, rho_train: 0.5, ..Default::default() };
        let ds = gen_multi_spurious(&c, Split::Train, &mut seeded_rng(7)).unwrap();
        for &k in ds.group_counts().values() {
            assert!((k as f64 / 80_000.0 - 0.125).abs() < 0.01);
        }
    }

    #[test]
    fn multi_spurious_rejects_single_attribute() {
        assert!(gen_multi_spurious(&cfg(5), Split::Train, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut rng = seeded_rng(0);
        for bad in [
            ClassificationConfig { rho_train: 1.0, ..cfg(5) },
            ClassificationConfig { rho_test: 0.6, ..cfg(5) },
            ClassificationConfig { gamma: 0.0, ..cfg(5) },
            ClassificationConfig { sigma_eps: -1.0, ..cfg(5) },
            ClassificationConfig { num_spurious: 3, ..cfg(5) },
            ClassificationConfig { n: 0, ..cfg(5) },
        ] {
            assert!(matches!(gen_classification(&bad, Split::Train, &mut rng), Err(Error::Config(_))));
        }
    }

    #[test]
    fn group_encoding() {
        assert_eq!(group_of(0, &[0]), 0);
        assert_eq!(group_of(1, &[1]), 3);
        let mut seen = std::collections::BTreeSet::new();
        for y in 0..2 {
            for a1 in 0..2u8 {
                for a2 in 0..2u8 {
                    let g = group_of(y, &[a1, a2]);
                    assert_eq!(decode_group(g, 2), (y, vec![a1, a2]));
                    seen.insert(g);
                }
            }
        }
        assert_eq!(seen.len(), 8);
        assert!(seen.iter().all(|&g| g < 8));
    }

    #[test]
    fn deterministic_generation() {
        let a = gen_classification(&cfg(30), Split::Train, &mut seeded_rng(9)).unwrap();
        let b = gen_classification(&cfg(30), Split::Train, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_mixture_is_standardized_and_flagged() {
        let ds = gen_gaussian_2d(100, &mut seeded_rng(11)).unwrap();
        assert_eq!(ds.len(), 100);
        for c in 0..2 {
            let m = ds.examples.iter().map(|e| e.x[c]).sum::<f64>() / 100.0;
            let v = ds.examples.iter().map(|e| e.x[c] * e.x[c]).sum::<f64>() / 100.0;
            assert!(m.abs() < 1e-9);
            assert!((v - 1.0).abs() < 1e-9);
        }
        let pos = ds.examples.iter().filter(|e| e.y == 1).count();
        let flagged = ds.examples.iter().filter(|e| e.a[0] == 1).count();
        assert!(ds.examples.iter().all(|e| e.a[0] == 0 || e.y == 1));
        assert!((flagged as i64 - (pos / 2) as i64).abs() <= 1);
        let again = gen_gaussian_2d(100, &mut seeded_rng(11)).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn gaussian_mixture_rejects_tiny_n() {
        assert!(gen_gaussian_2d(3, &mut seeded_rng(0)).is_err());
    }

    fn rcfg(sigma_eps: f64, sigma_xi: f64) -> RegressionConfig {
        RegressionConfig { n: 50, d: 7, sigma_eps, sigma_xi, ..Default::default() }
    }

    #[test]
    fn noiseless_regression_is_exact() {
        let ds = gen_regression(&rcfg(0.0, 0.0), &mut seeded_rng(1)).unwrap();
        for i in 0..ds.y.len() {
            assert_eq!(ds.y[i], ds.y_star[i]);
            assert_eq!(ds.y_star[i], ds.config.truth.eval(ds.x[i][0]));
            assert!(ds.x[i][1..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn regression_eps_scale_only() {
        let a = gen_regression(&rcfg(1e-4, 0.1), &mut seeded_rng(2)).unwrap();
        let b = gen_regression(&rcfg(1e-3, 0.1), &mut seeded_rng(2)).unwrap();
        assert_eq!(a.y, b.y);
        for (ra, rb) in a.x.iter().zip(&b.x) {
            assert_eq!(ra[0], rb[0]);
            for (ea, eb) in ra[1..].iter().zip(&rb[1..]) {
                assert!((eb - 10.0 * ea).abs() <= 1e-15 * eb.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn regression_noise_variance() {
        let c = RegressionConfig { n: 100_000, d: 0, sigma_xi: 0.3, ..Default::default() };
        let ds = gen_regression(&c, &mut seeded_rng(3)).unwrap();
        let r: Vec<f64> = ds.y.iter().zip(&ds.y_star).map(|(a, b)| a - b).collect();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        let v = r.iter().map(|e| (e - m).powi(2)).sum::<f64>() / r.len() as f64;
        assert!((v / 0.09 - 1.0).abs() < 0.05);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ClassificationConfig { num_spurious: 2, ..cfg(12) };
        let ds = gen_classification(&c, Split::Valid, &mut seeded_rng(8)).unwrap();
        let p = dir.path().join("d.csv");
        write_csv(&ds, &p).unwrap();
        let back = read_csv(&p, Split::Valid).unwrap();
        assert_eq!(back.examples, ds.examples);
        let b = dir.path().join("d.bin");
        write_binary(&ds, &b).unwrap();
        assert_eq!(read_binary(&b).unwrap(), ds);
    }

    #[test]
    fn without_keeps_ids() {
        let ds = gen_classification(&cfg(5), Split::Train, &mut seeded_rng(0)).unwrap();
        let sub = ds.without(2);
        let ids: Vec<u64> = sub.examples.iter().map(|e| e.id).collect();
        assert_eq!(ids, vec![0, 1, 3, 4]);
        assert_eq!(sub.position_of(3), Some(2));
    }
}
