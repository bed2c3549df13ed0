//! Segment-length distributions for durational labels.
//!
//! Lengths of gold segments are collected into a histogram and fitted by
//! maximum likelihood with either a Gaussian or a Gamma density. The fitted
//! density becomes a log-shaped duration feature: `-(d - mu)^2 / (2 sigma2)`
//! for the Gaussian family and `-alpha d + beta ln d` (with `beta = shape - 1`)
//! for the Gamma family. Normalizing constants are dropped; they are absorbed
//! by the learned duration weights.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{LabelId, LabelSet, Sentence};

#[derive(Debug, Error, PartialEq)]
pub enum DurationError {
    #[error("empty duration sample for label {0}")]
    EmptySample(String),
    #[error("need at least two duration samples, found {0}")]
    TooFewSamples(u64),
    #[error("duration sample has zero variance; use family `none` or add a variance floor")]
    ZeroVariance,
    #[error("degenerate Gamma fit: all duration samples are equal")]
    DegenerateGamma,
    #[error("Gamma shape iteration did not converge (last iterate {last})")]
    NoConvergence { last: f64 },
    #[error("unknown duration family {0:?}")]
    UnknownFamily(String),
    #[error("duration parameters, line {line}: {message}")]
    Params { line: usize, message: String },
}

/// Observed segment lengths for one label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DurationHistogram {
    counts: BTreeMap<usize, u64>,
    total: u64,
}

impl DurationHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_lengths<I: IntoIterator<Item = usize>>(lengths: I) -> Self {
        let mut h = Self::new();
        for d in lengths {
            h.add(d, 1);
        }
        h
    }

    pub fn add(&mut self, length: usize, count: u64) {
        assert!(length >= 1, "segment lengths start at 1");
        if count == 0 {
            return;
        }
        *self.counts.entry(length).or_insert(0) += count;
        self.total += count;
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, length: usize) -> u64 {
        self.counts.get(&length).copied().unwrap_or(0)
    }

    pub fn mean(&self) -> f64 {
        let s: f64 = self.counts.iter().map(|(&d, &c)| d as f64 * c as f64).sum();
        s / self.total as f64
    }

    /// Maximum-likelihood variance (denominator `total`).
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let s: f64 = self
            .counts
            .iter()
            .map(|(&d, &c)| c as f64 * (d as f64 - m).powi(2))
            .sum();
        s / self.total as f64
    }

    pub fn mean_ln(&self) -> f64 {
        let s: f64 = self.counts.iter().map(|(&d, &c)| c as f64 * (d as f64).ln()).sum();
        s / self.total as f64
    }

    fn distinct(&self) -> usize {
        self.counts.len()
    }
}

pub fn collect_histogram(
    corpus: &[Sentence],
    label: LabelId,
    labels: &LabelSet,
) -> Result<DurationHistogram, DurationError> {
    let h = DurationHistogram::from_lengths(
        corpus
            .iter()
            .flat_map(|s| s.gold.iter())
            .filter(|seg| seg.label == label)
            .map(|seg| seg.len()),
    );
    if h.total() == 0 {
        return Err(DurationError::EmptySample(labels.name(label).to_string()));
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyKind {
    Gaussian,
    Gamma,
    None,
}

impl FromStr for FamilyKind {
    type Err = DurationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(FamilyKind::Gaussian),
            "gamma" => Ok(FamilyKind::Gamma),
            "none" => Ok(FamilyKind::None),
            _ => Err(DurationError::UnknownFamily(s.to_string())),
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyKind::Gaussian => "gaussian",
            FamilyKind::Gamma => "gamma",
            FamilyKind::None => "none",
        })
    }
}

/// Parametric duration feature of one label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DurationFamily {
    Gaussian { mu: f64, sigma2: f64 },
    /// `alpha` is the rate, `beta = shape - 1`.
    Gamma { alpha: f64, beta: f64 },
    None,
}

impl DurationFamily {
    pub fn kind(&self) -> FamilyKind {
        match self {
            DurationFamily::Gaussian { .. } => FamilyKind::Gaussian,
            DurationFamily::Gamma { .. } => FamilyKind::Gamma,
            DurationFamily::None => FamilyKind::None,
        }
    }

    pub fn params(&self) -> (f64, f64) {
        match *self {
            DurationFamily::Gaussian { mu, sigma2 } => (mu, sigma2),
            DurationFamily::Gamma { alpha, beta } => (alpha, beta),
            DurationFamily::None => (0.0, 0.0),
        }
    }

    pub fn from_params(kind: FamilyKind, p1: f64, p2: f64) -> Self {
        match kind {
            FamilyKind::Gaussian => DurationFamily::Gaussian { mu: p1, sigma2: p2 },
            FamilyKind::Gamma => DurationFamily::Gamma { alpha: p1, beta: p2 },
            FamilyKind::None => DurationFamily::None,
        }
    }

    /// Feature value at length `d >= 1`.
    pub fn value(&self, d: usize) -> f64 {
        debug_assert!(d >= 1);
        let x = d as f64;
        match *self {
            DurationFamily::Gaussian { mu, sigma2 } => -(x - mu).powi(2) / (2.0 * sigma2),
            DurationFamily::Gamma { alpha, beta } => -alpha * x + beta * x.ln(),
            DurationFamily::None => 1.0,
        }
    }

    /// Whether `H(d) = D(d+1) - D(d)` is non-increasing on `[1, max_len]`.
    pub fn is_concave(&self, max_len: usize) -> bool {
        match *self {
            DurationFamily::Gaussian { sigma2, .. } => sigma2 > 0.0,
            DurationFamily::Gamma { beta, .. } => beta >= 0.0 || max_len < 3,
            DurationFamily::None => true,
        }
    }

    /// Log-likelihood of the histogram under the continuous density.
    pub fn log_likelihood(&self, h: &DurationHistogram) -> f64 {
        let n = h.total() as f64;
        match *self {
            DurationFamily::Gaussian { mu, sigma2 } => {
                let sq: f64 = h
                    .counts()
                    .iter()
                    .map(|(&d, &c)| c as f64 * (d as f64 - mu).powi(2))
                    .sum();
                -0.5 * n * (2.0 * std::f64::consts::PI * sigma2).ln() - sq / (2.0 * sigma2)
            }
            DurationFamily::Gamma { alpha, beta } => {
                let shape = beta + 1.0;
                let body: f64 = h
                    .counts()
                    .iter()
                    .map(|(&d, &c)| c as f64 * (beta * (d as f64).ln() - alpha * d as f64))
                    .sum();
                n * (shape * alpha.ln() - statrs::function::gamma::ln_gamma(shape)) + body
            }
            DurationFamily::None => f64::NAN,
        }
    }
}

impl fmt::Display for DurationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.params();
        write!(f, "{} {:.16e} {:.16e}", self.kind(), a, b)
    }
}

pub fn fit_gaussian(h: &DurationHistogram) -> Result<DurationFamily, DurationError> {
    if h.total() < 2 {
        return Err(DurationError::TooFewSamples(h.total()));
    }
    let sigma2 = h.variance();
    if sigma2 <= 0.0 {
        return Err(DurationError::ZeroVariance);
    }
    Ok(DurationFamily::Gaussian { mu: h.mean(), sigma2 })
}

const GAMMA_MAX_ITER: usize = 100;
const GAMMA_TOL: f64 = 1e-10;

/// Continuous Gamma maximum likelihood on integer lengths.
///
/// Solves `ln p - digamma(p) = ln(mean) - mean(ln d)` for the shape `p` by
/// Newton's method from the moment estimate `mean^2 / variance`.
pub fn fit_gamma(h: &DurationHistogram) -> Result<DurationFamily, DurationError> {
    if h.total() < 2 {
        return Err(DurationError::TooFewSamples(h.total()));
    }
    if h.distinct() < 2 {
        return Err(DurationError::DegenerateGamma);
    }
    let mean = h.mean();
    let target = mean.ln() - h.mean_ln();
    if target <= 0.0 {
        return Err(DurationError::DegenerateGamma);
    }
    let mut p = mean * mean / h.variance();
    for _ in 0..GAMMA_MAX_ITER {
        let f = p.ln() - digamma(p) - target;
        let df = 1.0 / p - trigamma(p);
        let mut next = p - f / df;
        if !(next > 0.0) {
            next = p / 2.0;
        }
        let done = (next - p).abs() < GAMMA_TOL;
        p = next;
        if done {
            let beta = p - 1.0;
            if beta < 0.0 {
                log::warn!("Gamma shape {p:.4} < 1: duration feature is not concave at small lengths");
            }
            return Ok(DurationFamily::Gamma { alpha: p / mean, beta });
        }
    }
    Err(DurationError::NoConvergence { last: p })
}

pub fn fit(h: &DurationHistogram, kind: FamilyKind) -> Result<DurationFamily, DurationError> {
    match kind {
        FamilyKind::Gaussian => fit_gaussian(h),
        FamilyKind::Gamma => fit_gamma(h),
        FamilyKind::None => Ok(DurationFamily::None),
    }
}

/// Duration families for every label; non-durational labels carry `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationModel {
    families: Vec<DurationFamily>,
}

impl DurationModel {
    /// Every label without a duration shape (plain semi-Markov CRF).
    pub fn none(labels: &LabelSet) -> Self {
        DurationModel {
            families: vec![DurationFamily::None; labels.len()],
        }
    }

    pub fn set(&mut self, label: LabelId, family: DurationFamily) {
        self.families[label.0] = family;
    }

    pub fn with(mut self, label: LabelId, family: DurationFamily) -> Self {
        self.set(label, family);
        self
    }

    /// Fits `kind` to the gold lengths of every durational label.
    pub fn fit_corpus(
        corpus: &[Sentence],
        labels: &LabelSet,
        kind: FamilyKind,
    ) -> Result<Self, DurationError> {
        let mut model = Self::none(labels);
        if kind == FamilyKind::None {
            return Ok(model);
        }
        for label in labels.durational() {
            let h = collect_histogram(corpus, label, labels)?;
            model.set(label, fit(&h, kind)?);
        }
        Ok(model)
    }

    /// Reads `label family p1 p2 [loglik]` lines, keeping those of family
    /// `kind`; `#` comments and blank lines are skipped. Durational labels
    /// without a matching line keep no duration shape.
    pub fn from_params_text(text: &str, labels: &LabelSet, kind: FamilyKind) -> Result<Self, DurationError> {
        let mut model = Self::none(labels);
        if kind == FamilyKind::None {
            return Ok(model);
        }
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| DurationError::Params { line: i + 1, message };
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() < 4 {
                return Err(err(format!("expected `label family p1 p2`, got {line:?}")));
            }
            let family: FamilyKind = parts[1].parse()?;
            if family != kind {
                continue;
            }
            let label = labels.id(parts[0]).ok_or_else(|| err(format!("unknown label {:?}", parts[0])))?;
            if !labels.is_durational(label) {
                return Err(err(format!("label {} is not durational", parts[0])));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("invalid number {s:?}")));
            model.set(label, DurationFamily::from_params(kind, num(parts[2])?, num(parts[3])?));
        }
        Ok(model)
    }

    pub fn family(&self, label: LabelId) -> DurationFamily {
        self.families[label.0]
    }

    pub fn families(&self) -> &[DurationFamily] {
        &self.families
    }

    pub fn is_concave(&self, labels: &LabelSet, max_len: usize) -> bool {
        labels.durational().all(|l| self.family(l).is_concave(max_len))
    }

    /// Precomputes feature values for every label and length `1..=max_len`.
    pub fn table(&self, labels: &LabelSet, max_len: usize) -> DurationTable {
        let mut values = Vec::with_capacity(labels.len() * max_len);
        for label in labels.ids() {
            for d in 1..=max_len {
                values.push(duration_feature(self, labels, label, d));
            }
        }
        DurationTable { max_len, values }
    }
}

/// `D^label(d)`; 1 for non-durational labels and for the `None` family.
pub fn duration_feature(model: &DurationModel, labels: &LabelSet, label: LabelId, d: usize) -> f64 {
    if !labels.is_durational(label) {
        return 1.0;
    }
    model.family(label).value(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurationTable {
    max_len: usize,
    values: Vec<f64>,
}

impl DurationTable {
    #[inline]
    pub fn get(&self, label: LabelId, d: usize) -> f64 {
        self.values[label.0 * self.max_len + d - 1]
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }
}

/// Digamma function, accurate to ~1e-13 for `x >= 0.1`.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // Bernoulli tail: 1/12, 1/120, 1/252, 1/240, 1/132, 691/32760, 1/12
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    acc + x.ln() - 0.5 * inv - tail
}

/// Trigamma function.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let tail = inv
        * (1.0
            + inv * 0.5
            + inv2
                * (1.0 / 6.0
                    - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * 5.0 / 66.0)))));
    acc + tail
}
