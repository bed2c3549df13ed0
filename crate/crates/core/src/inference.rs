//! Exact inference over the segment lattice in natural-log space.
//!
//! Boundaries are numbered `0..=n`; a segment of length `d` starting at
//! boundary `s` covers tokens `s..s + d` and ends at boundary `s + d`.
//! `alpha[i][y]` sums the scores of all labeled segmentations of `tokens[..i]`
//! whose last segment has label `y`; the empty prefix at boundary 0 carries
//! the start label with log score 0. `beta[i][y]` sums the completions of
//! `tokens[i..]` given that the segment ending at `i` has label `y`, with
//! `beta[n][y] = 0`.

use thiserror::Error;

use crate::corpus::{split_long_segments, LabelId, LabelSet, Segment, Sentence};
use crate::duration::{DurationModel, DurationTable};
use crate::features::{
    extract, observation_keys, ExtractContext, FeatureConfig, FeatureError, FeatureIndex, FeatureKind,
    SentenceFeatures,
};

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("non-finite segment score at span ({start}, {end})")]
    NonFinite { start: usize, end: usize },
    #[error("segment ({start}, {end}) is longer than the maximum length {max_len}")]
    SegmentTooLong { start: usize, end: usize, max_len: usize },
    #[error("empty sentence")]
    EmptySentence,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Log-sum-exp with max shift; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// A trained (or training) duration-modeled semi-Markov CRF.
#[derive(Debug, Clone)]
pub struct Model {
    labels: LabelSet,
    max_len: usize,
    config: FeatureConfig,
    durations: DurationModel,
    table: DurationTable,
    index: FeatureIndex,
    theta: Vec<f64>,
}

impl Model {
    pub fn new(
        labels: LabelSet,
        max_len: usize,
        config: FeatureConfig,
        durations: DurationModel,
        mut index: FeatureIndex,
        theta: Vec<f64>,
    ) -> Result<Self, InferenceError> {
        if max_len == 0 {
            return Err(InferenceError::InvalidModel("maximum segment length must be at least 1".into()));
        }
        if theta.len() != index.len() {
            return Err(InferenceError::InvalidModel(format!(
                "{} weights for {} features",
                theta.len(),
                index.len()
            )));
        }
        if theta.iter().any(|w| !w.is_finite()) {
            return Err(InferenceError::InvalidModel("non-finite weight".into()));
        }
        if index.num_labels() != labels.len() || durations.families().len() != labels.len() {
            return Err(InferenceError::InvalidModel("label count mismatch".into()));
        }
        index.freeze();
        let table = durations.table(&labels, max_len);
        Ok(Model {
            labels,
            max_len,
            config,
            durations,
            table,
            index,
            theta,
        })
    }

    /// Builds a zero-weight model whose index holds every transition and
    /// duration kind plus the observation keys seen on gold segments,
    /// conjoined with every label. Gold segments longer than `max_len` are
    /// split first.
    pub fn skeleton(
        corpus: &[Sentence],
        labels: LabelSet,
        max_len: usize,
        config: FeatureConfig,
        durations: DurationModel,
    ) -> Result<Self, InferenceError> {
        if max_len == 0 {
            return Err(InferenceError::InvalidModel("maximum segment length must be at least 1".into()));
        }
        let mut index = FeatureIndex::new(labels.len());
        for prev in std::iter::once(None).chain(labels.ids().map(Some)) {
            for label in labels.ids() {
                index.insert(FeatureKind::Transition { prev, label })?;
            }
        }
        for label in labels.ids() {
            for length in 1..=max_len {
                index.insert(FeatureKind::Duration { label, length })?;
            }
        }
        for s in corpus {
            let s = split_long_segments(s, max_len);
            for seg in &s.gold {
                for key in observation_keys(&s, seg.start, seg.end, &config) {
                    for label in labels.ids() {
                        index.insert(FeatureKind::Observation {
                            label,
                            key: key.clone(),
                        })?;
                    }
                }
            }
        }
        let k = index.len();
        Model::new(labels, max_len, config, durations, index, vec![0.0; k])
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn durations(&self) -> &DurationModel {
        &self.durations
    }

    pub fn duration_table(&self) -> &DurationTable {
        &self.table
    }

    pub fn index(&self) -> &FeatureIndex {
        &self.index
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn num_features(&self) -> usize {
        self.theta.len()
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) {
        assert_eq!(theta.len(), self.index.len(), "weight vector length mismatch");
        self.theta = theta;
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Self {
        self.set_theta(theta);
        self
    }

    pub fn weight(&self, kind: &FeatureKind) -> Option<f64> {
        self.index.get(kind).map(|i| self.theta[i])
    }

    pub fn extract_context(&self) -> ExtractContext<'_> {
        ExtractContext {
            config: &self.config,
            durations: &self.table,
            num_labels: self.labels.len(),
        }
    }

    pub fn sentence_features(&self, s: &Sentence) -> SentenceFeatures {
        SentenceFeatures::new(s, &self.config, &self.index, self.max_len)
    }

    pub fn score_table(&self, s: &Sentence) -> Result<ScoreTable, InferenceError> {
        ScoreTable::new(self, s, &self.sentence_features(s))
    }
}

/// `log phi` for a segment: `theta` dotted with its extracted features.
pub fn segment_score(m: &Model, s: &Sentence, seg: &Segment, prev: Option<LabelId>) -> Result<f64, InferenceError> {
    if seg.len() > m.max_len {
        return Err(InferenceError::SegmentTooLong {
            start: seg.start,
            end: seg.end,
            max_len: m.max_len,
        });
    }
    let v = extract(&m.extract_context(), s, seg, prev, &m.index)?;
    Ok(v.dot(&m.theta))
}

/// Per-sentence segment scores split into a label-pair part and a span part.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    n: usize,
    max_len: usize,
    num_labels: usize,
    node: Vec<f64>,
    trans: Vec<f64>,
}

impl ScoreTable {
    pub fn new(m: &Model, s: &Sentence, feats: &SentenceFeatures) -> Result<Self, InferenceError> {
        debug_assert_eq!(s.len(), feats.len());
        Self::with_theta(m, &m.theta, feats)
    }

    /// Scores under `theta` in place of the model's own weights.
    pub fn with_theta(m: &Model, theta: &[f64], feats: &SentenceFeatures) -> Result<Self, InferenceError> {
        let n = feats.len();
        if n == 0 {
            return Err(InferenceError::EmptySentence);
        }
        assert_eq!(theta.len(), m.theta.len(), "weight vector length mismatch");
        let ny = m.labels.len();
        let max_len = m.max_len;
        let mut trans = vec![0.0; (ny + 1) * ny];
        for (slot, prev) in std::iter::once(None).chain(m.labels.ids().map(Some)).enumerate() {
            for y in m.labels.ids() {
                trans[slot * ny + y.0] = m.index.transition_index(prev, y).map_or(0.0, |i| theta[i]);
            }
        }
        let mut node = vec![f64::NEG_INFINITY; n * max_len * ny];
        for start in 0..n {
            for d in 1..=max_len.min(n - start) {
                for y in m.labels.ids() {
                    let obs: f64 = feats.observations(start, d, y).iter().map(|&i| theta[i]).sum();
                    let dur = m.index.duration_index(y, d).map_or(0.0, |i| theta[i] * m.table.get(y, d));
                    let v = obs + dur;
                    if !v.is_finite() {
                        return Err(InferenceError::NonFinite {
                            start,
                            end: start + d - 1,
                        });
                    }
                    node[(start * max_len + d - 1) * ny + y.0] = v;
                }
            }
        }
        Ok(ScoreTable {
            n,
            max_len,
            num_labels: ny,
            node,
            trans,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// Label-independent-of-predecessor part of a segment score.
    #[inline]
    pub fn node(&self, start: usize, d: usize, y: usize) -> f64 {
        self.node[(start * self.max_len + d - 1) * self.num_labels + y]
    }

    /// Transition weight; `prev == None` is the start label.
    #[inline]
    pub fn trans(&self, prev: Option<usize>, y: usize) -> f64 {
        self.trans[prev.map_or(0, |p| p + 1) * self.num_labels + y]
    }

    #[inline]
    pub fn segment(&self, start: usize, d: usize, y: usize, prev: Option<usize>) -> f64 {
        self.node(start, d, y) + self.trans(prev, y)
    }
}

#[derive(Debug, Clone)]
pub struct Forward {
    /// `(n + 1) x |Y|`, row 0 unused.
    pub alpha: Vec<Vec<f64>>,
    pub log_z: f64,
}

#[derive(Debug, Clone)]
pub struct Backward {
    /// `(n + 1) x |Y|`, row 0 unused.
    pub beta: Vec<Vec<f64>>,
    /// Completion score of the whole sentence from the start label.
    pub log_start: f64,
}

pub fn forward_table(t: &ScoreTable) -> Forward {
    let (n, ny, l) = (t.n, t.num_labels, t.max_len);
    let mut alpha = vec![vec![f64::NEG_INFINITY; ny]; n + 1];
    let mut buf = Vec::with_capacity(l * ny);
    for i in 1..=n {
        for y in 0..ny {
            buf.clear();
            for d in 1..=l.min(i) {
                let start = i - d;
                if start == 0 {
                    buf.push(t.segment(0, d, y, None));
                } else {
                    let node = t.node(start, d, y);
                    for yp in 0..ny {
                        buf.push(alpha[start][yp] + t.trans(Some(yp), y) + node);
                    }
                }
            }
            alpha[i][y] = logsumexp(&buf);
        }
    }
    let log_z = logsumexp(&alpha[n]);
    Forward { alpha, log_z }
}

pub fn backward_table(t: &ScoreTable) -> Backward {
    let (n, ny, l) = (t.n, t.num_labels, t.max_len);
    let mut beta = vec![vec![f64::NEG_INFINITY; ny]; n + 1];
    beta[n].iter_mut().for_each(|b| *b = 0.0);
    let mut buf = Vec::with_capacity(l * ny);
    let completion = |beta: &Vec<Vec<f64>>, i: usize, prev: Option<usize>, buf: &mut Vec<f64>| {
        buf.clear();
        for d in 1..=l.min(n - i) {
            for y2 in 0..ny {
                buf.push(t.trans(prev, y2) + t.node(i, d, y2) + beta[i + d][y2]);
            }
        }
        logsumexp(buf)
    };
    for i in (1..n).rev() {
        for y in 0..ny {
            beta[i][y] = completion(&beta, i, Some(y), &mut buf);
        }
    }
    let log_start = completion(&beta, 0, None, &mut buf);
    Backward { beta, log_start }
}

/// Forward and backward tables for one sentence.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub table: ScoreTable,
    pub forward: Forward,
    pub backward: Backward,
}

impl Lattice {
    pub fn from_table(table: ScoreTable) -> Self {
        let forward = forward_table(&table);
        let backward = backward_table(&table);
        Lattice {
            table,
            forward,
            backward,
        }
    }

    pub fn new(m: &Model, s: &Sentence) -> Result<Self, InferenceError> {
        Ok(Self::from_table(m.score_table(s)?))
    }

    pub fn log_z(&self) -> f64 {
        self.forward.log_z
    }

    /// Forward score of the prefix ending at `boundary` with `prev` as its last label.
    #[inline]
    fn prefix(&self, boundary: usize, prev: Option<usize>) -> f64 {
        match (boundary, prev) {
            (0, None) => 0.0,
            (0, Some(_)) | (_, None) => f64::NEG_INFINITY,
            (b, Some(p)) => self.forward.alpha[b][p],
        }
    }

    /// Unnormalized log mass of all paths using segment `(start, d, y)` after `prev`.
    #[inline]
    pub fn log_segment_mass(&self, start: usize, d: usize, y: usize, prev: Option<usize>) -> f64 {
        self.prefix(start, prev) + self.table.segment(start, d, y, prev) + self.backward.beta[start + d][y]
    }

    pub fn segment_marginal(&self, seg: &Segment, prev: Option<LabelId>) -> f64 {
        let d = seg.len();
        if d > self.table.max_len || seg.end >= self.table.n {
            return 0.0;
        }
        (self.log_segment_mass(seg.start, d, seg.label.0, prev.map(|p| p.0)) - self.log_z()).exp()
    }

    /// Log of the total mass of segments covering token `t`; equals `log_z`.
    pub fn log_mass_through(&self, t: usize) -> f64 {
        let (n, ny, l) = (self.table.n, self.table.num_labels, self.table.max_len);
        let mut buf = Vec::new();
        for start in t.saturating_sub(l - 1)..=t {
            for d in (t - start + 1)..=l.min(n - start) {
                for y in 0..ny {
                    for prev in prev_labels(start, ny) {
                        buf.push(self.log_segment_mass(start, d, y, prev));
                    }
                }
            }
        }
        logsumexp(&buf)
    }

    /// Expected feature counts under the model, added into `out`.
    pub fn add_expected(&self, m: &Model, feats: &SentenceFeatures, out: &mut [f64], scale: f64) {
        let (n, ny, l) = (self.table.n, self.table.num_labels, self.table.max_len);
        let log_z = self.log_z();
        for start in 0..n {
            for d in 1..=l.min(n - start) {
                for y in 0..ny {
                    let label = LabelId(y);
                    let mut node_mass = 0.0;
                    for prev in prev_labels(start, ny) {
                        let p = (self.log_segment_mass(start, d, y, prev) - log_z).exp();
                        if p == 0.0 {
                            continue;
                        }
                        node_mass += p;
                        if let Some(ti) = m.index.transition_index(prev.map(LabelId), label) {
                            out[ti] += scale * p;
                        }
                    }
                    if node_mass == 0.0 {
                        continue;
                    }
                    for &oi in feats.observations(start, d, label) {
                        out[oi] += scale * node_mass;
                    }
                    if let Some(di) = m.index.duration_index(label, d) {
                        out[di] += scale * node_mass * m.table.get(label, d);
                    }
                }
            }
        }
    }
}

/// Possible predecessor labels at a boundary: the start label at 0, real labels after.
#[inline]
pub fn prev_labels(boundary: usize, num_labels: usize) -> impl Iterator<Item = Option<usize>> {
    let count = if boundary == 0 { 1 } else { num_labels };
    (0..count).map(move |k| (boundary > 0).then_some(k))
}

pub fn forward(m: &Model, s: &Sentence) -> Result<Forward, InferenceError> {
    Ok(forward_table(&m.score_table(s)?))
}

pub fn backward(m: &Model, s: &Sentence) -> Result<Backward, InferenceError> {
    Ok(backward_table(&m.score_table(s)?))
}

pub fn log_partition(m: &Model, s: &Sentence) -> Result<f64, InferenceError> {
    Ok(forward(m, s)?.log_z)
}

pub fn segment_marginal(m: &Model, s: &Sentence, seg: &Segment, prev: Option<LabelId>) -> Result<f64, InferenceError> {
    Ok(Lattice::new(m, s)?.segment_marginal(seg, prev))
}

/// Dense expected feature values `E[F_k]` for one sentence.
pub fn expected_features(m: &Model, s: &Sentence) -> Result<Vec<f64>, InferenceError> {
    let feats = m.sentence_features(s);
    let lattice = Lattice::from_table(ScoreTable::new(m, s, &feats)?);
    let mut out = vec![0.0; m.num_features()];
    lattice.add_expected(m, &feats, &mut out, 1.0);
    Ok(out)
}

/// Feature counts `F(X, S)` of a labeled segmentation, added into `out`.
pub fn add_path_features(
    m: &Model,
    feats: &SentenceFeatures,
    segments: &[Segment],
    out: &mut [f64],
    scale: f64,
) -> Result<(), InferenceError> {
    let mut prev = None;
    for seg in segments {
        let d = seg.len();
        if d > m.max_len {
            return Err(InferenceError::SegmentTooLong {
                start: seg.start,
                end: seg.end,
                max_len: m.max_len,
            });
        }
        for &oi in feats.observations(seg.start, d, seg.label) {
            out[oi] += scale;
        }
        if let Some(ti) = m.index.transition_index(prev, seg.label) {
            out[ti] += scale;
        }
        if let Some(di) = m.index.duration_index(seg.label, d) {
            out[di] += scale * m.table.get(seg.label, d);
        }
        prev = Some(seg.label);
    }
    Ok(())
}

/// Sum of segment scores along a labeled segmentation.
pub fn path_score(t: &ScoreTable, segments: &[Segment]) -> f64 {
    let mut score = 0.0;
    let mut prev = None;
    for seg in segments {
        score += t.segment(seg.start, seg.len(), seg.label.0, prev);
        prev = Some(seg.label.0);
    }
    score
}
