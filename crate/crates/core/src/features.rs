//! Segment feature functions and their dense parameter indices.
//!
//! Three families are instantiated per segment `(start, end, label)` with
//! previous label `prev`:
//!
//! - observation: indicator of `(label, key)` for each key produced by the
//!   enabled templates over the segment's tokens;
//! - transition: indicator of `(prev, label)`; never looks at tokens or length;
//! - duration: `(label, length)` carrying the value `D^label(length)`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{LabelId, NounGroupPattern, Segment, Sentence};
use crate::duration::DurationTable;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("unknown feature template {0:?}")]
    UnknownTemplate(String),
    #[error("invalid previous label {0}")]
    InvalidPrevLabel(LabelId),
    #[error("segment ({start}, {end}) out of bounds for sentence of length {n}")]
    OutOfBounds { start: usize, end: usize, n: usize },
    #[error("feature index is frozen")]
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Template {
    IsNounPhrase,
    IsInTitle,
    Len,
    Word,
    SpanWord,
}

impl Template {
    pub const ALL: [Template; 5] = [
        Template::IsNounPhrase,
        Template::IsInTitle,
        Template::Len,
        Template::Word,
        Template::SpanWord,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Template::IsNounPhrase => "isNounPhrase",
            Template::IsInTitle => "isInTitle",
            Template::Len => "len",
            Template::Word => "word",
            Template::SpanWord => "span-word",
        }
    }
}

impl FromStr for Template {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| FeatureError::UnknownTemplate(s.to_string()))
    }
}

/// Enabled observation templates, kept in canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet(Vec<Template>);

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet(Template::ALL.to_vec())
    }
}

impl TemplateSet {
    pub fn new(templates: impl IntoIterator<Item = Template>) -> Self {
        let mut v: Vec<Template> = templates.into_iter().collect();
        v.sort();
        v.dedup();
        TemplateSet(v)
    }

    /// The two segment-level features plus length, without lexical identity.
    pub fn structural() -> Self {
        Self::new([Template::IsNounPhrase, Template::IsInTitle, Template::Len])
    }

    /// One template name per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, FeatureError> {
        let mut v = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            v.push(line.parse()?);
        }
        Ok(Self::new(v))
    }

    pub fn contains(&self, t: Template) -> bool {
        self.0.contains(&t)
    }

    pub fn iter(&self) -> impl Iterator<Item = Template> + '_ {
        self.0.iter().copied()
    }
}

impl fmt::Display for TemplateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|t| t.name()).collect();
        f.write_str(&names.join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FeatureConfig {
    pub templates: TemplateSet,
    pub pattern: NounGroupPattern,
}

/// Observation keys for the span `tokens[start..=end]`. Each key is an
/// indicator; counts are folded into the key text.
pub fn observation_keys(sentence: &Sentence, start: usize, end: usize, config: &FeatureConfig) -> Vec<String> {
    let span = &sentence.tokens[start..=end];
    let len = span.len();
    let mut keys = Vec::new();
    for t in config.templates.iter() {
        match t {
            Template::IsNounPhrase => {
                let nouns = span.iter().filter(|t| config.pattern.is_noun(&t.pos)).count();
                keys.push(format!("isNounPhrase={nouns}"));
            }
            Template::IsInTitle => {
                let mut v = span.iter().filter(|t| t.in_title).count();
                if v > 0 && v < len && config.pattern.matches(sentence, start, end) {
                    v = len;
                }
                keys.push(format!("isInTitle={v}"));
            }
            Template::Len => keys.push(format!("len={len}")),
            Template::Word => {
                let mut words: Vec<String> = span.iter().map(|t| format!("w={}", t.surface.to_lowercase())).collect();
                words.sort();
                words.dedup();
                keys.extend(words);
            }
            Template::SpanWord => {
                let joined: Vec<String> = span.iter().map(|t| t.surface.to_lowercase()).collect();
                keys.push(format!("span={}", joined.join(" ")));
            }
        }
    }
    keys
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Observation { label: LabelId, key: String },
    /// `prev == None` is the start-of-sentence label.
    Transition { prev: Option<LabelId>, label: LabelId },
    Duration { label: LabelId, length: usize },
}

/// Bijection between instantiated feature kinds and dense indices.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIndex {
    num_labels: usize,
    kinds: Vec<FeatureKind>,
    observation: HashMap<String, Vec<Option<usize>>>,
    transition: Vec<Option<usize>>,
    duration: Vec<Vec<Option<usize>>>,
    counts: [usize; 3],
    frozen: bool,
}

#[inline]
fn prev_slot(prev: Option<LabelId>) -> usize {
    prev.map_or(0, |l| l.0 + 1)
}

impl FeatureIndex {
    pub fn new(num_labels: usize) -> Self {
        FeatureIndex {
            num_labels,
            kinds: Vec::new(),
            observation: HashMap::new(),
            transition: vec![None; (num_labels + 1) * num_labels],
            duration: vec![Vec::new(); num_labels],
            counts: [0; 3],
            frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    /// `(K0, K1, K2)`: observation, transition and duration counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.counts[0], self.counts[1], self.counts[2])
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn kind(&self, index: usize) -> &FeatureKind {
        &self.kinds[index]
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn get(&self, kind: &FeatureKind) -> Option<usize> {
        match kind {
            FeatureKind::Observation { label, key } => self.observation_index(key, *label),
            FeatureKind::Transition { prev, label } => self.transition_index(*prev, *label),
            FeatureKind::Duration { label, length } => self.duration_index(*label, *length),
        }
    }

    #[inline]
    pub fn observation_index(&self, key: &str, label: LabelId) -> Option<usize> {
        self.observation.get(key).and_then(|v| v[label.0])
    }

    #[inline]
    pub fn transition_index(&self, prev: Option<LabelId>, label: LabelId) -> Option<usize> {
        self.transition[prev_slot(prev) * self.num_labels + label.0]
    }

    #[inline]
    pub fn duration_index(&self, label: LabelId, length: usize) -> Option<usize> {
        self.duration[label.0].get(length.checked_sub(1)?).copied().flatten()
    }

    /// Adds `kind` if it is new. Fails once the index is frozen.
    pub fn insert(&mut self, kind: FeatureKind) -> Result<usize, FeatureError> {
        if let Some(i) = self.get(&kind) {
            return Ok(i);
        }
        if self.frozen {
            return Err(FeatureError::Frozen);
        }
        let idx = self.kinds.len();
        match &kind {
            FeatureKind::Observation { label, key } => {
                let n = self.num_labels;
                self.observation.entry(key.clone()).or_insert_with(|| vec![None; n])[label.0] = Some(idx);
                self.counts[0] += 1;
            }
            FeatureKind::Transition { prev, label } => {
                self.transition[prev_slot(*prev) * self.num_labels + label.0] = Some(idx);
                self.counts[1] += 1;
            }
            FeatureKind::Duration { label, length } => {
                assert!(*length >= 1);
                let slots = &mut self.duration[label.0];
                if slots.len() < *length {
                    slots.resize(*length, None);
                }
                slots[length - 1] = Some(idx);
                self.counts[2] += 1;
            }
        }
        self.kinds.push(kind);
        Ok(idx)
    }
}

/// Sorted `(index, value)` pairs with no zeros.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVector(Vec<(usize, f64)>);

impl SparseVector {
    /// Sorts, sums duplicate indices and drops zeros.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|&(i, _)| i);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            match out.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => out.push((i, v)),
            }
        }
        out.retain(|&(_, v)| v != 0.0);
        SparseVector(out)
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.0
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0
            .binary_search_by_key(&index, |&(i, _)| i)
            .map_or(0.0, |p| self.0[p].1)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.0.iter().map(|&(i, v)| dense[i] * v).sum()
    }

    pub fn add_to(&self, dense: &mut [f64], scale: f64) {
        for &(i, v) in &self.0 {
            dense[i] += scale * v;
        }
    }
}

/// Shared inputs for feature extraction.
#[derive(Debug, Clone, Copy)]
pub struct ExtractContext<'a> {
    pub config: &'a FeatureConfig,
    pub durations: &'a DurationTable,
    pub num_labels: usize,
}

fn check_args(ctx: &ExtractContext<'_>, s: &Sentence, seg: &Segment, prev: Option<LabelId>) -> Result<(), FeatureError> {
    if seg.start > seg.end || seg.end >= s.len() || seg.len() > ctx.durations.max_len() {
        return Err(FeatureError::OutOfBounds {
            start: seg.start,
            end: seg.end,
            n: s.len(),
        });
    }
    if let Some(p) = prev {
        if p.0 >= ctx.num_labels {
            return Err(FeatureError::InvalidPrevLabel(p));
        }
    }
    if seg.label.0 >= ctx.num_labels {
        return Err(FeatureError::InvalidPrevLabel(seg.label));
    }
    Ok(())
}

fn kinds_for(ctx: &ExtractContext<'_>, s: &Sentence, seg: &Segment, prev: Option<LabelId>) -> Vec<(FeatureKind, f64)> {
    let label = seg.label;
    let mut out: Vec<(FeatureKind, f64)> = observation_keys(s, seg.start, seg.end, ctx.config)
        .into_iter()
        .map(|key| (FeatureKind::Observation { label, key }, 1.0))
        .collect();
    out.push((FeatureKind::Transition { prev, label }, 1.0));
    out.push((
        FeatureKind::Duration {
            label,
            length: seg.len(),
        },
        ctx.durations.get(label, seg.len()),
    ));
    out
}

/// Growing-mode extraction: unseen kinds are added to `index`.
pub fn extract_growing(
    ctx: &ExtractContext<'_>,
    s: &Sentence,
    seg: &Segment,
    prev: Option<LabelId>,
    index: &mut FeatureIndex,
) -> Result<SparseVector, FeatureError> {
    check_args(ctx, s, seg, prev)?;
    let mut pairs = Vec::new();
    for (kind, value) in kinds_for(ctx, s, seg, prev) {
        pairs.push((index.insert(kind)?, value));
    }
    Ok(SparseVector::from_pairs(pairs))
}

/// Frozen-mode extraction: kinds missing from `index` are dropped.
pub fn extract(
    ctx: &ExtractContext<'_>,
    s: &Sentence,
    seg: &Segment,
    prev: Option<LabelId>,
    index: &FeatureIndex,
) -> Result<SparseVector, FeatureError> {
    check_args(ctx, s, seg, prev)?;
    let pairs = kinds_for(ctx, s, seg, prev)
        .into_iter()
        .filter_map(|(kind, v)| index.get(&kind).map(|i| (i, v)))
        .collect();
    Ok(SparseVector::from_pairs(pairs))
}

/// Frozen observation indices for every span and label of one sentence.
#[derive(Debug, Clone)]
pub struct SentenceFeatures {
    n: usize,
    max_len: usize,
    num_labels: usize,
    observations: Vec<Vec<usize>>,
}

impl SentenceFeatures {
    pub fn new(s: &Sentence, config: &FeatureConfig, index: &FeatureIndex, max_len: usize) -> Self {
        let n = s.len();
        let num_labels = index.num_labels();
        let mut observations = vec![Vec::new(); n * max_len * num_labels];
        for start in 0..n {
            for d in 1..=max_len.min(n - start) {
                let keys = observation_keys(s, start, start + d - 1, config);
                let base = (start * max_len + d - 1) * num_labels;
                for key in &keys {
                    if let Some(slots) = index.observation.get(key.as_str()) {
                        for (y, slot) in slots.iter().enumerate() {
                            if let Some(i) = slot {
                                observations[base + y].push(*i);
                            }
                        }
                    }
                }
            }
        }
        SentenceFeatures {
            n,
            max_len,
            num_labels,
            observations,
        }
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

    /// Observation indices active for `tokens[start..start + d]` under `label`.
    #[inline]
    pub fn observations(&self, start: usize, d: usize, label: LabelId) -> &[usize] {
        &self.observations[(start * self.max_len + d - 1) * self.num_labels + label.0]
    }
}
