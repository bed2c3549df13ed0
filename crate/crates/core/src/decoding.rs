//! Viterbi decoding and the constrained variant.
//!
//! The constrained decoder applies two restrictions on top of the exact
//! recursion:
//!
//! 1. Noun-group constraint: a span outside the noun-group set may only take
//!    non-durational labels.
//! 2. Boundary pruning: when the best segment for `V(i, y)` of a durational
//!    label `y` starts at boundary `tau` with `i - L + 1 < tau <= i`, the
//!    extension to `V(i + 1, y)` only considers start boundaries `>= tau`.
//!    This relies on the duration feature being concave; pruning switches off
//!    otherwise.
//!
//! Ties are broken toward the shorter current segment, then the lower
//! previous label. The final label is the lowest-indexed among the maxima.

use std::collections::BTreeSet;
use std::sync::Once;
use std::time::{Duration, Instant};

use crate::corpus::{noun_group_spans, LabelId, Segment, Sentence};
use crate::features::FeatureKind;
use crate::inference::{path_score, InferenceError, Model, ScoreTable};

#[derive(Debug, Clone, PartialEq)]
pub struct DecodePath {
    pub segments: Vec<Segment>,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeStats {
    /// `(prev, label)` pairs scored.
    pub transitions_evaluated: u64,
    /// `(span, label)` candidates considered after both constraints.
    pub segments_evaluated: u64,
    /// Distinct spans considered.
    pub spans_considered: u64,
    pub segments_pruned_by_np: u64,
    pub segments_pruned_by_monotonicity: u64,
    pub pruning_disabled: bool,
    /// Start boundary of the best segment for `V(i, y)`, per durational label.
    pub boundaries: Vec<(LabelId, Vec<Option<usize>>)>,
    pub wall_time: Duration,
}

impl DecodeStats {
    pub fn merge(&mut self, other: &DecodeStats) {
        self.transitions_evaluated += other.transitions_evaluated;
        self.segments_evaluated += other.segments_evaluated;
        self.spans_considered += other.spans_considered;
        self.segments_pruned_by_np += other.segments_pruned_by_np;
        self.segments_pruned_by_monotonicity += other.segments_pruned_by_monotonicity;
        self.pruning_disabled |= other.pruning_disabled;
        self.wall_time += other.wall_time;
    }

    /// Average number of labels per considered span.
    pub fn avg_labels_per_span(&self) -> f64 {
        if self.spans_considered == 0 {
            0.0
        } else {
            self.segments_evaluated as f64 / self.spans_considered as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstrainedOptions {
    pub np_constraint: bool,
    pub prune: bool,
}

impl Default for ConstrainedOptions {
    fn default() -> Self {
        ConstrainedOptions {
            np_constraint: true,
            prune: true,
        }
    }
}

/// Number of transitions the unconstrained recursion scores on `n` tokens.
pub fn full_transition_count(n: usize, max_len: usize, num_labels: usize) -> u64 {
    let y = num_labels as u64;
    let mut total = 0;
    for i in 1..=n {
        for d in 1..=max_len.min(i) {
            total += if d == i { y } else { y * y };
        }
    }
    total
}

struct Search<'a> {
    table: &'a ScoreTable,
    /// `allowed[(start * L + d - 1) * Y + y]`
    allowed: Option<Vec<bool>>,
    /// Labels subject to boundary pruning.
    prune: Vec<bool>,
}

/// `(length, previous label)` of the best segment ending at a cell.
type BackPointer = (usize, Option<usize>);

fn run(search: &Search<'_>, stats: &mut DecodeStats) -> DecodePath {
    let t = search.table;
    let (n, ny, l) = (t.len(), t.num_labels(), t.max_len());
    let mut v = vec![vec![f64::NEG_INFINITY; ny]; n + 1];
    let mut back: Vec<Vec<Option<BackPointer>>> = vec![vec![None; ny]; n + 1];
    let mut tau: Vec<Vec<Option<usize>>> = vec![vec![None; n + 1]; ny];
    let mut span_seen = vec![false; n * l];

    for i in 1..=n {
        for y in 0..ny {
            let mut d_max = l.min(i);
            if search.prune[y] {
                if let Some(b) = tau[y][i - 1] {
                    // i - 1 - L + 1 < b  <=>  b + L > i - 1 + 1
                    if b + l > i {
                        let limit = i - b;
                        if limit < d_max {
                            for d in (limit + 1)..=d_max {
                                if is_allowed(search, i - d, d, y, ny, l) {
                                    stats.segments_pruned_by_monotonicity += 1;
                                }
                            }
                            d_max = limit;
                        }
                    }
                }
            }
            let mut best = f64::NEG_INFINITY;
            let mut arg = None;
            for d in 1..=d_max {
                let start = i - d;
                if !is_allowed(search, start, d, y, ny, l) {
                    stats.segments_pruned_by_np += 1;
                    continue;
                }
                stats.segments_evaluated += 1;
                let span = start * l + d - 1;
                if !span_seen[span] {
                    span_seen[span] = true;
                    stats.spans_considered += 1;
                }
                let node = t.node(start, d, y);
                if start == 0 {
                    stats.transitions_evaluated += 1;
                    let s = node + t.trans(None, y);
                    if s > best {
                        best = s;
                        arg = Some((d, None));
                    }
                } else {
                    for yp in 0..ny {
                        stats.transitions_evaluated += 1;
                        let s = v[start][yp] + (node + t.trans(Some(yp), y));
                        if s > best {
                            best = s;
                            arg = Some((d, Some(yp)));
                        }
                    }
                }
            }
            v[i][y] = best;
            back[i][y] = arg;
            if let Some((d, _)) = arg {
                tau[y][i] = Some(i - d);
            }
        }
    }

    let mut label = None;
    let mut best = f64::NEG_INFINITY;
    for y in 0..ny {
        if v[n][y] > best {
            best = v[n][y];
            label = Some(y);
        }
    }
    let mut segments = Vec::new();
    let mut i = n;
    let mut y = label.expect("at least one label is always feasible");
    while i > 0 {
        let (d, prev) = back[i][y].expect("reachable cell has a back pointer");
        segments.push(Segment::new(i - d, i - 1, LabelId(y)));
        i -= d;
        if let Some(p) = prev {
            y = p;
        }
    }
    segments.reverse();
    stats.boundaries = (0..ny)
        .filter(|&y| search.prune[y])
        .map(|y| (LabelId(y), std::mem::take(&mut tau[y])))
        .collect();
    DecodePath {
        score: path_score(t, &segments),
        segments,
    }
}

#[inline]
fn is_allowed(search: &Search<'_>, start: usize, d: usize, y: usize, ny: usize, l: usize) -> bool {
    search
        .allowed
        .as_ref()
        .is_none_or(|a| a[(start * l + d - 1) * ny + y])
}

/// Exact Viterbi decoding.
pub fn viterbi(m: &Model, s: &Sentence) -> Result<DecodePath, InferenceError> {
    Ok(viterbi_with_stats(m, s)?.0)
}

pub fn viterbi_with_stats(m: &Model, s: &Sentence) -> Result<(DecodePath, DecodeStats), InferenceError> {
    let clock = Instant::now();
    let table = m.score_table(s)?;
    let search = Search {
        table: &table,
        allowed: None,
        prune: vec![false; m.labels().len()],
    };
    let mut stats = DecodeStats::default();
    let path = run(&search, &mut stats);
    stats.wall_time = clock.elapsed();
    Ok((path, stats))
}

/// Exact Viterbi on a precomputed score table.
pub fn viterbi_table(table: &ScoreTable) -> DecodePath {
    let search = Search {
        table,
        allowed: None,
        prune: vec![false; table.num_labels()],
    };
    run(&search, &mut DecodeStats::default())
}

static NON_CONCAVE_WARNING: Once = Once::new();

/// Constrained Viterbi with the noun-group constraint and boundary pruning.
pub fn constrained_viterbi(
    m: &Model,
    s: &Sentence,
    np_spans: &BTreeSet<(usize, usize)>,
    options: ConstrainedOptions,
) -> Result<(DecodePath, DecodeStats), InferenceError> {
    let clock = Instant::now();
    let table = m.score_table(s)?;
    let labels = m.labels();
    let (n, ny, l) = (s.len(), labels.len(), m.max_len());

    let allowed = options.np_constraint.then(|| {
        let mut a = vec![true; n * l * ny];
        for start in 0..n {
            for d in 1..=l.min(n - start) {
                if np_spans.contains(&(start, start + d - 1)) {
                    continue;
                }
                for y in labels.durational() {
                    a[(start * l + d - 1) * ny + y.0] = false;
                }
            }
        }
        a
    });

    let mut stats = DecodeStats::default();
    let concave = m.durations().is_concave(labels, l);
    if options.prune && !concave {
        NON_CONCAVE_WARNING.call_once(|| {
            log::warn!("duration feature is not concave over [1, {l}]; boundary pruning disabled");
        });
        stats.pruning_disabled = true;
    }
    let prune_on = options.prune && concave;
    let search = Search {
        table: &table,
        allowed,
        prune: labels.ids().map(|y| prune_on && labels.is_durational(y)).collect(),
    };
    let path = run(&search, &mut stats);
    stats.wall_time = clock.elapsed();
    Ok((path, stats))
}

/// [`constrained_viterbi`] with noun-group spans computed from the model's pattern.
pub fn decode_constrained(
    m: &Model,
    s: &Sentence,
    options: ConstrainedOptions,
) -> Result<(DecodePath, DecodeStats), InferenceError> {
    let spans = if options.np_constraint {
        noun_group_spans(s, &m.config().pattern, m.max_len())
    } else {
        BTreeSet::new()
    };
    constrained_viterbi(m, s, &spans, options)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMonotonicity {
    pub label: LabelId,
    /// Largest pairwise difference among the label's duration weights.
    pub disparity: f64,
    pub concave: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub labels: Vec<LabelMonotonicity>,
    pub threshold: f64,
}

impl MonotonicityReport {
    pub fn disparity(&self) -> f64 {
        self.labels.iter().map(|l| l.disparity).fold(0.0, f64::max)
    }

    pub fn concave(&self) -> bool {
        self.labels.iter().all(|l| l.concave)
    }

    /// Pruning is considered safe when every duration feature is concave and
    /// the duration weights differ by at most the threshold.
    pub fn safe(&self) -> bool {
        self.concave() && self.disparity() <= self.threshold
    }
}

pub const DEFAULT_DISPARITY_THRESHOLD: f64 = 1.0;

pub fn check_monotonicity_assumption(m: &Model, threshold: f64) -> MonotonicityReport {
    let labels = m.labels();
    let report = labels
        .durational()
        .map(|label| {
            let weights: Vec<f64> = (1..=m.max_len())
                .filter_map(|length| m.weight(&FeatureKind::Duration { label, length }))
                .collect();
            let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
            LabelMonotonicity {
                label,
                disparity: if weights.is_empty() { 0.0 } else { hi - lo },
                concave: m.durations().family(label).is_concave(m.max_len()),
            }
        })
        .collect();
    MonotonicityReport {
        labels: report,
        threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LabelSet, Token};
    use crate::duration::{DurationFamily, DurationModel};
    use crate::features::FeatureConfig;

    fn sentence(pos: &[&str]) -> Sentence {
        let tokens: Vec<Token> = pos.iter().enumerate().map(|(i, p)| Token::new(format!("w{i}"), *p)).collect();
        let n = tokens.len();
        Sentence::new(tokens, vec![Segment::new(0, n - 1, LabelId(0))])
    }

    fn model(s: &Sentence, max_len: usize, family: DurationFamily) -> Model {
        let labels = LabelSet::keyphrase();
        let kp = labels.id("KP").unwrap();
        let durations = DurationModel::none(&labels).with(kp, family);
        Model::skeleton(std::slice::from_ref(s), labels, max_len, FeatureConfig::default(), durations).unwrap()
    }

    #[test]
    fn zero_theta_tie_break() {
        let s = sentence(&["NN", "NN", "NN"]);
        let m = model(&s, 2, DurationFamily::None);
        let p = viterbi(&m, &s).unwrap();
        assert_eq!(p.score, 0.0);
        let nkp = LabelId(0);
        assert_eq!(
            p.segments,
            vec![Segment::new(0, 0, nkp), Segment::new(1, 1, nkp), Segment::new(2, 2, nkp)]
        );
    }

    #[test]
    fn full_count_matches_plain_viterbi() {
        for n in 1..7 {
            for l in 1..4 {
                let s = sentence(&vec!["NN"; n]);
                let m = model(&s, l, DurationFamily::None);
                let (_, st) = viterbi_with_stats(&m, &s).unwrap();
                assert_eq!(st.transitions_evaluated, full_transition_count(n, l, 2), "n={n} l={l}");
            }
        }
    }

    #[test]
    fn non_noun_group_never_keyphrase() {
        let s = sentence(&["IN", "NN"]);
        let mut m = model(&s, 2, DurationFamily::None);
        let kp = m.labels().id("KP").unwrap();
        let mut theta = vec![0.0; m.num_features()];
        // heavily favor a two-token keyphrase
        theta[m.index().observation_index("len=2", kp).unwrap()] = 100.0;
        m.set_theta(theta);
        let plain = viterbi(&m, &s).unwrap();
        assert_eq!(plain.segments, vec![Segment::new(0, 1, kp)]);
        let (p, st) = decode_constrained(&m, &s, ConstrainedOptions::default()).unwrap();
        assert!(p.segments.iter().all(|g| g.label != kp || (g.start, g.end) == (1, 1)));
        assert!(st.segments_pruned_by_np > 0);
    }

    #[test]
    fn pruning_disabled_for_non_concave_duration() {
        let s = sentence(&["NN", "NN", "NN", "NN"]);
        let m = model(&s, 3, DurationFamily::Gamma { alpha: 0.5, beta: -0.5 });
        let (_, st) = decode_constrained(&m, &s, ConstrainedOptions::default()).unwrap();
        assert!(st.pruning_disabled);
        assert_eq!(st.segments_pruned_by_monotonicity, 0);
    }

    #[test]
    fn monotonicity_report() {
        let s = sentence(&["NN", "NN"]);
        let mut m = model(&s, 2, DurationFamily::Gaussian { mu: 2.0, sigma2: 1.0 });
        let r = check_monotonicity_assumption(&m, DEFAULT_DISPARITY_THRESHOLD);
        assert_eq!(r.disparity(), 0.0);
        assert!(r.safe());

        let kp = m.labels().id("KP").unwrap();
        let mut theta = vec![0.0; m.num_features()];
        theta[m.index().duration_index(kp, 1).unwrap()] = 1.0;
        theta[m.index().duration_index(kp, 2).unwrap()] = 3.0;
        m.set_theta(theta);
        let r = check_monotonicity_assumption(&m, DEFAULT_DISPARITY_THRESHOLD);
        assert_eq!(r.disparity(), 2.0);
        assert!(!r.safe());
    }
}
