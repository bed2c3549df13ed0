//! Brute-force references shared by the integration tests. Everything here
//! scores paths from feature keys and weights directly, without the lattice.
#![allow(dead_code)]

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use smcrf::corpus::{noun_group_spans, LabelId, LabelSet, Segment, Sentence, Token};
use smcrf::duration::{DurationFamily, DurationModel};
use smcrf::features::{observation_keys, FeatureConfig, FeatureKind};
use smcrf::inference::{Model, ScoreTable};

pub const NKP: LabelId = LabelId(0);
pub const KP: LabelId = LabelId(1);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every labeled segmentation of `n` tokens with segments of at most `max_len`.
pub fn enumerate(n: usize, max_len: usize, num_labels: usize) -> Vec<Vec<Segment>> {
    fn go(
        start: usize,
        n: usize,
        l: usize,
        ny: usize,
        cur: &mut Vec<Segment>,
        out: &mut Vec<Vec<Segment>>,
    ) {
        if start == n {
            out.push(cur.clone());
            return;
        }
        for d in 1..=l.min(n - start) {
            for y in 0..ny {
                cur.push(Segment::new(start, start + d - 1, LabelId(y)));
                go(start + d, n, l, ny, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(0, n, max_len, num_labels, &mut Vec::new(), &mut out);
    out
}

/// Duration feature value written out from the closed forms.
pub fn duration_value(m: &Model, label: LabelId, d: usize) -> f64 {
    if !m.labels().is_durational(label) {
        return 1.0;
    }
    let x = d as f64;
    match m.durations().family(label) {
        DurationFamily::Gaussian { mu, sigma2 } => -(x - mu) * (x - mu) / (2.0 * sigma2),
        DurationFamily::Gamma { alpha, beta } => beta * x.ln() - alpha * x,
        DurationFamily::None => 1.0,
    }
}

/// Feature kinds with values fired by one segment, restricted to the model's index.
pub fn segment_features(m: &Model, s: &Sentence, seg: &Segment, prev: Option<LabelId>) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for key in observation_keys(s, seg.start, seg.end, m.config()) {
        if let Some(i) = m.index().get(&FeatureKind::Observation { label: seg.label, key }) {
            out.push((i, 1.0));
        }
    }
    if let Some(i) = m.index().get(&FeatureKind::Transition { prev, label: seg.label }) {
        out.push((i, 1.0));
    }
    let length = seg.len();
    if let Some(i) = m.index().get(&FeatureKind::Duration { label: seg.label, length }) {
        out.push((i, duration_value(m, seg.label, length)));
    }
    out
}

pub fn segment_score(m: &Model, s: &Sentence, seg: &Segment, prev: Option<LabelId>) -> f64 {
    segment_features(m, s, seg, prev)
        .into_iter()
        .map(|(i, v)| m.theta()[i] * v)
        .sum()
}

pub fn path_score(m: &Model, s: &Sentence, path: &[Segment]) -> f64 {
    let mut prev = None;
    let mut total = 0.0;
    for seg in path {
        total += segment_score(m, s, seg, prev);
        prev = Some(seg.label);
    }
    total
}

/// Sum along a path of the table's segment scores, left to right.
pub fn table_path_score(t: &ScoreTable, path: &[Segment]) -> f64 {
    let mut prev = None;
    let mut total = 0.0;
    for seg in path {
        total += t.segment(seg.start, seg.len(), seg.label.0, prev);
        prev = Some(seg.label.0);
    }
    total
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub struct Exhaustive {
    pub paths: Vec<Vec<Segment>>,
    pub scores: Vec<f64>,
    pub log_z: f64,
}

impl Exhaustive {
    pub fn new(m: &Model, s: &Sentence) -> Self {
        let paths = enumerate(s.len(), m.max_len(), m.labels().len());
        let scores: Vec<f64> = paths.iter().map(|p| path_score(m, s, p)).collect();
        let log_z = log_sum_exp(&scores);
        Exhaustive { paths, scores, log_z }
    }

    pub fn prob(&self, k: usize) -> f64 {
        (self.scores[k] - self.log_z).exp()
    }

    /// Probability that `seg` occurs right after a segment labeled `prev`
    /// (`None`: `seg` opens the sentence).
    pub fn marginal(&self, seg: &Segment, prev: Option<LabelId>) -> f64 {
        let mut total = 0.0;
        for (k, p) in self.paths.iter().enumerate() {
            if let Some(j) = p.iter().position(|x| x == seg) {
                let before = if j == 0 { None } else { Some(p[j - 1].label) };
                if before == prev {
                    total += self.prob(k);
                }
            }
        }
        total
    }

    pub fn expected(&self, m: &Model, s: &Sentence) -> Vec<f64> {
        let mut out = vec![0.0; m.num_features()];
        for (k, path) in self.paths.iter().enumerate() {
            let p = self.prob(k);
            let mut prev = None;
            for seg in path {
                for (i, v) in segment_features(m, s, seg, prev) {
                    out[i] += p * v;
                }
                prev = Some(seg.label);
            }
        }
        out
    }
}

/// Tie-break key: compare the last segment's label, then its length, then
/// the previous segment's label and length, and so on; smaller wins.
pub fn tie_key(path: &[Segment]) -> Vec<usize> {
    path.iter().rev().flat_map(|s| [s.label.0, s.len()]).collect()
}

/// Best path among `candidates` under table scores and the tie-break.
pub fn best_path<'a>(t: &ScoreTable, candidates: impl Iterator<Item = &'a Vec<Segment>>) -> Option<(Vec<Segment>, f64)> {
    let mut best: Option<(Vec<Segment>, f64)> = None;
    for p in candidates {
        let score = table_path_score(t, p);
        let better = match &best {
            None => true,
            Some((bp, bs)) => score > *bs || (score == *bs && tie_key(p) < tie_key(bp)),
        };
        if better {
            best = Some((p.clone(), score));
        }
    }
    best
}

/// Whether every durational segment of `path` lies on a noun-group span.
pub fn np_feasible(path: &[Segment], labels: &LabelSet, spans: &std::collections::BTreeSet<(usize, usize)>) -> bool {
    path.iter()
        .all(|s| !labels.is_durational(s.label) || spans.contains(&(s.start, s.end)))
}

pub fn np_spans(m: &Model, s: &Sentence) -> std::collections::BTreeSet<(usize, usize)> {
    noun_group_spans(s, &m.config().pattern, m.max_len())
}

const WORDS: &[(&str, &str)] = &[
    ("data", "NN"),
    ("big", "JJ"),
    ("of", "IN"),
    ("the", "DT"),
    ("sources", "NNS"),
    ("model", "NN"),
    ("fast", "JJ"),
];

pub fn random_sentence(rng: &mut ChaCha8Rng, n: usize) -> Sentence {
    let tokens = (0..n)
        .map(|_| {
            let &(w, p) = WORDS.choose(rng).unwrap();
            Token::new(w, p).in_title(rng.random_bool(0.3))
        })
        .collect();
    Sentence::new(tokens, vec![Segment::new(0, n - 1, NKP)])
}

/// A random labeled segmentation with segments of at most `max_len`.
pub fn random_gold(rng: &mut ChaCha8Rng, n: usize, max_len: usize) -> Vec<Segment> {
    let mut gold = Vec::new();
    let mut start = 0;
    while start < n {
        let d = rng.random_range(1..=max_len.min(n - start));
        gold.push(Segment::new(start, start + d - 1, LabelId(rng.random_range(0..2))));
        start += d;
    }
    gold
}

pub fn random_family(rng: &mut ChaCha8Rng, concave: bool) -> DurationFamily {
    match rng.random_range(0..3) {
        0 => DurationFamily::Gaussian {
            mu: rng.random_range(1.0..3.0),
            sigma2: rng.random_range(0.3..2.0),
        },
        1 => DurationFamily::Gamma {
            alpha: rng.random_range(0.3..2.0),
            beta: if concave {
                rng.random_range(0.0..2.0)
            } else {
                rng.random_range(-0.9..2.0)
            },
        },
        _ => DurationFamily::None,
    }
}

/// Zero-weight model whose index covers the observation keys of several
/// random segmentations of `s`.
pub fn skeleton_for(
    rng: &mut ChaCha8Rng,
    s: &Sentence,
    max_len: usize,
    config: FeatureConfig,
    durations: DurationModel,
) -> Model {
    let copies: Vec<Sentence> = (0..6)
        .map(|_| Sentence::new(s.tokens.clone(), random_gold(rng, s.len(), max_len)))
        .collect();
    Model::skeleton(&copies, LabelSet::keyphrase(), max_len, config, durations).unwrap()
}

pub fn gaussian_theta(rng: &mut ChaCha8Rng, k: usize, sd: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, sd).unwrap();
    (0..k).map(|_| normal.sample(rng)).collect()
}

pub struct Instance {
    pub model: Model,
    pub sentence: Sentence,
}

/// Random sentence (`n <= 8`), random `L <= 3`, random duration shape and
/// Gaussian weights. Every fourth instance uses small integer weights and no
/// duration shape so that exact score ties occur.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = rng(seed);
    let n = rng.random_range(1..=8);
    let max_len = rng.random_range(1..=3);
    let s = random_sentence(&mut rng, n);
    let labels = LabelSet::keyphrase();
    let ties = seed % 4 == 3;
    let family = if ties { DurationFamily::None } else { random_family(&mut rng, false) };
    let durations = DurationModel::none(&labels).with(KP, family);
    let m = skeleton_for(&mut rng, &s, max_len, FeatureConfig::default(), durations);
    let theta = if ties {
        (0..m.num_features()).map(|_| rng.random_range(-1..=1) as f64).collect()
    } else {
        gaussian_theta(&mut rng, m.num_features(), 1.0)
    };
    Instance {
        model: m.with_theta(theta),
        sentence: s,
    }
}

/// Sentences with random gold segmentations for training-objective tests.
pub fn random_corpus(rng: &mut ChaCha8Rng, sentences: usize, max_len: usize) -> Vec<Sentence> {
    (0..sentences)
        .map(|_| {
            let n = rng.random_range(1..=6);
            let s = random_sentence(rng, n);
            Sentence::new(s.tokens, random_gold(rng, n, max_len))
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Weights where a single positive duration weight on every keyphrase
/// length dominates the observation weights.
pub fn dominant_instance(seed: u64) -> Instance {
    let mut r = rng(20_000 + seed);
    let n = r.random_range(1..=8);
    let max_len = if seed.is_multiple_of(5) { 2 } else { 3 };
    let s = random_sentence(&mut r, n);
    let labels = LabelSet::keyphrase();
    let family = if r.random_bool(0.5) {
        DurationFamily::Gaussian {
            mu: r.random_range(1.0..3.0),
            sigma2: r.random_range(0.3..2.0),
        }
    } else {
        DurationFamily::Gamma {
            alpha: r.random_range(0.3..2.0),
            beta: r.random_range(0.5..2.0),
        }
    };
    let durations = DurationModel::none(&labels).with(KP, family);
    let m = skeleton_for(&mut r, &s, max_len, FeatureConfig::default(), durations);

    let obs_bound: f64 = 1.0;
    let keys_per_span = (0..n)
        .flat_map(|a| (a..n.min(a + max_len)).map(move |b| (a, b)))
        .map(|(a, b)| observation_keys(&s, a, b, m.config()).len())
        .max()
        .unwrap_or(1) as f64;
    let h: Vec<f64> = (1..max_len).map(|d| family.value(d + 1) - family.value(d)).collect();
    let gap = h.windows(2).map(|w| w[0] - w[1]).fold(f64::INFINITY, f64::min);
    let mut w = 5.0 * obs_bound;
    if gap.is_finite() {
        w = w.max(4.0 * keys_per_span * obs_bound / gap);
    }
    let w = w * 1.01;

    let theta = m
        .index()
        .kinds()
        .iter()
        .map(|k| match k {
            FeatureKind::Duration { label, .. } if *label == KP => w,
            FeatureKind::Observation { .. } => r.random_range(-obs_bound..obs_bound),
            _ => r.random_range(-2.0..2.0),
        })
        .collect();
    Instance {
        model: m.with_theta(theta),
        sentence: s,
    }
}
