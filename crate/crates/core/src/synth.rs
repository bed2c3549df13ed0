//! Synthetic keyphrase corpora with a controllable phrase-length distribution.
//!
//! Sentences alternate filler runs with keyphrases. Keyphrases are noun
//! groups drawn from their own vocabulary, so with `ambiguity = 0` the corpus
//! is separable by word identity; raising `ambiguity` lets keyphrase words
//! appear inside filler runs as well.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{LabelSet, Segment, Sentence, Token};

const KP_MODIFIERS: &[&str] = &[
    "neural", "semantic", "adaptive", "stochastic", "sparse", "convex", "latent", "spectral",
];

const KP_HEADS: &[&str] = &[
    "network", "retrieval", "kernel", "segmentation", "inference", "clustering", "ontology", "regression", "parser",
    "embedding", "classifier", "grammar",
];

const FILLER: &[(&str, &str)] = &[
    ("the", "DT"),
    ("a", "DT"),
    ("this", "DT"),
    ("of", "IN"),
    ("in", "IN"),
    ("for", "IN"),
    ("with", "IN"),
    ("on", "IN"),
    ("improves", "VBZ"),
    ("shows", "VBZ"),
    ("uses", "VBZ"),
    ("requires", "VBZ"),
    ("is", "VBZ"),
    ("was", "VBD"),
    ("proposed", "VBN"),
    ("quickly", "RB"),
    ("also", "RB"),
    ("and", "CC"),
    ("we", "PRP"),
    ("it", "PRP"),
    ("paper", "NN"),
    ("results", "NNS"),
    ("approach", "NN"),
    ("new", "JJ"),
];

/// Leading entries of `FILLER` whose tags never occur in a noun group.
const FUNCTION_WORDS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sentences: usize,
    pub seed: u64,
    /// Relative weights of keyphrase lengths `1, 2, ...`.
    pub length_weights: Vec<f64>,
    /// Inclusive range of keyphrases per sentence.
    pub keyphrases: (usize, usize),
    /// Inclusive range of filler-run lengths between keyphrases.
    pub filler_run: (usize, usize),
    /// Probability that a filler token is replaced by a keyphrase word.
    pub ambiguity: f64,
    pub title_rate_keyphrase: f64,
    pub title_rate_filler: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::separable(60, 7)
    }
}

impl SynthConfig {
    /// Keyphrases of one or two words (mode 2), no label noise.
    pub fn separable(sentences: usize, seed: u64) -> Self {
        SynthConfig {
            sentences,
            seed,
            length_weights: vec![0.35, 0.65],
            keyphrases: (2, 4),
            filler_run: (1, 2),
            ambiguity: 0.0,
            title_rate_keyphrase: 0.7,
            title_rate_filler: 0.05,
        }
    }

    /// Mode-2 lengths with keyphrase words leaking into filler runs.
    pub fn noisy(sentences: usize, seed: u64) -> Self {
        SynthConfig {
            ambiguity: 0.2,
            title_rate_keyphrase: 0.5,
            title_rate_filler: 0.15,
            ..Self::separable(sentences, seed)
        }
    }
}

fn keyphrase_word(rng: &mut ChaCha8Rng, head: bool) -> Token {
    if head || rng.random_bool(0.3) {
        Token::new(*KP_HEADS.choose(rng).unwrap(), if rng.random_bool(0.2) { "NNS" } else { "NN" })
    } else {
        Token::new(*KP_MODIFIERS.choose(rng).unwrap(), "JJ")
    }
}

/// Generates `cfg.sentences` sentences with gold keyphrase segments.
pub fn generate(cfg: &SynthConfig, labels: &LabelSet) -> Vec<Sentence> {
    let kp = labels.durational().next().expect("label set needs a durational label");
    let filler_label = labels.default_label();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lengths = WeightedIndex::new(&cfg.length_weights).expect("length weights must be positive");

    let mut out = Vec::with_capacity(cfg.sentences);
    for _ in 0..cfg.sentences {
        let mut tokens: Vec<Token> = Vec::new();
        let mut gold: Vec<Segment> = Vec::new();
        let phrases = rng.random_range(cfg.keyphrases.0..=cfg.keyphrases.1);
        let leading = rng.random_bool(0.5);

        let filler = |rng: &mut ChaCha8Rng, tokens: &mut Vec<Token>, gold: &mut Vec<Segment>| {
            let run = rng.random_range(cfg.filler_run.0..=cfg.filler_run.1);
            let start = tokens.len();
            for j in 0..run {
                let tok = if rng.random_bool(cfg.ambiguity) {
                    let head = rng.random_bool(0.5);
                    keyphrase_word(rng, head)
                } else {
                    // Run edges stay outside the noun-group tags so a filler
                    // noun never extends a neighbouring keyphrase.
                    let edge = j == 0 || j + 1 == run;
                    let pool = if edge { &FILLER[..FUNCTION_WORDS] } else { FILLER };
                    let &(w, p) = pool.choose(rng).unwrap();
                    Token::new(w, p)
                };
                tokens.push(tok.in_title(rng.random_bool(cfg.title_rate_filler)));
            }
            gold.push(Segment::new(start, tokens.len() - 1, filler_label));
        };

        if leading {
            filler(&mut rng, &mut tokens, &mut gold);
        }
        for k in 0..phrases {
            if k > 0 {
                filler(&mut rng, &mut tokens, &mut gold);
            }
            let len = lengths.sample(&mut rng) + 1;
            let start = tokens.len();
            let in_title = rng.random_bool(cfg.title_rate_keyphrase);
            for j in 0..len {
                let tok = keyphrase_word(&mut rng, j + 1 == len);
                let partial = rng.random_bool(0.2);
                tokens.push(tok.in_title(in_title && !(partial && j + 1 < len)));
            }
            gold.push(Segment::new(start, tokens.len() - 1, kp));
        }
        if rng.random_bool(0.7) {
            filler(&mut rng, &mut tokens, &mut gold);
        }
        out.push(Sentence::new(tokens, gold));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{noun_group_spans, NounGroupPattern};

    #[test]
    fn deterministic_and_valid() {
        let labels = LabelSet::keyphrase();
        let a = generate(&SynthConfig::separable(30, 3), &labels);
        let b = generate(&SynthConfig::separable(30, 3), &labels);
        assert_eq!(a, b);
        let pat = NounGroupPattern::default();
        for s in &a {
            s.validate(&labels).unwrap();
            for g in s.gold.iter().filter(|g| labels.is_durational(g.label)) {
                assert!(g.len() <= 2);
                assert!(noun_group_spans(s, &pat, 3).contains(&(g.start, g.end)));
            }
        }
        assert_ne!(a, generate(&SynthConfig::separable(30, 4), &labels));
    }

    #[test]
    fn keyphrases_never_adjacent() {
        let labels = LabelSet::keyphrase();
        for s in generate(&SynthConfig::noisy(50, 1), &labels) {
            for w in s.gold.windows(2) {
                assert!(!(labels.is_durational(w[0].label) && labels.is_durational(w[1].label)));
            }
        }
    }
}
