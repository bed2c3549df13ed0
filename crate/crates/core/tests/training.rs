mod common;

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use common::*;
use smcrf::corpus::{parse_corpus, LabelSet, Segment, Sentence, Token};
use smcrf::decoding::viterbi;
use smcrf::duration::{DurationModel, FamilyKind};
use smcrf::evaluation::evaluate;
use smcrf::features::{FeatureConfig, TemplateSet};
use smcrf::inference::Model;
use smcrf::training::{nll, train, TrainConfig, TrainError};

fn bundled() -> Vec<Sentence> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/synth60.txt");
    parse_corpus(BufReader::new(File::open(path).unwrap()), &LabelSet::keyphrase()).unwrap()
}

fn blank_config() -> FeatureConfig {
    FeatureConfig {
        templates: TemplateSet::new([]),
        ..Default::default()
    }
}

fn unlabeled(labels: &[usize]) -> Sentence {
    let tokens = labels.iter().map(|_| Token::new("w", "NN")).collect();
    let gold = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| Segment::new(i, i, smcrf::LabelId(y)))
        .collect();
    Sentence::new(tokens, gold)
}

#[test]
fn weak_prior_keeps_training_fit() {
    let labels = LabelSet::keyphrase();
    let corpus = bundled();
    let part = &corpus[..40];
    let durations = DurationModel::fit_corpus(part, &labels, FamilyKind::Gamma).unwrap();
    let skeleton = Model::skeleton(part, labels.clone(), 2, FeatureConfig::default(), durations).unwrap();
    for sigma2 in [10.0, 1e7] {
        let cfg = TrainConfig {
            sigma2,
            tolerance: 1e-4,
            ..Default::default()
        };
        let m = train(part, &cfg, skeleton.clone()).unwrap().model;
        let paths: Vec<_> = part.iter().map(|s| viterbi(&m, s).unwrap()).collect();
        assert_eq!(evaluate(part, &paths, &labels).unwrap().f1, 1.0, "sigma2 {sigma2}");
    }
}

#[test]
fn label_only_model_starts_at_uniform() {
    let corpus = vec![unlabeled(&[0, 1, 0]), unlabeled(&[1, 1]), unlabeled(&[0])];
    let labels = LabelSet::keyphrase();
    let m = Model::skeleton(&corpus, labels.clone(), 1, blank_config(), DurationModel::none(&labels)).unwrap();
    let cfg = TrainConfig {
        sigma2: f64::INFINITY,
        ..Default::default()
    };
    let o = nll(&m, &corpus, &cfg).unwrap();
    assert!((o.value - 6.0 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn label_only_model_reaches_frequency_estimate() {
    // One-token sentences: the likelihood is a softmax over first labels, so
    // the optimum is the empirical label frequency.
    let ys = [0, 0, 1, 0, 1, 0, 0, 1];
    let corpus: Vec<Sentence> = ys.iter().map(|&y| unlabeled(&[y])).collect();
    let labels = LabelSet::keyphrase();
    let m = Model::skeleton(&corpus, labels.clone(), 1, blank_config(), DurationModel::none(&labels)).unwrap();
    let cfg = TrainConfig {
        sigma2: f64::INFINITY,
        tolerance: 1e-9,
        ..Default::default()
    };
    let n = ys.len() as f64;
    let ones = ys.iter().filter(|&&y| y == 1).count() as f64;
    let oracle = -(ones * (ones / n).ln() + (n - ones) * ((n - ones) / n).ln());
    let r = train(&corpus, &cfg, m).unwrap();
    assert!((r.final_nll - oracle).abs() < 1e-9, "{} vs {oracle}", r.final_nll);
}

#[test]
fn gold_segments_are_split_to_max_length() {
    let s = Sentence::new(
        vec![Token::new("big", "JJ"), Token::new("data", "NN"), Token::new("model", "NN")],
        vec![Segment::new(0, 2, KP)],
    );
    let labels = LabelSet::keyphrase();
    let corpus = vec![s];
    let m = Model::skeleton(&corpus, labels.clone(), 2, FeatureConfig::default(), DurationModel::none(&labels)).unwrap();
    let r = train(&corpus, &TrainConfig::default(), m).unwrap();
    assert!(r.final_nll.is_finite() && r.final_nll < r.initial_nll);
}

#[test]
fn invalid_tolerance_is_a_config_error() {
    let corpus = vec![unlabeled(&[0])];
    let labels = LabelSet::keyphrase();
    let m = Model::skeleton(&corpus, labels.clone(), 1, blank_config(), DurationModel::none(&labels)).unwrap();
    let cfg = TrainConfig {
        tolerance: 0.0,
        ..Default::default()
    };
    assert!(matches!(train(&corpus, &cfg, m), Err(TrainError::Config(_))));
}
