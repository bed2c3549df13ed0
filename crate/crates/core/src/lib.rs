//! Duration-modeled semi-Markov conditional random fields for phrase-level
//! tagging such as keyphrase extraction.
//!
//! The pipeline is: parse a corpus ([`corpus`]), fit per-label duration
//! shapes ([`duration`]), build a model skeleton and train it
//! ([`training`]), then decode with exact or constrained Viterbi
//! ([`decoding`]) and score the result ([`evaluation`]).

// Label loops index several parallel tables; `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod decoding;
pub mod duration;
pub mod evaluation;
pub mod features;
pub mod inference;
pub mod modelfile;
pub mod optimize;
pub mod synth;
pub mod training;

pub use corpus::{LabelId, LabelSet, NounGroupPattern, Segment, Sentence, Token};
pub use decoding::{constrained_viterbi, viterbi, ConstrainedOptions, DecodePath, DecodeStats};
pub use duration::{DurationFamily, DurationModel, FamilyKind};
pub use evaluation::{evaluate, EvalReport, MatchMode};
pub use features::{FeatureConfig, FeatureIndex, FeatureKind, Template, TemplateSet};
pub use inference::{log_partition, Lattice, Model, ScoreTable};
pub use training::{train, TrainConfig, TrainReport};
