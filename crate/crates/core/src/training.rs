//! Regularized conditional log-likelihood and its minimization.
//!
//! The objective over sentences `q` is
//! `sum_q [log Z(X_q) - theta . F(X_q, S_q)] + |theta|^2 / (2 sigma2)` with
//! gradient `sum_q [E[F] - F(X_q, S_q)] + theta / sigma2`. Duration shapes are
//! fixed before training; only `theta` is optimized.

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{split_long_segments, Segment, Sentence};
use crate::features::SentenceFeatures;
use crate::inference::{add_path_features, path_score, InferenceError, Lattice, Model, ScoreTable};
use crate::optimize::{minimize, LbfgsParams, OptimizeError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("line search failed at iteration {iterations} (objective {value})")]
    LineSearch { theta: Vec<f64>, value: f64, iterations: usize },
    #[error("objective is not finite")]
    NonFinite,
    #[error("invalid training configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    /// Variance of the Gaussian prior on weights; `f64::INFINITY` disables it.
    pub sigma2: f64,
    pub max_iterations: usize,
    /// Gradient infinity-norm tolerance.
    pub tolerance: f64,
    pub memory: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma2: 10.0,
            max_iterations: 500,
            tolerance: 1e-5,
            memory: 10,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if !(self.sigma2 > 0.0) || !(self.tolerance > 0.0) || self.max_iterations == 0 || self.memory == 0 {
            return Err(TrainError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub gradient: Vec<f64>,
}

struct Prepared<'a> {
    feats: SentenceFeatures,
    gold: &'a [Segment],
    observed: Vec<(usize, f64)>,
}

fn prepare<'a>(m: &Model, corpus: &'a [Sentence]) -> Result<Vec<Prepared<'a>>, TrainError> {
    corpus
        .par_iter()
        .map(|s| {
            let feats = m.sentence_features(s);
            let mut dense = vec![0.0; m.num_features()];
            add_path_features(m, &feats, &s.gold, &mut dense, 1.0)?;
            let observed = dense
                .into_iter()
                .enumerate()
                .filter(|&(_, v)| v != 0.0)
                .collect();
            Ok(Prepared {
                feats,
                gold: &s.gold,
                observed,
            })
        })
        .collect()
}

const CHUNK: usize = 16;

fn evaluate(m: &Model, data: &[Prepared<'_>], theta: &[f64], sigma2: f64) -> Result<Objective, InferenceError> {
    let k = theta.len();
    // Fixed chunking and in-order reduction keep the sum deterministic.
    let partials: Vec<Result<(f64, Vec<f64>), InferenceError>> = data
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut value = 0.0;
            let mut grad = vec![0.0; k];
            for item in chunk {
                let table = ScoreTable::with_theta(m, theta, &item.feats)?;
                let gold_score = path_score(&table, item.gold);
                let lattice = Lattice::from_table(table);
                value += lattice.log_z() - gold_score;
                lattice.add_expected(m, &item.feats, &mut grad, 1.0);
                for &(i, v) in &item.observed {
                    grad[i] -= v;
                }
            }
            Ok((value, grad))
        })
        .collect();
    let mut value = 0.0;
    let mut gradient = vec![0.0; k];
    for p in partials {
        let (v, g) = p?;
        value += v;
        for (a, b) in gradient.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if sigma2.is_finite() {
        for (g, &w) in gradient.iter_mut().zip(theta) {
            *g += w / sigma2;
        }
        value += theta.iter().map(|w| w * w).sum::<f64>() / (2.0 * sigma2);
    }
    Ok(Objective { value, gradient })
}

/// Negative log-likelihood and gradient at the model's weights. Gold segments
/// must already fit within the model's maximum length.
pub fn nll(m: &Model, corpus: &[Sentence], cfg: &TrainConfig) -> Result<Objective, TrainError> {
    nll_at(m, corpus, m.theta(), cfg)
}

/// Negative log-likelihood and gradient at an arbitrary weight vector.
pub fn nll_at(m: &Model, corpus: &[Sentence], theta: &[f64], cfg: &TrainConfig) -> Result<Objective, TrainError> {
    let data = prepare(m, corpus)?;
    let obj = evaluate(m, &data, theta, cfg.sigma2)?;
    if !obj.value.is_finite() {
        return Err(TrainError::NonFinite);
    }
    Ok(obj)
}

/// Uniform weights in `[-scale, scale)` from a seeded generator, for restarts.
pub fn random_theta(k: usize, seed: u64, scale: f64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| rng.random_range(-scale..scale)).collect()
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: Model,
    pub initial_nll: f64,
    pub final_nll: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Objective after each accepted optimizer step.
    pub history: Vec<f64>,
}

/// Trains from zero weights. Gold segments longer than the model's maximum
/// length are split before training.
pub fn train(corpus: &[Sentence], cfg: &TrainConfig, skeleton: Model) -> Result<TrainReport, TrainError> {
    let theta0 = vec![0.0; skeleton.num_features()];
    train_from(corpus, cfg, skeleton, theta0)
}

pub fn train_from(
    corpus: &[Sentence],
    cfg: &TrainConfig,
    skeleton: Model,
    theta0: Vec<f64>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    let split: Vec<Sentence> = corpus
        .iter()
        .map(|s| split_long_segments(s, skeleton.max_len()))
        .collect();
    let data = prepare(&skeleton, &split)?;
    let params = LbfgsParams {
        memory: cfg.memory,
        max_iterations: cfg.max_iterations,
        gradient_tolerance: cfg.tolerance,
        ..LbfgsParams::default()
    };
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>), InferenceError> {
        let o = evaluate(&skeleton, &data, theta, cfg.sigma2)?;
        Ok((o.value, o.gradient))
    };
    let result = minimize(objective, theta0, &params).map_err(|e| match e {
        OptimizeError::LineSearch { x, value, iterations } => TrainError::LineSearch {
            theta: x,
            value,
            iterations,
        },
        OptimizeError::NonFinite { .. } => TrainError::NonFinite,
        OptimizeError::Objective(e) => TrainError::Inference(e),
    })?;
    log::info!(
        "training finished after {} iterations: nll {:.6} -> {:.6}, |g|inf {:.3e}",
        result.iterations,
        result.history[0],
        result.value,
        result.gradient_norm
    );
    Ok(TrainReport {
        initial_nll: result.history[0],
        final_nll: result.value,
        iterations: result.iterations,
        converged: result.converged,
        gradient_norm: result.gradient_norm,
        history: result.history,
        model: skeleton.with_theta(result.x),
    })
}
