//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizeError<E> {
    #[error("line search failed after {iterations} iterations (objective {value})")]
    LineSearch { x: Vec<f64>, value: f64, iterations: usize },
    #[error("objective became non-finite at iteration {iteration}")]
    NonFinite { x: Vec<f64>, iteration: usize },
    #[error(transparent)]
    Objective(E),
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsParams {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once the gradient infinity norm falls to this value.
    pub gradient_tolerance: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        LbfgsParams {
            memory: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-5,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial point.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Minimizes `f`, which returns the value and gradient at a point.
pub fn minimize<E, F>(mut f: F, x0: Vec<f64>, params: &LbfgsParams) -> Result<Minimum, OptimizeError<E>>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x).map_err(OptimizeError::Objective)?;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(OptimizeError::NonFinite { x, iteration: 0 });
    }
    let mut history = vec![fx];
    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(params.memory);
    let mut restarted = false;
    let mut iter = 0;

    while iter < params.max_iterations {
        let gnorm = inf_norm(&g);
        if gnorm <= params.gradient_tolerance {
            return Ok(Minimum {
                x,
                value: fx,
                gradient_norm: gnorm,
                iterations: iter,
                converged: true,
                history,
            });
        }

        let mut dir = two_loop(&g, &pairs);
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            pairs.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&dir, &g);
        }
        let step0 = if pairs.is_empty() {
            (1.0 / inf_norm(&dir)).min(1.0)
        } else {
            1.0
        };

        match line_search(&mut f, &x, fx, &dir, slope, step0, params).map_err(OptimizeError::Objective)? {
            Some((step, fnew, gnew)) => {
                let xnew: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
                let s: Vec<f64> = xnew.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
                    if pairs.len() == params.memory {
                        pairs.pop_front();
                    }
                    pairs.push_back(Pair { s, y, rho: 1.0 / sy });
                }
                x = xnew;
                fx = fnew;
                g = gnew;
                history.push(fx);
                restarted = false;
                iter += 1;
            }
            None if !restarted && !pairs.is_empty() => {
                pairs.clear();
                restarted = true;
            }
            None => {
                if inf_norm(&g) <= params.gradient_tolerance * 10.0 {
                    // Function values no longer resolve the remaining decrease.
                    break;
                }
                return Err(OptimizeError::LineSearch {
                    x,
                    value: fx,
                    iterations: iter,
                });
            }
        }
    }
    let gnorm = inf_norm(&g);
    Ok(Minimum {
        x,
        value: fx,
        gradient_norm: gnorm,
        iterations: iter,
        converged: gnorm <= params.gradient_tolerance,
        history,
    })
}

fn two_loop(g: &[f64], pairs: &VecDeque<Pair>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for p in pairs.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = pairs.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (p, a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

type Probe = (f64, f64, Vec<f64>);

/// Strong-Wolfe line search (bracketing then zoom with cubic interpolation).
fn line_search<E, F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    dir: &[f64],
    slope0: f64,
    step0: f64,
    params: &LbfgsParams,
) -> Result<Option<(f64, f64, Vec<f64>)>, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let mut eval = |step: f64| -> Result<Probe, E> {
        let xt: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + step * d).collect();
        let (v, g) = f(&xt)?;
        let slope = dot(&g, dir);
        Ok((v, slope, g))
    };
    let (c1, c2) = (params.c1, params.c2);
    let mut evals = 0;

    let mut prev_step = 0.0;
    let mut prev_val = f0;
    let mut prev_slope = slope0;
    let mut step = step0;
    loop {
        if evals >= params.max_line_search {
            return Ok(None);
        }
        let (val, slope, g) = eval(step)?;
        evals += 1;
        if !val.is_finite() {
            // shrink into the finite region
            step = prev_step + 0.5 * (step - prev_step);
            continue;
        }
        if val > f0 + c1 * step * slope0 || (evals > 1 && val >= prev_val) {
            return zoom(&mut eval, f0, slope0, (prev_step, prev_val, prev_slope), (step, val, slope), params, evals);
        }
        if slope.abs() <= -c2 * slope0 {
            return Ok(Some((step, val, g)));
        }
        if slope >= 0.0 {
            return zoom(&mut eval, f0, slope0, (step, val, slope), (prev_step, prev_val, prev_slope), params, evals);
        }
        prev_step = step;
        prev_val = val;
        prev_slope = slope;
        step *= 2.0;
    }
}

fn cubic_min(a: (f64, f64, f64), b: (f64, f64, f64)) -> Option<f64> {
    let (x0, f0, g0) = a;
    let (x1, f1, g1) = b;
    let d1 = g0 + g1 - 3.0 * (f0 - f1) / (x0 - x1);
    let disc = d1 * d1 - g0 * g1;
    if disc < 0.0 {
        return None;
    }
    let d2 = (x1 - x0).signum() * disc.sqrt();
    let t = x1 - (x1 - x0) * (g1 + d2 - d1) / (g1 - g0 + 2.0 * d2);
    t.is_finite().then_some(t)
}

fn zoom<E>(
    eval: &mut impl FnMut(f64) -> Result<Probe, E>,
    f0: f64,
    slope0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    params: &LbfgsParams,
    mut evals: usize,
) -> Result<Option<(f64, f64, Vec<f64>)>, E> {
    let (c1, c2) = (params.c1, params.c2);
    while evals < params.max_line_search {
        let (a, b) = if lo.0 < hi.0 { (lo.0, hi.0) } else { (hi.0, lo.0) };
        let width = b - a;
        if width <= 1e-16 * b.abs().max(1.0) {
            break;
        }
        let mut step = cubic_min(lo, hi).unwrap_or(0.5 * (a + b));
        // keep the trial point away from the interval ends
        let margin = 0.1 * width;
        if step < a + margin || step > b - margin {
            step = 0.5 * (a + b);
        }
        let (val, slope, g) = eval(step)?;
        evals += 1;
        if !val.is_finite() || val > f0 + c1 * step * slope0 || val >= lo.1 {
            hi = (step, val, slope);
        } else {
            if slope.abs() <= -c2 * slope0 {
                return Ok(Some((step, val, g)));
            }
            if slope * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (step, val, slope);
        }
    }
    Ok(None)
}
