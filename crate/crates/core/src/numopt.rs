//! L-BFGS with Armijo backtracking, seeded random restarts, and the small
//! scalar helpers shared by the fitting code.

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Stop when the gradient 2-norm falls below this.
    pub tol: f64,
    /// Optional relative objective-decrease stop.
    pub ftol: Option<f64>,
    pub memory: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iter: 500,
            tol: 1e-8,
            ftol: None,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    GradientTol,
    FunctionTol,
    /// No step along the search direction decreases the objective at
    /// floating-point resolution.
    Stalled,
    MaxIter,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub params: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub restart_index: usize,
    pub stop: StopReason,
}

const ARMIJO_C1: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `f`, which returns the objective and writes the gradient into
/// its second argument.
pub fn minimize<F>(f: &mut F, init: &[f64], opts: &MinimizeOptions) -> OptimResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = init.len();
    let mut x = init.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let finish = |x: Vec<f64>, fx: f64, iterations: usize, stop: StopReason| OptimResult {
        params: x,
        objective: fx,
        converged: matches!(
            stop,
            StopReason::GradientTol | StopReason::FunctionTol | StopReason::Stalled
        ),
        iterations,
        restart_index: 0,
        stop,
    };
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return finish(x, fx, 0, StopReason::NonFinite);
    }

    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory.max(1)];

    for iter in 0..opts.max_iter {
        let gnorm = norm(&g);
        if gnorm < opts.tol {
            return finish(x, fx, iter, StopReason::GradientTol);
        }

        // Two-loop recursion.
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
        for (i, (s, y, rho)) in hist.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha[i] = a;
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
        }
        let scale = match hist.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / gnorm.max(1.0),
        };
        d.iter_mut().for_each(|di| *di *= scale);
        for (i, (s, y, rho)) in hist.iter().enumerate() {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (alpha[i] - b) * si);
        }

        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi / gnorm.max(1.0));
            slope = dot(&g, &d);
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            x_new
                .iter_mut()
                .zip(x.iter().zip(&d))
                .for_each(|(xn, (xi, di))| *xn = xi + t * di);
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && g_new.iter().all(|v| v.is_finite()) && f_new <= fx + ARMIJO_C1 * t * slope {
                accepted = Some(f_new);
                break;
            }
            // Safeguarded quadratic interpolation of the objective along d.
            t = if f_new.is_finite() {
                let curv = f_new - fx - slope * t;
                let t_q = if curv > 0.0 {
                    -slope * t * t / (2.0 * curv)
                } else {
                    BACKTRACK * t
                };
                t_q.clamp(0.1 * t, BACKTRACK * t)
            } else {
                BACKTRACK * t
            };
        }

        let Some(f_new) = accepted else {
            if hist.is_empty() {
                return finish(x, fx, iter, StopReason::Stalled);
            }
            hist.clear();
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            if opts.memory > 0 {
                hist.push_back((s, y, 1.0 / sy));
            }
        }

        let f_old = fx;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        fx = f_new;

        if let Some(ftol) = opts.ftol {
            if f_old - fx <= ftol * f_old.abs().max(fx.abs()).max(1.0) {
                return finish(x, fx, iter + 1, StopReason::FunctionTol);
            }
        }
    }
    if norm(&g) < opts.tol {
        return finish(x, fx, opts.max_iter, StopReason::GradientTol);
    }
    finish(x, fx, opts.max_iter, StopReason::MaxIter)
}

/// Runs [`minimize`] from each init and keeps the lowest finite objective.
/// Earlier inits win ties.
pub fn minimize_from_inits<F>(f: &mut F, inits: &[Vec<f64>], opts: &MinimizeOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut best: Option<OptimResult> = None;
    for (i, init) in inits.iter().enumerate() {
        let mut r = minimize(f, init, opts);
        r.restart_index = i;
        if !r.objective.is_finite() {
            continue;
        }
        if best.as_ref().map_or(true, |b| r.objective < b.objective) {
            best = Some(r);
        }
    }
    best.ok_or(Error::OptimizerFailed)
}

/// Draws `restarts` inits sequentially from one seeded stream, so a smaller
/// restart count always sees a prefix of a larger one's inits.
pub fn sample_inits<S>(sampler: &mut S, restarts: usize, seed: u64) -> Vec<Vec<f64>>
where
    S: FnMut(&mut ChaCha8Rng) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..restarts).map(|_| sampler(&mut rng)).collect()
}

pub fn minimize_with_restarts<F, S>(
    f: &mut F,
    sampler: &mut S,
    restarts: usize,
    seed: u64,
    opts: &MinimizeOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    S: FnMut(&mut ChaCha8Rng) -> Vec<f64>,
{
    if restarts == 0 {
        return Err(Error::invalid("restarts", "must be at least 1"));
    }
    let inits = sample_inits(sampler, restarts, seed);
    minimize_from_inits(f, &inits, opts)
}

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Largest per-coordinate relative gap between the analytic gradient and
/// central differences. Coordinates where both are below 1e-8 use the
/// absolute gap instead.
pub fn check_gradient<F>(f: &mut F, point: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = point.len();
    let mut grad = vec![0.0; n];
    f(point, &mut grad);
    let mut scratch = vec![0.0; n];
    let mut p = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        p[i] = point[i] + eps;
        let fp = f(&p, &mut scratch);
        p[i] = point[i] - eps;
        let fm = f(&p, &mut scratch);
        p[i] = point[i];
        let fd = (fp - fm) / (2.0 * eps);
        let denom = fd.abs().max(grad[i].abs());
        let err = if denom < 1e-8 {
            (fd - grad[i]).abs()
        } else {
            (fd - grad[i]).abs() / denom
        };
        worst = worst.max(err);
    }
    worst
}
