//! Multitask GP with a linear model of coregionalization.
//!
//! The covariance between point `i` (task `p`, input `x`) and point `j`
//! (task `q`, input `x'`) is
//!
//! ```text
//! B1[p,q] k_ed(x, x') + B2[p,q] white_var [x == x'] + kappa3[p] [p == q]
//! ```
//!
//! with `Bj = wj wj^T + diag(kappa_j)` and `k_ed` the exponential-decay
//! kernel. Observation noise is added on the diagonal. Tasks may carry
//! different input lists; the model never needs a shared grid.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numopt::{self, inv_softplus, sigmoid, softplus, MinimizeOptions};

/// Lower bound added to the fitted observation noise.
pub const NOISE_FLOOR: f64 = 1e-6;
pub const MIN_PREDICTION_GRID: usize = 256;
pub const DEFAULT_Z: f64 = 2.0;
const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;
const POSITIVE_FLOOR: f64 = 1e-30;
const N_SHARED: usize = 5;

pub fn expdec_kernel(x: f64, x2: f64, alpha: f64, beta: f64, var: f64) -> f64 {
    var * (alpha * (beta.ln() - (x + x2 + beta).ln())).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub expdec_alpha: f64,
    pub expdec_beta: f64,
    pub expdec_var: f64,
    pub white_var: f64,
    pub noise_var: f64,
    pub w1: Vec<f64>,
    pub kappa1: Vec<f64>,
    pub w2: Vec<f64>,
    pub kappa2: Vec<f64>,
    pub kappa3: Vec<f64>,
}

impl KernelHyperparams {
    /// Unit scales, independent tasks with a shared decay component.
    pub fn default_for(n_tasks: usize) -> Self {
        KernelHyperparams {
            expdec_alpha: 1.0,
            expdec_beta: 1.0,
            expdec_var: 1.0,
            white_var: 0.01,
            noise_var: 1e-3,
            w1: vec![1.0; n_tasks],
            kappa1: vec![0.1; n_tasks],
            w2: vec![0.0; n_tasks],
            kappa2: vec![0.01; n_tasks],
            kappa3: vec![1.0; n_tasks],
        }
    }

    pub fn n_tasks(&self) -> usize {
        self.w1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.n_tasks();
        if q == 0 {
            return Err(Error::invalid("hyper", "need at least one task"));
        }
        if [&self.kappa1, &self.w2, &self.kappa2, &self.kappa3]
            .iter()
            .any(|v| v.len() != q)
        {
            return Err(Error::invalid("hyper", "per-task vectors differ in length"));
        }
        let scalars = [
            self.expdec_alpha,
            self.expdec_beta,
            self.expdec_var,
            self.white_var,
            self.noise_var,
        ];
        let positive = scalars
            .iter()
            .chain(&self.w1)
            .chain(&self.kappa1)
            .chain(&self.kappa3)
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive {
            return Err(Error::invalid("hyper", "positivity constraint violated"));
        }
        if self.kappa2.iter().any(|v| !(*v >= 0.0)) || self.w2.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("hyper", "kappa2 must be non-negative, w2 finite"));
        }
        Ok(())
    }

    pub fn b1(&self) -> DMatrix<f64> {
        coregion(&self.w1, &self.kappa1)
    }

    pub fn b2(&self) -> DMatrix<f64> {
        coregion(&self.w2, &self.kappa2)
    }

    pub fn n_params(n_tasks: usize) -> usize {
        N_SHARED + 5 * n_tasks
    }

    /// Layout: alpha, beta, var, white, noise, then w1, kappa1, w2, kappa2,
    /// kappa3 in task order. Everything but w2 goes through softplus.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut t = vec![
            inv_softplus(self.expdec_alpha),
            inv_softplus(self.expdec_beta),
            inv_softplus(self.expdec_var),
            inv_softplus(self.white_var),
            inv_softplus((self.noise_var - NOISE_FLOOR).max(1e-12)),
        ];
        t.extend(self.w1.iter().map(|v| inv_softplus(*v)));
        t.extend(self.kappa1.iter().map(|v| inv_softplus(*v)));
        t.extend(self.w2.iter().copied());
        t.extend(self.kappa2.iter().map(|v| inv_softplus(v.max(1e-12))));
        t.extend(self.kappa3.iter().map(|v| inv_softplus(*v)));
        t
    }

    pub fn from_unconstrained(theta: &[f64], n_tasks: usize) -> Self {
        let q = n_tasks;
        let block = |k: usize| &theta[N_SHARED + k * q..N_SHARED + (k + 1) * q];
        // Floored well above the subnormal range: products of underflowing
        // weights would otherwise hit slow subnormal arithmetic.
        let pos = |v: f64| softplus(v).max(POSITIVE_FLOOR);
        let sp = |s: &[f64]| s.iter().map(|v| pos(*v)).collect::<Vec<_>>();
        KernelHyperparams {
            expdec_alpha: pos(theta[0]),
            expdec_beta: pos(theta[1]),
            expdec_var: pos(theta[2]),
            white_var: pos(theta[3]),
            noise_var: NOISE_FLOOR + softplus(theta[4]),
            w1: sp(block(0)),
            kappa1: sp(block(1)),
            w2: block(2).to_vec(),
            kappa2: sp(block(3)),
            kappa3: sp(block(4)),
        }
    }
}

fn coregion(w: &[f64], kappa: &[f64]) -> DMatrix<f64> {
    let q = w.len();
    DMatrix::from_fn(q, q, |p, r| w[p] * w[r] + if p == r { kappa[p] } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Flat {
    x: Vec<f64>,
    task: Vec<usize>,
    y: DVector<f64>,
    n_tasks: usize,
}

impl Flat {
    fn new(tasks: &[TaskData]) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::invalid("tasks", "need at least one task"));
        }
        let mut x = Vec::new();
        let mut task = Vec::new();
        let mut y = Vec::new();
        for (t, d) in tasks.iter().enumerate() {
            if d.x.len() != d.y.len() {
                return Err(Error::invalid("tasks", format!("task {t}: x and y lengths differ")));
            }
            if d.x.is_empty() {
                return Err(Error::invalid("tasks", format!("task {t} has no points")));
            }
            if d.x.iter().chain(&d.y).any(|v| !v.is_finite()) || d.x.iter().any(|v| *v < 0.0) {
                return Err(Error::invalid(
                    "tasks",
                    format!("task {t}: inputs must be finite and >= 0"),
                ));
            }
            x.extend_from_slice(&d.x);
            y.extend_from_slice(&d.y);
            task.extend(std::iter::repeat(t).take(d.x.len()));
        }
        Ok(Flat {
            x,
            task,
            y: DVector::from_vec(y),
            n_tasks: tasks.len(),
        })
    }

    fn len(&self) -> usize {
        self.x.len()
    }
}

fn covariance(h: &KernelHyperparams, flat: &Flat) -> DMatrix<f64> {
    let n = flat.len();
    let b1 = h.b1();
    let b2 = h.b2();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        let (xj, tj) = (flat.x[j], flat.task[j]);
        for i in j..n {
            let (xi, ti) = (flat.x[i], flat.task[i]);
            let mut v = b1[(ti, tj)] * expdec_kernel(xi, xj, h.expdec_alpha, h.expdec_beta, h.expdec_var);
            if xi == xj {
                v += b2[(ti, tj)] * h.white_var;
            }
            if ti == tj {
                v += h.kappa3[ti];
            }
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Latent covariance over all tasks' points, stacked task by task, without
/// observation noise.
pub fn build_covariance(hyper: &KernelHyperparams, inputs: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    hyper.validate()?;
    if inputs.len() != hyper.n_tasks() {
        return Err(Error::invalid("inputs", "task count does not match hyperparameters"));
    }
    let tasks: Vec<TaskData> = inputs
        .iter()
        .map(|x| TaskData {
            x: x.clone(),
            y: vec![0.0; x.len()],
        })
        .collect();
    Ok(covariance(hyper, &Flat::new(&tasks)?))
}

/// Cholesky of `k + noise I`, retrying with growing diagonal jitter.
fn factorize(mut k: DMatrix<f64>, noise: f64) -> Option<(Cholesky<f64, Dyn>, f64)> {
    for i in 0..k.nrows() {
        k[(i, i)] += noise;
    }
    if let Some(c) = k.clone().cholesky() {
        return Some((c, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = kj.cholesky() {
            return Some((c, jitter));
        }
        jitter *= 10.0;
    }
    None
}

fn half_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum()
}

/// faer splits large factorizations across threads by default. Callers
/// already parallelize over runs, and a fixed summation order keeps
/// results bit-reproducible.
fn sequential_factorizations() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Negative log marginal likelihood and its gradient with respect to the
/// unconstrained parameter vector. Returns +inf if the kernel plus noise is
/// not numerically positive definite.
fn nll_and_grad(theta: &[f64], flat: &Flat, grad: &mut [f64]) -> f64 {
    use faer::linalg::solvers::{DenseSolveCore, Solve};
    let q = flat.n_tasks;
    let h = KernelHyperparams::from_unconstrained(theta, q);
    let n = flat.len();
    let b1 = h.b1();
    let b2 = h.b2();
    let (a, b, var) = (h.expdec_alpha, h.expdec_beta, h.expdec_var);
    let ln_b = b.ln();

    // Lower triangle of K + noise I, keeping the ExpDec factor and its log
    // ratio for the gradient pass.
    let mut cache = vec![(0.0, 0.0); n * (n + 1) / 2];
    let mut k = faer::Mat::<f64>::zeros(n, n);
    let mut c = 0;
    for j in 0..n {
        let (xj, tj) = (flat.x[j], flat.task[j]);
        for i in j..n {
            let (xi, ti) = (flat.x[i], flat.task[i]);
            let log_ratio = ln_b - (xi + xj + b).ln();
            let e = var * (a * log_ratio).exp();
            let mut v = b1[(ti, tj)] * e;
            if xi == xj {
                v += b2[(ti, tj)] * h.white_var;
            }
            if ti == tj {
                v += h.kappa3[ti];
            }
            if i == j {
                v += h.noise_var;
            }
            k[(i, j)] = v;
            k[(j, i)] = v;
            cache[c] = (e, log_ratio);
            c += 1;
        }
    }
    // No jitter ladder here: jitter steps make the objective discontinuous
    // and stall the line search. Points that need jitter are rejected.
    let Ok(llt) = k.llt(faer::Side::Lower) else {
        grad.iter_mut().for_each(|g| *g = 0.0);
        return f64::INFINITY;
    };
    let y = faer::Col::<f64>::from_fn(n, |i| flat.y[i]);
    let alpha = llt.solve(&y);
    let l = llt.L();
    let half_log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    let fit: f64 = (0..n).map(|i| y[i] * alpha[i]).sum();
    let nll = 0.5 * fit + half_log_det + n as f64 * HALF_LN_2PI;
    if !nll.is_finite() {
        grad.iter_mut().for_each(|g| *g = 0.0);
        return f64::INFINITY;
    }
    let kinv = llt.inverse();

    let mut g_a = 0.0;
    let mut g_b = 0.0;
    let mut g_var = 0.0;
    let mut g_white = 0.0;
    let mut g_noise = 0.0;
    let mut g1 = DMatrix::<f64>::zeros(q, q);
    let mut g2 = DMatrix::<f64>::zeros(q, q);
    let mut g3 = vec![0.0; q];
    let mut c = 0;
    for j in 0..n {
        let (xj, tj) = (flat.x[j], flat.task[j]);
        for i in j..n {
            let (xi, ti) = (flat.x[i], flat.task[i]);
            let (e, log_ratio) = cache[c];
            c += 1;
            let w_ij = kinv[(i, j)] - alpha[i] * alpha[j];
            let w = if i == j { w_ij } else { 2.0 * w_ij };
            let s = xi + xj;
            let b1e = b1[(ti, tj)] * e;
            g_a += w * b1e * log_ratio;
            g_b += w * b1e * a * s / (b * (s + b));
            g_var += w * b1[(ti, tj)] * e / var;
            g1[(ti, tj)] += w * e;
            if xi == xj {
                g2[(ti, tj)] += w * h.white_var;
                g_white += w * b2[(ti, tj)];
            }
            if ti == tj {
                g3[ti] += w;
            }
            if i == j {
                g_noise += w_ij;
            }
        }
    }
    let g1 = (&g1 + g1.transpose()) * 0.5;
    let g2 = (&g2 + g2.transpose()) * 0.5;

    grad[0] = 0.5 * g_a * sigmoid(theta[0]);
    grad[1] = 0.5 * g_b * sigmoid(theta[1]);
    grad[2] = 0.5 * g_var * sigmoid(theta[2]);
    grad[3] = 0.5 * g_white * sigmoid(theta[3]);
    grad[4] = 0.5 * g_noise * sigmoid(theta[4]);
    let off = |k: usize| N_SHARED + k * q;
    for r in 0..q {
        let dw1: f64 = (0..q).map(|p| g1[(r, p)] * h.w1[p]).sum();
        grad[off(0) + r] = dw1 * sigmoid(theta[off(0) + r]);
        grad[off(1) + r] = 0.5 * g1[(r, r)] * sigmoid(theta[off(1) + r]);
        let dw2: f64 = (0..q).map(|p| g2[(r, p)] * h.w2[p]).sum();
        grad[off(2) + r] = dw2;
        grad[off(3) + r] = 0.5 * g2[(r, r)] * sigmoid(theta[off(3) + r]);
        grad[off(4) + r] = 0.5 * g3[r] * sigmoid(theta[off(4) + r]);
    }
    nll
}

/// Objective over the unconstrained parameter vector, suitable for
/// [`numopt::minimize`] and [`numopt::check_gradient`].
pub fn nll_objective(tasks: &[TaskData]) -> Result<impl FnMut(&[f64], &mut [f64]) -> f64> {
    sequential_factorizations();
    let flat = Flat::new(tasks)?;
    Ok(move |theta: &[f64], grad: &mut [f64]| nll_and_grad(theta, &flat, grad))
}

pub fn negative_log_marginal_likelihood(hyper: &KernelHyperparams, tasks: &[TaskData]) -> Result<f64> {
    hyper.validate()?;
    let flat = Flat::new(tasks)?;
    if flat.n_tasks != hyper.n_tasks() {
        return Err(Error::invalid("tasks", "task count does not match hyperparameters"));
    }
    let (chol, _) = factorize(covariance(hyper, &flat), hyper.noise_var).ok_or(Error::IllConditionedKernel)?;
    let alpha = chol.solve(&flat.y);
    Ok(0.5 * flat.y.dot(&alpha) + half_log_det(&chol) + flat.len() as f64 * HALF_LN_2PI)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpFitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub minimize: MinimizeOptions,
    /// Replaces the first sampled init when set.
    pub warm_start: Option<KernelHyperparams>,
}

impl Default for GpFitOptions {
    fn default() -> Self {
        GpFitOptions {
            restarts: 20,
            seed: 0,
            minimize: MinimizeOptions::default(),
            warm_start: None,
        }
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Restart init: variances and decay parameters log-uniform on [1e-3, 10],
/// mixing weights standard normal (softplus-mapped where positive).
fn sample_theta(rng: &mut ChaCha8Rng, q: usize) -> Vec<f64> {
    let mut t = Vec::with_capacity(KernelHyperparams::n_params(q));
    for _ in 0..N_SHARED {
        t.push(inv_softplus(log_uniform(rng, 1e-3, 10.0)));
    }
    for k in 0..5 {
        for _ in 0..q {
            t.push(match k {
                0 | 2 => rng.sample(StandardNormal),
                _ => inv_softplus(log_uniform(rng, 1e-3, 10.0)),
            });
        }
    }
    t
}

#[derive(Debug, Clone)]
pub struct LmcSurrogate {
    hyper: KernelHyperparams,
    flat: Flat,
    task_x: Vec<Vec<f64>>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    nll: f64,
}

impl LmcSurrogate {
    /// Conditions the GP on `tasks` under fixed hyperparameters.
    pub fn condition(hyper: KernelHyperparams, tasks: &[TaskData]) -> Result<Self> {
        hyper.validate()?;
        let flat = Flat::new(tasks)?;
        if flat.n_tasks != hyper.n_tasks() {
            return Err(Error::invalid("tasks", "task count does not match hyperparameters"));
        }
        let (chol, jitter) =
            factorize(covariance(&hyper, &flat), hyper.noise_var).ok_or(Error::IllConditionedKernel)?;
        let alpha = chol.solve(&flat.y);
        let nll = 0.5 * flat.y.dot(&alpha) + half_log_det(&chol) + flat.len() as f64 * HALF_LN_2PI;
        Ok(LmcSurrogate {
            hyper,
            flat,
            task_x: tasks.iter().map(|t| t.x.clone()).collect(),
            chol,
            alpha,
            jitter,
            nll,
        })
    }

    /// Maximizes the marginal likelihood over the hyperparameters.
    pub fn fit(tasks: &[TaskData], opts: &GpFitOptions) -> Result<Self> {
        if tasks.iter().any(|t| t.x.len() < 2) {
            return Err(Error::invalid("tasks", "each task needs at least 2 points"));
        }
        let q = tasks.len();
        let restarts = opts.restarts.max(1);
        let mut inits = numopt::sample_inits(&mut |rng| sample_theta(rng, q), restarts, opts.seed);
        if let Some(w) = &opts.warm_start {
            if w.n_tasks() == q && w.validate().is_ok() {
                inits[0] = w.to_unconstrained();
            }
        }
        let mut f = nll_objective(tasks)?;
        let best = numopt::minimize_from_inits(&mut f, &inits, &opts.minimize)?;
        let hyper = KernelHyperparams::from_unconstrained(&best.params, q);
        Self::condition(hyper, tasks)
    }

    pub fn hyper(&self) -> &KernelHyperparams {
        &self.hyper
    }

    pub fn n_tasks(&self) -> usize {
        self.flat.n_tasks
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        -self.nll
    }

    pub fn train_inputs(&self, task: usize) -> &[f64] {
        &self.task_x[task]
    }

    fn check_task(&self, task: usize) -> Result<()> {
        if task >= self.n_tasks() {
            return Err(Error::invalid(
                "task",
                format!("{task} out of {} tasks", self.n_tasks()),
            ));
        }
        Ok(())
    }

    /// Latent prior variance of `task` at `x`.
    pub fn prior_variance(&self, task: usize, x: f64) -> f64 {
        let h = &self.hyper;
        let b1 = h.w1[task] * h.w1[task] + h.kappa1[task];
        let b2 = h.w2[task] * h.w2[task] + h.kappa2[task];
        b1 * expdec_kernel(x, x, h.expdec_alpha, h.expdec_beta, h.expdec_var) + b2 * h.white_var + h.kappa3[task]
    }

    fn cross_cov(&self, task: usize, x: f64) -> DVector<f64> {
        let h = &self.hyper;
        DVector::from_iterator(
            self.flat.len(),
            (0..self.flat.len()).map(|i| {
                let (xi, ti) = (self.flat.x[i], self.flat.task[i]);
                let mut v = (h.w1[task] * h.w1[ti] + if ti == task { h.kappa1[task] } else { 0.0 })
                    * expdec_kernel(x, xi, h.expdec_alpha, h.expdec_beta, h.expdec_var);
                if x == xi {
                    v += (h.w2[task] * h.w2[ti] + if ti == task { h.kappa2[task] } else { 0.0 }) * h.white_var;
                }
                if ti == task {
                    v += h.kappa3[task];
                }
                v
            }),
        )
    }

    /// Posterior mean and latent variance for `task` at each query input.
    pub fn predict(&self, task: usize, query: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_task(task)?;
        if query.iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::invalid("query", "inputs must be >= 0"));
        }
        let mut mean = Vec::with_capacity(query.len());
        let mut var = Vec::with_capacity(query.len());
        for &x in query {
            let ks = self.cross_cov(task, x);
            mean.push(ks.dot(&self.alpha));
            let v = self
                .chol
                .l_dirty()
                .solve_lower_triangular(&ks)
                .expect("Cholesky factor has a positive diagonal");
            var.push((self.prior_variance(task, x) - v.norm_squared()).max(0.0));
        }
        Ok((mean, var))
    }

    /// Posterior means only.
    pub fn predict_mean(&self, task: usize, query: &[f64]) -> Result<Vec<f64>> {
        self.check_task(task)?;
        Ok(query
            .iter()
            .map(|&x| self.cross_cov(task, x).dot(&self.alpha))
            .collect())
    }

    /// Lowest posterior mean on a uniform grid from the task's last training
    /// input to `horizon`, in normalized units.
    pub fn min_predicted_loss(&self, task: usize, horizon: f64) -> Result<f64> {
        self.check_task(task)?;
        let last = *self.task_x[task]
            .iter()
            .max_by(|a, b| a.total_cmp(b))
            .expect("tasks are non-empty");
        if horizon < last {
            return Err(Error::invalid("horizon", "below the task's last training input"));
        }
        let grid = prediction_grid(last, horizon);
        let means = self.predict_mean(task, &grid)?;
        Ok(means.into_iter().fold(f64::INFINITY, f64::min))
    }

    pub fn confidence_bounds(&self, task: usize, query: &[f64], z: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(z >= 0.0) {
            return Err(Error::invalid("z", "must be >= 0"));
        }
        let (mean, var) = self.predict(task, query)?;
        let lower = mean.iter().zip(&var).map(|(m, v)| m - z * v.sqrt()).collect();
        let upper = mean.iter().zip(&var).map(|(m, v)| m + z * v.sqrt()).collect();
        Ok((lower, upper))
    }
}

/// Uniform grid in normalized compute, which is log-spaced in raw compute.
pub fn prediction_grid(from: f64, to: f64) -> Vec<f64> {
    if to <= from {
        return vec![from];
    }
    let n = MIN_PREDICTION_GRID;
    (0..n)
        .map(|i| {
            if i == n - 1 {
                to
            } else {
                from + (to - from) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}
