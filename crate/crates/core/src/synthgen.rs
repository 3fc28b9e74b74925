//! Synthetic learning curves from the parametric L(N, D) loss surface,
//! with optional AWGN, Brownian or Ornstein-Uhlenbeck noise on the log loss.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curves::{CurvePoint, LearningCurve, ModelSpec};
use crate::error::{Error, Result};

/// Coefficients of L(N, D) = n_c / N^alpha_n + d_c / D^beta_d + e.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChinchillaParams {
    pub n_c: f64,
    pub d_c: f64,
    pub e: f64,
    pub alpha_n: f64,
    pub beta_d: f64,
}

impl ChinchillaParams {
    pub const HOFFMANN: ChinchillaParams = ChinchillaParams {
        n_c: 406.40,
        d_c: 410.7,
        e: 1.6934,
        alpha_n: 0.3478,
        beta_d: 0.3658,
    };

    pub const BESIROGLU: ChinchillaParams = ChinchillaParams {
        n_c: 482.01,
        d_c: 2085.43,
        e: 1.8172,
        alpha_n: 0.3392,
        beta_d: 0.2849,
    };

    pub fn new(n_c: f64, d_c: f64, e: f64, alpha_n: f64, beta_d: f64) -> Result<Self> {
        let p = ChinchillaParams {
            n_c,
            d_c,
            e,
            alpha_n,
            beta_d,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_c", self.n_c),
            ("d_c", self.d_c),
            ("e", self.e),
            ("alpha_n", self.alpha_n),
            ("beta_d", self.beta_d),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn preset(name: &str) -> Result<Self> {
        name.parse()
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.n_c, self.d_c, self.e, self.alpha_n, self.beta_d]
    }
}

impl FromStr for ChinchillaParams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hoffmann" => Ok(Self::HOFFMANN),
            "besiroglu" => Ok(Self::BESIROGLU),
            other => Err(Error::invalid(
                "preset",
                format!("unknown preset `{other}` (expected hoffmann or besiroglu)"),
            )),
        }
    }
}

/// L(N, D) for `n` parameters trained on `d` tokens.
pub fn loss_surface(params: &ChinchillaParams, n: f64, d: f64) -> Result<f64> {
    if !(n > 0.0) {
        return Err(Error::invalid("n", format!("must be positive, got {n}")));
    }
    if !(d > 0.0) {
        return Err(Error::invalid("d", format!("must be positive, got {d}")));
    }
    Ok(surface_unchecked(params, n, d))
}

#[inline]
pub(crate) fn surface_unchecked(p: &ChinchillaParams, n: f64, d: f64) -> f64 {
    p.n_c / n.powf(p.alpha_n) + p.d_c / d.powf(p.beta_d) + p.e
}

/// d log L / d log C along a fixed-N curve, where D = C / 6N.
pub(crate) fn log_log_slope(p: &ChinchillaParams, n: f64, d: f64) -> f64 {
    let data_term = p.d_c / d.powf(p.beta_d);
    -p.beta_d * data_term / surface_unchecked(p, n, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    None,
    Awgn,
    Brownian,
    Ou,
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(NoiseKind::None),
            "awgn" | "gaussian" => Ok(NoiseKind::Awgn),
            "brownian" => Ok(NoiseKind::Brownian),
            "ou" | "ornstein-uhlenbeck" => Ok(NoiseKind::Ou),
            other => Err(Error::invalid("noise", format!("unknown noise kind `{other}`"))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::None => "none",
            NoiseKind::Awgn => "awgn",
            NoiseKind::Brownian => "brownian",
            NoiseKind::Ou => "ou",
        })
    }
}

/// Noise overlay applied to log loss.
///
/// `sigma2` is the single intensity knob: AWGN uses standard deviation
/// `weight * sqrt(sigma2)`, Brownian increments have variance
/// `weight * sigma2 * dt`, and OU uses `sqrt(sigma2)` as its diffusion scale
/// with the whole path multiplied by `weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub sigma2: f64,
    pub weight: f64,
    pub ou_mu: f64,
    pub ou_tau: f64,
    pub gradient_threshold: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            kind: NoiseKind::None,
            sigma2: 0.0,
            weight: 1.0,
            ou_mu: 0.0,
            ou_tau: 1.0,
            gradient_threshold: 1e-3,
        }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(kind: NoiseKind, sigma2: f64, weight: f64) -> Self {
        NoiseConfig {
            kind,
            sigma2,
            weight,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::invalid("sigma2", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.weight) {
            return Err(Error::invalid("weight", "must lie in [0, 1]"));
        }
        if self.kind == NoiseKind::Ou && !(self.ou_tau > 0.0) {
            return Err(Error::invalid("ou_tau", "must be > 0 for OU noise"));
        }
        if !(self.gradient_threshold > 0.0) {
            return Err(Error::invalid("gradient_threshold", "must be > 0"));
        }
        Ok(())
    }
}

/// Additive log-loss noise along `grid`.
///
/// The step `dt` (and the OU interval `h`) is the log10-compute spacing of
/// the grid. Noise is zeroed from the first index whose log-log slope
/// magnitude drops below `gradient_threshold`.
pub fn sample_noise(noise: &NoiseConfig, grid: &[f64], curve_gradients: &[f64], seed: u64) -> Result<Vec<f64>> {
    noise.validate()?;
    if grid.len() != curve_gradients.len() {
        return Err(Error::invalid(
            "curve_gradients",
            format!("length {} != grid length {}", curve_gradients.len(), grid.len()),
        ));
    }
    let n = grid.len();
    let mut out = vec![0.0; n];
    if noise.kind == NoiseKind::None || noise.weight == 0.0 || n == 0 {
        return Ok(out);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = noise.sigma2.sqrt();
    let w = noise.weight;
    let step = |i: usize| -> f64 {
        if i == 0 {
            0.0
        } else {
            grid[i].log10() - grid[i - 1].log10()
        }
    };

    match noise.kind {
        NoiseKind::None => {}
        NoiseKind::Awgn => {
            for v in out.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = w * sigma * z;
            }
        }
        NoiseKind::Brownian => {
            let mut state = 0.0;
            for (i, v) in out.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                state += (w * noise.sigma2 * step(i)).sqrt() * z;
                *v = state;
            }
        }
        NoiseKind::Ou => {
            let mu = noise.ou_mu;
            let mut state = mu;
            for (i, v) in out.iter_mut().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                let decay = (-step(i) / noise.ou_tau).exp();
                state = mu + (state - mu) * decay + sigma * (1.0 - decay * decay).sqrt() * z;
                *v = w * state;
            }
        }
    }

    if let Some(cut) = curve_gradients.iter().position(|g| g.abs() < noise.gradient_threshold) {
        out[cut..].iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(out)
}

/// Trained curve of `model` on `compute_grid` under C = 6ND.
///
/// Grid points that would give fewer than one token are skipped.
pub fn generate_curve(
    params: &ChinchillaParams,
    model: &ModelSpec,
    compute_grid: &[f64],
    noise: &NoiseConfig,
    seed: u64,
) -> Result<LearningCurve> {
    params.validate()?;
    if compute_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("compute_grid", "must be strictly ascending"));
    }
    if compute_grid.first().is_some_and(|&c| !(c > 0.0)) {
        return Err(Error::invalid("compute_grid", "must be positive"));
    }
    let n = model.n_params as f64;
    let mut grid = Vec::with_capacity(compute_grid.len());
    let mut losses = Vec::with_capacity(compute_grid.len());
    let mut slopes = Vec::with_capacity(compute_grid.len());
    for &c in compute_grid {
        let d = c / (6.0 * n);
        if d < 1.0 {
            continue;
        }
        grid.push(c);
        losses.push(surface_unchecked(params, n, d));
        slopes.push(log_log_slope(params, n, d));
    }
    if grid.is_empty() {
        return Err(Error::GridBelowOneToken);
    }
    let offsets = sample_noise(noise, &grid, &slopes, seed)?;
    let points = grid
        .iter()
        .zip(losses.iter().zip(&offsets))
        .map(|(&c, (&l, &o))| {
            let loss = if o == 0.0 { l } else { (l.ln() + o).exp() };
            CurvePoint::trained(c, loss)
        })
        .collect();
    LearningCurve::new(model.clone(), points)
}

/// `count` points evenly spaced in log-compute over [lo, hi].
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i == count - 1 {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (count - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

pub const MIN_SIZE_EXPONENT: u32 = 2;
pub const MAX_SIZE_EXPONENT: u32 = 42;

/// Distinct model sizes drawn uniformly from {2^2, 2^3, ..., 2^42}.
pub fn sample_model_sizes<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Result<Vec<u64>> {
    let choices = (MAX_SIZE_EXPONENT - MIN_SIZE_EXPONENT + 1) as usize;
    if count > choices {
        return Err(Error::invalid(
            "count",
            format!("at most {choices} distinct sizes are available"),
        ));
    }
    Ok(rand::seq::index::sample(rng, choices, count)
        .into_iter()
        .map(|i| 1u64 << (MIN_SIZE_EXPONENT as usize + i))
        .collect())
}
