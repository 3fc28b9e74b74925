//! Smoothing, normalization and subsampling of recorded curves before
//! surrogate fitting.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::curves::{self, CurvePoint, CurveSet, LearningCurve, ModelSpec};
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 11;
pub const DEFAULT_POLY_ORDER: usize = 3;
pub const DEFAULT_LOSS_SCALE_MAX: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct Smoothed {
    pub curve: LearningCurve,
    /// Set when the curve was shorter than the window and left untouched.
    pub skipped: bool,
}

/// Savitzky-Golay smoothing of the loss values, indexed by point position.
///
/// The first and last `window / 2` points are taken from the polynomial
/// fitted to the first and last full window, evaluated at their offsets.
pub fn savgol_smooth(curve: &LearningCurve, window: usize, poly_order: usize) -> Result<Smoothed> {
    if window < 5 || window % 2 == 0 {
        return Err(Error::invalid("window", format!("must be odd and >= 5, got {window}")));
    }
    if poly_order >= window {
        return Err(Error::invalid(
            "poly_order",
            format!("must be below the window length {window}"),
        ));
    }
    let n = curve.len();
    if n < window {
        return Ok(Smoothed {
            curve: curve.clone(),
            skipped: true,
        });
    }

    let proj = savgol_projection(window, poly_order);
    let half = window / 2;
    let y: Vec<f64> = curve.points().iter().map(|p| p.loss).collect();
    let apply = |row: usize, start: usize| -> f64 { (0..window).map(|j| proj[(row, j)] * y[start + j]).sum() };

    let mut smoothed = Vec::with_capacity(n);
    for i in 0..n {
        let v = if i < half {
            apply(i, 0)
        } else if i >= n - half {
            apply(i - (n - window), n - window)
        } else {
            apply(half, i - half)
        };
        smoothed.push(v);
    }

    let points = curve
        .points()
        .iter()
        .zip(smoothed)
        .map(|(p, l)| CurvePoint { loss: l, ..*p })
        .collect();
    Ok(Smoothed {
        curve: LearningCurve::new(curve.model().clone(), points)?,
        skipped: false,
    })
}

/// Hat matrix of the least-squares polynomial fit over one window.
/// Row `i` gives the weights that evaluate the fit at window position `i`.
fn savgol_projection(window: usize, order: usize) -> DMatrix<f64> {
    let half = (window / 2) as f64;
    let v = DMatrix::from_fn(window, order + 1, |i, k| ((i as f64 - half) / half).powi(k as i32));
    let gram = v.transpose() * &v;
    let inv = gram
        .cholesky()
        .expect("Vandermonde gram matrix is positive definite for order < window")
        .inverse();
    &v * inv * v.transpose()
}

/// Affine maps of log-compute onto [0, 1] and log-loss onto [0, loss_scale_max].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub compute_lo: f64,
    pub compute_hi: f64,
    pub loss_lo: f64,
    pub loss_hi: f64,
    pub loss_scale_max: f64,
}

impl NormalizationSpec {
    pub fn new(compute_lo: f64, compute_hi: f64, loss_lo: f64, loss_hi: f64) -> Result<Self> {
        let spec = NormalizationSpec {
            compute_lo,
            compute_hi,
            loss_lo,
            loss_hi,
            loss_scale_max: DEFAULT_LOSS_SCALE_MAX,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.compute_lo > 0.0 && self.compute_lo < self.compute_hi && self.compute_hi.is_finite()) {
            return Err(Error::invalid(
                "compute range",
                format!("need 0 < lo < hi, got [{}, {}]", self.compute_lo, self.compute_hi),
            ));
        }
        if !(self.loss_lo > 0.0 && self.loss_lo < self.loss_hi && self.loss_hi.is_finite()) {
            return Err(Error::invalid(
                "loss range",
                format!("need 0 < lo < hi, got [{}, {}]", self.loss_lo, self.loss_hi),
            ));
        }
        if !(self.loss_scale_max > 0.0) {
            return Err(Error::invalid("loss_scale_max", "must be > 0"));
        }
        Ok(())
    }

    pub fn compute_to_unit(&self, compute: f64) -> f64 {
        (compute.ln() - self.compute_lo.ln()) / (self.compute_hi.ln() - self.compute_lo.ln())
    }

    pub fn unit_to_compute(&self, x: f64) -> f64 {
        (self.compute_lo.ln() + x * (self.compute_hi.ln() - self.compute_lo.ln())).exp()
    }

    pub fn loss_to_unit(&self, loss: f64) -> f64 {
        self.loss_scale_max * (loss.ln() - self.loss_lo.ln()) / (self.loss_hi.ln() - self.loss_lo.ln())
    }

    pub fn unit_to_loss(&self, y: f64) -> f64 {
        (self.loss_lo.ln() + y / self.loss_scale_max * (self.loss_hi.ln() - self.loss_lo.ln())).exp()
    }

    /// Width of one normalized-loss unit in log-loss.
    pub fn log_loss_per_unit(&self) -> f64 {
        (self.loss_hi.ln() - self.loss_lo.ln()) / self.loss_scale_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCurve {
    pub model: ModelSpec,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

pub fn normalize(curve: &LearningCurve, spec: &NormalizationSpec) -> Result<NormalizedCurve> {
    spec.validate()?;
    const SLACK: f64 = 1e-12;
    let mut x = Vec::with_capacity(curve.len());
    let mut y = Vec::with_capacity(curve.len());
    for (i, p) in curve.points().iter().enumerate() {
        let u = spec.compute_to_unit(p.compute);
        if !(-SLACK..=1.0 + SLACK).contains(&u) {
            return Err(Error::OutOfRange {
                model: curve.id().to_string(),
                index: i,
                compute: p.compute,
            });
        }
        x.push(u.clamp(0.0, 1.0));
        y.push(spec.loss_to_unit(p.loss));
    }
    Ok(NormalizedCurve {
        model: curve.model().clone(),
        x,
        y,
    })
}

pub fn denormalize(curve: &NormalizedCurve, spec: &NormalizationSpec) -> Result<LearningCurve> {
    let points = curve
        .x
        .iter()
        .zip(&curve.y)
        .map(|(&x, &y)| CurvePoint::trained(spec.unit_to_compute(x), spec.unit_to_loss(y)))
        .collect();
    LearningCurve::new(curve.model.clone(), points)
}

/// `k` points evenly spaced in log-compute, always keeping the first and last.
///
/// Each target picks the nearest remaining point, so the output is a
/// subsequence of the input with exactly `k` points.
pub fn subsample(curve: &LearningCurve, k: usize) -> Result<LearningCurve> {
    if k < 2 {
        return Err(Error::invalid("k", "must be at least 2"));
    }
    let pts = curve.points();
    let n = pts.len();
    if n <= k {
        return Ok(curve.clone());
    }
    let logs: Vec<f64> = pts.iter().map(|p| p.compute.ln()).collect();
    let (lo, hi) = (logs[0], logs[n - 1]);
    let mut picked = Vec::with_capacity(k);
    let mut cursor = 0usize;
    for j in 0..k {
        let target = lo + (hi - lo) * j as f64 / (k - 1) as f64;
        let min_idx = if j == 0 { 0 } else { picked[j - 1] + 1 };
        let max_idx = n - (k - j);
        while cursor + 1 < n && logs[cursor + 1] <= target {
            cursor += 1;
        }
        let nearest = if cursor + 1 < n && (logs[cursor + 1] - target) < (target - logs[cursor]) {
            cursor + 1
        } else {
            cursor
        };
        picked.push(nearest.clamp(min_idx, max_idx));
    }
    Ok(curve.with_points(picked.into_iter().map(|i| pts[i]).collect()))
}

/// Reads a recorded curve file, optionally smoothing every curve.
pub fn ingest(path: impl AsRef<Path>, smooth: Option<(usize, usize)>) -> Result<CurveSet> {
    let raw = curves::load_curves(path)?;
    match smooth {
        None => Ok(raw),
        Some((window, order)) => {
            let mut out = CurveSet::new();
            for c in &raw {
                out.insert(savgol_smooth(c, window, order)?.curve)?;
            }
            Ok(out)
        }
    }
}
