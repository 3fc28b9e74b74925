//! Loss-compute frontiers, power-law fits, and the area-between-curves metric.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::curves::{CurvePoint, CurveSet, LearningCurve};
use crate::error::{Error, Result};
use crate::gp::LmcSurrogate;
use crate::numopt::{self, huber, huber_grad, inv_softplus, sigmoid, softplus, MinimizeOptions};
use crate::preprocess::NormalizationSpec;
use crate::synthgen::{log_grid, ChinchillaParams};

pub const FRONTIER_GRID: usize = 256;
pub const ABC_GRID: usize = 512;
pub const DEFAULT_REGION: (f64, f64) = (1e18, 1e20);
pub const DEFAULT_HUBER_DELTA: f64 = 1e-3;
pub const DEFAULT_LND_RESTARTS: usize = 20;
const EXTENSION_POINTS: usize = 64;

/// L(C) = (C / alpha)^(-gamma) over a compute region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerScalingLaw {
    #[serde(rename = "alpha")]
    pub alpha_c: f64,
    pub gamma: f64,
    pub region_lo: f64,
    pub region_hi: f64,
}

impl PowerScalingLaw {
    pub fn new(alpha_c: f64, gamma: f64, region_lo: f64, region_hi: f64) -> Result<Self> {
        check_region(region_lo, region_hi)?;
        if !(alpha_c > 0.0 && alpha_c.is_finite() && gamma.is_finite()) {
            return Err(Error::invalid("law", "alpha must be positive and gamma finite"));
        }
        Ok(PowerScalingLaw {
            alpha_c,
            gamma,
            region_lo,
            region_hi,
        })
    }

    pub fn eval(&self, compute: f64) -> f64 {
        self.ln_eval(compute).exp()
    }

    pub fn ln_eval(&self, compute: f64) -> f64 {
        -self.gamma * (compute.ln() - self.alpha_c.ln())
    }
}

fn check_region(lo: f64, hi: f64) -> Result<()> {
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::invalid("region", format!("need 0 < lo < hi, got [{lo}, {hi}]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub compute: f64,
    pub loss: f64,
    pub source_model: String,
}

/// Log-log linear interpolation of a curve at `c`, or `None` outside its range.
fn interpolate(points: &[CurvePoint], c: f64) -> Option<f64> {
    let first = points.first()?;
    let last = points.last()?;
    if c < first.compute || c > last.compute {
        return None;
    }
    let idx = points.partition_point(|p| p.compute < c);
    if idx < points.len() && points[idx].compute == c {
        return Some(points[idx].loss);
    }
    let (a, b) = (&points[idx - 1], &points[idx]);
    let t = (c.ln() - a.compute.ln()) / (b.compute.ln() - a.compute.ln());
    Some((a.loss.ln() + t * (b.loss.ln() - a.loss.ln())).exp())
}

/// Lower envelope of `set` on a log-spaced grid over the region, made
/// non-increasing by a running minimum. Predicted points count only when
/// `include_predicted` is set.
pub fn efficient_frontier(
    set: &CurveSet,
    region_lo: f64,
    region_hi: f64,
    include_predicted: bool,
) -> Result<Vec<FrontierPoint>> {
    check_region(region_lo, region_hi)?;
    let curves: Vec<(&str, Vec<CurvePoint>)> = set
        .iter()
        .map(|c| {
            let pts = if include_predicted {
                c.points().to_vec()
            } else {
                c.trained_points().copied().collect()
            };
            (c.id(), pts)
        })
        .collect();
    let mut out: Vec<FrontierPoint> = Vec::new();
    for c in log_grid(region_lo, region_hi, FRONTIER_GRID) {
        let mut best: Option<(f64, &str)> = None;
        for (id, pts) in &curves {
            if let Some(l) = interpolate(pts, c) {
                if best.map_or(true, |(b, _)| l < b) {
                    best = Some((l, id));
                }
            }
        }
        let Some((mut loss, mut id)) = best else { continue };
        if let Some(prev) = out.last() {
            if prev.loss <= loss {
                loss = prev.loss;
                id = curves
                    .iter()
                    .find(|(i, _)| *i == prev.source_model)
                    .map(|(i, _)| *i)
                    .unwrap_or(id);
            }
        }
        out.push(FrontierPoint {
            compute: c,
            loss,
            source_model: id.to_string(),
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyFrontier);
    }
    Ok(out)
}

/// Ordinary least squares of ln L on ln C over frontier points in the region.
pub fn fit_lc_law(frontier: &[FrontierPoint], region_lo: f64, region_hi: f64) -> Result<PowerScalingLaw> {
    check_region(region_lo, region_hi)?;
    let pts: Vec<(f64, f64)> = frontier
        .iter()
        .filter(|p| p.compute >= region_lo && p.compute <= region_hi)
        .map(|p| (p.compute.ln(), p.loss.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::invalid("frontier", "need at least 2 points inside the region"));
    }
    let n = pts.len() as f64;
    let mu = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let suu: f64 = pts.iter().map(|p| (p.0 - mu).powi(2)).sum();
    let suv: f64 = pts.iter().map(|p| (p.0 - mu) * (p.1 - mv)).sum();
    if suu <= 0.0 {
        return Err(Error::invalid("frontier", "all points share one compute value"));
    }
    let gamma = -suv / suu;
    if !(gamma > 1e-12) {
        return Err(Error::FrontierNotDecreasing);
    }
    // ln L = gamma ln alpha - gamma ln C, through the centroid.
    let ln_alpha = mu + mv / gamma;
    PowerScalingLaw::new(ln_alpha.exp(), gamma, region_lo, region_hi)
}

/// Frontier plus L(C) fit in one step.
pub fn fit_set_law(set: &CurveSet, region_lo: f64, region_hi: f64, include_predicted: bool) -> Result<PowerScalingLaw> {
    let f = efficient_frontier(set, region_lo, region_hi, include_predicted)?;
    fit_lc_law(&f, region_lo, region_hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LndObservation {
    pub n: f64,
    pub d: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LndFitOptions {
    pub delta: f64,
    pub restarts: usize,
    pub seed: u64,
    pub minimize: MinimizeOptions,
}

impl Default for LndFitOptions {
    fn default() -> Self {
        LndFitOptions {
            delta: DEFAULT_HUBER_DELTA,
            restarts: DEFAULT_LND_RESTARTS,
            seed: 0,
            minimize: MinimizeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LndFit {
    pub params: ChinchillaParams,
    pub objective: f64,
    pub restart_index: usize,
}

/// Parameters: ln N_c, ln D_c, ln E, then alpha and beta through softplus.
fn lnd_params(theta: &[f64]) -> ChinchillaParams {
    ChinchillaParams {
        n_c: theta[0].exp(),
        d_c: theta[1].exp(),
        e: theta[2].exp(),
        alpha_n: softplus(theta[3]),
        beta_d: softplus(theta[4]),
    }
}

/// Sum of Huber losses on log residuals, with gradient.
fn lnd_objective(theta: &[f64], obs: &[LndObservation], delta: f64, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let (a, b) = (softplus(theta[3]), softplus(theta[4]));
    let e = theta[2].exp();
    let mut total = 0.0;
    for o in obs {
        let (ln_n, ln_d) = (o.n.ln(), o.d.ln());
        let t1 = (theta[0] - a * ln_n).exp();
        let t2 = (theta[1] - b * ln_d).exp();
        let pred = t1 + t2 + e;
        let r = pred.ln() - o.loss.ln();
        total += huber(r, delta);
        let h = huber_grad(r, delta) / pred;
        grad[0] += h * t1;
        grad[1] += h * t2;
        grad[2] += h * e;
        grad[3] -= h * t1 * ln_n;
        grad[4] -= h * t2 * ln_d;
    }
    grad[3] *= sigmoid(theta[3]);
    grad[4] *= sigmoid(theta[4]);
    total
}

pub fn lnd_huber_objective(params: &ChinchillaParams, obs: &[LndObservation], delta: f64) -> f64 {
    obs.iter()
        .map(|o| {
            let pred = params.n_c / o.n.powf(params.alpha_n) + params.d_c / o.d.powf(params.beta_d) + params.e;
            huber(pred.ln() - o.loss.ln(), delta)
        })
        .sum()
}

fn sample_lnd_init(rng: &mut ChaCha8Rng) -> Vec<f64> {
    vec![
        rng.random_range(0.0..15.0),
        rng.random_range(0.0..15.0),
        rng.random_range(-1.0..1.5),
        inv_softplus(rng.random_range(0.05..1.0)),
        inv_softplus(rng.random_range(0.05..1.0)),
    ]
}

/// Huber fit of the parametric L(N, D) surface to final-loss observations.
pub fn fit_lnd_law(obs: &[LndObservation], opts: &LndFitOptions) -> Result<LndFit> {
    if obs.len() < 5 {
        return Err(Error::invalid("observations", "need at least 5"));
    }
    let distinct = |f: fn(&LndObservation) -> f64| {
        let mut v: Vec<f64> = obs.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct(|o| o.n) < 2 || distinct(|o| o.d) < 2 {
        return Err(Error::invalid(
            "observations",
            "need at least 2 distinct N and D values",
        ));
    }
    if obs.iter().any(|o| !(o.n > 0.0 && o.d > 0.0 && o.loss > 0.0)) {
        return Err(Error::invalid("observations", "N, D and loss must be positive"));
    }
    if !(opts.delta > 0.0) || opts.restarts == 0 {
        return Err(Error::invalid("options", "delta must be > 0 and restarts >= 1"));
    }
    let inits = numopt::sample_inits(&mut sample_lnd_init, opts.restarts, opts.seed);
    let mut f = |t: &[f64], g: &mut [f64]| lnd_objective(t, obs, opts.delta, g);
    let mut best_converged: Option<numopt::OptimResult> = None;
    let mut best_any: Option<numopt::OptimResult> = None;
    for (i, init) in inits.iter().enumerate() {
        let mut r = numopt::minimize(&mut f, init, &opts.minimize);
        r.restart_index = i;
        if !r.objective.is_finite() {
            continue;
        }
        let slot = if r.converged {
            &mut best_converged
        } else {
            &mut best_any
        };
        if slot.as_ref().map_or(true, |b| r.objective < b.objective) {
            *slot = Some(r);
        }
    }
    match (best_converged, best_any) {
        (Some(r), _) => Ok(LndFit {
            params: lnd_params(&r.params),
            objective: r.objective,
            restart_index: r.restart_index,
        }),
        (None, Some(r)) => Err(Error::LndFitNotConverged {
            best_objective: r.objective,
            best: lnd_params(&r.params),
        }),
        (None, None) => Err(Error::OptimizerFailed),
    }
}

/// Trapezoid integral of |ln L_a - ln L_b| against log10 compute.
pub fn abc(a: &PowerScalingLaw, b: &PowerScalingLaw, region_lo: f64, region_hi: f64) -> Result<f64> {
    check_region(region_lo, region_hi)?;
    let grid = log_grid(region_lo, region_hi, ABC_GRID);
    let gap: Vec<(f64, f64)> = grid
        .iter()
        .map(|&c| (c.log10(), (a.ln_eval(c) - b.ln_eval(c)).abs()))
        .collect();
    Ok(gap
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum())
}

/// Law of all fully trained curves, and law of only the selected models'
/// fully trained curves.
pub fn ground_truth_laws(
    full: &CurveSet,
    selected: &[&str],
    region_lo: f64,
    region_hi: f64,
) -> Result<(PowerScalingLaw, PowerScalingLaw)> {
    let full_law = fit_set_law(&full.trained_only(), region_lo, region_hi, false)?;
    let sel = full.subset(selected.iter().copied())?.trained_only();
    let entire = fit_set_law(&sel, region_lo, region_hi, false)?;
    Ok((full_law, entire))
}

/// A fitted GP with the normalization it was trained under and the curve id
/// behind each task.
#[derive(Debug, Clone)]
pub struct GpExtrapolator<'a> {
    pub surrogate: &'a LmcSurrogate,
    pub norm: &'a NormalizationSpec,
    pub task_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolatedLaws {
    pub mean: PowerScalingLaw,
    pub ucb: PowerScalingLaw,
    pub lcb: PowerScalingLaw,
}

/// Extends each modelled curve to `region_hi` with the posterior mean and
/// mean +/- z sd, then fits a law to each extended set.
pub fn extrapolated_laws(
    ex: &GpExtrapolator<'_>,
    set: &CurveSet,
    region_lo: f64,
    region_hi: f64,
    z: f64,
) -> Result<ExtrapolatedLaws> {
    check_region(region_lo, region_hi)?;
    if !(z >= 0.0) {
        return Err(Error::invalid("z", "must be >= 0"));
    }
    let mut sets = [CurveSet::new(), CurveSet::new(), CurveSet::new()];
    for curve in set {
        let trained = curve.trained_only();
        let task = ex.task_ids.iter().position(|id| id == curve.id());
        let last = trained.trained_compute();
        let mut extended = [trained.clone(), trained.clone(), trained.clone()];
        if let (Some(task), true) = (task, last > 0.0 && last < region_hi) {
            let grid: Vec<f64> = log_grid(last, region_hi, EXTENSION_POINTS + 1)
                .into_iter()
                .skip(1)
                .collect();
            let xs: Vec<f64> = grid.iter().map(|&c| ex.norm.compute_to_unit(c)).collect();
            let (mean, var) = ex.surrogate.predict(task, &xs)?;
            for (k, ext) in extended.iter_mut().enumerate() {
                let sign = [0.0, 1.0, -1.0][k];
                ext.extend(
                    grid.iter()
                        .zip(mean.iter().zip(&var))
                        .map(|(&c, (m, v))| CurvePoint::predicted(c, ex.norm.unit_to_loss(m + sign * z * v.sqrt()))),
                )?;
            }
        }
        for (s, c) in sets.iter_mut().zip(extended) {
            s.insert(c)?;
        }
    }
    let [m, u, l] = sets;
    Ok(ExtrapolatedLaws {
        mean: fit_set_law(&m, region_lo, region_hi, true)?,
        ucb: fit_set_law(&u, region_lo, region_hi, true)?,
        lcb: fit_set_law(&l, region_lo, region_hi, true)?,
    })
}

/// Law samples for plotting.
pub fn law_curve(law: &PowerScalingLaw, points: usize) -> Vec<(f64, f64)> {
    log_grid(law.region_lo, law.region_hi, points)
        .into_iter()
        .map(|c| (c, law.eval(c)))
        .collect()
}

/// Wraps a law's samples in a curve, for serialization alongside data.
pub fn law_as_curve(law: &PowerScalingLaw, model: crate::curves::ModelSpec, points: usize) -> Result<LearningCurve> {
    LearningCurve::new(
        model,
        law_curve(law, points)
            .into_iter()
            .map(|(c, l)| CurvePoint::trained(c, l))
            .collect(),
    )
}
