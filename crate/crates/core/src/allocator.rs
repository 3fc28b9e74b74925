//! Successive halving over a model pool, optionally ranking candidates by
//! surrogate-extrapolated learning curves, plus the uniform baseline.
//!
//! All budget accounting is in integer FLOPs. Curves themselves carry
//! compute as `f64`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::curves::{self, CurvePoint, CurveSet, LearningCurve, ModelSpec};
use crate::deep_ensemble::{CurveFamily, DeCurve, DeFitOptions, EnsembleSurrogate};
use crate::error::{Error, Result};
use crate::gp::{self, GpFitOptions, KernelHyperparams, LmcSurrogate, TaskData};
use crate::preprocess::{self, NormalizationSpec};
use crate::seeding::{derive_seed, hash_str};
use crate::synthgen::{self, ChinchillaParams, NoiseConfig, NoiseKind};

pub const DEFAULT_POINTS_PER_CURVE: usize = 20;
pub const DEFAULT_SOURCE_GRID: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    None,
    Lmc,
    DePl,
    DeExp,
    DeMmf,
}

impl SurrogateKind {
    pub fn family(self) -> Option<CurveFamily> {
        match self {
            SurrogateKind::DePl => Some(CurveFamily::Pl),
            SurrogateKind::DeExp => Some(CurveFamily::Exp),
            SurrogateKind::DeMmf => Some(CurveFamily::Mmf),
            _ => None,
        }
    }
}

impl FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(SurrogateKind::None),
            "lmc" => Ok(SurrogateKind::Lmc),
            "de_pl" => Ok(SurrogateKind::DePl),
            "de_exp" => Ok(SurrogateKind::DeExp),
            "de_mmf" => Ok(SurrogateKind::DeMmf),
            other => Err(Error::invalid("surrogate", format!("unknown surrogate `{other}`"))),
        }
    }
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SurrogateKind::None => "none",
            SurrogateKind::Lmc => "lmc",
            SurrogateKind::DePl => "de_pl",
            SurrogateKind::DeExp => "de_exp",
            SurrogateKind::DeMmf => "de_mmf",
        })
    }
}

/// Which curves the surrogate is fitted on each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainOn {
    /// Only the current pool.
    #[default]
    Pool,
    /// Every curve collected so far, pruned models included.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateOptions {
    pub gp: GpFitOptions,
    pub de: DeFitOptions,
    /// Start the GP fit from the previous round's hyperparameters.
    pub warm_start: bool,
    pub train_on: TrainOn,
}

impl Default for SurrogateOptions {
    fn default() -> Self {
        SurrogateOptions {
            gp: GpFitOptions::default(),
            de: DeFitOptions::default(),
            warm_start: true,
            train_on: TrainOn::Pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocConfig {
    /// B, in FLOPs.
    pub total_budget: u128,
    pub eta: u32,
    pub surrogate: SurrogateKind,
    pub points_per_curve: usize,
    pub seed: u64,
    pub surrogate_options: SurrogateOptions,
}

impl AllocConfig {
    pub fn new(total_budget: u128, eta: u32) -> Self {
        AllocConfig {
            total_budget,
            eta,
            surrogate: SurrogateKind::None,
            points_per_curve: DEFAULT_POINTS_PER_CURVE,
            seed: 0,
            surrogate_options: SurrogateOptions::default(),
        }
    }

    pub fn with_surrogate(mut self, surrogate: SurrogateKind) -> Self {
        self.surrogate = surrogate;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_budget == 0 {
            return Err(Error::invalid("total_budget", "must be > 0"));
        }
        if self.eta < 2 {
            return Err(Error::invalid("eta", "must be >= 2"));
        }
        if self.points_per_curve < 2 {
            return Err(Error::invalid("points_per_curve", "must be >= 2"));
        }
        Ok(())
    }
}

/// ceil(log_eta(initial_pool)), with a single pool member taking one round.
pub fn n_rounds(initial_pool: usize, eta: u32) -> usize {
    let eta = eta.max(2) as u128;
    let mut rounds = 0;
    let mut reach: u128 = 1;
    while reach < initial_pool as u128 {
        reach *= eta;
        rounds += 1;
    }
    rounds.max(1)
}

/// C_r = floor(B / (|M_r| * ceil(log_eta |M_0|))).
pub fn round_budget(total_budget: u128, current_pool: usize, initial_pool: usize, eta: u32) -> u128 {
    let denom = current_pool.max(1) as u128 * n_rounds(initial_pool, eta) as u128;
    total_budget / denom
}

pub fn survivors_count(pool: usize, eta: u32) -> usize {
    (pool / eta.max(2) as usize).max(1)
}

/// Pool size at the start of each round.
pub fn pool_schedule(initial_pool: usize, eta: u32) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut p = initial_pool;
    for _ in 0..n_rounds(initial_pool, eta) {
        sizes.push(p);
        p = survivors_count(p, eta);
    }
    sizes
}

/// Sum of the per-model round budgets after round `round`, assuming the
/// pool shrinks on schedule.
pub fn future_budget(total_budget: u128, initial_pool: usize, eta: u32, round: usize) -> u128 {
    pool_schedule(initial_pool, eta)
        .iter()
        .skip(round + 1)
        .map(|&p| round_budget(total_budget, p, initial_pool, eta))
        .sum()
}

/// Whole optimizer steps affordable with `allocated` FLOPs, and their cost.
pub fn quantize_steps(allocated: u128, model: &ModelSpec) -> (u128, u128) {
    let per_step = model.step_flops();
    let steps = allocated / per_step;
    (steps, steps * per_step)
}

/// Provider of trained learning-curve segments.
pub trait CurveSource {
    /// Trained points with compute in (from, to]. The last point sits at `to`.
    fn extend(&self, model: &ModelSpec, from: f64, to: f64) -> Result<Vec<CurvePoint>>;

    /// Noise-free loss after `compute` FLOPs, when the source knows it.
    fn reference_loss(&self, _model: &ModelSpec, _compute: f64) -> Option<f64> {
        None
    }
}

/// Curves drawn from a Chinchilla surface with optional noise.
///
/// Each model owns a fixed log-spaced grid from one step to `c_max`; its
/// noise path is sampled on that grid from a seed tied to the model id, so
/// repeated extensions see one consistent curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSource {
    pub params: ChinchillaParams,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub c_max: f64,
    pub grid_points: usize,
}

impl SyntheticSource {
    pub fn new(params: ChinchillaParams, noise: NoiseConfig, seed: u64, c_max: f64) -> Result<Self> {
        params.validate()?;
        noise.validate()?;
        if !(c_max > 0.0 && c_max.is_finite()) {
            return Err(Error::invalid("c_max", "must be positive and finite"));
        }
        Ok(SyntheticSource {
            params,
            noise,
            seed,
            c_max,
            grid_points: DEFAULT_SOURCE_GRID,
        })
    }

    pub fn noiseless(params: ChinchillaParams, c_max: f64) -> Result<Self> {
        Self::new(params, NoiseConfig::none(), 0, c_max)
    }

    fn grid(&self, model: &ModelSpec) -> Vec<f64> {
        let lo = model.step_flops() as f64;
        if self.c_max <= lo {
            return vec![lo];
        }
        synthgen::log_grid(lo, self.c_max, self.grid_points.max(2))
    }

    fn clean_loss(&self, model: &ModelSpec, compute: f64) -> f64 {
        let n = model.n_params as f64;
        synthgen::surface_unchecked(&self.params, n, compute / (6.0 * n))
    }

    /// Log-loss offsets on the model's grid.
    fn offsets(&self, model: &ModelSpec, grid: &[f64]) -> Result<Vec<f64>> {
        let n = model.n_params as f64;
        let slopes: Vec<f64> = grid
            .iter()
            .map(|c| synthgen::log_log_slope(&self.params, n, c / (6.0 * n)))
            .collect();
        synthgen::sample_noise(
            &self.noise,
            grid,
            &slopes,
            derive_seed(&[self.seed, hash_str(&model.id)]),
        )
    }
}

fn interp_log(grid: &[f64], values: &[f64], c: f64) -> f64 {
    let lc = c.ln();
    match grid.iter().position(|&g| g >= c) {
        Some(0) => values[0],
        None => values[values.len() - 1],
        Some(j) => {
            let (a, b) = (grid[j - 1].ln(), grid[j].ln());
            let t = (lc - a) / (b - a);
            values[j - 1] + t * (values[j] - values[j - 1])
        }
    }
}

fn strictly_below(c: f64, to: f64) -> bool {
    c < to * (1.0 - 1e-12)
}

impl CurveSource for SyntheticSource {
    fn extend(&self, model: &ModelSpec, from: f64, to: f64) -> Result<Vec<CurvePoint>> {
        let fail = |reason: String| Error::CurveSource {
            model: model.id.clone(),
            reason,
        };
        if !(to > from) {
            return Err(fail(format!("empty extension ({from:e}, {to:e}]")));
        }
        if to > self.c_max * (1.0 + 1e-12) {
            return Err(fail(format!(
                "{to:e} FLOPs exceeds the source horizon {:e}",
                self.c_max
            )));
        }
        let n = model.n_params as f64;
        if to / (6.0 * n) < 1.0 {
            return Err(fail("extension ends below one token".into()));
        }
        let grid = self.grid(model);
        let noisy = self.noise.kind != NoiseKind::None && self.noise.weight > 0.0;
        let offsets = if noisy { self.offsets(model, &grid)? } else { Vec::new() };
        let loss_at = |c: f64, off: f64| {
            let l = self.clean_loss(model, c);
            if off == 0.0 {
                l
            } else {
                (l.ln() + off).exp()
            }
        };
        let mut out = Vec::new();
        for (i, &c) in grid.iter().enumerate() {
            if c > from && strictly_below(c, to) {
                out.push(CurvePoint::trained(c, loss_at(c, if noisy { offsets[i] } else { 0.0 })));
            }
        }
        let end_off = if noisy { interp_log(&grid, &offsets, to) } else { 0.0 };
        out.push(CurvePoint::trained(to, loss_at(to, end_off)));
        Ok(out)
    }

    fn reference_loss(&self, model: &ModelSpec, compute: f64) -> Option<f64> {
        let n = model.n_params as f64;
        (compute / (6.0 * n) >= 1.0).then(|| self.clean_loss(model, compute))
    }
}

/// Slices pre-recorded curves. Losses between stored points are
/// interpolated linearly in log-log space.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedSource {
    pub curves: CurveSet,
}

impl RecordedSource {
    pub fn new(curves: CurveSet) -> Self {
        RecordedSource {
            curves: curves.trained_only(),
        }
    }

    /// One model spec per stored curve.
    pub fn models(&self) -> Vec<ModelSpec> {
        self.curves.iter().map(|c| c.model().clone()).collect()
    }

    fn stored(&self, model: &ModelSpec) -> Result<&LearningCurve> {
        self.curves
            .get(&model.id)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| Error::CurveSource {
                model: model.id.clone(),
                reason: "no recorded curve".into(),
            })
    }
}

fn loss_at_recorded(points: &[CurvePoint], c: f64) -> f64 {
    match points.iter().position(|p| p.compute >= c) {
        Some(j) if j == 0 || points[j].compute == c => points[j].loss,
        None => points[points.len() - 1].loss,
        Some(j) => {
            let (p, q) = (points[j - 1], points[j]);
            let t = (c.ln() - p.compute.ln()) / (q.compute.ln() - p.compute.ln());
            (p.loss.ln() + t * (q.loss.ln() - p.loss.ln())).exp()
        }
    }
}

impl CurveSource for RecordedSource {
    fn extend(&self, model: &ModelSpec, from: f64, to: f64) -> Result<Vec<CurvePoint>> {
        let curve = self.stored(model)?;
        let pts = curve.points();
        let last = pts[pts.len() - 1].compute;
        if !(to > from) || to > last * (1.0 + 1e-9) {
            return Err(Error::CurveSource {
                model: model.id.clone(),
                reason: format!("requested ({from:e}, {to:e}] but the recording ends at {last:e}"),
            });
        }
        let mut out: Vec<CurvePoint> = pts
            .iter()
            .filter(|p| p.compute > from && strictly_below(p.compute, to))
            .copied()
            .collect();
        out.push(CurvePoint::trained(to, loss_at_recorded(pts, to)));
        Ok(out)
    }

    fn reference_loss(&self, model: &ModelSpec, compute: f64) -> Option<f64> {
        let curve = self.stored(model).ok()?;
        let pts = curve.points();
        let prefix = pts
            .iter()
            .filter(|p| p.compute <= compute)
            .map(|p| p.loss)
            .fold(f64::INFINITY, f64::min);
        Some(prefix.min(loss_at_recorded(pts, compute.min(pts[pts.len() - 1].compute))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// C_r.
    pub budget_per_model: u128,
    pub pool: Vec<String>,
    /// Per pool member: C_r plus carried and final-round extra budget.
    pub allocated: Vec<u128>,
    pub steps: Vec<u128>,
    pub consumed: Vec<u128>,
    /// Selection score per pool member; `None` for a curve with no points.
    pub scores: Vec<Option<f64>>,
    pub survivors: Vec<String>,
    pub notes: Vec<String>,
}

impl RoundRecord {
    fn new(round: usize, budget_per_model: u128) -> Self {
        RoundRecord {
            round,
            budget_per_model,
            pool: Vec::new(),
            allocated: Vec::new(),
            steps: Vec::new(),
            consumed: Vec::new(),
            scores: Vec::new(),
            survivors: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn zero_step_models(&self) -> Vec<&str> {
        self.pool
            .iter()
            .zip(&self.steps)
            .filter(|(_, &s)| s == 0)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationTrace {
    pub rounds: Vec<RoundRecord>,
    /// Trained points only.
    pub final_curves: CurveSet,
    pub spent: u128,
    pub total_budget: u128,
    pub survivors: Vec<String>,
    pub dropped: Vec<String>,
}

impl AllocationTrace {
    /// Model and value of the lowest trained loss found.
    pub fn best(&self) -> Result<(String, f64)> {
        curves::min_loss(&self.final_curves)
    }

    pub fn best_loss(&self) -> Result<f64> {
        self.best().map(|(_, l)| l)
    }
}

struct Engine<'a, S: CurveSource + ?Sized> {
    config: &'a AllocConfig,
    source: &'a S,
    initial: usize,
    n_rounds: usize,
    curves: BTreeMap<String, LearningCurve>,
    used: BTreeMap<String, u128>,
    carry: BTreeMap<String, u128>,
    spent: u128,
    dropped: Vec<String>,
    last_gp: Option<(Vec<String>, KernelHyperparams)>,
}

impl<S: CurveSource + ?Sized> Clone for Engine<'_, S> {
    fn clone(&self) -> Self {
        Engine {
            config: self.config,
            source: self.source,
            initial: self.initial,
            n_rounds: self.n_rounds,
            curves: self.curves.clone(),
            used: self.used.clone(),
            carry: self.carry.clone(),
            spent: self.spent,
            dropped: self.dropped.clone(),
            last_gp: self.last_gp.clone(),
        }
    }
}

fn ids(pool: &[ModelSpec]) -> Vec<String> {
    pool.iter().map(|m| m.id.clone()).collect()
}

impl<'a, S: CurveSource + ?Sized> Engine<'a, S> {
    fn new(models: &[ModelSpec], config: &'a AllocConfig, source: &'a S) -> Result<Self> {
        config.validate()?;
        if models.is_empty() {
            return Err(Error::invalid("models", "pool must not be empty"));
        }
        let mut curves = BTreeMap::new();
        for m in models {
            if curves.insert(m.id.clone(), LearningCurve::empty(m.clone())).is_some() {
                return Err(Error::DuplicateModel(m.id.clone()));
            }
        }
        Ok(Engine {
            config,
            source,
            initial: models.len(),
            n_rounds: n_rounds(models.len(), config.eta),
            used: models.iter().map(|m| (m.id.clone(), 0)).collect(),
            curves,
            carry: BTreeMap::new(),
            spent: 0,
            dropped: Vec::new(),
            last_gp: None,
        })
    }

    fn base_budget(&self, pool: usize) -> u128 {
        round_budget(self.config.total_budget, pool, self.initial, self.config.eta)
    }

    /// Floor remainders plus pruned models' leftovers, split over the final pool.
    fn final_extra(&self, pool: &[ModelSpec], base: u128) -> u128 {
        let carried: u128 = pool.iter().filter_map(|m| self.carry.get(&m.id)).sum();
        let free = self
            .config
            .total_budget
            .saturating_sub(self.spent)
            .saturating_sub(carried)
            .saturating_sub(base * pool.len() as u128);
        free / pool.len().max(1) as u128
    }

    /// Trains every pool member on its allocation. Members whose source
    /// fails are removed from `pool`.
    fn train(&mut self, pool: &mut Vec<ModelSpec>, round: usize, base: u128, extra: u128) -> Result<RoundRecord> {
        let mut rec = RoundRecord::new(round, base);
        let mut kept = Vec::with_capacity(pool.len());
        let mut last_err = None;
        for m in pool.drain(..) {
            let alloc = base + extra + self.carry.remove(&m.id).unwrap_or(0);
            let (steps, consumed) = quantize_steps(alloc, &m);
            if steps > 0 {
                let before = self.used[&m.id];
                let after = before + consumed;
                let curve = self.curves.get_mut(&m.id).expect("pool models have curves");
                let res = self
                    .source
                    .extend(&m, before as f64, after as f64)
                    .and_then(|pts| curve.extend(pts));
                if let Err(e) = res {
                    rec.notes.push(format!("dropped {}: {e}", m.id));
                    self.dropped.push(m.id.clone());
                    last_err = Some(e);
                    continue;
                }
                self.used.insert(m.id.clone(), after);
                self.spent += consumed;
            } else {
                rec.notes.push(format!("{} trained zero steps", m.id));
            }
            self.carry.insert(m.id.clone(), alloc - consumed);
            rec.pool.push(m.id.clone());
            rec.allocated.push(alloc);
            rec.steps.push(steps);
            rec.consumed.push(consumed);
            kept.push(m);
        }
        *pool = kept;
        match (pool.is_empty(), last_err) {
            (true, Some(e)) => Err(e),
            _ => Ok(rec),
        }
    }

    fn working_set(&self, pool: &[ModelSpec], tails: &BTreeMap<String, Vec<CurvePoint>>) -> CurveSet {
        let mut set = CurveSet::new();
        for m in pool {
            let mut c = self.curves[&m.id].clone();
            if let Some(t) = tails.get(&m.id) {
                // Tails are built strictly past the trained end.
                let _ = c.extend(t.iter().copied());
            }
            set.upsert(c);
        }
        set
    }

    /// Predicted continuations for pool members out to the compute each
    /// would reach by surviving every remaining round. Any surrogate
    /// failure yields no tails and a note.
    fn predict_tails(
        &mut self,
        pool: &[ModelSpec],
        round: usize,
        notes: &mut Vec<String>,
    ) -> BTreeMap<String, Vec<CurvePoint>> {
        match self.try_predict_tails(pool, round) {
            Ok(t) => t,
            Err(e) => {
                notes.push(format!("surrogate failed, ranking on trained losses: {e}"));
                BTreeMap::new()
            }
        }
    }

    fn try_predict_tails(&mut self, pool: &[ModelSpec], round: usize) -> Result<BTreeMap<String, Vec<CurvePoint>>> {
        let cfg = self.config;
        let min_points = if cfg.surrogate == SurrogateKind::Lmc { 2 } else { 3 };
        let candidates: Vec<&LearningCurve> = match cfg.surrogate_options.train_on {
            TrainOn::Pool => pool.iter().map(|m| &self.curves[&m.id]).collect(),
            TrainOn::All => self.curves.values().collect(),
        };
        let train: Vec<LearningCurve> = candidates
            .into_iter()
            .filter(|c| c.len() >= min_points)
            .map(|c| preprocess::subsample(c, cfg.points_per_curve))
            .collect::<Result<_>>()?;
        if train.is_empty() {
            return Err(Error::invalid("surrogate", "no curve has enough points to fit"));
        }
        let ahead = future_budget(cfg.total_budget, self.initial, cfg.eta, round);
        let targets: Vec<(usize, f64)> = pool
            .iter()
            .filter_map(|m| {
                let i = train.iter().position(|c| c.id() == m.id)?;
                Some((i, (self.used[&m.id] + ahead) as f64))
            })
            .collect();

        let first = train
            .iter()
            .filter_map(|c| c.points().first().map(|p| p.compute))
            .fold(f64::INFINITY, f64::min);
        let horizon = targets.iter().map(|t| t.1).fold(cfg.total_budget as f64, f64::max);
        let losses = train.iter().flat_map(|c| c.points().iter().map(|p| p.loss));
        let (lo, hi) = losses.fold((f64::INFINITY, 0.0f64), |(a, b), l| (a.min(l), b.max(l)));
        let hi = if hi > lo { hi } else { lo * (1.0 + 1e-6) };
        let spec = NormalizationSpec::new(first, horizon, lo, hi)?;
        let norm: Vec<_> = train
            .iter()
            .map(|c| preprocess::normalize(c, &spec))
            .collect::<Result<_>>()?;

        let seed = derive_seed(&[cfg.seed, round as u64]);
        let mut tails = BTreeMap::new();
        let mut emit = |i: usize, grid: &[f64], means: &[f64]| {
            let last = train[i].trained_compute();
            let pts: Vec<CurvePoint> = grid
                .iter()
                .zip(means)
                .map(|(&x, &y)| CurvePoint::predicted(spec.unit_to_compute(x), spec.unit_to_loss(y)))
                .filter(|p| p.compute > last * (1.0 + 1e-12) && p.loss.is_finite() && p.loss > 0.0)
                .collect();
            tails.insert(train[i].id().to_string(), pts);
        };

        if cfg.surrogate == SurrogateKind::Lmc {
            let tasks: Vec<TaskData> = norm
                .iter()
                .map(|n| TaskData {
                    x: n.x.clone(),
                    y: n.y.clone(),
                })
                .collect();
            let task_ids: Vec<String> = train.iter().map(|c| c.id().to_string()).collect();
            let mut opts = GpFitOptions {
                seed,
                ..cfg.surrogate_options.gp.clone()
            };
            if cfg.surrogate_options.warm_start && opts.warm_start.is_none() {
                opts.warm_start = self
                    .last_gp
                    .as_ref()
                    .map(|(prev_ids, h)| remap_hyper(h, prev_ids, &task_ids));
            }
            let gp = LmcSurrogate::fit(&tasks, &opts)?;
            for &(i, h) in &targets {
                let last_x = *norm[i].x.last().expect("fitted curves are non-empty");
                let grid = gp::prediction_grid(last_x, spec.compute_to_unit(h).min(1.0));
                let means = gp.predict_mean(i, &grid)?;
                emit(i, &grid, &means);
            }
            self.last_gp = Some((task_ids, gp.hyper().clone()));
        } else {
            let family = cfg.surrogate.family().expect("non-LMC surrogates are ensembles");
            let de_curves: Vec<DeCurve> = norm
                .iter()
                .map(|n| DeCurve {
                    n_params: n.model.n_params,
                    x: n.x.iter().map(|x| 1.0 + x).collect(),
                    y: n.y.clone(),
                })
                .collect();
            let opts = DeFitOptions {
                seed,
                ..cfg.surrogate_options.de
            };
            let de = EnsembleSurrogate::fit(&de_curves, family, &opts)?;
            for &(i, h) in &targets {
                let last_x = *norm[i].x.last().expect("fitted curves are non-empty");
                let grid = gp::prediction_grid(last_x, spec.compute_to_unit(h).min(1.0));
                let shifted: Vec<f64> = grid.iter().map(|x| 1.0 + x).collect();
                let means = de.predict(norm[i].model.n_params, &shifted)?;
                emit(i, &grid, &means);
            }
        }
        Ok(tails)
    }

    fn finish(self, rounds: Vec<RoundRecord>, survivors: Vec<ModelSpec>) -> AllocationTrace {
        let mut final_curves = CurveSet::new();
        for c in self.curves.into_values() {
            final_curves.upsert(c.trained_only());
        }
        AllocationTrace {
            rounds,
            final_curves,
            spent: self.spent,
            total_budget: self.config.total_budget,
            survivors: ids(&survivors),
            dropped: self.dropped,
        }
    }
}

/// Carries hyperparameters over to a new task list: shared values as they
/// are, per-task values by model id, defaults for unseen models.
fn remap_hyper(prev: &KernelHyperparams, prev_ids: &[String], ids: &[String]) -> KernelHyperparams {
    let mut h = KernelHyperparams::default_for(ids.len());
    h.expdec_alpha = prev.expdec_alpha;
    h.expdec_beta = prev.expdec_beta;
    h.expdec_var = prev.expdec_var;
    h.white_var = prev.white_var;
    h.noise_var = prev.noise_var;
    for (j, id) in ids.iter().enumerate() {
        if let Some(i) = prev_ids.iter().position(|p| p == id) {
            h.w1[j] = prev.w1[i];
            h.kappa1[j] = prev.kappa1[i];
            h.w2[j] = prev.w2[i];
            h.kappa2[j] = prev.kappa2[i];
            h.kappa3[j] = prev.kappa3[i];
        }
    }
    h
}

fn score(working: &CurveSet, id: &str) -> f64 {
    working
        .get(id)
        .and_then(LearningCurve::min_loss)
        .unwrap_or(f64::INFINITY)
}

/// The `max(1, floor(|pool|/eta))` models with the lowest minimum over
/// trained and predicted points. Ties go to fewer parameters, then to id.
pub fn top_k(pool: &[ModelSpec], working: &CurveSet, eta: u32) -> Vec<ModelSpec> {
    let mut ranked: Vec<(f64, &ModelSpec)> = pool.iter().map(|m| (score(working, &m.id), m)).collect();
    ranked.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.n_params.cmp(&b.1.n_params))
            .then(a.1.id.cmp(&b.1.id))
    });
    ranked
        .into_iter()
        .take(survivors_count(pool.len(), eta))
        .map(|(_, m)| m.clone())
        .collect()
}

fn record_scores(rec: &mut RoundRecord, working: &CurveSet) {
    rec.scores = rec
        .pool
        .iter()
        .map(|id| Some(score(working, id)).filter(|s| s.is_finite()))
        .collect();
}

/// Successive halving with the selection rule set by `config.surrogate`.
pub fn run_sh<S: CurveSource + ?Sized>(
    models: &[ModelSpec],
    config: &AllocConfig,
    source: &S,
) -> Result<AllocationTrace> {
    halving(models, config, source, None)
}

/// Halving loop. `force` pins one model to the top of every ranking and
/// disables the surrogate.
fn halving<S: CurveSource + ?Sized>(
    models: &[ModelSpec],
    config: &AllocConfig,
    source: &S,
    force: Option<&str>,
) -> Result<AllocationTrace> {
    let mut eng = Engine::new(models, config, source)?;
    let mut pool = models.to_vec();
    let mut rounds = Vec::with_capacity(eng.n_rounds);
    let surrogate = config.surrogate != SurrogateKind::None && force.is_none();
    for r in 0..eng.n_rounds {
        let last = r + 1 == eng.n_rounds;
        let base = eng.base_budget(pool.len());
        let extra = if last { eng.final_extra(&pool, base) } else { 0 };
        let mut rec = eng.train(&mut pool, r, base, extra)?;
        if rec.steps.iter().all(|&s| s == 0) {
            rec.notes.push("every model trained zero steps; stopping early".into());
            record_scores(&mut rec, &eng.working_set(&pool, &BTreeMap::new()));
            rec.survivors = ids(&pool);
            rounds.push(rec);
            break;
        }
        let k = survivors_count(pool.len(), config.eta);
        let tails = if surrogate && !last && k < pool.len() {
            eng.predict_tails(&pool, r, &mut rec.notes)
        } else {
            BTreeMap::new()
        };
        let working = eng.working_set(&pool, &tails);
        record_scores(&mut rec, &working);
        pool = match force.and_then(|id| pool.iter().position(|m| m.id == id)) {
            Some(i) => {
                let pinned = pool.remove(i);
                let mut rest = top_k(&pool, &working, config.eta);
                rest.insert(0, pinned);
                rest.truncate(k);
                rest
            }
            None => top_k(&pool, &working, config.eta),
        };
        rec.survivors = ids(&pool);
        rounds.push(rec);
    }
    Ok(eng.finish(rounds, pool))
}

/// Plain halving in which `keep` wins every selection, so it trains through
/// every round.
pub fn run_sh_keeping<S: CurveSource + ?Sized>(
    models: &[ModelSpec],
    config: &AllocConfig,
    source: &S,
    keep: &str,
) -> Result<AllocationTrace> {
    if !models.iter().any(|m| m.id == keep) {
        return Err(Error::UnknownModel(keep.to_string()));
    }
    halving(models, config, source, Some(keep))
}

/// Best loss any single pool member reaches on its own curve when it is
/// kept through every round of the halving schedule. Plain SH attains this
/// value exactly when it keeps the right model to the end.
pub fn pool_optimum<S: CurveSource + ?Sized>(
    models: &[ModelSpec],
    config: &AllocConfig,
    source: &S,
) -> Result<OracleOutcome> {
    let mut best: Option<(String, f64, u64)> = None;
    for m in models {
        let trace = run_sh_keeping(models, config, source, &m.id)?;
        if let Some(loss) = trace.final_curves.get(&m.id).and_then(LearningCurve::min_trained_loss) {
            let cand = (m.id.clone(), loss, m.n_params);
            if best.as_ref().map_or(true, |b| better(&cand, b)) {
                best = Some(cand);
            }
        }
    }
    let (final_model, best_loss, _) = best.ok_or(Error::EmptyCurveSet)?;
    Ok(OracleOutcome {
        best_loss,
        final_model,
        sequences: models.len(),
    })
}

/// One-shot baseline: every model gets floor(B / |M_0|).
pub fn run_uniform<S: CurveSource + ?Sized>(
    models: &[ModelSpec],
    config: &AllocConfig,
    source: &S,
) -> Result<AllocationTrace> {
    let mut eng = Engine::new(models, config, source)?;
    let mut pool = models.to_vec();
    let base = config.total_budget / models.len() as u128;
    let mut rec = eng.train(&mut pool, 0, base, 0)?;
    record_scores(&mut rec, &eng.working_set(&pool, &BTreeMap::new()));
    rec.survivors = ids(&pool);
    Ok(eng.finish(vec![rec], pool))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOutcome {
    pub best_loss: f64,
    /// Model holding `best_loss` in the best selection sequence.
    pub final_model: String,
    pub sequences: usize,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

fn better(a: &(String, f64, u64), b: &(String, f64, u64)) -> bool {
    a.1 < b.1 || (a.1 == b.1 && (a.2, &a.0) < (b.2, &b.0))
}

/// Best achievable minimum loss over every selection sequence the halving
/// schedule permits, with per-round budgets and step quantization applied
/// exactly as in [`run_sh`]. Exponential in the pool size.
pub fn brute_force_oracle<S: CurveSource + ?Sized>(
    models: &[ModelSpec],
    config: &AllocConfig,
    source: &S,
) -> Result<OracleOutcome> {
    if models.len() > 10 {
        return Err(Error::invalid("models", "exhaustive search is limited to 10 models"));
    }
    let eng = Engine::new(models, config, source)?;
    let mut best: Option<(String, f64, u64)> = None;
    let mut sequences = 0;
    explore(eng, models.to_vec(), 0, &mut best, &mut sequences)?;
    let (final_model, best_loss, _) = best.ok_or(Error::EmptyCurveSet)?;
    Ok(OracleOutcome {
        best_loss,
        final_model,
        sequences,
    })
}

fn explore<S: CurveSource + ?Sized>(
    mut eng: Engine<'_, S>,
    mut pool: Vec<ModelSpec>,
    r: usize,
    best: &mut Option<(String, f64, u64)>,
    sequences: &mut usize,
) -> Result<()> {
    let last = r + 1 == eng.n_rounds;
    let base = eng.base_budget(pool.len());
    let extra = if last { eng.final_extra(&pool, base) } else { 0 };
    let rec = eng.train(&mut pool, r, base, extra)?;
    if last || rec.steps.iter().all(|&s| s == 0) {
        *sequences += 1;
        let set = CurveSet::from_curves(eng.curves.values().cloned())?;
        if let Ok((id, loss)) = curves::min_loss(&set) {
            let n = set.get(&id).map_or(0, |c| c.model().n_params);
            let cand = (id, loss, n);
            if best.as_ref().map_or(true, |b| better(&cand, b)) {
                *best = Some(cand);
            }
        }
        return Ok(());
    }
    let k = survivors_count(pool.len(), eng.config.eta);
    for combo in combinations(pool.len(), k) {
        let next: Vec<ModelSpec> = combo.iter().map(|&i| pool[i].clone()).collect();
        explore(eng.clone(), next, r + 1, best, sequences)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hoffmann_source(c_max: f64) -> SyntheticSource {
        SyntheticSource::noiseless(ChinchillaParams::HOFFMANN, c_max).unwrap()
    }

    /// Schoolbook division of a decimal string, digit by digit.
    fn long_division(dividend: &str, divisor: u128) -> (String, u128) {
        let mut rem = 0u128;
        let mut q = String::new();
        for d in dividend.bytes() {
            rem = rem * 10 + (d - b'0') as u128;
            let digit = rem / divisor;
            rem -= digit * divisor;
            if !(q.is_empty() && digit == 0) {
                q.push((b'0' + digit as u8) as char);
            }
        }
        if q.is_empty() {
            q.push('0');
        }
        (q, rem)
    }

    fn pool(sizes: &[u64]) -> Vec<ModelSpec> {
        sizes.iter().map(|&n| ModelSpec::synthetic(n)).collect()
    }

    #[test]
    fn round_budget_examples() {
        assert_eq!(round_budget(1200, 8, 8, 2), 50);
        assert_eq!(round_budget(1000, 5, 20, 2), 40);
        assert_eq!(n_rounds(1, 2), 1);
        assert_eq!(round_budget(777, 1, 1, 2), 777);
        assert_eq!(n_rounds(8, 2), 3);
        assert_eq!(n_rounds(9, 2), 4);
        assert_eq!(n_rounds(9, 3), 2);
        assert_eq!(n_rounds(20, 2), 5);
    }

    #[test]
    fn schedule_twenty_models() {
        assert_eq!(pool_schedule(20, 2), vec![20, 10, 5, 2, 1]);
        assert_eq!(pool_schedule(8, 2), vec![8, 4, 2]);
        assert_eq!(pool_schedule(5, 2), vec![5, 2, 1]);
    }

    #[test]
    fn horizon_over_projected_schedule() {
        // After round 0 a survivor holds 50 and is promised 100 + 200 more.
        assert_eq!(future_budget(1200, 8, 2, 0), 300);
        assert_eq!(50 + future_budget(1200, 8, 2, 0), 350);
        assert_eq!(future_budget(1200, 8, 2, 2), 0);
    }

    #[test]
    fn quantize_examples() {
        let m = ModelSpec::new("m", 1_000_000, 1_000_000).unwrap();
        assert_eq!(quantize_steps(6_000_000_000_000_000, &m), (1000, 6_000_000_000_000_000));
        assert_eq!(quantize_steps(6_000_000_000_000 - 1, &m), (0, 0));
        let big = ModelSpec::new("b", 1_000_000_000, 500_000).unwrap();
        // 1e16 / 3e15 = 3 remainder 1e15.
        assert_eq!(quantize_steps(10_000_000_000_000_000, &big), (3, 9_000_000_000_000_000));
    }

    #[test]
    fn top_k_tie_break_prefers_small_models() {
        let models = pool(&[1_000_000_000, 1_000_000, 100_000_000, 10_000_000]);
        let set = CurveSet::from_curves(
            models
                .iter()
                .map(|m| LearningCurve::new(m.clone(), vec![CurvePoint::trained(1e20, 3.0)]).unwrap()),
        )
        .unwrap();
        let top = top_k(&models, &set, 2);
        assert_eq!(ids(&top), vec!["n1000000", "n10000000"]);
        assert_eq!(top_k(&models[..1], &set, 2).len(), 1);
    }

    #[test]
    fn single_model_gets_everything() {
        let models = pool(&[1 << 20]);
        let budget = 10u128.pow(17) + 12345;
        let cfg = AllocConfig::new(budget, 2);
        let t = run_sh(&models, &cfg, &hoffmann_source(budget as f64)).unwrap();
        let (_, consumed) = quantize_steps(budget, &models[0]);
        assert_eq!(t.spent, consumed);
        assert_eq!(t.rounds.len(), 1);
        let u = run_uniform(&models, &cfg, &hoffmann_source(budget as f64)).unwrap();
        assert_eq!(u.final_curves, t.final_curves);
    }

    #[test]
    fn sh_twenty_models_follows_schedule() {
        let models = pool(&(0..20).map(|i| 1u64 << (12 + i)).collect::<Vec<_>>());
        let budget = 10u128.pow(19);
        let cfg = AllocConfig::new(budget, 2);
        let t = run_sh(&models, &cfg, &hoffmann_source(budget as f64)).unwrap();
        let sizes: Vec<usize> = t.rounds.iter().map(|r| r.pool.len()).collect();
        assert_eq!(sizes, vec![20, 10, 5, 2, 1]);
        let surv: Vec<usize> = t.rounds.iter().map(|r| r.survivors.len()).collect();
        assert_eq!(surv, vec![10, 5, 2, 1, 1]);
        assert!(t.spent <= budget);
        assert!(!t.final_curves.has_predicted());
        // Budgets grow as the pool shrinks.
        assert_eq!(t.rounds[0].budget_per_model, budget / 100);
        assert_eq!(t.rounds[4].budget_per_model, budget / 5);
    }

    #[test]
    fn sh_without_surrogate_is_deterministic() {
        let models = pool(&[1 << 10, 1 << 16, 1 << 22, 1 << 26, 1 << 30]);
        let budget = 10u128.pow(18);
        let cfg = AllocConfig::new(budget, 2);
        let src = hoffmann_source(budget as f64);
        assert_eq!(
            run_sh(&models, &cfg, &src).unwrap(),
            run_sh(&models, &cfg, &src).unwrap()
        );
    }

    #[test]
    fn uniform_allocates_even_split() {
        let models = pool(&[4, 8, 16, 32, 64]);
        let cfg = AllocConfig::new(1000 * 6 * 64, 2);
        let t = run_uniform(&models, &cfg, &hoffmann_source(1e9)).unwrap();
        assert!(t.rounds[0].allocated.iter().all(|&a| a == 1000 * 6 * 64 / 5));
        assert_eq!(t.survivors.len(), 5);
    }

    #[test]
    fn tiny_budget_stops_early() {
        let models = pool(&[1 << 30, 1 << 31]);
        let cfg = AllocConfig::new(1000, 2);
        let t = run_sh(&models, &cfg, &hoffmann_source(1e3)).unwrap();
        assert_eq!(t.spent, 0);
        assert_eq!(t.rounds.len(), 1);
        assert_eq!(t.rounds[0].zero_step_models().len(), 2);
        assert!(t.rounds[0].notes.iter().any(|n| n.contains("stopping early")));
    }

    #[test]
    fn trained_prefixes_are_consistent_across_calls() {
        let noise = NoiseConfig::new(NoiseKind::Brownian, 0.01, 1.0);
        let src = SyntheticSource::new(ChinchillaParams::HOFFMANN, noise, 3, 1e18).unwrap();
        let m = ModelSpec::synthetic(1 << 20);
        let whole = src.extend(&m, 0.0, 1e17).unwrap();
        let mut parts = src.extend(&m, 0.0, 1e16).unwrap();
        parts.extend(src.extend(&m, 1e16, 1e17).unwrap());
        let last_whole = whole.last().unwrap();
        let last_parts = parts.last().unwrap();
        assert_eq!(last_whole.compute, last_parts.compute);
        assert!((last_whole.loss - last_parts.loss).abs() < 1e-12);
        for p in whole.iter().take(whole.len() - 1) {
            assert!(parts.iter().any(|q| q.compute == p.compute && q.loss == p.loss));
        }
    }

    #[test]
    fn recorded_source_slices_and_interpolates() {
        let m = ModelSpec::synthetic(1000);
        let pts = vec![
            CurvePoint::trained(1e10, 4.0),
            CurvePoint::trained(1e11, 3.0),
            CurvePoint::trained(1e12, 2.5),
        ];
        let src = RecordedSource::new(CurveSet::from_curves([LearningCurve::new(m.clone(), pts).unwrap()]).unwrap());
        let seg = src.extend(&m, 0.0, 1e11).unwrap();
        assert_eq!(seg.len(), 2);
        let mid = src.extend(&m, 1e11, 10f64.powf(11.5)).unwrap();
        assert_eq!(mid.len(), 1);
        assert!((mid[0].loss - (3.0f64.ln() * 0.5 + 2.5f64.ln() * 0.5).exp()).abs() < 1e-12);
        assert!(src.extend(&m, 1e11, 1e13).is_err());
    }

    #[test]
    fn failing_source_drops_model_with_note() {
        let m_ok = ModelSpec::synthetic(1000);
        let m_short = ModelSpec::synthetic(2000);
        let curve = |m: &ModelSpec, end: f64| {
            LearningCurve::new(
                m.clone(),
                vec![CurvePoint::trained(1e4, 5.0), CurvePoint::trained(end, 3.0)],
            )
            .unwrap()
        };
        let src = RecordedSource::new(CurveSet::from_curves([curve(&m_ok, 1e12), curve(&m_short, 1e5)]).unwrap());
        let cfg = AllocConfig::new(1_000_000_000_000, 2);
        let t = run_sh(&[m_ok, m_short], &cfg, &src).unwrap();
        assert_eq!(t.dropped, vec!["n2000".to_string()]);
        assert!(t.rounds[0].notes.iter().any(|n| n.starts_with("dropped n2000")));
        assert_eq!(t.survivors, vec!["n1000".to_string()]);
    }

    #[test]
    fn brute_force_matches_exhaustive_count() {
        let models = pool(&[1 << 14, 1 << 18, 1 << 22, 1 << 26, 1 << 28, 1 << 30]);
        let budget = 10u128.pow(18);
        let cfg = AllocConfig::new(budget, 2);
        let src = hoffmann_source(budget as f64);
        let o = brute_force_oracle(&models, &cfg, &src).unwrap();
        // 6 -> 3 -> 1: C(6,3) * C(3,1).
        assert_eq!(o.sequences, 60);
        let sh = run_sh(&models, &cfg, &src).unwrap();
        assert!(o.best_loss <= sh.best_loss().unwrap() + 1e-12);
    }

    #[test]
    fn pool_optimum_bounds_plain_sh() {
        let models = pool(&[1 << 8, 1 << 14, 1 << 20, 1 << 26, 1 << 32, 1 << 38, 1 << 40]);
        let budget = 10u128.pow(18);
        let cfg = AllocConfig::new(budget, 2);
        let src = hoffmann_source(budget as f64);
        let opt = pool_optimum(&models, &cfg, &src).unwrap();
        let sh = run_sh(&models, &cfg, &src).unwrap();
        assert!(opt.best_loss <= sh.best_loss().unwrap() + 1e-12);
        // Pinning the model SH ends with reproduces SH.
        let pinned = halving(&models, &cfg, &src, Some(&sh.survivors[0])).unwrap();
        assert_eq!(pinned.best_loss().unwrap(), sh.best_loss().unwrap());
    }

    #[test]
    fn lmc_surrogate_run_is_budget_safe() {
        let models = pool(&[1 << 16, 1 << 20, 1 << 24, 1 << 28]);
        let budget = 10u128.pow(18);
        let mut cfg = AllocConfig::new(budget, 2).with_surrogate(SurrogateKind::Lmc);
        cfg.surrogate_options.gp.restarts = 2;
        cfg.surrogate_options.gp.minimize.max_iter = 50;
        let t = run_sh(&models, &cfg, &hoffmann_source(budget as f64)).unwrap();
        assert!(t.spent <= budget);
        assert!(!t.final_curves.has_predicted());
        assert!(
            t.rounds[0].notes.iter().all(|n| !n.contains("surrogate failed")),
            "{:?}",
            t.rounds[0].notes
        );
    }

    #[test]
    fn de_surrogate_run_is_budget_safe() {
        let models = pool(&[1 << 16, 1 << 20, 1 << 24, 1 << 28]);
        let budget = 10u128.pow(18);
        let mut cfg = AllocConfig::new(budget, 2).with_surrogate(SurrogateKind::DeExp);
        cfg.surrogate_options.de.iterations = 100;
        cfg.surrogate_options.de.hidden = 16;
        let t = run_sh(&models, &cfg, &hoffmann_source(budget as f64)).unwrap();
        assert!(t.spent <= budget);
        assert!(
            t.rounds[0].notes.iter().all(|n| !n.contains("surrogate failed")),
            "{:?}",
            t.rounds[0].notes
        );
    }

    #[test]
    fn surrogate_names_round_trip() {
        for k in [
            SurrogateKind::None,
            SurrogateKind::Lmc,
            SurrogateKind::DePl,
            SurrogateKind::DeExp,
            SurrogateKind::DeMmf,
        ] {
            assert_eq!(k.to_string().parse::<SurrogateKind>().unwrap(), k);
        }
        assert!("gp".parse::<SurrogateKind>().is_err());
    }

    proptest! {
        #[test]
        fn quantize_matches_decimal_long_division(alloc in any::<u64>(), hi in 0u64..1000, n in 1u64..(1 << 42), x in 1u64..(1 << 20)) {
            let allocated = ((hi as u128) << 64) | alloc as u128;
            let m = ModelSpec::new("m", n, x).unwrap();
            let (steps, consumed) = quantize_steps(allocated, &m);
            let (q, r) = long_division(&allocated.to_string(), 6 * n as u128 * x as u128);
            prop_assert_eq!(steps.to_string(), q);
            prop_assert_eq!(allocated - consumed, r);
        }

        #[test]
        fn budget_safety_and_schedule(
            exps in proptest::collection::btree_set(2u32..40, 1..12),
            budget_exp in 12u32..22,
            eta in 2u32..5,
            uniform in any::<bool>(),
        ) {
            let models = pool(&exps.iter().map(|e| 1u64 << e).collect::<Vec<_>>());
            let budget = 10u128.pow(budget_exp) + 7;
            let cfg = AllocConfig::new(budget, eta);
            let src = hoffmann_source(budget as f64);
            let t = if uniform { run_uniform(&models, &cfg, &src) } else { run_sh(&models, &cfg, &src) }.unwrap();
            prop_assert!(t.spent <= budget);
            let spent: u128 = t.rounds.iter().flat_map(|r| r.consumed.iter()).sum();
            prop_assert_eq!(spent, t.spent);
            for w in t.rounds.windows(2) {
                prop_assert_eq!(w[1].pool.len(), survivors_count(w[0].pool.len(), eta));
            }
            prop_assert!(!t.survivors.is_empty());
        }
    }
}
