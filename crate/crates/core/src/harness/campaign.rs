use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Dataset, ExperimentConfig, Strategy};
use super::metrics::{self, Pair, RelativeStats, EQUAL_TOL};
use crate::allocator::{
    self, AllocConfig, AllocationTrace, CurveSource, RecordedSource, SurrogateKind, SyntheticSource,
};
use crate::curves::{CurveSet, LearningCurve, ModelSpec};
use crate::error::{Error, Result};
use crate::gp::{GpFitOptions, LmcSurrogate, TaskData};
use crate::preprocess::{self, NormalizationSpec};
use crate::scaling_law::{self, ExtrapolatedLaws, GpExtrapolator, PowerScalingLaw};
use crate::seeding::{derive_seed, hash_str};
use crate::synthgen::{self, ChinchillaParams};

/// One strategy's result on one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub strategy: Strategy,
    /// Hash of the pool this strategy was given.
    pub pool_hash: String,
    pub best_loss: Option<f64>,
    pub best_model: Option<String>,
    pub spent: u128,
    pub regret: Option<f64>,
    /// L(C) fitted to the strategy's trained curves.
    pub law: Option<PowerScalingLaw>,
    /// AbC of `law` against the full-data and entire-pool-curve laws.
    pub abc_full: Option<f64>,
    pub abc_entire: Option<f64>,
    /// GP-extrapolated laws and their AbC (mean, ucb, lcb) against the
    /// full-data law. SH_LMC only, when enabled.
    pub gp_laws: Option<ExtrapolatedLaws>,
    pub abc_gp: Option<[f64; 3]>,
    pub notes: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub pool: Vec<String>,
    pub pool_hash: String,
    /// Best loss of any pool member kept through every halving round.
    pub pool_optimum: Option<f64>,
    /// Regret reference: best loss of any pool member fully trained.
    pub oracle: Option<f64>,
    /// Compute needed to train every pool member to the end of its curve.
    pub full_cost: Option<f64>,
    pub truth_full: Option<PowerScalingLaw>,
    pub truth_entire: Option<PowerScalingLaw>,
    pub outcomes: Vec<Outcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub runs_ok: usize,
    pub failures: usize,
    pub mean_loss: Option<f64>,
    pub loss_std: Option<f64>,
    /// Paired comparison against SH; absent when SH is not run.
    pub vs_sh: Option<RelativeStats>,
    pub mean_regret: Option<f64>,
    pub regret_failures: usize,
    pub abc_full: Option<f64>,
    pub abc_entire: Option<f64>,
    pub abc_gp_mean: Option<f64>,
    pub abc_gp_ucb: Option<f64>,
    pub abc_gp_lcb: Option<f64>,
    /// FLOPs.
    pub mean_spent: Option<f64>,
    /// Budget versus training every pool member's entire curve.
    pub cost_saving: Option<f64>,
    pub over_budget_runs: usize,
}

/// All runs for one (M_0, B) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub pool_size: usize,
    pub budget_pf: f64,
    pub budget_flops: u128,
    pub summaries: Vec<StrategySummary>,
    pub runs: Vec<RunRecord>,
}

impl Cell {
    pub fn summary(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.strategy == strategy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<Cell>,
    pub failures: usize,
}

impl ExperimentReport {
    pub fn cell(&self, pool_size: usize, budget_pf: f64) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.pool_size == pool_size && c.budget_pf == budget_pf)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

enum Data {
    Synthetic {
        params: ChinchillaParams,
        universe: Vec<u64>,
    },
    Recorded {
        source: RecordedSource,
        models: Vec<ModelSpec>,
    },
}

fn default_universe() -> Vec<u64> {
    (synthgen::MIN_SIZE_EXPONENT..=synthgen::MAX_SIZE_EXPONENT)
        .map(|e| 1u64 << e)
        .collect()
}

impl Data {
    fn load(cfg: &ExperimentConfig) -> Result<Self> {
        match &cfg.dataset {
            Dataset::RecordedFile(path) => {
                let set = preprocess::ingest(path, cfg.smooth)?;
                let source = RecordedSource::new(set);
                let models = source.models();
                let largest = cfg.pool_sizes.iter().max().copied().unwrap_or(0);
                if largest > models.len() {
                    return Err(Error::invalid(
                        "pool_sizes",
                        format!("pool size {largest} exceeds the {} recorded curves", models.len()),
                    ));
                }
                Ok(Data::Recorded { source, models })
            }
            d => Ok(Data::Synthetic {
                params: d.params().expect("synthetic datasets carry a surface"),
                universe: cfg.model_sizes.clone().unwrap_or_else(default_universe),
            }),
        }
    }
}

/// Order-independent hash of a pool's model ids.
pub fn pool_hash(models: &[ModelSpec]) -> String {
    let mut ids: Vec<&str> = models.iter().map(|m| m.id.as_str()).collect();
    ids.sort_unstable();
    format!("{:016x}", hash_str(&ids.join(",")))
}

/// Seed of run `run` in the (M_0, B) cell.
pub fn run_seed(base_seed: u64, pool_size: usize, budget_pf: f64, run: usize) -> u64 {
    derive_seed(&[base_seed, pool_size as u64, budget_pf.to_bits(), run as u64])
}

fn sample_pool(data: &Data, m0: usize, seed: u64) -> Result<Vec<ModelSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<ModelSpec> = match data {
        Data::Synthetic { universe, .. } => {
            if m0 > universe.len() {
                return Err(Error::invalid("pool_sizes", "pool larger than the candidate sizes"));
            }
            rand::seq::index::sample(&mut rng, universe.len(), m0)
                .into_iter()
                .map(|i| ModelSpec::synthetic(universe[i]))
                .collect()
        }
        Data::Recorded { models, .. } => rand::seq::index::sample(&mut rng, models.len(), m0)
            .into_iter()
            .map(|i| models[i].clone())
            .collect(),
    };
    pool.sort_by(|a, b| (a.n_params, &a.id).cmp(&(b.n_params, &b.id)));
    Ok(pool)
}

/// Every stored or generated point of each model, up to the source's end.
fn full_curves(source: &dyn CurveSource, models: &[ModelSpec], end: impl Fn(&ModelSpec) -> f64) -> CurveSet {
    let mut set = CurveSet::new();
    for m in models {
        let pts = source.extend(m, 0.0, end(m));
        if let Ok(c) = pts.and_then(|p| LearningCurve::new(m.clone(), p)) {
            set.upsert(c);
        }
    }
    set
}

/// Fits a multitask GP to the trained curves in `curves` and extends each
/// one to the top of the region with the posterior mean and mean +/- z sd.
pub fn gp_extrapolated_laws(
    curves: &CurveSet,
    region: (f64, f64),
    points_per_curve: usize,
    gp: &GpFitOptions,
    z: f64,
) -> Result<ExtrapolatedLaws> {
    let trained = curves.trained_only();
    let fit: Vec<LearningCurve> = trained
        .iter()
        .filter(|c| c.len() >= 2)
        .map(|c| preprocess::subsample(c, points_per_curve))
        .collect::<Result<_>>()?;
    if fit.is_empty() {
        return Err(Error::invalid("curves", "no curve has two trained points"));
    }
    let first = fit.iter().map(|c| c.points()[0].compute).fold(f64::INFINITY, f64::min);
    let last = fit.iter().map(LearningCurve::trained_compute).fold(0.0, f64::max);
    let (lo, hi) = fit
        .iter()
        .flat_map(|c| c.points().iter().map(|p| p.loss))
        .fold((f64::INFINITY, 0.0f64), |(a, b), l| (a.min(l), b.max(l)));
    let hi = if hi > lo { hi } else { lo * (1.0 + 1e-6) };
    let spec = NormalizationSpec::new(first, region.1.max(last), lo, hi)?;
    let tasks: Vec<TaskData> = fit
        .iter()
        .map(|c| preprocess::normalize(c, &spec).map(|n| TaskData { x: n.x, y: n.y }))
        .collect::<Result<_>>()?;
    let surrogate = LmcSurrogate::fit(&tasks, gp)?;
    let ex = GpExtrapolator {
        surrogate: &surrogate,
        norm: &spec,
        task_ids: fit.iter().map(|c| c.id().to_string()).collect(),
    };
    scaling_law::extrapolated_laws(&ex, &trained, region.0, region.1, z)
}

struct RunContext<'a> {
    cfg: &'a ExperimentConfig,
    budget: u128,
    seed: u64,
    source: &'a dyn CurveSource,
    pool: Vec<ModelSpec>,
    hash: String,
    truth_full: Option<PowerScalingLaw>,
    truth_entire: Option<PowerScalingLaw>,
    oracle: Option<f64>,
}

impl RunContext<'_> {
    fn alloc_config(&self, surrogate: SurrogateKind) -> AllocConfig {
        AllocConfig {
            total_budget: self.budget,
            eta: self.cfg.eta,
            surrogate,
            points_per_curve: self.cfg.points_per_curve,
            seed: self.seed,
            surrogate_options: self.cfg.surrogate.clone(),
        }
    }

    fn outcome(&self, strategy: Strategy) -> Outcome {
        let mut out = Outcome {
            strategy,
            pool_hash: self.hash.clone(),
            best_loss: None,
            best_model: None,
            spent: 0,
            regret: None,
            law: None,
            abc_full: None,
            abc_entire: None,
            gp_laws: None,
            abc_gp: None,
            notes: Vec::new(),
            error: None,
        };
        let trace = match strategy.surrogate() {
            None => allocator::run_uniform(&self.pool, &self.alloc_config(SurrogateKind::None), self.source),
            Some(kind) => allocator::run_sh(&self.pool, &self.alloc_config(kind), self.source),
        };
        let trace: AllocationTrace = match trace.and_then(|t| t.best().map(|b| (t, b))) {
            Ok((t, (model, loss))) => {
                out.best_model = Some(model);
                out.best_loss = Some(loss);
                t
            }
            Err(e) => {
                out.error = Some(e.to_string());
                return out;
            }
        };
        out.spent = trace.spent;
        out.notes = trace.rounds.iter().flat_map(|r| r.notes.iter().cloned()).collect();
        let loss = out.best_loss.expect("set above");
        match self.oracle.map(|o| metrics::regret(loss, o)) {
            Some(Ok(r)) => out.regret = Some(r),
            Some(Err(e)) => out.notes.push(format!("regret: {e}")),
            None => {}
        }
        let (lo, hi) = self.cfg.region;
        out.law = scaling_law::fit_set_law(&trace.final_curves, lo, hi, false).ok();
        let abc = |truth: &Option<PowerScalingLaw>, law: &PowerScalingLaw| {
            truth.as_ref().and_then(|t| scaling_law::abc(law, t, lo, hi).ok())
        };
        if let Some(law) = &out.law {
            out.abc_full = abc(&self.truth_full, law);
            out.abc_entire = abc(&self.truth_entire, law);
        }
        if self.cfg.extrapolate && strategy == Strategy::ShLmc {
            let gp = GpFitOptions {
                seed: derive_seed(&[self.seed, u64::MAX]),
                ..self
                    .cfg
                    .extrapolation_gp
                    .clone()
                    .unwrap_or_else(|| self.cfg.surrogate.gp.clone())
            };
            match gp_extrapolated_laws(
                &trace.final_curves,
                self.cfg.region,
                self.cfg.points_per_curve,
                &gp,
                self.cfg.z,
            ) {
                Ok(laws) => {
                    let v = [laws.mean, laws.ucb, laws.lcb].map(|l| abc(&self.truth_full, &l));
                    if let [Some(m), Some(u), Some(l)] = v {
                        out.abc_gp = Some([m, u, l]);
                    }
                    out.gp_laws = Some(laws);
                }
                Err(e) => out.notes.push(format!("extrapolation failed: {e}")),
            }
        }
        out
    }
}

fn run_one(cfg: &ExperimentConfig, data: &Data, m0: usize, budget_pf: f64, run: usize) -> RunRecord {
    let seed = run_seed(cfg.base_seed, m0, budget_pf, run);
    let budget = ExperimentConfig::budget_flops(budget_pf);
    let mut rec = RunRecord {
        run,
        seed,
        pool: Vec::new(),
        pool_hash: String::new(),
        pool_optimum: None,
        oracle: None,
        full_cost: None,
        truth_full: None,
        truth_entire: None,
        outcomes: Vec::new(),
        error: None,
    };
    let pool = match sample_pool(data, m0, seed) {
        Ok(p) => p,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    rec.pool = pool.iter().map(|m| m.id.clone()).collect();
    rec.pool_hash = pool_hash(&pool);

    let (lo, hi) = cfg.region;
    let synthetic;
    let (source, universe_full, pool_full): (&dyn CurveSource, CurveSet, CurveSet) = match data {
        Data::Synthetic { params, universe } => {
            let c_max = hi.max(budget as f64);
            synthetic = match SyntheticSource::new(*params, cfg.noise, seed, c_max) {
                Ok(s) => s,
                Err(e) => {
                    rec.error = Some(e.to_string());
                    return rec;
                }
            };
            let all: Vec<ModelSpec> = universe.iter().map(|&n| ModelSpec::synthetic(n)).collect();
            let full = full_curves(&synthetic, &all, |_| c_max);
            let pool_full = full_curves(&synthetic, &pool, |_| c_max);
            (&synthetic, full, pool_full)
        }
        Data::Recorded { source, .. } => {
            let end = |m: &ModelSpec| source.curves.get(&m.id).map_or(0.0, LearningCurve::trained_compute);
            (source, source.curves.clone(), full_curves(source, &pool, end))
        }
    };
    rec.full_cost = (pool_full.len() == pool.len()).then(|| crate::curves::total_compute(&pool_full));
    rec.truth_full = scaling_law::fit_set_law(&universe_full, lo, hi, false).ok();
    rec.truth_entire = scaling_law::fit_set_law(&pool_full, lo, hi, false).ok();

    // Each member kept through every round: the best SH could have done,
    // and the horizon each member could have reached.
    let plain = AllocConfig {
        total_budget: budget,
        eta: cfg.eta,
        surrogate: SurrogateKind::None,
        points_per_curve: cfg.points_per_curve,
        seed,
        surrogate_options: cfg.surrogate.clone(),
    };
    let mut optimum = f64::INFINITY;
    let mut oracle = f64::INFINITY;
    for m in &pool {
        let trace = match allocator::run_sh_keeping(&pool, &plain, source, &m.id) {
            Ok(t) => t,
            Err(e) => {
                rec.error = Some(e.to_string());
                return rec;
            }
        };
        if let Some(l) = trace.final_curves.get(&m.id).and_then(LearningCurve::min_trained_loss) {
            optimum = optimum.min(l);
        }
        let horizon = match data {
            Data::Synthetic { .. } => trace
                .final_curves
                .get(&m.id)
                .map_or(0.0, LearningCurve::trained_compute),
            Data::Recorded { .. } => f64::INFINITY,
        };
        if let Some(l) = source.reference_loss(m, horizon) {
            oracle = oracle.min(l);
        }
    }
    rec.pool_optimum = optimum.is_finite().then_some(optimum);
    rec.oracle = oracle.is_finite().then_some(oracle);

    let ctx = RunContext {
        cfg,
        budget,
        seed,
        source,
        pool,
        hash: rec.pool_hash.clone(),
        truth_full: rec.truth_full,
        truth_entire: rec.truth_entire,
        oracle: rec.oracle,
    };
    rec.outcomes = cfg.strategies.iter().map(|&s| ctx.outcome(s)).collect();
    rec
}

fn mean_of(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    metrics::mean_std(&v).map(|(m, _)| m)
}

fn summarize(cfg: &ExperimentConfig, budget: u128, runs: &[RunRecord]) -> Vec<StrategySummary> {
    let sh_index = cfg.strategies.iter().position(|&s| s == Strategy::Sh);
    cfg.strategies
        .iter()
        .enumerate()
        .map(|(k, &strategy)| {
            let ok: Vec<(&RunRecord, &Outcome)> = runs
                .iter()
                .filter_map(|r| r.outcomes.get(k).map(|o| (r, o)))
                .filter(|(_, o)| o.best_loss.is_some())
                .collect();
            let losses: Vec<f64> = ok.iter().filter_map(|(_, o)| o.best_loss).collect();
            let stats = metrics::mean_std(&losses);
            let vs_sh = sh_index.map(|si| {
                let pairs: Vec<Pair> = ok
                    .iter()
                    .filter_map(|(r, o)| {
                        let sh = r.outcomes.get(si)?.best_loss?;
                        let opt = r.pool_optimum?;
                        Some(Pair {
                            sh,
                            other: o.best_loss?,
                            sh_optimal: sh <= opt * (1.0 + EQUAL_TOL),
                        })
                    })
                    .collect();
                metrics::relative_stats(&pairs)
            });
            let savings: Vec<metrics::CostSaving> = ok
                .iter()
                .filter_map(|(r, _)| r.full_cost.map(|f| metrics::cost_saving(budget as f64, f)))
                .collect();
            let gp = |i: usize| mean_of(ok.iter().filter_map(|(_, o)| o.abc_gp.map(|a| a[i])));
            StrategySummary {
                strategy,
                runs_ok: ok.len(),
                failures: runs.len() - ok.len(),
                mean_loss: stats.map(|s| s.0),
                loss_std: stats.map(|s| s.1),
                vs_sh,
                mean_regret: mean_of(ok.iter().filter_map(|(_, o)| o.regret)),
                regret_failures: ok
                    .iter()
                    .filter(|(r, o)| r.oracle.is_some() && o.regret.is_none())
                    .count(),
                abc_full: mean_of(ok.iter().filter_map(|(_, o)| o.abc_full)),
                abc_entire: mean_of(ok.iter().filter_map(|(_, o)| o.abc_entire)),
                abc_gp_mean: gp(0),
                abc_gp_ucb: gp(1),
                abc_gp_lcb: gp(2),
                mean_spent: mean_of(ok.iter().map(|(_, o)| o.spent as f64)),
                cost_saving: mean_of(savings.iter().map(|s| s.ratio)),
                over_budget_runs: savings.iter().filter(|s| s.over_budget).count(),
            }
        })
        .collect()
}

/// Runs every (M_0, B, run) combination and aggregates per cell. Runs are
/// independent and execute in parallel; results are reduced in run order,
/// so the report depends only on the config.
pub fn run_campaign(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let data = Data::load(cfg)?;
    let cells: Vec<(usize, f64)> = cfg
        .pool_sizes
        .iter()
        .flat_map(|&m| cfg.budgets.iter().map(move |&b| (m, b)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.runs).map(move |r| (c, r)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(c, r)| run_one(cfg, &data, cells[c].0, cells[c].1, r))
        .collect();
    let mut records = records.into_iter();
    let mut out = Vec::with_capacity(cells.len());
    let mut failures = 0;
    for &(pool_size, budget_pf) in &cells {
        let runs: Vec<RunRecord> = records.by_ref().take(cfg.runs).collect();
        let budget_flops = ExperimentConfig::budget_flops(budget_pf);
        let summaries = summarize(cfg, budget_flops, &runs);
        failures += summaries.iter().map(|s| s.failures).sum::<usize>();
        out.push(Cell {
            pool_size,
            budget_pf,
            budget_flops,
            summaries,
            runs,
        });
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        cells: out,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(strategies: Vec<Strategy>) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(Dataset::SyntheticHoffmann, vec![4], vec![1e2], strategies);
        cfg.runs = 6;
        cfg.base_seed = 11;
        cfg
    }

    #[test]
    fn single_model_matches_quantized_curve() {
        let mut cfg = small(vec![Strategy::Sh]);
        cfg.pool_sizes = vec![1];
        cfg.runs = 1;
        let report = run_campaign(&cfg).unwrap();
        let cell = &report.cells[0];
        let run = &cell.runs[0];
        let model = ModelSpec::synthetic(run.pool[0][1..].parse().unwrap());
        let (_, consumed) = allocator::quantize_steps(cell.budget_flops, &model);
        let n = model.n_params as f64;
        let expected = synthgen::loss_surface(&ChinchillaParams::HOFFMANN, n, consumed as f64 / (6.0 * n)).unwrap();
        let got = cell.summary(Strategy::Sh).unwrap().mean_loss.unwrap();
        assert!((got - expected).abs() < 1e-12 * expected, "{got} vs {expected}");
    }

    #[test]
    fn strategies_share_pools() {
        let report = run_campaign(&small(vec![Strategy::Sh, Strategy::Ua, Strategy::ShDePl])).unwrap();
        for run in &report.cells[0].runs {
            assert!(run.outcomes.iter().all(|o| o.pool_hash == run.pool_hash));
        }
        let hashes: std::collections::BTreeSet<_> = report.cells[0].runs.iter().map(|r| &r.pool_hash).collect();
        assert!(hashes.len() > 1, "runs should draw different pools");
    }

    #[test]
    fn counts_partition_runs_and_sh_is_neutral() {
        let report = run_campaign(&small(vec![Strategy::Sh, Strategy::Ua])).unwrap();
        let cell = &report.cells[0];
        for s in &cell.summaries {
            let v = s.vs_sh.unwrap();
            assert_eq!(v.wins + v.equals + v.losses, s.runs_ok);
        }
        let sh = cell.summary(Strategy::Sh).unwrap().vs_sh.unwrap();
        assert_eq!(sh.equals, cell.runs.len());
        for run in &cell.runs {
            let sh_loss = run.outcomes[0].best_loss.unwrap();
            assert!(run.pool_optimum.unwrap() <= sh_loss);
            assert!(run.outcomes.iter().all(|o| o.spent <= cell.budget_flops));
            assert!(run.outcomes.iter().all(|o| o.regret.unwrap() >= 0.0));
        }
    }

    #[test]
    fn report_is_deterministic() {
        let cfg = small(vec![Strategy::Sh, Strategy::ShDeExp, Strategy::Ua]);
        let a = run_campaign(&cfg).unwrap().to_json().unwrap();
        let b = run_campaign(&cfg).unwrap().to_json().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip() {
        let report = run_campaign(&small(vec![Strategy::Sh])).unwrap();
        let back: ExperimentReport = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn laws_and_costs_when_budget_reaches_region() {
        let mut cfg = small(vec![Strategy::Sh]);
        cfg.budgets = vec![1e5];
        cfg.runs = 2;
        let report = run_campaign(&cfg).unwrap();
        let s = report.cells[0].summary(Strategy::Sh).unwrap();
        assert!(s.abc_full.is_some() && s.abc_entire.is_some());
        // Four pool members trained to 1e20 each.
        assert!((s.cost_saving.unwrap() - (1.0 - 1e20 / 4e20)).abs() < 1e-12);
        assert_eq!(s.over_budget_runs, 0);
    }

    #[test]
    fn recorded_pools_are_drawn_from_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let src = SyntheticSource::noiseless(ChinchillaParams::HOFFMANN, 1e20).unwrap();
        let mut set = CurveSet::new();
        for e in [20u32, 22, 24, 26, 28] {
            let m = ModelSpec::synthetic(1 << e);
            set.insert(LearningCurve::new(m.clone(), src.extend(&m, 0.0, 1e20).unwrap()).unwrap())
                .unwrap();
        }
        crate::curves::save_curves(&set, &path).unwrap();
        let mut cfg = small(vec![Strategy::Sh, Strategy::Ua]);
        cfg.dataset = Dataset::RecordedFile(path);
        cfg.pool_sizes = vec![3];
        cfg.budgets = vec![1e4];
        let report = run_campaign(&cfg).unwrap();
        assert_eq!(report.failures, 0);
        for run in &report.cells[0].runs {
            assert_eq!(run.pool.len(), 3);
            assert!(run.pool.iter().all(|id| set.get(id).is_some()));
            let best_full = run
                .pool
                .iter()
                .map(|id| set.get(id).unwrap().min_loss().unwrap())
                .fold(f64::INFINITY, f64::min);
            assert_eq!(run.oracle, Some(best_full));
        }
        cfg.pool_sizes = vec![6];
        assert!(run_campaign(&cfg).is_err());
    }
}
