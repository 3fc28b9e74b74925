use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scalebudget::allocator::{self, AllocConfig, AllocationTrace, RecordedSource, SyntheticSource};
use scalebudget::curves::{self, CurveSet, ModelSpec};
use scalebudget::harness::{self, EmitFormat, ExperimentConfig, PlotData, Strategy};
use scalebudget::scaling_law::{self, LndFitOptions, LndObservation, PowerScalingLaw, ABC_GRID, DEFAULT_REGION};
use scalebudget::seeding::{derive_seed, hash_str};
use scalebudget::synthgen::{self, ChinchillaParams, NoiseConfig, NoiseKind};
use scalebudget::{preprocess, Error, Result};

#[derive(Parser)]
#[command(
    name = "scalebudget",
    version,
    about = "Budgeted successive halving and scaling-law fitting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic learning curves drawn from a loss surface.
    Gen(GenArgs),
    /// Run one allocation and print its trace.
    Alloc(AllocArgs),
    /// Fit L(C) to the frontier of a curve file, or L(N,D) to all its points.
    Fit(FitArgs),
    /// Area between two fitted laws.
    Abc(AbcArgs),
    /// Run a multi-run experiment campaign from a TOML config.
    Campaign(CampaignArgs),
}

#[derive(Args)]
struct NoiseArgs {
    /// none, awgn, brownian or ou.
    #[arg(long, default_value = "none")]
    noise: NoiseKind,
    #[arg(long, default_value_t = 0.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 1.0)]
    weight: f64,
}

impl NoiseArgs {
    fn config(&self) -> NoiseConfig {
        NoiseConfig::new(self.noise, self.sigma2, self.weight)
    }
}

#[derive(Args)]
struct GenArgs {
    /// hoffmann or besiroglu.
    #[arg(long, default_value = "hoffmann")]
    preset: ChinchillaParams,
    /// Parameter counts. Sampled from 2^2..2^42 when omitted.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<u64>,
    /// Number of sampled sizes when --sizes is omitted.
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Last compute value of every curve, FLOPs.
    #[arg(long, default_value_t = 1e20)]
    c_max: f64,
    /// Points per curve, log-spaced from one step to --c-max.
    #[arg(long, default_value_t = allocator::DEFAULT_SOURCE_GRID)]
    grid: usize,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AllocArgs {
    /// Recorded curve file. A synthetic pool is drawn when omitted.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long, default_value = "hoffmann")]
    preset: ChinchillaParams,
    /// Synthetic pool sizes; otherwise --pool sizes are sampled.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<u64>,
    /// Pool size M_0. Recorded files use every curve when omitted.
    #[arg(long)]
    pool: Option<usize>,
    /// Total budget, petaFLOPs.
    #[arg(long)]
    budget: f64,
    #[arg(long, default_value_t = 2)]
    eta: u32,
    #[arg(long, default_value = "SH")]
    strategy: Strategy,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Savitzky-Golay window,order for recorded curves.
    #[arg(long, value_parser = parse_usize_pair)]
    smooth: Option<(usize, usize)>,
    /// Points per curve fed to the surrogate.
    #[arg(long, default_value_t = allocator::DEFAULT_POINTS_PER_CURVE)]
    points: usize,
    /// GP restarts per fit.
    #[arg(long)]
    restarts: Option<usize>,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Trace output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the final curves as plot data.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    curves: PathBuf,
    /// Compute region lo,hi in FLOPs.
    #[arg(long, value_parser = parse_f64_pair)]
    region: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_usize_pair)]
    smooth: Option<(usize, usize)>,
    /// Subsample every curve to this many points before fitting.
    #[arg(long)]
    points: Option<usize>,
    /// Fit L(N,D) with a Huber loss instead of L(C).
    #[arg(long)]
    lnd: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the curves and the fitted law as plot data (L(C) only).
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct AbcArgs {
    /// Law files as written by `fit`.
    a: PathBuf,
    b: PathBuf,
    /// Defaults to the first law's region.
    #[arg(long, value_parser = parse_f64_pair)]
    region: Option<(f64, f64)>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Budgets in petaFLOPs, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    budget: Vec<f64>,
    #[arg(long)]
    eta: Option<u32>,
    /// Strategies, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<Strategy>,
    #[arg(long, value_parser = parse_f64_pair)]
    region: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_usize_pair)]
    smooth: Option<(usize, usize)>,
    #[arg(long)]
    points: Option<usize>,
    /// Output directory for report.json, table.csv and plotdata.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> std::result::Result<(T, T), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("cannot parse `{v}`"));
    Ok((p(a)?, p(b)?))
}

fn parse_f64_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    parse_pair(s)
}

fn parse_usize_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_pair(s)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            match stdout.write_all(text.as_bytes()) {
                // A closed pipe (e.g. `| head`) is not a failure.
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
                    path: "<stdout>".into(),
                    source: e,
                }),
                _ => Ok(()),
            }
        }
    }
}

fn write_plot(path: &Path, plot: &PlotData) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    plot.write(std::io::BufWriter::new(f))
}

fn gen(args: GenArgs) -> Result<()> {
    let sizes = if args.sizes.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        synthgen::sample_model_sizes(&mut rng, args.count)?
    } else {
        args.sizes.clone()
    };
    let noise = args.noise.config();
    let mut set = CurveSet::new();
    for n in sizes {
        let model = ModelSpec::synthetic(n);
        let lo = model.step_flops() as f64;
        if args.c_max.is_nan() || args.c_max <= lo {
            return Err(Error::InvalidArgument {
                arg: "c_max",
                reason: format!("{} needs more than {lo:e} FLOPs for one step", model.id),
            });
        }
        let grid = synthgen::log_grid(lo, args.c_max, args.grid);
        let seed = derive_seed(&[args.seed, hash_str(&model.id)]);
        set.insert(synthgen::generate_curve(&args.preset, &model, &grid, &noise, seed)?)?;
    }
    let mut buf = Vec::new();
    curves::write_curves(&set, &mut buf)?;
    write_output(args.out.as_deref(), &String::from_utf8_lossy(&buf))
}

#[derive(Serialize)]
struct AllocOutput<'a> {
    strategy: Strategy,
    best_model: String,
    best_loss: f64,
    trace: &'a AllocationTrace,
}

fn alloc(args: AllocArgs) -> Result<()> {
    let budget = ExperimentConfig::budget_flops(args.budget);
    let mut config = AllocConfig::new(budget, args.eta);
    config.seed = args.seed;
    config.points_per_curve = args.points;
    if let Some(r) = args.restarts {
        config.surrogate_options.gp.restarts = r;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let run = |models: &[ModelSpec], source: &dyn allocator::CurveSource| -> Result<AllocationTrace> {
        match args.strategy.surrogate() {
            None => allocator::run_uniform(models, &config, source),
            Some(kind) => allocator::run_sh(models, &config.clone().with_surrogate(kind), source),
        }
    };
    let trace = match &args.curves {
        Some(path) => {
            let source = RecordedSource::new(preprocess::ingest(path, args.smooth)?);
            let mut models = source.models();
            if let Some(m) = args.pool {
                if m > models.len() {
                    return Err(Error::InvalidArgument {
                        arg: "pool",
                        reason: format!("the file holds {} curves", models.len()),
                    });
                }
                let picked = rand::seq::index::sample(&mut rng, models.len(), m).into_vec();
                models = picked.into_iter().map(|i| models[i].clone()).collect();
            }
            run(&models, &source)?
        }
        None => {
            let sizes = if args.sizes.is_empty() {
                synthgen::sample_model_sizes(&mut rng, args.pool.unwrap_or(5))?
            } else {
                args.sizes.clone()
            };
            let models: Vec<ModelSpec> = sizes.into_iter().map(ModelSpec::synthetic).collect();
            let source = SyntheticSource::new(args.preset, args.noise.config(), args.seed, budget as f64)?;
            run(&models, &source)?
        }
    };
    let (best_model, best_loss) = trace.best()?;
    if let Some(p) = &args.plot {
        write_plot(p, &PlotData::from_curves(&trace.final_curves, &[]))?;
    }
    let out = AllocOutput {
        strategy: args.strategy,
        best_model,
        best_loss,
        trace: &trace,
    };
    write_output(args.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))
}

#[derive(Serialize)]
#[serde(untagged)]
enum FitOutput {
    Lc(PowerScalingLaw),
    Lnd(scaling_law::LndFit),
}

fn fit(args: FitArgs) -> Result<()> {
    let mut set = preprocess::ingest(&args.curves, args.smooth)?.trained_only();
    if let Some(k) = args.points {
        let mut sub = CurveSet::new();
        for c in &set {
            sub.insert(preprocess::subsample(c, k)?)?;
        }
        set = sub;
    }
    let out = if args.lnd {
        let obs: Vec<LndObservation> = set
            .iter()
            .flat_map(|c| {
                let m = c.model();
                let n = m.n_params as f64;
                c.points().iter().map(move |p| LndObservation {
                    n,
                    d: p.compute / (6.0 * n),
                    loss: p.loss,
                })
            })
            .collect();
        let opts = LndFitOptions {
            seed: args.seed,
            ..LndFitOptions::default()
        };
        FitOutput::Lnd(scaling_law::fit_lnd_law(&obs, &opts)?)
    } else {
        let (lo, hi) = args.region.unwrap_or(DEFAULT_REGION);
        let law = scaling_law::fit_set_law(&set, lo, hi, false)?;
        if let Some(p) = &args.plot {
            write_plot(p, &PlotData::from_curves(&set, &[("frontier_law".into(), law)]))?;
        }
        FitOutput::Lc(law)
    };
    write_output(args.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))
}

#[derive(Serialize, Deserialize)]
struct AbcOutput {
    abc: f64,
    region_lo: f64,
    region_hi: f64,
    grid: usize,
}

fn read_law(path: &Path) -> Result<PowerScalingLaw> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn abc(args: AbcArgs) -> Result<()> {
    let a = read_law(&args.a)?;
    let b = read_law(&args.b)?;
    let (lo, hi) = args.region.unwrap_or((a.region_lo, a.region_hi));
    let out = AbcOutput {
        abc: scaling_law::abc(&a, &b, lo, hi)?,
        region_lo: lo,
        region_hi: hi,
        grid: ABC_GRID,
    };
    write_output(args.out.as_deref(), &(serde_json::to_string_pretty(&out)? + "\n"))
}

fn campaign(args: CampaignArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if !args.budget.is_empty() {
        cfg.budgets = args.budget;
    }
    if let Some(e) = args.eta {
        cfg.eta = e;
    }
    if !args.strategy.is_empty() {
        cfg.strategies = args.strategy;
    }
    if let Some(r) = args.region {
        cfg.region = r;
    }
    if args.smooth.is_some() {
        cfg.smooth = args.smooth;
    }
    if let Some(k) = args.points {
        cfg.points_per_curve = k;
    }
    let report = harness::run_campaign(&cfg)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    write_output(Some(&args.out.join("report.json")), &report.to_json()?)?;
    harness::emit(&report, EmitFormat::Table, args.out.join("table.csv"))?;
    harness::emit(&report, EmitFormat::Plotdata, args.out.join("plotdata.csv"))?;
    write_output(None, &harness::table_string(&report)?)
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
}

fn fail(kind: &str, message: String, code: u8) -> ExitCode {
    let rec = ErrorRecord { error: kind, message };
    eprintln!(
        "{}",
        serde_json::to_string(&rec).unwrap_or_else(|_| format!("{{\"error\":\"{kind}\"}}"))
    );
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string().trim().to_string(), 2),
    };
    let res = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Alloc(a) => alloc(a),
        Command::Fit(a) => fit(a),
        Command::Abc(a) => abc(a),
        Command::Campaign(a) => campaign(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e.to_string(), 1),
    }
}
