use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::allocator::{SurrogateKind, SurrogateOptions, DEFAULT_POINTS_PER_CURVE};
use crate::error::{Error, Result};
use crate::gp::GpFitOptions;
use crate::scaling_law::DEFAULT_REGION;
use crate::synthgen::{ChinchillaParams, NoiseConfig};

/// FLOPs per petaFLOP.
pub const PETA: f64 = 1e15;

pub const DEFAULT_RUNS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataset {
    SyntheticHoffmann,
    SyntheticBesiroglu,
    RecordedFile(PathBuf),
}

impl Dataset {
    /// Generating surface, for synthetic datasets.
    pub fn params(&self) -> Option<ChinchillaParams> {
        match self {
            Dataset::SyntheticHoffmann => Some(ChinchillaParams::HOFFMANN),
            Dataset::SyntheticBesiroglu => Some(ChinchillaParams::BESIROGLU),
            Dataset::RecordedFile(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "UA")]
    Ua,
    #[serde(rename = "SH")]
    Sh,
    #[serde(rename = "SH_LMC")]
    ShLmc,
    #[serde(rename = "SH_DE_PL")]
    ShDePl,
    #[serde(rename = "SH_DE_EXP")]
    ShDeExp,
    #[serde(rename = "SH_DE_MMF")]
    ShDeMmf,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Ua,
        Strategy::Sh,
        Strategy::ShLmc,
        Strategy::ShDePl,
        Strategy::ShDeExp,
        Strategy::ShDeMmf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ua => "UA",
            Strategy::Sh => "SH",
            Strategy::ShLmc => "SH_LMC",
            Strategy::ShDePl => "SH_DE_PL",
            Strategy::ShDeExp => "SH_DE_EXP",
            Strategy::ShDeMmf => "SH_DE_MMF",
        }
    }

    /// Selection rule for halving strategies; `None` for the uniform baseline.
    pub fn surrogate(self) -> Option<SurrogateKind> {
        match self {
            Strategy::Ua => None,
            Strategy::Sh => Some(SurrogateKind::None),
            Strategy::ShLmc => Some(SurrogateKind::Lmc),
            Strategy::ShDePl => Some(SurrogateKind::DePl),
            Strategy::ShDeExp => Some(SurrogateKind::DeExp),
            Strategy::ShDeMmf => Some(SurrogateKind::DeMmf),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Strategy::ALL.into_iter().find(|st| st.name() == norm).ok_or_else(|| {
            Error::invalid(
                "strategy",
                format!("unknown strategy `{s}`; expected one of UA, SH, SH_LMC, SH_DE_PL, SH_DE_EXP, SH_DE_MMF"),
            )
        })
    }
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}

fn default_region() -> (f64, f64) {
    DEFAULT_REGION
}

fn default_eta() -> u32 {
    2
}

fn default_points() -> usize {
    DEFAULT_POINTS_PER_CURVE
}

fn default_z() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Dataset,
    /// M_0 values.
    pub pool_sizes: Vec<usize>,
    /// Total budgets in petaFLOPs.
    pub budgets: Vec<f64>,
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Compute region for scaling-law fits, FLOPs.
    #[serde(default = "default_region")]
    pub region: (f64, f64),
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_eta")]
    pub eta: u32,
    #[serde(default = "default_points")]
    pub points_per_curve: usize,
    /// Candidate sizes for synthetic pools. Defaults to 2^2 .. 2^42.
    #[serde(default)]
    pub model_sizes: Option<Vec<u64>>,
    /// Savitzky-Golay (window, order) applied to recorded curves on load.
    #[serde(default)]
    pub smooth: Option<(usize, usize)>,
    #[serde(default)]
    pub surrogate: SurrogateOptions,
    /// Fit GP-extrapolated laws on SH_LMC's final curves.
    #[serde(default)]
    pub extrapolate: bool,
    /// GP settings for that one-off fit. `surrogate.gp` when unset.
    #[serde(default)]
    pub extrapolation_gp: Option<GpFitOptions>,
    /// Width of the extrapolated confidence bounds, in posterior sd.
    #[serde(default = "default_z")]
    pub z: f64,
}

impl ExperimentConfig {
    pub fn new(dataset: Dataset, pool_sizes: Vec<usize>, budgets: Vec<f64>, strategies: Vec<Strategy>) -> Self {
        ExperimentConfig {
            dataset,
            pool_sizes,
            budgets,
            strategies,
            runs: DEFAULT_RUNS,
            noise: NoiseConfig::none(),
            region: DEFAULT_REGION,
            base_seed: 0,
            eta: 2,
            points_per_curve: DEFAULT_POINTS_PER_CURVE,
            model_sizes: None,
            smooth: None,
            surrogate: SurrogateOptions::default(),
            extrapolate: false,
            extrapolation_gp: None,
            z: 1.0,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::invalid("runs", "must be at least 1"));
        }
        if self.pool_sizes.is_empty() || self.pool_sizes.contains(&0) {
            return Err(Error::invalid("pool_sizes", "need at least one size, each >= 1"));
        }
        if self.budgets.is_empty() || self.budgets.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::invalid("budgets", "need at least one positive finite budget"));
        }
        if self.budgets.iter().any(|b| b * PETA < 1.0) {
            return Err(Error::invalid("budgets", "every budget must be at least one FLOP"));
        }
        let (lo, hi) = self.region;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::invalid("region", format!("need 0 < lo < hi, got ({lo}, {hi})")));
        }
        if self.eta < 2 {
            return Err(Error::invalid("eta", "must be >= 2"));
        }
        if self.points_per_curve < 2 {
            return Err(Error::invalid("points_per_curve", "must be >= 2"));
        }
        if !(self.z >= 0.0 && self.z.is_finite()) {
            return Err(Error::invalid("z", "must be finite and >= 0"));
        }
        self.noise.validate()?;
        if let Some(sizes) = &self.model_sizes {
            let mut s = sizes.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != sizes.len() || s.first() == Some(&0) {
                return Err(Error::invalid("model_sizes", "sizes must be distinct and >= 1"));
            }
            let largest = self.pool_sizes.iter().max().copied().unwrap_or(0);
            if largest > sizes.len() {
                return Err(Error::invalid(
                    "model_sizes",
                    format!("pool size {largest} exceeds the {} candidate sizes", sizes.len()),
                ));
            }
        }
        Ok(())
    }

    /// FLOPs for a budget given in petaFLOPs.
    pub fn budget_flops(pf: f64) -> u128 {
        (pf * PETA).round() as u128
    }
}
