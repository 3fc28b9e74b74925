use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative gap under which two losses count as equal.
pub const EQUAL_TOL: f64 = 1e-9;

/// Slack allowed when an obtained loss dips below the regret oracle.
pub const REGRET_TOL: f64 = 1e-9;

/// (l_sh - l_other) / l_sh. Positive means the other strategy found a lower loss.
pub fn relative_improvement(l_sh: f64, l_other: f64) -> f64 {
    (l_sh - l_other) / l_sh
}

/// obtained - oracle. An obtained loss below the oracle by more than a
/// relative [`REGRET_TOL`] means the oracle is not a lower bound and is
/// reported as an error.
pub fn regret(obtained: f64, oracle: f64) -> Result<f64> {
    if !(oracle.is_finite() && obtained.is_finite()) {
        return Err(Error::OracleUnavailable("non-finite loss".into()));
    }
    let gap = obtained - oracle;
    if gap < -REGRET_TOL * oracle.abs() {
        return Err(Error::OracleUnavailable(format!(
            "obtained loss {obtained} is below the oracle {oracle}"
        )));
    }
    Ok(gap.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSaving {
    pub ratio: f64,
    /// Set when the budget exceeds the cost of full training.
    pub over_budget: bool,
}

/// 1 - budget / full_training_cost.
pub fn cost_saving(budget: f64, full_training_cost: f64) -> CostSaving {
    CostSaving {
        ratio: 1.0 - budget / full_training_cost,
        over_budget: full_training_cost < budget,
    }
}

/// One paired run: the SH loss, the other strategy's loss, and whether SH
/// already reached the pool optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair {
    pub sh: f64,
    pub other: f64,
    pub sh_optimal: bool,
}

/// Paired comparison of one strategy against SH.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RelativeStats {
    pub pairs: usize,
    /// Mean signed improvement over runs where SH misses the pool optimum.
    pub conditional_mean: Option<f64>,
    pub conditional_runs: usize,
    /// Mean signed improvement over all paired runs.
    pub mean: Option<f64>,
    /// Mean and max improvement over runs the strategy wins.
    pub improvement_mean: Option<f64>,
    pub improvement_max: Option<f64>,
    /// Mean and most negative value over runs the strategy loses.
    pub degradation_mean: Option<f64>,
    pub degradation_max: Option<f64>,
    pub wins: usize,
    pub equals: usize,
    pub losses: usize,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn relative_stats(pairs: &[Pair]) -> RelativeStats {
    let rel: Vec<f64> = pairs.iter().map(|p| relative_improvement(p.sh, p.other)).collect();
    let conditional: Vec<f64> = pairs
        .iter()
        .zip(&rel)
        .filter(|(p, _)| !p.sh_optimal)
        .map(|(_, &r)| r)
        .collect();
    let wins: Vec<f64> = rel.iter().copied().filter(|&r| r > EQUAL_TOL).collect();
    let losses: Vec<f64> = rel.iter().copied().filter(|&r| r < -EQUAL_TOL).collect();
    RelativeStats {
        pairs: pairs.len(),
        conditional_mean: mean(&conditional),
        conditional_runs: conditional.len(),
        mean: mean(&rel),
        improvement_mean: mean(&wins),
        improvement_max: wins.iter().copied().reduce(f64::max),
        degradation_mean: mean(&losses),
        degradation_max: losses.iter().copied().reduce(f64::min),
        wins: wins.len(),
        equals: pairs.len() - wins.len() - losses.len(),
        losses: losses.len(),
    }
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some((m, 0.0));
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    Some((m, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn improvement_examples() {
        assert!((relative_improvement(4.0, 3.8) - 0.05).abs() < 1e-15);
        assert_eq!(relative_improvement(3.3, 3.3), 0.0);
        // 2.58% below 3.17.
        let l: f64 = 3.17 * (1.0 - 0.0258);
        assert!((l - 3.088).abs() < 1e-3);
        assert!((relative_improvement(3.17, l) - 0.0258).abs() < 1e-12);
    }

    #[test]
    fn regret_examples() {
        assert_eq!(regret(2.6, 2.6).unwrap(), 0.0);
        assert!((regret(3.0, 2.6).unwrap() - 0.4).abs() < 1e-12);
        assert!(regret(2.5, 2.6).is_err());
        assert!(regret(f64::NAN, 2.6).is_err());
    }

    #[test]
    fn cost_saving_examples() {
        let s = cost_saving(1e4, 7.7e5);
        assert_eq!((s.ratio * 1000.0).round() / 1000.0, 0.987);
        assert!(!s.over_budget);
        assert!((cost_saving(1e5, 4.1e5).ratio - 0.7561).abs() < 1e-4);
        assert_eq!(cost_saving(5.0, 5.0).ratio, 0.0);
        let neg = cost_saving(2.0, 1.0);
        assert!(neg.ratio < 0.0 && neg.over_budget);
    }

    #[test]
    fn stats_split_wins_and_losses() {
        let pairs = [
            Pair {
                sh: 4.0,
                other: 3.8,
                sh_optimal: false,
            },
            Pair {
                sh: 4.0,
                other: 4.2,
                sh_optimal: false,
            },
            Pair {
                sh: 3.0,
                other: 3.0,
                sh_optimal: true,
            },
            Pair {
                sh: 2.0,
                other: 1.9,
                sh_optimal: true,
            },
        ];
        let s = relative_stats(&pairs);
        assert_eq!((s.wins, s.equals, s.losses), (2, 1, 1));
        assert_eq!(s.conditional_runs, 2);
        assert!(s.conditional_mean.unwrap().abs() < 1e-12);
        assert!((s.improvement_max.unwrap() - 0.05).abs() < 1e-12);
        assert!((s.improvement_mean.unwrap() - 0.05).abs() < 1e-12);
        assert!((s.degradation_max.unwrap() + 0.05).abs() < 1e-12);
        assert!((s.mean.unwrap() - 0.0125).abs() < 1e-12);
    }

    #[test]
    fn empty_stats() {
        let s = relative_stats(&[]);
        assert_eq!(s.pairs, 0);
        assert!(s.mean.is_none() && s.conditional_mean.is_none());
    }

    #[test]
    fn std_of_constant_is_zero() {
        assert_eq!(mean_std(&[2.0, 2.0, 2.0]), Some((2.0, 0.0)));
        assert_eq!(mean_std(&[1.0]), Some((1.0, 0.0)));
        let (m, s) = mean_std(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn counts_partition_the_runs(
            v in proptest::collection::vec((0.5f64..10.0, 0.5f64..10.0, any::<bool>()), 0..50)
        ) {
            let pairs: Vec<Pair> = v.iter().map(|&(sh, other, sh_optimal)| Pair { sh, other, sh_optimal }).collect();
            let s = relative_stats(&pairs);
            prop_assert_eq!(s.wins + s.equals + s.losses, pairs.len());
            if let (Some(i), Some(m)) = (s.improvement_mean, s.improvement_max) {
                prop_assert!(i > 0.0 && m >= i);
            }
            if let (Some(d), Some(m)) = (s.degradation_mean, s.degradation_max) {
                prop_assert!(d < 0.0 && m <= d);
            }
        }
    }
}
