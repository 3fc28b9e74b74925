//! Deep-ensemble surrogate: small MLPs map log model size to the positive
//! coefficients of a parametric curve family.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numopt::{inv_softplus, sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveFamily {
    /// a x^-b + c
    Pl,
    /// a exp(-b x) + c
    Exp,
    /// (a b + c x^d) / (b + x^d)
    Mmf,
}

impl CurveFamily {
    pub fn n_coeffs(self) -> usize {
        match self {
            CurveFamily::Pl | CurveFamily::Exp => 3,
            CurveFamily::Mmf => 4,
        }
    }
}

impl FromStr for CurveFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pl" => Ok(CurveFamily::Pl),
            "exp" => Ok(CurveFamily::Exp),
            "mmf" => Ok(CurveFamily::Mmf),
            other => Err(Error::invalid("family", format!("unknown curve family `{other}`"))),
        }
    }
}

impl fmt::Display for CurveFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveFamily::Pl => "pl",
            CurveFamily::Exp => "exp",
            CurveFamily::Mmf => "mmf",
        })
    }
}

pub fn family_eval(family: CurveFamily, coeffs: &[f64], x: f64) -> Result<f64> {
    if coeffs.len() != family.n_coeffs() {
        return Err(Error::invalid(
            "coeffs",
            format!("{family} takes {} coefficients", family.n_coeffs()),
        ));
    }
    match family {
        CurveFamily::Pl if !(x > 0.0) => Err(Error::invalid("x", "power law needs x > 0")),
        _ if !(x >= 0.0) => Err(Error::invalid("x", "must be >= 0")),
        _ => Ok(eval_unchecked(family, coeffs, x)),
    }
}

fn eval_unchecked(family: CurveFamily, c: &[f64], x: f64) -> f64 {
    match family {
        CurveFamily::Pl => c[0] * x.powf(-c[1]) + c[2],
        CurveFamily::Exp => c[0] * (-c[1] * x).exp() + c[2],
        CurveFamily::Mmf => {
            let u = x.powf(c[3]);
            (c[0] * c[1] + c[2] * u) / (c[1] + u)
        }
    }
}

/// Value and partial derivatives with respect to the coefficients.
fn eval_grad(family: CurveFamily, c: &[f64], x: f64, grad: &mut [f64]) -> f64 {
    match family {
        CurveFamily::Pl => {
            let p = x.powf(-c[1]);
            grad[0] = p;
            grad[1] = -c[0] * p * x.ln();
            grad[2] = 1.0;
            c[0] * p + c[2]
        }
        CurveFamily::Exp => {
            let e = (-c[1] * x).exp();
            grad[0] = e;
            grad[1] = -c[0] * x * e;
            grad[2] = 1.0;
            c[0] * e + c[2]
        }
        CurveFamily::Mmf => {
            let u = x.powf(c[3]);
            let den = c[1] + u;
            let f = (c[0] * c[1] + c[2] * u) / den;
            grad[0] = c[1] / den;
            grad[1] = (c[0] - f) / den;
            grad[2] = u / den;
            grad[3] = if x > 0.0 { u * x.ln() * (c[2] - f) / den } else { 0.0 };
            f
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeCurve {
    pub n_params: u64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeFitOptions {
    pub iterations: usize,
    pub members: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DeFitOptions {
    fn default() -> Self {
        DeFitOptions {
            iterations: 1000,
            members: 5,
            hidden: 64,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

/// 1 -> hidden -> hidden -> k, tanh activations, softplus outputs.
#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    hidden: usize,
    out: usize,
    params: Vec<f64>,
}

struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl Mlp {
    fn layout(hidden: usize, out: usize) -> Layout {
        let w1 = 0;
        let b1 = w1 + hidden;
        let w2 = b1 + hidden;
        let b2 = w2 + hidden * hidden;
        let w3 = b2 + hidden;
        let b3 = w3 + out * hidden;
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + out,
        }
    }

    fn init(hidden: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        let l = Self::layout(hidden, out);
        let mut params = vec![0.0; l.len];
        let mut normal = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
        for p in &mut params[l.w1..l.b1] {
            *p = normal(1.0);
        }
        let s2 = (1.0 / hidden as f64).sqrt();
        for p in &mut params[l.w2..l.b2] {
            *p = normal(s2);
        }
        for p in &mut params[l.w3..l.b3] {
            *p = normal(s2);
        }
        // Start every coefficient near 1.
        let b = inv_softplus(1.0);
        params[l.b3..].iter_mut().for_each(|p| *p = b);
        Mlp { hidden, out, params }
    }

    fn forward(&self, z: f64, h1: &mut [f64], h2: &mut [f64], o: &mut [f64]) {
        let (h, l, p) = (self.hidden, Self::layout(self.hidden, self.out), &self.params);
        for i in 0..h {
            h1[i] = (p[l.w1 + i] * z + p[l.b1 + i]).tanh();
        }
        for i in 0..h {
            let row = &p[l.w2 + i * h..l.w2 + (i + 1) * h];
            let s: f64 = row.iter().zip(h1.iter()).map(|(w, v)| w * v).sum();
            h2[i] = (s + p[l.b2 + i]).tanh();
        }
        for k in 0..self.out {
            let row = &p[l.w3 + k * h..l.w3 + (k + 1) * h];
            o[k] = row.iter().zip(h2.iter()).map(|(w, v)| w * v).sum::<f64>() + p[l.b3 + k];
        }
    }

    fn coeffs(&self, z: f64) -> Vec<f64> {
        let mut h1 = vec![0.0; self.hidden];
        let mut h2 = vec![0.0; self.hidden];
        let mut o = vec![0.0; self.out];
        self.forward(z, &mut h1, &mut h2, &mut o);
        o.iter().map(|v| softplus(*v)).collect()
    }

    /// Accumulates the parameter gradient for one input given dL/dcoeffs.
    fn backward(&self, z: f64, h1: &[f64], h2: &[f64], o: &[f64], d_coeff: &[f64], grad: &mut [f64]) {
        let (h, l, p) = (self.hidden, Self::layout(self.hidden, self.out), &self.params);
        let d_o: Vec<f64> = o.iter().zip(d_coeff).map(|(v, d)| d * sigmoid(*v)).collect();
        let mut d_h2 = vec![0.0; h];
        for k in 0..self.out {
            grad[l.b3 + k] += d_o[k];
            for i in 0..h {
                grad[l.w3 + k * h + i] += d_o[k] * h2[i];
                d_h2[i] += p[l.w3 + k * h + i] * d_o[k];
            }
        }
        let mut d_h1 = vec![0.0; h];
        for i in 0..h {
            let d_pre = d_h2[i] * (1.0 - h2[i] * h2[i]);
            grad[l.b2 + i] += d_pre;
            let row = l.w2 + i * h;
            for j in 0..h {
                grad[row + j] += d_pre * h1[j];
                d_h1[j] += p[row + j] * d_pre;
            }
        }
        for i in 0..h {
            let d_pre = d_h1[i] * (1.0 - h1[i] * h1[i]);
            grad[l.w1 + i] += d_pre * z;
            grad[l.b1 + i] += d_pre;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub mean: f64,
    pub std: f64,
}

impl InputScaler {
    pub fn apply(&self, n_params: u64) -> f64 {
        ((n_params as f64).ln() - self.mean) / self.std
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleSurrogate {
    family: CurveFamily,
    members: Vec<Mlp>,
    scaler: InputScaler,
    /// Members dropped after diverging twice.
    pub excluded: usize,
}

struct Prepared {
    z: Vec<f64>,
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    n_points: usize,
}

fn prepare(curves: &[DeCurve], scaler: &InputScaler) -> Prepared {
    Prepared {
        z: curves.iter().map(|c| scaler.apply(c.n_params)).collect(),
        x: curves.iter().map(|c| c.x.clone()).collect(),
        y: curves.iter().map(|c| c.y.clone()).collect(),
        n_points: curves.iter().map(|c| c.x.len()).sum(),
    }
}

/// Mean squared error and its gradient over all curves.
fn loss_and_grad(net: &Mlp, family: CurveFamily, data: &Prepared, grad: &mut [f64]) -> f64 {
    grad.iter_mut().for_each(|g| *g = 0.0);
    let k = family.n_coeffs();
    let mut h1 = vec![0.0; net.hidden];
    let mut h2 = vec![0.0; net.hidden];
    let mut o = vec![0.0; k];
    let mut fg = vec![0.0; k];
    let norm = 1.0 / data.n_points as f64;
    let mut loss = 0.0;
    for m in 0..data.z.len() {
        net.forward(data.z[m], &mut h1, &mut h2, &mut o);
        let c: Vec<f64> = o.iter().map(|v| softplus(*v)).collect();
        let mut d_coeff = vec![0.0; k];
        for (x, y) in data.x[m].iter().zip(&data.y[m]) {
            let r = eval_grad(family, &c, *x, &mut fg) - y;
            loss += r * r * norm;
            for j in 0..k {
                d_coeff[j] += 2.0 * r * norm * fg[j];
            }
        }
        net.backward(data.z[m], &h1, &h2, &o, &d_coeff, grad);
    }
    loss
}

fn train_member(family: CurveFamily, data: &Prepared, opts: &DeFitOptions, rng: &mut ChaCha8Rng) -> Option<Mlp> {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let mut net = Mlp::init(opts.hidden, family.n_coeffs(), rng);
    let n = net.params.len();
    let mut grad = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    for t in 1..=opts.iterations {
        let loss = loss_and_grad(&net, family, data, &mut grad);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        let c1 = 1.0 - B1.powi(t as i32);
        let c2 = 1.0 - B2.powi(t as i32);
        for i in 0..n {
            m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
            v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
            net.params[i] -= opts.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
        }
    }
    let final_loss = loss_and_grad(&net, family, data, &mut grad);
    final_loss.is_finite().then_some(net)
}

impl EnsembleSurrogate {
    /// An ensemble with no trained members.
    pub fn untrained(family: CurveFamily) -> Self {
        EnsembleSurrogate {
            family,
            members: Vec::new(),
            scaler: InputScaler { mean: 0.0, std: 1.0 },
            excluded: 0,
        }
    }

    pub fn fit(curves: &[DeCurve], family: CurveFamily, opts: &DeFitOptions) -> Result<Self> {
        let mut sizes: Vec<u64> = curves.iter().map(|c| c.n_params).collect();
        sizes.sort_unstable();
        sizes.dedup();
        if sizes.len() < 2 {
            return Err(Error::invalid("curves", "need at least 2 distinct model sizes"));
        }
        for c in curves {
            if c.x.len() != c.y.len() || c.x.len() < 3 {
                return Err(Error::invalid("curves", "each curve needs at least 3 (x, y) points"));
            }
            let bad_x = match family {
                CurveFamily::Pl => c.x.iter().any(|x| !(*x > 0.0)),
                _ => c.x.iter().any(|x| !(*x >= 0.0)),
            };
            if bad_x || c.y.iter().any(|y| !y.is_finite()) {
                return Err(Error::invalid("curves", "inputs outside the family's domain"));
            }
        }
        if opts.members == 0 || opts.hidden == 0 {
            return Err(Error::invalid("members", "need at least one member and hidden unit"));
        }

        let logs: Vec<f64> = curves.iter().map(|c| (c.n_params as f64).ln()).collect();
        let mean = logs.iter().sum::<f64>() / logs.len() as f64;
        let var = logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / logs.len() as f64;
        let scaler = InputScaler {
            mean,
            std: var.sqrt().max(1e-12),
        };
        let data = prepare(curves, &scaler);

        let mut members = Vec::with_capacity(opts.members);
        let mut excluded = 0;
        for i in 0..opts.members {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            match train_member(family, &data, opts, &mut rng).or_else(|| train_member(family, &data, opts, &mut rng)) {
                Some(net) => members.push(net),
                None => excluded += 1,
            }
        }
        if members.is_empty() {
            return Err(Error::OptimizerFailed);
        }
        Ok(EnsembleSurrogate {
            family,
            members,
            scaler,
            excluded,
        })
    }

    pub fn family(&self) -> CurveFamily {
        self.family
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn is_trained(&self) -> bool {
        !self.members.is_empty()
    }

    pub fn member_coeffs(&self, n_params: u64) -> Result<Vec<Vec<f64>>> {
        if !self.is_trained() {
            return Err(Error::Untrained);
        }
        let z = self.scaler.apply(n_params);
        Ok(self.members.iter().map(|m| m.coeffs(z)).collect())
    }

    /// Ensemble-mean prediction at each input.
    pub fn predict(&self, n_params: u64, xs: &[f64]) -> Result<Vec<f64>> {
        let coeffs = self.member_coeffs(n_params)?;
        xs.iter()
            .map(|&x| {
                let mut s = 0.0;
                for c in &coeffs {
                    s += family_eval(self.family, c, x)?;
                }
                Ok(s / coeffs.len() as f64)
            })
            .collect()
    }

    /// Mean squared error of the ensemble mean on `curves`.
    pub fn mse(&self, curves: &[DeCurve]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for c in curves {
            for (p, y) in self.predict(c.n_params, &c.x)?.iter().zip(&c.y) {
                total += (p - y).powi(2);
                n += 1;
            }
        }
        Ok(total / n.max(1) as f64)
    }

    /// Lowest ensemble-mean prediction on a uniform grid over [from, horizon].
    pub fn min_predicted_loss(&self, n_params: u64, from: f64, horizon: f64) -> Result<f64> {
        if !self.is_trained() {
            return Err(Error::Untrained);
        }
        if horizon < from {
            return Err(Error::invalid("horizon", "below the last observed input"));
        }
        let grid = crate::gp::prediction_grid(from, horizon);
        Ok(self.predict(n_params, &grid)?.into_iter().fold(f64::INFINITY, f64::min))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn xs(n: usize) -> Vec<f64> {
        (0..n).map(|i| 1.0 + i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn family_closed_forms() {
        assert_eq!(family_eval(CurveFamily::Pl, &[2.0, 0.7, 1.5], 1.0).unwrap(), 3.5);
        assert!(family_eval(CurveFamily::Pl, &[2.0, 0.7, 1.5], 0.0).is_err());
        let big = family_eval(CurveFamily::Mmf, &[3.0, 2.0, 0.25, 1.5], 1e12).unwrap();
        assert!((big - 0.25).abs() < 1e-9);
        for x in [0.0, 0.5, 4.0] {
            assert_eq!(family_eval(CurveFamily::Exp, &[2.0, 0.0, 1.5], x).unwrap(), 3.5);
        }
        assert!(family_eval(CurveFamily::Exp, &[1.0, 1.0], 1.0).is_err());
        assert_eq!("MMF".parse::<CurveFamily>().unwrap(), CurveFamily::Mmf);
    }

    #[test]
    fn coefficient_gradients_match_differences() {
        let cases = [
            (CurveFamily::Pl, vec![2.0, 0.6, 0.8]),
            (CurveFamily::Exp, vec![1.5, 1.2, 0.4]),
            (CurveFamily::Mmf, vec![3.0, 0.7, 0.5, 1.4]),
        ];
        for (fam, c) in cases {
            let mut g = vec![0.0; c.len()];
            eval_grad(fam, &c, 1.7, &mut g);
            for j in 0..c.len() {
                let mut cp = c.clone();
                let mut cm = c.clone();
                cp[j] += 1e-6;
                cm[j] -= 1e-6;
                let fd = (eval_unchecked(fam, &cp, 1.7) - eval_unchecked(fam, &cm, 1.7)) / 2e-6;
                assert!((fd - g[j]).abs() < 1e-6, "{fam} {j}");
            }
        }
    }

    #[test]
    fn network_gradient_matches_differences() {
        let curves = vec![
            DeCurve {
                n_params: 1000,
                x: xs(5),
                y: vec![3.0, 2.5, 2.2, 2.0, 1.9],
            },
            DeCurve {
                n_params: 100_000,
                x: xs(5),
                y: vec![2.0, 1.7, 1.5, 1.4, 1.35],
            },
        ];
        let scaler = InputScaler { mean: 9.0, std: 2.0 };
        let data = prepare(&curves, &scaler);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::init(6, 4, &mut rng);
        let mut grad = vec![0.0; net.params.len()];
        loss_and_grad(&net, CurveFamily::Mmf, &data, &mut grad);
        let mut scratch = grad.clone();
        for i in (0..net.params.len()).step_by(7) {
            let p0 = net.params[i];
            net.params[i] = p0 + 1e-6;
            let fp = loss_and_grad(&net, CurveFamily::Mmf, &data, &mut scratch);
            net.params[i] = p0 - 1e-6;
            let fm = loss_and_grad(&net, CurveFamily::Mmf, &data, &mut scratch);
            net.params[i] = p0;
            let fd = (fp - fm) / 2e-6;
            assert!(
                (fd - grad[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "{i}: {fd} vs {}",
                grad[i]
            );
        }
    }

    #[test]
    fn recovers_size_independent_power_law() {
        let truth = |x: f64| 2.0 * x.powf(-0.5) + 1.0;
        let curves: Vec<DeCurve> = [1u64 << 10, 1 << 20, 1 << 30]
            .iter()
            .map(|&n| DeCurve {
                n_params: n,
                x: xs(20),
                y: xs(20).iter().map(|&x| truth(x)).collect(),
            })
            .collect();
        let s = EnsembleSurrogate::fit(&curves, CurveFamily::Pl, &DeFitOptions::default()).unwrap();
        assert_eq!(s.n_members(), 5);
        for c in &curves {
            for (p, y) in s.predict(c.n_params, &c.x).unwrap().iter().zip(&c.y) {
                assert!((p - y).abs() / y < 0.02, "{p} vs {y}");
            }
        }
    }

    #[test]
    fn single_member_self_consistency() {
        let curves = vec![
            DeCurve {
                n_params: 1000,
                x: xs(6),
                y: vec![3.0, 2.5, 2.2, 2.0, 1.9, 1.85],
            },
            DeCurve {
                n_params: 1_000_000,
                x: xs(6),
                y: vec![2.0, 1.7, 1.5, 1.4, 1.35, 1.3],
            },
        ];
        let opts = DeFitOptions {
            members: 1,
            iterations: 50,
            ..Default::default()
        };
        let s = EnsembleSurrogate::fit(&curves, CurveFamily::Exp, &opts).unwrap();
        let own: Vec<DeCurve> = curves
            .iter()
            .map(|c| DeCurve {
                y: s.predict(c.n_params, &c.x).unwrap(),
                ..c.clone()
            })
            .collect();
        assert_eq!(s.mse(&own).unwrap(), 0.0);
    }

    #[test]
    fn plateau_ordering_follows_data() {
        let grid: Vec<f64> = (0..15).map(|i| 1.0 + 3.0 * i as f64 / 14.0).collect();
        let mk = |n: u64, c: f64| DeCurve {
            n_params: n,
            x: grid.clone(),
            y: grid
                .iter()
                .map(|&x| eval_unchecked(CurveFamily::Mmf, &[4.0, 1.0, c, 3.0], x))
                .collect(),
        };
        let curves = vec![mk(1 << 12, 2.0), mk(1 << 24, 1.0)];
        let s = EnsembleSurrogate::fit(&curves, CurveFamily::Mmf, &DeFitOptions::default()).unwrap();
        let far = [1e6];
        let small = s.predict(1 << 12, &far).unwrap()[0];
        let large = s.predict(1 << 24, &far).unwrap()[0];
        assert!(large < small, "{large} vs {small}");
    }

    #[test]
    fn fit_is_deterministic() {
        let curves = vec![
            DeCurve {
                n_params: 1000,
                x: xs(5),
                y: vec![3.0, 2.5, 2.2, 2.0, 1.9],
            },
            DeCurve {
                n_params: 100_000,
                x: xs(5),
                y: vec![2.0, 1.7, 1.5, 1.4, 1.35],
            },
        ];
        let opts = DeFitOptions {
            iterations: 100,
            seed: 4,
            ..Default::default()
        };
        let a = EnsembleSurrogate::fit(&curves, CurveFamily::Pl, &opts).unwrap();
        let b = EnsembleSurrogate::fit(&curves, CurveFamily::Pl, &opts).unwrap();
        assert_eq!(a.members, b.members);
        assert_eq!(
            a.predict(5000, &[1.5, 3.0]).unwrap(),
            b.predict(5000, &[1.5, 3.0]).unwrap()
        );
    }

    #[test]
    fn ensemble_mean_is_member_mean() {
        let curves = vec![
            DeCurve {
                n_params: 1000,
                x: xs(5),
                y: vec![3.0, 2.5, 2.2, 2.0, 1.9],
            },
            DeCurve {
                n_params: 100_000,
                x: xs(5),
                y: vec![2.0, 1.7, 1.5, 1.4, 1.35],
            },
        ];
        let opts = DeFitOptions {
            iterations: 30,
            ..Default::default()
        };
        let s = EnsembleSurrogate::fit(&curves, CurveFamily::Mmf, &opts).unwrap();
        let coeffs = s.member_coeffs(3000).unwrap();
        let manual: f64 = coeffs
            .iter()
            .map(|c| family_eval(CurveFamily::Mmf, c, 1.3).unwrap())
            .sum::<f64>()
            / coeffs.len() as f64;
        assert!((s.predict(3000, &[1.3]).unwrap()[0] - manual).abs() < 1e-14);
    }

    #[test]
    fn min_prediction_is_horizon_value_for_decreasing_fit() {
        let curves = vec![
            DeCurve {
                n_params: 1000,
                x: xs(5),
                y: vec![3.0, 2.5, 2.2, 2.0, 1.9],
            },
            DeCurve {
                n_params: 100_000,
                x: xs(5),
                y: vec![2.0, 1.7, 1.5, 1.4, 1.35],
            },
        ];
        let opts = DeFitOptions {
            iterations: 200,
            ..Default::default()
        };
        let s = EnsembleSurrogate::fit(&curves, CurveFamily::Pl, &opts).unwrap();
        let at_h = s.predict(1000, &[3.0]).unwrap()[0];
        assert!((s.min_predicted_loss(1000, 2.0, 3.0).unwrap() - at_h).abs() < 1e-12);
        let at_last = s.predict(1000, &[2.0]).unwrap()[0];
        assert_eq!(s.min_predicted_loss(1000, 2.0, 2.0).unwrap(), at_last);
    }

    #[test]
    fn untrained_and_bad_inputs() {
        let s = EnsembleSurrogate::untrained(CurveFamily::Pl);
        assert!(matches!(s.min_predicted_loss(10, 1.0, 2.0), Err(Error::Untrained)));
        let one = vec![DeCurve {
            n_params: 10,
            x: xs(5),
            y: vec![1.0; 5],
        }];
        assert!(EnsembleSurrogate::fit(&one, CurveFamily::Pl, &Default::default()).is_err());
    }

    proptest! {
        #[test]
        fn families_non_increasing(
            a in 1e-3f64..10.0, b in 1e-3f64..10.0, c in 1e-3f64..10.0, d in 1e-3f64..5.0,
            x in 1e-3f64..50.0, dx in 0.0f64..50.0,
        ) {
            for (fam, cs) in [
                (CurveFamily::Pl, vec![a, b, c]),
                (CurveFamily::Exp, vec![a, b, c]),
                (CurveFamily::Mmf, vec![a, b, c, d]),
            ] {
                let f0 = family_eval(fam, &cs, x).unwrap();
                let f1 = family_eval(fam, &cs, x + dx).unwrap();
                if fam == CurveFamily::Mmf && c > a {
                    // MMF rises from a to c when the plateau sits above the start.
                    prop_assert!(f1 >= f0 - 1e-12);
                } else {
                    prop_assert!(f1 <= f0 + 1e-12 * f0.abs().max(1.0));
                }
            }
        }
    }
}
