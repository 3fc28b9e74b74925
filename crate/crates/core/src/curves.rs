//! Learning curves, model specs and curve sets.
//!
//! Losses are stored in linear space. Log transforms happen at the
//! boundaries of [`crate::preprocess`] and the surrogates.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A candidate model: its size and how many tokens one optimizer step consumes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: String,
    pub n_params: u64,
    /// batch x sequence x grad-accum x world-size; 1 for synthetic curves.
    pub tokens_per_step: u64,
}

impl ModelSpec {
    pub fn new(id: impl Into<String>, n_params: u64, tokens_per_step: u64) -> Result<Self> {
        if n_params == 0 {
            return Err(Error::invalid("n_params", "must be at least 1"));
        }
        if tokens_per_step == 0 {
            return Err(Error::invalid("tokens_per_step", "must be at least 1"));
        }
        Ok(ModelSpec {
            id: id.into(),
            n_params,
            tokens_per_step,
        })
    }

    /// Synthetic model with one token per step, id derived from its size.
    pub fn synthetic(n_params: u64) -> Self {
        ModelSpec {
            id: format!("n{n_params}"),
            n_params: n_params.max(1),
            tokens_per_step: 1,
        }
    }

    /// FLOPs of one optimizer step under C = 6ND.
    pub fn step_flops(&self) -> u128 {
        6 * self.n_params as u128 * self.tokens_per_step as u128
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Trained,
    Predicted,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Trained => "trained",
            Provenance::Predicted => "predicted",
        })
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "trained" => Ok(Provenance::Trained),
            "predicted" => Ok(Provenance::Predicted),
            other => Err(Error::invalid(
                "provenance",
                format!("expected `trained` or `predicted`, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub compute: f64,
    pub loss: f64,
    pub provenance: Provenance,
}

impl CurvePoint {
    pub fn trained(compute: f64, loss: f64) -> Self {
        CurvePoint {
            compute,
            loss,
            provenance: Provenance::Trained,
        }
    }

    pub fn predicted(compute: f64, loss: f64) -> Self {
        CurvePoint {
            compute,
            loss,
            provenance: Provenance::Predicted,
        }
    }

    fn is_valid(&self) -> bool {
        self.compute.is_finite() && self.loss.is_finite() && self.compute > 0.0 && self.loss > 0.0
    }
}

/// A model's (compute, loss) trajectory. Points are strictly increasing in compute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    model: ModelSpec,
    points: Vec<CurvePoint>,
}

impl LearningCurve {
    pub fn new(model: ModelSpec, points: Vec<CurvePoint>) -> Result<Self> {
        check_points(&model.id, &points, None)?;
        Ok(LearningCurve { model, points })
    }

    pub fn empty(model: ModelSpec) -> Self {
        LearningCurve {
            model,
            points: Vec::new(),
        }
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn id(&self) -> &str {
        &self.model.id
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Appends points past the current end of the curve.
    pub fn extend(&mut self, points: impl IntoIterator<Item = CurvePoint>) -> Result<()> {
        let new: Vec<CurvePoint> = points.into_iter().collect();
        let last = self.points.last().map(|p| p.compute);
        check_points(&self.model.id, &new, last)?;
        self.points.extend(new);
        Ok(())
    }

    pub fn trained_points(&self) -> impl Iterator<Item = &CurvePoint> {
        self.points.iter().filter(|p| p.provenance == Provenance::Trained)
    }

    /// Copy of the curve with every predicted point removed.
    pub fn trained_only(&self) -> LearningCurve {
        LearningCurve {
            model: self.model.clone(),
            points: self.trained_points().copied().collect(),
        }
    }

    /// Maximum compute over trained points (C_m), 0 for an untrained curve.
    pub fn trained_compute(&self) -> f64 {
        self.trained_points().map(|p| p.compute).fold(0.0, f64::max)
    }

    pub fn last_compute(&self) -> Option<f64> {
        self.points.last().map(|p| p.compute)
    }

    pub fn min_trained_loss(&self) -> Option<f64> {
        self.trained_points().map(|p| p.loss).reduce(f64::min)
    }

    /// Minimum over trained and predicted points.
    pub fn min_loss(&self) -> Option<f64> {
        self.points.iter().map(|p| p.loss).reduce(f64::min)
    }

    pub(crate) fn with_points(&self, points: Vec<CurvePoint>) -> LearningCurve {
        LearningCurve {
            model: self.model.clone(),
            points,
        }
    }
}

fn check_points(model: &str, points: &[CurvePoint], after: Option<f64>) -> Result<()> {
    let mut prev = after;
    for (i, p) in points.iter().enumerate() {
        if !p.is_valid() {
            return Err(Error::InvalidCurve {
                model: model.to_string(),
                reason: format!(
                    "point {i} has non-positive or non-finite values ({}, {})",
                    p.compute, p.loss
                ),
            });
        }
        if let Some(c) = prev {
            if p.compute <= c {
                return Err(Error::InvalidCurve {
                    model: model.to_string(),
                    reason: format!("compute not strictly increasing at point {i}"),
                });
            }
        }
        prev = Some(p.compute);
    }
    Ok(())
}

/// Collection of learning curves keyed by model id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    curves: BTreeMap<String, LearningCurve>,
}

impl CurveSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_curves(curves: impl IntoIterator<Item = LearningCurve>) -> Result<Self> {
        let mut set = CurveSet::new();
        for c in curves {
            set.insert(c)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, curve: LearningCurve) -> Result<()> {
        if self.curves.contains_key(curve.id()) {
            return Err(Error::DuplicateModel(curve.id().to_string()));
        }
        self.curves.insert(curve.id().to_string(), curve);
        Ok(())
    }

    /// Inserts or replaces the curve stored under the same model id.
    pub fn upsert(&mut self, curve: LearningCurve) {
        self.curves.insert(curve.id().to_string(), curve);
    }

    pub fn get(&self, id: &str) -> Option<&LearningCurve> {
        self.curves.get(id)
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LearningCurve> {
        self.curves.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.curves.keys().map(String::as_str)
    }

    /// Sub-set restricted to the given ids.
    pub fn subset<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<CurveSet> {
        let mut out = CurveSet::new();
        for id in ids {
            let c = self.get(id).ok_or_else(|| Error::UnknownModel(id.to_string()))?;
            out.upsert(c.clone());
        }
        Ok(out)
    }

    /// Copy with predicted points stripped from every curve.
    pub fn trained_only(&self) -> CurveSet {
        CurveSet {
            curves: self.curves.iter().map(|(k, c)| (k.clone(), c.trained_only())).collect(),
        }
    }

    pub fn has_predicted(&self) -> bool {
        self.iter()
            .flat_map(|c| c.points())
            .any(|p| p.provenance == Provenance::Predicted)
    }
}

impl<'a> IntoIterator for &'a CurveSet {
    type Item = &'a LearningCurve;
    type IntoIter = std::collections::btree_map::Values<'a, String, LearningCurve>;

    fn into_iter(self) -> Self::IntoIter {
        self.curves.values()
    }
}

/// Total cost of obtaining all curves: sum of each curve's trained compute.
pub fn total_compute(set: &CurveSet) -> f64 {
    set.iter().map(LearningCurve::trained_compute).sum()
}

/// Model and value of the globally minimum trained loss.
///
/// Ties go to the smaller model, then to the lexicographically smaller id.
pub fn min_loss(set: &CurveSet) -> Result<(String, f64)> {
    let mut best: Option<(&ModelSpec, f64)> = None;
    for c in set {
        let Some(l) = c.min_trained_loss() else {
            continue;
        };
        let better = match best {
            None => true,
            Some((m, bl)) => l < bl || (l == bl && (c.model().n_params, c.id()) < (m.n_params, m.id.as_str())),
        };
        if better {
            best = Some((c.model(), l));
        }
    }
    best.map(|(m, l)| (m.id.clone(), l)).ok_or(Error::EmptyCurveSet)
}

pub const CURVE_HEADER: [&str; 5] = ["model_id", "n_params", "compute_flops", "loss", "provenance"];
const TOKENS_COLUMN: &str = "tokens_per_step";

/// Writes the delimiter-separated curve format, rows sorted by (model_id, compute).
///
/// A trailing `tokens_per_step` column is added only when some model has a
/// value other than 1, so synthetic sets keep the five-column header.
pub fn write_curves<W: Write>(set: &CurveSet, writer: W) -> Result<()> {
    let with_tokens = set.iter().any(|c| c.model().tokens_per_step != 1);
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = CURVE_HEADER.to_vec();
    if with_tokens {
        header.push(TOKENS_COLUMN);
    }
    w.write_record(&header)?;
    for c in set {
        let m = c.model();
        for p in c.points() {
            let mut row = vec![
                m.id.clone(),
                m.n_params.to_string(),
                p.compute.to_string(),
                p.loss.to_string(),
                p.provenance.to_string(),
            ];
            if with_tokens {
                row.push(m.tokens_per_step.to_string());
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<curve writer>", e))?;
    Ok(())
}

pub fn read_curves<R: Read>(reader: R) -> Result<CurveSet> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = r.headers()?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let with_tokens = match cols.as_slice() {
        c if c == CURVE_HEADER => false,
        [a, b, c, d, e, f] if [*a, *b, *c, *d, *e] == CURVE_HEADER && *f == TOKENS_COLUMN => true,
        _ => {
            return Err(Error::CurveFormat {
                line: 1,
                reason: format!("unexpected header `{}`", cols.join(",")),
            })
        }
    };

    let mut grouped: BTreeMap<String, (ModelSpec, Vec<CurvePoint>)> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |reason: String| Error::CurveFormat { line, reason };
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(bad("empty model id".into()));
        }
        let n_params: u64 = field(1).parse().map_err(|e| bad(format!("n_params: {e}")))?;
        let compute: f64 = field(2).parse().map_err(|e| bad(format!("compute_flops: {e}")))?;
        let loss: f64 = field(3).parse().map_err(|e| bad(format!("loss: {e}")))?;
        let provenance: Provenance = field(4).parse().map_err(|e: Error| bad(e.to_string()))?;
        let tokens: u64 = if with_tokens {
            field(5).parse().map_err(|e| bad(format!("tokens_per_step: {e}")))?
        } else {
            1
        };
        let spec = ModelSpec::new(id.clone(), n_params, tokens).map_err(|e| bad(e.to_string()))?;
        let entry = grouped.entry(id).or_insert_with(|| (spec.clone(), Vec::new()));
        if entry.0 != spec {
            return Err(bad(format!("inconsistent model spec for `{}`", spec.id)));
        }
        entry.1.push(CurvePoint {
            compute,
            loss,
            provenance,
        });
    }

    let mut set = CurveSet::new();
    for (_, (spec, mut pts)) in grouped {
        pts.sort_by(|a, b| a.compute.total_cmp(&b.compute));
        set.insert(LearningCurve::new(spec, pts)?)?;
    }
    Ok(set)
}

pub fn load_curves(path: impl AsRef<Path>) -> Result<CurveSet> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_curves(std::io::BufReader::new(f))
}

pub fn save_curves(set: &CurveSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_curves(set, std::io::BufWriter::new(f))
}
