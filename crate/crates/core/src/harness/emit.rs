use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::campaign::ExperimentReport;
use crate::curves::{CurvePoint, CurveSet, LearningCurve, ModelSpec, Provenance};
use crate::error::{Error, Result};
use crate::scaling_law::{law_curve, PowerScalingLaw};

/// Column layout of the summary table, one row per (M_0, B, strategy).
pub const TABLE_COLUMNS: [&str; 24] = [
    "pool_size",
    "budget_pf",
    "strategy",
    "runs_ok",
    "failures",
    "mean_loss",
    "loss_std",
    "cond_rel_improvement",
    "cond_runs",
    "rel_improvement_mean",
    "rel_improvement_max",
    "rel_degradation_mean",
    "rel_degradation_max",
    "wins",
    "equals",
    "losses",
    "mean_regret",
    "abc_full",
    "abc_entire",
    "abc_gp_mean",
    "abc_gp_ucb",
    "abc_gp_lcb",
    "mean_spent_pf",
    "cost_saving",
];

/// Samples per fitted law in plot data.
pub const LAW_SAMPLES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Table,
    Plotdata,
}

impl FromStr for EmitFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table" => Ok(EmitFormat::Table),
            "plotdata" | "plot" => Ok(EmitFormat::Plotdata),
            other => Err(Error::invalid("format", format!("unknown format `{other}`"))),
        }
    }
}

impl fmt::Display for EmitFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmitFormat::Table => "table",
            EmitFormat::Plotdata => "plotdata",
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_table<W: Write>(report: &ExperimentReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TABLE_COLUMNS)?;
    for cell in &report.cells {
        for s in &cell.summaries {
            let v = s.vs_sh.unwrap_or_default();
            let has_sh = s.vs_sh.is_some();
            let count = |n: usize| if has_sh { n.to_string() } else { String::new() };
            w.write_record([
                cell.pool_size.to_string(),
                cell.budget_pf.to_string(),
                s.strategy.to_string(),
                s.runs_ok.to_string(),
                s.failures.to_string(),
                opt(s.mean_loss),
                opt(s.loss_std),
                opt(v.conditional_mean),
                count(v.conditional_runs),
                opt(v.improvement_mean),
                opt(v.improvement_max),
                opt(v.degradation_mean),
                opt(v.degradation_max),
                count(v.wins),
                count(v.equals),
                count(v.losses),
                opt(s.mean_regret),
                opt(s.abc_full),
                opt(s.abc_entire),
                opt(s.abc_gp_mean),
                opt(s.abc_gp_ucb),
                opt(s.abc_gp_lcb),
                opt(s.mean_spent.map(|f| f / super::config::PETA)),
                opt(s.cost_saving),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<table writer>", e))?;
    Ok(())
}

pub fn table_string(report: &ExperimentReport) -> Result<String> {
    let mut buf = Vec::new();
    write_table(report, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PlotRow {
    series: String,
    kind: String,
    n_params: Option<u64>,
    tokens_per_step: Option<u64>,
    provenance: String,
    compute: f64,
    loss: f64,
}

/// (compute, loss) series: learning curves and sampled laws.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlotData {
    pub curves: CurveSet,
    pub laws: Vec<(String, Vec<(f64, f64)>)>,
}

impl PlotData {
    pub fn from_curves(curves: &CurveSet, laws: &[(String, PowerScalingLaw)]) -> Self {
        PlotData {
            curves: curves.clone(),
            laws: laws
                .iter()
                .map(|(name, law)| (name.clone(), law_curve(law, LAW_SAMPLES)))
                .collect(),
        }
    }

    /// Every fitted law in a campaign, labelled by cell, run and strategy.
    pub fn from_report(report: &ExperimentReport) -> Self {
        let mut laws = Vec::new();
        for cell in &report.cells {
            let prefix = format!("m{}_b{}", cell.pool_size, cell.budget_pf);
            for run in &cell.runs {
                let tag = format!("{prefix}_r{}", run.run);
                let mut push = |name: String, law: &Option<PowerScalingLaw>| {
                    if let Some(l) = law {
                        laws.push((name, law_curve(l, LAW_SAMPLES)));
                    }
                };
                push(format!("{tag}_truth_full"), &run.truth_full);
                push(format!("{tag}_truth_entire"), &run.truth_entire);
                for o in &run.outcomes {
                    push(format!("{tag}_{}", o.strategy), &o.law);
                    if let Some(g) = &o.gp_laws {
                        push(format!("{tag}_{}_gp_mean", o.strategy), &Some(g.mean));
                        push(format!("{tag}_{}_gp_ucb", o.strategy), &Some(g.ucb));
                        push(format!("{tag}_{}_gp_lcb", o.strategy), &Some(g.lcb));
                    }
                }
            }
        }
        PlotData {
            curves: CurveSet::new(),
            laws,
        }
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for c in &self.curves {
            let m = c.model();
            for p in c.points() {
                w.serialize(PlotRow {
                    series: m.id.clone(),
                    kind: "curve".into(),
                    n_params: Some(m.n_params),
                    tokens_per_step: Some(m.tokens_per_step),
                    provenance: p.provenance.to_string(),
                    compute: p.compute,
                    loss: p.loss,
                })?;
            }
        }
        for (name, pts) in &self.laws {
            for &(compute, loss) in pts {
                w.serialize(PlotRow {
                    series: name.clone(),
                    kind: "law".into(),
                    n_params: None,
                    tokens_per_step: None,
                    provenance: String::new(),
                    compute,
                    loss,
                })?;
            }
        }
        w.flush().map_err(|e| Error::io("<plot writer>", e))?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut curves: Vec<(ModelSpec, Vec<CurvePoint>)> = Vec::new();
        let mut laws: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        for (i, row) in r.deserialize::<PlotRow>().enumerate() {
            let row = row?;
            let bad = |reason: String| Error::CurveFormat { line: i + 2, reason };
            match row.kind.as_str() {
                "curve" => {
                    let spec = ModelSpec::new(
                        row.series.clone(),
                        row.n_params.ok_or_else(|| bad("curve row without n_params".into()))?,
                        row.tokens_per_step.unwrap_or(1),
                    )?;
                    let provenance: Provenance = row.provenance.parse()?;
                    let point = CurvePoint {
                        compute: row.compute,
                        loss: row.loss,
                        provenance,
                    };
                    match curves.last_mut() {
                        Some((m, pts)) if m.id == spec.id => pts.push(point),
                        _ => curves.push((spec, vec![point])),
                    }
                }
                "law" => match laws.last_mut() {
                    Some((name, pts)) if *name == row.series => pts.push((row.compute, row.loss)),
                    _ => laws.push((row.series, vec![(row.compute, row.loss)])),
                },
                other => return Err(bad(format!("unknown series kind `{other}`"))),
            }
        }
        let curves = CurveSet::from_curves(
            curves
                .into_iter()
                .map(|(m, pts)| LearningCurve::new(m, pts))
                .collect::<Result<Vec<_>>>()?,
        )?;
        Ok(PlotData { curves, laws })
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes the report to `path` in the requested format.
pub fn emit(report: &ExperimentReport, format: EmitFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = create(path)?;
    match format {
        EmitFormat::Table => write_table(report, f),
        EmitFormat::Plotdata => PlotData::from_report(report).write(f),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::CurveSource;
    use crate::allocator::SyntheticSource;
    use crate::harness::{run_campaign, Dataset, ExperimentConfig, Strategy};
    use crate::scaling_law::fit_set_law;
    use crate::synthgen::ChinchillaParams;

    fn tiny_report(strategies: Vec<Strategy>) -> ExperimentReport {
        let mut cfg = ExperimentConfig::new(Dataset::SyntheticHoffmann, vec![3], vec![1e3], strategies);
        cfg.runs = 2;
        run_campaign(&cfg).unwrap()
    }

    #[test]
    fn empty_strategies_give_header_only() {
        let text = table_string(&tiny_report(vec![])).unwrap();
        assert_eq!(text, format!("{}\n", TABLE_COLUMNS.join(",")));
    }

    #[test]
    fn table_schema_golden() {
        let text = table_string(&tiny_report(vec![Strategy::Sh, Strategy::Ua])).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "pool_size,budget_pf,strategy,runs_ok,failures,mean_loss,loss_std,\
             cond_rel_improvement,cond_runs,rel_improvement_mean,rel_improvement_max,\
             rel_degradation_mean,rel_degradation_max,wins,equals,losses,mean_regret,\
             abc_full,abc_entire,abc_gp_mean,abc_gp_ucb,abc_gp_lcb,mean_spent_pf,cost_saving"
        );
        assert_eq!(lines.len(), 3);
        let sh: Vec<&str> = lines[1].split(',').collect();
        let ua: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(sh.len(), TABLE_COLUMNS.len());
        assert_eq!(&sh[..5], ["3", "1000", "SH", "2", "0"]);
        assert_eq!(&ua[..5], ["3", "1000", "UA", "2", "0"]);
        // SH against itself: no improvement, every run equal.
        assert_eq!(sh[9], "");
        assert_eq!(&sh[13..16], ["0", "2", "0"]);
        // B = 1e18 FLOPs stays below the default region, so no law is fitted.
        assert_eq!(sh[17], "");
    }

    #[test]
    fn plotdata_round_trip_reproduces_law_fits() {
        let src = SyntheticSource::noiseless(ChinchillaParams::HOFFMANN, 1e21).unwrap();
        let mut set = CurveSet::new();
        for n in [1u64 << 24, 1 << 27, 1 << 30, 1 << 33] {
            let m = ModelSpec::synthetic(n);
            set.insert(LearningCurve::new(m.clone(), src.extend(&m, 0.0, 1e21).unwrap()).unwrap())
                .unwrap();
        }
        let law = fit_set_law(&set, 1e18, 1e20, false).unwrap();
        let plot = PlotData::from_curves(&set, &[("frontier".into(), law)]);
        let mut buf = Vec::new();
        plot.write(&mut buf).unwrap();
        let back = PlotData::read(buf.as_slice()).unwrap();
        assert_eq!(back, plot);
        assert_eq!(fit_set_law(&back.curves, 1e18, 1e20, false).unwrap(), law);
    }

    #[test]
    fn report_plotdata_parses() {
        let mut cfg = ExperimentConfig::new(Dataset::SyntheticHoffmann, vec![3], vec![1e5], vec![Strategy::Sh]);
        cfg.runs = 1;
        let report = run_campaign(&cfg).unwrap();
        let plot = PlotData::from_report(&report);
        assert_eq!(plot.laws.len(), 3);
        let mut buf = Vec::new();
        plot.write(&mut buf).unwrap();
        assert_eq!(PlotData::read(buf.as_slice()).unwrap(), plot);
    }

    #[test]
    fn unwritable_destination_errors() {
        let report = tiny_report(vec![Strategy::Sh]);
        let err = emit(&report, EmitFormat::Table, "/nonexistent-dir/x/table.csv").unwrap_err();
        assert_eq!(err.kind(), "io");
    }

    #[test]
    fn format_names() {
        assert_eq!("TABLE".parse::<EmitFormat>().unwrap(), EmitFormat::Table);
        assert_eq!("plotdata".parse::<EmitFormat>().unwrap(), EmitFormat::Plotdata);
        assert!("svg".parse::<EmitFormat>().is_err());
    }
}
