//! Result tables, their CSV form and convergence curves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eoh::EvalRecord;
use crate::error::{Error, Result};
use crate::numfmt::sig17;

pub const CSV_HEADER: &str =
    "algorithm,sweep_param,sweep_value,mean_gamma_db,mean_gamma_linear,normalized,std,eval_count,wall_time_s";

const REALIZATION_HEADER: &str =
    "algorithm,sweep_param,sweep_value,realization,gamma_linear,normalized,eval_count,wall_time_s";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: String,
    pub sweep_param: String,
    pub sweep_value: f64,
    /// `10·log10` of `mean_gamma_linear`.
    pub mean_gamma_db: f64,
    pub mean_gamma_linear: f64,
    /// Mean over realizations of the per-realization ratio to the reference.
    pub normalized: Option<f64>,
    /// Sample standard deviation of the linear balanced SINR.
    pub std: f64,
    /// Solver invocations summed over realizations.
    pub eval_count: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRow {
    pub algorithm: String,
    pub sweep_param: String,
    pub sweep_value: f64,
    pub realization: usize,
    pub gamma_linear: f64,
    pub normalized: Option<f64>,
    pub eval_count: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub per_realization: Vec<RealizationRow>,
}

impl ResultTable {
    /// Sorts rows by algorithm name, then sweep value.
    pub fn new(mut rows: Vec<ResultRow>, mut per_realization: Vec<RealizationRow>) -> Self {
        rows.sort_by(|a, b| {
            a.algorithm
                .cmp(&b.algorithm)
                .then(a.sweep_value.total_cmp(&b.sweep_value))
        });
        per_realization.sort_by(|a, b| {
            a.algorithm
                .cmp(&b.algorithm)
                .then(a.sweep_value.total_cmp(&b.sweep_value))
                .then(a.realization.cmp(&b.realization))
        });
        ResultTable { rows, per_realization }
    }

    pub fn row(&self, algorithm: &str, sweep_value: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.algorithm == algorithm && r.sweep_value == sweep_value)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(sig17).unwrap_or_default()
}

fn writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Numeric(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn to_csv_string(table: &ResultTable) -> Result<String> {
    if table.rows.is_empty() {
        return Err(Error::Domain("refusing to write an empty table".into()));
    }
    let mut w = writer();
    w.write_record(CSV_HEADER.split(',')).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record([
            r.algorithm.clone(),
            r.sweep_param.clone(),
            sig17(r.sweep_value),
            sig17(r.mean_gamma_db),
            sig17(r.mean_gamma_linear),
            opt(r.normalized),
            sig17(r.std),
            r.eval_count.to_string(),
            sig17(r.wall_time_s),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

pub fn to_realizations_csv_string(table: &ResultTable) -> Result<String> {
    let mut w = writer();
    w.write_record(REALIZATION_HEADER.split(',')).map_err(csv_err)?;
    for r in &table.per_realization {
        w.write_record([
            r.algorithm.clone(),
            r.sweep_param.clone(),
            sig17(r.sweep_value),
            r.realization.to_string(),
            sig17(r.gamma_linear),
            opt(r.normalized),
            r.eval_count.to_string(),
            sig17(r.wall_time_s),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Writes the summary table to `path`.
pub fn emit_csv(table: &ResultTable, path: &Path) -> Result<()> {
    let text = to_csv_string(table)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes one row per (algorithm, sweep value, realization).
pub fn emit_realizations_csv(table: &ResultTable, path: &Path) -> Result<()> {
    let text = to_realizations_csv_string(table)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("line {line}: bad value in column {}", i + 1)))
}

/// Parses a summary table written by [`emit_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rd.headers().map_err(csv_err)?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected header `{header}`")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 2;
        rows.push(ResultRow {
            algorithm: rec[0].to_owned(),
            sweep_param: rec[1].to_owned(),
            sweep_value: field(&rec, 2, line)?,
            mean_gamma_db: field(&rec, 3, line)?,
            mean_gamma_linear: field(&rec, 4, line)?,
            normalized: if rec[5].is_empty() {
                None
            } else {
                Some(field(&rec, 5, line)?)
            },
            std: field(&rec, 6, line)?,
            eval_count: field(&rec, 7, line)?,
            wall_time_s: field(&rec, 8, line)?,
        });
    }
    Ok(rows)
}

/// Human-readable fixed-width rendering of a summary table.
pub fn render_table(rows: &[ResultRow]) -> String {
    let mut out = format!(
        "{:<14} {:>14} {:>12} {:>14} {:>11} {:>12} {:>10}\n",
        "algorithm", "sweep", "gamma_db", "gamma_linear", "normalized", "evals", "time_s"
    );
    for r in rows {
        let norm = r.normalized.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<14} {:>14} {:>12.4} {:>14.6e} {:>11} {:>12} {:>10.3}\n",
            r.algorithm,
            format!("{}={}", short(&r.sweep_param), r.sweep_value),
            r.mean_gamma_db,
            r.mean_gamma_linear,
            norm,
            r.eval_count,
            r.wall_time_s
        ));
    }
    out
}

fn short(param: &str) -> &str {
    match param {
        "tx_power_dbm" => "P",
        "ports_per_axis" => "Nx",
        "aperture_w" => "W",
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub evals: usize,
    /// Best fitness after `evals` evaluations; `None` while nothing has
    /// succeeded.
    pub best_fitness: Option<f64>,
}

/// Best-so-far curve over a sequence of evaluation outcomes.
pub fn convergence_curve<I>(values: I) -> Vec<ConvergencePoint>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let mut best: Option<f64> = None;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            if let Some(v) = v.filter(|v| v.is_finite()) {
                best = Some(best.map_or(v, |b| b.max(v)));
            }
            ConvergencePoint {
                evals: i + 1,
                best_fitness: best,
            }
        })
        .collect()
}

pub fn convergence_from_log(records: &[EvalRecord]) -> Result<Vec<ConvergencePoint>> {
    if records.is_empty() {
        return Err(Error::Domain("evolution log is empty".into()));
    }
    Ok(convergence_curve(records.iter().map(|r| r.fitness)))
}

pub fn convergence_csv(curve: &[ConvergencePoint]) -> String {
    let mut out = String::from("evals,best_fitness\n");
    for p in curve {
        out.push_str(&format!("{},{}\n", p.evals, opt(p.best_fitness)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::tests::desk_spec;
    use crate::bench::{run_experiment, AlgorithmName, Normalization, Sweep, SweepParam};
    use crate::eoh::EvalStatus;

    #[test]
    fn csv_roundtrip_is_exact() {
        let mut s = desk_spec(&[AlgorithmName::Random, AlgorithmName::Autoport], Normalization::None);
        s.sweep = Some(Sweep {
            parameter: SweepParam::TxPowerDbm,
            values: vec![30.0, 10.0, 20.0],
        });
        s.record_timing = true;
        let t = run_experiment(&s).unwrap();
        let text = to_csv_string(&t).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with(CSV_HEADER));
        assert_eq!(parse_csv(&text).unwrap(), t.rows);
        let values: Vec<f64> = t.rows.iter().map(|r| r.sweep_value).collect();
        assert_eq!(values, [10.0, 20.0, 30.0, 10.0, 20.0, 30.0]);
        assert_eq!(t.rows[0].algorithm, "autoport");
        assert!(t.rows[0].normalized.is_none());

        let realizations = to_realizations_csv_string(&t).unwrap();
        assert_eq!(realizations.lines().count(), 1 + 2 * 3 * 3);

        let empty = ResultTable::new(vec![], vec![]);
        assert!(to_csv_string(&empty).is_err());
        assert!(parse_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn rendering_mentions_every_row() {
        let t = run_experiment(&desk_spec(&[AlgorithmName::Exhaustive], Normalization::VsExhaustive)).unwrap();
        let s = render_table(&t.rows);
        assert!(s.contains("exhaustive") && s.contains("1.0000"));
    }

    fn rec(f: Option<f64>) -> EvalRecord {
        EvalRecord {
            generation: 0,
            candidate_id: "c".into(),
            parent_ids: vec![],
            status: if f.is_some() {
                EvalStatus::Ok
            } else {
                EvalStatus::Timeout
            },
            fitness: f,
            wall_time_s: 0.0,
            parallelism: 1,
        }
    }

    #[test]
    fn convergence_is_best_so_far() {
        assert!(convergence_from_log(&[]).is_err());
        let one = convergence_from_log(&[rec(Some(2.0))]).unwrap();
        assert_eq!(one.len(), 1);
        let c = convergence_from_log(&[rec(None), rec(Some(2.0)), rec(Some(1.0)), rec(Some(3.0))]).unwrap();
        let best: Vec<_> = c.iter().map(|p| p.best_fitness).collect();
        assert_eq!(best, [None, Some(2.0), Some(2.0), Some(3.0)]);
        let csv = convergence_csv(&c);
        assert!(csv.starts_with("evals,best_fitness\n1,\n2,2.0000000000000000e0\n"));
    }
}
