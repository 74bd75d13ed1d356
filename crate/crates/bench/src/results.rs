//! Result rows and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{BenchError, Result};

/// What the log-probabilities were evaluated on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTarget {
    /// Ground-truth interventional sample (factual plus counterfactual).
    Interventional,
    /// Factual outcomes of the arm only; a diagnostic, not the target.
    Factual,
}

impl EvalTarget {
    fn name(self) -> &'static str {
        match self {
            EvalTarget::Interventional => "interventional",
            EvalTarget::Factual => "factual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub method: Method,
    pub arm: u8,
    pub fold: usize,
    pub target: EvalTarget,
    pub log_prob_in: f64,
    pub log_prob_out: f64,
    pub wasserstein_in: Option<f64>,
    pub wasserstein_out: Option<f64>,
    /// Fit time of the method's family plus evaluation time. Kept out of
    /// `results.csv` so that file is reproducible byte for byte.
    pub wall_clock_secs: Option<f64>,
}

pub const RESULTS_HEADER: [&str; 9] = [
    "dataset",
    "method",
    "arm",
    "fold",
    "target",
    "log_prob_in",
    "log_prob_out",
    "wasserstein_in",
    "wasserstein_out",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_results<W: Write>(w: W, rows: &[ResultRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULTS_HEADER)?;
    for r in rows {
        out.write_record([
            r.dataset.clone(),
            r.method.to_string(),
            r.arm.to_string(),
            r.fold.to_string(),
            r.target.name().to_string(),
            r.log_prob_in.to_string(),
            r.log_prob_out.to_string(),
            opt(r.wasserstein_in),
            opt(r.wasserstein_out),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_timings<W: Write>(w: W, rows: &[ResultRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["dataset", "method", "arm", "fold", "wall_clock_secs"])?;
    for r in rows {
        out.write_record([
            r.dataset.clone(),
            r.method.to_string(),
            r.arm.to_string(),
            r.fold.to_string(),
            opt(r.wall_clock_secs),
        ])?;
    }
    out.flush()?;
    Ok(())
}

fn parse_f64(field: &str, name: &str, line: u64) -> Result<f64> {
    field.trim().parse().map_err(|_| {
        BenchError::Contract(format!("line {line}: `{name}` is not a number: {field:?}"))
    })
}

fn parse_opt(field: &str, name: &str, line: u64) -> Result<Option<f64>> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(field, name, line).map(Some)
    }
}

/// Reads a file written by [`write_results`].
pub fn read_results<R: Read>(r: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(RESULTS_HEADER) {
        return Err(BenchError::Contract(format!(
            "results header {:?} differs from {:?}",
            header.iter().collect::<Vec<_>>(),
            RESULTS_HEADER
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| rec.get(i).unwrap_or("");
        let arm: u8 = f(2)
            .parse()
            .map_err(|_| BenchError::Contract(format!("line {line}: bad arm {:?}", f(2))))?;
        if arm > 1 {
            return Err(BenchError::Contract(format!(
                "line {line}: arm {arm} is not 0 or 1"
            )));
        }
        let target = match f(4) {
            "interventional" => EvalTarget::Interventional,
            "factual" => EvalTarget::Factual,
            other => {
                return Err(BenchError::Contract(format!(
                    "line {line}: unknown target {other:?}"
                )))
            }
        };
        rows.push(ResultRow {
            dataset: f(0).to_string(),
            method: f(1).parse()?,
            arm,
            fold: f(3)
                .parse()
                .map_err(|_| BenchError::Contract(format!("line {line}: bad fold {:?}", f(3))))?,
            target,
            log_prob_in: parse_f64(f(5), "log_prob_in", line)?,
            log_prob_out: parse_f64(f(6), "log_prob_out", line)?,
            wasserstein_in: parse_opt(f(7), "wasserstein_in", line)?,
            wasserstein_out: parse_opt(f(8), "wasserstein_out", line)?,
            wall_clock_secs: None,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(lp: f64) -> ResultRow {
        ResultRow {
            dataset: "scm".into(),
            method: Method::Kde,
            arm: 1,
            fold: 3,
            target: EvalTarget::Factual,
            log_prob_in: -1.25,
            log_prob_out: lp,
            wasserstein_in: None,
            wasserstein_out: Some(0.1 + 0.2),
            wall_clock_secs: Some(2.5),
        }
    }

    #[test]
    fn csv_round_trip_keeps_infinities_and_drops_timing() {
        let rows = vec![row(-2.0), row(f64::NEG_INFINITY)];
        let mut buf = Vec::new();
        write_results(&mut buf, &rows).unwrap();
        let back = read_results(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].log_prob_out, f64::NEG_INFINITY);
        assert_eq!(back[0].wasserstein_out, Some(0.1 + 0.2));
        assert_eq!(back[0].wall_clock_secs, None);
        assert_eq!(back[0].method, Method::Kde);
    }

    #[test]
    fn malformed_rows_are_errors() {
        let head = RESULTS_HEADER.join(",");
        for bad in [
            "scm,kde,2,0,factual,1,1,,",
            "scm,foo,0,0,factual,1,1,,",
            "scm,kde,0,0,factual,x,1,,",
            "scm,kde,0,0,other,1,1,,",
        ] {
            assert!(
                read_results(format!("{head}\n{bad}\n").as_bytes()).is_err(),
                "{bad}"
            );
        }
        assert!(read_results("a,b\n".as_bytes()).is_err());
    }
}
