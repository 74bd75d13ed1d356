use std::io::{Read, Write};
use std::path::Path;

use idens_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::{ColumnNames, ObservationalDataset};
use crate::error::{invalid, CoreError, Result};

/// Column roles in a CSV file. `counterfactuals` is empty when the file has
/// no counterfactual outcomes; otherwise it pairs with `outcomes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcomes: Vec<String>,
    #[serde(default)]
    pub counterfactuals: Vec<String>,
}

impl CsvSchema {
    /// Schema used by [`save_csv`] for `dataset`.
    pub fn for_dataset(dataset: &ObservationalDataset) -> Self {
        let (covariates, treatment, outcomes) = match dataset.names() {
            Some(n) => (
                n.covariates.clone(),
                n.treatment.clone(),
                n.outcomes.clone(),
            ),
            None => (
                (0..dataset.dx()).map(|j| format!("x{j}")).collect(),
                "a".to_string(),
                (0..dataset.dy())
                    .map(|j| format!("y{j}"))
                    .collect::<Vec<_>>(),
            ),
        };
        let counterfactuals = if dataset.y_cf().is_some() {
            outcomes.iter().map(|o| format!("{o}_cf")).collect()
        } else {
            vec![]
        };
        Self {
            covariates,
            treatment,
            outcomes,
            counterfactuals,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<ObservationalDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CoreError::MissingColumn(name.to_string()))
}

fn parse_cell(record: &csv::StringRecord, col: usize, name: &str, row: usize) -> Result<f64> {
    let raw = record.get(col).ok_or_else(|| CoreError::Csv {
        row,
        message: format!("missing field `{name}`"),
    })?;
    let v: f64 = raw.trim().parse().map_err(|_| CoreError::Csv {
        row,
        message: format!("field `{name}` is not a number: {raw:?}"),
    })?;
    if !v.is_finite() {
        return Err(CoreError::Csv {
            row,
            message: format!("field `{name}` is not finite"),
        });
    }
    Ok(v)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<ObservationalDataset> {
    if schema.outcomes.is_empty() {
        return Err(invalid("schema lists no outcome columns"));
    }
    if !schema.counterfactuals.is_empty() && schema.counterfactuals.len() != schema.outcomes.len() {
        return Err(invalid(
            "counterfactual columns must pair with outcome columns",
        ));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CoreError::Csv {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let cov_cols = schema
        .covariates
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let a_col = column(&headers, &schema.treatment)?;
    let y_cols = schema
        .outcomes
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;
    let cf_cols = schema
        .counterfactuals
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let (mut x, mut a, mut y, mut cf) = (vec![], vec![], vec![], vec![]);
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| CoreError::Csv {
            row,
            message: e.to_string(),
        })?;
        for (&c, name) in cov_cols.iter().zip(&schema.covariates) {
            x.push(parse_cell(&rec, c, name, row)?);
        }
        let t = parse_cell(&rec, a_col, &schema.treatment, row)?;
        if t != 0.0 && t != 1.0 {
            return Err(CoreError::Csv {
                row,
                message: format!("treatment `{}` must be 0 or 1, found {t}", schema.treatment),
            });
        }
        a.push(t as u8);
        for (&c, name) in y_cols.iter().zip(&schema.outcomes) {
            y.push(parse_cell(&rec, c, name, row)?);
        }
        for (&c, name) in cf_cols.iter().zip(&schema.counterfactuals) {
            cf.push(parse_cell(&rec, c, name, row)?);
        }
    }
    let n = a.len();
    if n == 0 {
        return Err(invalid("CSV file has no data rows"));
    }
    let dy = schema.outcomes.len();
    let y_cf = (!cf_cols.is_empty()).then(|| Tensor::new([n, dy], cf));
    let ds = ObservationalDataset::new(
        Tensor::new([n, schema.covariates.len()], x),
        a,
        Tensor::new([n, dy], y),
        y_cf,
    )?;
    Ok(ds.with_names(ColumnNames {
        covariates: schema.covariates.clone(),
        treatment: schema.treatment.clone(),
        outcomes: schema.outcomes.clone(),
    }))
}

pub fn save_csv(path: impl AsRef<Path>, dataset: &ObservationalDataset) -> Result<CsvSchema> {
    let file = std::fs::File::create(path)?;
    write_csv(file, dataset)
}

pub fn write_csv<W: Write>(writer: W, dataset: &ObservationalDataset) -> Result<CsvSchema> {
    let schema = CsvSchema::for_dataset(dataset);
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<&str> = schema
        .covariates
        .iter()
        .chain(std::iter::once(&schema.treatment))
        .chain(&schema.outcomes)
        .chain(&schema.counterfactuals)
        .map(String::as_str)
        .collect();
    let to_io = |e: csv::Error| CoreError::Io(std::io::Error::other(e));
    w.write_record(&header).map_err(to_io)?;
    for i in 0..dataset.len() {
        let mut rec: Vec<String> = dataset
            .x()
            .row_slice(i)
            .iter()
            .map(f64::to_string)
            .collect();
        rec.push(dataset.a()[i].to_string());
        rec.extend(dataset.y().row_slice(i).iter().map(f64::to_string));
        if let Some(cf) = dataset.y_cf() {
            rec.extend(cf.row_slice(i).iter().map(f64::to_string));
        }
        w.write_record(&rec).map_err(to_io)?;
    }
    w.flush()?;
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{scm_sample, Arm, ScmConfig};

    fn schema(cf: bool) -> CsvSchema {
        CsvSchema {
            covariates: vec!["x1".into(), "x2".into()],
            treatment: "t".into(),
            outcomes: vec!["y".into()],
            counterfactuals: if cf { vec!["y_cf".into()] } else { vec![] },
        }
    }

    #[test]
    fn three_rows_two_covariates() {
        let text = "x1,x2,t,y\n0.5,1,0,2.0\n-1,2,1,3.5\n3,0,1,-1\n";
        let d = read_csv(text.as_bytes(), &schema(false)).unwrap();
        assert_eq!((d.len(), d.dx(), d.dy()), (3, 2, 1));
        assert!(d.y_cf().is_none());
        assert_eq!(d.a(), &[0, 1, 1]);
    }

    #[test]
    fn non_binary_treatment_names_row() {
        let text = "x1,x2,t,y\n0.5,1,0,2.0\n-1,2,2,3.5\n";
        let err = read_csv(text.as_bytes(), &schema(false)).unwrap_err();
        assert!(matches!(err, CoreError::Csv { row: 2, .. }), "{err}");
    }

    #[test]
    fn counterfactual_column_is_loaded() {
        let text = "y_cf,x1,x2,t,y\n9,0.5,1,0,2.0\n8,-1,2,1,3.5\n";
        let d = read_csv(text.as_bytes(), &schema(true)).unwrap();
        assert_eq!(
            d.interventional(Arm::Treated).unwrap().values(),
            &[9.0, 3.5]
        );
    }

    #[test]
    fn missing_column_and_bad_number() {
        let err = read_csv("x1,t,y\n1,0,2\n".as_bytes(), &schema(false)).unwrap_err();
        assert!(matches!(err, CoreError::MissingColumn(ref c) if c == "x2"));
        let err = read_csv("x1,x2,t,y\n1,abc,0,2\n".as_bytes(), &schema(false)).unwrap_err();
        assert!(matches!(err, CoreError::Csv { row: 1, .. }));
        let err = read_csv("x1,x2,t,y\n1,2,0\n".as_bytes(), &schema(false)).unwrap_err();
        assert!(matches!(err, CoreError::Csv { row: 1, .. }));
    }

    #[test]
    fn save_load_round_trip() {
        let d = scm_sample(&ScmConfig {
            b: 3.0,
            n: 50,
            seed: 2,
        })
        .unwrap();
        let mut buf = Vec::new();
        let s = write_csv(&mut buf, &d).unwrap();
        let back = read_csv(buf.as_slice(), &s).unwrap();
        assert_eq!(back.x(), d.x());
        assert_eq!(back.y(), d.y());
        assert_eq!(back.y_cf(), d.y_cf());
        assert_eq!(back.a(), d.a());
    }
}
