//! Observational datasets, synthetic generators and preprocessing.

mod csv_io;
mod moons;
mod scm;
mod split;
mod standardize;

pub use csv_io::{load_csv, read_csv, save_csv, write_csv, CsvSchema};
pub use moons::{moons_sample, rotation, MoonsConfig};
pub use scm::{
    scm_mean_outcome, scm_oracle_density, scm_propensity, scm_sample, ScmConfig, ScmOracle,
};
pub use split::{kfold_indices, split, split_indices};
pub use standardize::{standardize, StandardizationParams};

use idens_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    Control,
    Treated,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Treated];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Treated => 1,
        }
    }

    pub fn from_index(a: usize) -> Result<Self> {
        match a {
            0 => Ok(Arm::Control),
            1 => Ok(Arm::Treated),
            _ => Err(invalid(format!("unknown arm {a}; expected 0 or 1"))),
        }
    }

    pub fn other(self) -> Self {
        match self {
            Arm::Control => Arm::Treated,
            Arm::Treated => Arm::Control,
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.index())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnNames {
    pub covariates: Vec<String>,
    pub treatment: String,
    pub outcomes: Vec<String>,
}

/// Covariates `x` (n×d_X), binary treatment `a`, outcome `y` (n×d_Y) and,
/// for benchmarks, counterfactual outcomes `y_cf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationalDataset {
    x: Tensor,
    a: Vec<u8>,
    y: Tensor,
    y_cf: Option<Tensor>,
    names: Option<ColumnNames>,
}

impl ObservationalDataset {
    pub fn new(x: Tensor, a: Vec<u8>, y: Tensor, y_cf: Option<Tensor>) -> Result<Self> {
        let n = a.len();
        if x.rows() != n || y.rows() != n {
            return Err(invalid(format!(
                "row counts differ: x {}, a {}, y {}",
                x.rows(),
                n,
                y.rows()
            )));
        }
        if let Some(bad) = a.iter().position(|&v| v > 1) {
            return Err(CoreError::Csv {
                row: bad + 1,
                message: format!("treatment {} is not binary", a[bad]),
            });
        }
        if let Some(cf) = &y_cf {
            if cf.shape() != y.shape() {
                return Err(invalid(format!(
                    "counterfactual shape {:?} differs from outcome shape {:?}",
                    cf.shape(),
                    y.shape()
                )));
            }
        }
        if y.cols() == 0 {
            return Err(invalid("dataset needs at least one outcome column"));
        }
        Ok(Self {
            x,
            a,
            y,
            y_cf,
            names: None,
        })
    }

    pub fn with_names(mut self, names: ColumnNames) -> Self {
        self.names = Some(names);
        self
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn dx(&self) -> usize {
        self.x.cols()
    }

    pub fn dy(&self) -> usize {
        self.y.cols()
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn y(&self) -> &Tensor {
        &self.y
    }

    pub fn y_cf(&self) -> Option<&Tensor> {
        self.y_cf.as_ref()
    }

    pub fn names(&self) -> Option<&ColumnNames> {
        self.names.as_ref()
    }

    pub fn arm(&self, i: usize) -> Arm {
        if self.a[i] == 1 {
            Arm::Treated
        } else {
            Arm::Control
        }
    }

    pub fn arm_indices(&self, arm: Arm) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.arm(i) == arm).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            a: idx.iter().map(|&i| self.a[i]).collect(),
            y: self.y.select_rows(idx),
            y_cf: self.y_cf.as_ref().map(|t| t.select_rows(idx)),
            names: self.names.clone(),
        }
    }

    /// Sample from the interventional distribution of `Y[arm]`: factual
    /// outcomes of units with `A = arm`, counterfactual outcomes otherwise.
    pub fn interventional(&self, arm: Arm) -> Option<Tensor> {
        let cf = self.y_cf.as_ref()?;
        let mut out = self.y.clone();
        let d = self.dy();
        for i in 0..self.len() {
            if self.arm(i) != arm {
                out.values_mut()[i * d..(i + 1) * d].copy_from_slice(cf.row_slice(i));
            }
        }
        Some(out)
    }

    /// Factual outcomes of the units in `arm`.
    pub fn factual(&self, arm: Arm) -> Tensor {
        self.y.select_rows(&self.arm_indices(arm))
    }

    pub(crate) fn replace_outcomes(&self, y: Tensor, y_cf: Option<Tensor>) -> Self {
        Self {
            x: self.x.clone(),
            a: self.a.clone(),
            y,
            y_cf,
            names: self.names.clone(),
        }
    }

    /// Per-dimension `(min, max)` of the factual outcomes.
    pub fn outcome_range(&self) -> Vec<(f64, f64)> {
        (0..self.dy())
            .map(|j| {
                (0..self.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                    let v = self.y.get(i, j);
                    (lo.min(v), hi.max(v))
                })
            })
            .collect()
    }
}
