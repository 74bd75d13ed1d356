//! Experiment configuration, read from a TOML file.
//!
//! ```toml
//! name = "scm-b3"
//! seed = 0
//! methods = ["infs", "cnf-plugin"]
//!
//! [data]
//! source = "scm"        # or "moons" (sigma, n) or "csv" (path, schema)
//! b = 3.0
//! n = 1000
//!
//! [split]
//! folds = 10
//! train_fraction = 0.9
//!
//! [tuning]
//! cv_folds = 5
//! budget = 50
//!
//! [grids.flow]          # overrides one grid; other keys keep defaults
//! n_knots = [5, 10]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use idens_core::data::CsvSchema;
use idens_core::target::TargetHyperparams;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Infs,
    InfsNoBias,
    CnfPlugin,
    TarnetStar,
    Mdn,
    Kde,
    Dkme,
    CnfTs,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Infs,
        Method::InfsNoBias,
        Method::CnfPlugin,
        Method::TarnetStar,
        Method::Mdn,
        Method::Kde,
        Method::Dkme,
        Method::CnfTs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Infs => "infs",
            Method::InfsNoBias => "infs-no-bias",
            Method::CnfPlugin => "cnf-plugin",
            Method::TarnetStar => "tarnet-star",
            Method::Mdn => "mdn",
            Method::Kde => "kde",
            Method::Dkme => "dkme",
            Method::CnfTs => "cnf-ts",
        }
    }

    /// Methods sharing one tuned and fitted model.
    pub fn family(self) -> Family {
        match self {
            Method::Infs | Method::InfsNoBias | Method::CnfPlugin | Method::CnfTs => Family::Flow,
            Method::TarnetStar => Family::Tarnet,
            Method::Mdn => Family::Mdn,
            Method::Kde => Family::Kde,
            Method::Dkme => Family::Dkme,
        }
    }

    /// Whether the fitted estimate supports direct sampling.
    pub fn can_sample(self) -> bool {
        !matches!(self, Method::Kde | Method::Dkme | Method::CnfTs)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| BenchError::UnknownMethod {
                name: s.to_string(),
                valid: Method::ALL
                    .iter()
                    .map(|m| m.name())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Flow,
    Tarnet,
    Mdn,
    Kde,
    Dkme,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Flow => "flow",
            Family::Tarnet => "tarnet",
            Family::Mdn => "mdn",
            Family::Kde => "kde",
            Family::Dkme => "dkme",
        }
    }

    /// Keys a grid for this family may contain.
    pub fn grid_keys(self) -> &'static [&'static str] {
        match self {
            Family::Flow => &["n_knots", "sigma_x2", "sigma_y2", "lr", "batch_size"],
            Family::Tarnet => &["sigma_x2", "sigma_y2", "lr", "batch_size"],
            Family::Mdn => &["n_components", "sigma_x2", "sigma_y2", "lr", "batch_size"],
            Family::Kde => &["lr", "batch_size"],
            Family::Dkme => &["sigma_k", "eps"],
        }
    }

    pub fn default_grid(self) -> Grid {
        let noise = vec![0.0, 0.01f64.powi(2), 0.05f64.powi(2), 0.1f64.powi(2)];
        let mut g = Grid::new();
        match self {
            Family::Flow | Family::Tarnet | Family::Mdn => {
                g.insert("sigma_x2".into(), noise.clone());
                g.insert("sigma_y2".into(), noise);
                g.insert("lr".into(), vec![0.001, 0.005]);
                g.insert("batch_size".into(), vec![32.0, 64.0]);
                if self == Family::Flow {
                    g.insert("n_knots".into(), vec![5.0, 10.0, 20.0]);
                }
                if self == Family::Mdn {
                    g.insert("n_components".into(), vec![5.0, 10.0, 20.0]);
                }
            }
            Family::Kde => {
                g.insert("lr".into(), vec![0.001, 0.005, 0.1]);
                g.insert("batch_size".into(), vec![32.0, 64.0, 128.0]);
            }
            Family::Dkme => {
                g.insert(
                    "sigma_k".into(),
                    vec![1e-4, 1e-3, 0.01, 0.1, 1.0, 10.0, 20.0],
                );
                g.insert("eps".into(), vec![1e-4, 1e-3, 0.01, 0.1, 1.0, 10.0]);
            }
        }
        g
    }

    /// Random-search budget cap; kernel families use the full grid.
    pub fn exhaustive(self) -> bool {
        matches!(self, Family::Kde | Family::Dkme)
    }
}

/// Hyperparameter name to candidate values.
pub type Grid = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Scm { b: f64, n: usize },
    Moons { sigma: f64, n: usize },
    Csv { path: PathBuf, schema: CsvSchema },
}

impl DataSource {
    pub fn id(&self) -> String {
        match self {
            DataSource::Scm { b, n } => format!("scm-b{b}-n{n}"),
            DataSource::Moons { sigma, n } => format!("moons-s{sigma}-n{n}"),
            DataSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub folds: usize,
    pub train_fraction: f64,
    /// Defaults to the experiment seed.
    pub seed: Option<u64>,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            folds: 10,
            train_fraction: 0.9,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSpec {
    pub enabled: bool,
    pub cv_folds: usize,
    /// Random-search budget for the neural families.
    pub budget: usize,
}

impl Default for TuningSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            cv_folds: 5,
            budget: 50,
        }
    }
}

/// Fixed training settings that are not tuned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    pub nuisance_iters: usize,
    pub baseline_iters: usize,
    pub kde_iters: usize,
    pub alpha: f64,
    pub hidden: usize,
    pub d_r: usize,
    pub clip: f64,
    /// Truncated-series dimensionality; defaults to 10 (1-D) or 5 (2-D).
    pub ts_dim: Option<usize>,
    pub target: TargetHyperparams,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            nuisance_iters: 5000,
            baseline_iters: 5000,
            kde_iters: 10_000,
            alpha: 1.0,
            hidden: 10,
            d_r: 10,
            clip: 0.05,
            ts_dim: None,
            target: TargetHyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
    /// Wasserstein distances to the interventional sample. Unset means "when
    /// counterfactuals are available"; `true` without them is an error.
    pub wasserstein: Option<bool>,
    /// Writes `(y, density)` grid dumps per method, arm and fold.
    pub dump_densities: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("results"),
            wasserstein: None,
            dump_densities: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub methods: Vec<String>,
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub tuning: TuningSpec,
    /// Per-family overrides of the default grids.
    #[serde(default)]
    pub grids: BTreeMap<String, Grid>,
    #[serde(default)]
    pub training: TrainingSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| BenchError::Config(e.to_string()))
    }

    /// Parsed method list, in configuration order, without duplicates.
    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        let mut out = Vec::new();
        for s in &self.methods {
            let m: Method = s.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        Ok(out)
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.seed)
    }

    /// Default grid with configured overrides applied key by key.
    pub fn grid(&self, family: Family) -> Grid {
        let mut g = family.default_grid();
        if let Some(over) = self.grids.get(family.name()) {
            for (k, v) in over {
                g.insert(k.clone(), v.clone());
            }
        }
        g
    }

    pub fn validate(&self) -> Result<()> {
        let methods = self.parsed_methods()?;
        if methods.is_empty() {
            return Err(BenchError::Config("at least one method is required".into()));
        }
        match &self.data {
            DataSource::Scm { b, n } if !b.is_finite() || *n < 20 => {
                return Err(BenchError::Config(
                    "scm source needs finite b and n >= 20".into(),
                ))
            }
            DataSource::Moons { sigma, n } if sigma.is_nan() || *sigma < 0.0 || *n < 20 => {
                return Err(BenchError::Config(
                    "moons source needs sigma >= 0 and n >= 20".into(),
                ))
            }
            _ => {}
        }
        if self.split.folds == 0
            || !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0)
        {
            return Err(BenchError::Config(
                "split needs folds >= 1 and a train fraction in (0, 1)".into(),
            ));
        }
        if self.tuning.cv_folds < 2 || self.tuning.budget == 0 {
            return Err(BenchError::Config(
                "tuning needs cv_folds >= 2 and a positive budget".into(),
            ));
        }
        if !(self.training.clip > 0.0 && self.training.clip < 0.5) {
            return Err(BenchError::Config(
                "propensity clip must lie in (0, 0.5)".into(),
            ));
        }
        for (name, grid) in &self.grids {
            let family = [
                Family::Flow,
                Family::Tarnet,
                Family::Mdn,
                Family::Kde,
                Family::Dkme,
            ]
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| BenchError::Config(format!("unknown grid family `{name}`")))?;
            for (k, v) in grid {
                if !family.grid_keys().contains(&k.as_str()) {
                    return Err(BenchError::Config(format!(
                        "grid `{name}` has unknown key `{k}`; expected one of {:?}",
                        family.grid_keys()
                    )));
                }
                if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                    return Err(BenchError::Config(format!(
                        "grid `{name}.{k}` must be a nonempty list of numbers"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "t"
methods = ["infs", "cnf-plugin"]
[data]
source = "scm"
b = 3.0
n = 1000
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.split.folds, 10);
        assert_eq!(c.tuning.budget, 50);
        assert_eq!(c.training.target.k, 100);
        assert_eq!(
            c.parsed_methods().unwrap(),
            vec![Method::Infs, Method::CnfPlugin]
        );
        assert_eq!(c.grid(Family::Flow)["n_knots"], vec![5.0, 10.0, 20.0]);
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_method_lists_valid_names() {
        let err = ExperimentConfig::from_toml(&MINIMAL.replace("cnf-plugin", "xyz")).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("xyz") && msg.contains("infs-no-bias") && msg.contains("cnf-ts"),
            "{msg}"
        );
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(
            ExperimentConfig::from_toml(&MINIMAL.replace("[\"infs\", \"cnf-plugin\"]", "[]"))
                .is_err()
        );
        assert!(ExperimentConfig::from_toml(
            &MINIMAL.replace("source = \"scm\"", "source = \"ihdp\"")
        )
        .is_err());
        let bad_grid = format!("{MINIMAL}\n[grids.flow]\nn_cats = [1.0]\n");
        assert!(ExperimentConfig::from_toml(&bad_grid).is_err());
        let unknown_field = MINIMAL.replace("name = \"t\"", "name = \"t\"\ncolour = 1");
        assert!(ExperimentConfig::from_toml(&unknown_field).is_err());
    }

    #[test]
    fn grid_overrides_merge_per_key() {
        let c = ExperimentConfig::from_toml(&format!("{MINIMAL}\n[grids.flow]\nn_knots = [5.0]\n"))
            .unwrap();
        let g = c.grid(Family::Flow);
        assert_eq!(g["n_knots"], vec![5.0]);
        assert_eq!(g["lr"], vec![0.001, 0.005]);
    }

    #[test]
    fn csv_source_parses() {
        let s = r#"
name = "ihdp"
methods = ["infs"]
[data]
source = "csv"
path = "ihdp.csv"
[data.schema]
covariates = ["x1", "x2"]
treatment = "t"
outcomes = ["y"]
counterfactuals = ["y_cf"]
"#;
        let c = ExperimentConfig::from_toml(s).unwrap();
        assert_eq!(c.data.id(), "ihdp");
    }
}
