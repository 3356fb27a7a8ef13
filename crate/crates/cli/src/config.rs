//! Run configuration: one TOML file per run, unknown keys rejected. The
//! grammar is documented in `CONFIG.md` next to this crate.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    pub simulate: Option<SimulateSection>,
    pub data: Option<DataSection>,
    pub mesh: Option<MeshSection>,
    pub likelihood: Option<LikelihoodSection>,
    #[serde(default)]
    pub hyper: Vec<HyperSection>,
    #[serde(default)]
    pub component: Vec<ComponentSection>,
    pub predict: Option<PredictSection>,
    #[serde(default)]
    pub lincomb: Vec<LinCombSection>,
    pub compare: Option<CompareSection>,
    /// File the configuration was read from; relative paths resolve
    /// against its directory.
    #[serde(skip)]
    pub path: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub strategy: String,
    pub int_strategy: String,
    pub grid_step: Option<f64>,
    pub grid_drop: Option<f64>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            threads: None,
            out: None,
            strategy: "gaussian".into(),
            int_strategy: "grid".into(),
            grid_step: None,
            grid_drop: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    pub n_sites: usize,
    pub n_times: usize,
    pub mesh_cells: usize,
    pub extent: [f64; 2],
    pub range: f64,
    pub sigma0: f64,
    pub rho: f64,
    pub intercept: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub family: String,
    /// Observation precision for the Gaussian family.
    pub precision: Option<f64>,
    /// Size for the negative binomial family.
    pub size: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n_sites: 30,
            n_times: 20,
            mesh_cells: 50,
            extent: [-0.5, 1.5],
            range: 0.25,
            sigma0: 1.0,
            rho: 0.5,
            intercept: -1.0,
            beta1: 1.0,
            beta2: 0.5,
            family: "poisson".into(),
            precision: None,
            size: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub file: PathBuf,
}

/// Either a structured rectangle (`extent` + `cells`) or vertex and
/// triangle files.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSection {
    pub extent: Option<[f64; 4]>,
    pub cells: Option<[usize; 2]>,
    pub vertices: Option<PathBuf>,
    pub triangles: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodSection {
    pub family: String,
    /// Hyperparameter holding the Gaussian log-precision or the negative
    /// binomial log-size.
    pub hyper: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSection {
    pub name: String,
    #[serde(default = "default_transform")]
    pub transform: String,
    /// Internal-scale starting value.
    pub initial: Option<f64>,
    #[serde(default = "default_prior")]
    pub prior: String,
    pub mean: Option<f64>,
    pub precision: Option<f64>,
    pub shape: Option<f64>,
    pub rate: Option<f64>,
    #[serde(default)]
    pub fixed: bool,
}

fn default_transform() -> String {
    "log".into()
}

fn default_prior() -> String {
    "gaussian".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ComponentSection {
    Intercept(InterceptSection),
    Fixed(FixedSection),
    Iid(IndexedSection),
    Ar1(IndexedSection),
    Rw1(IndexedSection),
    Spde(SpdeSection),
}

impl ComponentSection {
    pub fn name(&self) -> &str {
        match self {
            ComponentSection::Intercept(c) => &c.name,
            ComponentSection::Fixed(c) => &c.name,
            ComponentSection::Iid(c) | ComponentSection::Ar1(c) | ComponentSection::Rw1(c) => &c.name,
            ComponentSection::Spde(c) => &c.name,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterceptSection {
    pub name: String,
    pub prior_precision: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedSection {
    pub name: String,
    pub covariate: String,
    pub prior_precision: Option<f64>,
}

/// iid, ar1 and rw1 effects indexed by the distinct values of a column.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexedSection {
    pub name: String,
    pub index: String,
    pub precision: Option<String>,
    /// ar1 only.
    pub correlation: Option<String>,
    /// rw1 only.
    #[serde(default = "default_true")]
    pub sum_to_zero: bool,
    pub group: Option<GroupSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdeSection {
    pub name: String,
    #[serde(default = "default_alpha")]
    pub alpha: u8,
    pub tau: Option<String>,
    pub kappa: Option<String>,
    pub group: Option<GroupSection>,
}

fn default_alpha() -> u8 {
    2
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default = "default_group_index")]
    pub index: String,
    pub correlation: Option<String>,
}

fn default_group_index() -> String {
    "time".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictSection {
    /// Points per side of the regular prediction grid.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_pred_extent")]
    pub extent: [f64; 4],
    /// Value of the `time` column at which to predict.
    pub time: f64,
}

fn default_grid() -> usize {
    51
}

fn default_pred_extent() -> [f64; 4] {
    [0.0, 1.0, 0.0, 1.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinCombSection {
    pub name: String,
    /// One combination per element of this component.
    pub each: Option<String>,
    /// Single-element components added with weight 1 to every combination.
    #[serde(default)]
    pub add: Vec<String>,
    #[serde(default)]
    pub terms: Vec<TermSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSection {
    pub component: String,
    /// 1-based element index.
    #[serde(default = "one")]
    pub index: usize,
    #[serde(default = "unit")]
    pub weight: f64,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub models: Vec<CompareModel>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareModel {
    pub name: String,
    pub config: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|source| CliError::ConfigSyntax {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.path = path.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Resolves `p` against the directory of the configuration file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            return p.to_path_buf();
        }
        match self.path.parent() {
            Some(dir) => dir.join(p),
            None => p.to_path_buf(),
        }
    }

    pub fn error(&self, key: impl Into<String>, message: impl Into<String>) -> CliError {
        CliError::Config {
            path: self.path.clone(),
            key: key.into(),
            message: message.into(),
        }
    }
}
