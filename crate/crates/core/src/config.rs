//! Experiment configuration (TOML) and its content hash.
//!
//! ```toml
//! output_dir = "out"
//!
//! [model]
//! sites = 20
//! omega = 1.0
//! v = 5.875
//! gamma = 3.0
//! dt = 1.25
//! substeps = 10
//!
//! [truncation]
//! svd_cutoff = 1e-10
//! max_bond = 64
//!
//! [run]
//! steps = 1000
//! trajectories = 4
//! seed = 7
//!
//! [cluster]
//! ells = [1, 2, 4]
//! tau_max = 20
//! ```
//!
//! Every section except `[model]` is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{FitAxis, SiteSet, DEFAULT_BURN_IN, DEFAULT_MARGIN};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::mps::TruncationPolicy;
use crate::noise::NoiseModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sites: usize,
    #[serde(default = "one")]
    pub omega: f64,
    #[serde(default = "default_v")]
    pub v: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_m")]
    pub substeps: usize,
}

fn one() -> f64 {
    1.0
}
fn default_v() -> f64 {
    5.875
}
fn default_gamma() -> f64 {
    3.0
}
fn default_dt() -> f64 {
    1.25
}
fn default_m() -> usize {
    10
}

impl ModelConfig {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            sites: self.sites,
            omega: self.omega,
            v: self.v,
            gamma: self.gamma,
            dt: self.dt,
            substeps: self.substeps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub steps: usize,
    pub trajectories: usize,
    pub seed: u64,
    pub densities: bool,
    pub entropy: bool,
    /// Also write PBM/PGM rasters next to each record.
    pub rasters: bool,
    /// Number of quenched coupling sets (only used with disorder).
    pub disorder_sets: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            trajectories: 1,
            seed: 0,
            densities: false,
            entropy: false,
            rasters: false,
            disorder_sets: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub ells: Vec<usize>,
    pub tau_max: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoClusterConfig {
    pub ell: usize,
    pub tau: usize,
    pub delta_i: Vec<usize>,
    pub delta_t: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutocorrConfig {
    /// Atom index; the central atom when absent.
    pub site: Option<usize>,
    pub delta_max: usize,
    /// Additional interaction strengths to scan (the model value is always included).
    pub v_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Cluster CSV to read; `<output_dir>/cluster.csv` when absent.
    pub input: Option<PathBuf>,
    pub axis: FitAxis,
    /// Values of the held coordinate; every available one when empty.
    pub fixed: Vec<usize>,
    pub range: [f64; 2],
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            input: None,
            axis: FitAxis::Temporal,
            fixed: Vec::new(),
            range: [10.0, 40.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmpiricalConfig {
    /// Directory of record files; `<output_dir>/records` when absent.
    pub records: Option<PathBuf>,
    pub ells: Vec<usize>,
    pub taus: Vec<usize>,
    pub lags: Vec<usize>,
    pub margin: usize,
    pub burn_in: usize,
    pub site_set: SiteSet,
}

impl Default for EmpiricalConfig {
    fn default() -> Self {
        Self {
            records: None,
            ells: Vec::new(),
            taus: Vec::new(),
            lags: Vec::new(),
            margin: DEFAULT_MARGIN,
            burn_in: DEFAULT_BURN_IN,
            site_set: SiteSet::Bulk,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Trajectory length of the lockstep comparison.
    pub steps: usize,
    pub seed: u64,
    /// Feed the engines a wrongly ordered substep (fault injection).
    pub corrupt_gate_order: bool,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            seed: 1,
            corrupt_gate_order: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    #[serde(default)]
    pub truncation: TruncationPolicy,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub two_cluster: TwoClusterConfig,
    #[serde(default)]
    pub autocorr: AutocorrConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub empirical: EmpiricalConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn params(&self) -> ModelParams {
        self.model.params()
    }

    pub fn validate(&self) -> Result<()> {
        self.params().validate()?;
        self.truncation.validate()?;
        self.noise.validate()?;
        if self.run.steps == 0 {
            return Err(Error::Config("run.steps must be positive".into()));
        }
        if self.run.disorder_sets == 0 {
            return Err(Error::Config("run.disorder_sets must be positive".into()));
        }
        let l = self.model.sites;
        if let Some(e) = self.cluster.ells.iter().find(|e| **e == 0 || **e > l) {
            return Err(Error::Config(format!("cluster width {e} outside 1..={l}")));
        }
        if let Some(s) = self.autocorr.site {
            if s >= l {
                return Err(Error::Config(format!(
                    "autocorrelation site {s} outside the chain"
                )));
            }
        }
        if self.fit.range[0] > self.fit.range[1] {
            return Err(Error::Config("fit.range must be increasing".into()));
        }
        Ok(())
    }

    /// Hex digest of the canonical serialisation (output location excluded),
    /// embedded in every output.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMOKE: &str = r#"
output_dir = "smoke"

[model]
sites = 4

[truncation]
svd_cutoff = 1e-12

[run]
steps = 10
trajectories = 2
seed = 3
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(SMOKE).unwrap();
        assert_eq!(c.params(), ModelParams::reference(4));
        assert_eq!(c.truncation, TruncationPolicy::cutoff(1e-12));
        assert_eq!(c.run.trajectories, 2);
        assert_eq!(c.empirical.margin, 5);
        assert_eq!(c.noise, NoiseModel::default());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ExperimentConfig::from_toml(&SMOKE.replace("sites = 4", "sites = 0")).is_err());
        assert!(
            ExperimentConfig::from_toml(&SMOKE.replace("seed = 3", "seed = 3\nbogus = 1")).is_err()
        );
        assert!(
            ExperimentConfig::from_toml("[model]\nsites = 3\n[cluster]\nells = [4]\n").is_err()
        );
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_toml(SMOKE).unwrap();
        let b = ExperimentConfig::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let c = ExperimentConfig::from_toml(&SMOKE.replace("seed = 3", "seed = 4")).unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn site_set_variants() {
        let c = ExperimentConfig::from_toml(&format!(
            "{SMOKE}\n[empirical]\nsite_set = {{ central = 2 }}\n"
        ))
        .unwrap();
        assert_eq!(c.empirical.site_set, SiteSet::Central(2));
    }
}
