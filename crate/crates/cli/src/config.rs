use std::fs;
use std::path::{Path, PathBuf};

use arnet_core::compare::{BaselineModel, DEFAULT_MC_PATHS};
use arnet_core::estimate::{EstimationConfig, FitMethod};
use arnet_core::kernels::{Kernel, KernelId};
use arnet_core::params::{ParamSpec, ParameterSet};
use arnet_core::series::SeriesFormat;
use arnet_core::simulate::{InitRule, SimConfig, DEFAULT_BURN_IN};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::CliError;

pub const SIMULATE_KEYS: &str = "\
Simulation config (JSON, unknown keys are rejected):
  seed      integer    RNG seed; the same seed gives byte-identical output
  model     string     kernel: degree_het | persistence | transitivity |
                       transitivity_ext | global_ar | edgewise_ar
  p         integer    number of nodes
  n         integer    number of snapshots kept after the burn-in
  burn_in   integer    discarded steps (default 200)
  init      object     initial lags: {\"kind\": \"empty\"} or
                       {\"kind\": \"erdos_renyi\", \"rho\": 0.1} (default)
  params    object     true parameters:
    globals   object   global values by name (a, b; a0, a1, b0, b1 for
                       degree_het; alpha, beta for global_ar)
    xi        number or list   xi_i, one shared value or one per node
    eta       number or list   eta_i, same shape as xi
    values    list     full vector in layout order (required for edgewise_ar)
  format    string     series output format: matrix-text (default) | edge-csv

Outputs in --out: series.txt (or series.csv), density.csv, u_table.csv,
v_table.csv.";

pub const ESTIMATION_KEYS: &str = "\
Estimation block (key \"estimation\", every field optional):
  init_grid         list    constant starts for the local parameters
                            (default 0.50, 0.55, ..., 0.90)
  global_start      number  start for the globals (default 1)
  r_tilde_local     number  first-stage ball radius, locals (default 0.2)
  r_check_local     number  second-stage ball radius, locals (default 0.05)
  r_tilde_global    number  first-stage ball radius, globals (default 10)
  r_check_global    number  second-stage ball radius, globals (default 2)
  tau_grid_global   list    LP tolerance multipliers, globals
                            (default 1e-7, 1e-6, 1e-5)
  tau_grid_local    list    LP tolerance multipliers, locals
                            (default 1e-3, 3e-3, 1e-2)
  ci_level          number  confidence level (default 0.95)
  imom              object  {\"tol\": 1e-6, \"max_iter\": 100}
  joint_ascent      bool    climb to the joint maximizer before
                            refinement (default true)";

pub const FIT_KEYS: &str = "\
Fit config (JSON, unknown keys are rejected; flags override the file):
  seed        integer  default --seed-base for replications (default 0)
  model       string   kernel id, as for simulate
  data        string   series file, relative to the config file
  format      string   matrix-text | edge-csv (default: from the extension)
  method      string   mle (default) | imom | mle+imom-init
  estimation  object   see below

Outputs: --out is a directory receiving fit.json, or the report file
itself when it ends in .json. With --replications, --out is a directory
receiving rep_NNN.json per replication plus summary.json.";

pub const COMPARE_KEYS: &str = "\
Compare config (JSON, unknown keys are rejected):
  seed        integer  Monte Carlo seed for kernel forecasts (default 0)
  data        string   series file, relative to the config file
  format      string   matrix-text | edge-csv (default: from the extension)
  split       integer  snapshots used for fitting (default n - max step)
  steps       list     forecast horizons (default [1])
  models      list     subset of transitivity-ar, global-ar, edgewise-ar,
                       edgewise-mean, degree-mean (default: all five)
  mc_paths    integer  Monte Carlo paths per forecast (default 200)
  estimation  object   see below

Outputs in --out: comparison.json and criteria.csv.";

pub const FORECAST_KEYS: &str = "\
Forecast config (JSON, unknown keys are rejected):
  seed        integer  Monte Carlo seed (default 0)
  model       string   one of transitivity-ar, global-ar, edgewise-ar,
                       edgewise-mean, degree-mean
  data        string   series file, relative to the config file
  format      string   matrix-text | edge-csv (default: from the extension)
  split       integer  snapshots used for fitting (default n - max step)
  steps       list     forecast horizons (default [1]; --steps overrides)
  mc_paths    integer  Monte Carlo paths per forecast (default 200)
  estimation  object   see below

Outputs in --out: roc_h<step>.csv per horizon and forecast.json.";

/// Parses a JSON document, reporting the path of the offending field.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            CliError::Config(format!("{}: {inner}", origin.display()))
        } else {
            CliError::Config(format!("{}: field `{path}`: {inner}", origin.display()))
        }
    })
}

pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    parse_json(&text, path)
}

/// Paths inside a config are relative to the config file.
pub fn resolve(config: Option<&Path>, path: &Path) -> PathBuf {
    match config.and_then(Path::parent) {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

pub fn parse_kernel(field: &str, s: &str) -> Result<KernelId, CliError> {
    s.parse()
        .map_err(|e| CliError::Config(format!("field `{field}`: {e}")))
}

pub fn parse_baseline(field: &str, s: &str) -> Result<BaselineModel, CliError> {
    s.parse()
        .map_err(|e| CliError::Config(format!("field `{field}`: {e}")))
}

pub fn parse_format(field: &str, s: &str) -> Result<SeriesFormat, CliError> {
    s.parse()
        .map_err(|e| CliError::Config(format!("field `{field}`: {e}")))
}

pub fn parse_method(field: &str, s: &str) -> Result<FitMethod, CliError> {
    s.parse()
        .map_err(|e| CliError::Config(format!("field `{field}`: {e}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: String,
    pub p: usize,
    pub n: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub init: InitRule,
    pub params: ParamSpec,
    #[serde(default)]
    pub format: Option<String>,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

impl SimulateConfig {
    pub fn kernel(&self) -> Result<Kernel, CliError> {
        let id = parse_kernel("model", &self.model)?;
        Kernel::new(id, self.p).map_err(|e| CliError::Config(format!("field `p`: {e}")))
    }

    pub fn truth(&self) -> Result<ParameterSet, CliError> {
        self.params
            .resolve(self.kernel()?)
            .map_err(|e| CliError::Config(format!("field `params`: {e}")))
    }

    pub fn sim_config(&self, seed: u64) -> Result<SimConfig, CliError> {
        let mut cfg = SimConfig::new(self.truth()?, self.n, seed);
        cfg.burn_in = self.burn_in;
        cfg.init = self.init;
        Ok(cfg)
    }

    pub fn format(&self) -> Result<SeriesFormat, CliError> {
        match &self.format {
            Some(f) => parse_format("format", f),
            None => Ok(SeriesFormat::MatrixText),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: Option<String>,
    pub data: Option<PathBuf>,
    pub format: Option<String>,
    pub method: Option<String>,
    #[serde(default)]
    pub estimation: EstimationConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: PathBuf,
    pub format: Option<String>,
    pub split: Option<usize>,
    #[serde(default = "default_steps")]
    pub steps: Vec<usize>,
    pub models: Option<Vec<String>>,
    #[serde(default = "default_mc_paths")]
    pub mc_paths: usize,
    #[serde(default)]
    pub estimation: EstimationConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: String,
    pub data: PathBuf,
    pub format: Option<String>,
    pub split: Option<usize>,
    #[serde(default = "default_steps")]
    pub steps: Vec<usize>,
    #[serde(default = "default_mc_paths")]
    pub mc_paths: usize,
    #[serde(default)]
    pub estimation: EstimationConfig,
}

fn default_steps() -> Vec<usize> {
    vec![1]
}

fn default_mc_paths() -> usize {
    DEFAULT_MC_PATHS
}

/// Fitting window: everything before the longest horizon unless given.
pub fn split_for(split: Option<usize>, n: usize, steps: &[usize]) -> Result<usize, CliError> {
    let far = steps.iter().copied().max().unwrap_or(1);
    match split {
        Some(s) => Ok(s),
        None if n > far => Ok(n - far),
        None => Err(CliError::Config(format!(
            "field `steps`: horizon {far} leaves no snapshots to fit on (n = {n})"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_names_the_field() {
        let err = parse_json::<FitConfig>(r#"{"estimation": {"ci_lvl": 0.9}}"#, Path::new("x.json"))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("estimation"), "{msg}");
        assert!(msg.contains("ci_lvl"), "{msg}");
    }

    #[test]
    fn bad_model_is_a_config_error() {
        let err = parse_kernel("model", "transitivty").unwrap_err();
        assert_eq!(err.code(), 2);
        assert!(err.to_string().contains("`model`"));
    }

    #[test]
    fn relative_data_follows_the_config() {
        let p = resolve(Some(Path::new("/a/b/c.json")), Path::new("d.txt"));
        assert_eq!(p, PathBuf::from("/a/b/d.txt"));
        let p = resolve(Some(Path::new("/a/b/c.json")), Path::new("/e.txt"));
        assert_eq!(p, PathBuf::from("/e.txt"));
    }

    #[test]
    fn default_split_leaves_the_horizons() {
        assert_eq!(split_for(None, 10, &[1, 2, 3]).unwrap(), 7);
        assert_eq!(split_for(Some(4), 10, &[1]).unwrap(), 4);
        assert!(split_for(None, 3, &[3]).is_err());
    }
}
