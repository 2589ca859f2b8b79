use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::case_io::BUNDLED_CASES;
use crate::dataset::FeatureKind;
use crate::demand::OUParams;
use crate::direct_obs::StrategyKind;
use crate::placement::Heuristic;
use crate::solvers::SolverOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config key `{key}`: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// OU demand parameters; the seed comes from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandConfig {
    pub reversion_rate: f64,
    pub volatility: f64,
    pub long_run_mean: f64,
    pub dt: f64,
}

impl Default for DemandConfig {
    fn default() -> Self {
        let p = OUParams::default();
        Self {
            reversion_rate: p.reversion_rate,
            volatility: p.volatility,
            long_run_mean: p.long_run_mean,
            dt: p.dt,
        }
    }
}

/// `rho = "auto"` or a positive number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoMode {
    Fixed(f64),
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

/// `tau = 0.1` or `tau = [1e-3, 1e-2, 1e-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Single(f64),
    Grid(Vec<f64>),
}

impl TauSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            TauSpec::Single(t) => vec![*t],
            TauSpec::Grid(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Bundled case name (`case14`, `30`, ...) or path to a MATPOWER file.
    pub case: String,
    pub seed: u64,
    pub steps: usize,
    pub demand: DemandConfig,
    pub train_count: usize,
    pub test_count: usize,
    pub feature_kind: FeatureKind,
    pub rho: RhoMode,
    pub tau: TauSpec,
    pub heuristic: Heuristic,
    /// PMU budget; absent means every bus is instrumented and no placement runs.
    pub num_pmus: Option<usize>,
    pub force_reference: bool,
    pub strategy: StrategyKind,
    pub eta: f64,
    /// Whether a PMU at the reference bus also observes its incident lines.
    pub reference_observes_lines: bool,
    pub greedy_warm_start: bool,
    pub solver: SolverOptions,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: "case14".into(),
            seed: 1,
            steps: 8640,
            demand: DemandConfig::default(),
            train_count: 5,
            test_count: 50,
            feature_kind: FeatureKind::Extended,
            rho: RhoMode::Auto(AutoTag::Auto),
            tau: TauSpec::Single(5e-3),
            heuristic: Heuristic::Greedy,
            num_pmus: None,
            force_reference: true,
            strategy: StrategyKind::Indirect,
            eta: 1.0,
            reference_observes_lines: false,
            greedy_warm_start: true,
            solver: SolverOptions::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn ou_params(&self) -> OUParams {
        OUParams {
            reversion_rate: self.demand.reversion_rate,
            volatility: self.demand.volatility,
            long_run_mean: self.demand.long_run_mean,
            dt: self.demand.dt,
            seed: self.seed,
        }
    }

    pub fn is_bundled_case(&self) -> bool {
        crate::case_io::bundled_case_text(&self.case).is_ok()
    }

    /// Checks every constraint serde cannot express.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &'static str, msg: String| Err(ConfigError::Invalid { key, msg });
        if !self.is_bundled_case() && !Path::new(&self.case).is_file() {
            return bad(
                "case",
                format!("`{}` is neither a bundled case ({}) nor a readable file", self.case, BUNDLED_CASES.join(", ")),
            );
        }
        for t in self.tau.values() {
            if !(t > 0.0) || !t.is_finite() {
                return bad("tau", format!("must be positive, got {t}"));
            }
        }
        if self.tau.values().is_empty() {
            return bad("tau", "grid is empty".into());
        }
        if let RhoMode::Fixed(r) = self.rho {
            if !(r > 0.0) || !r.is_finite() {
                return bad("rho", format!("must be positive or \"auto\", got {r}"));
            }
        }
        if self.steps < 4 {
            return bad("steps", format!("need at least 4 steps, got {}", self.steps));
        }
        if self.train_count == 0 || self.test_count == 0 {
            return bad("train_count", "sample counts must be at least 1".into());
        }
        if self.num_pmus == Some(0) {
            return bad("num_pmus", "must be at least 1".into());
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return bad("eta", format!("must be positive, got {}", self.eta));
        }
        let kind_ok = self.feature_kind == self.strategy.feature_kind()
            || (self.feature_kind == FeatureKind::Plain && self.strategy == StrategyKind::Indirect);
        if !kind_ok {
            return bad(
                "feature_kind",
                format!("{:?} does not fit strategy {:?}", self.feature_kind, self.strategy),
            );
        }
        self.ou_params()
            .validate()
            .or_else(|e| bad("demand", e.to_string()))?;
        self.solver.validate().or_else(|e| bad("solver", e.to_string()))
    }

    /// Canonical JSON of everything that determines the results (the output
    /// directory is excluded).
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("out_dir");
        serde_json::to_string(&v).expect("json")
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical_json`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }
}

/// Parses a TOML config, applies defaults and validates it.
pub fn validate_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    validate_config(&text)
}
