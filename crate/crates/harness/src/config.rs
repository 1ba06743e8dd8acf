//! Experiment configuration, read from TOML.
//!
//! Every table rejects unknown keys, so a misspelled option is an error
//! rather than a silently applied default. See `docs/config.md` for the
//! schema and `configs/` for worked examples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub algorithm: AlgorithmConfig,
    pub experiment: ExperimentBlock,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Lgssm {
        phi: f64,
        sigma_v: f64,
        sigma_w: f64,
        observations: ObservationSource,
    },
    Discrete {
        /// Row-stochastic `K x K` transition matrix.
        trans: Vec<Vec<f64>>,
        init: Vec<f64>,
        /// Gaussian emission means per state.
        means: Vec<f64>,
        emission_sd: f64,
        observations: ObservationSource,
    },
    CompactRw {
        kappa: f64,
        sigma_obs: f64,
        observations: ObservationSource,
    },
}

impl ModelConfig {
    pub fn observations(&self) -> &ObservationSource {
        match self {
            ModelConfig::Lgssm { observations, .. }
            | ModelConfig::Discrete { observations, .. }
            | ModelConfig::CompactRw { observations, .. } => observations,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelConfig::Lgssm { .. } => "lgssm",
            ModelConfig::Discrete { .. } => "discrete",
            ModelConfig::CompactRw { .. } => "compact_rw",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservationSource {
    /// `y_0..y_T` given inline.
    Values(Vec<f64>),
    /// Simulated from the model itself. `length` is `T + 1`.
    Simulate { seed: u64, length: usize },
}

impl ObservationSource {
    pub fn len(&self) -> usize {
        match self {
            ObservationSource::Values(v) => v.len(),
            ObservationSource::Simulate { length, .. } => *length,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Bootstrap,
    FullyAdapted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmootherKind {
    Ffbsm,
    FfbsiDirect,
    FfbsiLinear,
    Genealogy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    #[serde(default = "default_filter")]
    pub filter: FilterKind,
    pub smoother: SmootherKind,
    pub n_particles: usize,
    /// Backward paths for the FFBSi samplers; defaults to `n_particles`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    /// Trial cap before the exact-row fallback; defaults to
    /// `100 * ceil(sigma_plus / sigma_minus)` or `10^4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_trials_per_draw: Option<u64>,
}

fn default_filter() -> FilterKind {
    FilterKind::Bootstrap
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    OracleCompare,
    Scaling,
    TimeUniform,
    Bench,
    RbCheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::OracleCompare => "oracle_compare",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::TimeUniform => "time_uniform",
            ExperimentKind::Bench => "bench",
            ExperimentKind::RbCheck => "rb_check",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetFunction {
    Identity,
    /// `1{x > c}`.
    IndicatorThreshold { c: f64 },
    /// `x^p`.
    Power { p: i32 },
}

impl TargetFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TargetFunction::Identity => x,
            TargetFunction::IndicatorThreshold { c } => {
                if x > c {
                    1.0
                } else {
                    0.0
                }
            }
            TargetFunction::Power { p } => x.powi(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub kind: ExperimentKind,
    pub seeds: Vec<u64>,
    /// Particle counts for `scaling` and `bench`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep_n: Vec<usize>,
    /// Horizons `T` for `time_uniform`; each run uses `y_0..y_T`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep_t: Vec<usize>,
    #[serde(default = "default_times")]
    pub target_times: Vec<usize>,
    #[serde(default = "default_h")]
    pub h: TargetFunction,
    /// Grid size of the quadrature oracle for `compact_rw`.
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    /// Fill the `wall_ms` column. Off by default so reports stay byte-stable.
    #[serde(default)]
    pub timing: bool,
}

fn default_times() -> Vec<usize> {
    vec![0]
}

fn default_h() -> TargetFunction {
    TargetFunction::Identity
}

fn default_grid() -> usize {
    1024
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Horizon `T` of the largest run the config asks for.
    pub fn max_horizon(&self) -> usize {
        let t = self.model.observations().len().saturating_sub(1);
        self.experiment.sweep_t.iter().copied().fold(t, usize::max)
    }

    pub fn n_paths(&self, n_particles: usize) -> usize {
        self.algorithm.n_paths.unwrap_or(n_particles)
    }

    /// Checks cross-field requirements, naming the offending field.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |field: &str, msg: String| Err(HarnessError::field(field, msg));
        self.validate_model()?;

        let alg = &self.algorithm;
        if alg.n_particles == 0 {
            return bad("algorithm.n_particles", "must be positive".into());
        }
        if alg.n_paths == Some(0) {
            return bad("algorithm.n_paths", "must be positive".into());
        }
        if alg.max_trials_per_draw == Some(0) {
            return bad("algorithm.max_trials_per_draw", "must be positive".into());
        }
        if alg.filter == FilterKind::FullyAdapted && matches!(self.model, ModelConfig::CompactRw { .. }) {
            return bad(
                "algorithm.filter",
                "fully_adapted has no closed form for compact_rw; use bootstrap".into(),
            );
        }

        let exp = &self.experiment;
        if exp.seeds.is_empty() {
            return bad("experiment.seeds", "need at least one seed".into());
        }
        if let TargetFunction::Power { p } = exp.h {
            if p < 0 {
                return bad("experiment.h.p", format!("{p} must be nonnegative"));
            }
        }
        if exp.target_times.is_empty() {
            return bad("experiment.target_times", "need at least one time index".into());
        }
        if exp.grid_size < pfsmooth::oracles::MIN_GRID_SIZE {
            return bad(
                "experiment.grid_size",
                format!("must be at least {}", pfsmooth::oracles::MIN_GRID_SIZE),
            );
        }
        match exp.kind {
            ExperimentKind::Scaling | ExperimentKind::Bench if exp.sweep_n.is_empty() => {
                return bad("experiment.sweep_n", format!("{} needs a particle sweep", exp.kind.name()));
            }
            ExperimentKind::TimeUniform if exp.sweep_t.is_empty() => {
                return bad("experiment.sweep_t", "time_uniform needs a horizon sweep".into());
            }
            ExperimentKind::RbCheck if alg.smoother == SmootherKind::Ffbsm || alg.smoother == SmootherKind::Genealogy => {
                return bad(
                    "algorithm.smoother",
                    "rb_check compares a backward sampler; use ffbsi_direct or ffbsi_linear".into(),
                );
            }
            ExperimentKind::Bench if alg.smoother != SmootherKind::FfbsiLinear && alg.smoother != SmootherKind::FfbsiDirect => {
                return bad("algorithm.smoother", "bench records sampler counters; use an ffbsi smoother".into());
            }
            _ => {}
        }
        if exp.sweep_n.contains(&0) {
            return bad("experiment.sweep_n", "particle counts must be positive".into());
        }
        let obs_len = self.model.observations().len();
        if let Some(&t) = exp.sweep_t.iter().find(|&&t| t + 1 > obs_len) {
            return bad(
                "experiment.sweep_t",
                format!("T = {t} needs {} observations, the model has {obs_len}", t + 1),
            );
        }
        let min_t = if exp.kind == ExperimentKind::TimeUniform {
            exp.sweep_t.iter().copied().min().unwrap_or(0)
        } else {
            obs_len - 1
        };
        if let Some(&s) = exp.target_times.iter().find(|&&s| s > min_t) {
            return bad("experiment.target_times", format!("s = {s} exceeds the horizon T = {min_t}"));
        }
        Ok(())
    }

    fn validate_model(&self) -> Result<(), HarnessError> {
        let bad = |field: &str, msg: String| Err(HarnessError::field(field, msg));
        match self.model.observations() {
            ObservationSource::Values(v) if v.is_empty() => {
                return bad("model.observations.values", "need at least one observation".into())
            }
            ObservationSource::Values(v) if v.iter().any(|y| !y.is_finite()) => {
                return bad("model.observations.values", "observations must be finite".into())
            }
            ObservationSource::Simulate { length: 0, .. } => {
                return bad("model.observations.simulate.length", "must be positive".into())
            }
            _ => {}
        }
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(HarnessError::field(field, format!("{v} must be positive and finite")))
            }
        };
        match &self.model {
            ModelConfig::Lgssm { phi, sigma_v, sigma_w, .. } => {
                positive("model.sigma_v", *sigma_v)?;
                positive("model.sigma_w", *sigma_w)?;
                if !phi.is_finite() {
                    return bad("model.phi", "must be finite".into());
                }
            }
            ModelConfig::Discrete { trans, init, means, emission_sd, .. } => {
                positive("model.emission_sd", *emission_sd)?;
                let k = init.len();
                if k == 0 {
                    return bad("model.init", "need at least one state".into());
                }
                if trans.len() != k || trans.iter().any(|r| r.len() != k) {
                    return bad("model.trans", format!("must be {k} x {k} to match model.init"));
                }
                if means.len() != k {
                    return bad("model.means", format!("need {k} entries to match model.init"));
                }
            }
            ModelConfig::CompactRw { kappa, sigma_obs, .. } => {
                positive("model.kappa", *kappa)?;
                positive("model.sigma_obs", *sigma_obs)?;
            }
        }
        Ok(())
    }
}
