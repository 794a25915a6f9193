//! Experiment configuration: strict TOML parsing with unknown-key rejection,
//! HyperParams defaults, and per-algorithm overrides. Silent typos in
//! hyperparameter names would invalidate comparisons, so every table is
//! closed.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::domain::{Arm, HyperParams};
use crate::error::{Error, Result};
use crate::policies::AlgorithmKind;

/// Top-level experiment description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Steps per trial, exploration phase included.
    pub horizon: usize,
    pub num_trials: usize,
    pub root_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub env: EnvConfig,
    /// Global hyperparameter overrides on top of the defaults.
    #[serde(default)]
    pub hyper: HyperOverrides,
    pub algorithms: Vec<AlgorithmConfig>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub name: AlgorithmKind,
    /// Per-algorithm overrides, applied after the global ones.
    #[serde(default)]
    pub hyper: HyperOverrides,
}

/// Optional hyperparameter overrides; unset fields keep the incoming value.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    pub lambda: Option<f64>,
    pub tau_max: Option<usize>,
    pub tau_exp: Option<usize>,
    pub alpha: Option<f64>,
    pub delta: Option<f64>,
    pub kernel_sigma: Option<f64>,
    pub kernel_beta: Option<f64>,
    pub max_support: Option<usize>,
}

impl HyperOverrides {
    pub fn apply(&self, base: &HyperParams) -> HyperParams {
        HyperParams {
            lambda: self.lambda.unwrap_or(base.lambda),
            tau_max: self.tau_max.unwrap_or(base.tau_max),
            tau_exp: self.tau_exp.unwrap_or(base.tau_exp),
            alpha: self.alpha.or(base.alpha),
            delta: self.delta.unwrap_or(base.delta),
            kernel_sigma: self.kernel_sigma.unwrap_or(base.kernel_sigma),
            kernel_beta: self.kernel_beta.unwrap_or(base.kernel_beta),
            max_support: self.max_support.or(base.max_support),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Logistic,
    ExpertT2i,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    UnitSphere,
    OneHot,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub cost: f64,
    pub label: Option<String>,
}

/// Environment selection. The struct is flat so unknown keys are rejected
/// with precise messages; `validate` enforces which keys each kind uses.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    /// Context dimension (logistic only).
    pub d: Option<usize>,
    /// Arm roster (logistic and trace; the expert grid has a fixed roster).
    #[serde(default)]
    pub arms: Vec<ArmConfig>,
    /// Context distribution (logistic only); defaults to the unit sphere.
    pub sampler: Option<SamplerKind>,
    /// Norm of each generated ground-truth parameter (logistic only).
    pub theta_norm: Option<f64>,
    /// Minimum success probability floor (logistic only).
    pub q_floor: Option<f64>,
    /// Trace file (trace only).
    pub trace_path: Option<PathBuf>,
    /// Cost-row override for the expert grid (expert_t2i only).
    pub costs: Option<Vec<f64>>,
}

impl EnvConfig {
    fn reject_foreign_keys(&self) -> Result<()> {
        let mut foreign: Vec<&str> = Vec::new();
        match self.kind {
            EnvKind::Logistic => {
                if self.trace_path.is_some() {
                    foreign.push("env.trace_path");
                }
                if self.costs.is_some() {
                    foreign.push("env.costs");
                }
            }
            EnvKind::ExpertT2i => {
                if self.d.is_some() {
                    foreign.push("env.d");
                }
                if !self.arms.is_empty() {
                    foreign.push("env.arms");
                }
                if self.sampler.is_some() {
                    foreign.push("env.sampler");
                }
                if self.theta_norm.is_some() {
                    foreign.push("env.theta_norm");
                }
                if self.q_floor.is_some() {
                    foreign.push("env.q_floor");
                }
                if self.trace_path.is_some() {
                    foreign.push("env.trace_path");
                }
            }
            EnvKind::Trace => {
                if self.d.is_some() {
                    foreign.push("env.d");
                }
                if self.sampler.is_some() {
                    foreign.push("env.sampler");
                }
                if self.theta_norm.is_some() {
                    foreign.push("env.theta_norm");
                }
                if self.q_floor.is_some() {
                    foreign.push("env.q_floor");
                }
                if self.costs.is_some() {
                    foreign.push("env.costs");
                }
            }
        }
        if foreign.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "keys not valid for this env kind: {}",
                foreign.join(", ")
            )))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reject_foreign_keys()?;
        match self.kind {
            EnvKind::Logistic => {
                let d = self.d.ok_or_else(|| {
                    Error::Config("env.d is required for kind = \"logistic\"".into())
                })?;
                if d == 0 {
                    return Err(Error::Config("env.d must be >= 1".into()));
                }
                if self.arms.is_empty() {
                    return Err(Error::Config(
                        "env.arms must list at least one arm for kind = \"logistic\"".into(),
                    ));
                }
                if let Some(norm) = self.theta_norm {
                    if !norm.is_finite() || norm <= 0.0 {
                        return Err(Error::Config(format!(
                            "env.theta_norm must be > 0, got {norm}"
                        )));
                    }
                }
                if let Some(q0) = self.q_floor {
                    if !(q0 > 0.0 && q0 < 1.0) {
                        return Err(Error::Config(format!(
                            "env.q_floor must lie in (0,1), got {q0}"
                        )));
                    }
                }
            }
            EnvKind::ExpertT2i => {
                if let Some(costs) = &self.costs {
                    if costs.len() != crate::env::T2I_NUM_TYPES {
                        return Err(Error::Config(format!(
                            "env.costs must list exactly {} costs, got {}",
                            crate::env::T2I_NUM_TYPES,
                            costs.len()
                        )));
                    }
                }
            }
            EnvKind::Trace => {
                if self.trace_path.is_none() {
                    return Err(Error::Config(
                        "env.trace_path is required for kind = \"trace\"".into(),
                    ));
                }
                if self.arms.is_empty() {
                    return Err(Error::Config(
                        "env.arms must list at least one arm for kind = \"trace\"".into(),
                    ));
                }
            }
        }
        for (i, arm) in self.arms.iter().enumerate() {
            if !arm.cost.is_finite() || arm.cost < 0.0 {
                return Err(Error::Config(format!(
                    "env.arms[{i}].cost must be finite and >= 0, got {}",
                    arm.cost
                )));
            }
        }
        Ok(())
    }

    /// The configured roster as domain arms; the expert grid supplies its
    /// own fixed roster elsewhere.
    pub fn build_arms(&self) -> Result<Vec<Arm>> {
        self.arms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let label = a.label.clone().unwrap_or_else(|| format!("arm_{i}"));
                Arm::new(i, a.cost, label)
            })
            .collect()
    }

    /// Number of arms the environment will expose.
    pub fn num_arms(&self) -> usize {
        match self.kind {
            EnvKind::ExpertT2i => crate::env::T2I_NUM_TYPES,
            _ => self.arms.len(),
        }
    }

    /// Whether ground-truth success probabilities exist (needed by the
    /// oracle algorithm and by regret curves).
    pub fn has_ground_truth(&self) -> bool {
        self.kind != EnvKind::Trace
    }
}

impl ExperimentConfig {
    /// Effective hyperparameters for one configured algorithm: defaults,
    /// then global overrides, then per-algorithm overrides.
    pub fn effective_hyper(&self, algo: &AlgorithmConfig) -> HyperParams {
        algo.hyper.apply(&self.hyper.apply(&HyperParams::default()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.num_trials == 0 {
            return Err(Error::Config("num_trials must be >= 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config(
                "algorithms must list at least one entry".into(),
            ));
        }
        self.env.validate()?;
        let num_arms = self.env.num_arms();
        let mut seen: Vec<AlgorithmKind> = Vec::new();
        for algo in &self.algorithms {
            if seen.contains(&algo.name) {
                return Err(Error::Config(format!(
                    "algorithm {} is listed twice; outputs would collide",
                    algo.name.as_str()
                )));
            }
            seen.push(algo.name);
            let hyper = self.effective_hyper(algo);
            hyper
                .validate()
                .map_err(|e| e.with_context(&format!("algorithm {}", algo.name.as_str())))?;
            if algo.name.has_exploration_phase() {
                let needed = num_arms * hyper.tau_exp;
                if self.horizon < needed {
                    return Err(Error::Config(format!(
                        "algorithm {}: horizon {} is shorter than the exploration phase \
                         ({num_arms} arms x tau_exp {})",
                        algo.name.as_str(),
                        self.horizon,
                        hyper.tau_exp
                    )));
                }
            }
            if algo.name == AlgorithmKind::Oracle && !self.env.has_ground_truth() {
                return Err(Error::Config(
                    "algorithm oracle needs a ground-truth env; trace replay has none".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Parses and fully validates a config from TOML text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Reads and parses a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("reading config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Provenance digest of the raw config text, recorded in every output.
pub fn config_digest(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
