//! Core domain types: contexts, arms, actions, observations, step records,
//! and hyperparameters. Everything here is an immutable value type once
//! constructed, so records can be shared freely across parallel trials.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack on the unit-ball check; absorbs rounding from normalization.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// A feature vector in the unit ball (prompt embedding or one-hot code).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    features: Vec<f64>,
}

impl Context {
    /// Builds a context, enforcing the unit-ball invariant.
    pub fn new(features: Vec<f64>) -> Result<Context> {
        if features.is_empty() {
            return Err(Error::Argument("context must have dimension >= 1".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("context has NaN or infinite component".into()));
        }
        let norm = l2_norm(&features);
        if norm > 1.0 + NORM_TOLERANCE {
            return Err(Error::Argument(format!(
                "context norm {norm} exceeds the unit ball; normalize on ingestion"
            )));
        }
        Ok(Context { features })
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.features)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        debug_assert_eq!(self.features.len(), other.len());
        self.features.iter().zip(other).map(|(a, b)| a * b).sum()
    }
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One-hot context: 1 at `category`, 0 elsewhere.
pub fn one_hot_context(category: usize, num_categories: usize) -> Result<Context> {
    if category >= num_categories {
        return Err(Error::Argument(format!(
            "category {category} out of range for {num_categories} categories"
        )));
    }
    let mut features = vec![0.0; num_categories];
    features[category] = 1.0;
    Context::new(features)
}

/// Projects an ingested raw vector into the unit ball: vectors with norm
/// <= 1 (the zero vector included) pass through unchanged, larger vectors
/// are L2-normalized. Idempotent.
pub fn normalize_context(raw: &[f64]) -> Result<Context> {
    if raw.is_empty() {
        return Err(Error::Argument("context must have dimension >= 1".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("context has NaN or infinite component".into()));
    }
    let mut features = raw.to_vec();
    let mut norm = l2_norm(&features);
    // Repeat until the computed norm is actually <= 1 so a second call is a
    // bitwise no-op; rounding can leave the first division a few ulps high.
    while norm > 1.0 {
        for c in &mut features {
            *c /= norm;
        }
        let next = l2_norm(&features);
        if next >= norm {
            break;
        }
        norm = next;
    }
    Context::new(features)
}

/// A candidate model with a fixed per-query cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub id: usize,
    pub cost: f64,
    pub label: String,
}

impl Arm {
    pub fn new(id: usize, cost: f64, label: impl Into<String>) -> Result<Arm> {
        if !cost.is_finite() || cost < 0.0 {
            return Err(Error::Argument(format!(
                "arm {id}: cost must be finite and >= 0, got {cost}"
            )));
        }
        Ok(Arm {
            id,
            cost,
            label: label.into(),
        })
    }
}

/// Checks ids are unique and contiguous from 0.
pub fn validate_arm_set(arms: &[Arm]) -> Result<()> {
    if arms.is_empty() {
        return Err(Error::Argument("arm set must be nonempty".into()));
    }
    for (i, arm) in arms.iter().enumerate() {
        if arm.id != i {
            return Err(Error::Argument(format!(
                "arm ids must be contiguous from 0; position {i} has id {}",
                arm.id
            )));
        }
    }
    Ok(())
}

/// Either terminate the step or pull one arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Null,
    Pull(usize),
}

/// One (context, binary reward) regression sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub context: Context,
    pub reward: bool,
}

/// Per-arm regression data D_a; all contexts share one dimension.
#[derive(Debug, Clone, Default)]
pub struct ObservationSet {
    obs: Vec<Observation>,
}

impl ObservationSet {
    pub fn new() -> ObservationSet {
        ObservationSet { obs: Vec::new() }
    }

    pub fn push(&mut self, obs: Observation) -> Result<()> {
        if let Some(first) = self.obs.first() {
            if first.context.dim() != obs.context.dim() {
                return Err(Error::Argument(format!(
                    "observation dimension {} does not match dataset dimension {}",
                    obs.context.dim(),
                    first.context.dim()
                )));
            }
        }
        self.obs.push(obs);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.obs.iter()
    }

    pub fn dim(&self) -> Option<usize> {
        self.obs.first().map(|o| o.context.dim())
    }
}

/// One pull inside a step.
#[derive(Debug, Clone, PartialEq)]
pub struct PullRecord {
    pub arm_id: usize,
    pub reward: bool,
    pub cost: f64,
}

/// Why a step ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    NullChosen,
    BudgetHit,
    Success,
}

impl TerminatedBy {
    /// Stable string form used in CSV output.
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminatedBy::NullChosen => "null_chosen",
            TerminatedBy::BudgetHit => "budget_hit",
            TerminatedBy::Success => "success",
        }
    }
}

/// One prompt's full interaction: the pulled arms, rewards, costs, and the
/// realized utility.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// 1-based step index within the trial.
    pub step_index: usize,
    pub context: Context,
    pub pulls: Vec<PullRecord>,
    pub terminated_by: TerminatedBy,
    pub utility: f64,
}

impl StepRecord {
    /// True iff some pull returned reward 1.
    pub fn succeeded(&self) -> bool {
        self.pulls.iter().any(|p| p.reward)
    }

    pub fn total_cost(&self) -> f64 {
        self.pulls.iter().map(|p| p.cost).sum()
    }

    /// Checks the record invariants: round budget, success-is-last-pull,
    /// termination tag consistency, and utility recomputation to 1e-12.
    pub fn validate(&self, tau_max: usize, lambda: f64) -> Result<()> {
        if self.pulls.len() > tau_max {
            return Err(Error::State(format!(
                "step {}: {} pulls exceed the round budget {tau_max}",
                self.step_index,
                self.pulls.len()
            )));
        }
        if let Some(pos) = self.pulls.iter().position(|p| p.reward) {
            if pos + 1 != self.pulls.len() {
                return Err(Error::State(format!(
                    "step {}: reward 1 at pull {} is not the last pull",
                    self.step_index,
                    pos + 1
                )));
            }
            if self.terminated_by != TerminatedBy::Success {
                return Err(Error::State(format!(
                    "step {}: succeeded but terminated_by is {}",
                    self.step_index,
                    self.terminated_by.as_str()
                )));
            }
        } else if self.terminated_by == TerminatedBy::Success {
            return Err(Error::State(format!(
                "step {}: terminated_by success without a reward of 1",
                self.step_index
            )));
        }
        let recomputed = step_utility(self, lambda);
        if (recomputed - self.utility).abs() > 1e-12 {
            return Err(Error::State(format!(
                "step {}: stored utility {} differs from recomputed {recomputed}",
                self.step_index, self.utility
            )));
        }
        Ok(())
    }
}

/// Utility of a step: max reward over pulls (0 if none) minus lambda times
/// the summed cost.
pub fn step_utility(record: &StepRecord, lambda: f64) -> f64 {
    utility_of_pulls(&record.pulls, lambda)
}

pub(crate) fn utility_of_pulls(pulls: &[PullRecord], lambda: f64) -> f64 {
    let max_reward = if pulls.iter().any(|p| p.reward) {
        1.0
    } else {
        0.0
    };
    let total_cost: f64 = pulls.iter().map(|p| p.cost).sum();
    max_reward - lambda * total_cost
}

/// Algorithm hyperparameters with the standard defaults.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperParams {
    /// Cost coefficient lambda >= 0.
    pub lambda: f64,
    /// Round budget per step, >= 1.
    pub tau_max: usize,
    /// Exploration pulls per arm, >= 1.
    pub tau_exp: usize,
    /// Exploration-bonus scale; `None` selects sqrt(2 ln(2|A|/delta)).
    pub alpha: Option<f64>,
    /// Failure probability in (0,1).
    pub delta: f64,
    /// RBF kernel bandwidth sigma > 0.
    pub kernel_sigma: f64,
    /// Kernel logistic regression regularizer beta > 0.
    pub kernel_beta: f64,
    /// Optional cap on KLR support size; `None` means unlimited.
    pub max_support: Option<usize>,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            lambda: 0.01,
            tau_max: 5,
            tau_exp: 1,
            alpha: None,
            delta: 0.05,
            kernel_sigma: 3.0,
            kernel_beta: 1.0,
            max_support: None,
        }
    }
}

impl HyperParams {
    /// The bonus scale actually used: the explicit override if set, else
    /// sqrt(2 ln(2|A|/delta)).
    pub fn effective_alpha(&self, num_arms: usize) -> f64 {
        self.alpha
            .unwrap_or_else(|| (2.0 * (2.0 * num_arms as f64 / self.delta).ln()).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.tau_max < 1 {
            return Err(Error::Config("tau_max must be >= 1".into()));
        }
        if self.tau_exp < 1 {
            return Err(Error::Config("tau_exp must be >= 1".into()));
        }
        if let Some(a) = self.alpha {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::Config(format!("alpha must be >= 0, got {a}")));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "delta must lie in (0,1), got {}",
                self.delta
            )));
        }
        if !self.kernel_sigma.is_finite() || self.kernel_sigma <= 0.0 {
            return Err(Error::Config(format!(
                "kernel_sigma must be > 0, got {}",
                self.kernel_sigma
            )));
        }
        if !self.kernel_beta.is_finite() || self.kernel_beta <= 0.0 {
            return Err(Error::Config(format!(
                "kernel_beta must be > 0, got {}",
                self.kernel_beta
            )));
        }
        if let Some(cap) = self.max_support {
            if cap < 1 {
                return Err(Error::Config("max_support must be >= 1".into()));
            }
        }
        Ok(())
    }
}
