//! The CA-CMAB protocol engine and its environments: synthetic logistic arms
//! with known ground truth, a synthetic text-to-image expert grid, and trace
//! replay of pre-recorded model outcomes. One environment instance serves
//! one trial; trials are embarrassingly parallel.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::analysis::optimal_utility;
use crate::domain::{
    utility_of_pulls, validate_arm_set, Action, Arm, Context, HyperParams, PullRecord, StepRecord,
    TerminatedBy,
};
use crate::error::{Error, Result};
use crate::glm::sigmoid;
use crate::policies::{build_policy, exploration_schedule, AlgorithmKind, Policy, ProbsFn};
use crate::rng::Substreams;

/// Cost row of the synthetic text-to-image expert grid.
pub const T2I_COSTS: [f64; 5] = [0.75, 1.37, 1.60, 12.50, 90.00];
/// Number of experts and of prompt types in the grid.
pub const T2I_NUM_TYPES: usize = 5;

/// How contexts are drawn at each step.
#[derive(Debug, Clone, PartialEq)]
pub enum ContextSampler {
    /// Uniform on the unit sphere in d dimensions.
    UnitSphereUniform { d: usize },
    /// Uniform one-hot vector of length k.
    OneHotUniform { k: usize },
    /// Cycles through a fixed list.
    Custom { contexts: Vec<Context> },
}

impl ContextSampler {
    pub fn dim(&self) -> usize {
        match self {
            ContextSampler::UnitSphereUniform { d } => *d,
            ContextSampler::OneHotUniform { k } => *k,
            ContextSampler::Custom { contexts } => contexts.first().map_or(0, |c| c.dim()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ContextSampler::UnitSphereUniform { d } if *d == 0 => {
                Err(Error::Config("unit-sphere sampler needs d >= 1".into()))
            }
            ContextSampler::OneHotUniform { k } if *k == 0 => {
                Err(Error::Config("one-hot sampler needs k >= 1".into()))
            }
            ContextSampler::Custom { contexts } if contexts.is_empty() => {
                Err(Error::Config("custom context list must be nonempty".into()))
            }
            ContextSampler::Custom { contexts } => {
                let d = contexts[0].dim();
                if contexts.iter().any(|c| c.dim() != d) {
                    return Err(Error::Config(
                        "custom contexts must share one dimension".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Draws the step-`t` context: random for the uniform samplers, the
/// (t-1 mod len)-th entry for Custom.
pub fn sample_context(sampler: &ContextSampler, t: u64, rng: &mut ChaCha8Rng) -> Result<Context> {
    sampler.validate()?;
    match sampler {
        ContextSampler::UnitSphereUniform { d } => loop {
            let raw: Vec<f64> = (0..*d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            // A zero draw has probability zero but would divide by zero.
            if norm > 0.0 {
                return Context::new(raw.iter().map(|v| v / norm).collect());
            }
        },
        ContextSampler::OneHotUniform { k } => {
            crate::domain::one_hot_context(rng.gen_range(0..*k), *k)
        }
        ContextSampler::Custom { contexts } => {
            Ok(contexts[(t as usize - 1) % contexts.len()].clone())
        }
    }
}

/// One bandit world: arms with costs, a context distribution, and reward
/// draws. Implementations with known ground truth expose it through
/// `true_probs`/`truth_fn` so oracle utilities and the oracle policy work.
pub trait Environment: Send {
    fn arms(&self) -> &[Arm];
    fn dim(&self) -> usize;
    fn draw_context(&mut self, t: u64, substreams: &Substreams) -> Result<Context>;
    fn draw_reward(
        &mut self,
        t: u64,
        round: u64,
        arm_id: usize,
        ctx: &Context,
        substreams: &Substreams,
    ) -> Result<bool>;
    /// Ground-truth success probabilities at `ctx`, if known.
    fn true_probs(&self, ctx: &Context) -> Option<Vec<f64>>;
    /// Owned closure over the ground truth, suitable for handing to a
    /// policy; `None` for trace replay.
    fn truth_fn(&self) -> Option<ProbsFn>;
}

// ---------------------------------------------------------------------------
// Synthetic logistic environment

/// Arms with q_a(x) = sigmoid(<theta*_a, x>); ground truth is known, so the
/// oracle and regret curves are available.
pub struct SyntheticLogisticEnv {
    arms: Vec<Arm>,
    theta_star: Vec<Vec<f64>>,
    sampler: ContextSampler,
    q_floor: Option<f64>,
}

impl SyntheticLogisticEnv {
    pub fn new(
        arms: Vec<Arm>,
        theta_star: Vec<Vec<f64>>,
        sampler: ContextSampler,
        q_floor: Option<f64>,
    ) -> Result<SyntheticLogisticEnv> {
        validate_arm_set(&arms)?;
        sampler.validate()?;
        if theta_star.len() != arms.len() {
            return Err(Error::Config(format!(
                "{} theta vectors for {} arms",
                theta_star.len(),
                arms.len()
            )));
        }
        let d = sampler.dim();
        for (a, theta) in theta_star.iter().enumerate() {
            if theta.len() != d {
                return Err(Error::Config(format!(
                    "arm {a}: theta dimension {} does not match sampler dimension {d}",
                    theta.len()
                )));
            }
            if theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "arm {a}: theta has a non-finite entry"
                )));
            }
        }
        if let Some(q0) = q_floor {
            if !(q0 > 0.0 && q0 < 1.0) {
                return Err(Error::Config(format!(
                    "q_floor must lie in (0,1), got {q0}"
                )));
            }
        }
        Ok(SyntheticLogisticEnv {
            arms,
            theta_star,
            sampler,
            q_floor,
        })
    }

    /// Draws per-arm ground truth for one trial: i.i.d. standard-normal
    /// entries scaled to `theta_norm`. Deterministic in the substreams, so
    /// every algorithm sees the same world for a given trial.
    pub fn generate(
        arms: Vec<Arm>,
        sampler: ContextSampler,
        theta_norm: f64,
        q_floor: Option<f64>,
        substreams: &Substreams,
    ) -> Result<SyntheticLogisticEnv> {
        if !theta_norm.is_finite() || theta_norm <= 0.0 {
            return Err(Error::Config(format!(
                "theta_norm must be > 0, got {theta_norm}"
            )));
        }
        let d = sampler.dim();
        let mut theta_star = Vec::with_capacity(arms.len());
        for a in 0..arms.len() {
            let mut rng = substreams.theta_star(a as u64);
            let theta = loop {
                let raw: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    break raw
                        .iter()
                        .map(|v| v * theta_norm / norm)
                        .collect::<Vec<f64>>();
                }
            };
            theta_star.push(theta);
        }
        SyntheticLogisticEnv::new(arms, theta_star, sampler, q_floor)
    }

    fn prob(&self, arm_id: usize, ctx: &Context) -> f64 {
        let q = sigmoid(ctx.dot(&self.theta_star[arm_id]));
        match self.q_floor {
            Some(q0) => q.max(q0),
            None => q,
        }
    }

    pub fn theta_star(&self) -> &[Vec<f64>] {
        &self.theta_star
    }
}

impl Environment for SyntheticLogisticEnv {
    fn arms(&self) -> &[Arm] {
        &self.arms
    }

    fn dim(&self) -> usize {
        self.sampler.dim()
    }

    fn draw_context(&mut self, t: u64, substreams: &Substreams) -> Result<Context> {
        sample_context(&self.sampler, t, &mut substreams.context(t))
    }

    fn draw_reward(
        &mut self,
        t: u64,
        round: u64,
        arm_id: usize,
        ctx: &Context,
        substreams: &Substreams,
    ) -> Result<bool> {
        let q = self.prob(arm_id, ctx);
        let mut rng = substreams.reward(t, round);
        Ok(rng.gen_range(0.0..1.0) < q)
    }

    fn true_probs(&self, ctx: &Context) -> Option<Vec<f64>> {
        Some((0..self.arms.len()).map(|a| self.prob(a, ctx)).collect())
    }

    fn truth_fn(&self) -> Option<ProbsFn> {
        let theta = self.theta_star.clone();
        let q_floor = self.q_floor;
        Some(Box::new(move |ctx: &Context| {
            theta
                .iter()
                .map(|th| {
                    let q = sigmoid(ctx.dot(th));
                    q_floor.map_or(q, |q0| q.max(q0))
                })
                .collect()
        }))
    }
}

// ---------------------------------------------------------------------------
// Synthetic text-to-image expert grid

/// Five experts versus five uniform prompt types: expert i answers types
/// 1..=i cleanly (success probability 1) and noisier types at 0.5.
pub struct SyntheticExpertEnv {
    arms: Vec<Arm>,
}

/// Success probability of expert `i` (0-based) on type `j` (0-based).
fn expert_prob(expert: usize, prompt_type: usize) -> f64 {
    if expert >= prompt_type {
        1.0
    } else {
        0.5
    }
}

/// Reads the prompt type as the argmax feature; env-drawn contexts are
/// exact one-hots, so this is exact in practice and total in general.
fn prompt_type_of(ctx: &Context) -> usize {
    let mut best = 0;
    for (i, &v) in ctx.features().iter().enumerate() {
        if v > ctx.features()[best] {
            best = i;
        }
    }
    best
}

impl SyntheticExpertEnv {
    pub fn new() -> SyntheticExpertEnv {
        let arms = T2I_COSTS
            .iter()
            .enumerate()
            .map(|(i, &cost)| Arm::new(i, cost, format!("expert_{}", i + 1)).unwrap())
            .collect();
        SyntheticExpertEnv { arms }
    }

    /// Same grid with a custom cost row (still 5 experts, 5 types).
    pub fn with_costs(costs: &[f64]) -> Result<SyntheticExpertEnv> {
        if costs.len() != T2I_NUM_TYPES {
            return Err(Error::Config(format!(
                "expert grid needs exactly {T2I_NUM_TYPES} costs, got {}",
                costs.len()
            )));
        }
        let arms = costs
            .iter()
            .enumerate()
            .map(|(i, &cost)| Arm::new(i, cost, format!("expert_{}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        Ok(SyntheticExpertEnv { arms })
    }
}

impl Default for SyntheticExpertEnv {
    fn default() -> Self {
        SyntheticExpertEnv::new()
    }
}

impl Environment for SyntheticExpertEnv {
    fn arms(&self) -> &[Arm] {
        &self.arms
    }

    fn dim(&self) -> usize {
        T2I_NUM_TYPES
    }

    fn draw_context(&mut self, t: u64, substreams: &Substreams) -> Result<Context> {
        let mut rng = substreams.context(t);
        crate::domain::one_hot_context(rng.gen_range(0..T2I_NUM_TYPES), T2I_NUM_TYPES)
    }

    fn draw_reward(
        &mut self,
        t: u64,
        round: u64,
        arm_id: usize,
        ctx: &Context,
        substreams: &Substreams,
    ) -> Result<bool> {
        let q = expert_prob(arm_id, prompt_type_of(ctx));
        let mut rng = substreams.reward(t, round);
        Ok(rng.gen_range(0.0..1.0) < q)
    }

    fn true_probs(&self, ctx: &Context) -> Option<Vec<f64>> {
        let j = prompt_type_of(ctx);
        Some((0..self.arms.len()).map(|i| expert_prob(i, j)).collect())
    }

    fn truth_fn(&self) -> Option<ProbsFn> {
        let num_arms = self.arms.len();
        Some(Box::new(move |ctx: &Context| {
            let j = prompt_type_of(ctx);
            (0..num_arms).map(|i| expert_prob(i, j)).collect()
        }))
    }
}

// ---------------------------------------------------------------------------
// Trace replay

/// One validated trace row: a context plus, per arm, the pre-sampled
/// outcome bits for that prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub context: Context,
    /// outcomes[arm_id][n] is the n-th pull's reward for that arm.
    pub outcomes: Vec<Vec<bool>>,
    pub label: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTraceRow {
    context: Vec<f64>,
    outcomes: BTreeMap<String, Vec<u8>>,
    #[serde(default)]
    label: Option<String>,
}

/// Parses line-delimited JSON trace rows and validates them against the arm
/// count and round budget: every row must carry >= tau_max outcome bits for
/// every arm so any policy path is answerable. Contexts are projected into
/// the unit ball on ingestion.
pub fn parse_trace(text: &str, num_arms: usize, tau_max: usize) -> Result<Vec<TraceRecord>> {
    if num_arms == 0 {
        return Err(Error::Argument("num_arms must be >= 1".into()));
    }
    if tau_max == 0 {
        return Err(Error::Argument("tau_max must be >= 1".into()));
    }
    let mut records = Vec::new();
    let mut dim = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTraceRow = serde_json::from_str(line)
            .map_err(|e| Error::Data(format!("trace line {line_no}: {e}")))?;
        let context = crate::domain::normalize_context(&raw.context)
            .map_err(|e| Error::Data(format!("trace line {line_no}: {e}")))?;
        match dim {
            None => dim = Some(context.dim()),
            Some(d) if d != context.dim() => {
                return Err(Error::Data(format!(
                    "trace line {line_no}: context dimension {} differs from {d}",
                    context.dim()
                )));
            }
            _ => {}
        }
        let mut outcomes: Vec<Option<Vec<bool>>> = vec![None; num_arms];
        for (key, bits) in &raw.outcomes {
            let arm_id: usize = key.parse().map_err(|_| {
                Error::Data(format!("trace line {line_no}: non-numeric arm key {key:?}"))
            })?;
            if arm_id >= num_arms {
                return Err(Error::Data(format!(
                    "trace line {line_no}: arm key {arm_id} out of range for {num_arms} arms"
                )));
            }
            if outcomes[arm_id].is_some() {
                return Err(Error::Data(format!(
                    "trace line {line_no}: duplicate outcomes for arm {arm_id}"
                )));
            }
            if bits.len() < tau_max {
                return Err(Error::Data(format!(
                    "trace line {line_no}: arm {arm_id} has {} outcomes, needs >= {tau_max}",
                    bits.len()
                )));
            }
            let mut parsed = Vec::with_capacity(bits.len());
            for &b in bits {
                match b {
                    0 => parsed.push(false),
                    1 => parsed.push(true),
                    other => {
                        return Err(Error::Data(format!(
                            "trace line {line_no}: arm {arm_id} outcome {other} is not 0/1"
                        )))
                    }
                }
            }
            outcomes[arm_id] = Some(parsed);
        }
        let outcomes = outcomes
            .into_iter()
            .enumerate()
            .map(|(a, o)| {
                o.ok_or_else(|| {
                    Error::Data(format!(
                        "trace line {line_no}: missing outcomes for arm {a}"
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(TraceRecord {
            context,
            outcomes,
            label: raw.label,
        });
    }
    Ok(records)
}

/// Replays recorded outcomes: each step picks a uniformly random row, and
/// the n-th pull of arm a within the step returns that row's (a, n) bit
/// regardless of the policy that asked.
pub struct TraceEnv {
    arms: Vec<Arm>,
    records: Vec<TraceRecord>,
    current_row: Option<usize>,
    pull_counts: Vec<usize>,
}

impl TraceEnv {
    pub fn new(records: Vec<TraceRecord>, arms: Vec<Arm>) -> Result<TraceEnv> {
        validate_arm_set(&arms)?;
        if records.is_empty() {
            return Err(Error::Data("trace has no rows".into()));
        }
        let dim = records[0].context.dim();
        for (i, r) in records.iter().enumerate() {
            if r.outcomes.len() != arms.len() {
                return Err(Error::Data(format!(
                    "trace row {}: {} outcome lists for {} arms",
                    i + 1,
                    r.outcomes.len(),
                    arms.len()
                )));
            }
            if r.context.dim() != dim {
                return Err(Error::Data(format!(
                    "trace row {}: context dimension {} differs from {dim}",
                    i + 1,
                    r.context.dim()
                )));
            }
        }
        let num_arms = arms.len();
        Ok(TraceEnv {
            arms,
            records,
            current_row: None,
            pull_counts: vec![0; num_arms],
        })
    }

    pub fn from_path(path: &Path, arms: Vec<Arm>, tau_max: usize) -> Result<TraceEnv> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::from(e).with_context(&format!("reading trace {}", path.display()))
        })?;
        let records = parse_trace(&text, arms.len(), tau_max)?;
        TraceEnv::new(records, arms)
    }

    pub fn num_rows(&self) -> usize {
        self.records.len()
    }
}

impl Environment for TraceEnv {
    fn arms(&self) -> &[Arm] {
        &self.arms
    }

    fn dim(&self) -> usize {
        self.records[0].context.dim()
    }

    fn draw_context(&mut self, t: u64, substreams: &Substreams) -> Result<Context> {
        let mut rng = substreams.trace_row(t);
        let row = rng.gen_range(0..self.records.len());
        self.current_row = Some(row);
        self.pull_counts.iter_mut().for_each(|c| *c = 0);
        Ok(self.records[row].context.clone())
    }

    fn draw_reward(
        &mut self,
        _t: u64,
        _round: u64,
        arm_id: usize,
        _ctx: &Context,
        _substreams: &Substreams,
    ) -> Result<bool> {
        let row = self
            .current_row
            .ok_or_else(|| Error::State("draw_reward before draw_context".into()))?;
        let n = self.pull_counts[arm_id];
        let bit = self.records[row].outcomes[arm_id]
            .get(n)
            .copied()
            .ok_or_else(|| {
                Error::Data(format!(
                    "trace row {} exhausted: arm {arm_id} has only {n} outcomes",
                    row + 1
                ))
            })?;
        self.pull_counts[arm_id] += 1;
        Ok(bit)
    }

    fn true_probs(&self, _ctx: &Context) -> Option<Vec<f64>> {
        None
    }

    fn truth_fn(&self) -> Option<ProbsFn> {
        None
    }
}

// ---------------------------------------------------------------------------
// Protocol engine

/// One trial's full log plus, for ground-truth environments, the per-step
/// oracle utilities that regret curves need.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub steps: Vec<StepRecord>,
    pub per_step_oracle_utility: Option<Vec<f64>>,
    /// Trial index; all randomness derives from (root seed, this index).
    pub seed: u64,
    pub config_digest: String,
}

/// Runs one step of Protocol 1: draw the context, loop rounds until the
/// policy plays Null, a pull succeeds, or the round budget is exhausted.
pub fn run_step(
    env: &mut dyn Environment,
    policy: &mut dyn Policy,
    t: u64,
    hyper: &HyperParams,
    substreams: &Substreams,
) -> Result<StepRecord> {
    let costs: Vec<f64> = env.arms().iter().map(|a| a.cost).collect();
    run_step_inner(env, policy, t, hyper, substreams, &costs, None)
}

#[allow(clippy::too_many_arguments)]
fn run_step_inner(
    env: &mut dyn Environment,
    policy: &mut dyn Policy,
    t: u64,
    hyper: &HyperParams,
    substreams: &Substreams,
    costs: &[f64],
    forced_arm: Option<usize>,
) -> Result<StepRecord> {
    let ctx = env.draw_context(t, substreams)?;
    policy.begin_step(&ctx)?;

    let mut pulls: Vec<PullRecord> = Vec::new();
    let mut rewards: Vec<bool> = Vec::new();
    let terminated_by;

    if let Some(arm_id) = forced_arm {
        // Exploration-phase step: one engine-mandated pull, then move on.
        let reward = env.draw_reward(t, 1, arm_id, &ctx, substreams)?;
        policy.observe(arm_id, &ctx, reward)?;
        pulls.push(PullRecord {
            arm_id,
            reward,
            cost: costs[arm_id],
        });
        terminated_by = if reward {
            TerminatedBy::Success
        } else {
            TerminatedBy::NullChosen
        };
    } else {
        let mut tag = TerminatedBy::BudgetHit;
        for round in 1..=hyper.tau_max {
            let decision = policy.decide_round(round, &rewards)?;
            match decision.action {
                Action::Null => {
                    tag = TerminatedBy::NullChosen;
                    break;
                }
                Action::Pull(arm_id) => {
                    if arm_id >= costs.len() {
                        return Err(Error::State(format!(
                            "policy pulled arm {arm_id}, but only {} arms exist",
                            costs.len()
                        )));
                    }
                    let reward = env.draw_reward(t, round as u64, arm_id, &ctx, substreams)?;
                    policy.observe(arm_id, &ctx, reward)?;
                    pulls.push(PullRecord {
                        arm_id,
                        reward,
                        cost: costs[arm_id],
                    });
                    rewards.push(reward);
                    if reward {
                        tag = TerminatedBy::Success;
                        break;
                    }
                }
            }
        }
        terminated_by = tag;
    }
    policy.end_step()?;

    let utility = utility_of_pulls(&pulls, hyper.lambda);
    let record = StepRecord {
        step_index: t as usize,
        context: ctx,
        pulls,
        terminated_by,
        utility,
    };
    record.validate(hyper.tau_max, hyper.lambda)?;
    Ok(record)
}

/// Runs a full trial: the exploration phase (for algorithms that have one)
/// followed by policy-driven steps, `horizon` steps in total. Ground-truth
/// environments also get per-step oracle utilities recorded.
pub fn run_trial(
    env: &mut dyn Environment,
    kind: AlgorithmKind,
    hyper: &HyperParams,
    horizon: usize,
    substreams: &Substreams,
    config_digest: &str,
) -> Result<TrialResult> {
    hyper.validate()?;
    if horizon == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    let arms = env.arms();
    validate_arm_set(arms)?;
    let costs: Vec<f64> = arms.iter().map(|a| a.cost).collect();

    let schedule = if kind.has_exploration_phase() {
        exploration_schedule(costs.len(), hyper.tau_exp)
    } else {
        Vec::new()
    };
    if schedule.len() > horizon {
        return Err(Error::Config(format!(
            "horizon {horizon} is shorter than the exploration phase ({} arms x tau_exp {})",
            costs.len(),
            hyper.tau_exp
        )));
    }

    let mut policy = build_policy(kind, env.dim(), &costs, hyper, *substreams, env.truth_fn())?;
    let truth = env.truth_fn();
    let mut oracle_utilities = truth.as_ref().map(|_| Vec::with_capacity(horizon));

    let mut steps = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let forced = schedule.get(t - 1).copied();
        let record = run_step_inner(
            env,
            policy.as_mut(),
            t as u64,
            hyper,
            substreams,
            &costs,
            forced,
        )
        .map_err(|e| e.with_context(&format!("step {t}")))?;
        if let (Some(list), Some(truth_fn)) = (oracle_utilities.as_mut(), truth.as_ref()) {
            let probs = truth_fn(&record.context);
            list.push(optimal_utility(&probs, &costs, hyper.lambda)?);
        }
        steps.push(record);
    }

    Ok(TrialResult {
        steps,
        per_step_oracle_utility: oracle_utilities,
        seed: substreams.trial(),
        config_digest: config_digest.to_string(),
    })
}
