//! Ground-truth analytics: the 3-state MDP value-iteration oracle, closed
//! forms for optimal and truncated utilities, regret curves, theory-parameter
//! calculators, and metric summaries. Everything here is a pure function,
//! so callers may parallelize freely.

use serde::{Deserialize, Serialize};

use crate::domain::Action;
use crate::env::TrialResult;
use crate::error::{Error, Result};
use crate::policies::{argmax_value, oracle_action};

/// Default stopping tolerance for value iteration.
pub const VALUE_ITERATION_TOL: f64 = 1e-12;
/// Default iteration cap; the Bellman update contracts with factor
/// (1 - min q), so this is generous at desk scale.
pub const VALUE_ITERATION_MAX_ITER: usize = 100_000;

/// Output of the small-MDP solver: the stay-state value, the action that
/// attains it, and the number of Bellman updates performed.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpOracleResult {
    pub value_at_zero: f64,
    pub best_action: Action,
    pub iterations: usize,
}

fn validate_instance(probs: &[f64], costs: &[f64], lambda: f64) -> Result<()> {
    if probs.is_empty() || probs.len() != costs.len() {
        return Err(Error::Argument(format!(
            "probs ({}) and costs ({}) must be matching nonempty lists",
            probs.len(),
            costs.len()
        )));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Argument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    for (a, (&q, &c)) in probs.iter().zip(costs).enumerate() {
        if !q.is_finite() || !(q > 0.0 && q <= 1.0) {
            return Err(Error::Argument(format!("arm {a}: q = {q} outside (0, 1]")));
        }
        if !c.is_finite() || c < 0.0 {
            return Err(Error::Argument(format!("arm {a}: cost = {c} must be >= 0")));
        }
    }
    Ok(())
}

/// Solves the per-step interaction as a tiny MDP over states
/// {no-success-yet, success, terminated}. The only unknown is the value of
/// the no-success state, which satisfies the fixed point
/// V(0) = max(0, max_a { q_a - lambda c_a + (1 - q_a) V(0) }).
///
/// This solver is deliberately independent of the closed-form oracle so the
/// two can cross-check each other.
pub fn mdp_value_iteration(
    probs: &[f64],
    costs: &[f64],
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<MdpOracleResult> {
    validate_instance(probs, costs, lambda)?;
    if !tol.is_finite() || tol <= 0.0 {
        return Err(Error::Argument(format!("tol must be > 0, got {tol}")));
    }
    if max_iter == 0 {
        return Err(Error::Argument("max_iter must be >= 1".into()));
    }

    let bellman = |v: f64| -> f64 {
        let best = probs
            .iter()
            .zip(costs)
            .map(|(q, c)| q - lambda * c + (1.0 - q) * v)
            .fold(f64::NEG_INFINITY, f64::max);
        best.max(0.0)
    };

    let mut v = 0.0;
    let mut iterations = 0;
    loop {
        let next = bellman(v);
        iterations += 1;
        let change = (next - v).abs();
        v = next;
        if change < tol {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::Numerical(format!(
                "value iteration did not converge in {max_iter} iterations; last change {change:e}"
            )));
        }
    }

    let net_gains: Vec<f64> = probs
        .iter()
        .zip(costs)
        .map(|(q, c)| q - lambda * c)
        .collect();
    let best_action = if net_gains.iter().all(|&g| g <= 0.0) {
        Action::Null
    } else {
        let q_values: Vec<f64> = probs
            .iter()
            .zip(costs)
            .map(|(q, c)| q - lambda * c + (1.0 - q) * v)
            .collect();
        Action::Pull(argmax_value(&q_values, costs))
    };

    Ok(MdpOracleResult {
        value_at_zero: v,
        best_action,
        iterations,
    })
}

/// Expected per-step utility of the optimal policy: 0 when the oracle stops
/// immediately, else 1 - lambda c_a / q_a for the chosen arm.
pub fn optimal_utility(probs: &[f64], costs: &[f64], lambda: f64) -> Result<f64> {
    match oracle_action(probs, costs, lambda)? {
        Action::Null => Ok(0.0),
        Action::Pull(a) => Ok(1.0 - lambda * costs[a] / probs[a]),
    }
}

/// Expected total cost of the optimal policy: 0 when it stops immediately,
/// else c_a / q_a for the chosen arm (the keep-pulling scheme pays c per
/// geometric trial).
pub fn optimal_expected_cost(probs: &[f64], costs: &[f64], lambda: f64) -> Result<f64> {
    match oracle_action(probs, costs, lambda)? {
        Action::Null => Ok(0.0),
        Action::Pull(a) => Ok(costs[a] / probs[a]),
    }
}

/// Expected utility of pulling one arm until success or a budget of tau_max
/// rounds: 1 - lambda c / q - (1 - q)^tau_max (q - lambda c) / q.
pub fn truncated_utility(q: f64, c: f64, lambda: f64, tau_max: usize) -> Result<f64> {
    if !q.is_finite() || !(q > 0.0 && q <= 1.0) {
        return Err(Error::Argument(format!("q = {q} outside (0, 1]")));
    }
    if !c.is_finite() || c < 0.0 {
        return Err(Error::Argument(format!("cost = {c} must be >= 0")));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::Argument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    if tau_max < 1 {
        return Err(Error::Argument("tau_max must be >= 1".into()));
    }
    let miss_all = (1.0 - q).powi(tau_max as i32);
    Ok(1.0 - lambda * c / q - miss_all * (q - lambda * c) / q)
}

/// Per-step cumulative regret: cumsum over steps of (oracle utility minus
/// realized step utility). Requires the trial to carry oracle utilities,
/// which only ground-truth environments record.
pub fn regret_curve(trial: &TrialResult) -> Result<Vec<f64>> {
    let oracle = trial.per_step_oracle_utility.as_ref().ok_or_else(|| {
        Error::State("trial has no oracle utilities; regret needs a ground-truth env".into())
    })?;
    if oracle.len() != trial.steps.len() {
        return Err(Error::State(format!(
            "oracle series length {} does not match {} steps",
            oracle.len(),
            trial.steps.len()
        )));
    }
    let mut curve = Vec::with_capacity(trial.steps.len());
    let mut total = 0.0;
    for (step, u_star) in trial.steps.iter().zip(oracle) {
        total += u_star - step.utility;
        curve.push(total);
    }
    Ok(curve)
}

/// Theorem-facing constants for a given experiment size. `kappa` is the
/// curvature lower bound inf mu'(x' theta) near the truth; it cannot be
/// estimated from data, so it is an explicit input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryParams {
    pub d: usize,
    pub num_arms: usize,
    pub horizon: usize,
    pub delta: f64,
    pub q0: f64,
    pub kappa: f64,
    pub tau_max: usize,
    /// kappa^{-1} sqrt((d/2) ln(1 + 2 tau_max T / d) + ln(|A|/delta)).
    pub alpha_theorem: f64,
    /// sqrt(2 ln(2|A|/delta)), the standard UCB choice.
    pub alpha_practical: f64,
    /// ceil(ln(d q0 / sqrt(T)) / ln(1 - q0)), clamped to 1 when vacuous.
    pub tau_max_bound: usize,
    /// True when d q0 / sqrt(T) >= 1, which makes the bound's logarithm
    /// nonnegative and the stated bound vacuous.
    pub bound_vacuous: bool,
}

/// Computes both exploration-bonus scales and the round-budget bound.
pub fn theory_params(
    d: usize,
    num_arms: usize,
    horizon: usize,
    delta: f64,
    q0: f64,
    kappa: f64,
    tau_max: usize,
) -> Result<TheoryParams> {
    if d == 0 || num_arms == 0 || horizon == 0 || tau_max == 0 {
        return Err(Error::Argument(
            "d, num_arms, horizon, and tau_max must all be >= 1".into(),
        ));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Argument(format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }
    if !(q0 > 0.0 && q0 < 1.0) {
        return Err(Error::Argument(format!("q0 must lie in (0,1), got {q0}")));
    }
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(Error::Argument(format!("kappa must be > 0, got {kappa}")));
    }

    let df = d as f64;
    let arms = num_arms as f64;
    let t = horizon as f64;
    let alpha_practical = (2.0 * (2.0 * arms / delta).ln()).sqrt();
    let alpha_theorem =
        (df / 2.0 * (1.0 + 2.0 * tau_max as f64 * t / df).ln() + (arms / delta).ln()).sqrt()
            / kappa;

    let log_arg = df * q0 / t.sqrt();
    let (tau_max_bound, bound_vacuous) = if log_arg >= 1.0 {
        (1, true)
    } else {
        let ratio = log_arg.ln() / (1.0 - q0).ln();
        (ratio.ceil() as usize, false)
    };

    Ok(TheoryParams {
        d,
        num_arms,
        horizon,
        delta,
        q0,
        kappa,
        tau_max,
        alpha_theorem,
        alpha_practical,
        tau_max_bound,
        bound_vacuous,
    })
}

/// Mean and standard-error series across trials, one entry per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStat {
    pub mean: Vec<f64>,
    /// Sample standard deviation / sqrt(num trials); 0 for a single trial.
    pub stderr: Vec<f64>,
}

impl SeriesStat {
    /// Column-wise mean and stderr over per-trial series of equal length.
    pub(crate) fn across(series: &[Vec<f64>]) -> SeriesStat {
        let n = series.len();
        let horizon = series[0].len();
        let mut mean = vec![0.0; horizon];
        let mut stderr = vec![0.0; horizon];
        for t in 0..horizon {
            let m = series.iter().map(|s| s[t]).sum::<f64>() / n as f64;
            mean[t] = m;
            if n > 1 {
                let var = series.iter().map(|s| (s[t] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                stderr[t] = (var / n as f64).sqrt();
            }
        }
        SeriesStat { mean, stderr }
    }
}

/// Seed-averaged metrics for one algorithm. The utility/cost/success series
/// are running averages within each trial (matching "average utility by step
/// t" plots); the regret series is the cumulative sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub num_trials: usize,
    pub horizon: usize,
    pub avg_utility: f64,
    pub avg_cost: f64,
    pub avg_success: f64,
    /// Mean final cumulative regret; present iff the trials carry oracle
    /// utilities.
    pub cum_regret: Option<f64>,
    pub per_step_utility: SeriesStat,
    pub per_step_cost: SeriesStat,
    pub per_step_success: SeriesStat,
    pub per_step_regret: Option<SeriesStat>,
}

pub(crate) fn running_mean(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = Vec::new();
    let mut total = 0.0;
    for (i, v) in values.enumerate() {
        total += v;
        out.push(total / (i + 1) as f64);
    }
    out
}

/// Aggregates equal-horizon trials into scalar averages and per-step series.
/// A step counts as successful iff some pull returned reward 1; a Null-only
/// step is a failure.
pub fn summarize(trials: &[TrialResult]) -> Result<MetricsSummary> {
    if trials.is_empty() {
        return Err(Error::Argument("summarize needs at least one trial".into()));
    }
    let horizon = trials[0].steps.len();
    if trials.iter().any(|tr| tr.steps.len() != horizon) {
        return Err(Error::Argument(format!(
            "mixed horizons: expected {horizon} steps in every trial"
        )));
    }
    let with_oracle = trials
        .iter()
        .filter(|tr| tr.per_step_oracle_utility.is_some())
        .count();
    if with_oracle != 0 && with_oracle != trials.len() {
        return Err(Error::Argument(
            "mixed trials: oracle utilities present in some trials but not all".into(),
        ));
    }

    let mut utility_series = Vec::with_capacity(trials.len());
    let mut cost_series = Vec::with_capacity(trials.len());
    let mut success_series = Vec::with_capacity(trials.len());
    let mut regret_series = Vec::new();
    for trial in trials {
        utility_series.push(running_mean(trial.steps.iter().map(|s| s.utility)));
        cost_series.push(running_mean(trial.steps.iter().map(|s| s.total_cost())));
        success_series.push(running_mean(
            trial
                .steps
                .iter()
                .map(|s| f64::from(u8::from(s.succeeded()))),
        ));
        if with_oracle > 0 {
            regret_series.push(regret_curve(trial)?);
        }
    }

    let last = |series: &[Vec<f64>]| -> f64 {
        series.iter().map(|s| s[horizon - 1]).sum::<f64>() / series.len() as f64
    };
    let avg_utility = last(&utility_series);
    let avg_cost = last(&cost_series);
    let avg_success = last(&success_series);
    let (cum_regret, per_step_regret) = if with_oracle > 0 {
        (
            Some(last(&regret_series)),
            Some(SeriesStat::across(&regret_series)),
        )
    } else {
        (None, None)
    };

    Ok(MetricsSummary {
        num_trials: trials.len(),
        horizon,
        avg_utility,
        avg_cost,
        avg_success,
        cum_regret,
        per_step_utility: SeriesStat::across(&utility_series),
        per_step_cost: SeriesStat::across(&cost_series),
        per_step_success: SeriesStat::across(&success_series),
        per_step_regret,
    })
}

/// Simulates pulling one arm with success probability `q` for up to
/// `tau_max` rounds (0 means no cap); returns the mean utility, mean total
/// cost, and their standard errors over `episodes` runs.
fn simulate_single_arm(
    q: f64,
    cost: f64,
    lambda: f64,
    tau_max: usize,
    episodes: usize,
    rng: &mut impl rand::Rng,
) -> (f64, f64, f64, f64) {
    let mut utilities = Vec::with_capacity(episodes);
    let mut costs = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut spent = 0.0;
        let mut rewarded = false;
        let mut round = 0usize;
        while !rewarded && (tau_max == 0 || round < tau_max) {
            spent += cost;
            rewarded = rng.gen_bool(q);
            round += 1;
        }
        utilities.push(f64::from(u8::from(rewarded)) - lambda * spent);
        costs.push(spent);
    }
    let stat = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let (u_mean, u_se) = stat(&utilities);
    let (c_mean, c_se) = stat(&costs);
    (u_mean, u_se, c_mean, c_se)
}

/// Randomized consistency suite pitting the closed forms against their
/// independent oracles: the 3-state MDP fixed point for the optimal action
/// and utility, and Monte Carlo simulation for the truncated utility and
/// the expected-cost identity. Returns one report line per check; any
/// disagreement is a numerical error.
pub fn cross_oracle_suite(seed: u64) -> Result<Vec<String>> {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::new();

    // Closed-form action and utility vs value iteration.
    let instances = 1000;
    let mut max_gap = 0.0f64;
    for i in 0..instances {
        let n = rng.gen_range(1..=6);
        let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..=1.0)).collect();
        let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..=10.0)).collect();
        let lambda = rng.gen_range(0.0..=0.5);
        let mdp = mdp_value_iteration(
            &probs,
            &costs,
            lambda,
            VALUE_ITERATION_TOL,
            VALUE_ITERATION_MAX_ITER,
        )?;
        let action = oracle_action(&probs, &costs, lambda)?;
        if action != mdp.best_action {
            return Err(Error::Numerical(format!(
                "instance {i}: closed form picked {action:?}, value iteration {:?}",
                mdp.best_action
            )));
        }
        let gap = (optimal_utility(&probs, &costs, lambda)? - mdp.value_at_zero).abs();
        if gap > 1e-9 {
            return Err(Error::Numerical(format!(
                "instance {i}: utility gap {gap:e} exceeds 1e-9"
            )));
        }
        max_gap = max_gap.max(gap);
    }
    lines.push(format!(
        "oracle equivalence: {instances} random instances agree (max utility gap {max_gap:.1e})"
    ));

    // Truncated-utility closed form vs Monte Carlo.
    let episodes = 200_000;
    let mut worst_sigmas = 0.0f64;
    for _ in 0..5 {
        let q = rng.gen_range(0.1..=1.0);
        let cost = rng.gen_range(0.1..=5.0);
        let lambda = rng.gen_range(0.0..=0.2);
        let tau_max = rng.gen_range(1..=8);
        let expected = truncated_utility(q, cost, lambda, tau_max)?;
        let (mc, se, _, _) = simulate_single_arm(q, cost, lambda, tau_max, episodes, &mut rng);
        let sigmas = (mc - expected).abs() / se.max(1e-12);
        if sigmas > 4.0 {
            return Err(Error::Numerical(format!(
                "truncated utility (q={q:.3}, c={cost:.3}, lambda={lambda:.3}, tau_max={tau_max}): \
                 Monte Carlo {mc} vs closed form {expected} is {sigmas:.1} standard errors off"
            )));
        }
        worst_sigmas = worst_sigmas.max(sigmas);
    }
    lines.push(format!(
        "truncated utility: 5 Monte Carlo checks within 4 standard errors (worst {worst_sigmas:.2})"
    ));

    // Expected cost of pull-until-success equals c/q at the oracle's arm.
    let mut worst_sigmas = 0.0f64;
    for _ in 0..5 {
        let (probs, costs, lambda, arm) = loop {
            let n = rng.gen_range(1..=6);
            let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..=1.0)).collect();
            let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..=10.0)).collect();
            let lambda = rng.gen_range(0.0..=0.1);
            if let Action::Pull(arm) = oracle_action(&probs, &costs, lambda)? {
                break (probs, costs, lambda, arm);
            }
        };
        let expected = optimal_expected_cost(&probs, &costs, lambda)?;
        let (_, _, mc, se) =
            simulate_single_arm(probs[arm], costs[arm], 0.0, 0, episodes, &mut rng);
        let sigmas = (mc - expected).abs() / se.max(1e-12);
        if sigmas > 4.0 {
            return Err(Error::Numerical(format!(
                "expected cost (q={:.3}, c={:.3}): Monte Carlo {mc} vs c/q {expected} is \
                 {sigmas:.1} standard errors off",
                probs[arm], costs[arm]
            )));
        }
        worst_sigmas = worst_sigmas.max(sigmas);
    }
    lines.push(format!(
        "expected cost: 5 Monte Carlo checks within 4 standard errors (worst {worst_sigmas:.2})"
    ));

    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{one_hot_context, PullRecord, StepRecord, TerminatedBy};
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mdp_worked_values() {
        let r = mdp_value_iteration(&[0.5], &[10.0], 0.01, 1e-12, 100_000).unwrap();
        assert!(
            (r.value_at_zero - 0.8).abs() < 1e-10,
            "V*(0) = {}, want 0.8",
            r.value_at_zero
        );
        assert_eq!(r.best_action, Action::Pull(0));

        let r = mdp_value_iteration(&[0.05], &[10.0], 0.01, 1e-12, 100_000).unwrap();
        assert_eq!(r.value_at_zero, 0.0);
        assert_eq!(r.best_action, Action::Null);
        assert_eq!(r.iterations, 1, "null instance converges immediately");
    }

    #[test]
    fn mdp_rejects_bad_inputs_and_reports_nonconvergence() {
        assert!(matches!(
            mdp_value_iteration(&[0.0], &[1.0], 0.01, 1e-12, 10),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            mdp_value_iteration(&[0.5], &[1.0], 0.01, 0.0, 10),
            Err(Error::Argument(_))
        ));
        // Contraction factor 0.99 cannot reach 1e-12 in two updates.
        let err = mdp_value_iteration(&[0.01], &[1.0], 0.001, 1e-12, 2);
        match err {
            Err(Error::Numerical(msg)) => {
                assert!(msg.contains("last change"), "message was: {msg}")
            }
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn cross_oracle_equivalence_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..=5);
            let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
            let costs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..100.0)).collect();
            let lambda = [0.001, 0.01, 0.1][rng.gen_range(0..3)];
            let mdp = mdp_value_iteration(&probs, &costs, lambda, 1e-14, 100_000).unwrap();
            let action = oracle_action(&probs, &costs, lambda).unwrap();
            let utility = optimal_utility(&probs, &costs, lambda).unwrap();
            assert_eq!(mdp.best_action, action, "probs {probs:?} costs {costs:?}");
            assert!(
                (mdp.value_at_zero - utility).abs() <= 1e-9,
                "V* {} vs closed form {utility}",
                mdp.value_at_zero
            );
        }
    }

    #[test]
    fn optimal_utility_examples() {
        let u = optimal_utility(&[0.5], &[10.0], 0.01).unwrap();
        assert!((u - 0.8).abs() < 1e-15, "u = {u}");
        assert_eq!(optimal_utility(&[0.05], &[10.0], 0.01).unwrap(), 0.0);
        let u = optimal_utility(&[1.0], &[5.0], 0.01).unwrap();
        assert!((u - 0.95).abs() < 1e-15, "u = {u}");
    }

    #[test]
    fn optimal_expected_cost_examples() {
        let c = optimal_expected_cost(&[0.5], &[10.0], 0.01).unwrap();
        assert!((c - 20.0).abs() < 1e-12, "c = {c}");
        assert_eq!(optimal_expected_cost(&[0.05], &[10.0], 0.01).unwrap(), 0.0);
    }

    #[test]
    fn truncated_utility_worked_values() {
        // Deterministic arm: the miss term vanishes for any budget.
        for tau in [1, 3, 10] {
            let u = truncated_utility(1.0, 5.0, 0.01, tau).unwrap();
            assert!((u - 0.95).abs() < 1e-15, "tau {tau}: u = {u}");
        }
        // Budget 1 reduces algebraically to q - lambda c.
        let u = truncated_utility(0.3, 2.0, 0.01, 1).unwrap();
        assert!((u - 0.28).abs() < 1e-15, "u = {u}");
        // 0.98 * (1 - 0.5^5) = 0.949375.
        let u = truncated_utility(0.5, 1.0, 0.01, 5).unwrap();
        assert!((u - 0.949375).abs() < 1e-15, "u = {u}");
        assert!(matches!(
            truncated_utility(0.0, 1.0, 0.01, 5),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            truncated_utility(0.5, 1.0, 0.01, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn truncated_utility_gap_halves_per_budget_increment() {
        // gap(tau) = (1-q)^tau (q - lambda c)/q, so successive gaps shrink
        // by exactly (1-q) = 0.5.
        let untruncated = 1.0 - 0.01 * 1.0 / 0.5;
        let mut prev_gap = untruncated - truncated_utility(0.5, 1.0, 0.01, 1).unwrap();
        for tau in 2..=40 {
            let gap = untruncated - truncated_utility(0.5, 1.0, 0.01, tau).unwrap();
            assert!(
                (gap - 0.5 * prev_gap).abs() < 1e-12,
                "tau {tau}: gap {gap} vs half of {prev_gap}"
            );
            prev_gap = gap;
        }
    }

    #[test]
    fn truncated_utility_matches_monte_carlo() {
        let (q, c, lambda, tau_max) = (0.5, 1.0, 0.01, 5);
        let closed = truncated_utility(q, c, lambda, tau_max).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let episodes = 200_000;
        let mut total = 0.0;
        let mut total_sq = 0.0;
        for _ in 0..episodes {
            let mut cost = 0.0;
            let mut reward = 0.0;
            for _ in 0..tau_max {
                cost += c;
                if rng.gen_range(0.0..1.0) < q {
                    reward = 1.0;
                    break;
                }
            }
            let u = reward - lambda * cost;
            total += u;
            total_sq += u * u;
        }
        let mean = total / episodes as f64;
        let var = (total_sq / episodes as f64 - mean * mean).max(0.0);
        let se = (var / episodes as f64).sqrt();
        assert!(
            (mean - closed).abs() <= 4.0 * se,
            "MC mean {mean} vs closed form {closed} (4 SE = {})",
            4.0 * se
        );
    }

    fn trial_with_utilities(utilities: &[f64], oracle: Option<Vec<f64>>) -> TrialResult {
        let steps = utilities
            .iter()
            .enumerate()
            .map(|(i, &u)| {
                // Encode the target utility via a single success pull whose
                // cost makes 1 - 0.01 cost = u, or a null step for u = 0.
                if u == 0.0 {
                    StepRecord {
                        step_index: i + 1,
                        context: one_hot_context(0, 2).unwrap(),
                        pulls: vec![],
                        terminated_by: TerminatedBy::NullChosen,
                        utility: 0.0,
                    }
                } else {
                    let cost = (1.0 - u) / 0.01;
                    StepRecord {
                        step_index: i + 1,
                        context: one_hot_context(0, 2).unwrap(),
                        pulls: vec![PullRecord {
                            arm_id: 0,
                            reward: true,
                            cost,
                        }],
                        terminated_by: TerminatedBy::Success,
                        utility: 1.0 - 0.01 * cost,
                    }
                }
            })
            .collect();
        TrialResult {
            steps,
            per_step_oracle_utility: oracle,
            seed: 0,
            config_digest: String::new(),
        }
    }

    #[test]
    fn regret_curve_is_cumsum_of_gaps() {
        let trial = trial_with_utilities(&[0.5, 0.0, 1.0], Some(vec![0.8, 0.8, 0.8]));
        let curve = regret_curve(&trial).unwrap();
        let expected = [0.3, 1.1, 0.9];
        assert_eq!(curve.len(), 3);
        for (got, want) in curve.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12, "curve {curve:?}");
        }
    }

    #[test]
    fn regret_curve_requires_oracle_series() {
        let trial = trial_with_utilities(&[0.5], None);
        assert!(matches!(regret_curve(&trial), Err(Error::State(_))));
    }

    #[test]
    fn theory_params_worked_values() {
        let tp = theory_params(5, 5, 10_000, 0.05, 0.5, 0.25, 5).unwrap();
        assert!(
            (tp.alpha_practical - 3.25525).abs() < 1e-4,
            "alpha_practical = {}",
            tp.alpha_practical
        );
        // sqrt(2.5 ln 20001 + ln 100) / 0.25, evaluated by hand.
        assert!(
            (tp.alpha_theorem - 21.67543).abs() < 1e-3,
            "alpha_theorem = {}",
            tp.alpha_theorem
        );
        // ln(0.025)/ln(0.5) = 5.3223 rounds up to 6.
        assert_eq!(tp.tau_max_bound, 6);
        assert!(!tp.bound_vacuous);
    }

    #[test]
    fn theory_params_vacuous_bound_flags() {
        // d q0 / sqrt(T) = 9 >= 1: the stated bound is vacuous.
        let tp = theory_params(100, 5, 100, 0.05, 0.9, 0.25, 5).unwrap();
        assert_eq!(tp.tau_max_bound, 1);
        assert!(tp.bound_vacuous);
    }

    #[test]
    fn theory_params_delta_limit() {
        let tp = theory_params(2, 1, 100, 0.999_999, 0.5, 1.0, 5).unwrap();
        let limit = (2.0 * 2.0_f64.ln()).sqrt();
        assert!(
            (tp.alpha_practical - limit).abs() < 1e-5,
            "alpha_practical = {} vs limit {limit}",
            tp.alpha_practical
        );
        assert!(theory_params(0, 1, 100, 0.05, 0.5, 1.0, 5).is_err());
        assert!(theory_params(2, 1, 100, 1.0, 0.5, 1.0, 5).is_err());
        assert!(theory_params(2, 1, 100, 0.05, 0.5, 0.0, 5).is_err());
    }

    #[test]
    fn summarize_worked_values() {
        let trial = trial_with_utilities(&[1.0, 0.0], None);
        let summary = summarize(&[trial]).unwrap();
        assert_eq!(summary.num_trials, 1);
        assert_eq!(summary.horizon, 2);
        assert!((summary.avg_utility - 0.5).abs() < 1e-15);
        // The null step counts as a failure for avg_success.
        assert!((summary.avg_success - 0.5).abs() < 1e-15);
        assert_eq!(summary.cum_regret, None);
        assert_eq!(summary.per_step_utility.mean, vec![1.0, 0.5]);
        assert_eq!(summary.per_step_success.mean, vec![1.0, 0.5]);
        assert_eq!(summary.per_step_utility.stderr, vec![0.0, 0.0]);
    }

    #[test]
    fn summarize_series_average_across_trials() {
        let a = trial_with_utilities(&[1.0, 1.0], Some(vec![1.0, 1.0]));
        let b = trial_with_utilities(&[0.0, 0.0], Some(vec![1.0, 1.0]));
        let summary = summarize(&[a, b]).unwrap();
        assert!((summary.avg_utility - 0.5).abs() < 1e-15);
        assert_eq!(summary.per_step_utility.mean, vec![0.5, 0.5]);
        // Sample std across {0,1} is sqrt(1/2); stderr divides by sqrt(2).
        let expected_se = (0.5_f64).sqrt() / (2.0_f64).sqrt();
        for se in &summary.per_step_utility.stderr {
            assert!((se - expected_se).abs() < 1e-12, "stderr {se}");
        }
        assert!((summary.cum_regret.unwrap() - 1.0).abs() < 1e-12);
        let regret = summary.per_step_regret.unwrap();
        assert_eq!(regret.mean, vec![0.5, 1.0]);
    }

    #[test]
    fn summarize_rejects_mixed_inputs() {
        let a = trial_with_utilities(&[1.0, 0.0], None);
        let b = trial_with_utilities(&[1.0], None);
        assert!(matches!(summarize(&[a, b]), Err(Error::Argument(_))));

        let a = trial_with_utilities(&[1.0], Some(vec![1.0]));
        let b = trial_with_utilities(&[1.0], None);
        assert!(matches!(summarize(&[a, b]), Err(Error::Argument(_))));
        assert!(matches!(summarize(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn cross_oracle_suite_reports_three_checks() {
        let lines = cross_oracle_suite(0).unwrap();
        assert_eq!(lines.len(), 3, "lines: {lines:?}");
        assert!(lines[0].contains("oracle equivalence"));
        assert!(lines[1].contains("truncated utility"));
        assert!(lines[2].contains("expected cost"));
        // A different seed draws different instances and must still pass.
        cross_oracle_suite(1).unwrap();
    }
}
