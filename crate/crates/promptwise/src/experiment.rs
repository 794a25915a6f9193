//! Experiment runner: executes every (algorithm, trial) pair of a config in
//! a work pool, persists per-trial CSVs and per-algorithm JSON summaries,
//! and emits seed-averaged curve files for plotting.
//!
//! Outputs are deterministic: trial randomness derives only from (root seed,
//! trial index), workers never share state, and files are written in config
//! order after all trials finish. Rerunning an identical config produces
//! byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{running_mean, summarize, MetricsSummary, SeriesStat};
use crate::config::{EnvConfig, EnvKind, ExperimentConfig, SamplerKind};
use crate::env::{
    parse_trace, run_trial, ContextSampler, Environment, SyntheticExpertEnv, SyntheticLogisticEnv,
    TraceEnv, TraceRecord, TrialResult,
};
use crate::error::{Error, Result};
use crate::policies::AlgorithmKind;
use crate::rng::Substreams;

/// Fixed per-pull CSV schema; null steps appear as a single round-0 row with
/// an empty arm_id so every step is on disk.
pub const TRIAL_CSV_HEADER: &str =
    "trial,step,round,arm_id,reward,cost,cum_cost,terminated_by,step_utility";

/// In-memory result for one algorithm after all its trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoReport {
    pub kind: AlgorithmKind,
    pub summary: MetricsSummary,
}

/// Contents of `<algo>/summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub root_seed: u64,
    pub num_trials: usize,
    pub horizon: usize,
    pub config_digest: String,
    pub metrics: MetricsSummary,
}

/// Builds a fresh environment for one trial. Ground-truth draws (logistic
/// theta vectors, trace row order) depend only on the trial substreams, so
/// every algorithm faces the same world in a given trial.
fn build_env(
    cfg: &EnvConfig,
    trace: Option<&[TraceRecord]>,
    substreams: &Substreams,
) -> Result<Box<dyn Environment>> {
    match cfg.kind {
        EnvKind::Logistic => {
            let arms = cfg.build_arms()?;
            let d = cfg
                .d
                .ok_or_else(|| Error::Config("env.d is required for kind = \"logistic\"".into()))?;
            let sampler = match cfg.sampler.unwrap_or(SamplerKind::UnitSphere) {
                SamplerKind::UnitSphere => ContextSampler::UnitSphereUniform { d },
                SamplerKind::OneHot => ContextSampler::OneHotUniform { k: d },
            };
            let env = SyntheticLogisticEnv::generate(
                arms,
                sampler,
                cfg.theta_norm.unwrap_or(1.0),
                cfg.q_floor,
                substreams,
            )?;
            Ok(Box::new(env))
        }
        EnvKind::ExpertT2i => {
            let env = match &cfg.costs {
                Some(costs) => SyntheticExpertEnv::with_costs(costs)?,
                None => SyntheticExpertEnv::new(),
            };
            Ok(Box::new(env))
        }
        EnvKind::Trace => {
            let records =
                trace.ok_or_else(|| Error::State("trace records were not preloaded".into()))?;
            let env = TraceEnv::new(records.to_vec(), cfg.build_arms()?)?;
            Ok(Box::new(env))
        }
    }
}

/// Loads the config's trace file (`None` for synthetic envs), validated
/// against the largest round budget any configured algorithm may use.
pub fn load_trace(config: &ExperimentConfig) -> Result<Option<Vec<TraceRecord>>> {
    if config.env.kind != EnvKind::Trace {
        return Ok(None);
    }
    let path =
        config.env.trace_path.as_ref().ok_or_else(|| {
            Error::Config("env.trace_path is required for kind = \"trace\"".into())
        })?;
    let max_tau = config
        .algorithms
        .iter()
        .map(|a| config.effective_hyper(a).tau_max)
        .max()
        .unwrap_or(1);
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("reading trace {}: {e}", path.display())))?;
    let records = parse_trace(&text, config.env.num_arms(), max_tau)
        .map_err(|e| e.with_context(&format!("trace {}", path.display())))?;
    Ok(Some(records))
}

fn write_trial_csv(path: &Path, trial: &TrialResult, digest: &str) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# config_digest: {digest}\n"));
    out.push_str(TRIAL_CSV_HEADER);
    out.push('\n');
    for step in &trial.steps {
        if step.pulls.is_empty() {
            out.push_str(&format!(
                "{},{},0,,0,0,0,{},{}\n",
                trial.seed,
                step.step_index,
                step.terminated_by.as_str(),
                step.utility
            ));
            continue;
        }
        let mut cum = 0.0;
        for (i, pull) in step.pulls.iter().enumerate() {
            cum += pull.cost;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                trial.seed,
                step.step_index,
                i + 1,
                pull.arm_id,
                u8::from(pull.reward),
                pull.cost,
                cum,
                step.terminated_by.as_str(),
                step.utility
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_curves_csv(path: &Path, digest: &str, reports: &[AlgoReport]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("# config_digest: {digest}\n"));
    out.push_str("algorithm,step,avg_utility,avg_cost,avg_success,cum_regret\n");
    for report in reports {
        let m = &report.summary;
        for t in 0..m.horizon {
            let regret = match &m.per_step_regret {
                Some(stat) => stat.mean[t].to_string(),
                None => String::new(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                report.kind.as_str(),
                t + 1,
                m.per_step_utility.mean[t],
                m.per_step_cost.mean[t],
                m.per_step_success.mean[t],
                regret
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Runs every (algorithm, trial) pair and writes `<algo>/trial_<k>.csv`,
/// `<algo>/summary.json`, and a seed-averaged `curves.csv` under
/// `config.output_dir`. `jobs` sizes a private worker pool; `None` uses the
/// global one. Returns the per-algorithm summaries in config order.
pub fn run_experiment(
    config: &ExperimentConfig,
    digest: &str,
    jobs: Option<usize>,
) -> Result<Vec<AlgoReport>> {
    config.validate()?;
    let trace = load_trace(config)?;

    let tasks: Vec<(usize, usize)> = (0..config.algorithms.len())
        .flat_map(|ai| (0..config.num_trials).map(move |k| (ai, k)))
        .collect();
    let run_one = |&(ai, k): &(usize, usize)| -> Result<TrialResult> {
        let algo = &config.algorithms[ai];
        let hyper = config.effective_hyper(algo);
        let substreams = Substreams::new(config.root_seed, k as u64);
        let mut env = build_env(&config.env, trace.as_deref(), &substreams)?;
        run_trial(
            env.as_mut(),
            algo.name,
            &hyper,
            config.horizon,
            &substreams,
            digest,
        )
        .map_err(|e| e.with_context(&format!("algorithm {}, trial {k}", algo.name.as_str())))
    };
    let outcomes: Vec<Result<TrialResult>> = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("building worker pool: {e}")))?
            .install(|| tasks.par_iter().map(run_one).collect()),
        None => tasks.par_iter().map(run_one).collect(),
    };

    // Group in task order; the first failure (in that order) propagates.
    let mut per_algo: Vec<Vec<TrialResult>> = vec![Vec::new(); config.algorithms.len()];
    for (&(ai, _), outcome) in tasks.iter().zip(outcomes) {
        per_algo[ai].push(outcome?);
    }

    fs::create_dir_all(&config.output_dir)?;
    let mut reports = Vec::with_capacity(config.algorithms.len());
    for (algo, trials) in config.algorithms.iter().zip(&per_algo) {
        let dir = config.output_dir.join(algo.name.as_str());
        fs::create_dir_all(&dir)?;
        for trial in trials {
            write_trial_csv(
                &dir.join(format!("trial_{}.csv", trial.seed)),
                trial,
                digest,
            )?;
        }
        let metrics = summarize(trials)
            .map_err(|e| e.with_context(&format!("algorithm {}", algo.name.as_str())))?;
        let summary = AlgorithmSummary {
            algorithm: algo.name.as_str().to_string(),
            root_seed: config.root_seed,
            num_trials: config.num_trials,
            horizon: config.horizon,
            config_digest: digest.to_string(),
            metrics: metrics.clone(),
        };
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| Error::Data(format!("serializing summary: {e}")))?;
        fs::write(dir.join("summary.json"), json + "\n")?;
        reports.push(AlgoReport {
            kind: algo.name,
            summary: metrics,
        });
    }
    write_curves_csv(&config.output_dir.join("curves.csv"), digest, &reports)?;
    Ok(reports)
}

/// One trial CSV row; field types double as the re-parse check for
/// everything the runner writes.
#[derive(Debug, Deserialize)]
#[allow(dead_code)]
struct TrialCsvRow {
    trial: u64,
    step: usize,
    round: usize,
    arm_id: Option<usize>,
    reward: u8,
    cost: f64,
    cum_cost: f64,
    terminated_by: String,
    step_utility: f64,
}

/// Per-step values recovered from one trial CSV.
struct StepValues {
    utility: Vec<f64>,
    cost: Vec<f64>,
    success: Vec<f64>,
}

/// Reads a trial CSV back into per-step metric values, returning the file's
/// recorded config digest alongside.
fn read_trial_csv(path: &Path) -> Result<(String, StepValues)> {
    let data = |msg: String| Error::Data(format!("{}: {msg}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| data(e.to_string()))?;
    let digest = text
        .lines()
        .next()
        .and_then(|line| line.strip_prefix("# config_digest: "))
        .ok_or_else(|| data("missing config digest comment".into()))?
        .to_string();

    let mut values = StepValues {
        utility: Vec::new(),
        cost: Vec::new(),
        success: Vec::new(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    for row in reader.deserialize::<TrialCsvRow>() {
        let row = row.map_err(|e| data(e.to_string()))?;
        let done = values.utility.len();
        if row.step == done + 1 {
            // First row of a new step; steps must arrive in order.
            values.utility.push(row.step_utility);
            values.cost.push(0.0);
            values.success.push(0.0);
        } else if done == 0 || row.step != done {
            return Err(data(format!(
                "step {} out of order (expected {} or {})",
                row.step,
                done.max(1),
                done + 1
            )));
        }
        let last = values.utility.len() - 1;
        if row.round > 0 {
            values.cost[last] = row.cum_cost;
        }
        if row.terminated_by == "success" {
            values.success[last] = 1.0;
        }
    }
    if values.utility.is_empty() {
        return Err(data("no step rows".into()));
    }
    Ok((digest, values))
}

fn trial_index(file_name: &str) -> Option<usize> {
    file_name
        .strip_prefix("trial_")?
        .strip_suffix(".csv")?
        .parse()
        .ok()
}

/// Re-reads the trial CSVs under `results_dir` and writes one tidy file per
/// metric (`avg_utility.csv`, `avg_cost.csv`, `avg_success.csv`) with columns
/// `algorithm,step,mean,stderr`, where stderr is the sample standard
/// deviation across trials divided by sqrt(num trials). The files share the
/// same (algorithm, step) row order. Returns the written paths.
pub fn emit_plot_data(results_dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(results_dir)
        .map_err(|e| Error::State(format!("results dir {}: {e}", results_dir.display())))?;
    let mut algo_dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(Error::Io)?;
        if entry.path().is_dir() {
            algo_dirs.push((
                entry.file_name().to_string_lossy().into_owned(),
                entry.path(),
            ));
        }
    }
    algo_dirs.sort();

    // (algorithm, per-metric stats) in sorted-name order.
    let mut stats: Vec<(String, SeriesStat, SeriesStat, SeriesStat)> = Vec::new();
    let mut digests: Vec<String> = Vec::new();
    for (name, dir) in &algo_dirs {
        let mut files: Vec<(usize, PathBuf)> = Vec::new();
        for entry in fs::read_dir(dir).map_err(Error::Io)? {
            let entry = entry.map_err(Error::Io)?;
            if let Some(k) = trial_index(&entry.file_name().to_string_lossy()) {
                files.push((k, entry.path()));
            }
        }
        if files.is_empty() {
            continue;
        }
        files.sort();

        let mut utility: Vec<Vec<f64>> = Vec::with_capacity(files.len());
        let mut cost = Vec::with_capacity(files.len());
        let mut success = Vec::with_capacity(files.len());
        for (_, path) in &files {
            let (digest, values) = read_trial_csv(path)?;
            if !digests.contains(&digest) {
                digests.push(digest);
            }
            if let Some(first) = utility.first() {
                if values.utility.len() != first.len() {
                    return Err(Error::Data(format!(
                        "{}: {} steps where sibling trials have {}",
                        path.display(),
                        values.utility.len(),
                        first.len()
                    )));
                }
            }
            utility.push(running_mean(values.utility.into_iter()));
            cost.push(running_mean(values.cost.into_iter()));
            success.push(running_mean(values.success.into_iter()));
        }
        stats.push((
            name.clone(),
            SeriesStat::across(&utility),
            SeriesStat::across(&cost),
            SeriesStat::across(&success),
        ));
    }
    if stats.is_empty() {
        return Err(Error::State(format!(
            "no trial CSVs found under {}",
            results_dir.display()
        )));
    }
    if digests.len() > 1 {
        return Err(Error::Data(format!(
            "mixed config digests under {}: {}",
            results_dir.display(),
            digests.join(", ")
        )));
    }

    let metric = |select: fn(&(String, SeriesStat, SeriesStat, SeriesStat)) -> &SeriesStat| {
        let mut out = String::new();
        out.push_str(&format!("# config_digest: {}\n", digests[0]));
        out.push_str("algorithm,step,mean,stderr\n");
        for entry in &stats {
            let stat = select(entry);
            for t in 0..stat.mean.len() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    entry.0,
                    t + 1,
                    stat.mean[t],
                    stat.stderr[t]
                ));
            }
        }
        out
    };
    let files = [
        ("avg_utility.csv", metric(|e| &e.1)),
        ("avg_cost.csv", metric(|e| &e.2)),
        ("avg_success.csv", metric(|e| &e.3)),
    ];
    let mut written = Vec::new();
    for (name, content) in files {
        let path = results_dir.join(name);
        fs::write(&path, content)?;
        written.push(path);
    }
    Ok(written)
}
