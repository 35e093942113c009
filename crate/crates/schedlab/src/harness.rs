//! Experiment orchestration: warm-up under random scheduling, model
//! training from the warm-up log, measured runs against a
//! common-random-numbers random baseline, arrival-rate sweeps, and
//! round-based retraining.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::cluster::{kmeans_fit, CentroidSet};
use crate::config::{config_pairs, default_hyper, default_workload};
use crate::error::{Error, Result};
use crate::feature::abort_vector;
use crate::model::{
    build_balanced_training_set, train, AbortModel, Hyper, LogKind, LogRecord,
};
use crate::sched::{
    BalanceMode, BalancedVectorPolicy, BfsPolicy, ClusterPolicy, Policy, PolicyKind, RandomPolicy,
    SearchPolicy,
};
use crate::sim::{run, DecisionRecord, RunOutput, SimConfig};
use crate::workload::{Generator, Micros, WorkloadConfig, WorkloadKind};
use crate::{derive_seed, rng_from_seed};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub workload: WorkloadConfig,
    pub policy: PolicyKind,
    pub n_queues: usize,
    pub k_bits: u32,
    pub warmup_us: Micros,
    pub measure_us: Micros,
    pub round_us: Micros,
    pub repeats: u32,
    pub train_sample: usize,
    pub hyper: Hyper,
    pub theta: f64,
    pub balance_mode: BalanceMode,
    pub rt_window: usize,
    pub idle_quantum_us: Micros,
    pub backlog_cap: usize,
    pub kmeans_max_iters: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Desk-scale defaults: 5 virtual s warm-up, 30 s measurement,
    /// 20 s rounds, 3 repeats, 8 queues, 1024-bit vectors.
    pub fn defaults(kind: WorkloadKind) -> Self {
        ExperimentConfig {
            workload: default_workload(kind),
            policy: PolicyKind::Random,
            n_queues: 8,
            k_bits: 1024,
            warmup_us: 5_000_000,
            measure_us: 30_000_000,
            round_us: 20_000_000,
            repeats: 3,
            train_sample: 10_000,
            hyper: default_hyper(),
            theta: 0.5,
            balance_mode: BalanceMode::Reroute,
            rt_window: 1000,
            idle_quantum_us: 10,
            backlog_cap: 2_000_000,
            kmeans_max_iters: 100,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.warmup_us == 0 || self.measure_us == 0 || self.round_us == 0 {
            return Err(Error::Config("durations must be positive".into()));
        }
        if self.n_queues == 0 {
            return Err(Error::Config("need at least one queue".into()));
        }
        if self.k_bits == 0 {
            return Err(Error::Config("k_bits must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config("theta must lie in [0, 1]".into()));
        }
        let mut wl = self.workload.clone();
        wl.rng_seed = 0;
        Generator::new(wl).map(|_| ())
    }

    fn sim_config(&self, log_enabled: bool, collect_decisions: bool, log_seed: u64) -> SimConfig {
        SimConfig {
            n_queues: self.n_queues,
            k_bits: self.k_bits,
            rt_window: self.rt_window,
            idle_quantum_us: self.idle_quantum_us,
            backlog_cap: self.backlog_cap,
            log_enabled,
            collect_decisions,
            collect_events: false,
            log_seed,
        }
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RunStats {
    pub repeat: u32,
    pub seed: u64,
    pub tps: f64,
    pub relative_tps: f64,
    pub baseline_tps: f64,
    pub abort_rate: f64,
    pub committed: u64,
    pub aborts: u64,
    pub attempts: u64,
    pub response_mean_ms: f64,
    pub response_std_ms: f64,
    pub response_p95_ms: f64,
    pub idle_std_ms: f64,
    pub partition_quality: f64,
    pub saturated: bool,
    pub model_fallback: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub workload: String,
    pub policy: String,
    pub config: BTreeMap<String, String>,
    pub per_repeat: Vec<RunStats>,
    pub mean_tps: f64,
    pub mean_relative_tps: f64,
    pub mean_abort_rate: f64,
    pub mean_response_ms: f64,
    pub mean_idle_std_ms: f64,
    pub mean_partition_quality: f64,
    pub saturated: bool,
    pub model_fallback: bool,
}

impl Report {
    fn from_repeats(cfg: &ExperimentConfig, per_repeat: Vec<RunStats>) -> Report {
        let n = per_repeat.len() as f64;
        let mean = |f: fn(&RunStats) -> f64| per_repeat.iter().map(f).sum::<f64>() / n;
        Report {
            workload: cfg.workload.kind.name().to_string(),
            policy: cfg.policy.name().to_string(),
            config: config_pairs(cfg).into_iter().collect(),
            mean_tps: mean(|s| s.tps),
            mean_relative_tps: mean(|s| s.relative_tps),
            mean_abort_rate: mean(|s| s.abort_rate),
            mean_response_ms: mean(|s| s.response_mean_ms),
            mean_idle_std_ms: mean(|s| s.idle_std_ms),
            mean_partition_quality: mean(|s| s.partition_quality),
            saturated: per_repeat.iter().any(|s| s.saturated),
            model_fallback: per_repeat.iter().any(|s| s.model_fallback),
            per_repeat,
        }
    }
}

// ---------------------------------------------------------------------------
// Training from a log
// ---------------------------------------------------------------------------

/// Uniform sample of raw log records without replacement (the rounds
/// protocol samples records, not examples).
pub fn sample_records(log: &[LogRecord], amount: usize, seed: u64) -> Vec<LogRecord> {
    if log.is_empty() {
        return Vec::new();
    }
    let mut rng = rng_from_seed(seed);
    let mut idx = rand::seq::index::sample(&mut rng, log.len(), amount.min(log.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| log[i].clone()).collect()
}

#[derive(Clone, Default)]
pub struct Artifacts {
    pub model: Option<Arc<AbortModel>>,
    pub centroids: Option<Arc<CentroidSet>>,
}

/// Train whatever the policy needs from an execution log. Returns the
/// artifacts and whether a fallback to random is required.
pub fn train_artifacts(
    cfg: &ExperimentConfig,
    policy: PolicyKind,
    log: &[LogRecord],
    seed: u64,
) -> (Artifacts, bool) {
    let mut artifacts = Artifacts::default();
    let mut fallback = false;
    if policy.needs_model() {
        let mut rng = rng_from_seed(derive_seed(seed, "train-sample"));
        let trained = build_balanced_training_set(log, cfg.train_sample, &mut rng).and_then(|ex| {
            let hyper = Hyper { seed: derive_seed(seed, "train-sgd"), ..cfg.hyper };
            train(&ex, hyper)
        });
        match trained {
            Ok(m) => artifacts.model = Some(Arc::new(m)),
            Err(_) => fallback = true,
        }
    }
    if policy.needs_centroids() {
        match fit_centroids_from_log(cfg, log, seed) {
            Ok(cs) => artifacts.centroids = Some(Arc::new(cs)),
            Err(_) => fallback = true,
        }
    }
    (artifacts, fallback)
}

/// Fit queue centroids from the abort records of a log (capped at the
/// training sample size).
pub fn fit_centroids_from_log(
    cfg: &ExperimentConfig,
    log: &[LogRecord],
    seed: u64,
) -> Result<CentroidSet> {
    let aborts: Vec<&LogRecord> = log.iter().filter(|r| r.kind == LogKind::Abort).collect();
    if aborts.is_empty() {
        return Err(Error::NoTrainingData("no abort records in log".into()));
    }
    let mut rng = rng_from_seed(derive_seed(seed, "kmeans-sample"));
    let take = cfg.train_sample.min(aborts.len());
    let idx = rand::seq::index::sample(&mut rng, aborts.len(), take);
    let vectors: Vec<_> = idx
        .iter()
        .map(|i| abort_vector(&aborts[i].subject_features, &aborts[i].other_features))
        .collect::<Result<_>>()?;
    let mut fit_rng = rng_from_seed(derive_seed(seed, "kmeans-fit"));
    kmeans_fit(&vectors, cfg.n_queues, &mut fit_rng, cfg.kmeans_max_iters)
}

fn make_policy(
    cfg: &ExperimentConfig,
    kind: PolicyKind,
    artifacts: &Artifacts,
    seed: u64,
) -> Result<Box<dyn Policy>> {
    let policy_seed = derive_seed(seed, "policy-rng");
    Ok(match kind {
        PolicyKind::Random => Box::new(RandomPolicy::new(policy_seed)),
        PolicyKind::Search => Box::new(SearchPolicy::new(
            artifacts.model.clone().ok_or_else(no_model)?,
            policy_seed,
        )),
        PolicyKind::Bfs => Box::new(BfsPolicy::new(
            artifacts.model.clone().ok_or_else(no_model)?,
            cfg.theta,
            policy_seed,
        )),
        PolicyKind::BalancedVector => Box::new(BalancedVectorPolicy::new(
            artifacts.model.clone().ok_or_else(no_model)?,
            cfg.n_queues,
            cfg.balance_mode,
        )),
        PolicyKind::BalancedKmeans => Box::new(ClusterPolicy::with_mode(
            artifacts.centroids.clone().ok_or_else(no_model)?,
            cfg.n_queues,
            true,
            cfg.balance_mode,
        )?),
        PolicyKind::UnbalancedKmeans => Box::new(ClusterPolicy::new(
            artifacts.centroids.clone().ok_or_else(no_model)?,
            cfg.n_queues,
            false,
        )?),
    })
}

fn no_model() -> Error {
    Error::NoTrainingData("policy requires a trained artifact".into())
}

// ---------------------------------------------------------------------------
// run_experiment
// ---------------------------------------------------------------------------

/// One measured cell: warm-up (random, logging), train, measured run,
/// baseline run on the same workload stream.
struct Cell {
    stats: RunStats,
    decisions: Vec<DecisionRecord>,
    events: Vec<crate::sim::TraceEvent>,
}

fn run_cell(cfg: &ExperimentConfig, repeat: u32) -> Result<Cell> {
    run_cell_inner(cfg, repeat, false)
}

/// Warm-up phase on its own: random scheduling with logging enabled,
/// returning the execution log (the `train` front end builds on this).
pub fn warmup_run(cfg: &ExperimentConfig, repeat: u32) -> Result<Vec<LogRecord>> {
    let rep_seed = derive_seed(cfg.seed.wrapping_add(u64::from(repeat)), "repeat");
    let mut wl = cfg.workload.clone();
    wl.rng_seed = derive_seed(rep_seed, "warmup-stream");
    let mut gen = Generator::new(wl)?;
    let mut warm_policy = RandomPolicy::new(derive_seed(rep_seed, "warmup-policy"));
    let sim_cfg = cfg.sim_config(true, false, derive_seed(rep_seed, "warmup-log"));
    Ok(run(&mut warm_policy, &mut gen, cfg.warmup_us, &sim_cfg).log)
}

fn run_cell_inner(cfg: &ExperimentConfig, repeat: u32, collect_events: bool) -> Result<Cell> {
    let rep_seed = derive_seed(cfg.seed.wrapping_add(u64::from(repeat)), "repeat");

    // Phases 1 and 2: warm up with random scheduling, log execution
    // results, learn from the log.
    let (artifacts, fallback) = if cfg.policy == PolicyKind::Random {
        (Artifacts::default(), false)
    } else {
        let log = warmup_run(cfg, repeat)?;
        train_artifacts(cfg, cfg.policy, &log, rep_seed)
    };
    let effective = if fallback { PolicyKind::Random } else { cfg.policy };

    // Phase 3: measured run under the policy.
    let measure_stream = derive_seed(rep_seed, "measure-stream");
    let measured = {
        let mut wl = cfg.workload.clone();
        wl.rng_seed = measure_stream;
        let mut gen = Generator::new(wl)?;
        let mut policy = make_policy(cfg, effective, &artifacts, rep_seed)?;
        let mut sim_cfg = cfg.sim_config(false, true, derive_seed(rep_seed, "measure-log"));
        sim_cfg.collect_events = collect_events;
        run(policy.as_mut(), &mut gen, cfg.measure_us, &sim_cfg)
    };

    // Baseline: random scheduling over the identical workload stream.
    let baseline_tps = if effective == PolicyKind::Random {
        measured.metrics.throughput_tps()
    } else {
        let mut wl = cfg.workload.clone();
        wl.rng_seed = measure_stream;
        let mut gen = Generator::new(wl)?;
        let mut policy = RandomPolicy::new(derive_seed(rep_seed, "baseline-policy"));
        let sim_cfg = cfg.sim_config(false, false, derive_seed(rep_seed, "baseline-log"));
        let baseline = run(&mut policy, &mut gen, cfg.measure_us, &sim_cfg);
        baseline.metrics.throughput_tps()
    };

    let quality = distribution_matrix(&measured.decisions, cfg.n_queues).partition_quality;
    let stats = stats_from_run(&measured, repeat, rep_seed, baseline_tps, quality, fallback);
    Ok(Cell { stats, decisions: measured.decisions, events: measured.events })
}

fn stats_from_run(
    out: &RunOutput,
    repeat: u32,
    seed: u64,
    baseline_tps: f64,
    partition_quality: f64,
    model_fallback: bool,
) -> RunStats {
    let m = &out.metrics;
    RunStats {
        repeat,
        seed,
        tps: m.throughput_tps(),
        relative_tps: if baseline_tps > 0.0 { m.throughput_tps() / baseline_tps } else { 0.0 },
        baseline_tps,
        abort_rate: m.abort_rate(),
        committed: m.committed,
        aborts: m.aborts,
        attempts: m.attempts(),
        response_mean_ms: m.response_mean_us() / 1e3,
        response_std_ms: m.response_std_us() / 1e3,
        response_p95_ms: m.response_p95_us() as f64 / 1e3,
        idle_std_ms: m.idle_std_us() / 1e3,
        partition_quality,
        saturated: m.saturated,
        model_fallback,
    }
}

/// The full protocol for one policy: repeats of warm-up / train /
/// measure, averaged, with relative throughput against the
/// common-random-numbers random baseline.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let mut per_repeat = Vec::with_capacity(cfg.repeats as usize);
    for r in 0..cfg.repeats {
        per_repeat.push(run_cell(cfg, r)?.stats);
    }
    Ok(Report::from_repeats(cfg, per_repeat))
}

/// Like [`run_experiment`] but returning the first repeat's decision
/// trace (for distribution figures).
pub fn run_experiment_with_decisions(
    cfg: &ExperimentConfig,
) -> Result<(Report, Vec<DecisionRecord>)> {
    cfg.validate()?;
    let mut per_repeat = Vec::with_capacity(cfg.repeats as usize);
    let mut decisions = Vec::new();
    for r in 0..cfg.repeats {
        let cell = run_cell(cfg, r)?;
        if r == 0 {
            decisions = cell.decisions;
        }
        per_repeat.push(cell.stats);
    }
    Ok((Report::from_repeats(cfg, per_repeat), decisions))
}

/// A single fully traced repeat: stats, decision trace, and event trace.
pub struct TracedRun {
    pub stats: RunStats,
    pub decisions: Vec<DecisionRecord>,
    pub events: Vec<crate::sim::TraceEvent>,
}

pub fn run_traced(cfg: &ExperimentConfig) -> Result<TracedRun> {
    cfg.validate()?;
    let cell = run_cell_inner(cfg, 0, true)?;
    Ok(TracedRun { stats: cell.stats, decisions: cell.decisions, events: cell.events })
}

// ---------------------------------------------------------------------------
// Arrival-rate sweeps
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub rate_tps: f64,
    pub tps: f64,
    pub relative_tps: f64,
    pub abort_rate: f64,
    pub response_mean_ms: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub workload: String,
    pub policy: String,
    pub points: Vec<SweepPoint>,
    /// First offered rate at which measured throughput drops below 95% of
    /// it.
    pub knee_rate_tps: Option<f64>,
    /// Throughput at the knee (or the maximum seen when no knee).
    pub knee_tps: f64,
}

/// One [`run_experiment`] per ascending rate; output suits a response
/// time vs throughput curve.
pub fn sweep_arrival_rate(cfg: &ExperimentConfig, rates: &[f64], jobs: usize) -> Result<SweepReport> {
    if rates.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("sweep rates must be strictly ascending".into()));
    }
    let run_rate = |&rate: &f64| -> Result<SweepPoint> {
        let mut c = cfg.clone();
        c.workload.arrival_rate_tps = rate;
        let report = run_experiment(&c)?;
        Ok(SweepPoint {
            rate_tps: rate,
            tps: report.mean_tps,
            relative_tps: report.mean_relative_tps,
            abort_rate: report.mean_abort_rate,
            response_mean_ms: report.mean_response_ms,
            saturated: report.saturated,
        })
    };
    let points: Vec<SweepPoint> = if jobs > 1 {
        run_parallel(rates, jobs, run_rate)?
    } else {
        rates.iter().map(run_rate).collect::<Result<_>>()?
    };
    let knee_rate = points
        .iter()
        .find(|p| p.tps < 0.95 * p.rate_tps)
        .map(|p| p.rate_tps);
    // Throughput at the knee: the highest rate the policy sustained
    // (falling back to the best observed when nothing was sustained).
    let sustained = points
        .iter()
        .filter(|p| p.tps >= 0.95 * p.rate_tps)
        .map(|p| p.tps)
        .fold(0.0f64, f64::max);
    let knee_tps = if sustained > 0.0 {
        sustained
    } else {
        points.iter().map(|p| p.tps).fold(0.0, f64::max)
    };
    Ok(SweepReport {
        workload: cfg.workload.kind.name().to_string(),
        policy: cfg.policy.name().to_string(),
        points,
        knee_rate_tps: knee_rate,
        knee_tps,
    })
}

/// Independent cells are embarrassingly parallel; results return in input
/// order.
fn run_parallel<T: Send + Sync, R: Send>(
    items: &[T],
    jobs: usize,
    f: impl Fn(&T) -> Result<R> + Send + Sync,
) -> Result<Vec<R>> {
    let results: Vec<std::sync::Mutex<Option<Result<R>>>> =
        (0..items.len()).map(|_| std::sync::Mutex::new(None)).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("all indices visited"))
        .collect()
}

// ---------------------------------------------------------------------------
// Retraining rounds
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RoundStat {
    pub round: u32,
    pub tps: f64,
    pub relative_tps: f64,
    pub model_reused: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundsReport {
    pub workload: String,
    pub policy: String,
    pub rounds: Vec<RoundStat>,
    pub mean_relative: f64,
    pub std_relative: f64,
    pub ci95_relative: f64,
}

/// Round 0 runs random scheduling as the baseline; each later round
/// discards the model, retrains from a 500-record sample of the previous
/// round's log, and runs the policy with logging on.
pub fn run_rounds(cfg: &ExperimentConfig, rounds: u32, sample_size: usize) -> Result<RoundsReport> {
    cfg.validate()?;
    if !(cfg.policy.needs_model() || cfg.policy.needs_centroids()) {
        return Err(Error::Config("run_rounds requires a model-based policy".into()));
    }
    let seed0 = derive_seed(cfg.seed, "rounds");

    // Round 0: random baseline with logging.
    let mut wl = cfg.workload.clone();
    wl.rng_seed = derive_seed(seed0, "round-stream-0");
    let mut gen = Generator::new(wl)?;
    let mut policy = RandomPolicy::new(derive_seed(seed0, "round-policy-0"));
    let sim_cfg = cfg.sim_config(true, false, derive_seed(seed0, "round-log-0"));
    let round0 = run(&mut policy, &mut gen, cfg.round_us, &sim_cfg);
    let baseline_tps = round0.metrics.throughput_tps();
    let mut stats = vec![RoundStat {
        round: 0,
        tps: baseline_tps,
        relative_tps: 1.0,
        model_reused: false,
    }];

    let mut prev_log = round0.log;
    let mut prev_artifacts: Option<Artifacts> = None;
    for round in 1..=rounds {
        let round_seed = derive_seed(seed0, &format!("round-{round}"));
        // Fresh model from a uniform sample of the previous round's log.
        // The clustering log holds abort records only (commits carry no
        // information for it), so centroid policies sample from those.
        let source: Vec<LogRecord> = if cfg.policy.needs_centroids() && !cfg.policy.needs_model() {
            prev_log.iter().filter(|r| r.kind == LogKind::Abort).cloned().collect()
        } else {
            prev_log.clone()
        };
        let sample = sample_records(&source, sample_size, derive_seed(round_seed, "sample"));
        let (artifacts, fallback) = train_artifacts(cfg, cfg.policy, &sample, round_seed);
        let (artifacts, reused) = if fallback {
            match &prev_artifacts {
                Some(prev) => (prev.clone(), true),
                None => (artifacts, true),
            }
        } else {
            (artifacts, false)
        };
        let usable = (cfg.policy.needs_model() && artifacts.model.is_some())
            || (cfg.policy.needs_centroids() && artifacts.centroids.is_some());
        let mut wl = cfg.workload.clone();
        wl.rng_seed = derive_seed(round_seed, "stream");
        let mut gen = Generator::new(wl)?;
        let sim_cfg = cfg.sim_config(true, false, derive_seed(round_seed, "log"));
        let out = if usable {
            let mut policy = make_policy(cfg, cfg.policy, &artifacts, round_seed)?;
            run(policy.as_mut(), &mut gen, cfg.round_us, &sim_cfg)
        } else {
            let mut policy = RandomPolicy::new(derive_seed(round_seed, "fallback-policy"));
            run(&mut policy, &mut gen, cfg.round_us, &sim_cfg)
        };
        stats.push(RoundStat {
            round,
            tps: out.metrics.throughput_tps(),
            relative_tps: if baseline_tps > 0.0 {
                out.metrics.throughput_tps() / baseline_tps
            } else {
                0.0
            },
            model_reused: reused,
        });
        prev_log = out.log;
        if usable {
            prev_artifacts = Some(artifacts);
        }
    }

    let rel: Vec<f64> = stats.iter().skip(1).map(|s| s.relative_tps).collect();
    let n = rel.len() as f64;
    let mean = rel.iter().sum::<f64>() / n;
    let std = if rel.len() > 1 {
        (rel.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let ci95 = if rel.len() > 1 { t_quantile_975(rel.len() - 1) * std / n.sqrt() } else { 0.0 };
    Ok(RoundsReport {
        workload: cfg.workload.kind.name().to_string(),
        policy: cfg.policy.name().to_string(),
        rounds: stats,
        mean_relative: mean,
        std_relative: std,
        ci95_relative: ci95,
    })
}

/// Two-sided 95% Student-t quantile by degrees of freedom.
fn t_quantile_975(df: usize) -> f64 {
    const TABLE: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179,
        2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064,
        2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    if df == 0 {
        return f64::NAN;
    }
    if df <= TABLE.len() {
        TABLE[df - 1]
    } else {
        1.96
    }
}

// ---------------------------------------------------------------------------
// Distribution matrix
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct DistributionMatrix {
    /// Sorted distinct partition keys.
    pub keys: Vec<u64>,
    /// `[queue][key index]`, normalized so each queue row sums to 1.
    pub per_queue_share: Vec<Vec<f64>>,
    /// Mean over keys of the largest per-queue share of that key:
    /// 1.0 is a perfect partition.
    pub partition_quality: f64,
}

/// Per-queue per-key proportions from a decision trace.
pub fn distribution_matrix(decisions: &[DecisionRecord], n_queues: usize) -> DistributionMatrix {
    let mut counts: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    let mut queue_totals = vec![0u64; n_queues];
    for d in decisions {
        counts.entry(d.partition_key).or_insert_with(|| vec![0; n_queues])[d.queue] += 1;
        queue_totals[d.queue] += 1;
    }
    let keys: Vec<u64> = counts.keys().copied().collect();
    let mut per_queue_share = vec![vec![0.0; keys.len()]; n_queues];
    let mut quality_sum = 0.0;
    for (ki, key) in keys.iter().enumerate() {
        let per_queue = &counts[key];
        let key_total: u64 = per_queue.iter().sum();
        let mut max_share = 0.0f64;
        for q in 0..n_queues {
            if queue_totals[q] > 0 {
                per_queue_share[q][ki] = per_queue[q] as f64 / queue_totals[q] as f64;
            }
            if key_total > 0 {
                max_share = max_share.max(per_queue[q] as f64 / key_total as f64);
            }
        }
        quality_sum += max_share;
    }
    let partition_quality = if keys.is_empty() { 0.0 } else { quality_sum / keys.len() as f64 };
    DistributionMatrix { keys, per_queue_share, partition_quality }
}

// ---------------------------------------------------------------------------
// CSV writers (column orders are frozen; see the README)
// ---------------------------------------------------------------------------

pub const REPORT_CSV_HEADER: &str = "workload,policy,seed,arrival_rate_tps,queues,k_bits,repeat,\
tps,relative_tps,abort_rate,committed,aborts,attempts,response_mean_ms,response_std_ms,\
response_p95_ms,idle_std_ms,partition_quality,saturated,model_fallback";

pub fn report_csv(cfg: &ExperimentConfig, report: &Report) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    for s in &report.per_repeat {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3},{:.4},{:.6},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.4},{},{}\n",
            report.workload,
            report.policy,
            cfg.seed,
            cfg.workload.arrival_rate_tps,
            cfg.n_queues,
            cfg.k_bits,
            s.repeat,
            s.tps,
            s.relative_tps,
            s.abort_rate,
            s.committed,
            s.aborts,
            s.attempts,
            s.response_mean_ms,
            s.response_std_ms,
            s.response_p95_ms,
            s.idle_std_ms,
            s.partition_quality,
            s.saturated,
            s.model_fallback,
        ));
    }
    out
}

pub const SWEEP_CSV_HEADER: &str =
    "workload,policy,rate_tps,tps,relative_tps,abort_rate,response_mean_ms,saturated";

pub fn sweep_csv(report: &SweepReport) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for p in &report.points {
        out.push_str(&format!(
            "{},{},{},{:.3},{:.4},{:.6},{:.3},{}\n",
            report.workload,
            report.policy,
            p.rate_tps,
            p.tps,
            p.relative_tps,
            p.abort_rate,
            p.response_mean_ms,
            p.saturated,
        ));
    }
    out
}

pub const ROUNDS_CSV_HEADER: &str = "workload,policy,round,tps,relative_tps,model_reused";

pub fn rounds_csv(report: &RoundsReport) -> String {
    let mut out = String::from(ROUNDS_CSV_HEADER);
    out.push('\n');
    for r in &report.rounds {
        out.push_str(&format!(
            "{},{},{},{:.3},{:.4},{}\n",
            report.workload, report.policy, r.round, r.tps, r.relative_tps, r.model_reused,
        ));
    }
    out
}

pub fn matrix_csv(matrix: &DistributionMatrix) -> String {
    let n_queues = matrix.per_queue_share.len();
    let mut out = String::from("key");
    for q in 0..n_queues {
        out.push_str(&format!(",q{q}"));
    }
    out.push('\n');
    for (ki, key) in matrix.keys.iter().enumerate() {
        out.push_str(&key.to_string());
        for q in 0..n_queues {
            out.push_str(&format!(",{:.6}", matrix.per_queue_share[q][ki]));
        }
        out.push('\n');
    }
    out
}

/// Decision trace CSV: `txn_id, policy, queue, reason, score`.
pub fn decisions_csv(policy: &str, decisions: &[DecisionRecord]) -> String {
    let mut out = String::from("txn_id,policy,queue,reason,score\n");
    for d in decisions {
        out.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            d.txn_id,
            policy,
            d.queue,
            d.reason.name(),
            d.score
        ));
    }
    out
}
