//! Queue-assignment policies: Random, Search, BFS, Balanced Vector, and
//! Balanced/Unbalanced k-Means, plus the queue state they operate on.
//!
//! Every policy returns a queue index in `[0, n)`; the engine performs the
//! actual enqueue immediately after, so no transaction is dropped or
//! duplicated by assignment. In the deterministic simulation there is
//! exactly one assigner at a time.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::CentroidSet;
use crate::error::{Error, Result};
use crate::feature::FeatureVector;
use crate::model::{sigmoid, AbortModel};
use crate::rng_from_seed;
use crate::workload::{Micros, Transaction};

/// A transaction plus its hashed feature vector, as the queues carry it.
#[derive(Debug, Clone)]
pub struct InFlight {
    pub txn: Transaction,
    pub fvec: Arc<FeatureVector>,
}

// ---------------------------------------------------------------------------
// Queue state
// ---------------------------------------------------------------------------

/// Ring buffer of recent commit response times with running sums.
#[derive(Debug, Clone)]
pub struct RtWindow {
    buf: VecDeque<Micros>,
    cap: usize,
    sum: f64,
    sum_sq: f64,
}

impl RtWindow {
    fn new(cap: usize) -> Self {
        RtWindow { buf: VecDeque::with_capacity(cap), cap, sum: 0.0, sum_sq: 0.0 }
    }

    fn push(&mut self, rt: Micros) {
        if self.buf.len() == self.cap {
            let old = self.buf.pop_front().unwrap() as f64;
            self.sum -= old;
            self.sum_sq -= old * old;
        }
        self.buf.push_back(rt);
        let rt = rt as f64;
        self.sum += rt;
        self.sum_sq += rt * rt;
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        if self.buf.is_empty() {
            None
        } else {
            Some(self.sum / self.buf.len() as f64)
        }
    }
}

/// One FIFO run queue plus its Balanced Vector bookkeeping (`R`, `Count`)
/// and response-time history.
#[derive(Debug, Clone)]
pub struct QueueState {
    index: usize,
    fifo: VecDeque<InFlight>,
    r: Vec<f64>,
    count: u64,
    rt: RtWindow,
}

impl QueueState {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn fifo_len(&self) -> usize {
        self.fifo.len()
    }

    pub fn head(&self) -> Option<&InFlight> {
        self.fifo.front()
    }

    pub fn iter_queued(&self) -> impl Iterator<Item = &InFlight> {
        self.fifo.iter()
    }

    /// Sum of feature vectors of every transaction ever enqueued here by
    /// the Balanced Vector policy (enqueue-only history; dequeues do not
    /// modify it).
    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// `R / Count`, elementwise; zero vector before the first enqueue.
    pub fn r_avg(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![0.0; self.r.len()];
        }
        self.r.iter().map(|x| x / self.count as f64).collect()
    }

    pub fn rt_window(&self) -> &RtWindow {
        &self.rt
    }
}

/// The engine's queue set.
#[derive(Debug, Clone)]
pub struct Queues {
    states: Vec<QueueState>,
    k_bits: u32,
}

impl Queues {
    pub fn new(n_queues: usize, k_bits: u32, rt_window: usize) -> Self {
        assert!(n_queues >= 1, "need at least one queue");
        let states = (0..n_queues)
            .map(|index| QueueState {
                index,
                fifo: VecDeque::new(),
                r: vec![0.0; k_bits as usize],
                count: 0,
                rt: RtWindow::new(rt_window),
            })
            .collect();
        Queues { states, k_bits }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn k_bits(&self) -> u32 {
        self.k_bits
    }

    pub fn state(&self, q: usize) -> &QueueState {
        &self.states[q]
    }

    /// Enqueue and fold the feature vector into the queue's running
    /// centroid. `R` and `Count` grow on enqueue only; dequeues leave them
    /// alone, so they carry the queue's full enqueue history.
    pub fn enqueue(&mut self, q: usize, txn: InFlight) {
        let state = &mut self.states[q];
        state.count += 1;
        for &i in txn.fvec.ones() {
            state.r[i as usize] += 1.0;
        }
        state.fifo.push_back(txn);
    }

    pub fn pop_head(&mut self, q: usize) -> Option<InFlight> {
        self.states[q].fifo.pop_front()
    }

    pub fn record_response(&mut self, q: usize, rt: Micros) {
        self.states[q].rt.push(rt);
    }

    pub fn total_queued(&self) -> usize {
        self.states.iter().map(|s| s.fifo.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Response-time statistics and the balance override
// ---------------------------------------------------------------------------

/// Recent response-time statistics: per-queue means over each ring buffer
/// plus the mean and standard deviation over the pooled window.
#[derive(Debug, Clone)]
pub struct ResponseStats {
    pub per_queue_mean: Vec<Option<f64>>,
    pub global_mean: f64,
    pub global_std: f64,
}

impl ResponseStats {
    pub fn compute(queues: &Queues) -> Self {
        let per_queue_mean: Vec<Option<f64>> =
            queues.states.iter().map(|s| s.rt.mean()).collect();
        let n: usize = queues.states.iter().map(|s| s.rt.len()).sum();
        let (global_mean, global_std) = if n == 0 {
            (0.0, 0.0)
        } else {
            let sum: f64 = queues.states.iter().map(|s| s.rt.sum).sum();
            let sum_sq: f64 = queues.states.iter().map(|s| s.rt.sum_sq).sum();
            let mean = sum / n as f64;
            let var = (sum_sq / n as f64 - mean * mean).max(0.0);
            (mean, var.sqrt())
        };
        ResponseStats { per_queue_mean, global_mean, global_std }
    }

    fn queue_mean(&self, q: usize) -> f64 {
        self.per_queue_mean[q].unwrap_or(self.global_mean)
    }

    fn min_rt_queue(&self) -> usize {
        let mut best = 0usize;
        for q in 1..self.per_queue_mean.len() {
            if self.queue_mean(q) < self.queue_mean(best) {
                best = q;
            }
        }
        best
    }
}

/// If the chosen queue's recent mean response time exceeds the global mean
/// by more than one global standard deviation, redirect to the queue with
/// the minimum recent mean. Queues with no history use the global mean and
/// never trigger.
pub fn response_time_override(chosen: usize, stats: &ResponseStats) -> usize {
    if stats.per_queue_mean.len() <= 1 {
        return chosen;
    }
    if stats.queue_mean(chosen) - stats.global_mean > stats.global_std {
        stats.min_rt_queue()
    } else {
        chosen
    }
}

// ---------------------------------------------------------------------------
// Decisions and the policy trait
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reason {
    ModelMatch,
    ThresholdHit,
    BalanceOverride,
    RandomFallback,
}

impl Reason {
    pub fn name(self) -> &'static str {
        match self {
            Reason::ModelMatch => "model_match",
            Reason::ThresholdHit => "threshold_hit",
            Reason::BalanceOverride => "balance_override",
            Reason::RandomFallback => "random_fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerDecision {
    pub queue_index: usize,
    pub reason: Reason,
    /// Abort probability for model policies, centroid distance for
    /// k-means, 0 for random.
    pub score: f64,
}

/// A queue-assignment policy. The engine enqueues to the returned queue
/// immediately after `assign` returns.
pub trait Policy {
    fn name(&self) -> &'static str;

    fn assign(
        &mut self,
        txn: &InFlight,
        queues: &Queues,
        stats: &ResponseStats,
    ) -> SchedulerDecision;

    /// Cumulative model/distance evaluations (cost-bound checks).
    fn eval_count(&self) -> u64;

    /// Called by the engine right after the transaction is enqueued to
    /// queue `q`, for policies that cache per-queue aggregates.
    fn on_enqueued(&mut self, q: usize, v: &FeatureVector) {
        let _ = (q, v);
    }

    /// Whether the policy consults [`ResponseStats`] on every assignment.
    fn needs_rt_stats(&self) -> bool {
        false
    }
}

/// Reroute per the pseudocode, or block an over-limit queue until it
/// drains (the prose variant), selectable for comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BalanceMode {
    #[default]
    Reroute,
    BlockUntilEmpty,
}

// ---------------------------------------------------------------------------
// Random
// ---------------------------------------------------------------------------

pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy { rng: rng_from_seed(seed) }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn assign(&mut self, _txn: &InFlight, queues: &Queues, _stats: &ResponseStats) -> SchedulerDecision {
        SchedulerDecision {
            queue_index: self.rng.gen_range(0..queues.len()),
            reason: Reason::RandomFallback,
            score: 0.0,
        }
    }

    fn eval_count(&self) -> u64 {
        0
    }
}

// ---------------------------------------------------------------------------
// Search (scan every queued transaction)
// ---------------------------------------------------------------------------

pub struct SearchPolicy {
    model: Arc<AbortModel>,
    rng: ChaCha8Rng,
    evals: u64,
}

impl SearchPolicy {
    pub fn new(model: Arc<AbortModel>, seed: u64) -> Self {
        SearchPolicy { model, rng: rng_from_seed(seed), evals: 0 }
    }
}

impl Policy for SearchPolicy {
    fn name(&self) -> &'static str {
        "search"
    }

    fn assign(&mut self, txn: &InFlight, queues: &Queues, _stats: &ResponseStats) -> SchedulerDecision {
        let mut best_p = -1.0f64;
        let mut best_q = None;
        for q in 0..queues.len() {
            for waiting in queues.state(q).iter_queued() {
                let p = self
                    .model
                    .predict_sparse(&txn.fvec, &waiting.fvec)
                    .expect("queues and model share k_bits");
                self.evals += 1;
                if p > best_p {
                    best_p = p;
                    best_q = Some(q);
                }
            }
        }
        match best_q {
            Some(q) => SchedulerDecision { queue_index: q, reason: Reason::ModelMatch, score: best_p },
            None => SchedulerDecision {
                queue_index: self.rng.gen_range(0..queues.len()),
                reason: Reason::RandomFallback,
                score: 0.0,
            },
        }
    }

    fn eval_count(&self) -> u64 {
        self.evals
    }
}

// ---------------------------------------------------------------------------
// BFS over queue heads
// ---------------------------------------------------------------------------

pub struct BfsPolicy {
    model: Arc<AbortModel>,
    theta: f64,
    rng: ChaCha8Rng,
    evals: u64,
    seen_ids: Vec<u64>,
    exhausted: Vec<bool>,
}

impl BfsPolicy {
    pub fn new(model: Arc<AbortModel>, theta: f64, seed: u64) -> Self {
        BfsPolicy {
            model,
            theta,
            rng: rng_from_seed(seed),
            evals: 0,
            seen_ids: Vec::new(),
            exhausted: Vec::new(),
        }
    }
}

impl Policy for BfsPolicy {
    fn name(&self) -> &'static str {
        "bfs"
    }

    fn assign(&mut self, txn: &InFlight, queues: &Queues, _stats: &ResponseStats) -> SchedulerDecision {
        let n = queues.len();
        let alpha = self.rng.gen_range(0..n);
        self.seen_ids.clear();
        self.exhausted.clear();
        self.exhausted.resize(n, false);
        let mut done = 0usize;
        while done < n {
            for i in 0..n {
                let j = (alpha + i) % n;
                if self.exhausted[j] {
                    continue;
                }
                // Atomic peek: observationally the dequeue/enqueue pair,
                // since nothing else can run between them here.
                let Some(head) = queues.state(j).head() else {
                    self.exhausted[j] = true;
                    done += 1;
                    continue;
                };
                if head.txn.id > txn.txn.id || self.seen_ids.contains(&head.txn.id) {
                    self.exhausted[j] = true;
                    done += 1;
                    continue;
                }
                self.seen_ids.push(head.txn.id);
                let p = self
                    .model
                    .predict_sparse(&txn.fvec, &head.fvec)
                    .expect("queues and model share k_bits");
                self.evals += 1;
                if p > self.theta {
                    return SchedulerDecision {
                        queue_index: j,
                        reason: Reason::ThresholdHit,
                        score: p,
                    };
                }
            }
        }
        SchedulerDecision { queue_index: alpha, reason: Reason::RandomFallback, score: 0.0 }
    }

    fn eval_count(&self) -> u64 {
        self.evals
    }
}

// ---------------------------------------------------------------------------
// Balanced Vector (queue centroids through the pair model)
// ---------------------------------------------------------------------------

pub struct BalancedVectorPolicy {
    model: Arc<AbortModel>,
    mode: BalanceMode,
    blocked: Vec<bool>,
    /// Cached `Σ_j w2[j] * R[q][j]` so each queue evaluation is sparse.
    w2_dot_r: Vec<f64>,
    evals: u64,
}

impl BalancedVectorPolicy {
    pub fn new(model: Arc<AbortModel>, n_queues: usize, mode: BalanceMode) -> Self {
        BalancedVectorPolicy {
            model,
            mode,
            blocked: vec![false; n_queues],
            w2_dot_r: vec![0.0; n_queues],
            evals: 0,
        }
    }

    /// Logit against queue `q`'s running centroid, matching
    /// `AbortModel::predict_centroid(v, r_avg(q))` exactly.
    fn queue_probability(&self, v: &FeatureVector, state: &QueueState, q: usize) -> f64 {
        let k = self.model.k_bits() as usize;
        let w = self.model.weights();
        let mut z = self.model.bias();
        for &i in v.ones() {
            z += w[i as usize];
        }
        if state.count() > 0 {
            let mut cross = self.w2_dot_r[q];
            for &i in v.ones() {
                cross += w[2 * k + i as usize] * state.r()[i as usize];
            }
            z += cross / state.count() as f64;
        }
        sigmoid(z)
    }
}

impl Policy for BalancedVectorPolicy {
    fn name(&self) -> &'static str {
        "balanced_vector"
    }

    fn assign(&mut self, txn: &InFlight, queues: &Queues, stats: &ResponseStats) -> SchedulerDecision {
        let n = queues.len();
        if let BalanceMode::BlockUntilEmpty = self.mode {
            for q in 0..n {
                if self.blocked[q] && queues.state(q).fifo_len() == 0 {
                    self.blocked[q] = false;
                }
            }
            if self.blocked.iter().all(|&b| b) {
                self.blocked.fill(false);
            }
        }
        // Argmax with `>=`: later queues win ties.
        let mut max_prob = 0.0f64;
        let mut idx = 0usize;
        for q in 0..n {
            let p = self.queue_probability(&txn.fvec, queues.state(q), q);
            self.evals += 1;
            if self.blocked[q] {
                continue;
            }
            if p >= max_prob {
                max_prob = p;
                idx = q;
            }
        }
        let mut reason = Reason::ModelMatch;
        match self.mode {
            BalanceMode::Reroute => {
                let rerouted = response_time_override(idx, stats);
                if rerouted != idx {
                    idx = rerouted;
                    reason = Reason::BalanceOverride;
                }
            }
            BalanceMode::BlockUntilEmpty => {
                if n > 1 && stats.queue_mean(idx) - stats.global_mean > stats.global_std {
                    self.blocked[idx] = true;
                    let mut best = None;
                    for q in 0..n {
                        if self.blocked[q] {
                            continue;
                        }
                        if best.map_or(true, |b| stats.queue_mean(q) < stats.queue_mean(b)) {
                            best = Some(q);
                        }
                    }
                    if let Some(b) = best {
                        idx = b;
                        reason = Reason::BalanceOverride;
                    } else {
                        self.blocked[idx] = false;
                    }
                }
            }
        }
        SchedulerDecision { queue_index: idx, reason, score: max_prob }
    }

    fn eval_count(&self) -> u64 {
        self.evals
    }

    /// Keep `Σ w2·R` in step with the enqueue that just folded `v` into
    /// the queue's `R`.
    fn on_enqueued(&mut self, q: usize, v: &FeatureVector) {
        let k = self.model.k_bits() as usize;
        let w = self.model.weights();
        for &i in v.ones() {
            self.w2_dot_r[q] += w[k + i as usize];
        }
    }

    fn needs_rt_stats(&self) -> bool {
        true
    }
}

// ---------------------------------------------------------------------------
// Balanced / unbalanced k-means
// ---------------------------------------------------------------------------

pub struct ClusterPolicy {
    centroids: Arc<CentroidSet>,
    balanced: bool,
    mode: BalanceMode,
    blocked: Vec<bool>,
    evals: u64,
}

impl ClusterPolicy {
    pub fn new(centroids: Arc<CentroidSet>, n_queues: usize, balanced: bool) -> Result<Self> {
        ClusterPolicy::with_mode(centroids, n_queues, balanced, BalanceMode::Reroute)
    }

    pub fn with_mode(
        centroids: Arc<CentroidSet>,
        n_queues: usize,
        balanced: bool,
        mode: BalanceMode,
    ) -> Result<Self> {
        if centroids.len() != n_queues {
            return Err(Error::Invariant(format!(
                "{} centroids for {} queues; need one per queue",
                centroids.len(),
                n_queues
            )));
        }
        Ok(ClusterPolicy { centroids, balanced, mode, blocked: vec![false; n_queues], evals: 0 })
    }
}

impl Policy for ClusterPolicy {
    fn name(&self) -> &'static str {
        if self.balanced {
            "balanced_kmeans"
        } else {
            "unbalanced_kmeans"
        }
    }

    fn assign(&mut self, txn: &InFlight, queues: &Queues, stats: &ResponseStats) -> SchedulerDecision {
        let n = self.centroids.len();
        if self.balanced && self.mode == BalanceMode::BlockUntilEmpty {
            for q in 0..n {
                if self.blocked[q] && queues.state(q).fifo_len() == 0 {
                    self.blocked[q] = false;
                }
            }
            if self.blocked.iter().all(|&b| b) {
                self.blocked.fill(false);
            }
        }
        let mut min_dist = f64::INFINITY;
        let mut idx = 0usize;
        let mut found = false;
        for q in 0..n {
            let d = self.centroids.distance_to(q, &txn.fvec);
            self.evals += 1;
            if self.blocked[q] {
                continue;
            }
            if d < min_dist || !found {
                min_dist = d;
                idx = q;
                found = true;
            }
        }
        let mut reason = Reason::ModelMatch;
        if self.balanced {
            match self.mode {
                BalanceMode::Reroute => {
                    let rerouted = response_time_override(idx, stats);
                    if rerouted != idx {
                        idx = rerouted;
                        reason = Reason::BalanceOverride;
                    }
                }
                BalanceMode::BlockUntilEmpty => {
                    if n > 1 && stats.queue_mean(idx) - stats.global_mean > stats.global_std {
                        self.blocked[idx] = true;
                        let mut best = None;
                        for q in 0..n {
                            if self.blocked[q] {
                                continue;
                            }
                            if best.map_or(true, |b| stats.queue_mean(q) < stats.queue_mean(b)) {
                                best = Some(q);
                            }
                        }
                        if let Some(b) = best {
                            idx = b;
                            reason = Reason::BalanceOverride;
                        } else {
                            self.blocked[idx] = false;
                        }
                    }
                }
            }
        }
        SchedulerDecision { queue_index: idx, reason, score: min_dist }
    }

    fn eval_count(&self) -> u64 {
        self.evals
    }

    fn needs_rt_stats(&self) -> bool {
        self.balanced
    }
}

// ---------------------------------------------------------------------------
// Policy selection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    Random,
    Search,
    Bfs,
    BalancedVector,
    BalancedKmeans,
    UnbalancedKmeans,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Random,
        PolicyKind::Search,
        PolicyKind::Bfs,
        PolicyKind::BalancedVector,
        PolicyKind::BalancedKmeans,
        PolicyKind::UnbalancedKmeans,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Search => "search",
            PolicyKind::Bfs => "bfs",
            PolicyKind::BalancedVector => "balanced_vector",
            PolicyKind::BalancedKmeans => "balanced_kmeans",
            PolicyKind::UnbalancedKmeans => "unbalanced_kmeans",
        }
    }

    pub fn parse(s: &str) -> Option<PolicyKind> {
        PolicyKind::ALL.iter().copied().find(|p| p.name() == s)
    }

    /// Needs the logistic pair model.
    pub fn needs_model(self) -> bool {
        matches!(self, PolicyKind::Search | PolicyKind::Bfs | PolicyKind::BalancedVector)
    }

    /// Needs fitted centroids.
    pub fn needs_centroids(self) -> bool {
        matches!(self, PolicyKind::BalancedKmeans | PolicyKind::UnbalancedKmeans)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::pair_vector;
    use crate::workload::TxnType;
    use std::collections::BTreeSet;

    fn mk_txn(id: u64) -> Transaction {
        Transaction {
            id,
            txn_type: TxnType::NewOrder,
            features: BTreeSet::new(),
            read_set: vec![],
            write_set: vec![],
            service_time: 100,
            arrival_time: id,
            attempts: 0,
            partition_key: 0,
        }
    }

    fn inflight(id: u64, k: u32, ones: &[u32]) -> InFlight {
        InFlight {
            txn: mk_txn(id),
            fvec: Arc::new(FeatureVector::from_ones(k, ones.iter().copied())),
        }
    }

    fn empty_stats(n: usize) -> ResponseStats {
        ResponseStats { per_queue_mean: vec![None; n], global_mean: 0.0, global_std: 0.0 }
    }

    /// Model scoring the V3 AND bit `bit` with weight `w` and bias `b`.
    fn v3_model(k: u32, bit: u32, w: f64, b: f64) -> Arc<AbortModel> {
        let mut m = AbortModel::zero(k);
        m.set_weight((2 * k + bit) as usize, w);
        m.set_bias(b);
        Arc::new(m)
    }

    #[test]
    fn random_single_queue_and_determinism() {
        let queues = Queues::new(1, 8, 10);
        let stats = empty_stats(1);
        let mut p = RandomPolicy::new(7);
        for i in 0..50 {
            assert_eq!(p.assign(&inflight(i, 8, &[]), &queues, &stats).queue_index, 0);
        }
        let seq = |seed: u64| -> Vec<usize> {
            let queues = Queues::new(5, 8, 10);
            let mut p = RandomPolicy::new(seed);
            (0..100)
                .map(|i| p.assign(&inflight(i, 8, &[]), &queues, &empty_stats(5)).queue_index)
                .collect()
        };
        assert_eq!(seq(3), seq(3));
        assert_ne!(seq(3), seq(4));
    }

    #[test]
    fn random_is_uniform_over_nineteen_queues() {
        let queues = Queues::new(19, 8, 10);
        let stats = empty_stats(19);
        let mut p = RandomPolicy::new(11);
        let n = 100_000usize;
        let mut counts = vec![0usize; 19];
        for i in 0..n {
            counts[p.assign(&inflight(i as u64, 8, &[]), &queues, &stats).queue_index] += 1;
        }
        for (q, &c) in counts.iter().enumerate() {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - 1.0 / 19.0).abs() < 0.005,
                "queue {q} frequency {freq}"
            );
        }
    }

    #[test]
    fn search_empty_queues_falls_back_to_random() {
        let queues = Queues::new(4, 8, 10);
        let mut p = SearchPolicy::new(v3_model(8, 3, 4.0, 0.0), 1);
        let d = p.assign(&inflight(10, 8, &[3]), &queues, &empty_stats(4));
        assert_eq!(d.reason, Reason::RandomFallback);
        assert_eq!(p.eval_count(), 0);
    }

    #[test]
    fn search_takes_argmax_over_all_queued() {
        let mut queues = Queues::new(3, 8, 10);
        // Queue 0: shares bit 3 (AND bit on, p = sigmoid(4) ~ 0.98).
        // Queue 2: no shared bit (p = 0.5).
        queues.enqueue(0, inflight(1, 8, &[3, 5]));
        queues.enqueue(2, inflight(2, 8, &[6]));
        let model = v3_model(8, 3, 4.0, 0.0);
        let mut p = SearchPolicy::new(model.clone(), 1);
        let newcomer = inflight(10, 8, &[3]);
        let d = p.assign(&newcomer, &queues, &empty_stats(3));
        assert_eq!(d.queue_index, 0);
        assert_eq!(d.reason, Reason::ModelMatch);
        assert!(d.score > 0.9);
        // Cost bound: one evaluation per queued transaction.
        assert_eq!(p.eval_count(), 2);
        // Single queued transaction: its queue wins regardless of score.
        let mut only = Queues::new(3, 8, 10);
        only.enqueue(1, inflight(1, 8, &[6]));
        let d = SearchPolicy::new(model, 1).assign(&newcomer, &only, &empty_stats(3));
        assert_eq!((d.queue_index, d.reason), (1, Reason::ModelMatch));
    }

    #[test]
    fn bfs_empty_queues_land_on_the_random_start() {
        let queues = Queues::new(6, 8, 10);
        let mut p = BfsPolicy::new(v3_model(8, 3, 4.0, 0.0), 0.5, 2);
        let d = p.assign(&inflight(5, 8, &[3]), &queues, &empty_stats(6));
        assert_eq!(d.reason, Reason::RandomFallback);
        assert_eq!(p.eval_count(), 0);
    }

    #[test]
    fn bfs_threshold_hit_enqueues_behind_that_head() {
        let mut queues = Queues::new(5, 8, 10);
        queues.enqueue(3, inflight(1, 8, &[3, 4]));
        queues.enqueue(1, inflight(2, 8, &[6]));
        let mut p = BfsPolicy::new(v3_model(8, 3, 4.0, 0.0), 0.5, 2);
        let d = p.assign(&inflight(10, 8, &[3]), &queues, &empty_stats(5));
        assert_eq!(d.queue_index, 3);
        assert_eq!(d.reason, Reason::ThresholdHit);
        assert!(d.score > 0.5);
        // At most one head evaluation per queue per pass.
        assert!(p.eval_count() <= 5);
    }

    #[test]
    fn bfs_never_evaluates_younger_heads() {
        let mut queues = Queues::new(3, 8, 10);
        // Every head is younger (larger id) than the incoming transaction.
        queues.enqueue(0, inflight(100, 8, &[3]));
        queues.enqueue(1, inflight(101, 8, &[3]));
        queues.enqueue(2, inflight(102, 8, &[3]));
        let mut p = BfsPolicy::new(v3_model(8, 3, 4.0, 0.0), 0.5, 2);
        let d = p.assign(&inflight(10, 8, &[3]), &queues, &empty_stats(3));
        assert_eq!(d.reason, Reason::RandomFallback);
        assert_eq!(p.eval_count(), 0);
    }

    #[test]
    fn bfs_below_threshold_exhausts_and_falls_back() {
        let mut queues = Queues::new(2, 8, 10);
        queues.enqueue(0, inflight(1, 8, &[6]));
        queues.enqueue(1, inflight(2, 8, &[7]));
        let mut p = BfsPolicy::new(v3_model(8, 3, 4.0, 0.0), 0.5, 9);
        let d = p.assign(&inflight(10, 8, &[3]), &queues, &empty_stats(2));
        assert_eq!(d.reason, Reason::RandomFallback);
        assert_eq!(p.eval_count(), 2);
    }

    /// Route a vector through the real enqueue path (R fold + policy
    /// cache), then drop it from the FIFO so only the history remains.
    fn seed_history(queues: &mut Queues, p: &mut BalancedVectorPolicy, q: usize, ones: &[u32]) {
        let k = queues.k_bits();
        let fv = FeatureVector::from_ones(k, ones.iter().copied());
        queues.enqueue(q, InFlight { txn: mk_txn(0), fvec: Arc::new(fv.clone()) });
        p.on_enqueued(q, &fv);
        queues.pop_head(q);
    }

    #[test]
    fn balanced_vector_cold_start_takes_last_queue() {
        let queues = Queues::new(4, 8, 10);
        let mut p = BalancedVectorPolicy::new(Arc::new(AbortModel::zero(8)), 4, BalanceMode::Reroute);
        let d = p.assign(&inflight(1, 8, &[2]), &queues, &empty_stats(4));
        // All probabilities are 0.5; the `>=` update makes the last queue
        // win.
        assert_eq!(d.queue_index, 3);
        assert_eq!(d.reason, Reason::ModelMatch);
        assert_eq!(d.score, 0.5);
        assert_eq!(p.eval_count(), 4);
    }

    #[test]
    fn balanced_vector_follows_the_v3_mass() {
        let k = 8u32;
        let model = v3_model(k, 5, 3.0, 0.0);
        let mut queues = Queues::new(4, k, 10);
        let mut p = BalancedVectorPolicy::new(model, 4, BalanceMode::Reroute);
        // Seed queue 2's centroid with bit 5.
        seed_history(&mut queues, &mut p, 2, &[5]);
        let d = p.assign(&inflight(1, k, &[5]), &queues, &empty_stats(4));
        assert_eq!(d.queue_index, 2);
        assert_eq!(d.reason, Reason::ModelMatch);
        assert!(d.score > 0.5);
    }

    #[test]
    fn balanced_vector_probability_matches_predict_centroid() {
        let k = 16u32;
        let mut model = AbortModel::zero(k);
        for i in 0..(3 * k) as usize {
            model.set_weight(i, ((i * 7 % 13) as f64 - 6.0) / 5.0);
        }
        model.set_bias(0.25);
        let model = Arc::new(model);
        let mut queues = Queues::new(2, k, 10);
        let mut p = BalancedVectorPolicy::new(model.clone(), 2, BalanceMode::Reroute);
        for ones in [&[1u32, 4][..], &[4, 9], &[2]] {
            seed_history(&mut queues, &mut p, 0, ones);
        }
        let probe = FeatureVector::from_ones(k, [4, 11]);
        let fast = p.queue_probability(&probe, queues.state(0), 0);
        let reference = model
            .predict_centroid(&probe, &queues.state(0).r_avg())
            .unwrap();
        assert!((fast - reference).abs() <= 1e-9, "{fast} vs {reference}");
    }

    #[test]
    fn balanced_vector_reroutes_over_limit_queues() {
        let queues = Queues::new(3, 8, 10);
        let mut p = BalancedVectorPolicy::new(Arc::new(AbortModel::zero(8)), 3, BalanceMode::Reroute);
        // Ties put the choice on queue 2; queue 2 is over limit, queue 1
        // has the minimum response time.
        let stats = ResponseStats {
            per_queue_mean: vec![Some(400_000.0), Some(300_000.0), Some(2_000_000.0)],
            global_mean: 500_000.0,
            global_std: 300_000.0,
        };
        let d = p.assign(&inflight(1, 8, &[2]), &queues, &stats);
        assert_eq!(d.queue_index, 1);
        assert_eq!(d.reason, Reason::BalanceOverride);
    }

    #[test]
    fn balanced_vector_blocking_mode_blocks_until_empty() {
        let mut queues = Queues::new(2, 8, 10);
        let model = Arc::new(AbortModel::zero(8));
        let mut p = BalancedVectorPolicy::new(model, 2, BalanceMode::BlockUntilEmpty);
        let stats = ResponseStats {
            per_queue_mean: vec![Some(100_000.0), Some(900_000.0)],
            global_mean: 200_000.0,
            global_std: 100_000.0,
        };
        // Tie selection picks queue 1; it is over limit, gets blocked, and
        // the transaction routes to queue 0.
        queues.enqueue(1, inflight(50, 8, &[1]));
        let d = p.assign(&inflight(1, 8, &[2]), &queues, &stats);
        assert_eq!(d.queue_index, 0);
        assert_eq!(d.reason, Reason::BalanceOverride);
        // Still blocked while queue 1 is non-empty.
        let d = p.assign(&inflight(2, 8, &[2]), &queues, &stats);
        assert_eq!(d.queue_index, 0);
        // Drain queue 1: it unblocks and ties again select it.
        queues.pop_head(1);
        let d = p.assign(&inflight(3, 8, &[2]), &queues, &empty_stats(2));
        assert_eq!(d.queue_index, 1);
    }

    #[test]
    fn cluster_policy_follows_the_worked_example() {
        let cs = Arc::new(centroid_set(2, vec![vec![0.8, 0.2], vec![0.2, 0.8]]));
        let mut p = ClusterPolicy::new(cs, 2, true).unwrap();
        let d = p.assign(&inflight(1, 2, &[0]), &Queues::new(2, 2, 10), &empty_stats(2));
        assert_eq!(d.queue_index, 0);
        let d = p.assign(&inflight(2, 2, &[1]), &Queues::new(2, 2, 10), &empty_stats(2));
        assert_eq!(d.queue_index, 1);
        assert_eq!(p.eval_count(), 4);
    }

    #[test]
    fn cluster_policy_breaks_ties_low_and_reroutes() {
        let cs = Arc::new(centroid_set(2, vec![vec![0.5, 0.5], vec![0.5, 0.5]]));
        let mut p = ClusterPolicy::new(cs.clone(), 2, true).unwrap();
        let d = p.assign(&inflight(1, 2, &[0]), &Queues::new(2, 2, 10), &empty_stats(2));
        assert_eq!(d.queue_index, 0);
        // Over-limit nearest queue: reroute to the minimum-rt queue.
        let cs5 = Arc::new(centroid_set(
            2,
            vec![
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.3, 0.3],
                vec![0.4, 0.4],
                vec![0.9, 0.9],
            ],
        ));
        let mut p = ClusterPolicy::new(cs5, 5, true).unwrap();
        let stats = ResponseStats {
            per_queue_mean: vec![
                Some(2_000_000.0),
                Some(500_000.0),
                Some(600_000.0),
                Some(700_000.0),
                Some(100_000.0),
            ],
            global_mean: 500_000.0,
            global_std: 300_000.0,
        };
        let d = p.assign(&inflight(1, 2, &[0]), &Queues::new(5, 2, 10), &stats);
        assert_eq!(d.queue_index, 4);
        assert_eq!(d.reason, Reason::BalanceOverride);
        // Unbalanced variant ignores response times entirely.
        let cs5b = Arc::new(centroid_set(2, vec![vec![1.0, 0.0]; 5]));
        let mut p = ClusterPolicy::new(cs5b, 5, false).unwrap();
        let d = p.assign(&inflight(1, 2, &[0]), &Queues::new(5, 2, 10), &stats);
        assert_eq!(d.queue_index, 0);
        assert_eq!(d.reason, Reason::ModelMatch);
    }

    fn centroid_set(k_bits: u32, centroids: Vec<Vec<f64>>) -> CentroidSet {
        let counts = vec![1usize; centroids.len()];
        CentroidSet::from_centroids(k_bits, centroids, counts).unwrap()
    }

    #[test]
    fn cluster_policy_requires_one_centroid_per_queue() {
        let cs = Arc::new(centroid_set(2, vec![vec![0.5, 0.5]]));
        assert!(ClusterPolicy::new(cs, 3, true).is_err());
    }

    #[test]
    fn override_arithmetic_and_single_queue() {
        // Scripted: chosen mean 2.0 s, global mean 0.5 s, std 0.3 s.
        let stats = ResponseStats {
            per_queue_mean: vec![Some(2_000_000.0), Some(400_000.0), Some(300_000.0)],
            global_mean: 500_000.0,
            global_std: 300_000.0,
        };
        assert_eq!(response_time_override(0, &stats), 2);
        // All equal response times: unchanged.
        let flat = ResponseStats {
            per_queue_mean: vec![Some(100.0); 3],
            global_mean: 100.0,
            global_std: 0.0,
        };
        assert_eq!(response_time_override(1, &flat), 1);
        // Single queue never moves.
        let single = ResponseStats {
            per_queue_mean: vec![Some(9e9)],
            global_mean: 1.0,
            global_std: 0.0,
        };
        assert_eq!(response_time_override(0, &single), 0);
        // Empty-history queues take the global mean and never trigger.
        let cold = ResponseStats {
            per_queue_mean: vec![None, Some(100.0)],
            global_mean: 100.0,
            global_std: 0.0,
        };
        assert_eq!(response_time_override(0, &cold), 0);
    }

    #[test]
    fn response_stats_pool_all_windows() {
        let mut queues = Queues::new(2, 8, 4);
        queues.record_response(0, 100);
        queues.record_response(0, 300);
        queues.record_response(1, 200);
        let stats = ResponseStats::compute(&queues);
        assert_eq!(stats.per_queue_mean[0], Some(200.0));
        assert_eq!(stats.per_queue_mean[1], Some(200.0));
        assert!((stats.global_mean - 200.0).abs() < 1e-9);
        let expected_std = (((100.0f64 - 200.0).powi(2) + (300.0f64 - 200.0).powi(2)) / 3.0).sqrt();
        assert!((stats.global_std - expected_std).abs() < 1e-9);
        // Ring eviction keeps the window bounded.
        for i in 0..10 {
            queues.record_response(0, i * 10);
        }
        assert_eq!(queues.state(0).rt_window().len(), 4);
    }

    #[test]
    fn cluster_policy_recovers_disjoint_conflict_groups() {
        // Synthetic workload of k disjoint conflict groups: group g's
        // transactions share bit g plus noise bits. Training on that
        // workload's abort log routes >= 95% of each group to one queue.
        use crate::cluster::kmeans_fit;
        use crate::feature::AbortVector;
        let k_bits = 64u32;
        let groups = 4usize;
        let mut rng = crate::rng_from_seed(17);
        let mut abort_log = Vec::new();
        for g in 0..groups as u32 {
            for _ in 0..200 {
                // Conflicting pairs share the group bit; the AND kills
                // most noise.
                let mut ones = vec![g];
                if rng.gen_bool(0.2) {
                    ones.push(groups as u32 + rng.gen_range(0..8));
                }
                abort_log.push(AbortVector::from_vector(FeatureVector::from_ones(
                    k_bits,
                    ones,
                )));
            }
        }
        let cs = Arc::new(kmeans_fit(&abort_log, groups, &mut rng, 100).unwrap());
        let mut policy = ClusterPolicy::new(cs, groups, false).unwrap();
        let queues = Queues::new(groups, k_bits, 10);
        let stats = empty_stats(groups);
        let mut routed: Vec<std::collections::HashMap<usize, u32>> =
            vec![std::collections::HashMap::new(); groups];
        for i in 0..4000u64 {
            let g = (i % groups as u64) as u32;
            let mut ones = vec![g, groups as u32 + rng.gen_range(0..8)];
            ones.push(12 + rng.gen_range(0..40));
            let txn = InFlight {
                txn: mk_txn(i),
                fvec: Arc::new(FeatureVector::from_ones(k_bits, ones)),
            };
            let d = policy.assign(&txn, &queues, &stats);
            *routed[g as usize].entry(d.queue_index).or_insert(0) += 1;
        }
        let mut used = Vec::new();
        for (g, counts) in routed.iter().enumerate() {
            let total: u32 = counts.values().sum();
            let (&best_q, &best) = counts.iter().max_by_key(|(_, &c)| c).unwrap();
            assert!(
                f64::from(best) / f64::from(total) >= 0.95,
                "group {g}: best queue share {}",
                f64::from(best) / f64::from(total)
            );
            used.push(best_q);
        }
        used.sort_unstable();
        used.dedup();
        assert_eq!(used.len(), groups, "groups share queues: {used:?}");
    }

    #[test]
    fn model_sparse_pair_evaluation_matches_pair_vector_route() {
        let mut model = AbortModel::zero(8);
        for i in 0..24 {
            model.set_weight(i, (i as f64 - 12.0) / 7.0);
        }
        model.set_bias(-0.3);
        let a = FeatureVector::from_ones(8, [1, 3, 6]);
        let b = FeatureVector::from_ones(8, [3, 4]);
        let via_pair = model.predict_pair(&pair_vector(&a, &b).unwrap()).unwrap();
        let sparse = model.predict_sparse(&a, &b).unwrap();
        assert!((via_pair - sparse).abs() <= 1e-12);
    }
}
