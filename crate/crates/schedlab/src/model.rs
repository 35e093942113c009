//! Pairwise abort prediction: labeled pair examples from the execution
//! log and the logistic-regression model over `V1|V2|(V1 & V2)`.
//!
//! Evaluation is sparse: a prediction costs one weight lookup per set bit,
//! so scoring a pair is proportional to the transactions' reference
//! counts, not the vector length.

use std::io::{BufRead, BufReader, Read, Write};

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::feature::{pair_vector, FeatureVector, PairVector};
use crate::rng_from_seed;
use crate::workload::Micros;

// ---------------------------------------------------------------------------
// Log records and pair examples
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    Abort,
    Commit,
}

/// One execution-log line: the subject transaction plus its paired partner
/// (the identified conflicter for aborts, a random concurrent transaction
/// for commits).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub kind: LogKind,
    pub subject_id: u64,
    pub other_id: u64,
    pub timestamp: Micros,
    pub subject_features: FeatureVector,
    pub other_features: FeatureVector,
}

/// A training example: pair vector plus abort label.
#[derive(Debug, Clone)]
pub struct PairExample {
    pub x: PairVector,
    pub y: bool,
}

impl LogRecord {
    pub fn to_example(&self) -> Result<PairExample> {
        Ok(PairExample {
            x: pair_vector(&self.subject_features, &self.other_features)?,
            y: self.kind == LogKind::Abort,
        })
    }
}

/// Uniform sample without replacement of `min(sample_size, |log|)` records,
/// mapped to labeled pair examples.
pub fn build_training_set(
    log: &[LogRecord],
    sample_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PairExample>> {
    if log.is_empty() {
        return Err(Error::NoTrainingData("execution log is empty".into()));
    }
    let amount = sample_size.min(log.len());
    let mut idx = sample(rng, log.len(), amount).into_vec();
    idx.sort_unstable();
    idx.iter().map(|&i| log[i].to_example()).collect()
}

/// Class-balanced sample: up to `total/2` records of each label, drawn
/// uniformly without replacement within each class. This is the sample the
/// harness trains and cross-validates on, so the majority baseline sits at
/// 0.5.
pub fn build_balanced_training_set(
    log: &[LogRecord],
    total: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PairExample>> {
    let aborts: Vec<&LogRecord> = log.iter().filter(|r| r.kind == LogKind::Abort).collect();
    let commits: Vec<&LogRecord> = log.iter().filter(|r| r.kind == LogKind::Commit).collect();
    if aborts.is_empty() || commits.is_empty() {
        return Err(Error::NoTrainingData(format!(
            "need both labels to balance: {} aborts, {} commits",
            aborts.len(),
            commits.len()
        )));
    }
    let per_class = (total / 2).min(aborts.len()).min(commits.len());
    let mut out = Vec::with_capacity(2 * per_class);
    for class in [&aborts, &commits] {
        for i in sample(rng, class.len(), per_class) {
            out.push(class[i].to_example()?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// SGD hyperparameters. The seed fixes the shuffle order, which makes
/// training deterministic.
#[derive(Debug, Clone, Copy)]
pub struct Hyper {
    pub learning_rate: f64,
    pub epochs: u32,
    pub l2: f64,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { learning_rate: 0.1, epochs: 10, l2: 1e-4, seed: 0 }
    }
}

/// Logistic-regression weights over the `3 * k_bits` pair vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AbortModel {
    k_bits: u32,
    weights: Vec<f64>,
    bias: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl AbortModel {
    pub fn zero(k_bits: u32) -> Self {
        AbortModel { k_bits, weights: vec![0.0; 3 * k_bits as usize], bias: 0.0 }
    }

    pub fn k_bits(&self) -> u32 {
        self.k_bits
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_weight(&mut self, index: usize, w: f64) {
        self.weights[index] = w;
    }

    pub fn set_bias(&mut self, b: f64) {
        self.bias = b;
    }

    fn logit_pair(&self, pair: &PairVector) -> f64 {
        let mut z = self.bias;
        for &i in pair.ones() {
            z += self.weights[i as usize];
        }
        z
    }

    /// Abort probability for a pair vector; sparse in its set bits.
    pub fn predict_pair(&self, pair: &PairVector) -> Result<f64> {
        if pair.k_bits() != self.k_bits {
            return Err(Error::Invariant(format!(
                "pair vector k_bits {} does not match model {}",
                pair.k_bits(),
                self.k_bits
            )));
        }
        Ok(sigmoid(self.logit_pair(pair)))
    }

    /// Abort probability for a transaction pair.
    pub fn predict(&self, v1: &FeatureVector, v2: &FeatureVector) -> Result<f64> {
        self.predict_pair(&pair_vector(v1, v2)?)
    }

    /// [`AbortModel::predict`] without materializing the pair vector; the
    /// schedulers' hot path.
    pub fn predict_sparse(&self, v1: &FeatureVector, v2: &FeatureVector) -> Result<f64> {
        if v1.k_bits() != self.k_bits || v2.k_bits() != self.k_bits {
            return Err(Error::Invariant(format!(
                "predict_sparse length mismatch: {} / {} vs model {}",
                v1.k_bits(),
                v2.k_bits(),
                self.k_bits
            )));
        }
        let k = self.k_bits as usize;
        let mut z = self.bias;
        for &i in v1.ones() {
            z += self.weights[i as usize];
        }
        for &j in v2.ones() {
            z += self.weights[k + j as usize];
        }
        let (a, b) = (v1.ones(), v2.ones());
        let (mut i, mut j) = (0usize, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    z += self.weights[2 * k + a[i] as usize];
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(sigmoid(z))
    }

    /// Abort probability against a float centroid: evaluates the logistic
    /// function on the generalized pair vector `v | r_avg | (v ⊙ r_avg)`.
    /// Reduces exactly to [`AbortModel::predict`] when `r_avg` is binary.
    pub fn predict_centroid(&self, v: &FeatureVector, r_avg: &[f64]) -> Result<f64> {
        if v.k_bits() != self.k_bits || r_avg.len() != self.k_bits as usize {
            return Err(Error::Invariant(format!(
                "predict_centroid length mismatch: v {} r {} model {}",
                v.k_bits(),
                r_avg.len(),
                self.k_bits
            )));
        }
        if r_avg.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::Invariant("centroid entry outside [0, 1]".into()));
        }
        let k = self.k_bits as usize;
        let mut z = self.bias;
        for &i in v.ones() {
            z += self.weights[i as usize];
            z += self.weights[2 * k + i as usize] * r_avg[i as usize];
        }
        for (j, &r) in r_avg.iter().enumerate() {
            z += self.weights[k + j] * r;
        }
        Ok(sigmoid(z))
    }

    /// Top weights by magnitude: `(index, segment 0..3, weight)`.
    pub fn top_weights(&self, n: usize) -> Vec<(usize, u32, f64)> {
        let k = self.k_bits as usize;
        let mut idx: Vec<usize> = (0..self.weights.len())
            .filter(|&i| self.weights[i] != 0.0)
            .collect();
        idx.sort_by(|&a, &b| {
            self.weights[b]
                .abs()
                .total_cmp(&self.weights[a].abs())
                .then(a.cmp(&b))
        });
        idx.truncate(n);
        idx.into_iter()
            .map(|i| (i, (i / k) as u32, self.weights[i]))
            .collect()
    }

    // ---- serialization ----

    const MAGIC: &'static str = "schedlab-abort-model";
    const VERSION: u32 = 1;

    pub fn save(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} v{}", Self::MAGIC, Self::VERSION)?;
        writeln!(w, "k_bits {}", self.k_bits)?;
        writeln!(w, "bias {}", self.bias)?;
        for (i, &wt) in self.weights.iter().enumerate() {
            if wt != 0.0 {
                writeln!(w, "{i} {wt}")?;
            }
        }
        Ok(())
    }

    pub fn load(r: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty model file".into()))??;
        let expected = format!("{} v{}", Self::MAGIC, Self::VERSION);
        if header != expected {
            return Err(Error::Version(format!("`{header}`, expected `{expected}`")));
        }
        let k_bits: u32 = parse_kv(&mut lines, "k_bits")?;
        let bias: f64 = parse_kv(&mut lines, "bias")?;
        let mut model = AbortModel::zero(k_bits);
        model.bias = bias;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (i, w) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("bad weight line `{line}`")))?;
            let i: usize = i.parse().map_err(|_| Error::Parse(format!("bad index `{i}`")))?;
            if i >= model.weights.len() {
                return Err(Error::Parse(format!("weight index {i} out of range")));
            }
            model.weights[i] = w
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad weight `{w}`")))?;
        }
        Ok(model)
    }
}

fn parse_kv<T: std::str::FromStr>(
    lines: &mut impl Iterator<Item = std::io::Result<String>>,
    key: &str,
) -> Result<T> {
    let line = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("missing `{key}` line")))??;
    let (k, v) = line
        .split_once(' ')
        .ok_or_else(|| Error::Parse(format!("bad `{key}` line `{line}`")))?;
    if k != key {
        return Err(Error::Parse(format!("expected `{key}`, found `{k}`")));
    }
    v.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad `{key}` value `{v}`")))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Per-example regularized logistic loss (used by the finite-difference
/// gradient check).
pub fn example_loss(weights: &[f64], bias: f64, x: &PairVector, y: bool, l2: f64) -> f64 {
    let mut z = bias;
    for &i in x.ones() {
        z += weights[i as usize];
    }
    let y = if y { 1.0 } else { 0.0 };
    // Numerically stable cross-entropy: log(1+e^z) - y*z.
    let log1p_exp = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
    let ce = log1p_exp - y * z;
    let reg = 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    ce + reg
}

/// Analytic gradient of [`example_loss`]: dense weight gradient plus bias
/// gradient.
pub fn example_grad(weights: &[f64], bias: f64, x: &PairVector, y: bool, l2: f64) -> (Vec<f64>, f64) {
    let mut z = bias;
    for &i in x.ones() {
        z += weights[i as usize];
    }
    let err = sigmoid(z) - if y { 1.0 } else { 0.0 };
    let mut grad: Vec<f64> = weights.iter().map(|w| l2 * w).collect();
    for &i in x.ones() {
        grad[i as usize] += err;
    }
    (grad, err)
}

/// Train by stochastic gradient descent over the regularized logistic
/// loss. Deterministic given `hyper.seed`. Returns the model and the mean
/// training loss after each epoch.
pub fn train_with_curve(examples: &[PairExample], hyper: Hyper) -> Result<(AbortModel, Vec<f64>)> {
    if examples.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "{} examples, need at least 2",
            examples.len()
        )));
    }
    let positives = examples.iter().filter(|e| e.y).count();
    if positives == 0 || positives == examples.len() {
        return Err(Error::DegenerateData(
            "training set holds a single class".into(),
        ));
    }
    if examples.iter().all(|e| e.x.is_empty()) {
        return Err(Error::DegenerateData(
            "all pair vectors are zero: no feature signal".into(),
        ));
    }
    let k_bits = examples[0].x.k_bits();
    if examples.iter().any(|e| e.x.k_bits() != k_bits) {
        return Err(Error::Invariant("mixed k_bits in training set".into()));
    }

    let mut model = AbortModel::zero(k_bits);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = rng_from_seed(hyper.seed);
    let lr = hyper.learning_rate;
    let decay = 1.0 - lr * hyper.l2;
    let mut curve = Vec::with_capacity(hyper.epochs as usize);
    for _ in 0..hyper.epochs {
        shuffle(&mut order, &mut rng);
        for &i in &order {
            let ex = &examples[i];
            let err = sigmoid(model.logit_pair(&ex.x)) - if ex.y { 1.0 } else { 0.0 };
            if hyper.l2 != 0.0 {
                for w in &mut model.weights {
                    *w *= decay;
                }
            }
            for &j in ex.x.ones() {
                model.weights[j as usize] -= lr * err;
            }
            model.bias -= lr * err;
        }
        let mean_loss = examples
            .iter()
            .map(|e| example_loss(&model.weights, model.bias, &e.x, e.y, hyper.l2))
            .sum::<f64>()
            / examples.len() as f64;
        curve.push(mean_loss);
    }
    if !model.weights.iter().all(|w| w.is_finite()) || !model.bias.is_finite() {
        return Err(Error::DegenerateData("training diverged to non-finite weights".into()));
    }
    Ok((model, curve))
}

/// [`train_with_curve`] without the loss curve.
pub fn train(examples: &[PairExample], hyper: Hyper) -> Result<AbortModel> {
    train_with_curve(examples, hyper).map(|(m, _)| m)
}

fn shuffle(order: &mut [usize], rng: &mut impl Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CvReport {
    pub accuracy: f64,
    pub fold_accuracies: Vec<f64>,
    /// Accuracy of always answering the majority class.
    pub majority_baseline: f64,
}

/// Stratified k-fold cross-validation at the 0.5 classification threshold.
pub fn cross_validate(examples: &[PairExample], folds: usize, hyper: Hyper) -> Result<CvReport> {
    if folds < 2 {
        return Err(Error::Config("need at least 2 folds".into()));
    }
    if examples.len() < folds {
        return Err(Error::DegenerateData(format!(
            "{} examples for {} folds",
            examples.len(),
            folds
        )));
    }
    // Stratify: shuffle each class separately, then deal round-robin.
    let mut rng = rng_from_seed(hyper.seed ^ 0x5eed_f01d);
    let mut fold_of = vec![0usize; examples.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].y == class).collect();
        shuffle(&mut idx, &mut rng);
        for (pos, &i) in idx.iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }
    let mut fold_accuracies = Vec::with_capacity(folds);
    for fold in 0..folds {
        let train_set: Vec<PairExample> = examples
            .iter()
            .zip(&fold_of)
            .filter(|(_, &f)| f != fold)
            .map(|(e, _)| e.clone())
            .collect();
        let test_set: Vec<&PairExample> = examples
            .iter()
            .zip(&fold_of)
            .filter(|(_, &f)| f == fold)
            .map(|(e, _)| e)
            .collect();
        if test_set.is_empty() {
            continue;
        }
        let model = train(&train_set, hyper)?;
        let correct = test_set
            .iter()
            .filter(|e| (model.predict_pair(&e.x).unwrap() > 0.5) == e.y)
            .count();
        fold_accuracies.push(correct as f64 / test_set.len() as f64);
    }
    let accuracy = fold_accuracies.iter().sum::<f64>() / fold_accuracies.len() as f64;
    let positives = examples.iter().filter(|e| e.y).count();
    let majority_baseline =
        positives.max(examples.len() - positives) as f64 / examples.len() as f64;
    Ok(CvReport { accuracy, fold_accuracies, majority_baseline })
}

// ---------------------------------------------------------------------------
// Log file round-trip
// ---------------------------------------------------------------------------

const LOG_MAGIC: &str = "schedlab-log";
const LOG_VERSION: u32 = 1;

fn ones_csv(v: &FeatureVector) -> String {
    v.ones().iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

/// Write `kind;subject;other;timestamp;subject_bits;other_bits` lines.
pub fn write_log(mut w: impl Write, k_bits: u32, records: &[LogRecord]) -> Result<()> {
    writeln!(w, "{LOG_MAGIC} v{LOG_VERSION} k_bits={k_bits}")?;
    for r in records {
        writeln!(
            w,
            "{};{};{};{};{};{}",
            match r.kind {
                LogKind::Abort => "abort",
                LogKind::Commit => "commit",
            },
            r.subject_id,
            r.other_id,
            r.timestamp,
            ones_csv(&r.subject_features),
            ones_csv(&r.other_features),
        )?;
    }
    Ok(())
}

pub fn read_log(r: impl Read) -> Result<(u32, Vec<LogRecord>)> {
    let mut lines = BufReader::new(r).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty log file".into()))??;
    let expected_prefix = format!("{LOG_MAGIC} v{LOG_VERSION} k_bits=");
    let k_bits: u32 = header
        .strip_prefix(&expected_prefix)
        .ok_or_else(|| Error::Version(format!("`{header}`")))?
        .parse()
        .map_err(|_| Error::Parse("bad k_bits in log header".into()))?;
    let mut records = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(';').collect();
        if parts.len() != 6 {
            return Err(Error::Parse(format!("bad log line `{line}`")));
        }
        let kind = match parts[0] {
            "abort" => LogKind::Abort,
            "commit" => LogKind::Commit,
            other => return Err(Error::Parse(format!("bad log kind `{other}`"))),
        };
        let parse_u64 = |s: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::Parse(format!("bad number `{s}`")))
        };
        let parse_ones = |s: &str| -> Result<FeatureVector> {
            let ones: Vec<u32> = if s.is_empty() {
                Vec::new()
            } else {
                s.split(',')
                    .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad bit `{t}`"))))
                    .collect::<Result<_>>()?
            };
            Ok(FeatureVector::from_ones(k_bits, ones))
        };
        records.push(LogRecord {
            kind,
            subject_id: parse_u64(parts[1])?,
            other_id: parse_u64(parts[2])?,
            timestamp: parse_u64(parts[3])?,
            subject_features: parse_ones(parts[4])?,
            other_features: parse_ones(parts[5])?,
        });
    }
    Ok((k_bits, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::abort_vector;

    fn vec_of(k: u32, ones: &[u32]) -> FeatureVector {
        FeatureVector::from_ones(k, ones.iter().copied())
    }

    fn record(kind: LogKind, subject: &FeatureVector, other: &FeatureVector) -> LogRecord {
        LogRecord {
            kind,
            subject_id: 1,
            other_id: 2,
            timestamp: 0,
            subject_features: subject.clone(),
            other_features: other.clone(),
        }
    }

    /// Separable toy set: abort pairs share bit 3, commit pairs share
    /// nothing.
    fn toy_set(k: u32, n_each: usize) -> Vec<PairExample> {
        let mut out = Vec::new();
        for i in 0..n_each {
            let noise = (i % 2) as u32;
            let a1 = vec_of(k, &[3, 5 + noise]);
            let a2 = vec_of(k, &[3, 7 - noise]);
            out.push(record(LogKind::Abort, &a1, &a2).to_example().unwrap());
            let c1 = vec_of(k, &[1, 5 + noise]);
            let c2 = vec_of(k, &[2, 7 - noise]);
            out.push(record(LogKind::Commit, &c1, &c2).to_example().unwrap());
        }
        out
    }

    #[test]
    fn build_training_set_single_abort() {
        let v = vec_of(8, &[2]);
        let log = vec![record(LogKind::Abort, &v, &v)];
        let mut rng = rng_from_seed(1);
        let set = build_training_set(&log, 10, &mut rng).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set[0].y);
        assert!(build_training_set(&[], 10, &mut rng).is_err());
    }

    #[test]
    fn build_training_set_caps_at_sample_size() {
        let v = vec_of(8, &[2]);
        let log: Vec<LogRecord> = (0..20_000)
            .map(|i| {
                let mut r = record(
                    if i % 2 == 0 { LogKind::Abort } else { LogKind::Commit },
                    &v,
                    &v,
                );
                r.subject_id = i;
                r
            })
            .collect();
        let mut rng = rng_from_seed(2);
        assert_eq!(build_training_set(&log, 10_000, &mut rng).unwrap().len(), 10_000);
        assert_eq!(build_training_set(&log, 500, &mut rng).unwrap().len(), 500);
    }

    #[test]
    fn balanced_sample_is_balanced() {
        let v = vec_of(8, &[2]);
        let mut log = Vec::new();
        for i in 0..100 {
            log.push(record(LogKind::Abort, &v, &v));
            log[i * 3].subject_id = i as u64;
            log.push(record(LogKind::Commit, &v, &v));
            log.push(record(LogKind::Commit, &v, &v));
        }
        let mut rng = rng_from_seed(3);
        let set = build_balanced_training_set(&log, 120, &mut rng).unwrap();
        assert_eq!(set.len(), 120);
        assert_eq!(set.iter().filter(|e| e.y).count(), 60);
    }

    #[test]
    fn train_separates_the_toy_set() {
        let set = toy_set(16, 50);
        let (model, curve) = train_with_curve(&set, Hyper::default()).unwrap();
        let abort_pair = pair_vector(&vec_of(16, &[3, 6]), &vec_of(16, &[3, 5])).unwrap();
        let commit_pair = pair_vector(&vec_of(16, &[1, 6]), &vec_of(16, &[2, 5])).unwrap();
        assert!(model.predict_pair(&abort_pair).unwrap() > 0.9);
        assert!(model.predict_pair(&commit_pair).unwrap() < 0.1);
        // Mean training loss is non-increasing across epochs.
        for w in curve.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "loss increased: {:?}", curve);
        }
    }

    #[test]
    fn train_rejects_degenerate_sets() {
        let v = vec_of(8, &[2]);
        let one_class: Vec<PairExample> = (0..10)
            .map(|_| record(LogKind::Abort, &v, &v).to_example().unwrap())
            .collect();
        assert!(matches!(
            train(&one_class, Hyper::default()),
            Err(Error::DegenerateData(_))
        ));
        let z = FeatureVector::zero(8);
        let no_signal = vec![
            record(LogKind::Abort, &z, &z).to_example().unwrap(),
            record(LogKind::Commit, &z, &z).to_example().unwrap(),
        ];
        assert!(matches!(
            train(&no_signal, Hyper::default()),
            Err(Error::DegenerateData(_))
        ));
        assert!(train(&no_signal[..1].to_vec(), Hyper::default()).is_err());
    }

    #[test]
    fn duplicated_dataset_keeps_the_decision_pattern() {
        let set = toy_set(16, 30);
        let mut doubled = set.clone();
        doubled.extend(set.iter().cloned());
        let m1 = train(&set, Hyper::default()).unwrap();
        let m2 = train(&doubled, Hyper::default()).unwrap();
        for (a, b) in [(&[3u32, 6][..], &[3u32, 5][..]), (&[1, 6], &[2, 5]), (&[3, 1], &[3, 2])] {
            let pair = pair_vector(&vec_of(16, a), &vec_of(16, b)).unwrap();
            let p1 = m1.predict_pair(&pair).unwrap();
            let p2 = m2.predict_pair(&pair).unwrap();
            assert_eq!(p1 > 0.5, p2 > 0.5, "sign flip at {a:?}/{b:?}: {p1} vs {p2}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let set = toy_set(16, 40);
        let m1 = train(&set, Hyper::default()).unwrap();
        let m2 = train(&set, Hyper::default()).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn zero_model_predicts_half() {
        let model = AbortModel::zero(8);
        let p = model
            .predict(&vec_of(8, &[1, 3]), &vec_of(8, &[2]))
            .unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn hand_built_v3_weight_matches_sigmoid_arithmetic() {
        let k = 16u32;
        let mut model = AbortModel::zero(k);
        model.set_weight(2 * k as usize + 7, 4.0);
        model.set_bias(-2.0);
        // Pair with the AND bit set: sigmoid(2.0).
        let with = model.predict(&vec_of(k, &[7]), &vec_of(k, &[7])).unwrap();
        assert!((with - 0.8807970779778823).abs() < 1e-12);
        // AND bit clear: sigmoid(-2.0).
        let without = model.predict(&vec_of(k, &[7]), &vec_of(k, &[2])).unwrap();
        assert!((without - 0.11920292202211755).abs() < 1e-12);
        assert!(model.predict(&vec_of(k, &[7]), &vec_of(8, &[2])).is_err());
    }

    #[test]
    fn predict_centroid_reduces_to_predict_on_binary_centroids() {
        let set = toy_set(16, 30);
        let model = train(&set, Hyper::default()).unwrap();
        let v = vec_of(16, &[3, 6]);
        for other in [vec_of(16, &[3, 5]), vec_of(16, &[2]), FeatureVector::zero(16)] {
            let direct = model.predict(&v, &other).unwrap();
            let via_centroid = model.predict_centroid(&v, &other.to_dense()).unwrap();
            assert!((direct - via_centroid).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_centroid_zero_cases_and_range_check() {
        let model = AbortModel::zero(8);
        let p = model
            .predict_centroid(&vec_of(8, &[1]), &vec![0.0; 8])
            .unwrap();
        assert_eq!(p, 0.5);
        assert!(model
            .predict_centroid(&vec_of(8, &[1]), &vec![1.5; 8])
            .is_err());
        assert!(model.predict_centroid(&vec_of(8, &[1]), &vec![0.0; 7]).is_err());
    }

    #[test]
    fn predict_centroid_is_between_endpoint_predictions_for_v3_models() {
        let k = 16u32;
        let mut model = AbortModel::zero(k);
        model.set_weight(2 * k as usize + 3, 2.5);
        model.set_weight(2 * k as usize + 4, -1.5);
        let v = vec_of(k, &[3, 4]);
        let b1 = vec_of(k, &[3]);
        let b2 = vec_of(k, &[4]);
        let p1 = model.predict(&v, &b1).unwrap();
        let p2 = model.predict(&v, &b2).unwrap();
        let avg: Vec<f64> = b1
            .to_dense()
            .iter()
            .zip(b2.to_dense().iter())
            .map(|(a, b)| (a + b) / 2.0)
            .collect();
        let mid = model.predict_centroid(&v, &avg).unwrap();
        let (lo, hi) = (p1.min(p2), p1.max(p2));
        assert!(mid >= lo && mid <= hi, "{mid} outside [{lo}, {hi}]");
    }

    #[test]
    fn cross_validation_reports_baseline_and_errors() {
        let set = toy_set(16, 40);
        let report = cross_validate(&set, 4, Hyper::default()).unwrap();
        assert_eq!(report.fold_accuracies.len(), 4);
        assert!((report.majority_baseline - 0.5).abs() < 1e-9);
        assert!(report.accuracy > 0.95, "separable set accuracy {}", report.accuracy);
        assert!(cross_validate(&set[..3], 4, Hyper::default()).is_err());
    }

    #[test]
    fn label_shuffle_control_sits_near_chance() {
        // y independent of x: flip labels by index parity regardless of
        // content.
        let k = 16u32;
        let mut rng = rng_from_seed(7);
        let mut set = Vec::new();
        for i in 0..400 {
            let a = vec_of(k, &[rng.gen_range(0..k), rng.gen_range(0..k)]);
            let b = vec_of(k, &[rng.gen_range(0..k), rng.gen_range(0..k)]);
            let mut ex = record(LogKind::Abort, &a, &b).to_example().unwrap();
            ex.y = i % 2 == 0;
            set.push(ex);
        }
        let report = cross_validate(&set, 4, Hyper::default()).unwrap();
        assert!(
            (report.accuracy - 0.5).abs() <= 0.05,
            "shuffled-label accuracy {}",
            report.accuracy
        );
    }

    #[test]
    fn model_file_roundtrip_and_version_check() {
        let set = toy_set(16, 20);
        let model = train(&set, Hyper::default()).unwrap();
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let loaded = AbortModel::load(&buf[..]).unwrap();
        assert_eq!(model, loaded);
        let bad = b"schedlab-abort-model v99\nk_bits 8\nbias 0\n";
        assert!(matches!(AbortModel::load(&bad[..]), Err(Error::Version(_))));
        assert!(AbortModel::load(&b""[..]).is_err());
    }

    #[test]
    fn log_file_roundtrip() {
        let a = vec_of(8, &[2, 5]);
        let b = vec_of(8, &[0, 2]);
        let records = vec![
            record(LogKind::Abort, &a, &b),
            record(LogKind::Commit, &b, &FeatureVector::zero(8)),
        ];
        let mut buf = Vec::new();
        write_log(&mut buf, 8, &records).unwrap();
        let (k, loaded) = read_log(&buf[..]).unwrap();
        assert_eq!(k, 8);
        assert_eq!(loaded, records);
        assert!(read_log(&b"wrong header\n"[..]).is_err());
    }

    #[test]
    fn abort_vector_and_pair_agree_with_model_inputs() {
        // The V3 segment the model sees is exactly the abort vector the
        // clustering side sees.
        let a = vec_of(8, &[2, 5, 7]);
        let b = vec_of(8, &[0, 2, 6]);
        let pair = pair_vector(&a, &b).unwrap();
        let and = abort_vector(&a, &b).unwrap();
        let v3: Vec<u32> = pair.ones().iter().filter(|&&i| i >= 16).map(|i| i - 16).collect();
        assert_eq!(v3, and.ones());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_model(k: u32) -> impl Strategy<Value = AbortModel> {
            prop::collection::vec(-2.0f64..2.0, (3 * k) as usize).prop_flat_map(move |w| {
                (-1.0f64..1.0).prop_map(move |b| {
                    let mut m = AbortModel::zero(k);
                    for (i, &wi) in w.iter().enumerate() {
                        m.set_weight(i, wi);
                    }
                    m.set_bias(b);
                    m
                })
            })
        }

        fn arb_vec(k: u32) -> impl Strategy<Value = FeatureVector> {
            prop::collection::vec(0..k, 0..10)
                .prop_map(move |ones| FeatureVector::from_ones(k, ones))
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]

            /// Sparse evaluation equals the dense dot product.
            #[test]
            fn sparse_matches_dense(model in arb_model(16), a in arb_vec(16), b in arb_vec(16)) {
                let pair = pair_vector(&a, &b).unwrap();
                let sparse = model.predict_pair(&pair).unwrap();
                let mut dense = vec![0.0f64; 48];
                for &i in pair.ones() {
                    dense[i as usize] = 1.0;
                }
                let z: f64 = model.bias()
                    + dense.iter().zip(model.weights()).map(|(x, w)| x * w).sum::<f64>();
                prop_assert!((sparse - sigmoid(z)).abs() <= 1e-9);
            }

            /// Analytic gradient matches central finite differences.
            #[test]
            fn gradient_matches_finite_differences(
                model in arb_model(8),
                a in arb_vec(8),
                b in arb_vec(8),
                y in any::<bool>(),
            ) {
                let x = pair_vector(&a, &b).unwrap();
                let l2 = 1e-4;
                let (grad, bias_grad) = example_grad(model.weights(), model.bias(), &x, y, l2);
                let h = 1e-5;
                let mut w = model.weights().to_vec();
                // Probe every coordinate plus the bias.
                for j in 0..w.len() {
                    let orig = w[j];
                    w[j] = orig + h;
                    let up = example_loss(&w, model.bias(), &x, y, l2);
                    w[j] = orig - h;
                    let down = example_loss(&w, model.bias(), &x, y, l2);
                    w[j] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let denom = grad[j].abs().max(1e-3);
                    prop_assert!(
                        ((fd - grad[j]) / denom).abs() <= 1e-4,
                        "w[{}]: fd {} vs analytic {}", j, fd, grad[j]
                    );
                }
                let up = example_loss(&w, model.bias() + h, &x, y, l2);
                let down = example_loss(&w, model.bias() - h, &x, y, l2);
                let fd = (up - down) / (2.0 * h);
                let denom = bias_grad.abs().max(1e-3);
                prop_assert!(((fd - bias_grad) / denom).abs() <= 1e-4);
            }

            /// Adding a set bit with positive weight never decreases the
            /// prediction.
            #[test]
            fn positive_weight_bit_is_monotone(
                model in arb_model(16),
                a in arb_vec(16),
                b in arb_vec(16),
                extra in 0u32..16,
            ) {
                let base = pair_vector(&a, &b).unwrap();
                prop_assume!(!a.get(extra));
                prop_assume!(model.weights()[extra as usize] > 0.0);
                let mut ones: Vec<u32> = a.ones().to_vec();
                ones.push(extra);
                let a2 = FeatureVector::from_ones(16, ones);
                // Keep b fixed; the added V1 bit may also switch on an AND
                // bit, so require that weight to be non-negative too.
                let and_w = model.weights()[(32 + extra) as usize];
                prop_assume!(!b.get(extra) || and_w >= 0.0);
                let bumped = pair_vector(&a2, &b).unwrap();
                let p0 = model.predict_pair(&base).unwrap();
                let p1 = model.predict_pair(&bumped).unwrap();
                prop_assert!(p1 >= p0 - 1e-12);
            }
        }
    }
}
