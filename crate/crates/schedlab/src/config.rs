//! Flat `key = value` experiment configuration with section prefixes,
//! shared by config files and command-line overrides.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::harness::ExperimentConfig;
use crate::model::Hyper;
use crate::sched::{BalanceMode, PolicyKind};
use crate::workload::{WorkloadConfig, WorkloadKind};

/// Parse config text into ordered pairs. `#` starts a comment; blank
/// lines are skipped; the first `=` splits key from value.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key=value, found `{line}`",
                lineno + 1
            )));
        };
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Parse a `key=value` override as passed on the command line.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let Some((k, v)) = arg.split_once('=') else {
        return Err(Error::Config(format!("override `{arg}` is not key=value")));
    };
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Build an [`ExperimentConfig`] from file pairs plus overrides, applied
/// in that order. Unknown keys and bad values are rejected before any
/// work starts.
pub fn build_config(
    file_pairs: &[(String, String)],
    overrides: &[(String, String)],
) -> Result<ExperimentConfig> {
    // The workload kind decides the defaults, so find it first.
    let all = || file_pairs.iter().chain(overrides.iter());
    let kind = match all().rev().find(|(k, _)| k == "workload.kind") {
        Some((_, v)) => WorkloadKind::parse(v)
            .ok_or_else(|| Error::Config(format!("unknown workload kind `{v}`")))?,
        None => WorkloadKind::Tpcc,
    };
    let mut cfg = ExperimentConfig::defaults(kind);
    let mut scale_set = false;
    for (k, v) in all() {
        if k == "workload.scale" {
            scale_set = true;
        }
        apply(&mut cfg, k, v)?;
    }
    // Warehouse count defaults to the queue count.
    if kind == WorkloadKind::Tpcc && !scale_set {
        cfg.workload.scale = cfg.n_queues as u32;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<()> {
    fn bad(key: &str, value: &str) -> Error {
        Error::Config(format!("bad value `{value}` for `{key}`"))
    }
    macro_rules! num {
        ($ty:ty) => {
            value.parse::<$ty>().map_err(|_| bad(key, value))?
        };
    }
    let parse_bool = || -> Result<bool> {
        match value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad(key, value)),
        }
    };
    if let Some(ty) = key.strip_prefix("service_time.") {
        return cfg.workload.service_times.set_by_name(ty, num!(u64));
    }
    match key {
        "workload.kind" => {
            let kind = WorkloadKind::parse(value)
                .ok_or_else(|| Error::Config(format!("unknown workload kind `{value}`")))?;
            if kind != cfg.workload.kind {
                // Kind was already fixed by the pre-scan.
                return Err(Error::Config("workload.kind set twice inconsistently".into()));
            }
        }
        "workload.scale" => cfg.workload.scale = num!(u32),
        "workload.zipf_s" => cfg.workload.zipf_s = num!(f64),
        "workload.arrival_rate_tps" => cfg.workload.arrival_rate_tps = num!(f64),
        "workload.deterministic_arrivals" => cfg.workload.deterministic_arrivals = parse_bool()?,
        "workload.skew_users" => cfg.workload.skew_users = parse_bool()?,
        "workload.skew_items" => cfg.workload.skew_items = parse_bool()?,
        "sim.queues" => cfg.n_queues = num!(usize),
        "sim.k_bits" => cfg.k_bits = num!(u32),
        "sim.rt_window" => cfg.rt_window = num!(usize),
        "sim.idle_quantum_us" => cfg.idle_quantum_us = num!(u64),
        "sim.backlog_cap" => cfg.backlog_cap = num!(usize),
        "harness.warmup_secs" => cfg.warmup_us = (num!(f64) * 1e6) as u64,
        "harness.measure_secs" => cfg.measure_us = (num!(f64) * 1e6) as u64,
        "harness.round_secs" => cfg.round_us = (num!(f64) * 1e6) as u64,
        "harness.repeats" => cfg.repeats = num!(u32),
        "harness.train_sample" => cfg.train_sample = num!(usize),
        "harness.kmeans_max_iters" => cfg.kmeans_max_iters = num!(usize),
        "model.learning_rate" => cfg.hyper.learning_rate = num!(f64),
        "model.epochs" => cfg.hyper.epochs = num!(u32),
        "model.l2" => cfg.hyper.l2 = num!(f64),
        "policy" => {
            cfg.policy = PolicyKind::parse(value)
                .ok_or_else(|| Error::Config(format!("unknown policy `{value}`")))?
        }
        "policy.theta" => cfg.theta = num!(f64),
        "policy.balance_mode" => {
            cfg.balance_mode = match value {
                "reroute" => BalanceMode::Reroute,
                "block" => BalanceMode::BlockUntilEmpty,
                _ => return Err(bad(key, value)),
            }
        }
        "seed" => cfg.seed = num!(u64),
        _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
    }
    Ok(())
}

/// Canonical dump of a config, echoed into reports; applying these pairs
/// through [`build_config`] reproduces the config.
pub fn config_pairs(cfg: &ExperimentConfig) -> Vec<(String, String)> {
    let w = &cfg.workload;
    let mut pairs = vec![
        ("workload.kind".into(), w.kind.name().to_string()),
        ("workload.scale".into(), w.scale.to_string()),
        ("workload.zipf_s".into(), w.zipf_s.to_string()),
        ("workload.arrival_rate_tps".into(), w.arrival_rate_tps.to_string()),
        ("workload.deterministic_arrivals".into(), w.deterministic_arrivals.to_string()),
        ("workload.skew_users".into(), w.skew_users.to_string()),
        ("workload.skew_items".into(), w.skew_items.to_string()),
        ("sim.queues".into(), cfg.n_queues.to_string()),
        ("sim.k_bits".into(), cfg.k_bits.to_string()),
        ("sim.rt_window".into(), cfg.rt_window.to_string()),
        ("sim.idle_quantum_us".into(), cfg.idle_quantum_us.to_string()),
        ("sim.backlog_cap".into(), cfg.backlog_cap.to_string()),
        ("harness.warmup_secs".into(), (cfg.warmup_us as f64 / 1e6).to_string()),
        ("harness.measure_secs".into(), (cfg.measure_us as f64 / 1e6).to_string()),
        ("harness.round_secs".into(), (cfg.round_us as f64 / 1e6).to_string()),
        ("harness.repeats".into(), cfg.repeats.to_string()),
        ("harness.train_sample".into(), cfg.train_sample.to_string()),
        ("harness.kmeans_max_iters".into(), cfg.kmeans_max_iters.to_string()),
        ("model.learning_rate".into(), cfg.hyper.learning_rate.to_string()),
        ("model.epochs".into(), cfg.hyper.epochs.to_string()),
        ("model.l2".into(), cfg.hyper.l2.to_string()),
        ("policy".into(), cfg.policy.name().to_string()),
        ("policy.theta".into(), cfg.theta.to_string()),
        (
            "policy.balance_mode".into(),
            match cfg.balance_mode {
                BalanceMode::Reroute => "reroute".to_string(),
                BalanceMode::BlockUntilEmpty => "block".to_string(),
            },
        ),
        ("seed".into(), cfg.seed.to_string()),
    ];
    let defaults = crate::workload::ServiceTimes::default();
    for ty in crate::workload::TxnType::ALL {
        let micros = w.service_times.for_type(ty);
        if micros != defaults.for_type(ty) {
            pairs.push((format!("service_time.{}", ty.name()), micros.to_string()));
        }
    }
    pairs
}

/// Build default per-kind workload settings used by
/// [`ExperimentConfig::defaults`].
pub(crate) fn default_workload(kind: WorkloadKind) -> WorkloadConfig {
    match kind {
        WorkloadKind::Tpcc => WorkloadConfig::tpcc(8, 20_000.0, 0),
        WorkloadKind::Tatp => WorkloadConfig::tatp(100_000, 60_000.0, 0),
        WorkloadKind::Epinions => WorkloadConfig::epinions(8_000.0, 0),
    }
}

pub(crate) fn default_hyper() -> Hyper {
    Hyper::default()
}

#[allow(dead_code)]
fn pairs_to_map(pairs: &[(String, String)]) -> BTreeMap<String, String> {
    pairs.iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_blank_lines() {
        let text = "# a comment\n\nworkload.kind = tatp  # trailing\nseed=9\n";
        let pairs = parse_pairs(text).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("workload.kind".to_string(), "tatp".to_string()),
                ("seed".to_string(), "9".to_string())
            ]
        );
        assert!(parse_pairs("no equals here").is_err());
    }

    #[test]
    fn defaults_and_overrides_apply_in_order() {
        let file = parse_pairs("workload.kind=tatp\nseed=1\npolicy=bfs\n").unwrap();
        let overrides = vec![("seed".to_string(), "42".to_string())];
        let cfg = build_config(&file, &overrides).unwrap();
        assert_eq!(cfg.workload.kind, WorkloadKind::Tatp);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.policy, PolicyKind::Bfs);
        assert_eq!(cfg.workload.scale, 100_000);
        assert_eq!(cfg.workload.zipf_s, 1.2);
    }

    #[test]
    fn tpcc_warehouses_default_to_queue_count() {
        let file = parse_pairs("workload.kind=tpcc\nsim.queues=5\n").unwrap();
        let cfg = build_config(&file, &[]).unwrap();
        assert_eq!(cfg.workload.scale, 5);
        // An explicit scale wins.
        let file = parse_pairs("workload.kind=tpcc\nsim.queues=5\nworkload.scale=12\n").unwrap();
        let cfg = build_config(&file, &[]).unwrap();
        assert_eq!(cfg.workload.scale, 12);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_named() {
        let file = parse_pairs("bogus.key=1\n").unwrap();
        let err = build_config(&file, &[]).unwrap_err();
        assert!(err.to_string().contains("bogus.key"), "{err}");
        let file = parse_pairs("sim.queues=not_a_number\n").unwrap();
        assert!(build_config(&file, &[]).is_err());
        let file = parse_pairs("policy=dfs\n").unwrap();
        let err = build_config(&file, &[]).unwrap_err();
        assert!(err.to_string().contains("unknown policy"), "{err}");
    }

    #[test]
    fn service_time_overrides_flow_through() {
        let file = parse_pairs("service_time.NewOrder=250\n").unwrap();
        let cfg = build_config(&file, &[]).unwrap();
        assert_eq!(
            cfg.workload.service_times.for_type(crate::workload::TxnType::NewOrder),
            250
        );
        let file = parse_pairs("service_time.Nothing=250\n").unwrap();
        assert!(build_config(&file, &[]).is_err());
    }

    #[test]
    fn config_pairs_round_trip() {
        let file = parse_pairs(
            "workload.kind=epinions\nseed=7\npolicy=balanced_kmeans\nsim.queues=4\nservice_time.UpdateItemTitle=123\n",
        )
        .unwrap();
        let cfg = build_config(&file, &[]).unwrap();
        let echoed = config_pairs(&cfg);
        let rebuilt = build_config(&echoed, &[]).unwrap();
        assert_eq!(config_pairs(&rebuilt), echoed);
        let map = pairs_to_map(&echoed);
        assert_eq!(map["seed"], "7");
        assert_eq!(map["policy"], "balanced_kmeans");
        assert_eq!(map["service_time.UpdateItemTitle"], "123");
    }
}
