//! Command-line front end for the scheduling laboratory: single
//! experiments, arrival-rate sweeps, retraining rounds, model training
//! and inspection, trace auditing, and distribution-matrix export.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use schedlab::audit::{audit, read_trace_file, write_trace_file};
use schedlab::config::{build_config, parse_override, parse_pairs};
use schedlab::error::Error;
use schedlab::feature::feature_bit;
use schedlab::harness::{
    self, decisions_csv, distribution_matrix, matrix_csv, report_csv, rounds_csv, sweep_csv,
    ExperimentConfig,
};
use schedlab::model::{
    build_balanced_training_set, cross_validate, train, AbortModel, Hyper,
};
use schedlab::workload::Generator;
use schedlab::{derive_seed, rng_from_seed};

#[derive(Parser)]
#[command(name = "schedlab", version, about = "Transaction-scheduling laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config file (flat key=value; see README).
    #[arg(long)]
    config: PathBuf,
    /// Scheduling policy: random, search, bfs, balanced_vector,
    /// balanced_kmeans, unbalanced_kmeans.
    #[arg(long)]
    policy: Option<String>,
    /// Master seed controlling all randomness.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of run queues (and workers).
    #[arg(long)]
    queues: Option<usize>,
    /// Feature-vector length in bits.
    #[arg(long = "k-bits")]
    k_bits: Option<u32>,
    /// BFS early-stop threshold.
    #[arg(long)]
    theta: Option<f64>,
    /// Additional key=value overrides (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; nothing is written outside it.
    #[arg(long, default_value = "out")]
    output: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (warm-up, train, measure) and write the report.
    Run {
        #[command(flatten)]
        common: ConfigArgs,
        /// Also write decision and event traces.
        #[arg(long)]
        trace: bool,
    },
    /// Run an ascending arrival-rate sweep.
    Sweep {
        #[command(flatten)]
        common: ConfigArgs,
        /// Comma-separated arrival rates (tps), ascending.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<f64>,
        /// Parallel cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Round-based retraining: round 0 is a random baseline, each round
    /// retrains from the previous round's log.
    Rounds {
        #[command(flatten)]
        common: ConfigArgs,
        #[arg(long, default_value_t = 9)]
        rounds: u32,
        /// Log records sampled per retraining.
        #[arg(long, default_value_t = 500)]
        sample: usize,
    },
    /// Warm up under random scheduling and serialize the trained model,
    /// centroids, execution log, and feature dictionary.
    Train {
        #[command(flatten)]
        common: ConfigArgs,
    },
    /// Print the largest-magnitude weights of a serialized model.
    InspectModel {
        /// Serialized model file.
        #[arg(long)]
        model: PathBuf,
        /// How many weights to list.
        #[arg(long, default_value_t = 20)]
        top: usize,
        /// Feature dictionary (from `train`) mapping bits to strings.
        #[arg(long)]
        dict: Option<PathBuf>,
    },
    /// Check an event trace against the engine invariants.
    Audit {
        /// Event trace file (`.gz` accepted).
        #[arg(long)]
        trace: PathBuf,
    },
    /// Run one traced experiment and export the per-queue key
    /// distribution matrix.
    Distributions {
        #[command(flatten)]
        common: ConfigArgs,
    },
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::UnknownAttribute(_) => 1,
                _ => 2,
            }
        }
    }
}

fn load_config(common: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let pairs = parse_pairs(&text)?;
    let mut overrides: Vec<(String, String)> = Vec::new();
    if let Some(p) = &common.policy {
        overrides.push(("policy".into(), p.clone()));
    }
    if let Some(s) = common.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(q) = common.queues {
        overrides.push(("sim.queues".into(), q.to_string()));
    }
    if let Some(k) = common.k_bits {
        overrides.push(("sim.k_bits".into(), k.to_string()));
    }
    if let Some(t) = common.theta {
        overrides.push(("policy.theta".into(), t.to_string()));
    }
    for s in &common.set {
        overrides.push(parse_override(s)?);
    }
    build_config(&pairs, &overrides)
}

fn out_dir(common: &ConfigArgs) -> Result<&Path, Error> {
    fs::create_dir_all(&common.output)?;
    Ok(&common.output)
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { common, trace } => cmd_run(&common, trace),
        Command::Sweep { common, rates, jobs } => cmd_sweep(&common, &rates, jobs),
        Command::Rounds { common, rounds, sample } => cmd_rounds(&common, rounds, sample),
        Command::Train { common } => cmd_train(&common),
        Command::InspectModel { model, top, dict } => cmd_inspect(&model, top, dict.as_deref()),
        Command::Audit { trace } => cmd_audit(&trace),
        Command::Distributions { common } => cmd_distributions(&common),
    }
}

fn cmd_run(common: &ConfigArgs, trace: bool) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let dir = out_dir(common)?;
    if trace {
        let traced = harness::run_traced(&cfg)?;
        let report = harness::run_experiment(&cfg)?;
        fs::write(dir.join("report.csv"), report_csv(&cfg, &report))?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).unwrap())?;
        fs::write(dir.join("decisions.csv"), decisions_csv(cfg.policy.name(), &traced.decisions))?;
        write_trace_file(&dir.join("events.csv.gz"), &traced.events)?;
        println!("trace: {} decisions, {} events", traced.decisions.len(), traced.events.len());
        print_report(&cfg, &report);
    } else {
        let report = harness::run_experiment(&cfg)?;
        fs::write(dir.join("report.csv"), report_csv(&cfg, &report))?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).unwrap())?;
        print_report(&cfg, &report);
    }
    Ok(())
}

fn print_report(cfg: &ExperimentConfig, report: &schedlab::harness::Report) {
    println!(
        "{} / {}: tps {:.0} (x{:.3} vs random), abort rate {:.4}, response {:.2} ms, idle std {:.2} ms{}",
        report.workload,
        report.policy,
        report.mean_tps,
        report.mean_relative_tps,
        report.mean_abort_rate,
        report.mean_response_ms,
        report.mean_idle_std_ms,
        if report.saturated { " [saturated]" } else { "" },
    );
    let _ = cfg;
}

fn cmd_sweep(common: &ConfigArgs, rates: &[f64], jobs: usize) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let dir = out_dir(common)?;
    let sweep = harness::sweep_arrival_rate(&cfg, rates, jobs)?;
    fs::write(dir.join("sweep.csv"), sweep_csv(&sweep))?;
    fs::write(dir.join("sweep.json"), serde_json::to_string_pretty(&sweep).unwrap())?;
    for p in &sweep.points {
        println!(
            "rate {:>9.0} -> tps {:>9.0}, abort {:.4}, response {:.2} ms{}",
            p.rate_tps,
            p.tps,
            p.abort_rate,
            p.response_mean_ms,
            if p.saturated { " [saturated]" } else { "" }
        );
    }
    match sweep.knee_rate_tps {
        Some(r) => println!("saturation knee at {:.0} tps (throughput {:.0})", r, sweep.knee_tps),
        None => println!("no saturation knee within the swept rates (max tps {:.0})", sweep.knee_tps),
    }
    Ok(())
}

fn cmd_rounds(common: &ConfigArgs, rounds: u32, sample: usize) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let dir = out_dir(common)?;
    let report = harness::run_rounds(&cfg, rounds, sample)?;
    fs::write(dir.join("rounds.csv"), rounds_csv(&report))?;
    fs::write(dir.join("rounds.json"), serde_json::to_string_pretty(&report).unwrap())?;
    for r in &report.rounds {
        println!(
            "round {:>2}: tps {:>9.0}, relative {:.3}{}",
            r.round,
            r.tps,
            r.relative_tps,
            if r.model_reused { " [model reused]" } else { "" }
        );
    }
    println!(
        "rounds 1-{}: mean {:.3}, std {:.3}, 95% CI +/-{:.3}",
        rounds, report.mean_relative, report.std_relative, report.ci95_relative
    );
    Ok(())
}

fn cmd_train(common: &ConfigArgs) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let dir = out_dir(common)?;
    let log = harness::warmup_run(&cfg, 0)?;
    println!("warm-up log: {} records", log.len());
    fs::write(dir.join("warmup.log"), {
        let mut buf = Vec::new();
        schedlab::model::write_log(&mut buf, cfg.k_bits, &log)?;
        buf
    })?;

    // Pair model on a balanced sample, with 4-fold cross-validation.
    let seed = derive_seed(cfg.seed, "train-cli");
    let mut rng = rng_from_seed(seed);
    match build_balanced_training_set(&log, cfg.train_sample, &mut rng) {
        Ok(examples) => {
            let hyper = Hyper { seed, ..cfg.hyper };
            let cv = cross_validate(&examples, 4, hyper)?;
            println!(
                "pair model: {} examples, 4-fold accuracy {:.3} (majority {:.3})",
                examples.len(),
                cv.accuracy,
                cv.majority_baseline
            );
            let model = train(&examples, hyper)?;
            let mut buf = Vec::new();
            model.save(&mut buf)?;
            fs::write(dir.join("abort.model"), buf)?;
            println!("wrote {}", dir.join("abort.model").display());
        }
        Err(e) => println!("pair model skipped: {e}"),
    }

    // Centroids from abort records.
    match harness::fit_centroids_from_log(&cfg, &log, seed) {
        Ok(centroids) => {
            let mut buf = Vec::new();
            centroids.save(&mut buf)?;
            fs::write(dir.join("abort.centroids"), buf)?;
            println!(
                "centroids: {} clusters over {} training aborts; wrote {}",
                centroids.len(),
                centroids.counts().iter().sum::<usize>(),
                dir.join("abort.centroids").display()
            );
        }
        Err(e) => println!("centroids skipped: {e}"),
    }

    // Feature dictionary: sample the workload and map hash bits back to
    // the feature strings that set them.
    let mut wl = cfg.workload.clone();
    wl.rng_seed = derive_seed(cfg.seed, "dict-stream");
    let mut gen = Generator::new(wl)?;
    let mut dict: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for _ in 0..50_000 {
        let txn = gen.next_arrival();
        for f in &txn.features {
            let bit = feature_bit(f, cfg.k_bits);
            let entry = dict.entry(bit).or_default();
            if entry.len() < 3 && !entry.contains(&f.to_string()) {
                entry.push(f.to_string());
            }
        }
    }
    let mut out = String::from("bit\tfeatures\n");
    for (bit, feats) in &dict {
        out.push_str(&format!("{bit}\t{}\n", feats.join("|")));
    }
    fs::write(dir.join("features.dict"), out)?;
    println!("wrote {} ({} bits)", dir.join("features.dict").display(), dict.len());
    Ok(())
}

fn cmd_inspect(model_path: &Path, top: usize, dict: Option<&Path>) -> Result<(), Error> {
    let file = fs::File::open(model_path)?;
    let model = AbortModel::load(file)?;
    let dict: BTreeMap<u32, String> = match dict {
        Some(path) => fs::read_to_string(path)?
            .lines()
            .skip(1)
            .filter_map(|l| {
                let (bit, feats) = l.split_once('\t')?;
                Some((bit.parse().ok()?, feats.to_string()))
            })
            .collect(),
        None => BTreeMap::new(),
    };
    println!(
        "model: k_bits {}, bias {:.6}, {} nonzero weights",
        model.k_bits(),
        model.bias(),
        model.weights().iter().filter(|w| **w != 0.0).count()
    );
    let k = model.k_bits() as usize;
    for (index, segment, weight) in model.top_weights(top) {
        let seg_name = ["V1", "V2", "V3"][segment as usize];
        let bit = (index % k) as u32;
        let feats = dict.get(&bit).map(|f| format!("  [{f}]")).unwrap_or_default();
        println!("{seg_name} bit {bit:>5}  weight {weight:>10.5}{feats}");
    }
    Ok(())
}

fn cmd_audit(trace: &Path) -> Result<(), Error> {
    let events = read_trace_file(trace)?;
    let report = audit(&events);
    println!(
        "{} events: {} arrivals, {} commits, {} aborts, {} attempts",
        events.len(),
        report.arrivals,
        report.commits,
        report.aborts,
        report.starts
    );
    if report.ok() {
        println!("audit: ok");
        Ok(())
    } else {
        for v in &report.violations {
            println!("violation: {v}");
        }
        Err(Error::Invariant(format!("{} audit violations", report.violations.len())))
    }
}

fn cmd_distributions(common: &ConfigArgs) -> Result<(), Error> {
    let cfg = load_config(common)?;
    let dir = out_dir(common)?;
    let traced = harness::run_traced(&cfg)?;
    let matrix = distribution_matrix(&traced.decisions, cfg.n_queues);
    fs::write(dir.join("distribution.csv"), matrix_csv(&matrix))?;
    fs::write(dir.join("decisions.csv"), decisions_csv(cfg.policy.name(), &traced.decisions))?;
    println!(
        "{} keys over {} queues; partition quality {:.3}; wrote {}",
        matrix.keys.len(),
        cfg.n_queues,
        matrix.partition_quality,
        dir.join("distribution.csv").display()
    );
    Ok(())
}
