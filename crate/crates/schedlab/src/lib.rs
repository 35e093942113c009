//! A transaction-scheduling laboratory for multi-queue main-memory databases.
//!
//! The crate simulates an open-queue OLTP system with optimistic validation,
//! learns abort models from its own execution log, and compares queue
//! assignment policies (random, search, BFS, balanced vector, balanced
//! k-means) on throughput, abort rate, response time, and workload skew.
//!
//! The pipeline, end to end:
//!
//! 1. [`workload`] generates transaction arrival streams for three
//!    benchmark-inspired workloads, each transaction carrying canonical
//!    feature strings and a simulated read/write key set.
//! 2. [`feature`] hashes feature strings into fixed-length binary vectors
//!    and builds the pairwise vectors both learning models consume.
//! 3. [`sim`] runs the deterministic discrete-event engine: per-queue FIFO
//!    workers, commit-time validation at row granularity, retries, and
//!    execution logging.
//! 4. [`model`] trains a pairwise logistic-regression abort predictor from
//!    the log; [`cluster`] fits k-means centroids over abort vectors.
//! 5. [`sched`] implements the assignment policies against the queue set.
//! 6. [`harness`] orchestrates warm-up, training, measured runs, sweeps,
//!    and retraining rounds, and writes CSV/JSON reports.

pub mod audit;
pub mod cluster;
pub mod config;
pub mod error;
pub mod feature;
pub mod harness;
pub mod model;
pub mod sched;
pub mod sim;
pub mod workload;

pub use error::{Error, Result};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive a named RNG stream seed from a base seed.
///
/// Each subsystem (arrival stream, policy, log sampling, ...) gets its own
/// stream so that, e.g., the workload stream is byte-identical across
/// policies compared under the same base seed.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in tag.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(base ^ h)
}

/// Build the crate-standard deterministic RNG from a seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
