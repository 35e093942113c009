//! Open-queue transaction arrival streams for three benchmark-inspired
//! workloads: TPC-C-lite (NewOrder + Payment), TATP-lite, Epinions-lite.
//!
//! Each generated transaction carries canonical feature strings, a
//! simulated read/write key set at row granularity, and a service-time
//! cost. The generator is a single-owner stateful object; identical
//! (config, seed) produce byte-identical streams.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feature::{extract_features, AttrRef, CanonMap, FeatureString, Statement};
use crate::rng_from_seed;

/// Virtual time in microseconds.
pub type Micros = u64;

// ---------------------------------------------------------------------------
// Row keys
// ---------------------------------------------------------------------------

/// Simulated tables across all three workloads. Secondary-index tables
/// (`ReviewByItem`, ...) stand in for range reads keyed by one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Table {
    Warehouse,
    District,
    Customer,
    Stock,
    Item,
    Subscriber,
    AccessInfo,
    SpecialFacility,
    CallForwarding,
    Useracct,
    EpItem,
    Review,
    ReviewByItem,
    ReviewByUser,
    Trust,
    TrustBySource,
}

impl Table {
    pub const ALL: [Table; 16] = [
        Table::Warehouse,
        Table::District,
        Table::Customer,
        Table::Stock,
        Table::Item,
        Table::Subscriber,
        Table::AccessInfo,
        Table::SpecialFacility,
        Table::CallForwarding,
        Table::Useracct,
        Table::EpItem,
        Table::Review,
        Table::ReviewByItem,
        Table::ReviewByUser,
        Table::Trust,
        Table::TrustBySource,
    ];

    pub fn parse(name: &str) -> Option<Table> {
        Table::ALL.iter().copied().find(|t| t.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Table::Warehouse => "WAREHOUSE",
            Table::District => "DISTRICT",
            Table::Customer => "CUSTOMER",
            Table::Stock => "STOCK",
            Table::Item => "ITEM",
            Table::Subscriber => "SUBSCRIBER",
            Table::AccessInfo => "ACCESS_INFO",
            Table::SpecialFacility => "SPECIAL_FACILITY",
            Table::CallForwarding => "CALL_FORWARDING",
            Table::Useracct => "USERACCT",
            Table::EpItem => "EPITEM",
            Table::Review => "REVIEW",
            Table::ReviewByItem => "REVIEW_BY_ITEM",
            Table::ReviewByUser => "REVIEW_BY_USER",
            Table::Trust => "TRUST",
            Table::TrustBySource => "TRUST_BY_SOURCE",
        }
    }
}

const KEY_FIELD_BITS: u32 = 21;
const KEY_FIELD_MAX: u64 = (1 << KEY_FIELD_BITS) - 1;

/// One simulated row: a table plus its primary-key tuple packed into a
/// word (up to three fields of 21 bits each). Equal `RowKey`s denote the
/// same row; conflict detection is at row granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowKey {
    table: Table,
    arity: u8,
    key: u64,
}

impl RowKey {
    pub fn new1(table: Table, a: u64) -> Self {
        debug_assert!(a <= KEY_FIELD_MAX);
        RowKey { table, arity: 1, key: a }
    }

    pub fn new2(table: Table, a: u64, b: u64) -> Self {
        debug_assert!(a <= KEY_FIELD_MAX && b <= KEY_FIELD_MAX);
        RowKey { table, arity: 2, key: (a << KEY_FIELD_BITS) | b }
    }

    pub fn new3(table: Table, a: u64, b: u64, c: u64) -> Self {
        debug_assert!(a <= KEY_FIELD_MAX && b <= KEY_FIELD_MAX && c <= KEY_FIELD_MAX);
        RowKey {
            table,
            arity: 3,
            key: (a << (2 * KEY_FIELD_BITS)) | (b << KEY_FIELD_BITS) | c,
        }
    }

    pub fn from_components(table: Table, components: &[u64]) -> Option<Self> {
        match components {
            [a] => Some(RowKey::new1(table, *a)),
            [a, b] => Some(RowKey::new2(table, *a, *b)),
            [a, b, c] => Some(RowKey::new3(table, *a, *b, *c)),
            _ => None,
        }
    }

    /// Parse the `TABLE/a.b.c` rendering.
    pub fn parse(text: &str) -> Option<Self> {
        let (table, comps) = text.split_once('/')?;
        let table = Table::parse(table)?;
        let components: Option<Vec<u64>> = comps.split('.').map(|c| c.parse().ok()).collect();
        RowKey::from_components(table, &components?)
    }

    pub fn table(&self) -> Table {
        self.table
    }

    /// Primary-key components in declaration order.
    pub fn components(&self) -> Vec<u64> {
        (0..self.arity)
            .rev()
            .map(|i| (self.key >> (u32::from(i) * KEY_FIELD_BITS)) & KEY_FIELD_MAX)
            .collect()
    }
}

impl fmt::Display for RowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/", self.table.name())?;
        let comps = self.components();
        for (i, c) in comps.iter().enumerate() {
            if i > 0 {
                write!(f, ".")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Transaction types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TxnType {
    // TPC-C-lite
    NewOrder,
    Payment,
    // TATP-lite
    GetSubscriberData,
    GetNewDestination,
    GetAccessData,
    UpdateSubscriberData,
    UpdateLocation,
    InsertCallForwarding,
    DeleteCallForwarding,
    // Epinions-lite
    GetReviewItemById,
    GetAverageRatingByTrustedUser,
    GetItemAverageRating,
    GetItemReviewsByTrustedUser,
    GetReviewsByUser,
    UpdateItemTitle,
    UpdateReviewRating,
    UpdateTrustRating,
    UpdateUserName,
}

impl TxnType {
    pub const ALL: [TxnType; 18] = [
        TxnType::NewOrder,
        TxnType::Payment,
        TxnType::GetSubscriberData,
        TxnType::GetNewDestination,
        TxnType::GetAccessData,
        TxnType::UpdateSubscriberData,
        TxnType::UpdateLocation,
        TxnType::InsertCallForwarding,
        TxnType::DeleteCallForwarding,
        TxnType::GetReviewItemById,
        TxnType::GetAverageRatingByTrustedUser,
        TxnType::GetItemAverageRating,
        TxnType::GetItemReviewsByTrustedUser,
        TxnType::GetReviewsByUser,
        TxnType::UpdateItemTitle,
        TxnType::UpdateReviewRating,
        TxnType::UpdateTrustRating,
        TxnType::UpdateUserName,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TxnType::NewOrder => "NewOrder",
            TxnType::Payment => "Payment",
            TxnType::GetSubscriberData => "GetSubscriberData",
            TxnType::GetNewDestination => "GetNewDestination",
            TxnType::GetAccessData => "GetAccessData",
            TxnType::UpdateSubscriberData => "UpdateSubscriberData",
            TxnType::UpdateLocation => "UpdateLocation",
            TxnType::InsertCallForwarding => "InsertCallForwarding",
            TxnType::DeleteCallForwarding => "DeleteCallForwarding",
            TxnType::GetReviewItemById => "GetReviewItemById",
            TxnType::GetAverageRatingByTrustedUser => "GetAverageRatingByTrustedUser",
            TxnType::GetItemAverageRating => "GetItemAverageRating",
            TxnType::GetItemReviewsByTrustedUser => "GetItemReviewsByTrustedUser",
            TxnType::GetReviewsByUser => "GetReviewsByUser",
            TxnType::UpdateItemTitle => "UpdateItemTitle",
            TxnType::UpdateReviewRating => "UpdateReviewRating",
            TxnType::UpdateTrustRating => "UpdateTrustRating",
            TxnType::UpdateUserName => "UpdateUserName",
        }
    }

    pub fn parse(name: &str) -> Option<TxnType> {
        TxnType::ALL.iter().copied().find(|t| t.name() == name)
    }

    /// Long-running aggregation query, as opposed to a point read/update.
    pub fn is_aggregate(self) -> bool {
        matches!(
            self,
            TxnType::GetReviewItemById
                | TxnType::GetAverageRatingByTrustedUser
                | TxnType::GetItemAverageRating
                | TxnType::GetItemReviewsByTrustedUser
                | TxnType::GetReviewsByUser
        )
    }
}

/// Per-type simulated execution durations, overridable from config.
#[derive(Debug, Clone)]
pub struct ServiceTimes {
    micros: BTreeMap<TxnType, Micros>,
}

impl Default for ServiceTimes {
    fn default() -> Self {
        let mut micros = BTreeMap::new();
        for ty in TxnType::ALL {
            micros.insert(ty, if ty.is_aggregate() { 1000 } else { 100 });
        }
        ServiceTimes { micros }
    }
}

impl ServiceTimes {
    pub fn for_type(&self, ty: TxnType) -> Micros {
        self.micros[&ty]
    }

    pub fn set(&mut self, ty: TxnType, micros: Micros) {
        self.micros.insert(ty, micros);
    }

    /// Config-file path: override by type name.
    pub fn set_by_name(&mut self, name: &str, micros: Micros) -> Result<()> {
        let ty = TxnType::parse(name)
            .ok_or_else(|| Error::Config(format!("unknown transaction type `{name}`")))?;
        self.set(ty, micros);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Transaction
// ---------------------------------------------------------------------------

/// A generated workload unit. `id` is the arrival sequence number and
/// doubles as the start-timestamp order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub id: u64,
    pub txn_type: TxnType,
    pub features: BTreeSet<FeatureString>,
    pub read_set: Vec<RowKey>,
    pub write_set: Vec<RowKey>,
    pub service_time: Micros,
    pub arrival_time: Micros,
    pub attempts: u32,
    /// Key used for the distribution figures (warehouse / subscriber /
    /// user id).
    pub partition_key: u64,
}

// ---------------------------------------------------------------------------
// Zipf sampling
// ---------------------------------------------------------------------------

/// Zipfian sampler over ranks `1..=n` with `P(r) ∝ r^(-s)`, by inverse CDF
/// over a precomputed normalized table.
#[derive(Debug, Clone)]
pub struct ZipfTable {
    cum: Vec<f64>,
}

impl ZipfTable {
    pub fn new(s: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("zipf domain size must be at least 1".into()));
        }
        let mut cum = Vec::with_capacity(n);
        let mut total = 0.0;
        for r in 1..=n {
            total += (r as f64).powf(-s);
            cum.push(total);
        }
        for c in &mut cum {
            *c /= total;
        }
        Ok(ZipfTable { cum })
    }

    /// Draw a rank in `[1..n]`.
    pub fn sample(&self, rng: &mut impl Rng) -> u64 {
        let u: f64 = rng.gen();
        let idx = self.cum.partition_point(|&c| c <= u);
        (idx.min(self.cum.len() - 1) + 1) as u64
    }

    /// Probability mass of a rank (for tests and diagnostics).
    pub fn prob(&self, rank: usize) -> f64 {
        if rank == 1 {
            self.cum[0]
        } else {
            self.cum[rank - 1] - self.cum[rank - 2]
        }
    }
}

// ---------------------------------------------------------------------------
// Workload configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkloadKind {
    Tpcc,
    Tatp,
    Epinions,
}

impl WorkloadKind {
    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::Tpcc => "tpcc",
            WorkloadKind::Tatp => "tatp",
            WorkloadKind::Epinions => "epinions",
        }
    }

    pub fn parse(s: &str) -> Option<WorkloadKind> {
        match s {
            "tpcc" => Some(WorkloadKind::Tpcc),
            "tatp" => Some(WorkloadKind::Tatp),
            "epinions" => Some(WorkloadKind::Epinions),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadConfig {
    pub kind: WorkloadKind,
    /// Warehouses (tpcc), subscriber population (tatp), or a multiplier on
    /// the 2000-user / 1000-item Epinions population.
    pub scale: u32,
    /// Zipf exponent for the skewed key dimension, where applicable.
    pub zipf_s: f64,
    pub arrival_rate_tps: f64,
    pub rng_seed: u64,
    /// Fixed inter-arrival gaps instead of Poisson arrivals (debugging).
    pub deterministic_arrivals: bool,
    /// Epinions: draw user ids Zipfian (item ids stay uniform) or vice
    /// versa; both false means both uniform.
    pub skew_users: bool,
    pub skew_items: bool,
    pub service_times: ServiceTimes,
}

impl WorkloadConfig {
    pub fn tpcc(warehouses: u32, arrival_rate_tps: f64, seed: u64) -> Self {
        WorkloadConfig {
            kind: WorkloadKind::Tpcc,
            scale: warehouses,
            zipf_s: 0.0,
            arrival_rate_tps,
            rng_seed: seed,
            deterministic_arrivals: false,
            skew_users: false,
            skew_items: false,
            service_times: ServiceTimes::default(),
        }
    }

    pub fn tatp(subscribers: u32, arrival_rate_tps: f64, seed: u64) -> Self {
        WorkloadConfig {
            kind: WorkloadKind::Tatp,
            scale: subscribers,
            zipf_s: 1.2,
            arrival_rate_tps,
            rng_seed: seed,
            deterministic_arrivals: false,
            skew_users: false,
            skew_items: false,
            service_times: ServiceTimes::default(),
        }
    }

    pub fn epinions(arrival_rate_tps: f64, seed: u64) -> Self {
        WorkloadConfig {
            kind: WorkloadKind::Epinions,
            scale: 1,
            zipf_s: 1.95,
            arrival_rate_tps,
            rng_seed: seed,
            deterministic_arrivals: false,
            skew_users: true,
            skew_items: false,
            service_times: ServiceTimes::default(),
        }
    }

    pub fn canon_map(&self) -> CanonMap {
        match self.kind {
            WorkloadKind::Tpcc => CanonMap::tpcc(),
            WorkloadKind::Tatp => CanonMap::tatp(),
            WorkloadKind::Epinions => CanonMap::epinions(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.arrival_rate_tps <= 0.0 {
            return Err(Error::Config("arrival_rate_tps must be positive".into()));
        }
        if self.scale == 0 {
            return Err(Error::Config("scale must be positive".into()));
        }
        let needs_zipf = matches!(self.kind, WorkloadKind::Tatp)
            || (matches!(self.kind, WorkloadKind::Epinions) && (self.skew_users || self.skew_items));
        if needs_zipf && self.zipf_s <= 1.0 {
            return Err(Error::Config("zipf_s must exceed 1 when used".into()));
        }
        let max_pop = match self.kind {
            WorkloadKind::Tpcc => u64::from(self.scale),
            WorkloadKind::Tatp => u64::from(self.scale),
            WorkloadKind::Epinions => 2000 * u64::from(self.scale),
        };
        if max_pop > KEY_FIELD_MAX {
            return Err(Error::Config(format!(
                "scale {} exceeds the {}-bit key-field limit",
                self.scale, KEY_FIELD_BITS
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

const TPCC_DISTRICTS: u64 = 10;
const TPCC_CUSTOMERS: u64 = 3000;
const TPCC_ITEMS: u64 = 100_000;
const EPINIONS_USERS: u64 = 2000;
const EPINIONS_ITEMS: u64 = 1000;

/// Stateful arrival-stream generator; one per simulation, never shared.
pub struct Generator {
    cfg: WorkloadConfig,
    canon: CanonMap,
    rng: ChaCha8Rng,
    clock: Micros,
    next_id: u64,
    key_zipf: Option<ZipfTable>,
    item_zipf: Option<ZipfTable>,
}

impl Generator {
    pub fn new(cfg: WorkloadConfig) -> Result<Self> {
        cfg.validate()?;
        let key_zipf = match cfg.kind {
            WorkloadKind::Tatp => Some(ZipfTable::new(cfg.zipf_s, cfg.scale as usize)?),
            WorkloadKind::Epinions if cfg.skew_users => Some(ZipfTable::new(
                cfg.zipf_s,
                (EPINIONS_USERS * u64::from(cfg.scale)) as usize,
            )?),
            _ => None,
        };
        let item_zipf = match cfg.kind {
            WorkloadKind::Epinions if cfg.skew_items => Some(ZipfTable::new(
                cfg.zipf_s,
                (EPINIONS_ITEMS * u64::from(cfg.scale)) as usize,
            )?),
            _ => None,
        };
        let canon = cfg.canon_map();
        let rng = rng_from_seed(cfg.rng_seed);
        Ok(Generator { cfg, canon, rng, clock: 0, next_id: 1, key_zipf, item_zipf })
    }

    pub fn config(&self) -> &WorkloadConfig {
        &self.cfg
    }

    /// Next transaction in the open-queue stream. Inter-arrival gaps are
    /// exponential with mean `1/arrival_rate_tps` (Poisson arrivals).
    pub fn next_arrival(&mut self) -> Transaction {
        let gap_us = if self.cfg.deterministic_arrivals {
            (1e6 / self.cfg.arrival_rate_tps).round() as u64
        } else {
            let u: f64 = self.rng.gen();
            ((-(1.0 - u).ln()) / self.cfg.arrival_rate_tps * 1e6).round() as u64
        };
        self.clock += gap_us;
        let id = self.next_id;
        self.next_id += 1;
        match self.cfg.kind {
            WorkloadKind::Tpcc => self.gen_tpcc(id),
            WorkloadKind::Tatp => self.gen_tatp(id),
            WorkloadKind::Epinions => self.gen_epinions(id),
        }
    }

    fn finish(
        &self,
        id: u64,
        txn_type: TxnType,
        stmts: &[Statement],
        mut read_set: Vec<RowKey>,
        mut write_set: Vec<RowKey>,
        partition_key: u64,
    ) -> Transaction {
        let features = extract_features(stmts, &self.canon)
            .expect("generator emits only known attributes");
        read_set.sort_unstable();
        read_set.dedup();
        write_set.sort_unstable();
        write_set.dedup();
        Transaction {
            id,
            txn_type,
            features,
            read_set,
            write_set,
            service_time: self.cfg.service_times.for_type(txn_type),
            arrival_time: self.clock,
            attempts: 0,
            partition_key,
        }
    }

    // ---- TPC-C-lite ----

    fn other_warehouse(&mut self, home: u64) -> u64 {
        let w = u64::from(self.cfg.scale);
        if w == 1 {
            return home;
        }
        let mut pick = self.rng.gen_range(1..=w - 1);
        if pick >= home {
            pick += 1;
        }
        pick
    }

    fn gen_tpcc(&mut self, id: u64) -> Transaction {
        let w = self.rng.gen_range(1..=u64::from(self.cfg.scale));
        let d = self.rng.gen_range(1..=TPCC_DISTRICTS);
        let c = self.rng.gen_range(1..=TPCC_CUSTOMERS);
        if self.rng.gen_bool(0.5) {
            // NewOrder: reads home warehouse, customer, and items; updates
            // the district's next-order row and the supplying stock rows.
            let n_items = self.rng.gen_range(5..=15usize);
            let mut stmts = vec![
                Statement::new(vec![AttrRef::int("W_ID", w)]),
                Statement::new(vec![AttrRef::int("D_W_ID", w), AttrRef::int("D_ID", d)]),
                Statement::new(vec![
                    AttrRef::int("C_W_ID", w),
                    AttrRef::int("C_D_ID", d),
                    AttrRef::int("C_ID", c),
                ]),
            ];
            let mut reads = vec![
                RowKey::new1(Table::Warehouse, w),
                RowKey::new2(Table::District, w, d),
                RowKey::new3(Table::Customer, w, d, c),
            ];
            let mut writes = vec![RowKey::new2(Table::District, w, d)];
            for _ in 0..n_items {
                let i = self.rng.gen_range(1..=TPCC_ITEMS);
                // Supplying warehouse: home 99% of the time.
                let supply = if self.rng.gen_bool(0.99) { w } else { self.other_warehouse(w) };
                stmts.push(Statement::new(vec![AttrRef::int("OL_I_ID", i)]));
                stmts.push(Statement::new(vec![
                    AttrRef::int("S_W_ID", supply),
                    AttrRef::int("S_I_ID", i),
                ]));
                reads.push(RowKey::new1(Table::Item, i));
                reads.push(RowKey::new2(Table::Stock, supply, i));
                writes.push(RowKey::new2(Table::Stock, supply, i));
            }
            self.finish(id, TxnType::NewOrder, &stmts, reads, writes, w)
        } else {
            // Payment: updates warehouse and district YTD plus the paying
            // customer's row; customer is remote 15% of the time.
            let (cw, cd) = if self.rng.gen_bool(0.15) {
                (self.other_warehouse(w), self.rng.gen_range(1..=TPCC_DISTRICTS))
            } else {
                (w, d)
            };
            let stmts = vec![
                Statement::new(vec![AttrRef::int("W_ID", w)]),
                Statement::new(vec![AttrRef::int("D_W_ID", w), AttrRef::int("D_ID", d)]),
                Statement::new(vec![
                    AttrRef::int("C_W_ID", cw),
                    AttrRef::int("C_D_ID", cd),
                    AttrRef::int("C_ID", c),
                ]),
            ];
            let touched = vec![
                RowKey::new1(Table::Warehouse, w),
                RowKey::new2(Table::District, w, d),
                RowKey::new3(Table::Customer, cw, cd, c),
            ];
            self.finish(id, TxnType::Payment, &stmts, touched.clone(), touched, w)
        }
    }

    // ---- TATP-lite ----

    fn gen_tatp(&mut self, id: u64) -> Transaction {
        let s = self.key_zipf.as_ref().expect("tatp has a zipf table").sample(&mut self.rng);
        let roll = self.rng.gen_range(0..100u32);
        let sf = self.rng.gen_range(1..=4u64);
        let ai = self.rng.gen_range(1..=4u64);
        let st = [0u64, 8, 16][self.rng.gen_range(0..3usize)];
        let sub = RowKey::new1(Table::Subscriber, s);
        // Write-heavy mix: at desk concurrency (8 workers, row-level
        // first-committer-wins) a read-mostly mix cannot reach the
        // contended regime the schedulers are meant to untangle.
        let (ty, stmts, reads, writes) = match roll {
            // GetSubscriberData 15%
            0..=14 => (
                TxnType::GetSubscriberData,
                vec![Statement::new(vec![AttrRef::int("S_ID", s)])],
                vec![sub],
                vec![],
            ),
            // GetAccessData 5%
            15..=19 => (
                TxnType::GetAccessData,
                vec![Statement::new(vec![
                    AttrRef::int("AI_S_ID", s),
                    AttrRef::int("AI_TYPE", ai),
                ])],
                vec![RowKey::new2(Table::AccessInfo, s, ai)],
                vec![],
            ),
            // GetNewDestination 5%
            20..=24 => (
                TxnType::GetNewDestination,
                vec![Statement::new(vec![
                    AttrRef::int("SF_S_ID", s),
                    AttrRef::int("SF_TYPE", sf),
                    AttrRef::int("START_TIME", st),
                ])],
                vec![
                    RowKey::new2(Table::SpecialFacility, s, sf),
                    RowKey::new3(Table::CallForwarding, s, sf, st),
                ],
                vec![],
            ),
            // UpdateLocation 55%
            25..=79 => (
                TxnType::UpdateLocation,
                vec![Statement::new(vec![AttrRef::int("S_ID", s)])],
                vec![sub],
                vec![sub],
            ),
            // UpdateSubscriberData 10%
            80..=89 => (
                TxnType::UpdateSubscriberData,
                vec![
                    Statement::new(vec![AttrRef::int("S_ID", s)]),
                    Statement::new(vec![AttrRef::int("SF_S_ID", s), AttrRef::int("SF_TYPE", sf)]),
                ],
                vec![sub, RowKey::new2(Table::SpecialFacility, s, sf)],
                vec![sub, RowKey::new2(Table::SpecialFacility, s, sf)],
            ),
            // InsertCallForwarding 5%
            90..=94 => (
                TxnType::InsertCallForwarding,
                vec![
                    Statement::new(vec![AttrRef::int("S_ID", s)]),
                    Statement::new(vec![AttrRef::int("SF_S_ID", s), AttrRef::int("SF_TYPE", sf)]),
                    Statement::new(vec![
                        AttrRef::int("CF_S_ID", s),
                        AttrRef::int("SF_TYPE", sf),
                        AttrRef::int("START_TIME", st),
                    ]),
                ],
                vec![sub, RowKey::new2(Table::SpecialFacility, s, sf)],
                vec![RowKey::new3(Table::CallForwarding, s, sf, st)],
            ),
            // DeleteCallForwarding 5%
            _ => (
                TxnType::DeleteCallForwarding,
                vec![
                    Statement::new(vec![AttrRef::int("S_ID", s)]),
                    Statement::new(vec![
                        AttrRef::int("CF_S_ID", s),
                        AttrRef::int("SF_TYPE", sf),
                        AttrRef::int("START_TIME", st),
                    ]),
                ],
                vec![sub],
                vec![RowKey::new3(Table::CallForwarding, s, sf, st)],
            ),
        };
        self.finish(id, ty, &stmts, reads, writes, s)
    }

    // ---- Epinions-lite ----

    fn draw_user(&mut self) -> u64 {
        match &self.key_zipf {
            Some(z) => z.sample(&mut self.rng),
            None => self.rng.gen_range(1..=EPINIONS_USERS * u64::from(self.cfg.scale)),
        }
    }

    fn draw_item(&mut self) -> u64 {
        match &self.item_zipf {
            Some(z) => z.sample(&mut self.rng),
            None => self.rng.gen_range(1..=EPINIONS_ITEMS * u64::from(self.cfg.scale)),
        }
    }

    fn gen_epinions(&mut self, id: u64) -> Transaction {
        let u = self.draw_user();
        let i = self.draw_item();
        let roll = self.rng.gen_range(0..100u32);
        let (ty, stmts, reads, writes, pkey) = match roll {
            // Five read/aggregate types, 4% each.
            0..=3 => (
                TxnType::GetReviewItemById,
                vec![Statement::new(vec![AttrRef::int("I_ID", i)])],
                vec![RowKey::new1(Table::EpItem, i), RowKey::new1(Table::ReviewByItem, i)],
                vec![],
                u,
            ),
            4..=7 => (
                TxnType::GetAverageRatingByTrustedUser,
                vec![Statement::new(vec![AttrRef::int("U_ID", u), AttrRef::int("I_ID", i)])],
                vec![RowKey::new1(Table::TrustBySource, u), RowKey::new1(Table::ReviewByItem, i)],
                vec![],
                u,
            ),
            8..=11 => (
                TxnType::GetItemAverageRating,
                vec![Statement::new(vec![AttrRef::int("I_ID", i)])],
                vec![RowKey::new1(Table::ReviewByItem, i)],
                vec![],
                u,
            ),
            12..=15 => (
                TxnType::GetItemReviewsByTrustedUser,
                vec![Statement::new(vec![AttrRef::int("I_ID", i), AttrRef::int("U_ID", u)])],
                vec![RowKey::new1(Table::ReviewByItem, i), RowKey::new1(Table::TrustBySource, u)],
                vec![],
                u,
            ),
            16..=19 => (
                TxnType::GetReviewsByUser,
                vec![Statement::new(vec![AttrRef::int("U_ID", u)])],
                vec![RowKey::new1(Table::Useracct, u), RowKey::new1(Table::ReviewByUser, u)],
                vec![],
                u,
            ),
            // Four update types, 20% each.
            20..=39 => (
                TxnType::UpdateItemTitle,
                vec![Statement::new(vec![AttrRef::int("I_ID", i)])],
                vec![RowKey::new1(Table::EpItem, i)],
                vec![RowKey::new1(Table::EpItem, i)],
                u,
            ),
            40..=59 => (
                TxnType::UpdateReviewRating,
                vec![Statement::new(vec![AttrRef::int("A_ID", u), AttrRef::int("R_I_ID", i)])],
                vec![RowKey::new2(Table::Review, i, u)],
                vec![
                    RowKey::new2(Table::Review, i, u),
                    RowKey::new1(Table::ReviewByItem, i),
                    RowKey::new1(Table::ReviewByUser, u),
                ],
                u,
            ),
            60..=79 => {
                let mut target = self.draw_user();
                if target == u {
                    target = target % (EPINIONS_USERS * u64::from(self.cfg.scale)) + 1;
                }
                (
                    TxnType::UpdateTrustRating,
                    vec![Statement::new(vec![
                        AttrRef::int("SOURCE_U_ID", u),
                        AttrRef::int("TARGET_U_ID", target),
                    ])],
                    vec![RowKey::new2(Table::Trust, u, target)],
                    vec![RowKey::new2(Table::Trust, u, target), RowKey::new1(Table::TrustBySource, u)],
                    u,
                )
            }
            _ => (
                TxnType::UpdateUserName,
                vec![Statement::new(vec![AttrRef::int("U_ID", u)])],
                vec![RowKey::new1(Table::Useracct, u)],
                vec![RowKey::new1(Table::Useracct, u)],
                u,
            ),
        };
        self.finish(id, ty, &stmts, reads, writes, pkey)
    }
}
