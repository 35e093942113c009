//! Canonical feature strings, feature hashing, and pairwise vectors.
//!
//! A transaction is represented by the set of `ATTR=VALUE` references its
//! statements make, with alias attribute names rewritten to one canonical
//! name per logical entity (`D_W_ID=10` and `W_ID=10` are the same
//! reference). The set is hashed into a fixed-length binary vector; a pair
//! of transactions is represented by `V1|V2|(V1 & V2)`, and an abort pair
//! by `V1 & V2` alone.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// FeatureString and canonicalization
// ---------------------------------------------------------------------------

/// A canonical `ATTR=VALUE` token.
///
/// The attribute part is already canonicalized; the value is a decimal
/// integer without leading zeros or a single-quoted literal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureString(String);

impl FeatureString {
    /// Build from a canonical attribute and an integer value.
    pub fn int(attr: &str, value: u64) -> Self {
        FeatureString(format!("{attr}={value}"))
    }

    /// Build from a canonical attribute and a text literal.
    pub fn text(attr: &str, value: &str) -> Self {
        FeatureString(format!("{attr}='{value}'"))
    }

    /// Parse a rendered token, validating the `ATTR=VALUE` shape.
    pub fn parse(token: &str) -> Result<Self> {
        let Some((attr, _value)) = token.split_once('=') else {
            return Err(Error::Parse(format!("feature `{token}` has no `=`")));
        };
        if attr.is_empty() {
            return Err(Error::Parse(format!("feature `{token}` has empty attribute")));
        }
        Ok(FeatureString(token.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn attr(&self) -> &str {
        self.0.split_once('=').map(|(a, _)| a).unwrap_or(&self.0)
    }
}

impl fmt::Display for FeatureString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Value side of one `attribute = value` reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RefValue {
    Int(u64),
    Text(String),
}

/// One equality reference inside a statement, before canonicalization.
#[derive(Debug, Clone)]
pub struct AttrRef {
    pub attr: Cow<'static, str>,
    pub value: RefValue,
}

impl AttrRef {
    pub fn int(attr: impl Into<Cow<'static, str>>, value: u64) -> Self {
        AttrRef { attr: attr.into(), value: RefValue::Int(value) }
    }

    pub fn text(attr: impl Into<Cow<'static, str>>, value: &str) -> Self {
        AttrRef { attr: attr.into(), value: RefValue::Text(value.to_string()) }
    }
}

/// A statement's pre-tokenized equality references.
///
/// The simulator generates transactions directly in this form; full SQL
/// never enters the pipeline. [`parse_statement`] builds one from a
/// SQL-like string for fixtures.
#[derive(Debug, Clone, Default)]
pub struct Statement {
    pub refs: Vec<AttrRef>,
}

impl Statement {
    pub fn new(refs: Vec<AttrRef>) -> Self {
        Statement { refs }
    }
}

/// Attribute-alias table mapping every alias to its canonical attribute.
#[derive(Debug, Clone, Default)]
pub struct CanonMap {
    alias: BTreeMap<String, String>,
    canonical: BTreeSet<String>,
}

impl CanonMap {
    pub fn new() -> Self {
        CanonMap::default()
    }

    /// Register an attribute that is its own canonical form.
    pub fn canonical(mut self, attr: &str) -> Self {
        self.canonical.insert(attr.to_string());
        self
    }

    /// Register `alias` as another name for canonical attribute `canon`.
    pub fn alias(mut self, alias: &str, canon: &str) -> Self {
        self.canonical.insert(canon.to_string());
        self.alias.insert(alias.to_string(), canon.to_string());
        self
    }

    /// Resolve an attribute to its canonical name.
    pub fn resolve<'a>(&'a self, attr: &'a str) -> Result<&'a str> {
        if let Some(canon) = self.alias.get(attr) {
            return Ok(canon);
        }
        if self.canonical.contains(attr) {
            return Ok(attr);
        }
        Err(Error::UnknownAttribute(attr.to_string()))
    }

    /// TPC-C-lite schema aliases (NewOrder and Payment references).
    pub fn tpcc() -> Self {
        CanonMap::new()
            .canonical("W_ID")
            .canonical("D_ID")
            .canonical("C_ID")
            .canonical("I_ID")
            .alias("D_W_ID", "W_ID")
            .alias("C_W_ID", "W_ID")
            .alias("S_W_ID", "W_ID")
            .alias("O_W_ID", "W_ID")
            .alias("OL_W_ID", "W_ID")
            .alias("NO_W_ID", "W_ID")
            .alias("OL_SUPPLY_W_ID", "W_ID")
            .alias("C_D_ID", "D_ID")
            .alias("O_D_ID", "D_ID")
            .alias("OL_D_ID", "D_ID")
            .alias("NO_D_ID", "D_ID")
            .alias("O_C_ID", "C_ID")
            .alias("S_I_ID", "I_ID")
            .alias("OL_I_ID", "I_ID")
    }

    /// TATP-lite schema (subscriber tables share `S_ID` already).
    pub fn tatp() -> Self {
        CanonMap::new()
            .canonical("S_ID")
            .canonical("AI_TYPE")
            .canonical("SF_TYPE")
            .canonical("START_TIME")
            .canonical("END_TIME")
            .canonical("NUMBERX")
            .alias("SF_S_ID", "S_ID")
            .alias("CF_S_ID", "S_ID")
            .alias("AI_S_ID", "S_ID")
    }

    /// Epinions-lite schema: review authors and trust endpoints are users.
    pub fn epinions() -> Self {
        CanonMap::new()
            .canonical("U_ID")
            .canonical("I_ID")
            .alias("A_ID", "U_ID")
            .alias("SOURCE_U_ID", "U_ID")
            .alias("TARGET_U_ID", "U_ID")
            .alias("R_U_ID", "U_ID")
            .alias("R_I_ID", "I_ID")
    }
}

/// Extract the deduplicated set of canonical `ATTR=VALUE` features across
/// all statements. Reads and writes are not distinguished; INSERT values
/// contribute references like any predicate.
pub fn extract_features(stmts: &[Statement], canon: &CanonMap) -> Result<BTreeSet<FeatureString>> {
    let mut out = BTreeSet::new();
    for stmt in stmts {
        for r in &stmt.refs {
            let attr = canon.resolve(&r.attr)?;
            let feature = match &r.value {
                RefValue::Int(v) => FeatureString::int(attr, *v),
                RefValue::Text(t) => FeatureString::text(attr, t),
            };
            out.insert(feature);
        }
    }
    Ok(out)
}

/// Fixture-only parser for a SQL-like statement string.
///
/// Recognizes `ATTR = VALUE` equality atoms in WHERE clauses (conjunctions
/// and disjunctions flatten into their atoms) and `INSERT INTO t (A, B)
/// VALUES (1, 2)` column/value lists. Range atoms (`<`, `>`, `<=`, `>=`,
/// `BETWEEN`) are skipped and counted in the returned tally.
pub fn parse_statement(sql_like: &str) -> (Statement, usize) {
    let upper = sql_like.to_uppercase();
    if let Some(stmt) = parse_insert(&upper) {
        return (stmt, 0);
    }
    parse_predicates(&upper)
}

fn parse_insert(upper: &str) -> Option<Statement> {
    let rest = upper.trim_start().strip_prefix("INSERT")?;
    let cols_open = rest.find('(')?;
    let cols_close = rest[cols_open..].find(')')? + cols_open;
    let cols: Vec<&str> = rest[cols_open + 1..cols_close]
        .split(',')
        .map(str::trim)
        .collect();
    let values_kw = rest[cols_close..].find("VALUES")? + cols_close;
    let vals_open = rest[values_kw..].find('(')? + values_kw;
    let vals_close = rest[vals_open..].find(')')? + vals_open;
    let vals: Vec<&str> = rest[vals_open + 1..vals_close]
        .split(',')
        .map(str::trim)
        .collect();
    if cols.len() != vals.len() {
        return None;
    }
    let refs = cols
        .iter()
        .zip(vals.iter())
        .map(|(c, v)| make_ref(c, v))
        .collect();
    Some(Statement::new(refs))
}

fn parse_predicates(upper: &str) -> (Statement, usize) {
    let clause = match upper.find("WHERE") {
        Some(i) => &upper[i + "WHERE".len()..],
        None => return (Statement::default(), 0),
    };
    let mut refs = Vec::new();
    let mut ranges = 0usize;
    for atom in clause.split(|c| c == ';' || c == '(' || c == ')') {
        for piece in split_keywords(atom) {
            let piece = piece.trim();
            if piece.is_empty() {
                continue;
            }
            if piece.contains("BETWEEN") {
                ranges += 1;
                continue;
            }
            // Strictly `=`: reject <=, >=, !=, <, >.
            if let Some(eq) = piece.find('=') {
                let before = piece[..eq].chars().last();
                if matches!(before, Some('<') | Some('>') | Some('!')) {
                    ranges += 1;
                    continue;
                }
                let attr = piece[..eq].trim();
                let value = piece[eq + 1..].trim();
                if !attr.is_empty() && !value.is_empty() && is_ident(attr) {
                    refs.push(make_ref(attr, value));
                }
            } else if piece.contains('<') || piece.contains('>') {
                ranges += 1;
            }
        }
    }
    (Statement::new(refs), ranges)
}

fn split_keywords(atom: &str) -> impl Iterator<Item = &str> {
    atom.split(" AND ").flat_map(|p| p.split(" OR "))
}

fn is_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !s.chars().next().unwrap().is_ascii_digit()
}

fn make_ref(attr: &str, value: &str) -> AttrRef {
    let value = value.trim();
    if let Some(stripped) = value.strip_prefix('\'') {
        return AttrRef::text(attr.to_string(), stripped.trim_end_matches('\''));
    }
    match value.parse::<u64>() {
        Ok(v) => AttrRef::int(attr.to_string(), v),
        Err(_) => AttrRef::text(attr.to_string(), value),
    }
}

// ---------------------------------------------------------------------------
// Hashing and vectors
// ---------------------------------------------------------------------------

/// FNV-1a 64-bit. Fixed and seedless so vectors are identical across
/// processes and runs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Bit index a feature hashes to for a given vector length.
pub fn feature_bit(feature: &FeatureString, k_bits: u32) -> u32 {
    (fnv1a64(feature.as_str().as_bytes()) % u64::from(k_bits)) as u32
}

/// Fixed-length binary vector stored as its sorted set-bit indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    k_bits: u32,
    ones: Vec<u32>,
}

impl FeatureVector {
    pub fn zero(k_bits: u32) -> Self {
        assert!(k_bits >= 1, "k_bits must be at least 1");
        FeatureVector { k_bits, ones: Vec::new() }
    }

    /// Build from explicit set-bit indices (sorted and deduplicated here).
    pub fn from_ones(k_bits: u32, ones: impl IntoIterator<Item = u32>) -> Self {
        let mut ones: Vec<u32> = ones.into_iter().collect();
        ones.sort_unstable();
        ones.dedup();
        assert!(
            ones.last().map_or(true, |&i| i < k_bits),
            "bit index out of range for k_bits"
        );
        FeatureVector { k_bits, ones }
    }

    /// Build from a bit string like `00100101`; leftmost char is index 0.
    pub fn from_bit_str(bits: &str) -> Self {
        let ones = bits
            .chars()
            .enumerate()
            .filter(|(_, c)| *c == '1')
            .map(|(i, _)| i as u32);
        FeatureVector::from_ones(bits.len() as u32, ones)
    }

    pub fn k_bits(&self) -> u32 {
        self.k_bits
    }

    /// Sorted, duplicate-free set-bit indices.
    pub fn ones(&self) -> &[u32] {
        &self.ones
    }

    pub fn popcount(&self) -> usize {
        self.ones.len()
    }

    pub fn get(&self, index: u32) -> bool {
        self.ones.binary_search(&index).is_ok()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.k_bits as usize];
        for &i in &self.ones {
            v[i as usize] = 1.0;
        }
        v
    }

    pub fn to_bit_str(&self) -> String {
        (0..self.k_bits)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }

    fn and_ones(&self, other: &FeatureVector) -> Vec<u32> {
        // Both sides sorted: linear merge.
        let (mut i, mut j) = (0usize, 0usize);
        let mut out = Vec::new();
        while i < self.ones.len() && j < other.ones.len() {
            match self.ones[i].cmp(&other.ones[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.ones[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out
    }
}

/// Hash a feature set into a binary vector of length `k_bits`.
///
/// Pure and order-independent: each feature sets bit `fnv1a64(text) mod
/// k_bits`.
pub fn hash_features<'a>(
    features: impl IntoIterator<Item = &'a FeatureString>,
    k_bits: u32,
) -> FeatureVector {
    let ones = features.into_iter().map(|f| feature_bit(f, k_bits));
    FeatureVector::from_ones(k_bits, ones)
}

/// Pairwise feature vector `V1|V2|(V1 & V2)` of length `3 * k_bits`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairVector {
    k_bits: u32,
    ones: Vec<u32>,
}

impl PairVector {
    pub fn k_bits(&self) -> u32 {
        self.k_bits
    }

    pub fn len(&self) -> u32 {
        3 * self.k_bits
    }

    pub fn is_empty(&self) -> bool {
        self.ones.is_empty()
    }

    /// Sorted set-bit indices over `[0, 3k)`.
    pub fn ones(&self) -> &[u32] {
        &self.ones
    }

    pub fn popcount(&self) -> usize {
        self.ones.len()
    }

    /// Which third of the concatenation a bit index falls in (0, 1, 2).
    pub fn segment_of(&self, index: u32) -> u32 {
        index / self.k_bits
    }
}

/// Concatenate `v1 | v2 | (v1 & v2)`.
pub fn pair_vector(v1: &FeatureVector, v2: &FeatureVector) -> Result<PairVector> {
    if v1.k_bits != v2.k_bits {
        return Err(Error::Invariant(format!(
            "pair_vector length mismatch: {} vs {}",
            v1.k_bits, v2.k_bits
        )));
    }
    let k = v1.k_bits;
    let mut ones = Vec::with_capacity(v1.popcount() + v2.popcount() + v1.popcount().min(v2.popcount()));
    ones.extend_from_slice(&v1.ones);
    ones.extend(v2.ones.iter().map(|&i| i + k));
    ones.extend(v1.and_ones(v2).iter().map(|&i| i + 2 * k));
    Ok(PairVector { k_bits: k, ones })
}

/// Abort evidence vector `V1 & V2`: the shared references of a conflicting
/// pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbortVector(FeatureVector);

impl AbortVector {
    /// Wrap an existing binary vector (training pipelines and tests).
    pub fn from_vector(v: FeatureVector) -> Self {
        AbortVector(v)
    }

    pub fn vector(&self) -> &FeatureVector {
        &self.0
    }

    pub fn k_bits(&self) -> u32 {
        self.0.k_bits
    }

    pub fn ones(&self) -> &[u32] {
        self.0.ones()
    }
}

/// Bitwise AND of two equal-length vectors.
pub fn abort_vector(v1: &FeatureVector, v2: &FeatureVector) -> Result<AbortVector> {
    if v1.k_bits != v2.k_bits {
        return Err(Error::Invariant(format!(
            "abort_vector length mismatch: {} vs {}",
            v1.k_bits, v2.k_bits
        )));
    }
    Ok(AbortVector(FeatureVector {
        k_bits: v1.k_bits,
        ones: v1.and_ones(v2),
    }))
}

// ---------------------------------------------------------------------------
// Fixture format: `txn_id; type; ATTR=VAL,ATTR=VAL,...`
// ---------------------------------------------------------------------------

/// One parsed fixture line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureTxn {
    pub txn_id: u64,
    pub txn_type: String,
    pub features: BTreeSet<FeatureString>,
}

/// Parse the golden-test fixture format, one transaction per line.
pub fn parse_fixture(text: &str) -> Result<Vec<FixtureTxn>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(3, ';').map(str::trim);
        let (Some(id), Some(ty), Some(feats)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Parse(format!("fixture line {}: expected 3 fields", lineno + 1)));
        };
        let txn_id = id
            .parse::<u64>()
            .map_err(|_| Error::Parse(format!("fixture line {}: bad txn_id `{id}`", lineno + 1)))?;
        let mut features = BTreeSet::new();
        for tok in feats.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            features.insert(FeatureString::parse(tok)?);
        }
        out.push(FixtureTxn { txn_id, txn_type: ty.to_string(), features });
    }
    Ok(out)
}
