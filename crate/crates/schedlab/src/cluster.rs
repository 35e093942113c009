//! k-means over abort vectors, one cluster per queue, with Euclidean
//! nearest-centroid lookup for incoming transactions.
//!
//! Each cluster groups one kind of conflict evidence (the shared-reference
//! bits of aborting pairs), not similar workload shapes. Centroids are
//! immutable once fitted and freely shared across readers.

use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::feature::{AbortVector, FeatureVector};

/// Fitted centroids: `k` float vectors over the `k_bits` abort-vector
/// space plus the number of training points each absorbed.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    k_bits: u32,
    centroids: Vec<Vec<f64>>,
    sq_norms: Vec<f64>,
    counts: Vec<usize>,
}

impl CentroidSet {
    fn new(k_bits: u32, centroids: Vec<Vec<f64>>, counts: Vec<usize>) -> Self {
        let sq_norms = centroids
            .iter()
            .map(|c| c.iter().map(|x| x * x).sum())
            .collect();
        CentroidSet { k_bits, centroids, sq_norms, counts }
    }

    /// Build a set from explicit centroid vectors, validating shape and
    /// the `[0, 1]` entry range.
    pub fn from_centroids(
        k_bits: u32,
        centroids: Vec<Vec<f64>>,
        counts: Vec<usize>,
    ) -> Result<Self> {
        if centroids.is_empty() || counts.len() != centroids.len() {
            return Err(Error::Invariant("need one count per centroid".into()));
        }
        for c in &centroids {
            if c.len() != k_bits as usize {
                return Err(Error::Invariant(format!(
                    "centroid length {} does not match k_bits {}",
                    c.len(),
                    k_bits
                )));
            }
            if c.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::Invariant("centroid entry outside [0, 1]".into()));
            }
        }
        Ok(CentroidSet::new(k_bits, centroids, counts))
    }

    pub fn k_bits(&self) -> u32 {
        self.k_bits
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Distance from a binary vector to centroid `i`, computed sparsely:
    /// `D² = Σc² + popcount(v) − 2·Σ_{j∈ones(v)} c_j` with `Σc²` cached.
    pub fn distance_to(&self, i: usize, v: &FeatureVector) -> f64 {
        let c = &self.centroids[i];
        let mut cross = 0.0;
        for &j in v.ones() {
            cross += c[j as usize];
        }
        let d2 = self.sq_norms[i] + v.popcount() as f64 - 2.0 * cross;
        d2.max(0.0).sqrt()
    }

    /// Nearest centroid index and its distance; ties break to the lowest
    /// index.
    pub fn nearest(&self, v: &FeatureVector) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for i in 0..self.centroids.len() {
            let d = self.distance_to(i, v);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    // ---- serialization ----

    const MAGIC: &'static str = "schedlab-centroids";
    const VERSION: u32 = 1;

    pub fn save(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} v{}", Self::MAGIC, Self::VERSION)?;
        writeln!(w, "k_bits {}", self.k_bits)?;
        writeln!(w, "k {}", self.centroids.len())?;
        for (i, c) in self.centroids.iter().enumerate() {
            writeln!(w, "centroid {} count {}", i, self.counts[i])?;
            for (j, &x) in c.iter().enumerate() {
                if x != 0.0 {
                    writeln!(w, "{j} {x}")?;
                }
            }
        }
        Ok(())
    }

    pub fn load(r: impl Read) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty centroid file".into()))??;
        let expected = format!("{} v{}", Self::MAGIC, Self::VERSION);
        if header != expected {
            return Err(Error::Version(format!("`{header}`, expected `{expected}`")));
        }
        let mut k_bits = None;
        let mut k = None;
        let mut centroids: Vec<Vec<f64>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["k_bits", v] => {
                    k_bits = Some(v.parse::<u32>().map_err(|_| Error::Parse("bad k_bits".into()))?)
                }
                ["k", v] => k = Some(v.parse::<usize>().map_err(|_| Error::Parse("bad k".into()))?),
                ["centroid", _i, "count", c] => {
                    let kb = k_bits.ok_or_else(|| Error::Parse("centroid before k_bits".into()))?;
                    centroids.push(vec![0.0; kb as usize]);
                    counts.push(c.parse().map_err(|_| Error::Parse("bad count".into()))?);
                }
                [j, x] => {
                    let c = centroids
                        .last_mut()
                        .ok_or_else(|| Error::Parse("value before any centroid".into()))?;
                    let j: usize = j.parse().map_err(|_| Error::Parse("bad index".into()))?;
                    if j >= c.len() {
                        return Err(Error::Parse(format!("index {j} out of range")));
                    }
                    c[j] = x.parse().map_err(|_| Error::Parse("bad value".into()))?;
                }
                _ => return Err(Error::Parse(format!("bad centroid line `{line}`"))),
            }
        }
        let k_bits = k_bits.ok_or_else(|| Error::Parse("missing k_bits".into()))?;
        if k != Some(centroids.len()) {
            return Err(Error::Parse("centroid count does not match k".into()));
        }
        Ok(CentroidSet::new(k_bits, centroids, counts))
    }
}

/// Plain dense Euclidean distance.
pub fn euclidean_distance(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::Invariant(format!(
            "euclidean_distance length mismatch: {} vs {}",
            v.len(),
            w.len()
        )));
    }
    Ok(v.iter()
        .zip(w)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Queue index for a transaction vector: argmin of distance, lowest index
/// on ties.
pub fn nearest_centroid(v: &FeatureVector, cs: &CentroidSet) -> usize {
    cs.nearest(v).0
}

/// Within-cluster sum of squared distances for a given assignment.
fn wcss_of(points: &[&AbortVector], assignment: &[usize], cs: &CentroidSet) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| {
            let d = cs.distance_to(c, p.vector());
            d * d
        })
        .sum()
}

/// Restarts per fit; the lowest-WCSS run wins.
const KMEANS_RESTARTS: usize = 10;

/// Lloyd's algorithm with k-means++ seeding and several seeded restarts,
/// keeping the lowest-WCSS run.
///
/// Each run terminates at an assignment fixpoint or after `max_iters`.
/// Empty clusters are reseeded to the point farthest from its assigned
/// centroid. Input order is canonicalized internally, so permuting the
/// input changes nothing about the result.
pub fn kmeans_fit(
    abort_vectors: &[AbortVector],
    k: usize,
    rng: &mut impl Rng,
    max_iters: usize,
) -> Result<CentroidSet> {
    let mut best: Option<KmeansFit> = None;
    for _ in 0..KMEANS_RESTARTS {
        let fit = kmeans_fit_traced(abort_vectors, k, rng, max_iters)?;
        let better = match &best {
            None => true,
            Some(b) => fit.wcss() < b.wcss(),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart").centroids)
}

/// Fit plus the per-iteration WCSS trace (for the monotonicity property).
pub struct KmeansFit {
    pub centroids: CentroidSet,
    pub wcss_trace: Vec<f64>,
    pub iterations: usize,
}

impl KmeansFit {
    pub fn wcss(&self) -> f64 {
        self.wcss_trace.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// One seeded Lloyd run (no restarts).
pub fn kmeans_fit_traced(
    abort_vectors: &[AbortVector],
    k: usize,
    rng: &mut impl Rng,
    max_iters: usize,
) -> Result<KmeansFit> {
    if abort_vectors.is_empty() {
        return Err(Error::NoTrainingData("no abort data to cluster".into()));
    }
    if k == 0 {
        return Err(Error::Config("cluster count must be at least 1".into()));
    }
    let k_bits = abort_vectors[0].k_bits();
    if abort_vectors.iter().any(|v| v.k_bits() != k_bits) {
        return Err(Error::Invariant("mixed k_bits in abort vectors".into()));
    }

    // Canonical input order: the fit depends only on the multiset of
    // points and the seed.
    let mut points: Vec<&AbortVector> = abort_vectors.iter().collect();
    points.sort_by(|a, b| a.ones().cmp(b.ones()));
    let n = points.len();

    // k-means++ seeding over the points.
    let mut seeds: Vec<usize> = Vec::with_capacity(k);
    seeds.push(rng.gen_range(0..n));
    let mut best_d2: Vec<f64> = points
        .iter()
        .map(|p| binary_d2(p, points[seeds[0]]))
        .collect();
    while seeds.len() < k {
        let total: f64 = best_d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d2) in best_d2.iter().enumerate() {
                if u < d2 {
                    chosen = i;
                    break;
                }
                u -= d2;
            }
            chosen
        } else {
            // All remaining mass is zero (fewer distinct points than k).
            rng.gen_range(0..n)
        };
        seeds.push(pick);
        for (i, p) in points.iter().enumerate() {
            let d2 = binary_d2(p, points[pick]);
            if d2 < best_d2[i] {
                best_d2[i] = d2;
            }
        }
    }
    let mut centroids: Vec<Vec<f64>> = seeds
        .iter()
        .map(|&s| points[s].vector().to_dense())
        .collect();

    let mut assignment = vec![usize::MAX; n];
    let mut counts = vec![0usize; k];
    let mut wcss_trace = Vec::new();
    let mut iterations = 0usize;
    for _ in 0..max_iters {
        iterations += 1;
        // Assign.
        let cs = CentroidSet::new(k_bits, centroids.clone(), counts.clone());
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = cs.nearest(p.vector());
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        // Update means.
        counts = vec![0usize; k];
        for c in &mut centroids {
            c.iter_mut().for_each(|x| *x = 0.0);
        }
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i];
            counts[c] += 1;
            for &j in p.ones() {
                centroids[c][j as usize] += 1.0;
            }
        }
        for (c, &count) in centroids.iter_mut().zip(&counts) {
            if count > 0 {
                let inv = 1.0 / count as f64;
                c.iter_mut().for_each(|x| *x *= inv);
            }
        }
        // Reseed empty clusters to the point farthest from its centroid.
        let mut reseeded = false;
        for empty in 0..k {
            if counts[empty] > 0 {
                continue;
            }
            let cs_now = CentroidSet::new(k_bits, centroids.clone(), counts.clone());
            let far = (0..n)
                .max_by(|&a, &b| {
                    cs_now
                        .distance_to(assignment[a], points[a].vector())
                        .total_cmp(&cs_now.distance_to(assignment[b], points[b].vector()))
                        .then(b.cmp(&a))
                })
                .expect("non-empty points");
            centroids[empty] = points[far].vector().to_dense();
            reseeded = true;
        }
        let cs_after = CentroidSet::new(k_bits, centroids.clone(), counts.clone());
        wcss_trace.push(wcss_of(&points, &assignment, &cs_after));
        if !changed && !reseeded {
            break;
        }
    }

    Ok(KmeansFit {
        centroids: CentroidSet::new(k_bits, centroids, counts),
        wcss_trace,
        iterations,
    })
}

/// Squared distance between two binary vectors via their intersection.
fn binary_d2(a: &AbortVector, b: &AbortVector) -> f64 {
    let mut shared = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    let (va, vb) = (a.ones(), b.ones());
    while i < va.len() && j < vb.len() {
        match va[i].cmp(&vb[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                shared += 1;
                i += 1;
                j += 1;
            }
        }
    }
    (va.len() + vb.len() - 2 * shared) as f64
}
