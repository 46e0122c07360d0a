//! Workload locality statistics.
//!
//! `W(x, y)` is the mean, over the accesses of `x`, of the distance in access
//! sequence numbers to the nearest access of `y`. It is asymmetric (it is
//! normalized by the access count of `x`); [`Symmetry::MinOfBoth`] takes
//! `min(W(x,y), W(y,x))`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use crate::extractor::CacheTransaction;
use crate::trace_io::Trace;
use crate::{Error, Result};

/// Per-datum ascending access sequence numbers.
#[derive(Debug, Clone, Default)]
pub struct AccessIndex {
    seqs: HashMap<u64, Vec<usize>>,
}

impl AccessIndex {
    pub fn build(trace: &Trace) -> Self {
        let mut seqs: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, r) in trace.records.iter().enumerate() {
            seqs.entry(r.block_address).or_default().push(i);
        }
        Self { seqs }
    }

    pub fn from_sequences(seqs: impl IntoIterator<Item = (u64, Vec<usize>)>) -> Self {
        Self {
            seqs: seqs
                .into_iter()
                .map(|(a, mut s)| {
                    s.sort_unstable();
                    (a, s)
                })
                .collect(),
        }
    }

    pub fn sequences(&self, x: u64) -> Option<&[usize]> {
        self.seqs.get(&x).map(Vec::as_slice)
    }

    /// Total access count `A_x`.
    pub fn access_count(&self, x: u64) -> Option<usize> {
        self.seqs.get(&x).map(Vec::len)
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }
}

fn nearest_gap(sorted: &[usize], s: usize) -> usize {
    let idx = sorted.partition_point(|&t| t < s);
    let after = sorted.get(idx).map(|&t| t - s);
    let before = idx.checked_sub(1).map(|i| s - sorted[i]);
    match (before, after) {
        (Some(b), Some(a)) => a.min(b),
        (Some(b), None) => b,
        (None, Some(a)) => a,
        (None, None) => unreachable!("sequence lists are never empty"),
    }
}

/// `W(x, y)` as defined in the module docs.
pub fn relation_strength(index: &AccessIndex, x: u64, y: u64) -> Result<f64> {
    let xs = index.sequences(x).ok_or(Error::UnknownDatum(x))?;
    let ys = index.sequences(y).ok_or(Error::UnknownDatum(y))?;
    let total: usize = xs.iter().map(|&s| nearest_gap(ys, s)).sum();
    Ok(total as f64 / xs.len() as f64)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Symmetry {
    #[default]
    Directed,
    MinOfBoth,
}

pub fn relation_strength_with(index: &AccessIndex, x: u64, y: u64, symmetry: Symmetry) -> Result<f64> {
    let w = relation_strength(index, x, y)?;
    Ok(match symmetry {
        Symmetry::Directed => w,
        Symmetry::MinOfBoth => w.min(relation_strength(index, y, x)?),
    })
}

/// Pairs `(x, y)` where `x` occurs at least `min_occurrences` times and every
/// occurrence is immediately followed by an access to `y != x`.
pub fn sequential_pairs(trace: &Trace, min_occurrences: usize) -> Vec<(u64, u64)> {
    #[derive(Clone, Copy)]
    struct Follow {
        count: usize,
        next: Option<u64>,
        consistent: bool,
    }
    let recs = &trace.records;
    let mut state: HashMap<u64, Follow> = HashMap::new();
    for (i, r) in recs.iter().enumerate() {
        let next = recs.get(i + 1).map(|n| n.block_address);
        let f = state.entry(r.block_address).or_insert(Follow {
            count: 0,
            next,
            consistent: true,
        });
        f.count += 1;
        if next.is_none() || next != f.next || next == Some(r.block_address) {
            f.consistent = false;
        }
    }
    let mut pairs: Vec<(u64, u64)> = state
        .into_iter()
        .filter(|(_, f)| f.consistent && f.count >= min_occurrences.max(1))
        .map(|(x, f)| (x, f.next.expect("consistent implies a follower")))
        .collect();
    pairs.sort_unstable();
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBucket {
    pub lo: u64,
    /// Exclusive upper bound.
    pub hi: u64,
    pub count: usize,
    pub cdf: f64,
}

/// Block-address distances of sequentially related pairs, bucketed by powers
/// of two: `[0,1)`, `[1,2)`, `[2,4)`, ...
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistanceHistogram {
    pub pairs: Vec<(u64, u64)>,
    /// Sorted ascending.
    pub distances: Vec<u64>,
    pub buckets: Vec<HistogramBucket>,
}

impl DistanceHistogram {
    pub fn total(&self) -> usize {
        self.distances.len()
    }

    /// Fraction of pairs with distance `<= d`; `None` when there are no pairs.
    pub fn cdf_at(&self, d: u64) -> Option<f64> {
        if self.distances.is_empty() {
            return None;
        }
        let n = self.distances.partition_point(|&x| x <= d);
        Some(n as f64 / self.distances.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bucket_lo,bucket_hi,count,cdf")?;
        for b in &self.buckets {
            writeln!(out, "{},{},{},{:.6}", b.lo, b.hi, b.count, b.cdf)?;
        }
        Ok(())
    }
}

fn bucket_of(d: u64) -> u32 {
    if d == 0 {
        0
    } else {
        64 - d.leading_zeros()
    }
}

fn bucket_bounds(k: u32) -> (u64, u64) {
    match k {
        0 => (0, 1),
        64 => (1 << 63, u64::MAX),
        _ => (1u64 << (k - 1), 1u64 << k),
    }
}

pub fn related_pair_distance_histogram(trace: &Trace, min_occurrences: usize) -> DistanceHistogram {
    let pairs = sequential_pairs(trace, min_occurrences);
    let mut distances: Vec<u64> = pairs.iter().map(|&(x, y)| x.abs_diff(y)).collect();
    distances.sort_unstable();
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for &d in &distances {
        *counts.entry(bucket_of(d)).or_default() += 1;
    }
    let total = distances.len();
    let mut running = 0;
    let buckets = counts
        .into_iter()
        .map(|(k, count)| {
            running += count;
            let (lo, hi) = bucket_bounds(k);
            HistogramBucket {
                lo,
                hi,
                count,
                cdf: running as f64 / total as f64,
            }
        })
        .collect();
    DistanceHistogram {
        pairs,
        distances,
        buckets,
    }
}

/// Unordered pairs `(x < y)` that share at least one transaction.
pub fn cooccurring_pairs<'a, I>(transactions: I) -> Vec<(u64, u64)>
where
    I: IntoIterator<Item = &'a CacheTransaction>,
{
    let mut set = BTreeSet::new();
    for t in transactions {
        let mut m = t.members.clone();
        m.sort_unstable();
        for (i, &x) in m.iter().enumerate() {
            for &y in &m[i + 1..] {
                set.insert((x, y));
            }
        }
    }
    set.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapRow {
    pub limit: f64,
    pub pairs: usize,
    /// `|A_x - A_y|` -> number of pairs.
    pub gaps: BTreeMap<usize, usize>,
    /// `None` when no pair falls under the limit.
    pub equal_fraction: Option<f64>,
}

/// For every limit `w`, the distribution of access-count differences over the
/// candidate pairs with `W(x, y) < w`.
pub fn access_count_gap_report(
    index: &AccessIndex,
    pairs: &[(u64, u64)],
    limits: &[f64],
    symmetry: Symmetry,
) -> Result<Vec<GapRow>> {
    if limits.is_empty() {
        return Err(Error::InvalidConfig("at least one W limit is required".into()));
    }
    let scored: Vec<(f64, usize)> = pairs
        .iter()
        .map(|&(x, y)| {
            let w = relation_strength_with(index, x, y, symmetry)?;
            let ax = index.access_count(x).unwrap_or(0);
            let ay = index.access_count(y).unwrap_or(0);
            Ok((w, ax.abs_diff(ay)))
        })
        .collect::<Result<_>>()?;
    Ok(limits
        .iter()
        .map(|&limit| {
            let mut gaps = BTreeMap::new();
            let mut n = 0;
            for &(w, gap) in &scored {
                if w < limit {
                    *gaps.entry(gap).or_default() += 1;
                    n += 1;
                }
            }
            let equal = gaps.get(&0).copied().unwrap_or(0);
            GapRow {
                limit,
                pairs: n,
                gaps,
                equal_fraction: (n > 0).then(|| equal as f64 / n as f64),
            }
        })
        .collect())
}

pub fn write_gap_report<W: Write>(rows: &[GapRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "W_limit,equal_fraction")?;
    for r in rows {
        match r.equal_fraction {
            Some(f) => writeln!(out, "{},{f:.6}", r.limit)?,
            None => writeln!(out, "{},NA", r.limit)?,
        }
    }
    Ok(())
}
