//! Cache transaction features (CTF).
//!
//! Inverting a transaction log gives every datum a binary vector over
//! transaction indices: bit `j` is set iff the datum is a member of
//! transaction `j`. Vectors are stored sparsely as ascending index lists.
//!
//! The relationship distance between two vectors is the number of positions
//! where they differ (the squared Euclidean distance for binary vectors), so
//! that it is a transaction count like the right-hand side of the
//! strong-relation test. [`DistanceMetric::Euclidean`] takes the square root
//! for sensitivity checks.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::artifact::{self, Header};
use crate::extractor::{write_joined, CacheTransaction};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CtfVector {
    dim: usize,
    bits: Vec<u32>,
}

impl CtfVector {
    /// Builds a vector from set indices. Indices are sorted and deduplicated.
    pub fn new(dim: usize, mut bits: Vec<u32>) -> Result<Self> {
        bits.sort_unstable();
        bits.dedup();
        if let Some(&last) = bits.last() {
            if last as usize >= dim {
                return Err(Error::DimensionMismatch {
                    left: last as usize + 1,
                    right: dim,
                });
            }
        }
        Ok(Self { dim, bits })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> &[u32] {
        &self.bits
    }

    pub fn contains(&self, j: u32) -> bool {
        self.bits.binary_search(&j).is_ok()
    }

    /// Bitwise OR.
    pub fn union(&self, other: &CtfVector) -> Result<CtfVector> {
        self.check_dim(other)?;
        Ok(CtfVector {
            dim: self.dim,
            bits: union_sorted(&self.bits, &other.bits),
        })
    }

    /// Number of indices set in both vectors.
    pub fn common(&self, other: &CtfVector) -> Result<usize> {
        self.check_dim(other)?;
        Ok(intersection_len(&self.bits, &other.bits))
    }

    fn check_dim(&self, other: &CtfVector) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(())
    }
}

pub(crate) fn union_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut bits = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut k) = (0, 0);
    while i < a.len() && k < b.len() {
        let (x, y) = (a[i], b[k]);
        bits.push(x.min(y));
        i += usize::from(x <= y);
        k += usize::from(y <= x);
    }
    bits.extend_from_slice(&a[i..]);
    bits.extend_from_slice(&b[k..]);
    bits
}

pub(crate) fn intersection_len(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut k, mut n) = (0, 0, 0);
    while i < a.len() && k < b.len() {
        match a[i].cmp(&b[k]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => k += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                k += 1;
            }
        }
    }
    n
}

/// Access frequency of a datum: the number of transactions containing it.
pub fn access_frequency(x: &CtfVector) -> usize {
    x.bits.len()
}

/// Symmetric-difference cardinality of the two index sets.
pub fn distance(x: &CtfVector, y: &CtfVector) -> Result<usize> {
    let common = x.common(y)?;
    Ok(x.bits.len() + y.bits.len() - 2 * common)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DistanceMetric {
    #[default]
    SymmetricDifference,
    Euclidean,
}

impl DistanceMetric {
    pub fn apply(self, symmetric_difference: usize) -> f64 {
        match self {
            DistanceMetric::SymmetricDifference => symmetric_difference as f64,
            DistanceMetric::Euclidean => (symmetric_difference as f64).sqrt(),
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::SymmetricDifference => "symdiff",
            DistanceMetric::Euclidean => "euclidean",
        })
    }
}

impl std::str::FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "symdiff" | "hamming" | "symmetric-difference" => Ok(DistanceMetric::SymmetricDifference),
            "euclidean" => Ok(DistanceMetric::Euclidean),
            other => Err(Error::InvalidConfig(format!(
                "distance must be symdiff|euclidean, got {other:?}"
            ))),
        }
    }
}

/// Strong-relation threshold: `D <= (|x| + |y|) / 2 * sigma`.
pub fn relation_threshold(freq_x: usize, freq_y: usize, sigma: f64) -> f64 {
    (freq_x + freq_y) as f64 / 2.0 * sigma
}

/// True iff `distance(x, y) <= (|x| + |y|) / 2 * sigma`. The comparison is
/// non-strict so that `sigma = 0` relates exactly the identical vectors.
pub fn strong_relation(x: &CtfVector, y: &CtfVector, sigma: f64) -> Result<bool> {
    strong_relation_with(x, y, sigma, DistanceMetric::SymmetricDifference)
}

pub fn strong_relation_with(
    x: &CtfVector,
    y: &CtfVector,
    sigma: f64,
    metric: DistanceMetric,
) -> Result<bool> {
    let d = metric.apply(distance(x, y)?);
    Ok(d <= relation_threshold(x.bits.len(), y.bits.len(), sigma))
}

/// Per-datum features over a fixed number of transactions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CtfMatrix {
    num_transactions: usize,
    rows: BTreeMap<u64, CtfVector>,
}

impl CtfMatrix {
    pub fn from_rows(num_transactions: usize, rows: BTreeMap<u64, CtfVector>) -> Result<Self> {
        if let Some(v) = rows.values().find(|v| v.dim != num_transactions) {
            return Err(Error::DimensionMismatch {
                left: num_transactions,
                right: v.dim,
            });
        }
        Ok(Self { num_transactions, rows })
    }

    pub fn num_transactions(&self) -> usize {
        self.num_transactions
    }

    pub fn rows(&self) -> &BTreeMap<u64, CtfVector> {
        &self.rows
    }

    pub fn get(&self, address: u64) -> Option<&CtfVector> {
        self.rows.get(&address)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Member sets per transaction index, each in ascending address order.
    pub fn reconstruct_transactions(&self) -> Vec<Vec<u64>> {
        let mut out = vec![Vec::new(); self.num_transactions];
        for (&addr, v) in &self.rows {
            for &j in &v.bits {
                out[j as usize].push(addr);
            }
        }
        out
    }

    pub fn write_tsv<W: Write>(&self, mut out: W, header: &Header) -> std::io::Result<()> {
        let mut header = header.clone();
        header.set("num_transactions", self.num_transactions);
        header.write(&mut out)?;
        for (addr, v) in &self.rows {
            write!(out, "{addr}\t")?;
            write_joined(&mut out, &v.bits)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<(Self, Header)> {
        let (header, rows) = artifact::read_rows(input, '\t')?;
        let num_transactions: usize = header.parse_required("num_transactions")?;
        let mut matrix = CtfMatrix {
            num_transactions,
            rows: BTreeMap::new(),
        };
        for (line, fields) in rows {
            let addr: u64 = artifact::parse_field(&fields, 0, line)?;
            let bits = artifact::parse_list(fields.get(1).map_or("", |s| s), line)?;
            let v = CtfVector::new(num_transactions, bits).map_err(|e| Error::Parse {
                line,
                reason: e.to_string(),
            })?;
            matrix.rows.insert(addr, v);
        }
        Ok((matrix, header))
    }
}

/// Inverts transactions into features. The `j`-th transaction yielded is
/// dimension `j`.
pub fn build_ctf<'a, I>(transactions: I) -> CtfMatrix
where
    I: IntoIterator<Item = &'a CacheTransaction>,
{
    let mut rows: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
    let mut n = 0usize;
    for (j, t) in transactions.into_iter().enumerate() {
        debug_assert_eq!(t.index, j, "transaction indices must be consecutive");
        for &addr in &t.members {
            let bits = rows.entry(addr).or_default();
            // Members are duplicate-free, so j is pushed at most once per row.
            if bits.last() != Some(&(j as u32)) {
                bits.push(j as u32);
            }
        }
        n = j + 1;
    }
    CtfMatrix {
        num_transactions: n,
        rows: rows
            .into_iter()
            .map(|(a, bits)| (a, CtfVector { dim: n, bits }))
            .collect(),
    }
}
