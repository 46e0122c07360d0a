//! Locality-aware data chunking.
//!
//! Data are first pre-blocked on the (block address, access frequency) plane:
//! the address axis is cut into `q` equal regions of the address space
//! `[0, Q]`, and the frequency axis into log-scaled bins `floor(log_p(f))`,
//! where the frequency of a datum is its CTF popcount. The two bins are
//! independent, giving a grid of areas.
//!
//! Within each area, data are clustered greedily: starting from singletons,
//! the pair of chunks with the smallest feature distance among the pairs that
//! pass the strong-relation test is merged, the merged feature being the OR
//! of the two. Clustering stops when no pair qualifies. Ties are broken by the
//! smallest `(min member address, min member address)` pair. Two chunks that
//! never share a transaction can never qualify (their distance is the sum of
//! their popcounts), so only co-occurring pairs are ever scored.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, Header};
use crate::ctf::{intersection_len, union_sorted, relation_threshold, CtfMatrix, CtfVector, DistanceMetric};
use crate::extractor::write_joined;
use crate::union_find::DisjointSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AreaKey {
    pub addr_bin: u32,
    pub freq_bin: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkerConfig {
    /// Number of address regions.
    pub q: u32,
    /// Division coefficient of the frequency axis.
    pub p: f64,
    pub sigma: f64,
    pub metric: DistanceMetric,
}

impl Default for ChunkerConfig {
    fn default() -> Self {
        Self {
            q: 16,
            p: 2.0,
            sigma: 0.1,
            metric: DistanceMetric::SymmetricDifference,
        }
    }
}

impl ChunkerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(Error::InvalidConfig("q must be at least 1".into()));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidConfig(format!("p must be > 1, got {}", self.p)));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::InvalidConfig(format!(
                "sigma must lie in [0,1], got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Area of a datum, or `None` for frequency 0.
    pub fn area_key(&self, address: u64, frequency: usize, max_address: u64) -> Option<AreaKey> {
        if frequency == 0 {
            return None;
        }
        let addr_bin = if max_address == 0 {
            0
        } else {
            let bin = address as u128 * self.q as u128 / max_address as u128;
            bin.min(self.q as u128 - 1) as u32
        };
        // Largest k with p^k <= frequency, by repeated multiplication so exact
        // powers land in their own bin.
        let f = frequency as f64;
        let mut freq_bin = 0;
        let mut pow = self.p;
        while pow <= f {
            freq_bin += 1;
            pow *= self.p;
        }
        Some(AreaKey { addr_bin, freq_bin })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreBlocks {
    /// Area -> member addresses, ascending.
    pub areas: BTreeMap<AreaKey, Vec<u64>>,
    /// Data dropped for having frequency 0.
    pub excluded: usize,
}

/// Assigns `(address, frequency)` data to areas. `max_address` is `Q`.
pub fn pre_block(data: &[(u64, usize)], cfg: &ChunkerConfig, max_address: u64) -> Result<PreBlocks> {
    cfg.validate()?;
    let mut out = PreBlocks::default();
    for &(addr, freq) in data {
        match cfg.area_key(addr, freq, max_address) {
            Some(key) => out.areas.entry(key).or_default().push(addr),
            None => out.excluded += 1,
        }
    }
    for members in out.areas.values_mut() {
        members.sort_unstable();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub id: usize,
    /// Ascending.
    pub members: Vec<u64>,
    /// OR of the member features.
    pub feature: CtfVector,
    pub area: AreaKey,
}

/// One executed merge. Chunks are named by their smallest member address at
/// merge time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkMerge {
    pub left: u64,
    pub right: u64,
    pub distance: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaClustering {
    /// Member lists, each ascending, ordered by smallest member.
    pub chunks: Vec<Vec<u64>>,
    pub merges: Vec<ChunkMerge>,
}

struct ChunkState {
    feature: Vec<u32>,
    members: Vec<usize>,
    min_addr: u64,
    version: u32,
}

/// Greedy nearest-qualifying-pair clustering of one area.
pub fn cluster_area(
    area_data: &[u64],
    ctf: &CtfMatrix,
    sigma: f64,
    metric: DistanceMetric,
) -> Result<AreaClustering> {
    let mut addrs = area_data.to_vec();
    addrs.sort_unstable();
    addrs.dedup();
    let n = addrs.len();
    let mut states: Vec<ChunkState> = addrs
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let v = ctf.get(a).ok_or(Error::UnknownDatum(a))?;
            Ok(ChunkState {
                feature: v.bits().to_vec(),
                members: vec![i],
                min_addr: a,
                version: 0,
            })
        })
        .collect::<Result<_>>()?;

    // Transaction -> local data in this area.
    let mut by_txn: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, s) in states.iter().enumerate() {
        for &j in &s.feature {
            by_txn.entry(j).or_default().push(i);
        }
    }

    type Entry = Reverse<(usize, u64, u64, usize, usize, u32, u32)>;
    let mut heap: BinaryHeap<Entry> = BinaryHeap::new();
    let score = |a: &ChunkState, b: &ChunkState| -> Option<usize> {
        let common = intersection_len(&a.feature, &b.feature);
        if common == 0 {
            return None;
        }
        let d = a.feature.len() + b.feature.len() - 2 * common;
        let qualifies =
            metric.apply(d) <= relation_threshold(a.feature.len(), b.feature.len(), sigma);
        qualifies.then_some(d)
    };
    let entry = |d: usize, a: usize, b: usize, states: &[ChunkState]| -> Entry {
        let (x, y) = if states[a].min_addr < states[b].min_addr {
            (a, b)
        } else {
            (b, a)
        };
        Reverse((
            d,
            states[x].min_addr,
            states[y].min_addr,
            x,
            y,
            states[x].version,
            states[y].version,
        ))
    };

    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    for members in by_txn.values() {
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                let key = (a.min(b), a.max(b));
                if seen.insert(key) {
                    if let Some(d) = score(&states[a], &states[b]) {
                        heap.push(entry(d, a, b, &states));
                    }
                }
            }
        }
    }
    drop(seen);

    let mut ds = DisjointSet::new(n);
    let mut merges = Vec::new();
    let mut marker: HashSet<usize> = HashSet::new();
    while let Some(Reverse((d, _, _, a, b, va, vb))) = heap.pop() {
        if ds.find(a) != a || ds.find(b) != b {
            continue;
        }
        if states[a].version != va || states[b].version != vb {
            continue;
        }
        let threshold = relation_threshold(states[a].feature.len(), states[b].feature.len(), sigma);
        merges.push(ChunkMerge {
            left: states[a].min_addr,
            right: states[b].min_addr,
            distance: d,
            threshold,
        });
        let root = ds.union(a, b);
        let other = if root == a { b } else { a };
        let absorbed = std::mem::replace(
            &mut states[other],
            ChunkState {
                feature: Vec::new(),
                members: Vec::new(),
                min_addr: u64::MAX,
                version: u32::MAX,
            },
        );
        {
            let s = &mut states[root];
            s.feature = union_sorted(&s.feature, &absorbed.feature);
            s.members.extend(absorbed.members);
            s.min_addr = s.min_addr.min(absorbed.min_addr);
            s.version += 1;
        }

        marker.clear();
        let feature = states[root].feature.clone();
        for j in &feature {
            for &i in &by_txn[j] {
                let r = ds.find(i);
                if r != root && marker.insert(r) {
                    if let Some(d) = score(&states[root], &states[r]) {
                        heap.push(entry(d, root, r, &states));
                    }
                }
            }
        }
    }

    let mut chunks: Vec<Vec<u64>> = (0..n)
        .filter(|&i| ds.find(i) == i)
        .map(|i| {
            let mut m: Vec<u64> = states[i].members.iter().map(|&k| addrs[k]).collect();
            m.sort_unstable();
            m
        })
        .collect();
    chunks.sort_unstable_by_key(|m| m[0]);
    Ok(AreaClustering { chunks, merges })
}

/// All chunks of a CTF matrix with the datum -> chunk lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSet {
    pub config: ChunkerConfig,
    /// `Q`, the address-space bound used for binning.
    pub max_address: u64,
    /// Ordered by smallest member address; `chunks[i].id == i`.
    pub chunks: Vec<Chunk>,
    pub lookup: HashMap<u64, usize>,
    /// Merge audit, grouped by area in area order.
    pub merges: Vec<ChunkMerge>,
}

impl ChunkSet {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk_of(&self, address: u64) -> Option<usize> {
        self.lookup.get(&address).copied()
    }

    /// Rebuilds a chunk set from member lists (e.g. a deserialized artifact).
    pub fn from_members(
        members: Vec<Vec<u64>>,
        ctf: &CtfMatrix,
        config: ChunkerConfig,
        max_address: u64,
    ) -> Result<Self> {
        let mut chunks = Vec::with_capacity(members.len());
        for mut m in members {
            m.sort_unstable();
            let first = *m.first().ok_or_else(|| Error::InvalidConfig("empty chunk".into()))?;
            let mut feature = ctf.get(first).ok_or(Error::UnknownDatum(first))?.clone();
            for &a in &m[1..] {
                feature = feature.union(ctf.get(a).ok_or(Error::UnknownDatum(a))?)?;
            }
            let freq = ctf.get(first).map_or(0, |v| v.bits().len());
            let area = config
                .area_key(first, freq, max_address)
                .ok_or(Error::UnknownDatum(first))?;
            chunks.push(Chunk {
                id: 0,
                members: m,
                feature,
                area,
            });
        }
        chunks.sort_unstable_by_key(|c| c.members[0]);
        let mut lookup = HashMap::new();
        for (i, c) in chunks.iter_mut().enumerate() {
            c.id = i;
            for &a in &c.members {
                if lookup.insert(a, i).is_some() {
                    return Err(Error::InvalidConfig(format!(
                        "address {a} appears in two chunks"
                    )));
                }
            }
        }
        Ok(Self {
            config,
            max_address,
            chunks,
            lookup,
            merges: Vec::new(),
        })
    }

    /// Replays the merge audit from singletons, re-checking every merge
    /// against the strong-relation test, and compares the result with the
    /// stored chunks. Returns a description of the first discrepancy.
    pub fn verify_audit(&self, ctf: &CtfMatrix) -> std::result::Result<(), String> {
        let mut features: HashMap<u64, (Vec<u64>, CtfVector)> = HashMap::new();
        for c in &self.chunks {
            for &a in &c.members {
                let v = ctf.get(a).ok_or_else(|| format!("no CTF row for {a}"))?;
                features.insert(a, (vec![a], v.clone()));
            }
        }
        for (k, m) in self.merges.iter().enumerate() {
            let (lm, lf) = features
                .remove(&m.left)
                .ok_or_else(|| format!("merge {k}: {} is not a live chunk", m.left))?;
            let (rm, rf) = features
                .remove(&m.right)
                .ok_or_else(|| format!("merge {k}: {} is not a live chunk", m.right))?;
            let d = crate::ctf::distance(&lf, &rf).map_err(|e| e.to_string())?;
            let t = relation_threshold(lf.bits().len(), rf.bits().len(), self.config.sigma);
            if d != m.distance || (t - m.threshold).abs() > 1e-9 {
                return Err(format!("merge {k}: recorded ({}, {}) but recomputed ({d}, {t})", m.distance, m.threshold));
            }
            if self.config.metric.apply(d) > t {
                return Err(format!("merge {k}: distance {d} exceeds threshold {t}"));
            }
            let mut members = lm;
            members.extend(rm);
            let key = m.left.min(m.right);
            features.insert(key, (members, lf.union(&rf).map_err(|e| e.to_string())?));
        }
        let mut replayed: Vec<Vec<u64>> = features
            .into_values()
            .map(|(mut m, _)| {
                m.sort_unstable();
                m
            })
            .collect();
        replayed.sort_unstable_by_key(|m| m[0]);
        let stored: Vec<Vec<u64>> = self.chunks.iter().map(|c| c.members.clone()).collect();
        if replayed != stored {
            return Err("replayed partition differs from stored chunks".into());
        }
        Ok(())
    }

    pub fn write_tsv<W: Write>(&self, mut out: W, header: &Header) -> std::io::Result<()> {
        let mut header = header.clone();
        header.set("q", self.config.q);
        header.set("p", self.config.p);
        header.set("sigma", self.config.sigma);
        header.set("Q", self.max_address);
        header.write(&mut out)?;
        for c in &self.chunks {
            write!(out, "{}\t", c.id)?;
            write_joined(&mut out, &c.members)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads member lists and the header written by [`write_tsv`](Self::write_tsv).
    pub fn read_members<R: BufRead>(input: R) -> Result<(Vec<Vec<u64>>, Header)> {
        let (header, rows) = artifact::read_rows(input, '\t')?;
        let members = rows
            .iter()
            .map(|(line, f)| artifact::parse_list(f.get(1).map_or("", |s| s), *line))
            .collect::<Result<_>>()?;
        Ok((members, header))
    }
}

/// Pre-blocks and clusters every datum of `ctf`. `max_address` defaults to the
/// largest address present.
pub fn chunk_all(ctf: &CtfMatrix, cfg: &ChunkerConfig, max_address: Option<u64>) -> Result<ChunkSet> {
    cfg.validate()?;
    let q_max = max_address.unwrap_or_else(|| ctf.rows().keys().next_back().copied().unwrap_or(0));
    let data: Vec<(u64, usize)> = ctf
        .rows()
        .iter()
        .map(|(&a, v)| (a, v.bits().len()))
        .collect();
    let blocks = pre_block(&data, cfg, q_max)?;
    let areas: Vec<(AreaKey, Vec<u64>)> = blocks.areas.into_iter().collect();
    let clustered: Vec<(AreaKey, AreaClustering)> = areas
        .par_iter()
        .map(|(key, members)| Ok((*key, cluster_area(members, ctf, cfg.sigma, cfg.metric)?)))
        .collect::<Result<_>>()?;

    let mut chunks = Vec::new();
    let mut merges = Vec::new();
    for (area, result) in clustered {
        merges.extend(result.merges);
        for members in result.chunks {
            let mut feature = ctf.get(members[0]).expect("clustered from ctf rows").clone();
            for &a in &members[1..] {
                feature = feature.union(ctf.get(a).expect("clustered from ctf rows"))?;
            }
            chunks.push(Chunk {
                id: 0,
                members,
                feature,
                area,
            });
        }
    }
    chunks.sort_unstable_by_key(|c| c.members[0]);
    let mut lookup = HashMap::with_capacity(data.len());
    for (i, c) in chunks.iter_mut().enumerate() {
        c.id = i;
        for &a in &c.members {
            lookup.insert(a, i);
        }
    }
    Ok(ChunkSet {
        config: *cfg,
        max_address: q_max,
        chunks,
        lookup,
        merges,
    })
}
