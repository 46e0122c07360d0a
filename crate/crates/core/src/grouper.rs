//! Group mining over chunks.
//!
//! 1. Every transaction is projected onto chunks (deduplicated) and every
//!    unordered chunk pair in the projection gets one co-occurrence count `R`.
//! 2. A pair is a legal relation when `R >= max(|V_x|, |V_y|) * alpha`, where
//!    `|V_C|` is the number of transactions containing chunk `C`.
//! 3. Legal relations are processed strongest first. A relation whose
//!    endpoints lie in different groups increments the inter-group counter
//!    `R(G_x, G_y)` by one; the two groups merge as soon as
//!    `R(G_x, G_y) >= |G_x| * |G_y| * mu` (group sizes in chunks). The merged
//!    group's counters toward every third group are the sums of the
//!    constituents' counters.
//!
//! Every chunk ends in exactly one group, so groups are disjoint by
//! construction.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, Header};
use crate::chunker::ChunkSet;
use crate::extractor::CacheTransaction;
use crate::union_find::DisjointSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SortOrder {
    #[default]
    Descending,
    Ascending,
}

impl fmt::Display for SortOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SortOrder::Descending => "descending",
            SortOrder::Ascending => "ascending",
        })
    }
}

impl std::str::FromStr for SortOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "descending" | "desc" => Ok(SortOrder::Descending),
            "ascending" | "asc" => Ok(SortOrder::Ascending),
            other => Err(Error::InvalidConfig(format!(
                "sort must be descending|ascending, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrouperConfig {
    pub alpha: f64,
    pub mu: f64,
    pub order: SortOrder,
}

impl Default for GrouperConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            mu: 0.5,
            order: SortOrder::Descending,
        }
    }
}

impl GrouperConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("mu", self.mu)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Chunk co-occurrence counts plus per-chunk transaction counts `|V_C|`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationCounts {
    /// `(x, y)` with `x < y` -> number of transactions containing both.
    pub pairs: HashMap<(usize, usize), u32>,
    /// Number of transactions containing each chunk.
    pub chunk_frequency: Vec<u32>,
}

impl RelationCounts {
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.pairs.get(&(x.min(y), x.max(y))).copied().unwrap_or(0)
    }

    fn merge(mut self, other: RelationCounts) -> RelationCounts {
        let (mut big, small) = if self.pairs.len() >= other.pairs.len() {
            (std::mem::take(&mut self.pairs), other.pairs)
        } else {
            (other.pairs, std::mem::take(&mut self.pairs))
        };
        for (k, v) in small {
            *big.entry(k).or_default() += v;
        }
        let mut freq = self.chunk_frequency;
        for (a, b) in freq.iter_mut().zip(other.chunk_frequency) {
            *a += b;
        }
        RelationCounts {
            pairs: big,
            chunk_frequency: freq,
        }
    }
}

/// Counts, for every unordered chunk pair, the transactions whose chunk
/// projection contains both.
pub fn count_cooccurrence(
    transactions: &[&CacheTransaction],
    chunk_of: impl Fn(u64) -> Option<usize> + Sync,
    num_chunks: usize,
) -> Result<RelationCounts> {
    let empty = || RelationCounts {
        pairs: HashMap::new(),
        chunk_frequency: vec![0; num_chunks],
    };
    transactions
        .par_chunks(4096)
        .map(|batch| {
            let mut acc = empty();
            let mut projected: Vec<usize> = Vec::new();
            for t in batch {
                projected.clear();
                for &a in &t.members {
                    projected.push(chunk_of(a).ok_or(Error::UnresolvedDatum(a))?);
                }
                projected.sort_unstable();
                projected.dedup();
                for (i, &x) in projected.iter().enumerate() {
                    acc.chunk_frequency[x] += 1;
                    for &y in &projected[i + 1..] {
                        *acc.pairs.entry((x, y)).or_default() += 1;
                    }
                }
            }
            Ok(acc)
        })
        .try_reduce(empty, |a, b| Ok(a.merge(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Relation {
    /// Smaller chunk id.
    pub x: usize,
    pub y: usize,
    pub strength: u32,
}

/// Keeps pairs with `R >= max(|V_x|, |V_y|) * alpha`, ordered by strength
/// (descending by default), ties by `(x, y)` ascending.
pub fn legal_relations(counts: &RelationCounts, alpha: f64, order: SortOrder) -> Vec<Relation> {
    let mut out: Vec<Relation> = counts
        .pairs
        .iter()
        .filter(|(&(x, y), &r)| {
            let vx = counts.chunk_frequency[x];
            let vy = counts.chunk_frequency[y];
            r as f64 >= vx.max(vy) as f64 * alpha
        })
        .map(|(&(x, y), &r)| Relation { x, y, strength: r })
        .collect();
    match order {
        SortOrder::Descending => {
            out.sort_unstable_by(|a, b| b.strength.cmp(&a.strength).then((a.x, a.y).cmp(&(b.x, b.y))))
        }
        SortOrder::Ascending => {
            out.sort_unstable_by(|a, b| a.strength.cmp(&b.strength).then((a.x, a.y).cmp(&(b.x, b.y))))
        }
    }
    out
}

/// One executed group merge, as seen at merge time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRecord {
    /// The relation whose increment triggered the merge.
    pub relation: (usize, usize),
    pub size_x: usize,
    pub size_y: usize,
    pub counter: u32,
    pub threshold: f64,
}

/// Incremental merge state over chunk ids `0..n`.
#[derive(Debug, Clone)]
pub struct GroupMerger {
    mu: f64,
    ds: DisjointSet,
    size: Vec<usize>,
    edges: Vec<usize>,
    counters: HashMap<usize, HashMap<usize, u32>>,
    merges: Vec<MergeRecord>,
    processed_cross: usize,
    internal_increments: usize,
}

impl GroupMerger {
    pub fn new(num_chunks: usize, mu: f64) -> Self {
        Self {
            mu,
            ds: DisjointSet::new(num_chunks),
            size: vec![1; num_chunks],
            edges: vec![0; num_chunks],
            counters: HashMap::new(),
            merges: Vec::new(),
            processed_cross: 0,
            internal_increments: 0,
        }
    }

    pub fn group_of(&mut self, chunk: usize) -> usize {
        self.ds.find(chunk)
    }

    /// Current `R(G_a, G_b)` for the groups holding chunks `a` and `b`.
    pub fn counter(&mut self, a: usize, b: usize) -> u32 {
        let (ga, gb) = (self.ds.find(a), self.ds.find(b));
        self.counters
            .get(&ga)
            .and_then(|m| m.get(&gb))
            .copied()
            .unwrap_or(0)
    }

    /// Processes one relation. Returns the merge it triggered, if any.
    pub fn process(&mut self, rel: &Relation) -> Option<MergeRecord> {
        let (gx, gy) = (self.ds.find(rel.x), self.ds.find(rel.y));
        if gx == gy {
            return None;
        }
        self.processed_cross += 1;
        let counter = {
            let c = self.counters.entry(gx).or_default().entry(gy).or_default();
            *c += 1;
            *c
        };
        *self.counters.entry(gy).or_default().entry(gx).or_default() += 1;

        let threshold = self.size[gx] as f64 * self.size[gy] as f64 * self.mu;
        if (counter as f64) < threshold {
            return None;
        }
        let record = MergeRecord {
            relation: (rel.x, rel.y),
            size_x: self.size[gx],
            size_y: self.size[gy],
            counter,
            threshold,
        };
        self.merge(gx, gy, counter);
        self.merges.push(record);
        Some(record)
    }

    fn merge(&mut self, gx: usize, gy: usize, counter: u32) {
        let root = self.ds.union(gx, gy);
        let gone = if root == gx { gy } else { gx };
        self.size[root] += self.size[gone];
        self.edges[root] += self.edges[gone] + counter as usize;
        self.internal_increments += counter as usize;

        let gone_map = self.counters.remove(&gone).unwrap_or_default();
        if let Some(m) = self.counters.get_mut(&root) {
            m.remove(&gone);
        }
        for (third, c) in gone_map {
            if third == root {
                continue;
            }
            *self.counters.entry(root).or_default().entry(third).or_default() += c;
            let tm = self.counters.entry(third).or_default();
            tm.remove(&gone);
            *tm.entry(root).or_default() += c;
        }
    }

    /// Sum of `R(G_x, G_y)` over unordered group pairs plus the increments
    /// absorbed by merges equals the number of processed cross-group relations.
    pub fn conservation_holds(&self) -> bool {
        let open: u64 = self
            .counters
            .values()
            .flat_map(|m| m.values())
            .map(|&c| c as u64)
            .sum();
        open.is_multiple_of(2) && open / 2 + self.internal_increments as u64 == self.processed_cross as u64
    }

    pub fn merges(&self) -> &[MergeRecord] {
        &self.merges
    }

    /// Chunk -> group index, groups numbered by their smallest chunk id.
    pub fn finish(mut self) -> ChunkPartition {
        let n = self.size.len();
        let mut root_to_group: HashMap<usize, usize> = HashMap::new();
        let mut chunk_group = Vec::with_capacity(n);
        let mut group_edges = Vec::new();
        for c in 0..n {
            let r = self.ds.find(c);
            let next = root_to_group.len();
            let g = *root_to_group.entry(r).or_insert_with(|| {
                group_edges.push(self.edges[r]);
                next
            });
            chunk_group.push(g);
        }
        ChunkPartition {
            chunk_group,
            group_edges,
            merges: self.merges,
            processed_cross: self.processed_cross,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkPartition {
    pub chunk_group: Vec<usize>,
    /// Processed cross-group relations now internal to each group.
    pub group_edges: Vec<usize>,
    pub merges: Vec<MergeRecord>,
    pub processed_cross: usize,
}

/// Runs the merge over chunk ids `0..num_chunks`.
pub fn merge_chunks(relations: &[Relation], num_chunks: usize, mu: f64) -> ChunkPartition {
    let mut merger = GroupMerger::new(num_chunks, mu);
    for r in relations {
        merger.process(r);
    }
    merger.finish()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub id: usize,
    /// Ascending chunk ids.
    pub chunks: Vec<usize>,
    /// Ascending block addresses.
    pub members: Vec<u64>,
    pub edges: usize,
}

/// Final partition of all chunked data into groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub config: GrouperConfig,
    pub groups: Vec<Group>,
    pub chunk_group: Vec<usize>,
    pub merges: Vec<MergeRecord>,
    pub legal_relations: usize,
    pub processed_cross: usize,
}

/// Expands a chunk partition into address member lists.
pub fn merge_groups(relations: &[Relation], chunks: &ChunkSet, cfg: &GrouperConfig) -> Grouping {
    let part = merge_chunks(relations, chunks.len(), cfg.mu);
    let mut groups: Vec<Group> = part
        .group_edges
        .iter()
        .enumerate()
        .map(|(id, &edges)| Group {
            id,
            chunks: Vec::new(),
            members: Vec::new(),
            edges,
        })
        .collect();
    for (c, &g) in part.chunk_group.iter().enumerate() {
        groups[g].chunks.push(c);
        groups[g].members.extend_from_slice(&chunks.chunks[c].members);
    }
    for g in &mut groups {
        g.members.sort_unstable();
    }
    Grouping {
        config: *cfg,
        groups,
        chunk_group: part.chunk_group,
        merges: part.merges,
        legal_relations: relations.len(),
        processed_cross: part.processed_cross,
    }
}

/// Counts, filters, sorts and merges in one call.
pub fn group_chunks(
    transactions: &[&CacheTransaction],
    chunks: &ChunkSet,
    cfg: &GrouperConfig,
) -> Result<Grouping> {
    cfg.validate()?;
    let counts = count_cooccurrence(transactions, |a| chunks.chunk_of(a), chunks.len())?;
    let relations = legal_relations(&counts, cfg.alpha, cfg.order);
    Ok(merge_groups(&relations, chunks, cfg))
}

impl Grouping {
    /// Block address -> group id.
    pub fn membership(&self) -> HashMap<u64, usize> {
        self.groups
            .iter()
            .flat_map(|g| g.members.iter().map(move |&a| (a, g.id)))
            .collect()
    }

    /// Checks that no address appears in two groups.
    pub fn is_partition(&self) -> bool {
        let total: usize = self.groups.iter().map(|g| g.members.len()).sum();
        self.membership().len() == total
    }

    /// Replays the merge audit from singleton groups. Every merge must
    /// join two distinct groups of the recorded sizes with a counter meeting
    /// the `mu` threshold, and the replay must end in the stored partition.
    pub fn verify_audit(&self) -> std::result::Result<(), String> {
        let n = self.chunk_group.len();
        let mut ds = DisjointSet::new(n);
        let mut size = vec![1usize; n];
        for (k, m) in self.merges.iter().enumerate() {
            let (rx, ry) = (ds.find(m.relation.0), ds.find(m.relation.1));
            if rx == ry {
                return Err(format!("merge {k}: endpoints already share a group"));
            }
            if (size[rx], size[ry]) != (m.size_x, m.size_y) {
                return Err(format!(
                    "merge {k}: sizes ({}, {}) recorded, ({}, {}) replayed",
                    m.size_x, m.size_y, size[rx], size[ry]
                ));
            }
            let threshold = m.size_x as f64 * m.size_y as f64 * self.config.mu;
            if (m.counter as f64) < threshold {
                return Err(format!("merge {k}: counter {} below threshold {threshold}", m.counter));
            }
            let r = ds.union(rx, ry);
            size[r] = m.size_x + m.size_y;
        }
        let mut replay_id: HashMap<usize, usize> = HashMap::new();
        let mut stored_id: HashMap<usize, usize> = HashMap::new();
        for c in 0..n {
            let r = ds.find(c);
            let g = self.chunk_group[c];
            if *replay_id.entry(r).or_insert(g) != g || *stored_id.entry(g).or_insert(r) != r {
                return Err(format!("chunk {c}: replayed partition differs"));
            }
        }
        Ok(())
    }

    /// `group_id,block_address` rows after the metadata header.
    pub fn write_csv<W: Write>(&self, mut out: W, header: &Header) -> std::io::Result<()> {
        let mut header = header.clone();
        header.set("alpha", self.config.alpha);
        header.set("mu", self.config.mu);
        header.set("sort", self.config.order);
        header.write(&mut out)?;
        for g in &self.groups {
            for a in &g.members {
                writeln!(out, "{},{a}", g.id)?;
            }
        }
        Ok(())
    }
}

/// Group membership as read back from a grouping artifact.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupMembership {
    /// Group id -> ascending member addresses.
    pub groups: BTreeMap<usize, Vec<u64>>,
}

impl GroupMembership {
    pub fn from_grouping(g: &Grouping) -> Self {
        Self {
            groups: g.groups.iter().map(|g| (g.id, g.members.clone())).collect(),
        }
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<(Self, Header)> {
        let (header, rows) = artifact::read_rows(input, ',')?;
        let mut groups: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
        let mut seen = std::collections::HashSet::new();
        for (line, fields) in rows {
            let id: usize = artifact::parse_field(&fields, 0, line)?;
            let addr: u64 = artifact::parse_field(&fields, 1, line)?;
            if !seen.insert(addr) {
                return Err(Error::Parse {
                    line,
                    reason: format!("address {addr} listed twice"),
                });
            }
            groups.entry(id).or_default().push(addr);
        }
        for m in groups.values_mut() {
            m.sort_unstable();
        }
        Ok((Self { groups }, header))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupingReport {
    pub group_count: usize,
    pub chunk_count: usize,
    pub datum_count: usize,
    /// Group size in data -> number of groups.
    pub size_histogram: BTreeMap<usize, usize>,
    /// Per group: processed edges over possible chunk pairs; `None` for
    /// single-chunk groups.
    pub densities: Vec<Option<f64>>,
}

impl GroupingReport {
    /// Groups with at least `min_size` data.
    pub fn groups_at_least(&self, min_size: usize) -> usize {
        self.size_histogram.range(min_size..).map(|(_, &n)| n).sum()
    }
}

pub fn grouping_report(grouping: &Grouping) -> GroupingReport {
    let mut size_histogram = BTreeMap::new();
    for g in &grouping.groups {
        *size_histogram.entry(g.members.len()).or_default() += 1;
    }
    GroupingReport {
        group_count: grouping.groups.len(),
        chunk_count: grouping.chunk_group.len(),
        datum_count: grouping.groups.iter().map(|g| g.members.len()).sum(),
        size_histogram,
        densities: grouping
            .groups
            .iter()
            .map(|g| {
                let n = g.chunks.len();
                (n > 1).then(|| g.edges as f64 / (n * (n - 1) / 2) as f64)
            })
            .collect(),
    }
}
