//! Byte-capacity cache replay with LRU/FIFO baselines and two group
//! prefetching policies.
//!
//! Group policies evict per datum in LRU order and prefetch only on a miss.
//! On a miss the demand datum is admitted first, then the other members of
//! its group in ascending address order; members already resident are
//! touched in that same sequence so the admission never evicts part of the
//! group it is bringing in.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::Header;
use crate::grouper::GroupMembership;
use crate::trace_io::{AccessRecord, Op, Trace};
use crate::{Error, Result};

/// Size used for a prefetched member never seen in the trace.
pub const DEFAULT_DATUM_SIZE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Policy {
    Lru,
    Fifo,
    GroupPrefetch,
    GroupMerged,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Lru, Policy::Fifo, Policy::GroupPrefetch, Policy::GroupMerged];

    pub fn uses_groups(self) -> bool {
        matches!(self, Policy::GroupPrefetch | Policy::GroupMerged)
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Lru => "LRU",
            Policy::Fifo => "FIFO",
            Policy::GroupPrefetch => "GroupPrefetch",
            Policy::GroupMerged => "GroupMerged",
        })
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "lru" => Ok(Policy::Lru),
            "fifo" => Ok(Policy::Fifo),
            "groupprefetch" | "onestep" => Ok(Policy::GroupPrefetch),
            "groupmerged" | "merged" => Ok(Policy::GroupMerged),
            other => Err(Error::InvalidConfig(format!("unknown policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Capacity {
    Bytes(u64),
    /// Share of the unique bytes of the full trace.
    Fraction(f64),
}

/// Block address -> group lookup used by the group policies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupIndex {
    groups: Vec<Vec<u64>>,
    group_of: HashMap<u64, usize>,
}

impl GroupIndex {
    pub fn new(groups: Vec<Vec<u64>>) -> Self {
        let mut groups = groups;
        for g in &mut groups {
            g.sort_unstable();
            g.dedup();
        }
        let group_of = groups
            .iter()
            .enumerate()
            .flat_map(|(i, g)| g.iter().map(move |&a| (a, i)))
            .collect();
        Self { groups, group_of }
    }

    pub fn from_membership(m: &GroupMembership) -> Self {
        Self::new(m.groups.values().cloned().collect())
    }

    pub fn group_of(&self, address: u64) -> Option<&[u64]> {
        self.group_of.get(&address).map(|&i| self.groups[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub capacity: Capacity,
    pub policy: Policy,
    pub grouping: Option<Arc<GroupIndex>>,
    /// When false, a write miss goes to disk without being cached.
    pub write_allocate: bool,
    /// Window length for the rolling hit-rate series, if wanted.
    pub curve_window: Option<usize>,
}

impl SimConfig {
    pub fn new(capacity: Capacity, policy: Policy) -> Self {
        Self {
            capacity,
            policy,
            grouping: None,
            write_allocate: true,
            curve_window: None,
        }
    }

    pub fn with_grouping(mut self, g: Arc<GroupIndex>) -> Self {
        self.grouping = Some(g);
        self
    }

    /// Capacity in bytes, resolving a fraction against `unique_bytes`.
    pub fn resolve_capacity(&self, unique_bytes: u64) -> Result<u64> {
        let bytes = match self.capacity {
            Capacity::Bytes(b) => b,
            Capacity::Fraction(f) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "capacity fraction must lie in (0,1], got {f}"
                    )));
                }
                (f * unique_bytes as f64).floor() as u64
            }
        };
        if bytes == 0 {
            return Err(Error::InvalidConfig("cache capacity resolves to 0 bytes".into()));
        }
        Ok(bytes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.policy.uses_groups() && self.grouping.is_none() {
            return Err(Error::MissingGrouping(if self.policy == Policy::GroupMerged {
                "GroupMerged"
            } else {
                "GroupPrefetch"
            }));
        }
        if self.curve_window == Some(0) {
            return Err(Error::InvalidConfig("rolling window must be at least 1".into()));
        }
        Ok(())
    }
}

/// First-seen datum sizes over a whole trace, and the fraction base.
#[derive(Debug, Clone, Default)]
pub struct SizeTable {
    sizes: HashMap<u64, u64>,
    unique_bytes: u64,
}

impl SizeTable {
    pub fn from_trace(trace: &Trace) -> Self {
        let mut sizes = HashMap::new();
        let mut unique_bytes = 0u64;
        for r in &trace.records {
            sizes.entry(r.block_address).or_insert_with(|| {
                unique_bytes += r.size;
                r.size
            });
        }
        Self { sizes, unique_bytes }
    }

    pub fn size_of(&self, address: u64) -> u64 {
        self.sizes.get(&address).copied().unwrap_or(DEFAULT_DATUM_SIZE)
    }

    pub fn unique_bytes(&self) -> u64 {
        self.unique_bytes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub policy: Policy,
    pub capacity_fraction: Option<f64>,
    pub capacity_bytes: u64,
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
    pub disk_ios: u64,
    pub prefetched_bytes: u64,
    pub evictions: u64,
    /// Misses where the datum or its group did not fit the cache.
    pub bypasses: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hit_rate_curve: Option<Vec<f64>>,
}

/// Step-wise cache replay.
#[derive(Debug)]
pub struct Simulator<'a> {
    cfg: &'a SimConfig,
    sizes: &'a SizeTable,
    capacity: u64,
    resident: HashMap<u64, (u64, u64)>,
    order: BTreeMap<u64, u64>,
    occupied: u64,
    clock: u64,
    metrics: SimMetrics,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a SimConfig, sizes: &'a SizeTable) -> Result<Self> {
        cfg.validate()?;
        let capacity = cfg.resolve_capacity(sizes.unique_bytes())?;
        let capacity_fraction = match cfg.capacity {
            Capacity::Fraction(f) => Some(f),
            Capacity::Bytes(_) => None,
        };
        Ok(Self {
            cfg,
            sizes,
            capacity,
            resident: HashMap::new(),
            order: BTreeMap::new(),
            occupied: 0,
            clock: 0,
            metrics: SimMetrics {
                policy: cfg.policy,
                capacity_fraction,
                capacity_bytes: capacity,
                accesses: 0,
                hits: 0,
                misses: 0,
                hit_rate: 0.0,
                disk_ios: 0,
                prefetched_bytes: 0,
                evictions: 0,
                bypasses: 0,
                hit_rate_curve: None,
            },
        })
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn occupied(&self) -> u64 {
        self.occupied
    }

    pub fn is_resident(&self, address: u64) -> bool {
        self.resident.contains_key(&address)
    }

    fn stamp(&mut self, address: u64, size: u64) {
        self.clock += 1;
        if let Some((old, _)) = self.resident.insert(address, (self.clock, size)) {
            self.order.remove(&old);
        } else {
            self.occupied += size;
        }
        self.order.insert(self.clock, address);
    }

    fn evict_to_capacity(&mut self) {
        while self.occupied > self.capacity {
            let (_, victim) = self.order.pop_first().expect("occupied bytes imply residents");
            let (_, size) = self.resident.remove(&victim).expect("order and residents agree");
            self.occupied -= size;
            self.metrics.evictions += 1;
        }
    }

    /// Replays one access; returns whether it hit.
    pub fn access(&mut self, rec: &AccessRecord) -> bool {
        let addr = rec.block_address;
        self.metrics.accesses += 1;
        if let Some(&(_, size)) = self.resident.get(&addr) {
            self.metrics.hits += 1;
            if self.cfg.policy != Policy::Fifo {
                self.stamp(addr, size);
            }
            return true;
        }
        self.metrics.misses += 1;
        self.metrics.disk_ios += 1;
        if rec.op == Op::Write && !self.cfg.write_allocate {
            return false;
        }
        if rec.size > self.capacity {
            self.metrics.bypasses += 1;
            return false;
        }

        let group = if self.cfg.policy.uses_groups() {
            self.cfg.grouping.as_deref().and_then(|g| g.group_of(addr))
        } else {
            None
        };
        let Some(group) = group.filter(|g| g.len() > 1) else {
            self.stamp(addr, rec.size);
            self.evict_to_capacity();
            return false;
        };

        let member_size = |s: &Self, a: u64| match s.resident.get(&a) {
            Some(&(_, size)) => size,
            None => s.sizes.size_of(a),
        };
        let group_bytes: u64 = group
            .iter()
            .map(|&a| if a == addr { rec.size } else { member_size(self, a) })
            .sum();
        if group_bytes > self.capacity {
            self.metrics.bypasses += 1;
            self.stamp(addr, rec.size);
            self.evict_to_capacity();
            return false;
        }

        self.stamp(addr, rec.size);
        for &m in group {
            if m == addr {
                continue;
            }
            let size = member_size(self, m);
            if !self.resident.contains_key(&m) {
                self.metrics.prefetched_bytes += size;
                if self.cfg.policy == Policy::GroupPrefetch {
                    self.metrics.disk_ios += 1;
                }
            }
            self.stamp(m, size);
        }
        self.evict_to_capacity();
        false
    }

    pub fn metrics(&self) -> SimMetrics {
        let mut m = self.metrics.clone();
        m.hit_rate = if m.accesses == 0 {
            0.0
        } else {
            m.hits as f64 / m.accesses as f64
        };
        m
    }
}

/// Replays `trace` under `cfg`; sizes and the capacity base come from
/// `sizes`, normally built over the full (untruncated) trace.
pub fn simulate(trace: &Trace, cfg: &SimConfig, sizes: &SizeTable) -> Result<SimMetrics> {
    let mut sim = Simulator::new(cfg, sizes)?;
    let mut curve = cfg.curve_window.map(|w| (w, Vec::new(), 0u64, 0u64));
    for rec in &trace.records {
        let hit = sim.access(rec);
        debug_assert!(sim.occupied() <= sim.capacity());
        if let Some((w, series, n, h)) = curve.as_mut() {
            *n += 1;
            *h += hit as u64;
            if *n == *w as u64 {
                series.push(*h as f64 / *n as f64);
                (*n, *h) = (0, 0);
            }
        }
    }
    let mut m = sim.metrics();
    if let Some((_, mut series, n, h)) = curve {
        if n > 0 {
            series.push(h as f64 / n as f64);
        }
        m.hit_rate_curve = Some(series);
    }
    Ok(m)
}

/// Hit rate over consecutive windows of `window` accesses; a final short
/// window uses its own length as denominator.
pub fn rolling_hit_rate(trace: &Trace, cfg: &SimConfig, sizes: &SizeTable, window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidConfig("rolling window must be at least 1".into()));
    }
    let mut cfg = cfg.clone();
    cfg.curve_window = Some(window);
    Ok(simulate(trace, &cfg, sizes)?.hit_rate_curve.unwrap_or_default())
}

/// One run per `(fraction, policy)`, fraction-major, in input order.
pub fn sweep(
    trace: &Trace,
    sizes: &SizeTable,
    grouping: Option<Arc<GroupIndex>>,
    fractions: &[f64],
    policies: &[Policy],
) -> Result<Vec<SimMetrics>> {
    let configs: Vec<SimConfig> = fractions
        .iter()
        .flat_map(|&f| {
            policies.iter().map({
                let grouping = grouping.clone();
                move |&p| SimConfig {
                    grouping: grouping.clone(),
                    ..SimConfig::new(Capacity::Fraction(f), p)
                }
            })
        })
        .collect();
    sweep_configs(trace, sizes, &configs)
}

/// Runs every config concurrently, one cache each; rows follow input order.
/// All configs are validated before any run starts.
pub fn sweep_configs(trace: &Trace, sizes: &SizeTable, configs: &[SimConfig]) -> Result<Vec<SimMetrics>> {
    for c in configs {
        c.validate()?;
        c.resolve_capacity(sizes.unique_bytes())?;
    }
    configs.par_iter().map(|c| simulate(trace, c, sizes)).collect()
}

pub const METRICS_COLUMNS: &str =
    "policy,capacity_fraction,capacity_bytes,accesses,hits,misses,hit_rate,disk_ios,prefetched_bytes,evictions";

pub fn write_metrics_csv<W: Write>(rows: &[SimMetrics], mut out: W, header: &Header) -> std::io::Result<()> {
    header.write(&mut out)?;
    writeln!(out, "{METRICS_COLUMNS}")?;
    for m in rows {
        let fraction = m.capacity_fraction.map(|f| f.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{},{},{}",
            m.policy,
            fraction,
            m.capacity_bytes,
            m.accesses,
            m.hits,
            m.misses,
            m.hit_rate,
            m.disk_ios,
            m.prefetched_bytes,
            m.evictions
        )?;
    }
    Ok(())
}

pub fn write_rolling_csv<W: Write>(series: &[f64], mut out: W) -> std::io::Result<()> {
    writeln!(out, "window_index,hit_rate")?;
    for (i, r) in series.iter().enumerate() {
        writeln!(out, "{i},{r:.6}")?;
    }
    Ok(())
}
