//! Block I/O trace ingestion, synthesis and train/test splitting.
//!
//! Input traces follow the SNIA MSR-Cambridge CSV layout:
//! `Timestamp,Hostname,DiskNumber,Type,Offset,Size,ResponseTime`.
//! A datum is identified by its starting byte offset alone.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Read => f.write_str("Read"),
            Op::Write => f.write_str("Write"),
        }
    }
}

/// One block-layer access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRecord {
    /// Ticks of 100 ns.
    pub timestamp: u64,
    /// Byte offset of the accessed extent.
    pub block_address: u64,
    pub size: u64,
    pub op: Op,
}

/// An ordered access stream. The index of a record is its access sequence number.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub records: Vec<AccessRecord>,
    pub source_label: String,
}

impl Trace {
    pub fn new(records: Vec<AccessRecord>, source_label: impl Into<String>) -> Self {
        Self {
            records,
            source_label: source_label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sum of first-seen sizes over distinct block addresses.
    pub fn unique_bytes(&self) -> u64 {
        let mut seen = std::collections::HashSet::with_capacity(self.records.len() / 4);
        self.records
            .iter()
            .filter(|r| seen.insert(r.block_address))
            .map(|r| r.size)
            .sum()
    }

    /// Serializes to the 7-column CSV layout. Host is the source label, disk
    /// number and response time are written as 0.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let host = if self.source_label.is_empty() || self.source_label.contains(',') {
            "trace"
        } else {
            self.source_label.as_str()
        };
        for r in &self.records {
            writeln!(
                out,
                "{},{},0,{},{},{},0",
                r.timestamp, host, r.op, r.block_address, r.size
            )?;
        }
        Ok(())
    }
}

/// Which operations to keep when loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpsFilter {
    Read,
    Write,
    #[default]
    Both,
}

impl OpsFilter {
    pub fn admits(self, op: Op) -> bool {
        match self {
            OpsFilter::Both => true,
            OpsFilter::Read => op == Op::Read,
            OpsFilter::Write => op == Op::Write,
        }
    }
}

impl std::str::FromStr for OpsFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "read" | "reads" => Ok(OpsFilter::Read),
            "write" | "writes" => Ok(OpsFilter::Write),
            "both" | "all" => Ok(OpsFilter::Both),
            other => Err(Error::InvalidConfig(format!(
                "ops must be read|write|both, got {other:?}"
            ))),
        }
    }
}

impl fmt::Display for OpsFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpsFilter::Read => "read",
            OpsFilter::Write => "write",
            OpsFilter::Both => "both",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub skip_malformed: bool,
    pub ops: OpsFilter,
    /// Keep only records from this host name.
    pub host: Option<String>,
    /// Keep only records from this disk number.
    pub disk: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct LoadedTrace {
    pub trace: Trace,
    /// Malformed or rejected lines skipped under `skip_malformed`.
    pub skipped: usize,
    /// Valid records dropped by the op/host/disk filters.
    pub filtered: usize,
}

/// A parsed line including the columns that carry no algorithmic weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MsrLine<'a> {
    pub record: AccessRecord,
    pub hostname: &'a str,
    pub disk: u32,
}

/// Parses one 7-column MSR line. `line_no` is 1-based and only used for errors.
pub fn parse_record(line: &str, line_no: usize) -> Result<AccessRecord> {
    parse_line(line, line_no).map(|l| l.record)
}

pub fn parse_line(line: &str, line_no: usize) -> Result<MsrLine<'_>> {
    let malformed = |reason: String| Error::Parse {
        line: line_no,
        reason,
    };
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
    if fields.len() != 7 {
        return Err(malformed(format!("expected 7 fields, found {}", fields.len())));
    }
    let timestamp = fields[0]
        .trim()
        .parse::<u64>()
        .map_err(|e| malformed(format!("timestamp {:?}: {e}", fields[0])))?;
    let disk = fields[2]
        .trim()
        .parse::<u32>()
        .map_err(|e| malformed(format!("disk number {:?}: {e}", fields[2])))?;
    let op = match fields[3].trim().to_ascii_lowercase().as_str() {
        "read" => Op::Read,
        "write" => Op::Write,
        other => return Err(malformed(format!("unknown op {other:?}"))),
    };
    let block_address = fields[4]
        .trim()
        .parse::<u64>()
        .map_err(|e| malformed(format!("offset {:?}: {e}", fields[4])))?;
    let size = fields[5]
        .trim()
        .parse::<i128>()
        .map_err(|e| malformed(format!("size {:?}: {e}", fields[5])))?;
    if size <= 0 {
        return Err(Error::RejectedRecord {
            line: line_no,
            reason: format!("size {size} is not positive"),
        });
    }
    let size = u64::try_from(size).map_err(|_| Error::RejectedRecord {
        line: line_no,
        reason: format!("size {size} overflows"),
    })?;
    if block_address.checked_add(size).is_none() {
        return Err(Error::RejectedRecord {
            line: line_no,
            reason: "offset + size overflows".into(),
        });
    }
    Ok(MsrLine {
        record: AccessRecord {
            timestamp,
            block_address,
            size,
            op,
        },
        hostname: fields[1].trim(),
        disk,
    })
}

/// Loads a trace file, aborting on the first malformed line unless
/// `skip_malformed` is set.
pub fn load_trace(path: impl AsRef<Path>, skip_malformed: bool) -> Result<LoadedTrace> {
    load_trace_with(
        path,
        &LoadOptions {
            skip_malformed,
            ..Default::default()
        },
    )
}

pub fn load_trace_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<LoadedTrace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_trace(BufReader::new(file), label, opts).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_trace<R: BufRead>(
    mut reader: R,
    label: impl Into<String>,
    opts: &LoadOptions,
) -> Result<LoadedTrace> {
    let mut records = Vec::new();
    let mut skipped = 0;
    let mut filtered = 0;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader
            .read_line(&mut buf)
            .map_err(|e| Error::io("<reader>", e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        let line = buf.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 1 && is_header(line) {
            continue;
        }
        match parse_line(line, line_no) {
            Ok(parsed) => {
                let keep = opts.ops.admits(parsed.record.op)
                    && opts.host.as_deref().is_none_or(|h| h == parsed.hostname)
                    && opts.disk.is_none_or(|d| d == parsed.disk);
                if keep {
                    records.push(parsed.record);
                } else {
                    filtered += 1;
                }
            }
            Err(_) if opts.skip_malformed => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyTrace);
    }
    Ok(LoadedTrace {
        trace: Trace::new(records, label),
        skipped,
        filtered,
    })
}

fn is_header(line: &str) -> bool {
    line.split(',')
        .next()
        .is_some_and(|first| first.trim().parse::<u64>().is_err())
}

/// Splits into `[0, train_count)` and the remainder.
pub fn split_trace(trace: &Trace, train_count: usize) -> Result<(Trace, Trace)> {
    if train_count == 0 || train_count >= trace.len() {
        return Err(Error::SplitOutOfRange {
            train_count,
            len: trace.len(),
        });
    }
    let (train, test) = trace.records.split_at(train_count);
    Ok((
        Trace::new(train.to_vec(), format!("{}:train", trace.source_label)),
        Trace::new(test.to_vec(), format!("{}:test", trace.source_label)),
    ))
}

/// Train prefix length for a fraction of the trace, clamped to a valid split.
pub fn train_count_for_fraction(len: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must lie in (0,1), got {fraction}"
        )));
    }
    if len < 2 {
        return Err(Error::SplitOutOfRange { train_count: 0, len });
    }
    Ok(((len as f64 * fraction).round() as usize).clamp(1, len - 1))
}

/// A planted group: `size` data accessed together as a contiguous run with
/// probability `intra_probability` whenever one of them is picked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedGroup {
    pub size: usize,
    pub intra_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SizeDistribution {
    Fixed(u64),
    /// Uniform over `[min, max]`, rounded down to a multiple of `align`.
    Uniform { min: u64, max: u64, align: u64 },
}

/// Parameters of a synthetic trace with planted groups.
///
/// Data `0..sum(group sizes)` form the planted groups; the rest are accessed
/// alone. Each step picks a datum (uniformly, or Zipf by a random rank when
/// `zipf_exponent > 0`); if it belongs to a planted group the whole group is
/// emitted in its fixed member order with the group's intra probability.
/// Addresses come from laying the data out back to back in a random order,
/// so group members are scattered over the address space unless
/// `contiguous_groups` is set, in which case each group occupies one
/// contiguous extent in member order (like the blocks of a file). With
/// `truncation > 0` a triggered run stops after a uniformly random prefix
/// with that probability, the way partial file reads do.
///
/// The generator is ChaCha8 seeded with `rng_seed` through
/// `SeedableRng::seed_from_u64`, which is specified independently of the
/// platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_data: usize,
    pub num_accesses: usize,
    pub group_structure: Vec<PlantedGroup>,
    pub size_distribution: SizeDistribution,
    pub zipf_exponent: f64,
    pub write_fraction: f64,
    pub contiguous_groups: bool,
    pub truncation: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_data: 1000,
            num_accesses: 10_000,
            group_structure: Vec::new(),
            size_distribution: SizeDistribution::Fixed(4096),
            zipf_exponent: 0.0,
            write_fraction: 0.0,
            contiguous_groups: false,
            truncation: 0.0,
            rng_seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_data == 0 {
            return bad("num_data must be positive".into());
        }
        let planted: usize = self.group_structure.iter().map(|g| g.size).sum();
        if planted > self.num_data {
            return bad(format!(
                "planted groups need {planted} data but num_data is {}",
                self.num_data
            ));
        }
        for g in &self.group_structure {
            if g.size == 0 {
                return bad("planted group size must be positive".into());
            }
            if !(0.0..=1.0).contains(&g.intra_probability) {
                return bad(format!(
                    "intra probability {} outside [0,1]",
                    g.intra_probability
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.write_fraction) {
            return bad(format!("write_fraction {} outside [0,1]", self.write_fraction));
        }
        if !(0.0..=1.0).contains(&self.truncation) {
            return bad(format!("truncation {} outside [0,1]", self.truncation));
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad(format!("zipf exponent {} must be >= 0", self.zipf_exponent));
        }
        match self.size_distribution {
            SizeDistribution::Fixed(0) => bad("fixed size must be positive".into()),
            SizeDistribution::Uniform { min, max, align } => {
                if align == 0 || min == 0 || min > max || max / align * align < min.max(align) {
                    bad(format!("bad uniform size range {min}..{max} align {align}"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Parses flat `key=value` lines. Keys: `num_data`, `num_accesses`,
    /// `groups` (comma list of `size:prob`, optionally prefixed `Nx` to repeat),
    /// `size` (`4096` or `512..65536`), `size_align`, `zipf`, `write_fraction`,
    /// `contiguous` (`true`/`false`), `truncation`, `seed`.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut spec = SyntheticSpec::default();
        let mut size_text: Option<String> = None;
        let mut align = 512;
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", line_no + 1))
            })?;
            let (key, value) = (key.trim().replace('-', "_"), value.trim());
            let num = |v: &str| -> Result<u64> {
                v.parse()
                    .map_err(|_| Error::InvalidConfig(format!("{key}: not an integer: {v:?}")))
            };
            let real = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| Error::InvalidConfig(format!("{key}: not a number: {v:?}")))
            };
            match key.as_str() {
                "num_data" => spec.num_data = num(value)? as usize,
                "num_accesses" => spec.num_accesses = num(value)? as usize,
                "groups" | "group_structure" => spec.group_structure = parse_groups(value)?,
                "size" | "size_distribution" => size_text = Some(value.to_string()),
                "size_align" => align = num(value)?,
                "zipf" | "zipf_exponent" => spec.zipf_exponent = real(value)?,
                "write_fraction" => spec.write_fraction = real(value)?,
                "contiguous" | "contiguous_groups" => {
                    spec.contiguous_groups = value.parse().map_err(|_| {
                        Error::InvalidConfig(format!("{key}: expected true or false, got {value:?}"))
                    })?
                }
                "truncation" => spec.truncation = real(value)?,
                "seed" | "rng_seed" => spec.rng_seed = num(value)?,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown synthetic spec key {other:?}"
                    )))
                }
            }
        }
        if let Some(s) = size_text {
            spec.size_distribution = match s.split_once("..") {
                Some((lo, hi)) => SizeDistribution::Uniform {
                    min: lo.trim().parse().map_err(|_| bad_size(&s))?,
                    max: hi.trim().parse().map_err(|_| bad_size(&s))?,
                    align,
                },
                None => SizeDistribution::Fixed(s.parse().map_err(|_| bad_size(&s))?),
            };
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn bad_size(s: &str) -> Error {
    Error::InvalidConfig(format!("size: expected N or MIN..MAX, got {s:?}"))
}

fn parse_groups(value: &str) -> Result<Vec<PlantedGroup>> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::InvalidConfig(format!("groups: bad entry {item:?}"));
        let (repeat, rest) = match item.split_once('x') {
            Some((n, rest)) => (n.trim().parse::<usize>().map_err(|_| bad())?, rest),
            None => (1, item),
        };
        let (size, prob) = rest.split_once(':').ok_or_else(bad)?;
        let group = PlantedGroup {
            size: size.trim().parse().map_err(|_| bad())?,
            intra_probability: prob.trim().parse().map_err(|_| bad())?,
        };
        out.extend(std::iter::repeat_n(group, repeat));
    }
    Ok(out)
}

/// A synthetic trace plus its planted partition (block addresses per group).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrace {
    pub trace: Trace,
    pub planted: Vec<Vec<u64>>,
}

pub fn synthesize_trace(spec: &SyntheticSpec) -> Result<SyntheticTrace> {
    spec.validate()?;
    if spec.num_accesses == 0 {
        return Err(Error::EmptyTrace);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    let sizes: Vec<u64> = (0..spec.num_data)
        .map(|_| match spec.size_distribution {
            SizeDistribution::Fixed(s) => s,
            SizeDistribution::Uniform { min, max, align } => {
                let lo = min.div_ceil(align).max(1);
                let hi = max / align;
                rng.random_range(lo..=hi) * align
            }
        })
        .collect();

    // Lay data out back to back in a random order.
    let mut layout: Vec<usize> = (0..spec.num_data).collect();
    layout.shuffle(&mut rng);
    let mut addresses = vec![0u64; spec.num_data];
    let mut cursor = 0u64;
    for &d in &layout {
        addresses[d] = cursor;
        cursor += sizes[d];
    }

    // group_of[d] = planted group index, members in fixed random order.
    let mut group_of = vec![usize::MAX; spec.num_data];
    let mut groups: Vec<Vec<usize>> = Vec::with_capacity(spec.group_structure.len());
    let mut next = 0;
    for (gi, g) in spec.group_structure.iter().enumerate() {
        let mut members: Vec<usize> = (next..next + g.size).collect();
        members.shuffle(&mut rng);
        for &m in &members {
            group_of[m] = gi;
        }
        groups.push(members);
        next += g.size;
    }
    if spec.contiguous_groups {
        // Keep the shuffled order of first appearance, but pull each group
        // together at the position of its first member.
        let mut placed = vec![false; spec.num_data];
        cursor = 0;
        for &d in &layout {
            if placed[d] {
                continue;
            }
            let unit: &[usize] = match group_of[d] {
                usize::MAX => std::slice::from_ref(&d),
                g => &groups[g],
            };
            for &m in unit {
                placed[m] = true;
                addresses[m] = cursor;
                cursor += sizes[m];
            }
        }
    }

    // Popularity rank, so planted groups are not all at the head of the Zipf curve.
    let mut by_rank: Vec<usize> = (0..spec.num_data).collect();
    by_rank.shuffle(&mut rng);
    let zipf = if spec.zipf_exponent > 0.0 {
        Some(
            Zipf::new(spec.num_data as f64, spec.zipf_exponent)
                .map_err(|e| Error::InvalidConfig(format!("zipf: {e}")))?,
        )
    } else {
        None
    };

    let mut records = Vec::with_capacity(spec.num_accesses);
    let mut tick = 0u64;
    let mut emit = |d: usize, rng: &mut ChaCha8Rng, records: &mut Vec<AccessRecord>| {
        let op = if spec.write_fraction > 0.0 && rng.random_bool(spec.write_fraction) {
            Op::Write
        } else {
            Op::Read
        };
        tick += 10_000;
        records.push(AccessRecord {
            timestamp: tick,
            block_address: addresses[d],
            size: sizes[d],
            op,
        });
    };
    while records.len() < spec.num_accesses {
        let d = match &zipf {
            Some(z) => by_rank[(z.sample(&mut rng) as usize - 1).min(spec.num_data - 1)],
            None => by_rank[rng.random_range(0..spec.num_data)],
        };
        let g = group_of[d];
        if g != usize::MAX && rng.random_bool(spec.group_structure[g].intra_probability) {
            let run = &groups[g];
            let len = if spec.truncation > 0.0 && rng.random_bool(spec.truncation) {
                rng.random_range(1..=run.len())
            } else {
                run.len()
            };
            for &m in &run[..len] {
                if records.len() == spec.num_accesses {
                    break;
                }
                emit(m, &mut rng, &mut records);
            }
        } else {
            emit(d, &mut rng, &mut records);
        }
    }

    let planted = groups
        .iter()
        .map(|members| {
            let mut addrs: Vec<u64> = members.iter().map(|&m| addresses[m]).collect();
            addrs.sort_unstable();
            addrs
        })
        .collect();
    Ok(SyntheticTrace {
        trace: Trace::new(records, format!("synthetic-{}", spec.rng_seed)),
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn parses_published_msr_line() {
        let r = parse_record("128166372003061629,hm,0,Read,383496192,32768,1331", 1).unwrap();
        assert_eq!(
            r,
            AccessRecord {
                timestamp: 128166372003061629,
                block_address: 383496192,
                size: 32768,
                op: Op::Read
            }
        );
    }

    #[test]
    fn parses_minimal_write() {
        let r = parse_record("1,h,0,Write,0,4096,0", 1).unwrap();
        assert_eq!(r.timestamp, 1);
        assert_eq!(r.block_address, 0);
        assert_eq!(r.size, 4096);
        assert_eq!(r.op, Op::Write);
        assert_eq!(parse_record("1,h,0,wRiTe,0,1,0", 1).unwrap().op, Op::Write);
    }

    #[test]
    fn rejects_non_positive_size() {
        assert!(matches!(
            parse_record("1,h,0,Read,0,-5,0", 7),
            Err(Error::RejectedRecord { line: 7, .. })
        ));
        assert!(matches!(
            parse_record("1,h,0,Read,0,0,0", 1),
            Err(Error::RejectedRecord { .. })
        ));
    }

    #[test]
    fn malformed_lines_carry_line_number() {
        assert!(matches!(
            parse_record("1,h,0,Read,0,4096", 3),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_record("1,h,0,Read,abc,4096,0", 4),
            Err(Error::Parse { line: 4, .. })
        ));
        assert!(matches!(
            parse_record("1,h,0,Erase,0,4096,0", 5),
            Err(Error::Parse { line: 5, .. })
        ));
    }

    #[test]
    fn rejects_address_overflow() {
        let line = format!("1,h,0,Read,{},2,0", u64::MAX - 1);
        assert!(matches!(
            parse_record(&line, 1),
            Err(Error::RejectedRecord { .. })
        ));
    }

    fn read(text: &str, skip: bool) -> Result<LoadedTrace> {
        read_trace(
            text.as_bytes(),
            "t",
            &LoadOptions {
                skip_malformed: skip,
                ..Default::default()
            },
        )
    }

    #[test]
    fn load_preserves_order() {
        let t = read("3,h,0,Read,30,1,0\n1,h,0,Read,10,1,0\n2,h,0,Write,20,1,0\n", false).unwrap();
        let addrs: Vec<u64> = t.trace.records.iter().map(|r| r.block_address).collect();
        assert_eq!(addrs, [30, 10, 20]);
        assert_eq!(t.skipped, 0);
    }

    #[test]
    fn skip_malformed_counts() {
        let text = "1,h,0,Read,10,1,0\nbogus\n2,h,0,Read,20,1,0\n";
        let t = read(text, true).unwrap();
        assert_eq!(t.trace.len(), 2);
        assert_eq!(t.skipped, 1);
        assert!(matches!(read(text, false), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn header_row_is_skipped() {
        let text = "Timestamp,Hostname,DiskNumber,Type,Offset,Size,ResponseTime\n1,h,0,Read,10,1,0\n";
        assert_eq!(read(text, false).unwrap().trace.len(), 1);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(read("", false), Err(Error::EmptyTrace)));
        assert!(matches!(read("bad\nbad\n", true), Err(Error::EmptyTrace)));
    }

    #[test]
    fn filters_by_op_host_and_disk() {
        let text = "1,a,0,Read,10,1,0\n2,a,1,Write,20,1,0\n3,b,0,Read,30,1,0\n";
        let opts = LoadOptions {
            ops: OpsFilter::Read,
            host: Some("a".into()),
            ..Default::default()
        };
        let t = read_trace(text.as_bytes(), "t", &opts).unwrap();
        assert_eq!(t.trace.len(), 1);
        assert_eq!(t.filtered, 2);
        let opts = LoadOptions {
            disk: Some(1),
            ..Default::default()
        };
        let t = read_trace(text.as_bytes(), "t", &opts).unwrap();
        assert_eq!(t.trace.records[0].block_address, 20);
    }

    fn ten_records() -> Trace {
        Trace::new(
            (0..10)
                .map(|i| AccessRecord {
                    timestamp: i,
                    block_address: i * 8,
                    size: 8,
                    op: Op::Read,
                })
                .collect(),
            "ten",
        )
    }

    #[test]
    fn split_prefix() {
        let t = ten_records();
        let (a, b) = split_trace(&t, 3).unwrap();
        assert_eq!(a.records, t.records[..3]);
        assert_eq!(b.records, t.records[3..]);
        let mut joined = a.records.clone();
        joined.extend(b.records);
        assert_eq!(joined, t.records);
    }

    #[test]
    fn split_bounds() {
        let t = ten_records();
        assert!(matches!(
            split_trace(&t, 10),
            Err(Error::SplitOutOfRange { .. })
        ));
        assert!(split_trace(&t, 0).is_err());
        assert_eq!(train_count_for_fraction(10, 0.7).unwrap(), 7);
        assert!(train_count_for_fraction(10, 1.0).is_err());
    }

    fn planted_spec() -> SyntheticSpec {
        SyntheticSpec {
            num_data: 10,
            num_accesses: 300,
            group_structure: vec![
                PlantedGroup {
                    size: 3,
                    intra_probability: 1.0
                };
                2
            ],
            rng_seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn planted_runs_cover_whole_groups() {
        let spec = SyntheticSpec {
            num_data: 6,
            num_accesses: 300,
            ..planted_spec()
        };
        let syn = synthesize_trace(&spec).unwrap();
        assert_eq!(syn.planted.len(), 2);
        // With every datum planted at probability 1, the trace is a sequence of
        // whole-group runs (the last one possibly truncated).
        let addrs: Vec<u64> = syn.trace.records.iter().map(|r| r.block_address).collect();
        let group_of = |a: u64| syn.planted.iter().position(|g| g.contains(&a)).unwrap();
        for run in addrs.chunks(3) {
            let g = group_of(run[0]);
            assert!(run.iter().all(|&a| group_of(a) == g));
            let mut sorted = run.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), run.len());
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let a = synthesize_trace(&planted_spec()).unwrap();
        let b = synthesize_trace(&planted_spec()).unwrap();
        assert_eq!(a, b);
        let c = synthesize_trace(&SyntheticSpec {
            rng_seed: 8,
            ..planted_spec()
        })
        .unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn contiguous_groups_and_truncated_runs() {
        let spec = SyntheticSpec::from_key_values(
            "num_data=60\nnum_accesses=3000\ngroups=4x5:1.0\nsize=512..8192\ncontiguous=true\ntruncation=0.5\nseed=3",
        )
        .unwrap();
        let syn = synthesize_trace(&spec).unwrap();
        let size: HashMap<u64, u64> = syn.trace.records.iter().map(|r| (r.block_address, r.size)).collect();
        for g in &syn.planted {
            // sorted members are back to back
            for w in g.windows(2) {
                assert_eq!(w[0] + size[&w[0]], w[1]);
            }
        }
        // some runs stop early, so first members outnumber last ones
        let count = |a: u64| syn.trace.records.iter().filter(|r| r.block_address == a).count();
        let g = &syn.planted[0];
        assert!(count(g[0]) > count(g[4]));
        assert!(SyntheticSpec::from_key_values("truncation=1.5").is_err());
    }

    #[test]
    fn zero_accesses_is_empty_trace() {
        let spec = SyntheticSpec {
            num_accesses: 0,
            ..planted_spec()
        };
        assert!(matches!(synthesize_trace(&spec), Err(Error::EmptyTrace)));
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = planted_spec();
        spec.group_structure[0].intra_probability = 1.5;
        assert!(matches!(synthesize_trace(&spec), Err(Error::InvalidConfig(_))));
        let spec = SyntheticSpec {
            num_data: 4,
            ..planted_spec()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn spec_from_key_values() {
        let spec = SyntheticSpec::from_key_values(
            "# planted\nnum_data=50\nnum_accesses=500\ngroups=2x3:1.0, 4:0.5\nsize=512..4096\nseed=3\nzipf=0.8\n",
        )
        .unwrap();
        assert_eq!(spec.num_data, 50);
        assert_eq!(spec.group_structure.len(), 3);
        assert_eq!(spec.group_structure[2].size, 4);
        assert_eq!(spec.group_structure[2].intra_probability, 0.5);
        assert_eq!(
            spec.size_distribution,
            SizeDistribution::Uniform {
                min: 512,
                max: 4096,
                align: 512
            }
        );
        assert_eq!(spec.rng_seed, 3);
        let syn = synthesize_trace(&spec).unwrap();
        assert_eq!(syn.trace.len(), 500);
        assert!(syn
            .trace
            .records
            .iter()
            .all(|r| r.size % 512 == 0 && (512..=4096).contains(&r.size)));
        assert!(SyntheticSpec::from_key_values("bogus=1").is_err());
    }

    #[test]
    fn unique_bytes_uses_first_seen_size() {
        let mk = |a, s| AccessRecord {
            timestamp: 0,
            block_address: a,
            size: s,
            op: Op::Read,
        };
        let t = Trace::new(vec![mk(0, 4), mk(8, 2), mk(0, 100)], "u");
        assert_eq!(t.unique_bytes(), 6);
    }
}
