//! Stage drivers, artifact persistence and the manifest.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ctdgm_core::artifact::Header;
use ctdgm_core::cache_sim::{self, Capacity, GroupIndex, SimConfig, SimMetrics, SizeTable};
use ctdgm_core::chunker::{self, ChunkSet};
use ctdgm_core::ctf::{self, CtfMatrix};
use ctdgm_core::extractor::{self, TransactionLog};
use ctdgm_core::grouper::{self, GroupMembership, Grouping, GroupingReport};
use ctdgm_core::locality::{self, AccessIndex, Symmetry};
use ctdgm_core::trace_io::{self, LoadOptions, Trace};
use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, TraceSource};
use crate::error::CliError;

pub const TRANSACTIONS: &str = "transactions.tsv";
pub const CTF: &str = "ctf.tsv";
pub const CHUNKS: &str = "chunks.tsv";
pub const GROUPING: &str = "grouping.csv";
pub const METRICS: &str = "metrics.csv";
pub const REPORT: &str = "report.json";
pub const MANIFEST: &str = "manifest.json";
pub const MARKER: &str = ".partial";
pub const TRAIN: &str = "train.csv";
pub const TEST: &str = "test.csv";
pub const INGEST: &str = "ingest.json";
pub const LOCALITY: &str = "locality.csv";
pub const GAPS: &str = "gap_report.csv";

pub const STAGES: [&str; 7] = ["ingest", "extract", "ctf", "chunk", "group", "simulate", "analyze"];

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct Ingested {
    pub full: Trace,
    pub train: Trace,
    pub test: Trace,
    pub skipped: usize,
    pub filtered: usize,
    /// Planted partition, for synthetic input.
    pub planted: Option<Vec<Vec<u64>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub artifacts: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    pub fn digest(&self, name: &str) -> Option<&str> {
        self.artifacts.iter().find(|a| a.name == name).map(|a| a.sha256.as_str())
    }
}

/// Everything a full run produced, kept in memory for callers that want more
/// than the files.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub manifest: Manifest,
    pub ingested: Ingested,
    pub log: TransactionLog,
    pub chunks: ChunkSet,
    pub grouping: Grouping,
    pub report: GroupingReport,
    pub metrics: Vec<SimMetrics>,
    pub timings: Vec<(&'static str, Duration)>,
}

impl PipelineOutcome {
    /// Wall time of extraction through grouping.
    pub fn grouping_time(&self) -> Duration {
        self.timings
            .iter()
            .filter(|(s, _)| matches!(*s, "extract" | "ctf" | "chunk" | "group"))
            .map(|(_, d)| *d)
            .sum()
    }
}

fn header(cfg_hash: &str, artifact: &str) -> Header {
    Header::new().with("config_hash", cfg_hash).with("artifact", artifact)
}

fn check_hash(h: &Header, expected: &str, path: &Path) -> Result<()> {
    match h.get("config_hash") {
        Some(found) if found == expected => Ok(()),
        Some(found) => Err(CliError::Data(format!(
            "{} was produced under config {found}, current config is {expected}",
            path.display()
        ))),
        None => Err(CliError::Data(format!("{} carries no config hash", path.display()))),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

pub fn file_digest(path: &Path) -> Result<(String, u64)> {
    let mut r = open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut n = 0u64;
    loop {
        let k = r.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
        n += k as u64;
    }
    Ok((hex::encode(h.finalize()), n))
}

fn set_marker(dir: &Path, stage: &str) -> Result<()> {
    let path = dir.join(MARKER);
    fs::write(&path, format!("stage={stage}\n")).map_err(|e| CliError::io(&path, e))
}

// ---- stages ---------------------------------------------------------------

pub fn ingest(cfg: &PipelineConfig) -> Result<Ingested> {
    let (full, skipped, filtered, planted) = match &cfg.source {
        TraceSource::Synthetic(spec) => {
            let s = trace_io::synthesize_trace(spec)?;
            (s.trace, 0, 0, Some(s.planted))
        }
        TraceSource::Files(paths) => {
            let mut records = Vec::new();
            let mut labels = Vec::new();
            let (mut skipped, mut filtered) = (0, 0);
            for p in paths {
                let loaded = trace_io::load_trace_with(p, &cfg.load)?;
                info!(
                    "{}: {} records ({} skipped, {} filtered)",
                    p.display(),
                    loaded.trace.len(),
                    loaded.skipped,
                    loaded.filtered
                );
                skipped += loaded.skipped;
                filtered += loaded.filtered;
                labels.push(loaded.trace.source_label);
                records.extend(loaded.trace.records);
            }
            // Stable, so equal timestamps keep file order.
            if paths.len() > 1 {
                records.sort_by_key(|r| r.timestamp);
            }
            (Trace::new(records, labels.join("+")), skipped, filtered, None)
        }
    };
    let mut full = full;
    if let Some(n) = cfg.max_records {
        full.records.truncate(n);
    }
    let train_count = match cfg.train_count {
        Some(n) => n,
        None => trace_io::train_count_for_fraction(full.len(), cfg.train_fraction)?,
    };
    let (train, test) = trace_io::split_trace(&full, train_count)?;
    Ok(Ingested {
        full,
        train,
        test,
        skipped,
        filtered,
        planted,
    })
}

pub fn extract(cfg: &PipelineConfig, train: &Trace) -> Result<TransactionLog> {
    Ok(extractor::extract_transactions(train, cfg.extractor)?)
}

pub fn build_features(cfg: &PipelineConfig, log: &TransactionLog) -> CtfMatrix {
    ctf::build_ctf(log.for_features(cfg.include_partial))
}

pub fn chunk(cfg: &PipelineConfig, features: &CtfMatrix) -> Result<ChunkSet> {
    let chunks = chunker::chunk_all(features, &cfg.chunker, None)?;
    chunks
        .verify_audit(features)
        .map_err(|e| CliError::Invariant(format!("chunk audit: {e}")))?;
    let covered: usize = chunks.chunks.iter().map(|c| c.members.len()).sum();
    if covered != features.len() {
        return Err(CliError::Invariant(format!(
            "chunks cover {covered} data, features hold {}",
            features.len()
        )));
    }
    Ok(chunks)
}

pub fn group(cfg: &PipelineConfig, log: &TransactionLog, chunks: &ChunkSet) -> Result<Grouping> {
    let txns = log.for_features(cfg.include_partial);
    let grouping = grouper::group_chunks(&txns, chunks, &cfg.grouper)?;
    check_grouping(&grouping, chunks)?;
    Ok(grouping)
}

/// Partition and audit checks run after every grouping.
pub fn check_grouping(grouping: &Grouping, chunks: &ChunkSet) -> Result<()> {
    if !grouping.is_partition() {
        return Err(CliError::Invariant("grouping is not a partition".into()));
    }
    grouping
        .verify_audit()
        .map_err(|e| CliError::Invariant(format!("group audit: {e}")))?;
    let membership = grouping.membership();
    if membership.len() != chunks.lookup.len() || chunks.lookup.keys().any(|a| !membership.contains_key(a)) {
        return Err(CliError::Invariant("grouping does not cover every chunked datum".into()));
    }
    Ok(())
}

pub fn simulate(cfg: &PipelineConfig, full: &Trace, test: &Trace, groups: Vec<Vec<u64>>) -> Result<Vec<SimMetrics>> {
    let sizes = SizeTable::from_trace(full);
    let index = Arc::new(GroupIndex::new(groups));
    let configs: Vec<SimConfig> = cfg
        .fractions
        .iter()
        .flat_map(|&f| {
            let index = index.clone();
            cfg.policies.iter().map(move |&p| SimConfig {
                grouping: Some(index.clone()),
                write_allocate: cfg.write_allocate,
                curve_window: cfg.rolling_window,
                ..SimConfig::new(Capacity::Fraction(f), p)
            })
        })
        .collect();
    Ok(cache_sim::sweep_configs(test, &sizes, &configs)?)
}

/// Summary document written as `report.json`. Contains no timings so reruns
/// are byte-identical.
pub fn report_json(
    cfg_hash: &str,
    ingested: &Ingested,
    log: &TransactionLog,
    chunks: &ChunkSet,
    grouping: &Grouping,
    report: &GroupingReport,
    metrics: &[SimMetrics],
) -> serde_json::Value {
    let densities: Vec<f64> = report.densities.iter().flatten().copied().collect();
    let mean_density = (!densities.is_empty()).then(|| densities.iter().sum::<f64>() / densities.len() as f64);
    serde_json::json!({
        "config_hash": cfg_hash,
        "trace": {
            "label": ingested.full.source_label,
            "records": ingested.full.len(),
            "train_records": ingested.train.len(),
            "test_records": ingested.test.len(),
            "skipped": ingested.skipped,
            "filtered": ingested.filtered,
            "unique_bytes": ingested.full.unique_bytes(),
        },
        "transactions": {
            "full": log.transactions.len(),
            "partial": log.partial.as_ref().map_or(0, |t| t.members.len()),
        },
        "chunks": {
            "count": chunks.len(),
            "merges": chunks.merges.len(),
        },
        "grouping": {
            "group_count": report.group_count,
            "chunk_count": report.chunk_count,
            "datum_count": report.datum_count,
            "groups_at_least_4": report.groups_at_least(4),
            "size_histogram": report.size_histogram.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>(),
            "undefined_densities": report.densities.iter().filter(|d| d.is_none()).count(),
            "mean_density": mean_density,
            "legal_relations": grouping.legal_relations,
            "processed_cross": grouping.processed_cross,
            "merges": grouping.merges.len(),
        },
        "metrics": metrics,
    })
}

// ---- full run -------------------------------------------------------------

struct Clock {
    timings: Vec<(&'static str, Duration)>,
    dir: PathBuf,
}

impl Clock {
    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        set_marker(&self.dir, name)?;
        info!("stage {name}");
        let t = Instant::now();
        let out = f().map_err(|e| e.in_stage(name))?;
        let d = t.elapsed();
        debug!("stage {name} took {d:?}");
        self.timings.push((name, d));
        Ok(out)
    }
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let dir = cfg.output.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let hash = cfg.hash();
    let mut clock = Clock {
        timings: Vec::new(),
        dir: dir.clone(),
    };
    let mut written = Vec::new();

    let ingested = clock.stage("ingest", || ingest(cfg))?;
    let log = clock.stage("extract", || {
        let log = extract(cfg, &ingested.train)?;
        write_transactions(&dir, &hash, &log)?;
        Ok(log)
    })?;
    written.push(TRANSACTIONS);
    let features = clock.stage("ctf", || {
        let m = build_features(cfg, &log);
        write_ctf(&dir, &hash, &m)?;
        Ok(m)
    })?;
    written.push(CTF);
    let chunks = clock.stage("chunk", || {
        let c = chunk(cfg, &features)?;
        write_chunks(&dir, &hash, &c)?;
        Ok(c)
    })?;
    written.push(CHUNKS);
    let grouping = clock.stage("group", || {
        let g = group(cfg, &log, &chunks)?;
        write_grouping(&dir, &hash, &g)?;
        Ok(g)
    })?;
    written.push(GROUPING);
    let metrics = clock.stage("simulate", || {
        let groups = grouping.groups.iter().map(|g| g.members.clone()).collect();
        let m = simulate(cfg, &ingested.full, &ingested.test, groups)?;
        write_metrics(&dir, &hash, &m)?;
        Ok(m)
    })?;
    written.push(METRICS);
    let report = clock.stage("analyze", || {
        let report = grouper::grouping_report(&grouping);
        let doc = report_json(&hash, &ingested, &log, &chunks, &grouping, &report, &metrics);
        write_json(&dir.join(REPORT), &doc)?;
        Ok(report)
    })?;
    written.push(REPORT);

    let manifest = write_manifest(&dir, cfg, &written)?;
    let marker = dir.join(MARKER);
    fs::remove_file(&marker).map_err(|e| CliError::io(&marker, e))?;
    Ok(PipelineOutcome {
        manifest,
        ingested,
        log,
        chunks,
        grouping,
        report,
        metrics,
        timings: clock.timings,
    })
}

fn write_transactions(dir: &Path, hash: &str, log: &TransactionLog) -> Result<()> {
    let h = header(hash, "transactions")
        .with("M", log.config.window_bytes)
        .with("mode", log.config.mode);
    write_with(&dir.join(TRANSACTIONS), |w| log.write_tsv(w, &h))
}

fn write_ctf(dir: &Path, hash: &str, m: &CtfMatrix) -> Result<()> {
    write_with(&dir.join(CTF), |w| m.write_tsv(w, &header(hash, "ctf")))
}

fn write_chunks(dir: &Path, hash: &str, c: &ChunkSet) -> Result<()> {
    let h = header(hash, "chunks").with("metric", c.config.metric);
    write_with(&dir.join(CHUNKS), |w| c.write_tsv(w, &h))
}

fn write_grouping(dir: &Path, hash: &str, g: &Grouping) -> Result<()> {
    write_with(&dir.join(GROUPING), |w| g.write_csv(w, &header(hash, "grouping")))
}

fn write_metrics(dir: &Path, hash: &str, m: &[SimMetrics]) -> Result<()> {
    write_with(&dir.join(METRICS), |w| cache_sim::write_metrics_csv(m, w, &header(hash, "metrics")))
}

fn write_json(path: &Path, doc: &impl Serialize) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, doc).map_err(std::io::Error::other)?;
        w.write_all(b"\n")
    })
}

fn write_manifest(dir: &Path, cfg: &PipelineConfig, names: &[&str]) -> Result<Manifest> {
    let artifacts = names
        .iter()
        .map(|n| {
            let (sha256, bytes) = file_digest(&dir.join(n))?;
            Ok(ManifestEntry {
                name: n.to_string(),
                sha256,
                bytes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        config_hash: cfg.hash(),
        config: cfg.canonical().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        artifacts,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

// ---- single stages from disk ---------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IngestRecord {
    config_hash: String,
    label: String,
    records: usize,
    train_records: usize,
    test_records: usize,
    skipped: usize,
    filtered: usize,
    unique_bytes: u64,
    train_sha256: String,
    test_sha256: String,
}

fn read_split(dir: &Path, hash: &str) -> Result<(Trace, Trace)> {
    let path = dir.join(INGEST);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let rec: IngestRecord =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if rec.config_hash != hash {
        return Err(CliError::Data(format!(
            "{} was produced under config {}, current config is {hash}",
            path.display(),
            rec.config_hash
        )));
    }
    let load = |name: &str, digest: &str| -> Result<Trace> {
        let p = dir.join(name);
        if file_digest(&p)?.0 != digest {
            return Err(CliError::Data(format!("{} does not match {INGEST}", p.display())));
        }
        let t = trace_io::read_trace(open(&p)?, rec.label.clone(), &LoadOptions::default())?;
        Ok(t.trace)
    };
    Ok((load(TRAIN, &rec.train_sha256)?, load(TEST, &rec.test_sha256)?))
}

fn read_transactions(dir: &Path, hash: &str) -> Result<TransactionLog> {
    let p = dir.join(TRANSACTIONS);
    let (log, h) = TransactionLog::read_tsv(open(&p)?)?;
    check_hash(&h, hash, &p)?;
    Ok(log)
}

fn read_ctf(dir: &Path, hash: &str) -> Result<CtfMatrix> {
    let p = dir.join(CTF);
    let (m, h) = CtfMatrix::read_tsv(open(&p)?)?;
    check_hash(&h, hash, &p)?;
    Ok(m)
}

fn read_chunks(dir: &Path, hash: &str, cfg: &PipelineConfig, features: &CtfMatrix) -> Result<ChunkSet> {
    let p = dir.join(CHUNKS);
    let (members, h) = ChunkSet::read_members(open(&p)?)?;
    check_hash(&h, hash, &p)?;
    let q_max: u64 = h.parse_required("Q")?;
    Ok(ChunkSet::from_members(members, features, cfg.chunker, q_max)?)
}

fn read_grouping(dir: &Path, hash: &str) -> Result<GroupMembership> {
    let p = dir.join(GROUPING);
    let (m, h) = GroupMembership::read_csv(open(&p)?)?;
    check_hash(&h, hash, &p)?;
    Ok(m)
}

fn concat(train: &Trace, test: &Trace) -> Trace {
    let mut records = train.records.clone();
    records.extend_from_slice(&test.records);
    Trace::new(records, train.source_label.trim_end_matches(":train").to_string())
}

/// W limits and adjacency threshold for the `analyze` stage.
#[derive(Debug, Clone)]
pub struct AnalyzeOptions {
    pub limits: Vec<f64>,
    pub min_occurrences: usize,
    /// Cap on the number of co-occurring pairs scored for the gap report.
    pub max_pairs: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            limits: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            min_occurrences: 2,
            max_pairs: 200_000,
        }
    }
}

/// Runs one stage against the artifacts already in the output directory.
pub fn run_stage(stage: &str, cfg: &PipelineConfig, analyze: &AnalyzeOptions) -> Result<Vec<PathBuf>> {
    let dir = cfg.output.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let hash = cfg.hash();
    let stage_name = STAGES
        .iter()
        .copied()
        .find(|s| *s == stage)
        .ok_or_else(|| CliError::Config(format!("unknown stage {stage:?}")))?;
    let run = || -> Result<Vec<PathBuf>> {
        match stage_name {
            "ingest" => {
                let ing = ingest(cfg)?;
                write_with(&dir.join(TRAIN), |w| ing.train.write_csv(w))?;
                write_with(&dir.join(TEST), |w| ing.test.write_csv(w))?;
                let rec = IngestRecord {
                    config_hash: hash.clone(),
                    label: ing.full.source_label.clone(),
                    records: ing.full.len(),
                    train_records: ing.train.len(),
                    test_records: ing.test.len(),
                    skipped: ing.skipped,
                    filtered: ing.filtered,
                    unique_bytes: ing.full.unique_bytes(),
                    train_sha256: file_digest(&dir.join(TRAIN))?.0,
                    test_sha256: file_digest(&dir.join(TEST))?.0,
                };
                write_json(&dir.join(INGEST), &rec)?;
                Ok(vec![dir.join(TRAIN), dir.join(TEST), dir.join(INGEST)])
            }
            "extract" => {
                let (train, _) = read_split(&dir, &hash)?;
                write_transactions(&dir, &hash, &extract(cfg, &train)?)?;
                Ok(vec![dir.join(TRANSACTIONS)])
            }
            "ctf" => {
                let log = read_transactions(&dir, &hash)?;
                write_ctf(&dir, &hash, &build_features(cfg, &log))?;
                Ok(vec![dir.join(CTF)])
            }
            "chunk" => {
                let features = read_ctf(&dir, &hash)?;
                write_chunks(&dir, &hash, &chunk(cfg, &features)?)?;
                Ok(vec![dir.join(CHUNKS)])
            }
            "group" => {
                let log = read_transactions(&dir, &hash)?;
                let features = read_ctf(&dir, &hash)?;
                let chunks = read_chunks(&dir, &hash, cfg, &features)?;
                write_grouping(&dir, &hash, &group(cfg, &log, &chunks)?)?;
                Ok(vec![dir.join(GROUPING)])
            }
            "simulate" => {
                let (train, test) = read_split(&dir, &hash)?;
                let groups = read_grouping(&dir, &hash)?.groups.into_values().collect();
                let m = simulate(cfg, &concat(&train, &test), &test, groups)?;
                write_metrics(&dir, &hash, &m)?;
                Ok(vec![dir.join(METRICS)])
            }
            "analyze" => analyze_stage(cfg, &dir, &hash, analyze),
            _ => unreachable!(),
        }
    };
    run().map_err(|e| e.in_stage(stage_name))
}

fn analyze_stage(cfg: &PipelineConfig, dir: &Path, hash: &str, opts: &AnalyzeOptions) -> Result<Vec<PathBuf>> {
    let (train, test) = read_split(dir, hash)?;
    let log = read_transactions(dir, hash)?;
    let features = read_ctf(dir, hash)?;
    let chunks = read_chunks(dir, hash, cfg, &features)?;
    let stored = read_grouping(dir, hash)?;
    // The grouping file carries no audit, so regroup and require agreement.
    let grouping = group(cfg, &log, &chunks)?;
    if GroupMembership::from_grouping(&grouping) != stored {
        return Err(CliError::Invariant(format!("{GROUPING} does not match a regrouping of the inputs")));
    }
    // Simulation is optional before analysis.
    let metrics = if dir.join(METRICS).exists() {
        read_metrics_rows(dir, hash)?
    } else {
        Vec::new()
    };
    let full = concat(&train, &test);
    let ingested = Ingested {
        full,
        train,
        test,
        skipped: 0,
        filtered: 0,
        planted: None,
    };
    let report = grouper::grouping_report(&grouping);
    let doc = report_json(hash, &ingested, &log, &chunks, &grouping, &report, &metrics);
    write_json(&dir.join(REPORT), &doc)?;

    let hist = locality::related_pair_distance_histogram(&ingested.train, opts.min_occurrences);
    write_with(&dir.join(LOCALITY), |w| hist.write_csv(w))?;
    let index = AccessIndex::build(&ingested.train);
    let mut pairs = locality::cooccurring_pairs(log.for_features(cfg.include_partial));
    pairs.truncate(opts.max_pairs);
    let gaps = locality::access_count_gap_report(&index, &pairs, &opts.limits, Symmetry::Directed)?;
    write_with(&dir.join(GAPS), |w| locality::write_gap_report(&gaps, w))?;
    Ok(vec![dir.join(REPORT), dir.join(LOCALITY), dir.join(GAPS)])
}

/// Metrics rows re-read from `metrics.csv` (no rolling curves).
fn read_metrics_rows(dir: &Path, hash: &str) -> Result<Vec<SimMetrics>> {
    let p = dir.join(METRICS);
    let (h, rows) = ctdgm_core::artifact::read_rows(open(&p)?, ',')?;
    check_hash(&h, hash, &p)?;
    use ctdgm_core::artifact::parse_field as f;
    rows.into_iter()
        .filter(|(_, r)| r.first().is_some_and(|c| c != "policy"))
        .map(|(line, r)| {
            Ok(SimMetrics {
                policy: f(&r, 0, line)?,
                capacity_fraction: r.get(1).filter(|s| !s.is_empty()).map(|_| f(&r, 1, line)).transpose()?,
                capacity_bytes: f(&r, 2, line)?,
                accesses: f(&r, 3, line)?,
                hits: f(&r, 4, line)?,
                misses: f(&r, 5, line)?,
                hit_rate: f(&r, 6, line)?,
                disk_ios: f(&r, 7, line)?,
                prefetched_bytes: f(&r, 8, line)?,
                evictions: f(&r, 9, line)?,
                bypasses: 0,
                hit_rate_curve: None,
            })
        })
        .collect()
}

// ---- parameter sweeps -----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Sigma,
    Mu,
    WindowBytes,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Sigma => "sigma",
            SweepAxis::Mu => "mu",
            SweepAxis::WindowBytes => "M",
        })
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma" => Ok(SweepAxis::Sigma),
            "mu" => Ok(SweepAxis::Mu),
            "M" | "m" | "window_bytes" | "window-bytes" => Ok(SweepAxis::WindowBytes),
            other => Err(CliError::Config(format!("sweep axis must be sigma|mu|M, got {other:?}"))),
        }
    }
}

impl SweepAxis {
    /// `base` with this axis set to `value`, re-validated.
    pub fn apply(self, base: &PipelineConfig, value: f64) -> Result<PipelineConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Sigma => {
                cfg.chunker.sigma = value;
                cfg.chunker.validate()?;
            }
            SweepAxis::Mu => {
                cfg.grouper.mu = value;
                cfg.grouper.validate()?;
            }
            SweepAxis::WindowBytes => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(CliError::Config(format!("M must be a positive whole number of bytes, got {value}")));
                }
                cfg.extractor.window_bytes = value as u64;
                cfg.extractor.validate()?;
            }
        }
        cfg.output = base.output.join(format!("{self}={value}"));
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub config_hash: String,
    pub report: GroupingReport,
    pub elapsed: Duration,
    pub grouping_time: Duration,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// `axis,value,group_count,size_1..size_max`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let max = self
            .rows
            .iter()
            .filter_map(|r| r.report.size_histogram.keys().next_back().copied())
            .max()
            .unwrap_or(0);
        write!(out, "axis,value,group_count")?;
        for s in 1..=max {
            write!(out, ",size_{s}")?;
        }
        writeln!(out)?;
        for r in &self.rows {
            write!(out, "{},{},{}", self.axis, r.value, r.report.group_count)?;
            for s in 1..=max {
                write!(out, ",{}", r.report.size_histogram.get(&s).copied().unwrap_or(0))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// One full pipeline run per value, each in its own subdirectory of the base
/// output. Writes `sweep_<axis>.csv` into the base output.
pub fn sweep_parameters(base: &PipelineConfig, axis: SweepAxis, values: &[f64], parallel: bool) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    let configs = values.iter().map(|&v| axis.apply(base, v)).collect::<Result<Vec<_>>>()?;
    let one = |(cfg, &value): (&PipelineConfig, &f64)| -> Result<SweepRow> {
        let t = Instant::now();
        let out = run_pipeline(cfg)?;
        Ok(SweepRow {
            value,
            config_hash: out.manifest.config_hash.clone(),
            grouping_time: out.grouping_time(),
            report: out.report,
            elapsed: t.elapsed(),
        })
    };
    let rows = if parallel {
        configs.par_iter().zip(values.par_iter()).map(one).collect::<Result<Vec<_>>>()?
    } else {
        configs.iter().zip(values.iter()).map(one).collect::<Result<Vec<_>>>()?
    };
    for r in &rows {
        info!(
            "{axis}={}: {} groups in {:?} (grouping {:?})",
            r.value, r.report.group_count, r.elapsed, r.grouping_time
        );
    }
    let table = SweepTable { axis, rows };
    fs::create_dir_all(&base.output).map_err(|e| CliError::io(&base.output, e))?;
    write_with(&base.output.join(format!("sweep_{axis}.csv")), |w| table.write_csv(w))?;
    Ok(table)
}
