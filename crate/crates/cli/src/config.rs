//! Pipeline configuration: flat `key=value` files (or a flat JSON object),
//! overridden key by key from the command line.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ctdgm_core::cache_sim::Policy;
use ctdgm_core::chunker::ChunkerConfig;
use ctdgm_core::ctf::DistanceMetric;
use ctdgm_core::extractor::{ExtractionMode, ExtractorConfig};
use ctdgm_core::grouper::{GrouperConfig, SortOrder};
use ctdgm_core::trace_io::{LoadOptions, OpsFilter, SyntheticSpec};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Default transaction window: 64 KiB, i.e. 16 blocks of 4 KiB.
pub const DEFAULT_WINDOW_BYTES: u64 = 64 * 1024;

/// Capacity fractions reported for the MSR volumes.
pub const DEFAULT_FRACTIONS: [f64; 8] = [0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.064, 0.128];

/// Every recognised key, in canonical spelling.
pub const KEYS: &[&str] = &[
    "trace",
    "synthetic",
    "seed",
    "ops",
    "skip_malformed",
    "host",
    "disk",
    "max_records",
    "train_count",
    "train_fraction",
    "window_bytes",
    "mode",
    "include_partial",
    "q",
    "p",
    "sigma",
    "metric",
    "alpha",
    "mu",
    "sort",
    "fractions",
    "policies",
    "write_allocate",
    "rolling_window",
    "output",
];

/// Where the access stream comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    /// MSR-format CSV files, merged by timestamp.
    Files(Vec<PathBuf>),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub source: TraceSource,
    pub load: LoadOptions,
    /// Keep only the first records of the (merged) trace.
    pub max_records: Option<usize>,
    pub train_count: Option<usize>,
    pub train_fraction: f64,
    pub extractor: ExtractorConfig,
    pub include_partial: bool,
    pub chunker: ChunkerConfig,
    pub grouper: GrouperConfig,
    pub fractions: Vec<f64>,
    pub policies: Vec<Policy>,
    pub write_allocate: bool,
    pub rolling_window: Option<usize>,
    pub output: PathBuf,
    pub seed: u64,
}

/// Normalizes `Window-Bytes`, `window_bytes` and the `M` alias alike.
pub fn canonical_key(key: &str) -> String {
    let k = key.trim().trim_start_matches("--").replace('-', "_");
    match k.as_str() {
        "M" | "m" => "window_bytes".into(),
        _ => k.to_ascii_lowercase(),
    }
}

/// Raw key/value pairs, later pairs overriding earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), CliError> {
        let k = canonical_key(key);
        if !KEYS.contains(&k.as_str()) {
            return Err(CliError::Config(format!("unknown configuration key {key:?}")));
        }
        self.values.insert(k, value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// `key=value` lines; `#` starts a comment.
    pub fn parse_flat(text: &str) -> Result<Self, CliError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected key=value", i + 1)))?;
            raw.set(k, v.trim())?;
        }
        Ok(raw)
    }

    /// A flat JSON object; arrays become comma lists.
    pub fn parse_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("config JSON: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| CliError::Config("config JSON must be an object".into()))?;
        let scalar = |v: &serde_json::Value| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let mut raw = RawConfig::default();
        for (k, v) in obj {
            let text = match v {
                serde_json::Value::Array(items) => items.iter().map(scalar).collect::<Vec<_>>().join(","),
                other => scalar(other),
            };
            raw.set(k, text)?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::parse_json(&text)
        } else {
            Self::parse_flat(&text)
        }
    }

    pub fn merge(&mut self, other: &RawConfig) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }
}

fn parse<T>(key: &str, raw: &str) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    raw.trim()
        .parse()
        .map_err(|e| CliError::Config(format!("{key}={raw:?}: {e}")))
}

fn parse_list<T>(key: &str, raw: &str) -> Result<Vec<T>, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// `true/false`, `yes/no`, `1/0`.
fn parse_bool(key: &str, raw: &str) -> Result<bool, CliError> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("{key}={raw:?}: expected true or false"))),
    }
}

/// Byte counts with an optional `K`/`KiB`/`M`/`MiB` suffix.
pub fn parse_bytes(key: &str, raw: &str) -> Result<u64, CliError> {
    let t = raw.trim();
    let split = t.find(|c: char| !c.is_ascii_digit()).unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let n: u64 = parse(key, num)?;
    let mult = match unit.trim().to_ascii_lowercase().as_str() {
        "" | "b" => 1,
        "k" | "kb" | "kib" => 1024,
        "m" | "mb" | "mib" => 1024 * 1024,
        other => return Err(CliError::Config(format!("{key}: unknown unit {other:?}"))),
    };
    n.checked_mul(mult)
        .ok_or_else(|| CliError::Config(format!("{key}={raw:?} overflows")))
}

impl PipelineConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        let get = |k: &str| raw.get(k);
        let mut seed: u64 = get("seed").map(|v| parse("seed", v)).transpose()?.unwrap_or(0);

        let source = match (get("trace"), get("synthetic")) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("set either trace or synthetic, not both".into()))
            }
            (None, None) => return Err(CliError::Config("no input: set trace or synthetic".into())),
            (Some(t), None) => {
                let files: Vec<PathBuf> = t.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect();
                if files.is_empty() {
                    return Err(CliError::Config("trace lists no files".into()));
                }
                TraceSource::Files(files)
            }
            (None, Some(s)) => {
                let mut spec = SyntheticSpec::from_key_values(&s.replace(';', "\n"))?;
                match get("seed") {
                    Some(_) => spec.rng_seed = seed,
                    None => seed = spec.rng_seed,
                }
                TraceSource::Synthetic(spec)
            }
        };

        let load = LoadOptions {
            skip_malformed: get("skip_malformed").map(|v| parse_bool("skip_malformed", v)).transpose()?.unwrap_or(false),
            ops: get("ops").map(|v| parse::<OpsFilter>("ops", v)).transpose()?.unwrap_or_default(),
            host: get("host").map(str::to_string),
            disk: get("disk").map(|v| parse("disk", v)).transpose()?,
        };

        let window_bytes = get("window_bytes")
            .map(|v| parse_bytes("window_bytes", v))
            .transpose()?
            .unwrap_or(DEFAULT_WINDOW_BYTES);
        let mode = get("mode").map(|v| parse::<ExtractionMode>("mode", v)).transpose()?.unwrap_or_default();
        let extractor = ExtractorConfig::new(window_bytes, mode)?;

        let defaults = ChunkerConfig::default();
        let chunker = ChunkerConfig {
            q: get("q").map(|v| parse("q", v)).transpose()?.unwrap_or(defaults.q),
            p: get("p").map(|v| parse("p", v)).transpose()?.unwrap_or(defaults.p),
            sigma: get("sigma").map(|v| parse("sigma", v)).transpose()?.unwrap_or(defaults.sigma),
            metric: get("metric").map(|v| parse::<DistanceMetric>("metric", v)).transpose()?.unwrap_or_default(),
        };
        chunker.validate()?;

        let gdefaults = GrouperConfig::default();
        let grouper = GrouperConfig {
            alpha: get("alpha").map(|v| parse("alpha", v)).transpose()?.unwrap_or(gdefaults.alpha),
            mu: get("mu").map(|v| parse("mu", v)).transpose()?.unwrap_or(gdefaults.mu),
            order: get("sort").map(|v| parse::<SortOrder>("sort", v)).transpose()?.unwrap_or_default(),
        };
        grouper.validate()?;

        let max_records = get("max_records").map(|v| parse("max_records", v)).transpose()?;
        if max_records.is_some_and(|n: usize| n < 2) {
            return Err(CliError::Config("max_records must be at least 2".into()));
        }
        let train_count = get("train_count").map(|v| parse("train_count", v)).transpose()?;
        let train_fraction = get("train_fraction").map(|v| parse("train_fraction", v)).transpose()?.unwrap_or(0.7);
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(CliError::Config(format!("train_fraction must lie in (0,1), got {train_fraction}")));
        }
        if train_count == Some(0) {
            return Err(CliError::Config("train_count must be positive".into()));
        }

        let fractions = match get("fractions") {
            Some(v) => parse_list("fractions", v)?,
            None => DEFAULT_FRACTIONS.to_vec(),
        };
        if fractions.is_empty() {
            return Err(CliError::Config("fractions is empty".into()));
        }
        if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(CliError::Config(format!("capacity fraction {f} outside (0,1]")));
        }
        let policies = match get("policies") {
            Some(v) => parse_list("policies", v)?,
            None => Policy::ALL.to_vec(),
        };
        if policies.is_empty() {
            return Err(CliError::Config("policies is empty".into()));
        }
        let rolling_window = match get("rolling_window") {
            Some(v) => match parse::<usize>("rolling_window", v)? {
                0 => None,
                w => Some(w),
            },
            None => None,
        };

        Ok(Self {
            source,
            load,
            max_records,
            train_count,
            train_fraction,
            extractor,
            include_partial: get("include_partial").map(|v| parse_bool("include_partial", v)).transpose()?.unwrap_or(false),
            chunker,
            grouper,
            fractions,
            policies,
            write_allocate: get("write_allocate").map(|v| parse_bool("write_allocate", v)).transpose()?.unwrap_or(true),
            rolling_window,
            output: PathBuf::from(get("output").unwrap_or("ctdgm-out")),
            seed,
        })
    }

    /// Every parameter that influences an artifact, in canonical text form.
    /// The output directory is excluded so relocated runs hash the same.
    pub fn canonical(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        match &self.source {
            TraceSource::Files(files) => {
                let list: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
                m.insert("trace", list.join(","));
            }
            TraceSource::Synthetic(spec) => {
                m.insert("synthetic", serde_json::to_string(spec).expect("spec serializes"));
            }
        }
        m.insert("seed", self.seed.to_string());
        m.insert("ops", self.load.ops.to_string());
        m.insert("skip_malformed", self.load.skip_malformed.to_string());
        m.insert("host", self.load.host.clone().unwrap_or_default());
        m.insert("disk", self.load.disk.map(|d| d.to_string()).unwrap_or_default());
        m.insert("max_records", self.max_records.map(|c| c.to_string()).unwrap_or_default());
        m.insert("train_count", self.train_count.map(|c| c.to_string()).unwrap_or_default());
        m.insert("train_fraction", self.train_fraction.to_string());
        m.insert("window_bytes", self.extractor.window_bytes.to_string());
        m.insert("mode", self.extractor.mode.to_string());
        m.insert("include_partial", self.include_partial.to_string());
        m.insert("q", self.chunker.q.to_string());
        m.insert("p", self.chunker.p.to_string());
        m.insert("sigma", self.chunker.sigma.to_string());
        m.insert("metric", self.chunker.metric.to_string());
        m.insert("alpha", self.grouper.alpha.to_string());
        m.insert("mu", self.grouper.mu.to_string());
        m.insert("sort", self.grouper.order.to_string());
        m.insert("fractions", join(&self.fractions));
        m.insert("policies", join(&self.policies));
        m.insert("write_allocate", self.write_allocate.to_string());
        m.insert("rolling_window", self.rolling_window.map(|w| w.to_string()).unwrap_or_default());
        m
    }

    /// SHA-256 over the canonical parameter listing, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.canonical() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(text: &str) -> RawConfig {
        RawConfig::parse_flat(text).unwrap()
    }

    #[test]
    fn defaults() {
        let c = PipelineConfig::from_raw(&raw("synthetic=num_data=10;num_accesses=50")).unwrap();
        assert_eq!(c.extractor.window_bytes, DEFAULT_WINDOW_BYTES);
        assert_eq!(c.extractor.mode, ExtractionMode::Cumulative);
        assert_eq!((c.chunker.sigma, c.grouper.alpha, c.grouper.mu), (0.1, 0.5, 0.5));
        assert_eq!(c.fractions.len(), 8);
        assert_eq!(c.policies, Policy::ALL);
        assert_eq!(c.train_fraction, 0.7);
    }

    #[test]
    fn out_of_range_sigma_is_rejected() {
        let err = PipelineConfig::from_raw(&raw("synthetic=num_data=10\nsigma=1.5")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn keys_normalize_and_override() {
        let mut a = raw("trace=a.csv\nWindow-Bytes=8K\n");
        let mut b = RawConfig::default();
        b.set("--M", "16KiB").unwrap();
        b.set("skip-malformed", "yes").unwrap();
        a.merge(&b);
        let c = PipelineConfig::from_raw(&a).unwrap();
        assert_eq!(c.extractor.window_bytes, 16 * 1024);
        assert!(c.load.skip_malformed);
        assert!(RawConfig::parse_flat("nonsense=1").is_err());
    }

    #[test]
    fn json_form() {
        let r = RawConfig::parse_json(r#"{"trace": "x.csv", "fractions": [0.01, 0.02], "mu": 0.7}"#).unwrap();
        let c = PipelineConfig::from_raw(&r).unwrap();
        assert_eq!(c.fractions, [0.01, 0.02]);
        assert_eq!(c.grouper.mu, 0.7);
    }

    #[test]
    fn hash_tracks_parameters_not_output() {
        let a = PipelineConfig::from_raw(&raw("trace=x.csv\noutput=one")).unwrap();
        let b = PipelineConfig::from_raw(&raw("trace=x.csv\noutput=two")).unwrap();
        let c = PipelineConfig::from_raw(&raw("trace=x.csv\nmu=0.6")).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn seed_reaches_synthetic_spec() {
        let c = PipelineConfig::from_raw(&raw("synthetic=num_data=10\nseed=9")).unwrap();
        match c.source {
            TraceSource::Synthetic(s) => assert_eq!(s.rng_seed, 9),
            _ => panic!(),
        }
    }

    #[test]
    fn bad_inputs() {
        for text in [
            "",
            "trace=a\nsynthetic=num_data=3",
            "trace=a\nfractions=0",
            "trace=a\npolicies=MRU",
            "trace=a\nwindow_bytes=0",
            "trace=a\ntrain_fraction=1",
            "trace=a\nalpha=-0.1",
            "trace=a\nwindow_bytes=4X",
        ] {
            assert!(PipelineConfig::from_raw(&raw(text)).is_err(), "{text:?}");
        }
    }
}
