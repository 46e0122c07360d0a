//! Cache transaction extraction.
//!
//! A byte-bounded FIFO window of capacity `M` is replayed over the access
//! stream. Every time `M` bytes have been evicted since the last emission a
//! cache transaction is emitted. Two emission modes exist:
//!
//! * [`ExtractionMode::Snapshot`]: the transaction is the window contents at
//!   emission time and the window is cleared afterwards.
//! * [`ExtractionMode::Cumulative`]: the transaction is every address admitted
//!   since the previous emission, including ones already evicted again. The
//!   window is left intact.
//!
//! A re-access of an address that is still in the window changes nothing.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::artifact::Header;
use crate::trace_io::Trace;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExtractionMode {
    Snapshot,
    #[default]
    Cumulative,
}

impl fmt::Display for ExtractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractionMode::Snapshot => "snapshot",
            ExtractionMode::Cumulative => "cumulative",
        })
    }
}

impl std::str::FromStr for ExtractionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snapshot" => Ok(ExtractionMode::Snapshot),
            "cumulative" => Ok(ExtractionMode::Cumulative),
            other => Err(Error::InvalidConfig(format!(
                "mode must be snapshot|cumulative, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    /// Window capacity and eviction threshold `M`, in bytes.
    pub window_bytes: u64,
    pub mode: ExtractionMode,
}

impl ExtractorConfig {
    pub fn new(window_bytes: u64, mode: ExtractionMode) -> Result<Self> {
        let cfg = Self { window_bytes, mode };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_bytes == 0 {
            return Err(Error::InvalidConfig("M must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheTransaction {
    pub index: usize,
    /// Block addresses in admission order, no duplicates.
    pub members: Vec<u64>,
    /// Set on the end-of-trace residue.
    pub partial: bool,
}

/// The FIFO window: `(block_address, admitted_size)` entries, oldest first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FifoWindow {
    pub entries: VecDeque<(u64, u64)>,
    pub occupied: u64,
    pub evicted_since_emit: u64,
}

/// Step-wise extractor. Feed accesses with [`push`](Self::push), then
/// [`finish`](Self::finish).
#[derive(Debug)]
pub struct TransactionExtractor {
    cfg: ExtractorConfig,
    window: FifoWindow,
    resident: HashSet<u64>,
    pending: Vec<u64>,
    pending_set: HashSet<u64>,
    emitted: Vec<CacheTransaction>,
}

impl TransactionExtractor {
    pub fn new(cfg: ExtractorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            window: FifoWindow::default(),
            resident: HashSet::new(),
            pending: Vec::new(),
            pending_set: HashSet::new(),
            emitted: Vec::new(),
        })
    }

    pub fn window_state(&self) -> &FifoWindow {
        &self.window
    }

    pub fn emitted(&self) -> &[CacheTransaction] {
        &self.emitted
    }

    /// Processes one access; returns true if it caused an emission.
    pub fn push(&mut self, address: u64, size: u64) -> bool {
        let m = self.cfg.window_bytes;
        if self.resident.insert(address) {
            self.window.entries.push_back((address, size));
            self.window.occupied += size;
            if self.cfg.mode == ExtractionMode::Cumulative && self.pending_set.insert(address) {
                self.pending.push(address);
            }
        }
        while self.window.occupied > m {
            let (head, head_size) = self
                .window
                .entries
                .pop_front()
                .expect("occupied > 0 implies a non-empty window");
            self.resident.remove(&head);
            self.window.occupied -= head_size;
            self.window.evicted_since_emit += head_size;
        }
        if self.window.evicted_since_emit < m {
            return false;
        }
        self.window.evicted_since_emit = 0;
        let members = match self.cfg.mode {
            ExtractionMode::Cumulative => {
                self.pending_set.clear();
                std::mem::take(&mut self.pending)
            }
            ExtractionMode::Snapshot => {
                self.resident.clear();
                self.window.occupied = 0;
                self.window.entries.drain(..).map(|(a, _)| a).collect()
            }
        };
        // An oversized datum can drain the snapshot window completely; an
        // empty transaction carries no co-occurrence and is not emitted.
        if members.is_empty() {
            return false;
        }
        self.emitted.push(CacheTransaction {
            index: self.emitted.len(),
            members,
            partial: false,
        });
        true
    }

    pub fn finish(self) -> TransactionLog {
        let residue: Vec<u64> = match self.cfg.mode {
            ExtractionMode::Cumulative => self.pending,
            ExtractionMode::Snapshot => self.window.entries.iter().map(|&(a, _)| a).collect(),
        };
        let partial = (!residue.is_empty()).then_some(CacheTransaction {
            index: self.emitted.len(),
            members: residue,
            partial: true,
        });
        TransactionLog {
            config: self.cfg,
            transactions: self.emitted,
            partial,
        }
    }
}

/// Full transactions plus the optional end-of-trace residue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionLog {
    pub config: ExtractorConfig,
    pub transactions: Vec<CacheTransaction>,
    pub partial: Option<CacheTransaction>,
}

impl TransactionLog {
    /// Transactions to feed feature construction: full ones, plus the residue
    /// when `include_partial` is set.
    pub fn for_features(&self, include_partial: bool) -> Vec<&CacheTransaction> {
        let mut out: Vec<&CacheTransaction> = self.transactions.iter().collect();
        if include_partial {
            out.extend(self.partial.as_ref());
        }
        out
    }

    pub fn write_tsv<W: Write>(&self, mut out: W, header: &Header) -> std::io::Result<()> {
        header.write(&mut out)?;
        for t in self.transactions.iter().chain(self.partial.as_ref()) {
            write!(out, "{}\t", t.index)?;
            write_joined(&mut out, &t.members)?;
            if t.partial {
                out.write_all(b"\tpartial")?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads the TSV form. The extractor config is taken from the header keys
    /// `M` and `mode`.
    pub fn read_tsv<R: BufRead>(input: R) -> Result<(Self, Header)> {
        let (header, rows) = crate::artifact::read_rows(input, '\t')?;
        let window_bytes = header.parse_required("M")?;
        let mode = header.parse_required("mode")?;
        let config = ExtractorConfig::new(window_bytes, mode)?;
        let mut transactions = Vec::new();
        let mut partial = None;
        for (line, fields) in rows {
            let index: usize = crate::artifact::parse_field(&fields, 0, line)?;
            let members = crate::artifact::parse_list(fields.get(1).map_or("", |s| s), line)?;
            let t = CacheTransaction {
                index,
                members,
                partial: fields.get(2).is_some_and(|f| f == "partial"),
            };
            if t.partial {
                partial = Some(t);
            } else {
                if t.index != transactions.len() {
                    return Err(Error::Parse {
                        line,
                        reason: format!("transaction index {} out of sequence", t.index),
                    });
                }
                transactions.push(t);
            }
        }
        Ok((
            Self {
                config,
                transactions,
                partial,
            },
            header,
        ))
    }
}

pub(crate) fn write_joined<W: Write, T: fmt::Display>(out: &mut W, items: &[T]) -> std::io::Result<()> {
    for (i, a) in items.iter().enumerate() {
        if i > 0 {
            out.write_all(b",")?;
        }
        write!(out, "{a}")?;
    }
    Ok(())
}

pub fn extract_transactions(trace: &Trace, cfg: ExtractorConfig) -> Result<TransactionLog> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut ex = TransactionExtractor::new(cfg)?;
    for r in &trace.records {
        ex.push(r.block_address, r.size);
    }
    Ok(ex.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace_io::{AccessRecord, Op};

    fn trace(accesses: &[(u64, u64)]) -> Trace {
        Trace::new(
            accesses
                .iter()
                .enumerate()
                .map(|(i, &(a, s))| AccessRecord {
                    timestamp: i as u64,
                    block_address: a,
                    size: s,
                    op: Op::Read,
                })
                .collect(),
            "t",
        )
    }

    fn cfg(m: u64, mode: ExtractionMode) -> ExtractorConfig {
        ExtractorConfig::new(m, mode).unwrap()
    }

    const FOUR: [(u64, u64); 4] = [(0, 4), (8, 4), (16, 4), (24, 4)];

    #[test]
    fn snapshot_emits_window_and_clears() {
        let log = extract_transactions(&trace(&FOUR), cfg(8, ExtractionMode::Snapshot)).unwrap();
        assert_eq!(log.transactions.len(), 1);
        assert_eq!(log.transactions[0].members, [16, 24]);
        assert!(log.partial.is_none());
    }

    #[test]
    fn cumulative_keeps_evicted_members() {
        let log = extract_transactions(&trace(&FOUR), cfg(8, ExtractionMode::Cumulative)).unwrap();
        assert_eq!(log.transactions.len(), 1);
        assert_eq!(log.transactions[0].members, [0, 8, 16, 24]);
        assert!(log.partial.is_none());
    }

    #[test]
    fn resident_reaccess_is_ignored() {
        for mode in [ExtractionMode::Snapshot, ExtractionMode::Cumulative] {
            let log = extract_transactions(&trace(&[(0, 4), (0, 4), (0, 4)]), cfg(8, mode)).unwrap();
            assert!(log.transactions.is_empty());
            let p = log.partial.unwrap();
            assert_eq!(p.members, [0]);
            assert!(p.partial);
            assert_eq!(p.index, 0);
        }
    }

    #[test]
    fn window_state_steps() {
        let mut ex = TransactionExtractor::new(cfg(8, ExtractionMode::Snapshot)).unwrap();
        assert_eq!(ex.window_state(), &FifoWindow::default());
        ex.push(0, 4);
        assert_eq!(ex.window_state().occupied, 4);
        assert_eq!(ex.window_state().evicted_since_emit, 0);
        ex.push(8, 4);
        ex.push(16, 4);
        assert_eq!(ex.window_state().evicted_since_emit, 4);
        assert!(ex.push(24, 4));
        let w = ex.window_state();
        assert!(w.entries.is_empty());
        assert_eq!(w.evicted_since_emit, 0);
        assert_eq!(w.occupied, 0);
    }

    #[test]
    fn oversized_datum_joins_cumulative_transaction() {
        let log = extract_transactions(
            &trace(&[(0, 2), (100, 50), (8, 2)]),
            cfg(8, ExtractionMode::Cumulative),
        )
        .unwrap();
        assert_eq!(log.transactions[0].members, [0, 100]);
        assert_eq!(log.partial.unwrap().members, [8]);
    }

    #[test]
    fn readmission_uses_current_size() {
        let mut ex = TransactionExtractor::new(cfg(8, ExtractionMode::Cumulative)).unwrap();
        ex.push(0, 4);
        ex.push(8, 4);
        ex.push(16, 4); // evicts 0
        ex.push(0, 2); // re-admitted with size 2
        assert_eq!(ex.window_state().entries.back(), Some(&(0, 2)));
    }

    #[test]
    fn zero_window_rejected() {
        assert!(ExtractorConfig::new(0, ExtractionMode::Snapshot).is_err());
        assert!(matches!(
            extract_transactions(&Trace::default(), cfg(8, ExtractionMode::Snapshot)),
            Err(Error::EmptyTrace)
        ));
    }

    #[test]
    fn tsv_roundtrip() {
        let log = extract_transactions(
            &trace(&[(0, 4), (8, 4), (16, 4), (24, 4), (32, 4)]),
            cfg(8, ExtractionMode::Cumulative),
        )
        .unwrap();
        let header = Header::new()
            .with("M", 8)
            .with("mode", log.config.mode);
        let mut buf = Vec::new();
        log.write_tsv(&mut buf, &header).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("0\t0,8,16,24\n"));
        assert!(text.contains("1\t32\tpartial\n"));
        let (back, h) = TransactionLog::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back, log);
        assert_eq!(h.get("M"), Some("8"));
    }
}
