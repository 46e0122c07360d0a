//! Plain-text artifact framing: `# key=value` header lines followed by
//! delimiter-separated rows.

use std::fmt::Display;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::{Error, Result};

/// Ordered metadata header.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Display) -> Self {
        self.set(key, value);
        self
    }

    /// Sets `key`, replacing an existing value in place.
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse_required<T>(&self, key: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::Parse {
                line: 0,
                reason: format!("header is missing {key:?}"),
            })?;
        raw.parse().map_err(|e| Error::Parse {
            line: 0,
            reason: format!("header {key}={raw:?}: {e}"),
        })
    }

    pub fn write<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "# {k}={v}")?;
        }
        Ok(())
    }
}

/// One data row with its 1-based line number.
pub type Row = (usize, Vec<String>);

/// Reads header lines (leading `#`) and splits the remaining non-empty lines on `sep`.
pub fn read_rows<R: BufRead>(input: R, sep: char) -> Result<(Header, Vec<Row>)> {
    let mut header = Header::new();
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<artifact>", e))?;
        let line = line.trim_end_matches('\r');
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.trim().split_once('=') {
                header.set(k.trim(), v.trim());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push((i + 1, line.split(sep).map(str::to_string).collect()));
    }
    Ok((header, rows))
}

pub fn parse_field<T>(fields: &[String], idx: usize, line: usize) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    let raw = fields.get(idx).ok_or_else(|| Error::Parse {
        line,
        reason: format!("missing field {}", idx + 1),
    })?;
    raw.trim().parse().map_err(|e| Error::Parse {
        line,
        reason: format!("field {} {raw:?}: {e}", idx + 1),
    })
}

/// Parses a comma-separated list; the empty string is the empty list.
pub fn parse_list<T>(raw: &str, line: usize) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|e| Error::Parse {
                line,
                reason: format!("list item {s:?}: {e}"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_roundtrip_and_rows() {
        let h = Header::new().with("M", 8).with("mode", "cumulative");
        let mut buf = Vec::new();
        h.write(&mut buf).unwrap();
        buf.extend_from_slice(b"0\t1,2\n\n1\t3\n");
        let (back, rows) = read_rows(buf.as_slice(), '\t').unwrap();
        assert_eq!(back, h);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1], (5, vec!["1".to_string(), "3".to_string()]));
        let list: Vec<u64> = parse_list(&rows[0].1[1], 4).unwrap();
        assert_eq!(list, [1, 2]);
        assert!(parse_list::<u64>("1,x", 9).is_err());
    }

    #[test]
    fn set_replaces() {
        let mut h = Header::new().with("a", 1);
        h.set("a", 2);
        assert_eq!(h.entries().len(), 1);
        assert_eq!(h.get("a"), Some("2"));
        assert!(h.parse_required::<u64>("b").is_err());
    }
}
