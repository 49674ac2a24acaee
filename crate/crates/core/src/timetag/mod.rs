//! Per-trial detection records and their binary and CSV forms.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"HOMTTAG\0"
//! 8       2     version (u16) = 1
//! 10      8     trial_period_ps (u64)
//! 18      8     n_trials (u64)
//! 26      32    config fingerprint (SHA-256)
//! 58      4     metadata length L (u32)
//! 62      L     metadata, UTF-8 "key=value\n" lines
//! 62+L    13*n  records: trial u32, channel u8, time_ps u64
//! ```

mod csv_io;
mod io;

pub use csv_io::{export_csv, import_csv};
pub use io::{read_stream, write_stream, StreamReader, StreamWriter};

use std::collections::BTreeMap;
use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"HOMTTAG\0";
pub const VERSION: u16 = 1;
pub const RECORD_BYTES: usize = 13;
/// Header size without the metadata block.
pub const FIXED_HEADER_BYTES: usize = 62;

#[derive(Debug, Error)]
pub enum TimeTagError {
    #[error("bad magic {found:02x?} (not a time-tag stream)")]
    BadMagic { found: [u8; 8] },
    #[error("unsupported stream version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("truncated header at byte {offset}")]
    TruncatedHeader { offset: u64 },
    #[error("truncated record at byte {offset}: {got} of 13 bytes")]
    TruncatedRecord { offset: u64, got: usize },
    #[error("invalid record at byte {offset}: {reason}")]
    Invariant { offset: u64, reason: String },
    #[error("records not sorted by (trial, time) at index {index}")]
    Unsorted { index: u64 },
    #[error("invalid metadata: {0}")]
    Metadata(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct TimeTagRecord {
    pub trial: u32,
    pub channel: u8,
    /// Picoseconds from trial start.
    pub time: u64,
}

impl TimeTagRecord {
    pub fn new(trial: u32, channel: u8, time: u64) -> Self {
        Self { trial, channel, time }
    }

    pub fn time_ns(&self) -> f64 {
        self.time as f64 * 1e-3
    }

    /// Sort key used by the on-disk order.
    #[inline]
    pub fn key(&self) -> (u32, u64) {
        (self.trial, self.time)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub trial_period_ps: u64,
    pub n_trials: u64,
    pub fingerprint: [u8; 32],
    pub metadata: BTreeMap<String, String>,
}

impl StreamHeader {
    pub fn new(trial_period_ps: u64, n_trials: u64) -> Self {
        Self {
            trial_period_ps,
            n_trials,
            fingerprint: [0; 32],
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.metadata.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn fingerprint_hex(&self) -> String {
        hex::encode(self.fingerprint)
    }

    pub fn trial_period_ns(&self) -> f64 {
        self.trial_period_ps as f64 * 1e-3
    }

    pub(crate) fn encode_metadata(&self) -> Result<Vec<u8>, TimeTagError> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            if k.is_empty() || k.contains(['=', '\n']) {
                return Err(TimeTagError::Metadata(format!("key {k:?} must be non-empty without '=' or newline")));
            }
            if v.contains('\n') {
                return Err(TimeTagError::Metadata(format!("value of {k:?} contains a newline")));
            }
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        if out.len() > u32::MAX as usize {
            return Err(TimeTagError::Metadata("metadata block exceeds 4 GiB".into()));
        }
        Ok(out.into_bytes())
    }

    pub(crate) fn decode_metadata(bytes: &[u8]) -> Result<BTreeMap<String, String>, TimeTagError> {
        let text = std::str::from_utf8(bytes).map_err(|e| TimeTagError::Metadata(e.to_string()))?;
        let mut map = BTreeMap::new();
        for line in text.split_terminator('\n') {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| TimeTagError::Metadata(format!("line {line:?} has no '='")))?;
            map.insert(k.to_string(), v.to_string());
        }
        Ok(map)
    }

    pub fn encoded_len(&self) -> Result<usize, TimeTagError> {
        Ok(FIXED_HEADER_BYTES + self.encode_metadata()?.len())
    }

    /// Checks one record against the header invariants.
    pub fn check(&self, r: &TimeTagRecord) -> Result<(), String> {
        if r.channel != 1 && r.channel != 2 {
            return Err(format!("channel {} not in {{1, 2}}", r.channel));
        }
        if r.time >= self.trial_period_ps {
            return Err(format!("time {} ps >= trial period {} ps", r.time, self.trial_period_ps));
        }
        if u64::from(r.trial) >= self.n_trials {
            return Err(format!("trial {} >= n_trials {}", r.trial, self.n_trials));
        }
        Ok(())
    }
}

/// Header plus records, in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagStream {
    pub header: StreamHeader,
    pub records: Vec<TimeTagRecord>,
}

impl TimeTagStream {
    pub fn new(header: StreamHeader, records: Vec<TimeTagRecord>) -> Self {
        Self { header, records }
    }

    pub fn n_trials(&self) -> u64 {
        self.header.n_trials
    }

    pub fn is_sorted(&self) -> bool {
        self.records.windows(2).all(|w| w[0].key() <= w[1].key())
    }

    /// Iterates `(trial, records of that trial)` for trials with at least one record.
    pub fn trials(&self) -> TrialGroups<'_> {
        TrialGroups { rest: &self.records }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TimeTagError> {
        let mut buf = Vec::with_capacity(self.header.encoded_len()? + RECORD_BYTES * self.records.len());
        write_stream(&mut buf, &self.header, &self.records)?;
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TimeTagError> {
        let reader = StreamReader::new(bytes)?;
        let header = reader.header().clone();
        let records = reader.collect::<Result<Vec<_>, _>>()?;
        Ok(Self { header, records })
    }
}

pub struct TrialGroups<'a> {
    rest: &'a [TimeTagRecord],
}

impl<'a> Iterator for TrialGroups<'a> {
    type Item = (u32, &'a [TimeTagRecord]);

    fn next(&mut self) -> Option<Self::Item> {
        let first = self.rest.first()?;
        let n = self.rest.iter().take_while(|r| r.trial == first.trial).count();
        let (group, rest) = self.rest.split_at(n);
        self.rest = rest;
        Some((first.trial, group))
    }
}

/// Half-open interval of trial-relative time `[start_ps, end_ps)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TagWindow {
    pub start_ps: u64,
    pub end_ps: u64,
}

impl TagWindow {
    pub fn new(start_ps: u64, len_ps: u64) -> Self {
        Self {
            start_ps,
            end_ps: start_ps.saturating_add(len_ps),
        }
    }

    /// Rounds nanosecond bounds to the nearest picosecond, clamping at zero.
    pub fn from_ns(start_ns: f64, end_ns: f64) -> Self {
        let to_ps = |t: f64| (t * 1e3).round().max(0.0) as u64;
        Self {
            start_ps: to_ps(start_ns),
            end_ps: to_ps(end_ns),
        }
    }

    pub fn full(period_ps: u64) -> Self {
        Self { start_ps: 0, end_ps: period_ps }
    }

    #[inline]
    pub fn contains(&self, t_ps: u64) -> bool {
        t_ps >= self.start_ps && t_ps < self.end_ps
    }

    pub fn len_ps(&self) -> u64 {
        self.end_ps.saturating_sub(self.start_ps)
    }

    pub fn len_ns(&self) -> f64 {
        self.len_ps() as f64 * 1e-3
    }

    pub fn is_empty(&self) -> bool {
        self.end_ps <= self.start_ps
    }

    pub fn shifted(&self, by_ps: i64) -> Self {
        let shift = |t: u64| t.saturating_add_signed(by_ps);
        Self {
            start_ps: shift(self.start_ps),
            end_ps: shift(self.end_ps),
        }
    }

    pub fn overlaps(&self, other: &TagWindow) -> bool {
        self.start_ps < other.end_ps && other.start_ps < self.end_ps
    }

    pub fn within(&self, period_ps: u64) -> bool {
        self.end_ps <= period_ps
    }
}

/// Keeps records whose time lies in `window`, preserving order.
pub fn filter_window<I>(records: I, window: TagWindow) -> impl Iterator<Item = TimeTagRecord>
where
    I: IntoIterator<Item = TimeTagRecord>,
{
    records.into_iter().filter(move |r| window.contains(r.time))
}
