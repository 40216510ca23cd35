//! Deduplicated accumulation of a sample stream.
//!
//! A [`MassTable`] holds, for every distinct point seen so far, its multiplicity
//! `c(i) ≥ 1`, its mass `p(i)` and its value `f(i)`. It is exactly the set `S` of
//! sampled points together with the restrictions of `c`, `p` and `f` to `S`.
//!
//! Iteration is in ascending key-byte order so that every floating-point sum taken
//! over a table is reproducible.

use std::collections::btree_map::{self, BTreeMap, Entry as MapEntry};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{fmt17, rel_close, sum_compensated};

/// Maximum key length in bytes.
pub const MAX_KEY_BYTES: usize = 16;

/// Relative tolerance when a repeated key re-states its mass or value.
pub const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum TableError {
    #[error("key {key} seen with mass {stored} and again with {given}")]
    MassMismatch { key: Key, stored: f64, given: f64 },

    #[error("key {key} seen with value {stored} and again with {given}")]
    FValueMismatch { key: Key, stored: f64, given: f64 },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("malformed input at line {line}: {reason}")]
    Malformed { line: u64, reason: String },
}

impl TableError {
    /// Whether the error is a consistency violation between records, as opposed to
    /// a malformed or invalid record.
    pub fn is_consistency(&self) -> bool {
        matches!(self, Self::MassMismatch { .. } | Self::FValueMismatch { .. })
    }
}

pub type Result<T> = std::result::Result<T, TableError>;

/// Opaque identifier of a point of the domain: 1 to 16 bytes, hex-encoded
/// canonically in lower case.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key(Vec<u8>);

impl Key {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(TableError::InvalidRecord("empty key".into()));
        }
        if bytes.len() > MAX_KEY_BYTES {
            return Err(TableError::InvalidRecord(format!(
                "key of {} bytes exceeds {MAX_KEY_BYTES}",
                bytes.len()
            )));
        }
        Ok(Self(bytes))
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim())
            .map_err(|e| TableError::InvalidRecord(format!("key {s:?}: {e}")))?;
        Self::new(bytes)
    }

    /// Big-endian key of `width` bytes holding `value`; used for integer domains.
    pub fn from_uint(value: u128, width: usize) -> Result<Self> {
        if width == 0 || width > MAX_KEY_BYTES {
            return Err(TableError::InvalidRecord(format!("key width {width}")));
        }
        if width < 16 && value >> (8 * width) != 0 {
            return Err(TableError::InvalidRecord(format!(
                "{value} does not fit in {width} bytes"
            )));
        }
        Self::new(value.to_be_bytes()[16 - width..].to_vec())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key({})", self.to_hex())
    }
}

impl Serialize for Key {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Key {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Key::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// One draw: the point, its unnormalized mass and its value.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub key: Key,
    pub mass: f64,
    pub fvalue: f64,
}

impl SampleRecord {
    pub fn new(key: Key, mass: f64, fvalue: f64) -> Result<Self> {
        let record = Self { key, mass, fvalue };
        record.validate()?;
        Ok(record)
    }

    pub fn from_hex(key: &str, mass: f64, fvalue: f64) -> Result<Self> {
        Self::new(Key::from_hex(key)?, mass, fvalue)
    }

    fn validate(&self) -> Result<()> {
        // Zero-mass points cannot be drawn.
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(TableError::InvalidRecord(format!(
                "key {}: mass must be positive and finite, got {}",
                self.key, self.mass
            )));
        }
        if !self.fvalue.is_finite() {
            return Err(TableError::InvalidRecord(format!(
                "key {}: value must be finite, got {}",
                self.key, self.fvalue
            )));
        }
        Ok(())
    }
}

/// Per-key content of a [`MassTable`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub count: u64,
    pub mass: f64,
    pub fvalue: f64,
}

/// Summary statistics of a sample: `N`, `M`, `M′` and `P(S)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SampleSummary {
    /// Number of draws including repetitions.
    pub n_draws: u64,
    /// Number of distinct points.
    pub n_distinct: u64,
    /// Number of points seen exactly once.
    pub n_singletons: u64,
    /// Total mass on the distinct points.
    pub mass_on_sample: f64,
}

/// Deduplicated sample: key → (count, mass, value).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MassTable {
    entries: BTreeMap<Key, Entry>,
}

impl MassTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one draw.
    pub fn insert(&mut self, record: SampleRecord) -> Result<()> {
        self.insert_counted(record, 1)
    }

    /// Adds `count` draws of the same point (pre-aggregated input).
    pub fn insert_counted(&mut self, record: SampleRecord, count: u64) -> Result<()> {
        record.validate()?;
        if count == 0 {
            return Err(TableError::InvalidRecord(format!(
                "key {}: count must be at least 1",
                record.key
            )));
        }
        match self.entries.entry(record.key) {
            MapEntry::Vacant(slot) => {
                slot.insert(Entry {
                    count,
                    mass: record.mass,
                    fvalue: record.fvalue,
                });
            }
            MapEntry::Occupied(mut slot) => {
                check_consistent(slot.key(), slot.get(), record.mass, record.fvalue)?;
                slot.get_mut().count += count;
            }
        }
        Ok(())
    }

    /// Adds the counts of `other` into `self`. Either every key of `other` is merged
    /// or, on a consistency error, `self` is left untouched.
    pub fn merge_from(&mut self, other: &MassTable) -> Result<()> {
        for (key, theirs) in &other.entries {
            if let Some(ours) = self.entries.get(key) {
                check_consistent(key, ours, theirs.mass, theirs.fvalue)?;
            }
        }
        for (key, theirs) in &other.entries {
            self.entries
                .entry(key.clone())
                .and_modify(|ours| ours.count += theirs.count)
                .or_insert(*theirs);
        }
        Ok(())
    }

    pub fn summarize(&self) -> SampleSummary {
        SampleSummary {
            n_draws: self.entries.values().map(|e| e.count).sum(),
            n_distinct: self.entries.len() as u64,
            n_singletons: self.entries.values().filter(|e| e.count == 1).count() as u64,
            mass_on_sample: self.mass_on_sample(),
        }
    }

    /// `P(S)`, summed in key order.
    pub fn mass_on_sample(&self) -> f64 {
        sum_compensated(self.entries.values().map(|e| e.mass))
    }

    pub fn n_draws(&self) -> u64 {
        self.entries.values().map(|e| e.count).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &Key) -> Option<&Entry> {
        self.entries.get(key)
    }

    /// Entries in ascending key order.
    pub fn iter(&self) -> btree_map::Iter<'_, Key, Entry> {
        self.entries.iter()
    }

    pub fn values(&self) -> btree_map::Values<'_, Key, Entry> {
        self.entries.values()
    }

    /// Reads either the per-draw format (`key,mass,fvalue`) or the pre-aggregated
    /// format (`key,count,mass,fvalue`). Lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);

        let headers = rdr.headers().map_err(csv_error)?.clone();
        let names: Vec<&str> = headers.iter().collect();
        let aggregated = match names.as_slice() {
            ["key", "mass", "fvalue"] => false,
            ["key", "count", "mass", "fvalue"] => true,
            [] | [""] => {
                return Err(TableError::Malformed {
                    line: 1,
                    reason: "missing header".into(),
                })
            }
            other => {
                return Err(TableError::Malformed {
                    line: 1,
                    reason: format!(
                        "unexpected header {other:?}; expected key,mass,fvalue or key,count,mass,fvalue"
                    ),
                })
            }
        };

        let mut table = Self::new();
        for row in rdr.records() {
            let row = row.map_err(csv_error)?;
            let line = row.position().map_or(0, |p| p.line());
            let field = |idx: usize| row.get(idx).unwrap_or_default();
            let number = |idx: usize, what: &str| -> Result<f64> {
                field(idx).parse::<f64>().map_err(|e| TableError::Malformed {
                    line,
                    reason: format!("{what} {:?}: {e}", field(idx)),
                })
            };
            let key = Key::from_hex(field(0)).map_err(|e| at_line(e, line))?;
            let (count, mass, fvalue) = if aggregated {
                let count = field(1).parse::<u64>().map_err(|e| TableError::Malformed {
                    line,
                    reason: format!("count {:?}: {e}", field(1)),
                })?;
                (count, number(2, "mass")?, number(3, "fvalue")?)
            } else {
                (1, number(1, "mass")?, number(2, "fvalue")?)
            };
            let record = SampleRecord { key, mass, fvalue };
            table
                .insert_counted(record, count)
                .map_err(|e| at_line(e, line))?;
        }
        Ok(table)
    }

    /// Writes the pre-aggregated format with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["key", "count", "mass", "fvalue"])?;
        for (key, e) in &self.entries {
            wtr.write_record([
                key.to_hex(),
                e.count.to_string(),
                fmt17(e.mass),
                fmt17(e.fvalue),
            ])?;
        }
        wtr.flush()
    }
}

impl FromIterator<(Key, Entry)> for MassTable {
    fn from_iter<I: IntoIterator<Item = (Key, Entry)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a MassTable {
    type Item = (&'a Key, &'a Entry);
    type IntoIter = btree_map::Iter<'a, Key, Entry>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// Merges two tables into a new one.
pub fn merge(a: &MassTable, b: &MassTable) -> Result<MassTable> {
    let mut out = a.clone();
    out.merge_from(b)?;
    Ok(out)
}

fn check_consistent(key: &Key, stored: &Entry, mass: f64, fvalue: f64) -> Result<()> {
    if !rel_close(stored.mass, mass, CONSISTENCY_TOL) {
        return Err(TableError::MassMismatch {
            key: key.clone(),
            stored: stored.mass,
            given: mass,
        });
    }
    if !rel_close(stored.fvalue, fvalue, CONSISTENCY_TOL) {
        return Err(TableError::FValueMismatch {
            key: key.clone(),
            stored: stored.fvalue,
            given: fvalue,
        });
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> TableError {
    let line = e.position().map_or(0, |p| p.line());
    TableError::Malformed {
        line,
        reason: e.to_string(),
    }
}

fn at_line(e: TableError, line: u64) -> TableError {
    match e {
        TableError::InvalidRecord(reason) => TableError::Malformed { line, reason },
        other => other,
    }
}
