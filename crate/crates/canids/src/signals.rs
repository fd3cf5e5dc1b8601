//! Payload structure reverse engineering from bit-flip statistics.
//!
//! For each CAN ID the payload is partitioned into bit ranges classified as
//! constant, counter, CRC, or physical signal, with observed value bounds for
//! rescaling. Bit numbering is MSB-first: bit 0 is the most significant bit
//! of payload byte 0, so a big-endian 16-bit signal in bytes 0-1 occupies
//! bits 0-15. This is the single most common interop pitfall; every bit
//! index in this crate follows that convention.

use crate::error::{Error, Result};
use crate::trace::{CanFrame, IdStream};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

pub const SIGNALMAP_HEADER: &str = "canids-signalmap v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangeKind {
    Constant,
    Counter,
    Crc,
    Physical,
}

impl fmt::Display for RangeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RangeKind::Constant => "constant",
            RangeKind::Counter => "counter",
            RangeKind::Crc => "crc",
            RangeKind::Physical => "physical",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for RangeKind {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "constant" => Ok(RangeKind::Constant),
            "counter" => Ok(RangeKind::Counter),
            "crc" => Ok(RangeKind::Crc),
            "physical" => Ok(RangeKind::Physical),
            _ => Err(()),
        }
    }
}

/// A classified bit range within one ID's payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitRange {
    pub start_bit: usize,
    pub length: usize,
    pub kind: RangeKind,
    pub min_observed: u64,
    pub max_observed: u64,
}

impl BitRange {
    pub fn new(start_bit: usize, length: usize, kind: RangeKind) -> Self {
        BitRange { start_bit, length, kind, min_observed: 0, max_observed: 0 }
    }

    pub fn end_bit(&self) -> usize {
        self.start_bit + self.length
    }
}

/// Classified payload layout of one CAN ID: ranges cover [0, 8*dlc) exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct IdEntry {
    pub can_id: u32,
    pub dlc: usize,
    pub ranges: Vec<BitRange>,
}

impl IdEntry {
    pub fn physical_ranges(&self) -> impl Iterator<Item = &BitRange> {
        self.ranges.iter().filter(|r| r.kind == RangeKind::Physical)
    }

    pub fn physical_count(&self) -> usize {
        self.physical_ranges().count()
    }

    /// Verify the ranges form a sorted, contiguous partition of the payload.
    pub fn check_partition(&self) -> Result<()> {
        let mut next = 0;
        for r in &self.ranges {
            if r.start_bit != next || r.length == 0 {
                return Err(Error::Structural(format!(
                    "ID 0x{:X}: ranges do not partition payload at bit {next}",
                    self.can_id
                )));
            }
            next = r.end_bit();
        }
        if next != self.dlc * 8 {
            return Err(Error::Structural(format!(
                "ID 0x{:X}: ranges cover {next} bits, payload has {}",
                self.can_id,
                self.dlc * 8
            )));
        }
        Ok(())
    }
}

/// Per-ID classified layouts, keyed by CAN ID.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignalMap {
    pub entries: BTreeMap<u32, IdEntry>,
}

/// Thresholds for the flip-rate classifier. All configurable; defaults are
/// the values the test corpus is calibrated against.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct ClassifierParams {
    /// Bits with flip rate <= this are constant. Default 0 (exact).
    pub constant_rate: f64,
    /// Counter detection: consecutive rates must double within this relative
    /// tolerance (ratio in [2(1-tol), 2(1+tol)]).
    pub counter_tolerance: f64,
    /// CRC band: all rates of a tail run must lie in [crc_low, crc_high].
    pub crc_low: f64,
    pub crc_high: f64,
    /// Minimum CRC run length in bits, anchored at the payload tail.
    pub crc_min_len: usize,
    /// Physical signals are split where the flip rate drops by more than
    /// this margin from one bit to the next (rates rise toward the LSB
    /// within a signal; a drop marks a new signal's MSB).
    pub split_margin: f64,
}

impl Default for ClassifierParams {
    fn default() -> Self {
        ClassifierParams {
            constant_rate: 0.0,
            counter_tolerance: 0.2,
            crc_low: 0.4,
            crc_high: 0.6,
            crc_min_len: 8,
            split_margin: 0.05,
        }
    }
}

fn bit_of(payload: &[u8], bit: usize) -> u8 {
    (payload[bit / 8] >> (7 - bit % 8)) & 1
}

/// Fraction of consecutive-frame pairs in which each bit differs.
/// Requires a uniform dlc and at least two frames.
pub fn bit_flip_rates(stream: &IdStream) -> Result<Vec<f64>> {
    let dlc = stream.uniform_dlc()?;
    if stream.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "ID 0x{:X}: need at least 2 frames for flip rates",
            stream.can_id
        )));
    }
    let nbits = dlc * 8;
    let mut flips = vec![0usize; nbits];
    for pair in stream.frames.windows(2) {
        for (i, f) in flips.iter_mut().enumerate() {
            if bit_of(&pair[0].payload, i) != bit_of(&pair[1].payload, i) {
                *f += 1;
            }
        }
    }
    let pairs = (stream.len() - 1) as f64;
    Ok(flips.into_iter().map(|f| f as f64 / pairs).collect())
}

/// True if `rates[a..=b]` approximately doubles bit-to-bit toward the LSB.
fn is_counter_run(rates: &[f64], a: usize, b: usize, tol: f64) -> bool {
    if b - a < 1 {
        return false;
    }
    (a..b).all(|i| {
        let ratio = rates[i + 1] / rates[i];
        ratio >= 2.0 * (1.0 - tol) && ratio <= 2.0 * (1.0 + tol)
    })
}

/// Split a physical run into signals at bits where the flip rate drops by
/// more than the margin (each signal's rate profile is non-decreasing toward
/// its LSB, up to the margin).
fn split_physical(rates: &[f64], a: usize, b: usize, margin: f64, out: &mut Vec<BitRange>) {
    let mut start = a;
    for i in a..b {
        if rates[i + 1] < rates[i] - margin {
            out.push(BitRange::new(start, i + 1 - start, RangeKind::Physical));
            start = i + 1;
        }
    }
    out.push(BitRange::new(start, b + 1 - start, RangeKind::Physical));
}

fn classify_run(rates: &[f64], a: usize, b: usize, nbits: usize, params: &ClassifierParams, out: &mut Vec<BitRange>) {
    if is_counter_run(rates, a, b, params.counter_tolerance) {
        out.push(BitRange::new(a, b + 1 - a, RangeKind::Counter));
        return;
    }
    // A CRC can only sit at the payload tail; carve the longest in-band
    // suffix if it is long enough.
    if b == nbits - 1 {
        let mut s = b + 1;
        while s > a && rates[s - 1] >= params.crc_low && rates[s - 1] <= params.crc_high {
            s -= 1;
        }
        if b + 1 - s >= params.crc_min_len {
            if s > a {
                classify_prefix(rates, a, s - 1, params, out);
            }
            out.push(BitRange::new(s, b + 1 - s, RangeKind::Crc));
            return;
        }
    }
    split_physical(rates, a, b, params.split_margin, out);
}

fn classify_prefix(rates: &[f64], a: usize, b: usize, params: &ClassifierParams, out: &mut Vec<BitRange>) {
    if is_counter_run(rates, a, b, params.counter_tolerance) {
        out.push(BitRange::new(a, b + 1 - a, RangeKind::Counter));
    } else {
        split_physical(rates, a, b, params.split_margin, out);
    }
}

/// Classify the payload bits of one ID into constant/counter/CRC/physical
/// ranges covering the full payload width exactly once.
pub fn classify_ranges(stream: &IdStream, params: &ClassifierParams) -> Result<IdEntry> {
    let dlc = stream.uniform_dlc()?;
    let rates = bit_flip_rates(stream)?;
    let nbits = dlc * 8;
    let mut ranges = Vec::new();
    let mut i = 0;
    while i < nbits {
        if rates[i] <= params.constant_rate {
            let start = i;
            while i < nbits && rates[i] <= params.constant_rate {
                i += 1;
            }
            ranges.push(BitRange::new(start, i - start, RangeKind::Constant));
        } else {
            let start = i;
            while i < nbits && rates[i] > params.constant_rate {
                i += 1;
            }
            classify_run(&rates, start, i - 1, nbits, params, &mut ranges);
        }
    }
    let entry = IdEntry { can_id: stream.can_id, dlc, ranges };
    entry.check_partition()?;
    Ok(entry)
}

/// Read the unsigned big-endian integer in `range` from a frame's payload.
pub fn extract_signal(frame: &CanFrame, range: &BitRange) -> Result<u64> {
    let payload_bits = frame.dlc() * 8;
    if range.end_bit() > payload_bits || range.length == 0 || range.length > 64 {
        return Err(Error::RangeBounds {
            start: range.start_bit,
            len: range.length,
            payload_bits,
        });
    }
    let mut v = 0u64;
    for bit in range.start_bit..range.end_bit() {
        v = (v << 1) | u64::from(bit_of(&frame.payload, bit));
    }
    Ok(v)
}

/// Fill per-range observed bounds by scanning the stream, and demote
/// physical ranges that never vary to constant.
pub fn signal_bounds(stream: &IdStream, mut entry: IdEntry) -> Result<IdEntry> {
    for range in &mut entry.ranges {
        let mut min = u64::MAX;
        let mut max = 0u64;
        for frame in &stream.frames {
            let v = extract_signal(frame, range)?;
            min = min.min(v);
            max = max.max(v);
        }
        range.min_observed = min;
        range.max_observed = max;
        if range.kind == RangeKind::Physical && min == max {
            range.kind = RangeKind::Constant;
        }
    }
    Ok(entry)
}

/// Full analysis of one stream: classify, then record bounds.
pub fn analyze_stream(stream: &IdStream, params: &ClassifierParams) -> Result<IdEntry> {
    signal_bounds(stream, classify_ranges(stream, params)?)
}

impl IdEntry {
    fn write_text<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "id 0x{:X} dlc {}", self.can_id, self.dlc)?;
        for r in &self.ranges {
            writeln!(
                w,
                "range start {} len {} kind {} min {} max {}",
                r.start_bit, r.length, r.kind, r.min_observed, r.max_observed
            )?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical text form; pins the map a model was built on.
    pub fn digest(&self) -> [u8; 32] {
        let mut buf = Vec::new();
        self.write_text(&mut buf).unwrap();
        Sha256::digest(&buf).into()
    }
}

impl SignalMap {
    /// Serialize to the versioned sidecar text format. Field order is stable
    /// so reruns produce byte-identical files.
    pub fn save<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{SIGNALMAP_HEADER}")?;
        for entry in self.entries.values() {
            entry.write_text(&mut w)?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(r: R) -> Result<SignalMap> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(Error::Parse { line: 1, msg: "empty signal map".into() })??;
        if header.trim_end() != SIGNALMAP_HEADER {
            return Err(Error::Parse {
                line: 1,
                msg: format!("bad signal map header {header:?}"),
            });
        }
        let mut map = SignalMap::default();
        let mut current: Option<IdEntry> = None;
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| Error::Parse { line: line_no, msg: msg.into() };
            match toks.as_slice() {
                [] => {}
                ["id", id, "dlc", dlc] => {
                    if let Some(e) = current.take() {
                        e.check_partition()?;
                        map.entries.insert(e.can_id, e);
                    }
                    let id = id.strip_prefix("0x").ok_or_else(|| bad("ID must be 0x-prefixed"))?;
                    let can_id = u32::from_str_radix(id, 16).map_err(|_| bad("invalid hex ID"))?;
                    let dlc = dlc.parse().map_err(|_| bad("invalid dlc"))?;
                    current = Some(IdEntry { can_id, dlc, ranges: Vec::new() });
                }
                ["range", "start", s, "len", l, "kind", k, "min", mn, "max", mx] => {
                    let entry = current.as_mut().ok_or_else(|| bad("range before id line"))?;
                    let kind: RangeKind = k.parse().map_err(|_| bad("unknown range kind"))?;
                    entry.ranges.push(BitRange {
                        start_bit: s.parse().map_err(|_| bad("invalid start"))?,
                        length: l.parse().map_err(|_| bad("invalid len"))?,
                        kind,
                        min_observed: mn.parse().map_err(|_| bad("invalid min"))?,
                        max_observed: mx.parse().map_err(|_| bad("invalid max"))?,
                    });
                }
                _ => return Err(bad("unrecognized signal map line")),
            }
        }
        if let Some(e) = current.take() {
            e.check_partition()?;
            map.entries.insert(e.can_id, e);
        }
        Ok(map)
    }

    pub fn save_file(&self, path: &std::path::Path) -> Result<()> {
        self.save(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load_file(path: &std::path::Path) -> Result<SignalMap> {
        Self::load(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
