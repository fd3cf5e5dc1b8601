//! CAN trace data model and CSV I/O.
//!
//! The canonical trace format is CSV with header
//! `timestamp,id,dlc,payload,isTampered`. IDs are written as 0x-prefixed
//! uppercase hex, payload bytes as space-separated hex. The `isTampered`
//! column is optional on input (absent means all untampered) and always
//! emitted on output. Timestamps are 64-bit floating seconds; the writer
//! emits the shortest round-tripping decimal form.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

pub const TRACE_HEADER: &str = "timestamp,id,dlc,payload,isTampered";

/// One CAN data frame with a tamper label.
#[derive(Debug, Clone, PartialEq)]
pub struct CanFrame {
    /// Seconds since trace start, non-negative.
    pub timestamp: f64,
    /// 11-bit or 29-bit identifier.
    pub can_id: u32,
    /// Payload, up to 8 bytes; `dlc` is its length.
    pub payload: Vec<u8>,
    pub tampered: bool,
}

impl CanFrame {
    pub fn new(timestamp: f64, can_id: u32, payload: Vec<u8>, tampered: bool) -> Result<Self> {
        if !(timestamp.is_finite() && timestamp >= 0.0) {
            return Err(Error::Structural(format!(
                "timestamp must be a non-negative real, got {timestamp}"
            )));
        }
        if can_id >= 1 << 29 {
            return Err(Error::Structural(format!("CAN ID 0x{can_id:X} exceeds 29 bits")));
        }
        if payload.len() > 8 {
            return Err(Error::Structural(format!(
                "payload length {} exceeds 8 bytes",
                payload.len()
            )));
        }
        Ok(CanFrame { timestamp, can_id, payload, tampered })
    }

    pub fn dlc(&self) -> usize {
        self.payload.len()
    }
}

/// An ordered sequence of frames with non-decreasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub frames: Vec<CanFrame>,
    pub source_label: String,
}

impl Trace {
    /// Build a trace, validating timestamp ordering.
    pub fn new(frames: Vec<CanFrame>, source_label: impl Into<String>) -> Result<Self> {
        for w in frames.windows(2) {
            if w[1].timestamp < w[0].timestamp {
                return Err(Error::Structural(format!(
                    "timestamps decrease: {} -> {}",
                    w[0].timestamp, w[1].timestamp
                )));
            }
        }
        Ok(Trace { frames, source_label: source_label.into() })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Time of first frame, or 0 for an empty trace.
    pub fn start_time(&self) -> f64 {
        self.frames.first().map_or(0.0, |f| f.timestamp)
    }

    pub fn end_time(&self) -> f64 {
        self.frames.last().map_or(0.0, |f| f.timestamp)
    }

    /// Partition into per-ID streams. Every frame lands in exactly one
    /// stream; per-stream order follows trace order.
    pub fn split_by_id(&self) -> BTreeMap<u32, IdStream> {
        let mut map: BTreeMap<u32, IdStream> = BTreeMap::new();
        for (i, frame) in self.frames.iter().enumerate() {
            map.entry(frame.can_id)
                .or_insert_with(|| IdStream { can_id: frame.can_id, indices: Vec::new(), frames: Vec::new() })
                .push(i, frame.clone());
        }
        map
    }
}

/// Sub-sequence of a trace restricted to one CAN ID, original indices kept.
#[derive(Debug, Clone, PartialEq)]
pub struct IdStream {
    pub can_id: u32,
    /// Original trace indices, strictly increasing.
    pub indices: Vec<usize>,
    pub frames: Vec<CanFrame>,
}

impl IdStream {
    fn push(&mut self, index: usize, frame: CanFrame) {
        self.indices.push(index);
        self.frames.push(frame);
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// (last − first) / (count − 1). Needs at least two frames.
    pub fn mean_interarrival(&self) -> Result<f64> {
        if self.frames.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "ID 0x{:X}: {} frame(s), need at least 2 for interarrival",
                self.can_id,
                self.frames.len()
            )));
        }
        let first = self.frames.first().unwrap().timestamp;
        let last = self.frames.last().unwrap().timestamp;
        Ok((last - first) / (self.frames.len() - 1) as f64)
    }

    /// Common dlc of the stream, or a structural error on mixed dlc.
    pub fn uniform_dlc(&self) -> Result<usize> {
        let mut it = self.frames.iter();
        let first = it
            .next()
            .ok_or_else(|| Error::InsufficientData(format!("ID 0x{:X}: empty stream", self.can_id)))?
            .dlc();
        for f in it {
            if f.dlc() != first {
                return Err(Error::Structural(format!(
                    "ID 0x{:X}: mixed dlc {} and {}",
                    self.can_id,
                    first,
                    f.dlc()
                )));
            }
        }
        Ok(first)
    }
}

fn parse_hex_id(s: &str, line: usize) -> Result<u32> {
    let body = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")).unwrap_or(s);
    u32::from_str_radix(body, 16).map_err(|_| Error::Parse {
        line,
        msg: format!("invalid hex ID {s:?}"),
    })
}

fn parse_payload(s: &str, dlc: usize, line: usize) -> Result<Vec<u8>> {
    let compact: String = s.chars().filter(|ch| !ch.is_whitespace()).collect();
    if compact.len() != dlc * 2 {
        return Err(Error::Parse {
            line,
            msg: format!("payload {s:?} has {} hex chars, dlc {dlc} needs {}", compact.len(), dlc * 2),
        });
    }
    (0..dlc)
        .map(|i| {
            u8::from_str_radix(&compact[2 * i..2 * i + 2], 16).map_err(|_| Error::Parse {
                line,
                msg: format!("non-hex payload {s:?}"),
            })
        })
        .collect()
}

/// Parse the canonical CSV trace format. Fails on malformed rows and on
/// decreasing timestamps; never reorders.
pub fn parse_trace<R: BufRead>(reader: R, source_label: &str) -> Result<Trace> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or(Error::Parse { line: 1, msg: "missing header".into() })?
        .map_err(Error::Io)?;
    let header = header.trim_end();
    let has_label_column = match header {
        TRACE_HEADER => true,
        "timestamp,id,dlc,payload" => false,
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unexpected header {other:?}, expected {TRACE_HEADER:?}"),
            })
        }
    };

    let mut frames = Vec::new();
    let mut prev_ts: Option<f64> = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let expected = if has_label_column { 5 } else { 4 };
        if cols.len() != expected {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {expected} columns, found {}", cols.len()),
            });
        }
        let timestamp: f64 = cols[0].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid timestamp {:?}", cols[0]),
        })?;
        let can_id = parse_hex_id(cols[1].trim(), line_no)?;
        let dlc: usize = cols[2].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid dlc {:?}", cols[2]),
        })?;
        if dlc > 8 {
            return Err(Error::Parse { line: line_no, msg: format!("dlc {dlc} exceeds 8") });
        }
        let payload = parse_payload(cols[3], dlc, line_no)?;
        let tampered = if has_label_column {
            match cols[4].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("isTampered must be 0 or 1, found {other:?}"),
                    })
                }
            }
        } else {
            false
        };
        if let Some(prev) = prev_ts {
            if timestamp < prev {
                return Err(Error::Ordering { line: line_no, prev, cur: timestamp });
            }
        }
        prev_ts = Some(timestamp);
        frames.push(CanFrame::new(timestamp, can_id, payload, tampered).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?);
    }
    Ok(Trace { frames, source_label: source_label.into() })
}

/// Write the canonical CSV form. `parse_trace(write_trace(t)) == t`.
pub fn write_trace<W: Write>(trace: &Trace, mut writer: W) -> Result<()> {
    writeln!(writer, "{TRACE_HEADER}")?;
    for frame in &trace.frames {
        let payload: Vec<String> = frame.payload.iter().map(|b| format!("{b:02X}")).collect();
        writeln!(
            writer,
            "{},0x{:X},{},{},{}",
            frame.timestamp,
            frame.can_id,
            frame.dlc(),
            payload.join(" "),
            u8::from(frame.tampered)
        )?;
    }
    Ok(())
}

pub fn read_trace_file(path: &std::path::Path) -> Result<Trace> {
    let file = std::fs::File::open(path)?;
    let label = path.display().to_string();
    parse_trace(std::io::BufReader::new(file), &label)
}

pub fn write_trace_file(trace: &Trace, path: &std::path::Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trace(trace, std::io::BufWriter::new(file))
}
