//! Attack injection engine: applies parameterized attacks to a real trace
//! and emits a labeled tampered trace plus a manifest.
//!
//! Attacks are deterministic functions of (trace, spec, seed). All frames
//! added or modified carry `tampered = true`; untouched frames are
//! bit-identical to the input.

mod preset;

pub use preset::{preset_dataset, Preset, PresetConfig};

use crate::error::{Error, Result};
use crate::rng::sub_rng;
use crate::signals::{BitRange, IdEntry, SignalMap};
use crate::trace::{CanFrame, IdStream, Trace};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const ATTACK_SPEC_VERSION: u32 = 1;

/// How tampered frames enter the bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// New frames are added; originals keep flowing.
    Injection { rate_multiplier: f64 },
    /// Original frames are replaced in place; timestamps and IDs kept.
    Masquerade,
}

/// A bit range selector for replacements, resolved against the signal map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeRef {
    pub start_bit: usize,
    pub length: usize,
}

/// Rewrites one bit range of the replayed payload sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ReplacementMode {
    /// Explicit per-frame values.
    Payloads { values: Vec<u64> },
    /// Uniform random value over the range width, per frame.
    Fuzzy,
    /// The minimum value observed in the dataset for that bit range.
    Min,
    /// The maximum value observed in the dataset for that bit range.
    Max,
    /// Linear interpolation from the last untampered value to the target.
    SeamlessChange { target_value: u64 },
    /// Increment by one per packet from the last untampered value.
    Counter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub range: RangeRef,
    #[serde(flatten)]
    pub mode: ReplacementMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AttackKind {
    /// One payload repeated `count` times.
    BasicInjection { payload: Vec<u8>, count: usize },
    /// One explicit payload per tampered packet.
    ProgressiveInjection { payloads: Vec<Vec<u8>> },
    /// Flood with ID-0 frames for `duration` seconds at `bus_fill` of the
    /// nominal bus capacity.
    Dos { duration: f64, bus_fill: f64 },
    /// Delete `count` consecutive frames of the target ID.
    Drop { count: usize },
    /// Random payloads; with `bit_range` set only that range is randomized.
    Fuzzy { count: usize, bit_range: Option<RangeRef> },
    /// Re-use payloads sniffed from the trace, optionally rewritten.
    Replay {
        count: usize,
        sniff_start: f64,
        randomize_first: bool,
        replacements: Vec<Replacement>,
    },
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::BasicInjection { .. } => "basic_injection",
            AttackKind::ProgressiveInjection { .. } => "progressive_injection",
            AttackKind::Dos { .. } => "dos",
            AttackKind::Drop { .. } => "drop",
            AttackKind::Fuzzy { .. } => "fuzzy",
            AttackKind::Replay { .. } => "replay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub target_id: u32,
    pub start_time: f64,
    pub mode: AttackMode,
    #[serde(flatten)]
    pub kind: AttackKind,
}

/// Versioned on-disk container for one attack run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpecFile {
    pub version: u32,
    pub attacks: Vec<AttackSpec>,
}

/// DoS spacing model: a classic 8-byte frame is estimated at a fixed bit
/// cost on a configurable nominal bitrate, so `bus_fill` maps to an insert
/// rate of `bitrate * bus_fill / frame_bits` frames per second.
#[derive(Debug, Clone, Copy)]
pub struct DosModel {
    pub bitrate: f64,
    pub frame_bits: f64,
}

impl Default for DosModel {
    fn default() -> Self {
        DosModel { bitrate: 500_000.0, frame_bits: 125.0 }
    }
}

/// Record of one applied attack, for the run manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRecord {
    pub target_id: u32,
    pub start_time: f64,
    pub kind: String,
    pub mode: String,
    pub frames_added: usize,
    pub frames_modified: usize,
    pub frames_removed: usize,
    /// Timestamps of removed frames (drop attacks), the ground truth for
    /// gaps that carry no in-trace label.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub removed_timestamps: Vec<f64>,
    pub sub_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackManifest {
    pub version: u32,
    pub seed: u64,
    pub attacks: Vec<AttackRecord>,
}

/// Write `value` into `range`'s bits of a copy of `frame`; marks it tampered.
pub fn set_signal(frame: &CanFrame, range: &BitRange, value: u64) -> Result<CanFrame> {
    let payload_bits = frame.dlc() * 8;
    if range.end_bit() > payload_bits || range.length == 0 || range.length > 64 {
        return Err(Error::RangeBounds { start: range.start_bit, len: range.length, payload_bits });
    }
    if range.length < 64 && value >= 1u64 << range.length {
        return Err(Error::ValueOverflow { value, len: range.length });
    }
    let mut out = frame.clone();
    for i in 0..range.length {
        let bit = range.start_bit + i;
        let b = ((value >> (range.length - 1 - i)) & 1) as u8;
        let byte = bit / 8;
        let shift = 7 - bit % 8;
        out.payload[byte] = (out.payload[byte] & !(1 << shift)) | (b << shift);
    }
    out.tampered = true;
    Ok(out)
}

fn range_domain(len: usize) -> u64 {
    if len >= 64 {
        u64::MAX
    } else {
        (1u64 << len) - 1
    }
}

fn resolve_range(entry: &IdEntry, r: &RangeRef) -> Result<BitRange> {
    entry
        .ranges
        .iter()
        .find(|br| br.start_bit == r.start_bit && br.length == r.length)
        .copied()
        .ok_or_else(|| {
            Error::Config(format!(
                "replacement range start {} len {} not present in signal map for ID 0x{:X}",
                r.start_bit, r.length, entry.can_id
            ))
        })
}

/// Index of the first stream frame with timestamp >= t.
fn first_at_or_after(stream: &IdStream, t: f64) -> Option<usize> {
    stream.frames.iter().position(|f| f.timestamp >= t)
}

/// Round-half-away-from-zero integer interpolation step.
fn interp(v0: u64, target: u64, step: usize, count: usize) -> u64 {
    let delta = target as i128 - v0 as i128;
    let num = delta * (step as i128 + 1);
    let den = count as i128;
    let half = if num >= 0 { den } else { -den };
    let q = (2 * num + half) / (2 * den);
    (v0 as i128 + q) as u64
}

/// Compute the replacement value sequence for `count` frames.
fn replacement_values(
    rep: &Replacement,
    resolved: &BitRange,
    last_untampered: u64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u64>> {
    let cap = range_domain(resolved.length);
    match &rep.mode {
        ReplacementMode::Payloads { values } => {
            if values.len() != count {
                return Err(Error::Config(format!(
                    "payloads replacement has {} values for {count} frames",
                    values.len()
                )));
            }
            for &v in values {
                if resolved.length < 64 && v > cap {
                    return Err(Error::ValueOverflow { value: v, len: resolved.length });
                }
            }
            Ok(values.clone())
        }
        ReplacementMode::Fuzzy => Ok((0..count).map(|_| rng.gen_range(0..=cap)).collect()),
        ReplacementMode::Min => Ok(vec![resolved.min_observed; count]),
        ReplacementMode::Max => Ok(vec![resolved.max_observed; count]),
        ReplacementMode::SeamlessChange { target_value } => {
            if resolved.length < 64 && *target_value > cap {
                return Err(Error::ValueOverflow { value: *target_value, len: resolved.length });
            }
            Ok((0..count).map(|j| interp(last_untampered, *target_value, j, count)).collect())
        }
        ReplacementMode::Counter => Ok((0..count)
            .map(|j| {
                if resolved.length >= 64 {
                    last_untampered.wrapping_add(1 + j as u64)
                } else {
                    (last_untampered.wrapping_add(1 + j as u64)) & cap
                }
            })
            .collect()),
    }
}

struct Applied {
    frames: Vec<CanFrame>,
    record: AttackRecord,
}

/// Apply one attack to a trace. Deterministic for a given seed.
pub fn apply_attack(trace: &Trace, spec: &AttackSpec, map: &SignalMap, seed: u64) -> Result<Trace> {
    let (out, _) = apply_attack_recorded(trace, spec, map, seed, 0)?;
    Ok(out)
}

/// As `apply_attack` but also returns the manifest record. `index`
/// disambiguates the sub-seed when one run applies many attacks.
pub fn apply_attack_recorded(
    trace: &Trace,
    spec: &AttackSpec,
    map: &SignalMap,
    seed: u64,
    index: u64,
) -> Result<(Trace, AttackRecord)> {
    let sub_seed = crate::rng::derive_seed(seed, "attack", spec.target_id, index);
    let mut rng = sub_rng(seed, "attack", spec.target_id, index);

    let streams = trace.split_by_id();
    let is_dos = matches!(spec.kind, AttackKind::Dos { .. });
    let stream = match streams.get(&spec.target_id) {
        Some(s) => Some(s),
        None if is_dos => None,
        None => return Err(Error::NoTarget(spec.target_id)),
    };

    let mode_name = match spec.mode {
        AttackMode::Injection { .. } => "injection",
        AttackMode::Masquerade => "masquerade",
    };
    let mut record = AttackRecord {
        target_id: spec.target_id,
        start_time: spec.start_time,
        kind: spec.kind.name().into(),
        mode: mode_name.into(),
        frames_added: 0,
        frames_modified: 0,
        frames_removed: 0,
        removed_timestamps: Vec::new(),
        sub_seed,
    };

    let applied = match &spec.kind {
        AttackKind::Dos { duration, bus_fill } => {
            if !(*bus_fill > 0.0 && *bus_fill <= 1.0) {
                return Err(Error::Config(format!("bus_fill {bus_fill} must be in (0, 1]")));
            }
            let model = DosModel::default();
            let spacing = model.frame_bits / (model.bitrate * bus_fill);
            let count = (duration / spacing).ceil() as usize;
            let mut frames = Vec::with_capacity(count);
            for j in 0..count {
                let t = spec.start_time + j as f64 * spacing;
                frames.push(CanFrame::new(t, 0, vec![0u8; 8], true)?);
            }
            record.frames_added = frames.len();
            Applied { frames, record }
        }
        AttackKind::Drop { count } => {
            let stream = stream.unwrap();
            let first = first_at_or_after(stream, spec.start_time).ok_or_else(|| {
                Error::Span(format!("no frame of ID 0x{:X} at/after start time", spec.target_id))
            })?;
            if first + count > stream.len() {
                return Err(Error::Span(format!(
                    "drop of {count} frames exceeds remaining {} frames",
                    stream.len() - first
                )));
            }
            let removed: std::collections::BTreeSet<usize> =
                stream.indices[first..first + count].iter().copied().collect();
            record.frames_removed = *count;
            record.removed_timestamps =
                stream.frames[first..first + count].iter().map(|f| f.timestamp).collect();
            let keep: Vec<CanFrame> = trace
                .frames
                .iter()
                .enumerate()
                .filter(|(i, _)| !removed.contains(i))
                .map(|(_, f)| f.clone())
                .collect();
            let out = Trace::new(keep, trace.source_label.clone())?;
            return Ok((out, record));
        }
        _ => {
            let stream = stream.unwrap();
            match spec.mode {
                AttackMode::Masquerade => {
                    apply_masquerade(trace, spec, stream, map, &mut rng, record)?
                }
                AttackMode::Injection { rate_multiplier } => {
                    if !(rate_multiplier > 0.0) {
                        return Err(Error::Config(format!(
                            "rate_multiplier {rate_multiplier} must be positive"
                        )));
                    }
                    apply_injection(spec, stream, map, rate_multiplier, &mut rng, record)?
                }
            }
        }
    };

    // Masquerade already produced the full frame list; injection (and DoS)
    // produced new frames to merge. Stable sort keeps originals first on
    // timestamp ties.
    let replaced_in_place =
        matches!(spec.mode, AttackMode::Masquerade) && !matches!(spec.kind, AttackKind::Dos { .. });
    let out_frames = if replaced_in_place {
        applied.frames
    } else {
        let mut merged = trace.frames.clone();
        merged.extend(applied.frames);
        merged.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).unwrap());
        merged
    };
    let out = Trace { frames: out_frames, source_label: trace.source_label.clone() };
    Ok((out, applied.record))
}

/// Last genuine value of `range` in the stream strictly before index `idx`.
fn last_untampered_value(stream: &IdStream, idx: usize, range: &BitRange) -> Result<u64> {
    if idx == 0 {
        return Err(Error::Span("no untampered frame before attack start".into()));
    }
    crate::signals::extract_signal(&stream.frames[idx - 1], range)
}

fn sniff_payloads(
    stream: &IdStream,
    sniff_start: f64,
    count: usize,
    randomize_first: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<u8>>> {
    let base = first_at_or_after(stream, sniff_start)
        .ok_or_else(|| Error::Span("sniff start beyond trace end".into()))?;
    let offset = if randomize_first && count > 1 { rng.gen_range(0..count) } else { 0 };
    let start = base + offset;
    if start + count > stream.len() {
        return Err(Error::Span(format!(
            "replay sniff of {count} frames from index {start} exceeds stream length {}",
            stream.len()
        )));
    }
    Ok(stream.frames[start..start + count].iter().map(|f| f.payload.clone()).collect())
}

/// Build the tampered payload sequence for the replay kind.
fn replay_payloads(
    spec: &AttackSpec,
    stream: &IdStream,
    entry: &IdEntry,
    first_target: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<u8>>> {
    let (count, sniff_start, randomize_first, replacements) = match &spec.kind {
        AttackKind::Replay { count, sniff_start, randomize_first, replacements } => {
            (*count, *sniff_start, *randomize_first, replacements)
        }
        _ => unreachable!(),
    };
    let mut payloads = sniff_payloads(stream, sniff_start, count, randomize_first, rng)?;
    for rep in replacements {
        let resolved = resolve_range(entry, &rep.range)?;
        let last = match rep.mode {
            ReplacementMode::SeamlessChange { .. } | ReplacementMode::Counter => {
                last_untampered_value(stream, first_target, &resolved)?
            }
            _ => 0,
        };
        let values = replacement_values(rep, &resolved, last, count, rng)?;
        for (payload, v) in payloads.iter_mut().zip(values) {
            let f = CanFrame::new(0.0, spec.target_id, std::mem::take(payload), false)?;
            *payload = set_signal(&f, &resolved, v)?.payload;
        }
    }
    Ok(payloads)
}

fn entry_for<'m>(map: &'m SignalMap, id: u32) -> Result<&'m IdEntry> {
    map.entries
        .get(&id)
        .ok_or_else(|| Error::Config(format!("ID 0x{id:X} missing from signal map")))
}

fn apply_masquerade(
    trace: &Trace,
    spec: &AttackSpec,
    stream: &IdStream,
    map: &SignalMap,
    rng: &mut ChaCha8Rng,
    mut record: AttackRecord,
) -> Result<Applied> {
    let first = first_at_or_after(stream, spec.start_time).ok_or_else(|| {
        Error::Span(format!("no frame of ID 0x{:X} at/after start time", spec.target_id))
    })?;

    let payloads: Vec<Vec<u8>> = match &spec.kind {
        AttackKind::BasicInjection { payload, count } => vec![payload.clone(); *count],
        AttackKind::ProgressiveInjection { payloads } => payloads.clone(),
        AttackKind::Fuzzy { count, bit_range } => {
            let mut out = Vec::with_capacity(*count);
            for j in 0..*count {
                if first + j >= stream.len() {
                    break; // span check below
                }
                let original = &stream.frames[first + j];
                match bit_range {
                    None => {
                        let payload: Vec<u8> = (0..original.dlc()).map(|_| rng.gen()).collect();
                        out.push(payload);
                    }
                    Some(r) => {
                        let br = BitRange::new(r.start_bit, r.length, crate::signals::RangeKind::Physical);
                        let v = rng.gen_range(0..=range_domain(r.length));
                        out.push(set_signal(original, &br, v)?.payload);
                    }
                }
            }
            if out.len() < *count {
                return Err(Error::Span(format!(
                    "masquerade of {count} frames exceeds remaining {}",
                    out.len()
                )));
            }
            out
        }
        AttackKind::Replay { .. } => {
            let entry = entry_for(map, spec.target_id)?;
            replay_payloads(spec, stream, entry, first, rng)?
        }
        AttackKind::Dos { .. } | AttackKind::Drop { .. } => unreachable!(),
    };

    if first + payloads.len() > stream.len() {
        return Err(Error::Span(format!(
            "masquerade of {} frames starting at stream index {first} exceeds {} frames",
            payloads.len(),
            stream.len()
        )));
    }

    let mut frames = trace.frames.clone();
    for (j, payload) in payloads.iter().enumerate() {
        let trace_idx = stream.indices[first + j];
        let orig = &trace.frames[trace_idx];
        if payload.len() != orig.dlc() {
            return Err(Error::Structural(format!(
                "replacement payload length {} != dlc {}",
                payload.len(),
                orig.dlc()
            )));
        }
        frames[trace_idx] =
            CanFrame { timestamp: orig.timestamp, can_id: orig.can_id, payload: payload.clone(), tampered: true };
    }
    record.frames_modified = payloads.len();
    Ok(Applied { frames, record })
}

fn apply_injection(
    spec: &AttackSpec,
    stream: &IdStream,
    map: &SignalMap,
    rate_multiplier: f64,
    rng: &mut ChaCha8Rng,
    mut record: AttackRecord,
) -> Result<Applied> {
    let spacing = stream.mean_interarrival()? / rate_multiplier;
    // last genuine frame at/before start, used as the payload template
    let template_idx = match first_at_or_after(stream, spec.start_time) {
        None => stream.len() - 1,
        Some(0) => 0,
        Some(i) => i - 1,
    };
    let template = &stream.frames[template_idx];

    let payloads: Vec<Vec<u8>> = match &spec.kind {
        AttackKind::BasicInjection { payload, count } => vec![payload.clone(); *count],
        AttackKind::ProgressiveInjection { payloads } => payloads.clone(),
        AttackKind::Fuzzy { count, bit_range } => (0..*count)
            .map(|_| match bit_range {
                None => Ok((0..template.dlc()).map(|_| rng.gen()).collect()),
                Some(r) => {
                    let br = BitRange::new(r.start_bit, r.length, crate::signals::RangeKind::Physical);
                    let v = rng.gen_range(0..=range_domain(r.length));
                    Ok(set_signal(template, &br, v)?.payload)
                }
            })
            .collect::<Result<_>>()?,
        AttackKind::Replay { .. } => {
            let entry = entry_for(map, spec.target_id)?;
            // "last untampered" for injection is the template frame
            let first = template_idx + 1;
            replay_payloads(spec, stream, entry, first, rng)?
        }
        AttackKind::Dos { .. } | AttackKind::Drop { .. } => unreachable!(),
    };

    let frames: Vec<CanFrame> = payloads
        .into_iter()
        .enumerate()
        .map(|(j, p)| CanFrame::new(spec.start_time + j as f64 * spacing, spec.target_id, p, true))
        .collect::<Result<_>>()?;
    record.frames_added = frames.len();
    Ok(Applied { frames, record })
}
