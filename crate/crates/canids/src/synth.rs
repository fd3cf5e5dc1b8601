//! Synthetic CAN traffic generation from known payload layouts.
//!
//! Used to produce desk-scale benchmark traffic with ground-truth structure:
//! the generator's layout is the oracle the signal classifier is checked
//! against, and the generated traces feed the end-to-end pipeline tests.

use crate::error::Result;
use crate::rng::sub_rng;
use crate::signals::{BitRange, IdEntry, RangeKind, SignalMap};
use crate::trace::{CanFrame, Trace};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Per-range value generator.
#[derive(Debug, Clone)]
pub enum SigGen {
    /// Fixed value every frame.
    Constant(u64),
    /// Increments by one per frame, wrapping at the range width.
    Counter,
    /// Uniform random over the full range width every frame (CRC-like).
    Random,
    /// Sinusoid spanning the full range with uniform noise on the low bits.
    /// `period` is in seconds of trace time.
    Sine { period: f64, low_noise_bits: u32 },
    /// Slow bounded random walk plus occasional uniform re-seeds; bit-flip
    /// profile of a physical sensor that rarely sweeps its whole range.
    Sensor { jump_period: u32, noise: u64 },
    /// Bounded random walk with reflection, no jumps.
    Drift { max_step: i64 },
    /// Cycles through a fixed set of levels, switching every `period` frames.
    Step { period: u32, levels: Vec<u64> },
}

#[derive(Debug, Clone)]
pub struct SynthRange {
    pub start_bit: usize,
    pub length: usize,
    pub gen: SigGen,
}

/// Layout and timing of one synthetic CAN ID.
#[derive(Debug, Clone)]
pub struct SynthId {
    pub can_id: u32,
    pub dlc: usize,
    /// Seconds between consecutive frames of this ID.
    pub interarrival: f64,
    pub ranges: Vec<SynthRange>,
}

impl SynthId {
    /// The classification the flip-rate analyzer is expected to recover
    /// (bounds left zero; only boundaries and kinds are layout-determined).
    pub fn expected_entry(&self) -> IdEntry {
        let mut ranges = Vec::new();
        let mut next = 0;
        let push_const = |ranges: &mut Vec<BitRange>, from: usize, to: usize| {
            if to > from {
                ranges.push(BitRange::new(from, to - from, RangeKind::Constant));
            }
        };
        for r in &self.ranges {
            push_const(&mut ranges, next, r.start_bit);
            let kind = match r.gen {
                SigGen::Constant(_) => RangeKind::Constant,
                SigGen::Counter => RangeKind::Counter,
                SigGen::Random => RangeKind::Crc,
                _ => RangeKind::Physical,
            };
            ranges.push(BitRange::new(r.start_bit, r.length, kind));
            next = r.start_bit + r.length;
        }
        push_const(&mut ranges, next, self.dlc * 8);
        // merge adjacent constants so the expectation matches maximal runs
        let mut merged: Vec<BitRange> = Vec::new();
        for r in ranges {
            match merged.last_mut() {
                Some(prev) if prev.kind == RangeKind::Constant && r.kind == RangeKind::Constant => {
                    prev.length += r.length;
                }
                _ => merged.push(r),
            }
        }
        IdEntry { can_id: self.can_id, dlc: self.dlc, ranges: merged }
    }
}

fn range_cap(length: usize) -> u64 {
    if length >= 64 {
        u64::MAX
    } else {
        (1u64 << length) - 1
    }
}

struct GenState {
    value: u64,
    frame: u64,
}

fn next_value(gen: &SigGen, state: &mut GenState, max: u64, t: f64, rng: &mut ChaCha8Rng) -> u64 {
    let v = match gen {
        SigGen::Constant(v) => *v & max,
        SigGen::Counter => state.frame & max,
        SigGen::Random => rng.gen_range(0..=max),
        SigGen::Sine { period, low_noise_bits } => {
            let noise_max = (1u64 << low_noise_bits) - 1;
            let amp = (max - noise_max) as f64;
            let base = amp / 2.0 * (1.0 + (2.0 * std::f64::consts::PI * t / period).sin());
            base.round() as u64 + rng.gen_range(0..=noise_max)
        }
        SigGen::Sensor { jump_period, noise } => {
            if state.frame == 0 || rng.gen_range(0..*jump_period) == 0 {
                rng.gen_range(0..=max)
            } else {
                let delta = rng.gen_range(-(*noise as i64)..=*noise as i64);
                (state.value as i64 + delta).clamp(0, max as i64) as u64
            }
        }
        SigGen::Drift { max_step } => {
            if state.frame == 0 {
                rng.gen_range(0..=max)
            } else {
                let delta = rng.gen_range(-max_step..=*max_step);
                let mut v = state.value as i64 + delta;
                if v < 0 {
                    v = -v;
                }
                if v > max as i64 {
                    v = 2 * max as i64 - v;
                }
                v.clamp(0, max as i64) as u64
            }
        }
        SigGen::Step { period, levels } => {
            let idx = (state.frame / *period as u64) as usize % levels.len();
            levels[idx] & max
        }
    };
    state.value = v;
    state.frame += 1;
    v
}

fn set_bits(payload: &mut [u8], start: usize, len: usize, value: u64) {
    for i in 0..len {
        let bit = start + i;
        let b = ((value >> (len - 1 - i)) & 1) as u8;
        let byte = bit / 8;
        let shift = 7 - bit % 8;
        payload[byte] = (payload[byte] & !(1 << shift)) | (b << shift);
    }
}

/// Generate `frames_per_id` frames for every layout, interleaved by time.
pub fn generate(layouts: &[SynthId], frames_per_id: usize, seed: u64) -> Result<Trace> {
    let mut frames: Vec<CanFrame> = Vec::with_capacity(layouts.len() * frames_per_id);
    for (li, layout) in layouts.iter().enumerate() {
        let mut rng = sub_rng(seed, "synth", layout.can_id, li as u64);
        let offset = layout.interarrival * (li as f64 + 1.0) / (layouts.len() as f64 + 1.0);
        let mut states: Vec<GenState> =
            layout.ranges.iter().map(|_| GenState { value: 0, frame: 0 }).collect();
        for j in 0..frames_per_id {
            let t = offset + j as f64 * layout.interarrival;
            let mut payload = vec![0u8; layout.dlc];
            for (r, state) in layout.ranges.iter().zip(states.iter_mut()) {
                let max = range_cap(r.length);
                let v = next_value(&r.gen, state, max, t, &mut rng);
                set_bits(&mut payload, r.start_bit, r.length, v);
            }
            frames.push(CanFrame::new(t, layout.can_id, payload, false)?);
        }
    }
    frames.sort_by(|a, b| a.timestamp.partial_cmp(&b.timestamp).unwrap());
    Trace::new(frames, "synthetic")
}

/// Expected signal map for a set of layouts (kinds and boundaries only).
pub fn expected_map(layouts: &[SynthId]) -> SignalMap {
    let mut map = SignalMap::default();
    for l in layouts {
        map.entries.insert(l.can_id, l.expected_entry());
    }
    map
}

/// Random layout drawn from a grammar the classifier is expected to solve:
/// signals separated so every boundary is recoverable from flip statistics
/// (physical signals do not sit at the payload tail, where low-bit noise is
/// indistinguishable from checksum bits at this trace length).
pub fn random_layout(can_id: u32, rng: &mut ChaCha8Rng) -> SynthId {
    let dlc = rng.gen_range(4..=8usize);
    let nbits = dlc * 8;
    let mut ranges = Vec::new();
    let mut bit = 0usize;
    let with_crc = rng.gen_bool(0.5);
    let tail_reserved = if with_crc { 8 + 2 } else { 2 };
    let mut prev_physical = false;
    while bit + tail_reserved + 4 <= nbits {
        let choice = rng.gen_range(0..3u32);
        match choice {
            0 => {
                // physical sensor signal, 8-16 bits
                let len = rng.gen_range(8..=16usize).min(nbits - tail_reserved - bit);
                if len < 8 {
                    break;
                }
                if prev_physical {
                    // adjacent physicals are legal; keep them distinguishable
                    // by a constant separator half the time
                    if rng.gen_bool(0.5) {
                        let pad = rng.gen_range(1..=2usize);
                        ranges.push(SynthRange { start_bit: bit, length: pad, gen: SigGen::Constant(rng.gen()) });
                        bit += pad;
                        continue;
                    }
                }
                ranges.push(SynthRange {
                    start_bit: bit,
                    length: len,
                    gen: SigGen::Sensor { jump_period: rng.gen_range(20..60), noise: 3 },
                });
                bit += len;
                prev_physical = true;
            }
            1 => {
                // counter, 2-5 bits, bounded by constant pads on both sides
                let len = rng.gen_range(2..=5usize);
                if bit + len + 1 + tail_reserved > nbits {
                    break;
                }
                if prev_physical {
                    ranges.push(SynthRange { start_bit: bit, length: 1, gen: SigGen::Constant(rng.gen()) });
                    bit += 1;
                }
                ranges.push(SynthRange { start_bit: bit, length: len, gen: SigGen::Counter });
                bit += len;
                let pad = 1;
                ranges.push(SynthRange { start_bit: bit, length: pad, gen: SigGen::Constant(rng.gen()) });
                bit += pad;
                prev_physical = false;
            }
            _ => {
                let len = rng.gen_range(1..=6usize);
                ranges.push(SynthRange { start_bit: bit, length: len, gen: SigGen::Constant(rng.gen()) });
                bit += len;
                prev_physical = false;
            }
        }
    }
    if with_crc {
        // pad to the tail, then an 8-bit checksum; the byte before the CRC
        // must not be noise-like, so pad with constants
        if bit < nbits - 8 {
            ranges.push(SynthRange {
                start_bit: bit,
                length: nbits - 8 - bit,
                gen: SigGen::Constant(rng.gen()),
            });
        }
        ranges.push(SynthRange { start_bit: nbits - 8, length: 8, gen: SigGen::Random });
    } else if bit < nbits {
        ranges.push(SynthRange { start_bit: bit, length: nbits - bit, gen: SigGen::Constant(rng.gen()) });
    }
    SynthId { can_id, dlc, interarrival: 0.01, ranges }
}
