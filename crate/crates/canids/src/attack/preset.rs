//! Benchmark dataset presets: repeated attack recipes tiled across a trace.

use super::{
    apply_attack_recorded, AttackKind, AttackManifest, AttackMode, AttackSpec, RangeRef, Replacement,
    ReplacementMode,
};
use crate::error::{Error, Result};
use crate::rng::sub_rng;
use crate::signals::{BitRange, SignalMap};
use crate::trace::Trace;
use rand::Rng;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Replay-sourced frames added at 20x rate, 50 packets, one physical
    /// signal modified within its observed value range.
    Injection,
    /// 25 consecutive frames removed.
    Drop,
    /// 25 frames replaced in place, one or more signals modified in range.
    Masquerade,
    /// 25 frames replaced in place with all physical signal bits fuzzed;
    /// constant/counter/CRC bits kept from the replaced frames.
    Fuzzed,
    /// One >= 4-bit signal driven linearly to a target over 25 frames.
    Seamless,
    /// 25 frames replaced with an exact sequence sniffed earlier.
    FullReplay,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Preset::Injection => "injection",
            Preset::Drop => "drop",
            Preset::Masquerade => "masquerade",
            Preset::Fuzzed => "fuzzed",
            Preset::Seamless => "seamless",
            Preset::FullReplay => "full_replay",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "injection" => Ok(Preset::Injection),
            "drop" => Ok(Preset::Drop),
            "masquerade" => Ok(Preset::Masquerade),
            "fuzzed" => Ok(Preset::Fuzzed),
            "seamless" => Ok(Preset::Seamless),
            "full_replay" => Ok(Preset::FullReplay),
            other => Err(format!("unknown preset {other:?}")),
        }
    }
}

/// Attack placement knobs. The preset recipes fix the per-attack
/// parameters; density across the trace is configurable.
#[derive(Debug, Clone, Copy)]
pub struct PresetConfig {
    /// Seconds of trace time between attack starts per target ID.
    pub tile_interval: f64,
    /// Offset of the first attack from trace start; leaves untampered
    /// traffic for sniffing and for the "last untampered" anchors.
    pub first_offset: f64,
    /// How far before the attack start replay payloads are sniffed.
    pub sniff_back: f64,
}

impl Default for PresetConfig {
    fn default() -> Self {
        PresetConfig { tile_interval: 10.0, first_offset: 3.0, sniff_back: 2.0 }
    }
}

fn eligible_physicals(entry: &crate::signals::IdEntry, preset: Preset) -> Vec<BitRange> {
    entry
        .physical_ranges()
        .filter(|r| preset != Preset::Seamless || r.length >= 4)
        .copied()
        .collect()
}

fn in_range_values(r: &BitRange, count: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<u64> {
    (0..count).map(|_| rng.gen_range(r.min_observed..=r.max_observed)).collect()
}

fn build_spec(
    preset: Preset,
    id: u32,
    t0: f64,
    physicals: &[BitRange],
    cfg: &PresetConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> AttackSpec {
    let rref = |r: &BitRange| RangeRef { start_bit: r.start_bit, length: r.length };
    match preset {
        Preset::Injection => {
            let r = physicals[rng.gen_range(0..physicals.len())];
            AttackSpec {
                target_id: id,
                start_time: t0,
                mode: AttackMode::Injection { rate_multiplier: 20.0 },
                kind: AttackKind::Replay {
                    count: 50,
                    sniff_start: t0 - cfg.sniff_back,
                    randomize_first: false,
                    replacements: vec![Replacement {
                        range: rref(&r),
                        mode: ReplacementMode::Payloads { values: in_range_values(&r, 50, rng) },
                    }],
                },
            }
        }
        Preset::Drop => AttackSpec {
            target_id: id,
            start_time: t0,
            mode: AttackMode::Masquerade,
            kind: AttackKind::Drop { count: 25 },
        },
        Preset::Masquerade => {
            let how_many = rng.gen_range(1..=physicals.len().min(3));
            let mut idx: Vec<usize> = (0..physicals.len()).collect();
            for i in 0..how_many {
                let j = rng.gen_range(i..idx.len());
                idx.swap(i, j);
            }
            let replacements = idx[..how_many]
                .iter()
                .map(|&i| Replacement {
                    range: rref(&physicals[i]),
                    mode: ReplacementMode::Payloads { values: in_range_values(&physicals[i], 25, rng) },
                })
                .collect();
            AttackSpec {
                target_id: id,
                start_time: t0,
                mode: AttackMode::Masquerade,
                kind: AttackKind::Replay {
                    count: 25,
                    sniff_start: t0 - cfg.sniff_back,
                    randomize_first: false,
                    replacements,
                },
            }
        }
        Preset::Fuzzed => AttackSpec {
            target_id: id,
            start_time: t0,
            mode: AttackMode::Masquerade,
            kind: AttackKind::Replay {
                // self-replay: payloads sniffed from the very frames being
                // replaced, so non-signal bits stay identical to them
                count: 25,
                sniff_start: t0,
                randomize_first: false,
                replacements: physicals
                    .iter()
                    .map(|r| Replacement { range: rref(r), mode: ReplacementMode::Fuzzy })
                    .collect(),
            },
        },
        Preset::Seamless => {
            let r = physicals[rng.gen_range(0..physicals.len())];
            let target = rng.gen_range(r.min_observed..=r.max_observed);
            AttackSpec {
                target_id: id,
                start_time: t0,
                mode: AttackMode::Masquerade,
                kind: AttackKind::Replay {
                    count: 25,
                    sniff_start: t0,
                    randomize_first: false,
                    replacements: vec![Replacement {
                        range: rref(&r),
                        mode: ReplacementMode::SeamlessChange { target_value: target },
                    }],
                },
            }
        }
        Preset::FullReplay => AttackSpec {
            target_id: id,
            start_time: t0,
            mode: AttackMode::Masquerade,
            kind: AttackKind::Replay {
                count: 25,
                sniff_start: t0 - cfg.sniff_back,
                randomize_first: true,
                replacements: Vec::new(),
            },
        },
    }
}

/// Apply a preset recipe across all eligible IDs of the trace, tiling
/// attacks at `cfg.tile_interval` per ID and skipping placements that do
/// not fit (trace edges). Returns the tampered trace and a manifest of
/// every applied attack.
pub fn preset_dataset(
    trace: &Trace,
    preset: Preset,
    map: &SignalMap,
    seed: u64,
    cfg: &PresetConfig,
) -> Result<(Trace, AttackManifest)> {
    let span_end = trace.end_time();
    let mut out = trace.clone();
    let mut manifest = AttackManifest { version: 1, seed, attacks: Vec::new() };
    let mut attack_index = 0u64;

    for (&id, entry) in &map.entries {
        let physicals = eligible_physicals(entry, preset);
        if physicals.is_empty() {
            continue;
        }
        let mut t0 = trace.start_time() + cfg.first_offset.max(cfg.sniff_back + 0.5);
        let mut tile = 0u64;
        while t0 < span_end {
            let mut rng = sub_rng(seed, &format!("preset-{preset}"), id, tile);
            let spec = build_spec(preset, id, t0, &physicals, cfg, &mut rng);
            match apply_attack_recorded(&out, &spec, map, seed, attack_index) {
                Ok((next, record)) => {
                    out = next;
                    manifest.attacks.push(record);
                    attack_index += 1;
                }
                // placements that run off the trace edge are skipped
                Err(Error::Span(_)) | Err(Error::NoTarget(_)) => {}
                Err(e) => return Err(e),
            }
            t0 += cfg.tile_interval;
            tile += 1;
        }
    }

    if manifest.attacks.is_empty() {
        return Err(Error::NoEligibleId(format!(
            "preset {preset}: no ID with a suitable physical signal produced an attack"
        )));
    }
    Ok((out, manifest))
}
