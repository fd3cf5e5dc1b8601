//! Run configuration and the end-to-end phases: analyze, train, threshold,
//! detect, evaluate. Each phase consumes and produces only declared files,
//! so a run is resumable phase by phase. The numeric pipeline runs in `f32`.

use crate::detector::{calibrate_threshold, detect, DetectTiming, WindowVerdict};
use crate::error::{Error, Result};
use crate::evalbench::{confusion, label_windows, metrics, EvalReport, IdResult};
use crate::model::{
    load_model_file, save_model_file, train, ModelBundle, ModelDims, TrainConfig, TrainReport,
};
use crate::preprocess::{
    sliding_windows, tumbling_windows, vectorize, SignalVector, WindowBatch, MIN_TRAIN_WINDOWS,
};
use crate::rng::derive_seed;
use crate::signals::{analyze_stream, ClassifierParams, IdEntry, SignalMap};
use crate::trace::{read_trace_file, IdStream, Trace};
use rayon::prelude::*;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const RUN_CONFIG_VERSION: u32 = 1;

/// Scalar type of the production pipeline.
pub type PipelineScalar = f32;

/// Dataset roles of one run.
#[derive(Debug, Clone, Deserialize)]
pub struct Datasets {
    /// Training traces (clean).
    pub train: Vec<PathBuf>,
    /// Validation trace for early stopping (clean).
    pub validation: PathBuf,
    /// Threshold calibration trace (clean).
    pub calibration: PathBuf,
    /// Evaluation trace (may carry tamper labels).
    pub test: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub window_len: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: u32,
    seed: u64,
    signal_map: PathBuf,
    model_dir: PathBuf,
    datasets: Datasets,
    #[serde(default)]
    training: TrainOverrides,
    #[serde(default)]
    min_train_windows: Option<usize>,
}

/// Resolved run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub signal_map: PathBuf,
    pub model_dir: PathBuf,
    pub datasets: Datasets,
    pub training: TrainConfig,
    pub min_train_windows: usize,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        if raw.version != RUN_CONFIG_VERSION {
            return Err(Error::VersionMismatch {
                expected: RUN_CONFIG_VERSION,
                found: raw.version,
            });
        }
        if raw.datasets.train.is_empty() {
            return Err(Error::Config("no training traces configured".into()));
        }
        let mut training = TrainConfig { rng_seed: raw.seed, ..TrainConfig::default() };
        let o = &raw.training;
        if let Some(v) = o.learning_rate {
            training.learning_rate = v;
        }
        if let Some(v) = o.max_epochs {
            training.max_epochs = v;
        }
        if let Some(v) = o.patience {
            training.patience = v;
        }
        if let Some(v) = o.dropout_rate {
            training.dropout_rate = v;
        }
        if let Some(v) = o.batch_size {
            training.batch_size = v;
        }
        if let Some(v) = o.window_len {
            training.window_len = v;
        }
        training.validate()?;
        Ok(RunConfig {
            seed: raw.seed,
            signal_map: raw.signal_map,
            model_dir: raw.model_dir,
            datasets: raw.datasets,
            training,
            min_train_windows: raw.min_train_windows.unwrap_or(MIN_TRAIN_WINDOWS),
        })
    }

    pub fn from_toml_file(path: &Path) -> Result<RunConfig> {
        RunConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    fn model_path(&self, can_id: u32) -> PathBuf {
        self.model_dir.join(format!("0x{can_id:X}.model"))
    }
}

/// Per-ID streams pooled across several trace files; windows never straddle
/// file boundaries.
fn pooled_streams(paths: &[PathBuf]) -> Result<BTreeMap<u32, Vec<IdStream>>> {
    let mut pooled: BTreeMap<u32, Vec<IdStream>> = BTreeMap::new();
    for path in paths {
        let trace = read_trace_file(path)?;
        for (id, stream) in trace.split_by_id() {
            pooled.entry(id).or_default().push(stream);
        }
    }
    Ok(pooled)
}

/// Classify and bound signals per ID over all training traces.
///
/// Returns the map plus a per-ID summary line for run logs.
pub fn analyze(paths: &[PathBuf], params: &ClassifierParams) -> Result<(SignalMap, Vec<String>)> {
    if paths.is_empty() {
        return Err(Error::Config("analyze requires at least one trace".into()));
    }
    let pooled = pooled_streams(paths)?;
    let mut map = SignalMap::default();
    let mut summary = Vec::new();
    for (id, streams) in pooled {
        // flip statistics over the concatenated payload sequence; the one
        // synthetic pair per file boundary is negligible at trace scale
        let mut combined = IdStream { can_id: id, indices: Vec::new(), frames: Vec::new() };
        for s in &streams {
            combined.frames.extend(s.frames.iter().cloned());
        }
        combined.indices = (0..combined.frames.len()).collect();
        let entry = analyze_stream(&combined, params)?;
        let physical = entry.physical_ranges().count();
        let skipped: usize = entry
            .ranges
            .iter()
            .filter(|r| r.kind != crate::signals::RangeKind::Physical)
            .map(|r| r.length)
            .sum();
        summary.push(format!(
            "0x{id:X}: dlc {} | {} physical signal(s) | {} non-signal bit(s)",
            entry.dlc, physical, skipped
        ));
        map.entries.insert(id, entry);
    }
    Ok((map, summary))
}

/// Sliding windows per file, concatenated, for one ID.
fn windows_for(
    streams: &[IdStream],
    entry: &IdEntry,
    n: usize,
    sliding: bool,
) -> Result<WindowBatch<PipelineScalar>> {
    let mut all = WindowBatch {
        can_id: entry.can_id,
        k: entry.physical_ranges().count(),
        n,
        windows: Vec::new(),
        meta: Vec::new(),
    };
    for s in streams {
        let vectors: Vec<SignalVector<PipelineScalar>> = vectorize(s, entry)?;
        let batch = if sliding {
            sliding_windows(entry.can_id, &vectors, n)
        } else {
            tumbling_windows(entry.can_id, &vectors, n)
        };
        match batch {
            Ok(mut b) => {
                all.windows.append(&mut b.windows);
                all.meta.append(&mut b.meta);
            }
            Err(Error::InsufficientData(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(all)
}

/// Outcome of the training phase.
#[derive(Debug, Clone)]
pub struct TrainPhaseReport {
    pub trained: Vec<(u32, TrainReport)>,
    /// IDs left unmodeled, with the reason.
    pub skipped: Vec<(u32, String)>,
}

/// Train one model per eligible ID and write the bundles to the model
/// directory. IDs without physical signals or with too few windows are
/// reported as skipped.
pub fn phase_train(cfg: &RunConfig) -> Result<TrainPhaseReport> {
    let map = SignalMap::load_file(&cfg.signal_map)?;
    std::fs::create_dir_all(&cfg.model_dir)?;
    let train_pool = pooled_streams(&cfg.datasets.train)?;
    let val_pool = pooled_streams(std::slice::from_ref(&cfg.datasets.validation))?;
    let n = cfg.training.window_len;

    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for (&id, entry) in &map.entries {
        if entry.physical_ranges().count() == 0 {
            skipped.push((id, "no physical signals".to_string()));
            continue;
        }
        let Some(train_streams) = train_pool.get(&id) else {
            skipped.push((id, "absent from training traces".to_string()));
            continue;
        };
        let Some(val_streams) = val_pool.get(&id) else {
            skipped.push((id, "absent from validation trace".to_string()));
            continue;
        };
        let train_batch = windows_for(train_streams, entry, n, true)?;
        if train_batch.windows.len() < cfg.min_train_windows {
            skipped.push((
                id,
                format!(
                    "{} training windows < eligibility floor {}",
                    train_batch.windows.len(),
                    cfg.min_train_windows
                ),
            ));
            continue;
        }
        let val_batch = windows_for(val_streams, entry, n, true)?;
        if val_batch.windows.is_empty() {
            skipped.push((id, "no validation windows".to_string()));
            continue;
        }
        jobs.push((id, entry.clone(), train_batch, val_batch));
    }

    let trained: Result<Vec<(u32, TrainReport)>> = jobs
        .into_par_iter()
        .map(|(id, entry, train_batch, val_batch)| {
            let dims = ModelDims::new(train_batch.k);
            let config = TrainConfig {
                rng_seed: derive_seed(cfg.seed, "train", id, 0),
                ..cfg.training.clone()
            };
            let (params, report) = train(dims, &train_batch, &val_batch, &config)?;
            let bundle = ModelBundle {
                can_id: id,
                dims,
                window_len: n,
                map_digest: entry.digest(),
                threshold: None,
                params,
            };
            save_model_file(&bundle, cfg.model_path(id))?;
            Ok((id, report))
        })
        .collect();
    Ok(TrainPhaseReport { trained: trained?, skipped })
}

fn modeled_ids(cfg: &RunConfig, map: &SignalMap) -> Vec<u32> {
    map.entries.keys().copied().filter(|&id| cfg.model_path(id).exists()).collect()
}

/// Calibrate thresholds on the calibration trace and write them back into
/// the model files. Returns `(id, threshold, score count)` per ID.
pub fn phase_threshold(cfg: &RunConfig) -> Result<Vec<(u32, f64, usize)>> {
    let map = SignalMap::load_file(&cfg.signal_map)?;
    let calib_pool = pooled_streams(std::slice::from_ref(&cfg.datasets.calibration))?;
    let ids = modeled_ids(cfg, &map);
    if ids.is_empty() {
        return Err(Error::Config("no trained models in the model directory".into()));
    }
    ids.into_par_iter()
        .map(|id| {
            let entry = &map.entries[&id];
            let mut bundle: ModelBundle<PipelineScalar> =
                load_model_file(cfg.model_path(id), Some(entry.digest()))?;
            let streams = calib_pool
                .get(&id)
                .ok_or_else(|| Error::Config(format!("ID 0x{id:X} absent from calibration trace")))?;
            let batch = windows_for(streams, entry, bundle.window_len, true)?;
            let record = calibrate_threshold(&bundle, &batch)?;
            bundle.threshold = Some(record.threshold);
            save_model_file(&bundle, cfg.model_path(id))?;
            Ok((id, record.threshold, record.calibration_score_count))
        })
        .collect()
}

/// Detection output for one ID.
#[derive(Debug, Clone)]
pub struct IdDetection {
    pub can_id: u32,
    pub verdicts: Vec<WindowVerdict>,
    pub timing: DetectTiming,
    /// Ground-truth labels of the same windows, from the trace's tamper
    /// flags (all false on unlabeled traces).
    pub labels: Vec<bool>,
}

/// Run detection with tumbling windows over a trace, per modeled ID.
pub fn phase_detect(cfg: &RunConfig, trace: &Trace) -> Result<Vec<IdDetection>> {
    let map = SignalMap::load_file(&cfg.signal_map)?;
    let ids = modeled_ids(cfg, &map);
    if ids.is_empty() {
        return Err(Error::Config("no trained models in the model directory".into()));
    }
    let mut streams = trace.split_by_id();
    let mut jobs = Vec::new();
    for id in ids {
        if let Some(stream) = streams.remove(&id) {
            jobs.push((id, stream));
        }
    }
    jobs.into_par_iter()
        .map(|(id, stream)| {
            let entry = &map.entries[&id];
            let bundle: ModelBundle<PipelineScalar> =
                load_model_file(cfg.model_path(id), Some(entry.digest()))?;
            let batch = windows_for(std::slice::from_ref(&stream), entry, bundle.window_len, false)?;
            let labels = label_windows(&batch);
            let (verdicts, timing) = detect(&bundle, &batch)?;
            Ok(IdDetection { can_id: id, verdicts, timing, labels })
        })
        .collect()
}

/// Detect on a labeled trace and score the verdicts against its labels.
pub fn phase_evaluate(cfg: &RunConfig, trace: &Trace, label: &str) -> Result<EvalReport> {
    let detections = phase_detect(cfg, trace)?;
    let mut rows = Vec::new();
    for d in detections {
        let counts = confusion(&d.verdicts, &d.labels)?;
        rows.push(IdResult { can_id: d.can_id, counts, metrics: metrics(&counts)?, timing: d.timing });
    }
    EvalReport::build(label, rows)
}

/// Verdicts as the structured text interface: one record per window.
pub fn write_verdicts(detections: &[IdDetection], mut w: impl std::io::Write) -> Result<()> {
    writeln!(w, "id,start,start_timestamp,score,anomalous")?;
    for d in detections {
        for v in &d.verdicts {
            writeln!(
                w,
                "0x{:X},{},{},{:e},{}",
                d.can_id, v.start, v.start_timestamp, v.score, v.anomalous
            )?;
        }
    }
    Ok(())
}
