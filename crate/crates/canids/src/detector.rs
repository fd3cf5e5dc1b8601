//! Anomaly scoring, threshold calibration, and window classification.
//!
//! A window's anomaly score is the squared L2 norm of its reconstruction
//! error. The detection threshold is the empirical 99.99th percentile
//! (nearest-rank, no interpolation) of scores on a clean calibration set;
//! windows scoring strictly above it are anomalous.

use crate::error::{Error, Result};
use crate::model::{forward, ModelBundle};
use crate::preprocess::WindowBatch;
use crate::rng::sub_rng;
use crate::scalar::Scalar;
use ndarray::Array2;
use std::time::Instant;

/// The percentile used for calibration, fixed by design.
pub const THRESHOLD_PERCENTILE: f64 = 99.99;

/// Calibration outcome for one ID.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdRecord {
    pub can_id: u32,
    pub threshold: f64,
    pub calibration_score_count: usize,
    pub percentile: f64,
}

/// Verdict for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowVerdict {
    /// Index of the window's first frame within its ID stream.
    pub start: usize,
    pub start_timestamp: f64,
    pub score: f64,
    pub anomalous: bool,
}

/// Wall time spent in inference plus scoring, and the packets covered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectTiming {
    pub seconds: f64,
    pub packets: usize,
}

/// Squared L2 norm of the reconstruction error over all n*k entries.
pub fn anomaly_score<T: Scalar>(reconstruction: &Array2<T>, source: &Array2<T>) -> Result<f64> {
    if reconstruction.dim() != source.dim() {
        return Err(Error::ShapeMismatch(format!(
            "reconstruction {:?} vs source {:?}",
            reconstruction.dim(),
            source.dim()
        )));
    }
    let diff = reconstruction - source;
    Ok(diff.mapv(|d| d * d).sum().to_f64().unwrap_or(f64::NAN))
}

/// Nearest-rank percentile: sorted ascending, 1-based index
/// `ceil(p/100 * m)` clamped to `[1, m]`. Always a member of `scores`.
pub fn nearest_rank(scores: &[f64], percentile: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InsufficientData("percentile of an empty score set".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite score"));
    let m = sorted.len();
    // rank in basis points to keep the index arithmetic exact: the smallest
    // 1-based index strictly above p/100 * m, clamped to [1, m]
    let bp = (percentile * 100.0).round() as u128;
    let rank = ((bp * m as u128) / 10_000) as usize + 1;
    let rank = rank.clamp(1, m);
    Ok(sorted[rank - 1])
}

/// Score every window of a batch with dropout off.
pub fn score_windows<T: Scalar>(
    bundle: &ModelBundle<T>,
    batch: &WindowBatch<T>,
) -> Result<Vec<f64>> {
    if batch.k != bundle.dims.k {
        return Err(Error::KMismatch { model_k: bundle.dims.k, window_k: batch.k });
    }
    let mut rng = sub_rng(0, "no-dropout", bundle.can_id, 0);
    let mut scores = Vec::with_capacity(batch.windows.len());
    for chunk in batch.windows.chunks(256) {
        let (recon, _) = forward(&bundle.params, chunk, false, 0.0, &mut rng)?;
        for (r, w) in recon.iter().zip(chunk) {
            scores.push(anomaly_score(r, w)?);
        }
    }
    Ok(scores)
}

/// Calibrate the detection threshold on clean stride-1 windows.
pub fn calibrate_threshold<T: Scalar>(
    bundle: &ModelBundle<T>,
    calib: &WindowBatch<T>,
) -> Result<ThresholdRecord> {
    if calib.meta.iter().any(|m| m.tampered) {
        return Err(Error::Config("tampered windows in a calibration batch".into()));
    }
    let scores = score_windows(bundle, calib)?;
    let threshold = nearest_rank(&scores, THRESHOLD_PERCENTILE)?;
    Ok(ThresholdRecord {
        can_id: bundle.can_id,
        threshold,
        calibration_score_count: scores.len(),
        percentile: THRESHOLD_PERCENTILE,
    })
}

/// Classify test windows against the bundle's calibrated threshold.
///
/// Timing covers inference and scoring only (no I/O, no vectorization);
/// packets counted are `windows * n`.
pub fn detect<T: Scalar>(
    bundle: &ModelBundle<T>,
    test: &WindowBatch<T>,
) -> Result<(Vec<WindowVerdict>, DetectTiming)> {
    let threshold = bundle
        .threshold
        .ok_or_else(|| Error::Config(format!("ID 0x{:X}: threshold not calibrated", bundle.can_id)))?;
    let started = Instant::now();
    let scores = score_windows(bundle, test)?;
    let seconds = started.elapsed().as_secs_f64();
    let verdicts = scores
        .iter()
        .zip(&test.meta)
        .map(|(&score, meta)| WindowVerdict {
            start: meta.start,
            start_timestamp: meta.start_timestamp,
            score,
            anomalous: score > threshold,
        })
        .collect();
    let timing = DetectTiming { seconds, packets: test.windows.len() * test.n };
    Ok((verdicts, timing))
}
