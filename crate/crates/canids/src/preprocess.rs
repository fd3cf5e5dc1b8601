//! Signal extraction and windowing: turns an ID stream into min-max
//! rescaled signal vectors and fixed-length packet windows.
//!
//! Each frame of an ID maps to one vector of its physical signals, each
//! rescaled to [0, 1] against the bounds recorded in the signal map and
//! clamped if a test-time value falls outside them. Windows are `n`
//! consecutive frames of one ID: stride-1 sliding windows for training and
//! scoring, non-overlapping tumbling windows as an alternative evaluation
//! granularity.

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use crate::signals::{extract_signal, IdEntry};
use crate::trace::IdStream;
use ndarray::Array2;

/// Default window length in packets.
pub const DEFAULT_WINDOW_LEN: usize = 40;

/// Minimum number of training windows for an ID to enter the model set.
pub const MIN_TRAIN_WINDOWS: usize = 1000;

/// One frame's physical signals, rescaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SignalVector<T: Scalar> {
    pub values: Vec<T>,
    pub timestamp: f64,
    pub tampered: bool,
}

/// Metadata for one window of `n` consecutive frames of a single ID.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowMeta {
    /// Index of the window's first frame within the ID stream.
    pub start: usize,
    /// Timestamp of the window's first frame.
    pub start_timestamp: f64,
    /// True if any frame in the window is tampered.
    pub tampered: bool,
}

/// A batch of windows for one ID: `windows[w]` is an `n x k` array whose
/// rows are consecutive rescaled signal vectors.
#[derive(Debug, Clone)]
pub struct WindowBatch<T: Scalar> {
    pub can_id: u32,
    /// Signals per frame.
    pub k: usize,
    /// Frames per window.
    pub n: usize,
    pub windows: Vec<Array2<T>>,
    pub meta: Vec<WindowMeta>,
}

/// Extract and rescale the physical signals of every frame in a stream.
///
/// Rescaling is (v - min) / (max - min) against the map's observed bounds,
/// clamped to [0, 1]. A degenerate range (min == max) maps to 0.
pub fn vectorize<T: Scalar>(stream: &IdStream, entry: &IdEntry) -> Result<Vec<SignalVector<T>>> {
    let ranges: Vec<_> = entry.physical_ranges().copied().collect();
    if ranges.is_empty() {
        return Err(Error::IneligibleId(stream.can_id));
    }
    let mut out = Vec::with_capacity(stream.frames.len());
    for frame in stream.frames.iter() {
        let mut values = Vec::with_capacity(ranges.len());
        for r in &ranges {
            let v = extract_signal(frame, r)? as f64;
            let span = r.max_observed as f64 - r.min_observed as f64;
            let scaled = if span == 0.0 {
                0.0
            } else {
                ((v - r.min_observed as f64) / span).clamp(0.0, 1.0)
            };
            values.push(c::<T>(scaled));
        }
        out.push(SignalVector { values, timestamp: frame.timestamp, tampered: frame.tampered });
    }
    Ok(out)
}

fn build_windows<T: Scalar>(
    can_id: u32,
    vectors: &[SignalVector<T>],
    n: usize,
    stride: usize,
) -> Result<WindowBatch<T>> {
    if n == 0 || stride == 0 {
        return Err(Error::Config("window length and stride must be positive".into()));
    }
    let k = match vectors.first() {
        Some(v) => v.values.len(),
        None => return Err(Error::InsufficientData("no signal vectors".into())),
    };
    if vectors.len() < n {
        return Err(Error::InsufficientData(format!(
            "{} vectors for window length {n}",
            vectors.len()
        )));
    }
    let mut windows = Vec::new();
    let mut meta = Vec::new();
    let mut start = 0;
    while start + n <= vectors.len() {
        let mut arr = Array2::<T>::zeros((n, k));
        let mut tampered = false;
        for (row, v) in vectors[start..start + n].iter().enumerate() {
            if v.values.len() != k {
                return Err(Error::ShapeMismatch(format!(
                    "vector length {} != {k}",
                    v.values.len()
                )));
            }
            for (col, &x) in v.values.iter().enumerate() {
                arr[[row, col]] = x;
            }
            tampered |= v.tampered;
        }
        windows.push(arr);
        meta.push(WindowMeta {
            start,
            start_timestamp: vectors[start].timestamp,
            tampered,
        });
        start += stride;
    }
    Ok(WindowBatch { can_id, k, n, windows, meta })
}

/// Stride-1 overlapping windows: `len - n + 1` windows from `len` vectors.
pub fn sliding_windows<T: Scalar>(
    can_id: u32,
    vectors: &[SignalVector<T>],
    n: usize,
) -> Result<WindowBatch<T>> {
    build_windows(can_id, vectors, n, 1)
}

/// Non-overlapping windows: `floor(len / n)` windows; a trailing partial
/// window is discarded.
pub fn tumbling_windows<T: Scalar>(
    can_id: u32,
    vectors: &[SignalVector<T>],
    n: usize,
) -> Result<WindowBatch<T>> {
    build_windows(can_id, vectors, n, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{BitRange, RangeKind};
    use crate::trace::{CanFrame, Trace};

    fn entry_one_signal() -> IdEntry {
        let mut r = BitRange::new(0, 8, RangeKind::Physical);
        r.min_observed = 10;
        r.max_observed = 210;
        IdEntry { can_id: 1, dlc: 1, ranges: vec![r] }
    }

    fn stream_of(payload_bytes: &[u8]) -> Trace {
        let frames = payload_bytes
            .iter()
            .enumerate()
            .map(|(i, &b)| CanFrame::new(i as f64 * 0.01, 1, vec![b], false).unwrap())
            .collect();
        Trace::new(frames, "test").unwrap()
    }

    #[test]
    fn vectorize_rescales_and_clamps() {
        let trace = stream_of(&[10, 110, 210, 0, 255]);
        let stream = trace.split_by_id().remove(&1).unwrap();
        let vecs = vectorize::<f64>(&stream, &entry_one_signal()).unwrap();
        let got: Vec<f64> = vecs.iter().map(|v| v.values[0]).collect();
        assert_eq!(got, vec![0.0, 0.5, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn degenerate_bounds_map_to_zero() {
        let mut entry = entry_one_signal();
        entry.ranges[0].min_observed = 50;
        entry.ranges[0].max_observed = 50;
        let trace = stream_of(&[0, 50, 200]);
        let stream = trace.split_by_id().remove(&1).unwrap();
        let vecs = vectorize::<f32>(&stream, &entry).unwrap();
        assert!(vecs.iter().all(|v| v.values[0] == 0.0));
    }

    #[test]
    fn sliding_window_count_and_overlap() {
        let trace = stream_of(&(0..50u8).collect::<Vec<_>>());
        let stream = trace.split_by_id().remove(&1).unwrap();
        let vecs = vectorize::<f64>(&stream, &entry_one_signal()).unwrap();
        let batch = sliding_windows(1, &vecs, 40).unwrap();
        assert_eq!(batch.windows.len(), 11);
        assert_eq!(batch.windows[0].dim(), (40, 1));
        // consecutive windows share 39 rows
        for w in 0..batch.windows.len() - 1 {
            for row in 0..39 {
                assert_eq!(batch.windows[w][[row + 1, 0]], batch.windows[w + 1][[row, 0]]);
            }
        }
        assert_eq!(batch.meta[3].start, 3);
    }

    #[test]
    fn tumbling_windows_do_not_overlap() {
        let trace = stream_of(&(0..95u8).collect::<Vec<_>>());
        let stream = trace.split_by_id().remove(&1).unwrap();
        let vecs = vectorize::<f64>(&stream, &entry_one_signal()).unwrap();
        let batch = tumbling_windows(1, &vecs, 40).unwrap();
        assert_eq!(batch.windows.len(), 2);
        assert_eq!(batch.meta[1].start, 40);
    }

    #[test]
    fn window_tampered_flag_is_or_of_frames() {
        let trace = stream_of(&(0..45u8).collect::<Vec<_>>());
        let stream = trace.split_by_id().remove(&1).unwrap();
        let mut vecs = vectorize::<f64>(&stream, &entry_one_signal()).unwrap();
        vecs[42].tampered = true;
        let batch = sliding_windows(1, &vecs, 40).unwrap();
        // windows 3..=5 contain index 42
        let flags: Vec<bool> = batch.meta.iter().map(|m| m.tampered).collect();
        assert_eq!(flags, vec![false, false, false, true, true, true]);
    }

    #[test]
    fn too_few_frames_is_an_error() {
        let trace = stream_of(&[1, 2, 3]);
        let stream = trace.split_by_id().remove(&1).unwrap();
        let vecs = vectorize::<f64>(&stream, &entry_one_signal()).unwrap();
        assert!(matches!(sliding_windows(1, &vecs, 40), Err(Error::InsufficientData(_))));
    }
}
