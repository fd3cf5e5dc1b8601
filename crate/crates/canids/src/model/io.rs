//! Model serialization: a versioned little-endian binary container holding
//! one ID's trained parameters, its signal-map digest, and the calibrated
//! threshold when present. Round-trips are bit-identical.

use super::{ModelDims, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use ndarray::Array1;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"CANIDSAE";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One trained per-ID model with everything needed to run detection.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T: Scalar> {
    pub can_id: u32,
    pub dims: ModelDims,
    /// Frames per window the model was trained on.
    pub window_len: usize,
    /// SHA-256 of the ID's signal-map entry; detection refuses to run
    /// against a map with a different layout.
    pub map_digest: [u8; 32],
    /// Anomaly threshold from calibration, if already set.
    pub threshold: Option<f64>,
    pub params: ModelParams<T>,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Serialize a bundle. Parameters are stored as little-endian f64 in the
/// flat-vector order regardless of the in-memory scalar type.
pub fn save_model<T: Scalar>(bundle: &ModelBundle<T>, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, MODEL_FORMAT_VERSION)?;
    write_u32(w, bundle.can_id)?;
    write_u32(w, bundle.dims.k as u32)?;
    write_u32(w, bundle.dims.dense as u32)?;
    write_u32(w, bundle.dims.hidden as u32)?;
    write_u32(w, bundle.window_len as u32)?;
    w.write_all(&bundle.map_digest)?;
    match bundle.threshold {
        Some(t) => {
            w.write_all(&[1u8])?;
            w.write_all(&t.to_le_bytes())?;
        }
        None => w.write_all(&[0u8; 9])?,
    }
    let flat = bundle.params.to_flat();
    w.write_all(&(flat.len() as u64).to_le_bytes())?;
    for v in flat.iter() {
        w.write_all(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes())?;
    }
    Ok(())
}

/// Deserialize a bundle. With `expected_digest` set, a stored digest that
/// differs is rejected before any parameters are used.
pub fn load_model<T: Scalar>(
    r: &mut impl Read,
    expected_digest: Option<[u8; 32]>,
) -> Result<ModelBundle<T>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Config("not a model file (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch { expected: MODEL_FORMAT_VERSION, found: version });
    }
    let can_id = read_u32(r)?;
    let k = read_u32(r)? as usize;
    let dense = read_u32(r)? as usize;
    let hidden = read_u32(r)? as usize;
    let window_len = read_u32(r)? as usize;
    let mut map_digest = [0u8; 32];
    r.read_exact(&mut map_digest)?;
    if let Some(expect) = expected_digest {
        if expect != map_digest {
            return Err(Error::DigestMismatch(can_id));
        }
    }
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let threshold_raw = read_f64(r)?;
    let threshold = if flag[0] == 1 { Some(threshold_raw) } else { None };
    let dims = ModelDims::with_widths(k, dense, hidden);
    let mut params = ModelParams::<T>::zeros(dims);
    let count = read_u64(r)? as usize;
    if count != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "model file holds {count} parameters, dims imply {}",
            params.len()
        )));
    }
    let mut flat = Array1::<T>::zeros(count);
    for idx in 0..count {
        flat[idx] = c::<T>(read_f64(r)?);
    }
    params.set_from_flat(&flat)?;
    Ok(ModelBundle { can_id, dims, window_len, map_digest, threshold, params })
}

pub fn save_model_file<T: Scalar>(bundle: &ModelBundle<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    save_model(bundle, &mut f)
}

pub fn load_model_file<T: Scalar>(
    path: impl AsRef<Path>,
    expected_digest: Option<[u8; 32]>,
) -> Result<ModelBundle<T>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    load_model(&mut f, expected_digest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::forward;
    use crate::rng::sub_rng;
    use ndarray::Array2;
    use rand::Rng;

    fn sample_bundle() -> ModelBundle<f64> {
        let dims = ModelDims::with_widths(3, 8, 4);
        let params = ModelParams::init(dims, &mut sub_rng(1, "io", 0, 0));
        ModelBundle {
            can_id: 0x2A0,
            dims,
            window_len: 5,
            map_digest: [7u8; 32],
            threshold: Some(0.125),
            params,
        }
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let bundle = sample_bundle();
        let mut buf = Vec::new();
        save_model(&bundle, &mut buf).unwrap();
        let loaded: ModelBundle<f64> = load_model(&mut buf.as_slice(), Some([7u8; 32])).unwrap();
        assert_eq!(bundle, loaded);
        // identical forward behaviour
        let mut wrng = sub_rng(2, "w", 0, 0);
        let w = vec![Array2::from_shape_fn((5, 3), |_| wrng.gen_range(0.0..1.0))];
        let (a, _) = forward(&bundle.params, &w, false, 0.0, &mut sub_rng(0, "d", 0, 0)).unwrap();
        let (b, _) = forward(&loaded.params, &w, false, 0.0, &mut sub_rng(0, "d", 0, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_digest_is_rejected() {
        let bundle = sample_bundle();
        let mut buf = Vec::new();
        save_model(&bundle, &mut buf).unwrap();
        let err = load_model::<f64>(&mut buf.as_slice(), Some([8u8; 32])).unwrap_err();
        assert!(matches!(err, Error::DigestMismatch(0x2A0)));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let bundle = sample_bundle();
        let mut buf = Vec::new();
        save_model(&bundle, &mut buf).unwrap();
        for cut in [4, 20, 60, buf.len() - 3] {
            let mut slice: &[u8] = &buf[..cut];
            assert!(load_model::<f64>(&mut slice, None).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let bundle = sample_bundle();
        let mut buf = Vec::new();
        save_model(&bundle, &mut buf).unwrap();
        buf[8] = 99;
        let err = load_model::<f64>(&mut buf.as_slice(), None).unwrap_err();
        assert!(matches!(err, Error::VersionMismatch { expected: 1, found: 99 }));
    }

    #[test]
    fn missing_threshold_roundtrips_as_none() {
        let mut bundle = sample_bundle();
        bundle.threshold = None;
        let mut buf = Vec::new();
        save_model(&bundle, &mut buf).unwrap();
        let loaded: ModelBundle<f64> = load_model(&mut buf.as_slice(), None).unwrap();
        assert_eq!(loaded.threshold, None);
    }

    #[test]
    fn f32_bundle_roundtrips_exactly() {
        let dims = ModelDims::with_widths(2, 6, 3);
        let params = ModelParams::<f32>::init(dims, &mut sub_rng(3, "io32", 0, 0));
        let bundle = ModelBundle {
            can_id: 1,
            dims,
            window_len: 40,
            map_digest: [0u8; 32],
            threshold: None,
            params,
        };
        let mut buf = Vec::new();
        save_model(&bundle, &mut buf).unwrap();
        let loaded: ModelBundle<f32> = load_model(&mut buf.as_slice(), None).unwrap();
        assert_eq!(bundle, loaded);
    }
}
