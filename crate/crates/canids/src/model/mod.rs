//! Per-ID LSTM autoencoder: parameters, forward pass, backpropagation
//! through time, Adam optimization, the training loop, and serialization.
//!
//! Architecture per window of `n` frames with `k` signals each:
//! dense k -> 128 (ELU) -> 20% inverted dropout -> LSTM 64 -> LSTM 64;
//! the encoder hidden sequence is time-reversed and fed to the decoder:
//! LSTM 64 (state initialized from the encoder's last layer) -> LSTM 64
//! -> dense 64 -> 128 (ELU) -> dense 128 -> k (sigmoid). The loss target
//! is the reversed input sequence; the reconstruction is returned in
//! source order. The reconstruction is never fed back into the decoder.

mod backward;
mod forward;
mod io;
mod train;

pub use backward::backward;
pub use forward::{forward, loss, Cache};
pub use io::{load_model, load_model_file, save_model, save_model_file, ModelBundle};
pub use train::{adam_step, train, AdamState, EarlyStopping, TrainConfig, TrainReport};

use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Layer widths. The defaults are the production architecture; tests use
/// smaller widths to keep finite-difference checks fast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Signals per frame (from the ID's signal map).
    pub k: usize,
    /// Dense layer width.
    pub dense: usize,
    /// LSTM units per layer.
    pub hidden: usize,
}

impl ModelDims {
    pub fn new(k: usize) -> Self {
        ModelDims { k, dense: 128, hidden: 64 }
    }

    pub fn with_widths(k: usize, dense: usize, hidden: usize) -> Self {
        ModelDims { k, dense, hidden }
    }
}

/// Affine map `y = W x + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T: Scalar> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

/// LSTM layer with stacked gate kernels in order (input, forget, candidate,
/// output): `wx: [4H, in]`, `wh: [4H, H]`, `b: [4H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<T: Scalar> {
    pub wx: Array2<T>,
    pub wh: Array2<T>,
    pub b: Array1<T>,
}

/// All trainable parameters of one autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    pub dims: ModelDims,
    pub enc_dense: Dense<T>,
    pub enc_lstm1: Lstm<T>,
    pub enc_lstm2: Lstm<T>,
    pub dec_lstm1: Lstm<T>,
    pub dec_lstm2: Lstm<T>,
    pub dec_dense: Dense<T>,
    pub out_dense: Dense<T>,
}

fn glorot<T: Scalar>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| c::<T>(rng.gen_range(-limit..limit)))
}

/// Square orthogonal matrix via modified Gram-Schmidt on a random normal
/// matrix (dimensions here are small enough that this is exact and cheap).
fn orthogonal(h: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut m: Array2<f64> = Array2::from_shape_fn((h, h), |_| StandardNormal.sample(rng));
    for i in 0..h {
        for j in 0..i {
            let prev = m.row(j).to_owned();
            let dot = m.row(i).dot(&prev);
            let mut row = m.row_mut(i);
            row.scaled_add(-dot, &prev);
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        if norm < 1e-12 {
            // vanishing chance with normal draws; fall back to a basis vector
            m.row_mut(i).fill(0.0);
            m[[i, i]] = 1.0;
        } else {
            m.row_mut(i).mapv_inplace(|v| v / norm);
        }
    }
    m
}

fn lstm_init<T: Scalar>(input: usize, h: usize, rng: &mut ChaCha8Rng) -> Lstm<T> {
    let wx = glorot::<T>(4 * h, input, rng);
    let mut wh = Array2::<T>::zeros((4 * h, h));
    for gate in 0..4 {
        let q = orthogonal(h, rng);
        for r in 0..h {
            for col in 0..h {
                wh[[gate * h + r, col]] = c::<T>(q[[r, col]]);
            }
        }
    }
    let mut b = Array1::<T>::zeros(4 * h);
    // forget-gate bias 1 for trainability; other gate biases zero
    for i in h..2 * h {
        b[i] = T::one();
    }
    Lstm { wx, wh, b }
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded initialization: Glorot-uniform input kernels, orthogonal
    /// recurrent kernels, zero biases except forget-gate bias 1.
    pub fn init(dims: ModelDims, rng: &mut ChaCha8Rng) -> Self {
        let (k, d, h) = (dims.k, dims.dense, dims.hidden);
        ModelParams {
            dims,
            enc_dense: Dense { w: glorot(d, k, rng), b: Array1::zeros(d) },
            enc_lstm1: lstm_init(d, h, rng),
            enc_lstm2: lstm_init(h, h, rng),
            dec_lstm1: lstm_init(h, h, rng),
            dec_lstm2: lstm_init(h, h, rng),
            dec_dense: Dense { w: glorot(d, h, rng), b: Array1::zeros(d) },
            out_dense: Dense { w: glorot(k, d, rng), b: Array1::zeros(k) },
        }
    }

    /// All-zero parameters with the same shapes (gradient accumulators).
    pub fn zeros(dims: ModelDims) -> Self {
        let (k, d, h) = (dims.k, dims.dense, dims.hidden);
        let dense = |o, i| Dense { w: Array2::zeros((o, i)), b: Array1::zeros(o) };
        let lstm = |i| Lstm {
            wx: Array2::zeros((4 * h, i)),
            wh: Array2::zeros((4 * h, h)),
            b: Array1::zeros(4 * h),
        };
        ModelParams {
            dims,
            enc_dense: dense(d, k),
            enc_lstm1: lstm(d),
            enc_lstm2: lstm(h),
            dec_lstm1: lstm(h),
            dec_lstm2: lstm(h),
            dec_dense: dense(d, h),
            out_dense: dense(k, d),
        }
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.tensors()
            .iter()
            .map(|t| match t {
                FlatView::M(m) => m.len(),
                FlatView::V(v) => v.len(),
            })
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tensors(&self) -> Vec<FlatView<'_, T>> {
        vec![
            FlatView::M(&self.enc_dense.w),
            FlatView::V(&self.enc_dense.b),
            FlatView::M(&self.enc_lstm1.wx),
            FlatView::M(&self.enc_lstm1.wh),
            FlatView::V(&self.enc_lstm1.b),
            FlatView::M(&self.enc_lstm2.wx),
            FlatView::M(&self.enc_lstm2.wh),
            FlatView::V(&self.enc_lstm2.b),
            FlatView::M(&self.dec_lstm1.wx),
            FlatView::M(&self.dec_lstm1.wh),
            FlatView::V(&self.dec_lstm1.b),
            FlatView::M(&self.dec_lstm2.wx),
            FlatView::M(&self.dec_lstm2.wh),
            FlatView::V(&self.dec_lstm2.b),
            FlatView::M(&self.dec_dense.w),
            FlatView::V(&self.dec_dense.b),
            FlatView::M(&self.out_dense.w),
            FlatView::V(&self.out_dense.b),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<FlatViewMut<'_, T>> {
        vec![
            FlatViewMut::M(&mut self.enc_dense.w),
            FlatViewMut::V(&mut self.enc_dense.b),
            FlatViewMut::M(&mut self.enc_lstm1.wx),
            FlatViewMut::M(&mut self.enc_lstm1.wh),
            FlatViewMut::V(&mut self.enc_lstm1.b),
            FlatViewMut::M(&mut self.enc_lstm2.wx),
            FlatViewMut::M(&mut self.enc_lstm2.wh),
            FlatViewMut::V(&mut self.enc_lstm2.b),
            FlatViewMut::M(&mut self.dec_lstm1.wx),
            FlatViewMut::M(&mut self.dec_lstm1.wh),
            FlatViewMut::V(&mut self.dec_lstm1.b),
            FlatViewMut::M(&mut self.dec_lstm2.wx),
            FlatViewMut::M(&mut self.dec_lstm2.wh),
            FlatViewMut::V(&mut self.dec_lstm2.b),
            FlatViewMut::M(&mut self.dec_dense.w),
            FlatViewMut::V(&mut self.dec_dense.b),
            FlatViewMut::M(&mut self.out_dense.w),
            FlatViewMut::V(&mut self.out_dense.b),
        ]
    }

    /// Copy every parameter into one flat vector in a stable order.
    pub fn to_flat(&self) -> Array1<T> {
        let mut out = Vec::with_capacity(self.len());
        for t in self.tensors() {
            match t {
                FlatView::M(m) => out.extend(m.iter().copied()),
                FlatView::V(v) => out.extend(v.iter().copied()),
            }
        }
        Array1::from_vec(out)
    }

    /// Overwrite every parameter from a flat vector written by [`to_flat`].
    pub fn set_from_flat(&mut self, flat: &Array1<T>) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "flat vector length {} != parameter count {}",
                flat.len(),
                self.len()
            )));
        }
        let mut idx = 0;
        for t in self.tensors_mut() {
            match t {
                FlatViewMut::M(m) => {
                    for v in m.iter_mut() {
                        *v = flat[idx];
                        idx += 1;
                    }
                }
                FlatViewMut::V(v) => {
                    for x in v.iter_mut() {
                        *x = flat[idx];
                        idx += 1;
                    }
                }
            }
        }
        Ok(())
    }

    /// Error if any parameter is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        for t in self.tensors() {
            let bad = match t {
                FlatView::M(m) => m.iter().any(|v| !v.is_finite()),
                FlatView::V(v) => v.iter().any(|x| !x.is_finite()),
            };
            if bad {
                return Err(Error::NumericFailure { layer: "parameters".into(), step: 0 });
            }
        }
        Ok(())
    }
}

enum FlatView<'a, T: Scalar> {
    M(&'a Array2<T>),
    V(&'a Array1<T>),
}

enum FlatViewMut<'a, T: Scalar> {
    M(&'a mut Array2<T>),
    V(&'a mut Array1<T>),
}
