//! Analytic gradients of the batch loss via backpropagation through time.
//!
//! Mirrors the forward pass exactly: gradients flow through the sigmoid
//! output, both decoder LSTMs, the sequence reversal, the encoder-to-decoder
//! state handoff, both encoder LSTMs, the dropout masks, and the ELU dense
//! layers. Gate order everywhere is (input, forget, candidate, output).

use super::forward::{elu_grad, Cache, LstmCache};
use super::{Lstm, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::{c, Scalar};
use ndarray::{s, Array2, Axis};

/// Per-step result of one LSTM layer's backward sweep.
struct LstmBack<T: Scalar> {
    grads: Lstm<T>,
    /// Gradient w.r.t. each step's input.
    dx: Vec<Array2<T>>,
    dh0: Array2<T>,
    dc0: Array2<T>,
}

fn lstm_backward<T: Scalar>(
    layer: &Lstm<T>,
    cache: &LstmCache<T>,
    inputs: &[Array2<T>],
    dh_ext: &[Array2<T>],
    dh_last_extra: Option<(&Array2<T>, &Array2<T>)>,
) -> Result<LstmBack<T>> {
    let n = inputs.len();
    let (batch, hsz) = cache.h[0].dim();
    let mut grads: Lstm<T> = Lstm {
        wx: Array2::zeros(layer.wx.dim()),
        wh: Array2::zeros(layer.wh.dim()),
        b: ndarray::Array1::zeros(layer.b.dim()),
    };
    let mut dh_carry = Array2::<T>::zeros((batch, hsz));
    let mut dc_carry = Array2::<T>::zeros((batch, hsz));
    if let Some((dh, dc)) = dh_last_extra {
        dh_carry += dh;
        dc_carry += dc;
    }
    let mut dx = vec![Array2::<T>::zeros((0, 0)); n];
    for t in (0..n).rev() {
        let dh = &dh_ext[t] + &dh_carry;
        let (i, f, g, o) = (&cache.i[t], &cache.f[t], &cache.g[t], &cache.o[t]);
        let c_t = &cache.c[t];
        let c_prev = if t == 0 { &cache.c0 } else { &cache.c[t - 1] };
        let h_prev = if t == 0 { &cache.h0 } else { &cache.h[t - 1] };
        let tc = c_t.mapv(|v| v.tanh());
        let d_o = &dh * &tc;
        let mut dc = dc_carry;
        dc = dc + &dh * o * tc.mapv(|v| T::one() - v * v);
        let d_i = &dc * g;
        let d_g = &dc * i;
        let d_f = &dc * c_prev;
        dc_carry = &dc * f;
        // through the gate nonlinearities into the pre-activations
        let one = T::one();
        let dz_i = d_i * &i.mapv(|v| v * (one - v));
        let dz_f = d_f * &f.mapv(|v| v * (one - v));
        let dz_g = d_g * &g.mapv(|v| one - v * v);
        let dz_o = d_o * &o.mapv(|v| v * (one - v));
        let mut dz = Array2::<T>::zeros((batch, 4 * hsz));
        dz.slice_mut(s![.., 0..hsz]).assign(&dz_i);
        dz.slice_mut(s![.., hsz..2 * hsz]).assign(&dz_f);
        dz.slice_mut(s![.., 2 * hsz..3 * hsz]).assign(&dz_g);
        dz.slice_mut(s![.., 3 * hsz..4 * hsz]).assign(&dz_o);
        grads.wx = grads.wx + dz.t().dot(&inputs[t]);
        grads.wh = grads.wh + dz.t().dot(h_prev);
        grads.b = grads.b + dz.sum_axis(Axis(0));
        dx[t] = dz.dot(&layer.wx);
        dh_carry = dz.dot(&layer.wh);
    }
    if !grads.wx.sum().is_finite() || !grads.wh.sum().is_finite() {
        return Err(Error::NumericFailure { layer: "lstm backward".into(), step: 0 });
    }
    Ok(LstmBack { grads, dx, dh0: dh_carry, dc0: dc_carry })
}

/// Gradients of the cache's batch loss w.r.t. every parameter.
pub fn backward<T: Scalar>(params: &ModelParams<T>, cache: &Cache<T>) -> Result<ModelParams<T>> {
    let n = cache.x.len();
    let k = params.dims.k;
    let batch = cache.batch;
    let scale = c::<T>(2.0) / c::<T>((n * k * batch) as f64);
    let mut grads = ModelParams::<T>::zeros(params.dims);

    // output layers, reversed time order; target at reversed step t is the
    // source step n-1-t
    let mut dh_dec2 = Vec::with_capacity(n);
    for t in 0..n {
        let y = &cache.y[t];
        let dy = (y - &cache.x[n - 1 - t]).mapv(|v| v) * scale;
        let d_outpre = dy * &y.mapv(|v| v * (T::one() - v));
        grads.out_dense.w = &grads.out_dense.w + &d_outpre.t().dot(&cache.dec_post[t]);
        grads.out_dense.b = &grads.out_dense.b + &d_outpre.sum_axis(Axis(0));
        let d_decpost = d_outpre.dot(&params.out_dense.w);
        let d_decpre = d_decpost * &cache.dec_pre[t].mapv(elu_grad);
        grads.dec_dense.w = &grads.dec_dense.w + &d_decpre.t().dot(&cache.dec_lstm2.h[t]);
        grads.dec_dense.b = &grads.dec_dense.b + &d_decpre.sum_axis(Axis(0));
        dh_dec2.push(d_decpre.dot(&params.dec_dense.w));
    }

    // decoder LSTMs (inputs of dec_lstm1 are the reversed encoder hiddens)
    let back2 = lstm_backward(&params.dec_lstm2, &cache.dec_lstm2, &cache.dec_lstm1.h, &dh_dec2, None)?;
    grads.dec_lstm2 = back2.grads;
    let rev_inputs: Vec<Array2<T>> = cache.enc_lstm2.h.iter().rev().cloned().collect();
    let back1 = lstm_backward(&params.dec_lstm1, &cache.dec_lstm1, &rev_inputs, &back2.dx, None)?;
    grads.dec_lstm1 = back1.grads;

    // un-reverse the decoder input gradients onto the encoder hiddens; the
    // state handoff adds the decoder's initial-state gradients at the
    // encoder's last step
    let mut dh_enc2: Vec<Array2<T>> = (0..n).map(|t| back1.dx[n - 1 - t].clone()).collect();
    dh_enc2[n - 1] = &dh_enc2[n - 1] + &back1.dh0;
    let zeros = Array2::<T>::zeros(back1.dc0.dim());
    let backe2 = lstm_backward(
        &params.enc_lstm2,
        &cache.enc_lstm2,
        &cache.enc_lstm1.h,
        &dh_enc2,
        Some((&zeros, &back1.dc0)),
    )?;
    grads.enc_lstm2 = backe2.grads;
    let backe1 =
        lstm_backward(&params.enc_lstm1, &cache.enc_lstm1, &cache.enc_post, &backe2.dx, None)?;
    grads.enc_lstm1 = backe1.grads;

    // encoder dense through dropout and ELU
    for t in 0..n {
        let d_post = &backe1.dx[t] * &cache.mask[t];
        let d_pre = d_post * &cache.enc_pre[t].mapv(elu_grad);
        grads.enc_dense.w = &grads.enc_dense.w + &d_pre.t().dot(&cache.x[t]);
        grads.enc_dense.b = &grads.enc_dense.b + &d_pre.sum_axis(Axis(0));
    }

    grads.check_finite().map_err(|_| Error::NumericFailure {
        layer: "gradients".into(),
        step: 0,
    })?;
    Ok(grads)
}
