//! Forward pass with cached intermediates and the matching reverse-mode
//! backward pass.
//!
//! Block structure per layer, pre-norm residual:
//!   x ← x + MultiHeadAttention(LayerNorm1(x))
//!   x ← x + FeedForwardGelu(LayerNorm2(x))
//! followed by a final LayerNorm. No causal mask; sequences are processed
//! unpadded one at a time.

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{EncoderConfig, EncoderParams, SequenceEncoding, LN_EPS};

/// Row-wise layer-norm cache: normalized rows and per-row 1/σ.
struct LnTape<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

struct LayerTape<T> {
    #[cfg_attr(not(test), allow(dead_code))]
    x_in: Array2<T>,
    ln1: LnTape<T>,
    normed1: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    attn_weights: Vec<Array2<T>>,
    ctx: Array2<T>,
    #[cfg_attr(not(test), allow(dead_code))]
    x_mid: Array2<T>,
    ln2: LnTape<T>,
    normed2: Array2<T>,
    ffn_pre: Array2<T>,
    ffn_act: Array2<T>,
}

/// Cached activations of one [`forward`](super::encode_forward) call.
pub struct ForwardTape<'a, T> {
    params: &'a EncoderParams<T>,
    config: &'a EncoderConfig,
    ids: Vec<usize>,
    layers: Vec<LayerTape<T>>,
    final_ln: LnTape<T>,
    output: Array2<T>,
}

fn layer_norm<T: Scalar>(x: &Array2<T>, gain: &Array1<T>, bias: &Array1<T>) -> (Array2<T>, LnTape<T>) {
    let d = x.ncols();
    let dt = T::from_usize(d).unwrap();
    let eps = T::from_f64(LN_EPS).unwrap();
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / dt;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| *v * *v).sum::<T>() / dt;
        let is = (var + eps).sqrt().recip();
        row.mapv_inplace(|v| v * is);
        *inv = is;
    }
    let mut out = xhat.clone();
    for mut row in out.rows_mut() {
        row.zip_mut_with(&gain.view(), |v, g| *v *= *g);
        row.zip_mut_with(&bias.view(), |v, b| *v += *b);
    }
    (out, LnTape { xhat, inv_std })
}

/// dL/dx for `y = xhat·gain + bias`, accumulating gain/bias gradients.
fn layer_norm_backward<T: Scalar>(
    tape: &LnTape<T>,
    gain: &Array1<T>,
    dy: &Array2<T>,
    dgain: &mut Array1<T>,
    dbias: &mut Array1<T>,
) -> Array2<T> {
    let d = dy.ncols();
    let dt = T::from_usize(d).unwrap();
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let dy_row = dy.row(i);
        let xhat_row = tape.xhat.row(i);
        for j in 0..d {
            dgain[j] += dy_row[j] * xhat_row[j];
            dbias[j] += dy_row[j];
        }
        // dxhat = dy ⊙ gain; dx = (dxhat − mean(dxhat) − xhat·mean(dxhat⊙xhat))/σ
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for j in 0..d {
            let dxh = dy_row[j] * gain[j];
            m1 += dxh;
            m2 += dxh * xhat_row[j];
        }
        m1 /= dt;
        m2 /= dt;
        let inv = tape.inv_std[i];
        let mut dx_row = dx.row_mut(i);
        for j in 0..d {
            let dxh = dy_row[j] * gain[j];
            dx_row[j] = (dxh - m1 - xhat_row[j] * m2) * inv;
        }
    }
    dx
}

/// Numerically stable row softmax (max-subtracted).
fn softmax_rows<T: Scalar>(mut scores: Array2<T>) -> Array2<T> {
    for mut row in scores.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    scores
}

/// ds = a ⊙ (da − ⟨da, a⟩), row-wise.
fn softmax_backward_rows<T: Scalar>(a: &Array2<T>, da: &Array2<T>) -> Array2<T> {
    let mut ds = Array2::zeros(a.raw_dim());
    for i in 0..a.nrows() {
        let a_row = a.row(i);
        let da_row = da.row(i);
        let dot = a_row
            .iter()
            .zip(da_row.iter())
            .map(|(x, y)| *x * *y)
            .sum::<T>();
        let mut ds_row = ds.row_mut(i);
        for j in 0..a.ncols() {
            ds_row[j] = a_row[j] * (da_row[j] - dot);
        }
    }
    ds
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // √(2/π)
const GELU_C: f64 = 0.044715;

fn gelu<T: Scalar>(x: T) -> T {
    let k = T::from_f64(GELU_K).unwrap();
    let c = T::from_f64(GELU_C).unwrap();
    let half = T::from_f64(0.5).unwrap();
    let inner = k * (x + c * x * x * x);
    half * x * (T::one() + inner.tanh())
}

fn gelu_prime<T: Scalar>(x: T) -> T {
    let k = T::from_f64(GELU_K).unwrap();
    let c = T::from_f64(GELU_C).unwrap();
    let half = T::from_f64(0.5).unwrap();
    let three = T::from_f64(3.0).unwrap();
    let inner = k * (x + c * x * x * x);
    let th = inner.tanh();
    let sech2 = T::one() - th * th;
    half * (T::one() + th) + half * x * sech2 * k * (T::one() + three * c * x * x)
}

pub(super) fn forward<'a, T: Scalar>(
    params: &'a EncoderParams<T>,
    config: &'a EncoderConfig,
    piece_ids: &[u32],
) -> Result<ForwardTape<'a, T>> {
    config.validate()?;
    let len = piece_ids.len();
    if len == 0 {
        return Err(Error::Shape("cannot encode an empty sequence".into()));
    }
    if len > config.max_seq_len {
        return Err(Error::Shape(format!(
            "sequence length {len} exceeds max_seq_len {}",
            config.max_seq_len
        )));
    }
    let vocab_rows = params.token_embedding.nrows();
    let d = config.d_model;

    let mut x = Array2::zeros((len, d));
    let mut ids = Vec::with_capacity(len);
    for (i, &id) in piece_ids.iter().enumerate() {
        let id = id as usize;
        if id >= vocab_rows {
            return Err(Error::Shape(format!(
                "piece id {id} out of embedding range {vocab_rows}"
            )));
        }
        let row = &params.token_embedding.row(id) + &params.position_embedding.row(i);
        x.row_mut(i).assign(&row);
        ids.push(id);
    }

    let scale = T::from_f64(1.0 / (config.head_dim() as f64).sqrt()).unwrap();
    let mut layers = Vec::with_capacity(config.n_layers);
    for lp in &params.layers {
        let x_in = x.clone();
        let (normed1, ln1) = layer_norm(&x_in, &lp.ln1_gain, &lp.ln1_bias);
        let q = normed1.dot(&lp.wq);
        let k = normed1.dot(&lp.wk);
        let v = normed1.dot(&lp.wv);

        let dh = config.head_dim();
        let mut ctx = Array2::zeros((len, d));
        let mut attn_weights = Vec::with_capacity(config.n_heads);
        for h in 0..config.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let vh = v.slice(cols);
            let scores = qh.dot(&kh.t()).mapv_into(|s| s * scale);
            let aw = softmax_rows(scores);
            ctx.slice_mut(cols).assign(&aw.dot(&vh));
            attn_weights.push(aw);
        }
        let attn_out = ctx.dot(&lp.wo);
        let x_mid = &x_in + &attn_out;

        let (normed2, ln2) = layer_norm(&x_mid, &lp.ln2_gain, &lp.ln2_bias);
        let mut ffn_pre = normed2.dot(&lp.w1);
        for mut row in ffn_pre.rows_mut() {
            row.zip_mut_with(&lp.b1.view(), |v, b| *v += *b);
        }
        let ffn_act = ffn_pre.mapv(gelu);
        let mut ffn_out = ffn_act.dot(&lp.w2);
        for mut row in ffn_out.rows_mut() {
            row.zip_mut_with(&lp.b2.view(), |v, b| *v += *b);
        }
        let x_out = &x_mid + &ffn_out;

        layers.push(LayerTape {
            x_in,
            ln1,
            normed1,
            q,
            k,
            v,
            attn_weights,
            ctx,
            x_mid,
            ln2,
            normed2,
            ffn_pre,
            ffn_act,
        });
        x = x_out;
    }

    let (output, final_ln) = layer_norm(&x, &params.final_ln_gain, &params.final_ln_bias);
    Ok(ForwardTape {
        params,
        config,
        ids,
        layers,
        final_ln,
        output,
    })
}

impl<T: Scalar> ForwardTape<'_, T> {
    pub fn output(&self) -> &Array2<T> {
        &self.output
    }

    pub fn into_encoding(self) -> SequenceEncoding<T> {
        SequenceEncoding::new(self.output)
    }

    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }

    /// Accumulates dL/dθ into `grads` given dL/d(output rows).
    pub fn backward(&self, upstream: &Array2<T>, grads: &mut EncoderParams<T>) -> Result<()> {
        if upstream.dim() != self.output.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                upstream.dim(),
                self.output.dim()
            )));
        }
        let config = self.config;
        let d = config.d_model;
        let dh = config.head_dim();
        let scale = T::from_f64(1.0 / (dh as f64).sqrt()).unwrap();

        let mut dx = layer_norm_backward(
            &self.final_ln,
            &self.params.final_ln_gain,
            upstream,
            &mut grads.final_ln_gain,
            &mut grads.final_ln_bias,
        );

        for (lt, (lp, lg)) in self.layers.iter().rev().zip(
            self.params
                .layers
                .iter()
                .rev()
                .zip(grads.layers.iter_mut().rev()),
        ) {
            // x_out = x_mid + gelu(normed2·W1 + b1)·W2 + b2
            let d_ffn_out = &dx;
            let mut d_x_mid = dx.clone();

            let d_act = d_ffn_out.dot(&lp.w2.t());
            lg.w2 += &lt.ffn_act.t().dot(d_ffn_out);
            lg.b2 += &d_ffn_out.sum_axis(Axis(0));

            let mut d_pre = d_act;
            d_pre.zip_mut_with(&lt.ffn_pre, |g, &u| *g *= gelu_prime(u));
            let d_normed2 = d_pre.dot(&lp.w1.t());
            lg.w1 += &lt.normed2.t().dot(&d_pre);
            lg.b1 += &d_pre.sum_axis(Axis(0));

            d_x_mid += &layer_norm_backward(
                &lt.ln2,
                &lp.ln2_gain,
                &d_normed2,
                &mut lg.ln2_gain,
                &mut lg.ln2_bias,
            );

            // x_mid = x_in + (ctx·Wo)
            let d_attn_out = &d_x_mid;
            let mut d_x_in = d_x_mid.clone();

            let d_ctx = d_attn_out.dot(&lp.wo.t());
            lg.wo += &lt.ctx.t().dot(d_attn_out);

            let len = dx.nrows();
            let mut d_q = Array2::zeros((len, d));
            let mut d_k = Array2::zeros((len, d));
            let mut d_v = Array2::zeros((len, d));
            for h in 0..config.n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let aw = &lt.attn_weights[h];
                let d_ctx_h = d_ctx.slice(cols);
                let vh = lt.v.slice(cols);
                let kh = lt.k.slice(cols);
                let qh = lt.q.slice(cols);

                let d_aw = d_ctx_h.dot(&vh.t());
                d_v.slice_mut(cols).assign(&aw.t().dot(&d_ctx_h));
                let d_scores = softmax_backward_rows(aw, &d_aw).mapv_into(|v| v * scale);
                d_q.slice_mut(cols).assign(&d_scores.dot(&kh));
                d_k.slice_mut(cols).assign(&d_scores.t().dot(&qh));
            }

            let d_normed1 =
                d_q.dot(&lp.wq.t()) + d_k.dot(&lp.wk.t()) + d_v.dot(&lp.wv.t());
            lg.wq += &lt.normed1.t().dot(&d_q);
            lg.wk += &lt.normed1.t().dot(&d_k);
            lg.wv += &lt.normed1.t().dot(&d_v);

            d_x_in += &layer_norm_backward(
                &lt.ln1,
                &lp.ln1_gain,
                &d_normed1,
                &mut lg.ln1_gain,
                &mut lg.ln1_bias,
            );

            dx = d_x_in;
        }

        for (i, &id) in self.ids.iter().enumerate() {
            let mut emb_row = grads.token_embedding.row_mut(id);
            emb_row += &dx.row(i);
            let mut pos_row = grads.position_embedding.row_mut(i);
            pos_row += &dx.row(i);
        }
        Ok(())
    }
}
