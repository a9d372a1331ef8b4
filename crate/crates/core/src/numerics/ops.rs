//! Forward and backward kernels for the CRNN layer set.
//!
//! Spatial tensors are channel-last, `[T, F, C]` or batched `[B, T, F, C]`;
//! sequences are `[T, D]` or `[B, T, D]`.

use super::scalar::{gemm, Mat};
use super::{NumericsError, Scalar, Tensor};
use crate::parallel;

type Result<T> = std::result::Result<T, NumericsError>;

/// `(batch, frames, bins, channels)` of a rank-3 or rank-4 spatial tensor.
fn spatial_dims<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [t, f, c] => Ok((1, t, f, c)),
        [b, t, f, c] => Ok((b, t, f, c)),
        ref s => Err(NumericsError::shape(op, format!("expected [T,F,C] or [B,T,F,C], got {s:?}"))),
    }
}

fn with_channels(shape: &[usize], c: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    *s.last_mut().unwrap() = c;
    s
}

fn im2col<T: Scalar>(x: &[T], t_len: usize, f_len: usize, cin: usize, patches: &mut [T]) {
    let width = 9 * cin;
    for t in 0..t_len {
        for f in 0..f_len {
            let row = &mut patches[(t * f_len + f) * width..][..width];
            for kt in 0..3 {
                for kf in 0..3 {
                    let dst = &mut row[(kt * 3 + kf) * cin..][..cin];
                    let (st, sf) = (t + kt, f + kf);
                    if st == 0 || sf == 0 || st > t_len || sf > f_len {
                        dst.fill(T::zero());
                    } else {
                        let src = ((st - 1) * f_len + (sf - 1)) * cin;
                        dst.copy_from_slice(&x[src..src + cin]);
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(patches: &[T], t_len: usize, f_len: usize, cin: usize, dx: &mut [T]) {
    let width = 9 * cin;
    for t in 0..t_len {
        for f in 0..f_len {
            let row = &patches[(t * f_len + f) * width..][..width];
            for kt in 0..3 {
                for kf in 0..3 {
                    let (st, sf) = (t + kt, f + kf);
                    if st == 0 || sf == 0 || st > t_len || sf > f_len {
                        continue;
                    }
                    let src = &row[(kt * 3 + kf) * cin..][..cin];
                    let dst = ((st - 1) * f_len + (sf - 1)) * cin;
                    for (d, &s) in dx[dst..dst + cin].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn check_conv<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, t, f, cin) = spatial_dims("conv2d_same", input)?;
    let &[kt, kf, kcin, cout] = kernels.shape() else {
        return Err(NumericsError::shape("conv2d_same", format!("kernel shape {:?}", kernels.shape())));
    };
    if (kt, kf) != (3, 3) {
        return Err(NumericsError::shape("conv2d_same", format!("kernel must be 3x3, got {kt}x{kf}")));
    }
    if kcin != cin {
        return Err(NumericsError::shape(
            "conv2d_same",
            format!("input has {cin} channels, kernels expect {kcin}"),
        ));
    }
    if bias.shape() != [cout] {
        return Err(NumericsError::shape("conv2d_same", format!("bias shape {:?}", bias.shape())));
    }
    Ok((b, t, f, cin, cout))
}

/// 3×3 convolution over (time, frequency) with one bin of zero padding.
pub fn conv2d_same<T: Scalar>(input: &Tensor<T>, kernels: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, t, f, cin, cout) = check_conv(input, kernels, bias)?;
    let in_item = t * f * cin;
    let out_item = t * f * cout;
    let mut out = vec![T::zero(); b * out_item];
    let kmat = kernels.data();
    let x = input.data();
    parallel::for_each_chunk_mut(&mut out, out_item, |i, chunk| {
        let mut patches = vec![T::zero(); t * f * 9 * cin];
        im2col(&x[i * in_item..][..in_item], t, f, cin, &mut patches);
        for row in chunk.chunks_mut(cout) {
            row.copy_from_slice(bias.data());
        }
        gemm(Mat::new(&patches, t * f, 9 * cin), Mat::new(kmat, 9 * cin, cout), T::one(), chunk);
    });
    Tensor::new(&with_channels(input.shape(), cout), out)
}

/// Gradients of [`conv2d_same`] w.r.t. input, kernels and bias.
pub fn conv2d_same_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, t, f, cin, cout) = check_conv(input, kernels, bias)?;
    let in_item = t * f * cin;
    let out_item = t * f * cout;
    if grad_out.len() != b * out_item {
        return Err(NumericsError::shape("conv2d_same_backward", "gradient size".into()));
    }
    let x = input.data();
    let g = grad_out.data();
    let kmat = kernels.data();
    let parts = parallel::map_range(b, |i| {
        let mut patches = vec![T::zero(); t * f * 9 * cin];
        im2col(&x[i * in_item..][..in_item], t, f, cin, &mut patches);
        let gi = &g[i * out_item..][..out_item];
        let mut dk = vec![T::zero(); 9 * cin * cout];
        gemm(Mat::new(&patches, t * f, 9 * cin).t(), Mat::new(gi, t * f, cout), T::zero(), &mut dk);
        gemm(Mat::new(gi, t * f, cout), Mat::new(kmat, 9 * cin, cout).t(), T::zero(), &mut patches);
        let mut dx = vec![T::zero(); in_item];
        col2im_add(&patches, t, f, cin, &mut dx);
        (dx, dk)
    });
    let mut dx = Vec::with_capacity(b * in_item);
    let mut dk = vec![T::zero(); 9 * cin * cout];
    for (px, pk) in parts {
        dx.extend_from_slice(&px);
        for (a, v) in dk.iter_mut().zip(pk) {
            *a += v;
        }
    }
    let mut db = vec![T::zero(); cout];
    for row in g.chunks(cout) {
        for (a, &v) in db.iter_mut().zip(row) {
            *a += v;
        }
    }
    Ok((
        Tensor::new(input.shape(), dx)?,
        Tensor::new(kernels.shape(), dk)?,
        Tensor::new(bias.shape(), db)?,
    ))
}

/// Max pooling with a 1×3 window and stride 3 along frequency; trailing
/// bins that do not fill a window are dropped. Returns the pooled tensor and
/// the flat input index chosen for every output element (lowest bin on ties).
pub fn maxpool_freq<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (b, t, f, c) = spatial_dims("maxpool_freq", input)?;
    if f < 3 {
        return Err(NumericsError::shape("maxpool_freq", format!("need at least 3 bins, got {f}")));
    }
    let fo = f / 3;
    let x = input.data();
    let mut out = Vec::with_capacity(b * t * fo * c);
    let mut arg = Vec::with_capacity(b * t * fo * c);
    for bt in 0..b * t {
        for p in 0..fo {
            for ch in 0..c {
                let mut best = (bt * f + 3 * p) * c + ch;
                for k in 1..3 {
                    let idx = (bt * f + 3 * p + k) * c + ch;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    let mut shape = input.shape().to_vec();
    let r = shape.len();
    shape[r - 2] = fo;
    Ok((Tensor::new(&shape, out)?, arg))
}

pub fn maxpool_freq_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    dx
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data).unwrap()
}

/// Affine map along the last axis: `input · weight + bias`.
pub fn dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, d, k) = check_dense(input, weight, bias)?;
    let mut out: Vec<T> = bias.data().iter().copied().cycle().take(rows * k).collect();
    gemm(Mat::new(input.data(), rows, d), Mat::new(weight.data(), d, k), T::one(), &mut out);
    Tensor::new(&with_channels(input.shape(), k), out)
}

fn check_dense<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let &[d, k] = weight.shape() else {
        return Err(NumericsError::shape("dense", format!("weight shape {:?}", weight.shape())));
    };
    if input.last_dim() != d {
        return Err(NumericsError::shape(
            "dense",
            format!("input last dim {} vs weight rows {d}", input.last_dim()),
        ));
    }
    if bias.shape() != [k] {
        return Err(NumericsError::shape("dense", format!("bias shape {:?}", bias.shape())));
    }
    Ok((input.len() / d, d, k))
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (rows, d, k) = check_dense(input, weight, bias)?;
    let g = grad_out.data();
    let mut dx = vec![T::zero(); rows * d];
    gemm(Mat::new(g, rows, k), Mat::new(weight.data(), d, k).t(), T::zero(), &mut dx);
    let mut dw = vec![T::zero(); d * k];
    gemm(Mat::new(input.data(), rows, d).t(), Mat::new(g, rows, k), T::zero(), &mut dw);
    let mut db = vec![T::zero(); k];
    for row in g.chunks(k) {
        for (a, &v) in db.iter_mut().zip(row) {
            *a += v;
        }
    }
    Ok((
        Tensor::new(input.shape(), dx)?,
        Tensor::new(weight.shape(), dw)?,
        Tensor::new(bias.shape(), db)?,
    ))
}

/// `clip(0.2·x + 0.5, 0, 1)`.
pub fn hard_sigmoid<T: Scalar>(x: T) -> T {
    (T::of(0.2) * x + T::of(0.5)).max(T::zero()).min(T::one())
}

fn hard_sigmoid_grad<T: Scalar>(x: T) -> T {
    if x > T::of(-2.5) && x < T::of(2.5) {
        T::of(0.2)
    } else {
        T::zero()
    }
}

/// Saved activations of an LSTM forward pass.
#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    /// Gate pre-activations, `[B, T, 4H]`, gate order input, forget, cell, output.
    pub preact: Vec<T>,
    /// Cell states, `[B, T, H]`.
    pub cell: Vec<T>,
}

fn lstm_dims<T: Scalar>(
    input: &Tensor<T>,
    w_in: &Tensor<T>,
    w_rec: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let (b, t, d) = match *input.shape() {
        [t, d] => (1, t, d),
        [b, t, d] => (b, t, d),
        ref s => return Err(NumericsError::shape("lstm_seq", format!("input shape {s:?}"))),
    };
    let &[wd, h4] = w_in.shape() else {
        return Err(NumericsError::shape("lstm_seq", format!("w_in shape {:?}", w_in.shape())));
    };
    if wd != d || h4 % 4 != 0 {
        return Err(NumericsError::shape("lstm_seq", format!("w_in {:?} for input dim {d}", w_in.shape())));
    }
    let h = h4 / 4;
    if w_rec.shape() != [h, h4] || bias.shape() != [h4] {
        return Err(NumericsError::shape(
            "lstm_seq",
            format!("w_rec {:?} / bias {:?} for hidden {h}", w_rec.shape(), bias.shape()),
        ));
    }
    Ok((b, t, d, h))
}

/// Sequence-to-sequence LSTM from zero initial state. Gates use
/// [`hard_sigmoid`]; the candidate and output nonlinearity use tanh.
pub fn lstm_seq<T: Scalar>(
    input: &Tensor<T>,
    w_in: &Tensor<T>,
    w_rec: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, LstmCache<T>)> {
    let (b, t_len, d, h) = lstm_dims(input, w_in, w_rec, bias)?;
    let h4 = 4 * h;
    let mut xw: Vec<T> = bias.data().iter().copied().cycle().take(b * t_len * h4).collect();
    gemm(Mat::new(input.data(), b * t_len, d), Mat::new(w_in.data(), d, h4), T::one(), &mut xw);

    let mut cell = vec![T::zero(); b * t_len * h];
    let mut out = vec![T::zero(); b * t_len * h];
    let mut h_prev = vec![T::zero(); b * h];
    let mut c_prev = vec![T::zero(); b * h];
    let mut z = vec![T::zero(); b * h4];
    for t in 0..t_len {
        for bi in 0..b {
            z[bi * h4..][..h4].copy_from_slice(&xw[(bi * t_len + t) * h4..][..h4]);
        }
        gemm(Mat::new(&h_prev, b, h), Mat::new(w_rec.data(), h, h4), T::one(), &mut z);
        for bi in 0..b {
            let zr = &z[bi * h4..][..h4];
            let row = (bi * t_len + t) * h4;
            xw[row..row + h4].copy_from_slice(zr);
            for j in 0..h {
                let i_g = hard_sigmoid(zr[j]);
                let f_g = hard_sigmoid(zr[h + j]);
                let g_g = zr[2 * h + j].tanh();
                let o_g = hard_sigmoid(zr[3 * h + j]);
                let c = f_g * c_prev[bi * h + j] + i_g * g_g;
                let hv = o_g * c.tanh();
                c_prev[bi * h + j] = c;
                h_prev[bi * h + j] = hv;
                cell[(bi * t_len + t) * h + j] = c;
                out[(bi * t_len + t) * h + j] = hv;
            }
        }
    }
    let out = Tensor::new(&with_channels(input.shape(), h), out)?;
    Ok((out, LstmCache { preact: xw, cell }))
}

/// Backpropagation through time for [`lstm_seq`]. Returns gradients for
/// input, `w_in`, `w_rec` and `bias`.
pub fn lstm_seq_backward<T: Scalar>(
    input: &Tensor<T>,
    w_in: &Tensor<T>,
    w_rec: &Tensor<T>,
    bias: &Tensor<T>,
    output: &Tensor<T>,
    cache: &LstmCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, t_len, d, h) = lstm_dims(input, w_in, w_rec, bias)?;
    let h4 = 4 * h;
    let hs = output.data();
    let dh_out = grad_out.data();
    let mut dz_all = vec![T::zero(); b * t_len * h4];
    let mut dh_next = vec![T::zero(); b * h];
    let mut dc_next = vec![T::zero(); b * h];
    let mut dw_rec = vec![T::zero(); h * h4];
    let mut dz_t = vec![T::zero(); b * h4];
    let mut h_prev_t = vec![T::zero(); b * h];
    for t in (0..t_len).rev() {
        for bi in 0..b {
            let z = &cache.preact[(bi * t_len + t) * h4..][..h4];
            for j in 0..h {
                let k = bi * h + j;
                let idx = (bi * t_len + t) * h + j;
                let c = cache.cell[idx];
                let c_prev = if t > 0 { cache.cell[idx - h] } else { T::zero() };
                let (zi, zf, zg, zo) = (z[j], z[h + j], z[2 * h + j], z[3 * h + j]);
                let (ig, fg, gg, og) = (hard_sigmoid(zi), hard_sigmoid(zf), zg.tanh(), hard_sigmoid(zo));
                let tc = c.tanh();
                let dh = dh_out[idx] + dh_next[k];
                let dc = dh * og * (T::one() - tc * tc) + dc_next[k];
                dc_next[k] = dc * fg;
                let dz = &mut dz_t[bi * h4..][..h4];
                dz[j] = dc * gg * hard_sigmoid_grad(zi);
                dz[h + j] = dc * c_prev * hard_sigmoid_grad(zf);
                dz[2 * h + j] = dc * ig * (T::one() - gg * gg);
                dz[3 * h + j] = dh * tc * hard_sigmoid_grad(zo);
                h_prev_t[k] = if t > 0 { hs[idx - h] } else { T::zero() };
            }
            dz_all[(bi * t_len + t) * h4..][..h4].copy_from_slice(&dz_t[bi * h4..][..h4]);
        }
        gemm(Mat::new(&dz_t, b, h4), Mat::new(w_rec.data(), h, h4).t(), T::zero(), &mut dh_next);
        gemm(Mat::new(&h_prev_t, b, h).t(), Mat::new(&dz_t, b, h4), T::one(), &mut dw_rec);
    }
    let rows = b * t_len;
    let mut dx = vec![T::zero(); rows * d];
    gemm(Mat::new(&dz_all, rows, h4), Mat::new(w_in.data(), d, h4).t(), T::zero(), &mut dx);
    let mut dw_in = vec![T::zero(); d * h4];
    gemm(Mat::new(input.data(), rows, d).t(), Mat::new(&dz_all, rows, h4), T::zero(), &mut dw_in);
    let mut db = vec![T::zero(); h4];
    for row in dz_all.chunks(h4) {
        for (a, &v) in db.iter_mut().zip(row) {
            *a += v;
        }
    }
    Ok((
        Tensor::new(input.shape(), dx)?,
        Tensor::new(w_in.shape(), dw_in)?,
        Tensor::new(w_rec.shape(), dw_rec)?,
        Tensor::new(bias.shape(), db)?,
    ))
}

/// Row-wise softmax with mean cross-entropy against class indices.
/// Returns `(loss, probabilities)`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> Result<(T, Tensor<T>)> {
    let k = logits.last_dim();
    let rows = logits.len() / k;
    if targets.len() != rows {
        return Err(NumericsError::shape(
            "softmax_xent",
            format!("{rows} rows but {} targets", targets.len()),
        ));
    }
    if let Some(&bad) = targets.iter().find(|&&c| c >= k) {
        return Err(NumericsError::InvalidArgument(format!(
            "softmax_xent: target class {bad} outside 0..{k}"
        )));
    }
    let mut probs = Vec::with_capacity(rows * k);
    let mut loss = 0.0f64;
    for (row, &target) in logits.data().chunks(k).zip(targets) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        loss += (lse - row[target]).as_f64();
        probs.extend(row.iter().map(|&z| (z - max).exp() / sum));
    }
    Ok((T::of(loss / rows as f64), Tensor::new(logits.shape(), probs)?))
}

pub fn softmax_xent_backward<T: Scalar>(probs: &Tensor<T>, targets: &[usize], grad_loss: T) -> Tensor<T> {
    let k = probs.last_dim();
    let scale = grad_loss / T::of(targets.len() as f64);
    let mut g = probs.clone();
    for (row, &target) in g.data_mut().chunks_mut(k).zip(targets) {
        row[target] -= T::one();
        row.iter_mut().for_each(|v| *v *= scale);
    }
    g
}

/// Row-wise softmax without a loss.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.last_dim();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.iter_mut().for_each(|v| *v = (*v - max).exp());
        let sum: T = row.iter().copied().sum();
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}
