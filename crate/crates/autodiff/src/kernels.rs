//! Pure numeric kernels behind the tape ops.
//!
//! Everything here is single-threaded with a fixed accumulation order, so
//! repeated runs are bitwise identical.

use crate::tensor::{broadcast_shape, lit, strides_for, Element, Tensor};

// ── elementwise with broadcasting ────────────────────────────────────

pub(crate) fn binary_op<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    out_shape: &[usize],
    f: impl Fn(E, E) -> E,
) -> Tensor<E> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(out_shape, data).expect("same-shape binary op");
    }
    if b.numel() == 1 {
        let y = b.data()[0];
        return Tensor::new(out_shape, a.data().iter().map(|&x| f(x, y)).collect())
            .expect("scalar rhs");
    }
    if a.numel() == 1 {
        let x = a.data()[0];
        return Tensor::new(out_shape, b.data().iter().map(|&y| f(x, y)).collect())
            .expect("scalar lhs");
    }

    // General broadcast path: walk the output index space.
    let rank = out_shape.len();
    let out_strides = strides_for(out_shape);
    let a_strides = aligned_strides(a.shape(), rank);
    let b_strides = aligned_strides(b.shape(), rank);
    let numel: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut idx = vec![0usize; rank];
    for flat in 0..numel {
        let mut rem = flat;
        for d in 0..rank {
            idx[d] = rem / out_strides[d];
            rem %= out_strides[d];
        }
        let ai: usize = idx.iter().zip(&a_strides).map(|(&i, &s)| i * s).sum();
        let bi: usize = idx.iter().zip(&b_strides).map(|(&i, &s)| i * s).sum();
        data.push(f(a.data()[ai], b.data()[bi]));
    }
    Tensor::new(out_shape, data).expect("broadcast binary op")
}

/// Strides for reading a tensor of `shape` as if right-aligned into `rank`
/// dimensions, with stride 0 on broadcast axes.
fn aligned_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let strides = strides_for(shape);
    let offset = rank - shape.len();
    let mut out = vec![0usize; rank];
    for d in 0..shape.len() {
        out[offset + d] = if shape[d] == 1 { 0 } else { strides[d] };
    }
    out
}

/// Sum `grad` (shaped `from`) down to shape `to`, undoing broadcasting.
pub(crate) fn reduce_broadcast<E: Element>(grad: &Tensor<E>, to: &[usize]) -> Tensor<E> {
    if grad.shape() == to {
        return grad.clone();
    }
    let from = grad.shape();
    let rank = from.len();
    let offset = rank - to.len();
    let mut out = Tensor::zeros(to);
    let out_strides = strides_for(to);
    let from_strides = strides_for(from);
    let mut idx = vec![0usize; rank];
    for flat in 0..grad.numel() {
        let mut rem = flat;
        for d in 0..rank {
            idx[d] = rem / from_strides[d];
            rem %= from_strides[d];
        }
        let mut oi = 0usize;
        for d in 0..to.len() {
            let i = if to[d] == 1 { 0 } else { idx[offset + d] };
            oi += i * out_strides[d];
        }
        out.data_mut()[oi] = out.data_mut()[oi] + grad.data()[flat];
    }
    out
}

pub(crate) fn broadcast_out_shape<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
) -> Option<Vec<usize>> {
    broadcast_shape(a.shape(), b.shape())
}

// ── matmul ───────────────────────────────────────────────────────────

/// (M,K) x (K,N) -> (M,N), ikj loop order for row-major locality.
pub(crate) fn matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = vec![E::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = ad[i * k + kk];
            if aik == E::zero() {
                continue;
            }
            let b_row = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bv;
            }
        }
    }
    Tensor::new(&[m, n], out).expect("matmul output")
}

/// dA = dC · Bᵀ  (row-dot-row, contiguous on both sides).
pub(crate) fn matmul_grad_a<E: Element>(grad: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (m, n) = (grad.shape()[0], grad.shape()[1]);
    let k = b.shape()[0];
    let mut out = vec![E::zero(); m * k];
    for i in 0..m {
        let g_row = &grad.data()[i * n..(i + 1) * n];
        for kk in 0..k {
            let b_row = &b.data()[kk * n..(kk + 1) * n];
            let mut acc = E::zero();
            for (&g, &bv) in g_row.iter().zip(b_row) {
                acc = acc + g * bv;
            }
            out[i * k + kk] = acc;
        }
    }
    Tensor::new(&[m, k], out).expect("matmul grad A")
}

/// dB = Aᵀ · dC.
pub(crate) fn matmul_grad_b<E: Element>(grad: &Tensor<E>, a: &Tensor<E>) -> Tensor<E> {
    let (m, n) = (grad.shape()[0], grad.shape()[1]);
    let k = a.shape()[1];
    let mut out = vec![E::zero(); k * n];
    for i in 0..m {
        let g_row = &grad.data()[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a.data()[i * k + kk];
            if aik == E::zero() {
                continue;
            }
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &g) in out_row.iter_mut().zip(g_row) {
                *o = *o + aik * g;
            }
        }
    }
    Tensor::new(&[k, n], out).expect("matmul grad B")
}

// ── conv2d ───────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dAttrs {
    /// (stride_h, stride_w)
    pub stride: (usize, usize),
    /// (pad_h, pad_w), zero padding on both sides of each axis
    pub pad: (usize, usize),
}

pub(crate) fn conv2d_out_shape(
    input: &[usize],
    weight: &[usize],
    attrs: Conv2dAttrs,
) -> Option<Vec<usize>> {
    let (n, _c, h, w) = (input[0], input[1], input[2], input[3]);
    let (oc, kh, kw) = (weight[0], weight[2], weight[3]);
    let (sh, sw) = attrs.stride;
    let (ph, pw) = attrs.pad;
    let h_eff = h + 2 * ph;
    let w_eff = w + 2 * pw;
    if h_eff < kh || w_eff < kw {
        return None;
    }
    let oh = (h_eff - kh) / sh + 1;
    let ow = (w_eff - kw) / sw + 1;
    Some(vec![n, oc, oh, ow])
}

/// Valid output-column range so that `ow*sw + kw - pw` stays inside `[0, w)`.
#[inline]
fn ow_range(ow_len: usize, sw: usize, kw: usize, pw: usize, w: usize) -> (usize, usize) {
    let lo = if kw >= pw { 0 } else { (pw - kw + sw - 1) / sw };
    // largest ow with ow*sw + kw - pw <= w-1
    let hi = if w + pw < kw + 1 {
        0
    } else {
        (((w + pw - kw - 1) / sw) + 1).min(ow_len)
    };
    (lo.min(hi), hi)
}

pub(crate) fn conv2d<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    attrs: Conv2dAttrs,
) -> Tensor<E> {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let [oc, _, kh, kw] = [weight.shape()[0], weight.shape()[1], weight.shape()[2], weight.shape()[3]];
    let out_shape = conv2d_out_shape(input.shape(), weight.shape(), attrs).expect("checked");
    let (oh_len, ow_len) = (out_shape[2], out_shape[3]);
    let (sh, sw) = attrs.stride;
    let (ph, pw) = attrs.pad;
    let mut out = vec![E::zero(); n * oc * oh_len * ow_len];
    let ind = input.data();
    let wd = weight.data();

    for ni in 0..n {
        for oci in 0..oc {
            for ohi in 0..oh_len {
                let out_row =
                    &mut out[((ni * oc + oci) * oh_len + ohi) * ow_len..][..ow_len];
                for ci in 0..c {
                    for khi in 0..kh {
                        let ih = ohi * sh + khi;
                        if ih < ph || ih - ph >= h {
                            continue;
                        }
                        let in_row = &ind[((ni * c + ci) * h + (ih - ph)) * w..][..w];
                        let w_row = &wd[((oci * c + ci) * kh + khi) * kw..][..kw];
                        for (kwi, &wv) in w_row.iter().enumerate() {
                            if wv == E::zero() {
                                continue;
                            }
                            let (lo, hi) = ow_range(ow_len, sw, kwi, pw, w);
                            for owi in lo..hi {
                                let iw = owi * sw + kwi - pw;
                                out_row[owi] = out_row[owi] + wv * in_row[iw];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&out_shape, out).expect("conv2d output")
}

pub(crate) fn conv2d_grad_input<E: Element>(
    grad: &Tensor<E>,
    input_shape: &[usize],
    weight: &Tensor<E>,
    attrs: Conv2dAttrs,
) -> Tensor<E> {
    let [n, c, h, w] = [input_shape[0], input_shape[1], input_shape[2], input_shape[3]];
    let [oc, _, kh, kw] = [weight.shape()[0], weight.shape()[1], weight.shape()[2], weight.shape()[3]];
    let (oh_len, ow_len) = (grad.shape()[2], grad.shape()[3]);
    let (sh, sw) = attrs.stride;
    let (ph, pw) = attrs.pad;
    let mut din = vec![E::zero(); n * c * h * w];
    let gd = grad.data();
    let wd = weight.data();

    for ni in 0..n {
        for oci in 0..oc {
            for ohi in 0..oh_len {
                let g_row = &gd[((ni * oc + oci) * oh_len + ohi) * ow_len..][..ow_len];
                for ci in 0..c {
                    for khi in 0..kh {
                        let ih = ohi * sh + khi;
                        if ih < ph || ih - ph >= h {
                            continue;
                        }
                        let din_row =
                            &mut din[((ni * c + ci) * h + (ih - ph)) * w..][..w];
                        let w_row = &wd[((oci * c + ci) * kh + khi) * kw..][..kw];
                        for (kwi, &wv) in w_row.iter().enumerate() {
                            if wv == E::zero() {
                                continue;
                            }
                            let (lo, hi) = ow_range(ow_len, sw, kwi, pw, w);
                            for owi in lo..hi {
                                let iw = owi * sw + kwi - pw;
                                din_row[iw] = din_row[iw] + wv * g_row[owi];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(input_shape, din).expect("conv2d input grad")
}

pub(crate) fn conv2d_grad_weight<E: Element>(
    grad: &Tensor<E>,
    input: &Tensor<E>,
    weight_shape: &[usize],
    attrs: Conv2dAttrs,
) -> Tensor<E> {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let [oc, _, kh, kw] = [weight_shape[0], weight_shape[1], weight_shape[2], weight_shape[3]];
    let (oh_len, ow_len) = (grad.shape()[2], grad.shape()[3]);
    let (sh, sw) = attrs.stride;
    let (ph, pw) = attrs.pad;
    let mut dw = vec![E::zero(); oc * c * kh * kw];
    let gd = grad.data();
    let ind = input.data();

    for ni in 0..n {
        for oci in 0..oc {
            for ohi in 0..oh_len {
                let g_row = &gd[((ni * oc + oci) * oh_len + ohi) * ow_len..][..ow_len];
                for ci in 0..c {
                    for khi in 0..kh {
                        let ih = ohi * sh + khi;
                        if ih < ph || ih - ph >= h {
                            continue;
                        }
                        let in_row = &ind[((ni * c + ci) * h + (ih - ph)) * w..][..w];
                        let dw_row = &mut dw[((oci * c + ci) * kh + khi) * kw..][..kw];
                        for (kwi, dwv) in dw_row.iter_mut().enumerate() {
                            let (lo, hi) = ow_range(ow_len, sw, kwi, pw, w);
                            let mut acc = E::zero();
                            for owi in lo..hi {
                                let iw = owi * sw + kwi - pw;
                                acc = acc + g_row[owi] * in_row[iw];
                            }
                            *dwv = *dwv + acc;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(weight_shape, dw).expect("conv2d weight grad")
}

// ── max pooling over the last two axes ───────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool2dAttrs {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

pub(crate) fn max_pool2d_out_shape(input: &[usize], attrs: Pool2dAttrs) -> Option<Vec<usize>> {
    let (h, w) = (input[2], input[3]);
    let (kh, kw) = attrs.kernel;
    let (sh, sw) = attrs.stride;
    if h < kh || w < kw {
        return None;
    }
    Some(vec![input[0], input[1], (h - kh) / sh + 1, (w - kw) / sw + 1])
}

/// Max pool; returns output values. Argmax is recomputed in backward with
/// first-wins tie-breaking so gradients are deterministic.
pub(crate) fn max_pool2d<E: Element>(input: &Tensor<E>, attrs: Pool2dAttrs) -> Tensor<E> {
    let (indices, out_shape) = max_pool2d_argmax(input, attrs);
    let data = indices.iter().map(|&i| input.data()[i]).collect();
    Tensor::new(&out_shape, data).expect("max pool output")
}

pub(crate) fn max_pool2d_argmax<E: Element>(
    input: &Tensor<E>,
    attrs: Pool2dAttrs,
) -> (Vec<usize>, Vec<usize>) {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let out_shape = max_pool2d_out_shape(input.shape(), attrs).expect("checked");
    let (oh_len, ow_len) = (out_shape[2], out_shape[3]);
    let (kh, kw) = attrs.kernel;
    let (sh, sw) = attrs.stride;
    let d = input.data();
    let mut indices = Vec::with_capacity(n * c * oh_len * ow_len);
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for ohi in 0..oh_len {
                for owi in 0..ow_len {
                    let mut best = base + (ohi * sh) * w + owi * sw;
                    for khi in 0..kh {
                        for kwi in 0..kw {
                            let idx = base + (ohi * sh + khi) * w + (owi * sw + kwi);
                            if d[idx] > d[best] {
                                best = idx;
                            }
                        }
                    }
                    indices.push(best);
                }
            }
        }
    }
    (indices, out_shape)
}

// ── reductions ───────────────────────────────────────────────────────

/// Reduced shape with kept (size-1) axes.
pub(crate) fn reduce_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(d, &s)| if axes.contains(&d) { 1 } else { s })
        .collect()
}

pub(crate) fn sum_axes<E: Element>(input: &Tensor<E>, axes: &[usize]) -> Tensor<E> {
    let out_shape = reduce_shape(input.shape(), axes);
    let mut out = Tensor::zeros(&out_shape);
    let in_strides = strides_for(input.shape());
    let out_strides = strides_for(&out_shape);
    let rank = input.shape().len();
    let mut idx = vec![0usize; rank];
    for flat in 0..input.numel() {
        let mut rem = flat;
        let mut oi = 0usize;
        for d in 0..rank {
            idx[d] = rem / in_strides[d];
            rem %= in_strides[d];
            let od = if out_shape[d] == 1 { 0 } else { idx[d] };
            oi += od * out_strides[d];
        }
        out.data_mut()[oi] = out.data_mut()[oi] + input.data()[flat];
    }
    out
}

/// Broadcast a reduced-gradient back up to `shape`, scaling by `scale`.
pub(crate) fn spread_reduced<E: Element>(
    grad: &Tensor<E>,
    shape: &[usize],
    scale: E,
) -> Tensor<E> {
    let ones = Tensor::full(shape, E::one());
    binary_op(grad, &ones, shape, |g, _| g * scale)
}

// ── softmax family (last axis) ───────────────────────────────────────

pub(crate) fn softmax_last<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let cols = *input.shape().last().expect("rank >= 1");
    let mut data = input.data().to_vec();
    for row in data.chunks_mut(cols) {
        let max = row.iter().cloned().fold(E::neg_infinity(), E::max);
        let mut sum = E::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Tensor::new(input.shape(), data).expect("softmax")
}

pub(crate) fn log_softmax_last<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let cols = *input.shape().last().expect("rank >= 1");
    let mut data = input.data().to_vec();
    for row in data.chunks_mut(cols) {
        let max = row.iter().cloned().fold(E::neg_infinity(), E::max);
        let logsum = row
            .iter()
            .map(|&v| (v - max).exp())
            .fold(E::zero(), |a, b| a + b)
            .ln()
            + max;
        for v in row.iter_mut() {
            *v = *v - logsum;
        }
    }
    Tensor::new(input.shape(), data).expect("log softmax")
}

// ── misc elementwise ─────────────────────────────────────────────────

pub(crate) fn gelu_value<E: Element>(x: E) -> E {
    // tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    let c: E = lit(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a: E = lit(0.044715);
    let half: E = lit(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (E::one() + inner.tanh())
}

pub(crate) fn gelu_grad<E: Element>(x: E) -> E {
    let c: E = lit(0.797_884_560_802_865_4);
    let a: E = lit(0.044715);
    let half: E = lit(0.5);
    let three: E = lit(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let d_inner = c * (E::one() + three * a * x * x);
    half * (E::one() + t) + half * x * (E::one() - t * t) * d_inner
}

pub(crate) fn sigmoid_value<E: Element>(x: E) -> E {
    E::one() / (E::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(&[3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn conv2d_all_ones_hand_example() {
        // 1x1x4x4 ones, one 3x3 ones filter, stride 1, pad 1:
        // interior outputs see the full 3x3 patch (9), corners see 2x2 (4).
        let input = Tensor::<f64>::full(&[1, 1, 4, 4], 1.0);
        let weight = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let out = conv2d(&input, &weight, Conv2dAttrs { stride: (1, 1), pad: (1, 1) });
        assert_eq!(out.shape(), &[1, 1, 4, 4]);
        let d = out.data();
        assert_eq!(d[0], 4.0); // corner
        assert_eq!(d[5], 9.0); // interior
        assert_eq!(d[15], 4.0); // corner
    }

    #[test]
    fn conv2d_strided_shape() {
        let input = Tensor::<f64>::zeros(&[1, 2, 5, 9]);
        let weight = Tensor::<f64>::zeros(&[3, 2, 3, 3]);
        let shape =
            conv2d_out_shape(input.shape(), weight.shape(), Conv2dAttrs { stride: (1, 2), pad: (1, 1) })
                .unwrap();
        assert_eq!(shape, vec![1, 3, 5, 5]);
    }

    #[test]
    fn sum_axes_keeps_dims() {
        let t = Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = sum_axes(&t, &[1]);
        assert_eq!(s.shape(), &[2, 1]);
        assert_eq!(s.data(), &[6.0, 15.0]);
    }

    #[test]
    fn max_pool_first_wins_ties() {
        let t = Tensor::new(&[1, 1, 1, 4], vec![2.0, 2.0, 1.0, 2.0]).unwrap();
        let (idx, shape) =
            max_pool2d_argmax(&t, Pool2dAttrs { kernel: (1, 4), stride: (1, 4) });
        assert_eq!(shape, vec![1, 1, 1, 1]);
        assert_eq!(idx, vec![0]);
    }
}
