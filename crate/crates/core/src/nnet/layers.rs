//! Dense kernels for the reference network. Every reduction runs in a fixed
//! order so results are bit-reproducible.

use super::Scalar;

#[inline]
fn shifted_range(len: usize, shift: isize) -> (usize, usize) {
    let t0 = (-shift).max(0) as usize;
    let t1 = (len as isize - shift).min(len as isize).max(0) as usize;
    (t0, t1)
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Same-padded 1-D convolution (odd kernel), `input` is `[in_ch][len]`,
/// `weights` is `[out_ch][in_ch][k]`, `out` is `[out_ch][len]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_forward<T: Scalar>(
    input: &[T],
    in_ch: usize,
    len: usize,
    weights: &[T],
    bias: &[T],
    out_ch: usize,
    k: usize,
    out: &mut [T],
) {
    let pad = (k / 2) as isize;
    for f in 0..out_ch {
        let o = &mut out[f * len..(f + 1) * len];
        o.fill(bias[f]);
        for c in 0..in_ch {
            let x = &input[c * len..(c + 1) * len];
            let w = &weights[(f * in_ch + c) * k..(f * in_ch + c + 1) * k];
            for (j, &wj) in w.iter().enumerate() {
                let shift = j as isize - pad;
                let (t0, t1) = shifted_range(len, shift);
                if t0 >= t1 {
                    continue;
                }
                let xs = &x[(t0 as isize + shift) as usize..(t1 as isize + shift) as usize];
                axpy(wj, xs, &mut o[t0..t1]);
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `d_input` is given, the
/// input gradient (which is overwritten).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward<T: Scalar>(
    input: &[T],
    in_ch: usize,
    len: usize,
    weights: &[T],
    out_ch: usize,
    k: usize,
    d_out: &[T],
    d_weights: &mut [T],
    d_bias: &mut [T],
    mut d_input: Option<&mut [T]>,
) {
    let pad = (k / 2) as isize;
    if let Some(dx) = d_input.as_deref_mut() {
        dx.fill(T::zero());
    }
    for f in 0..out_ch {
        let g = &d_out[f * len..(f + 1) * len];
        d_bias[f] += g.iter().fold(T::zero(), |a, &v| a + v);
        for c in 0..in_ch {
            let x = &input[c * len..(c + 1) * len];
            let base = (f * in_ch + c) * k;
            for j in 0..k {
                let shift = j as isize - pad;
                let (t0, t1) = shifted_range(len, shift);
                if t0 >= t1 {
                    continue;
                }
                let (s0, s1) = ((t0 as isize + shift) as usize, (t1 as isize + shift) as usize);
                d_weights[base + j] += dot(&g[t0..t1], &x[s0..s1]);
                if let Some(dx) = d_input.as_deref_mut() {
                    axpy(weights[base + j], &g[t0..t1], &mut dx[c * len + s0..c * len + s1]);
                }
            }
        }
    }
}

pub(crate) fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero gradient entries whose (post-ReLU) activation is not positive.
pub(crate) fn relu_backward<T: Scalar>(activation: &[T], grad: &mut [T]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Width-2 stride-2 max pool over a flat buffer whose rows have even
/// length. The first maximal element wins ties.
pub(crate) fn maxpool2_forward<T: Scalar>(x: &[T], out: &mut [T], argmax: &mut [u8]) {
    for (i, (o, a)) in out.iter_mut().zip(argmax.iter_mut()).enumerate() {
        let (l, r) = (x[2 * i], x[2 * i + 1]);
        if r > l {
            *o = r;
            *a = 1;
        } else {
            *o = l;
            *a = 0;
        }
    }
}

pub(crate) fn maxpool2_backward<T: Scalar>(d_out: &[T], argmax: &[u8], d_x: &mut [T]) {
    d_x.fill(T::zero());
    for (i, (&g, &a)) in d_out.iter().zip(argmax).enumerate() {
        d_x[2 * i + a as usize] = g;
    }
}

/// `out = W x + b` with `W` row-major `[out.len()][x.len()]`.
pub(crate) fn dense_forward<T: Scalar>(x: &[T], weights: &[T], bias: &[T], out: &mut [T]) {
    let n = x.len();
    for (o, (row, &b)) in out.iter_mut().zip(weights.chunks_exact(n).zip(bias)) {
        *o = b + dot(row, x);
    }
}

pub(crate) fn dense_backward<T: Scalar>(
    x: &[T],
    weights: &[T],
    d_out: &[T],
    d_weights: &mut [T],
    d_bias: &mut [T],
    d_x: Option<&mut [T]>,
) {
    let n = x.len();
    for ((&g, dw_row), db) in d_out.iter().zip(d_weights.chunks_exact_mut(n)).zip(d_bias.iter_mut()) {
        *db += g;
        if g != T::zero() {
            axpy(g, x, dw_row);
        }
    }
    if let Some(dx) = d_x {
        dx.fill(T::zero());
        for (&g, row) in d_out.iter().zip(weights.chunks_exact(n)) {
            if g != T::zero() {
                axpy(g, row, dx);
            }
        }
    }
}
