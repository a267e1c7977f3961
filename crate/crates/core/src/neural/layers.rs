//! Batched kernels. Trunk activations use the layout `[C, B, H, W]` so a
//! convolution is one GEMM of the filter bank against the unfolded input.

use crate::scalar::Scalar;

/// Unfold `[cin, b, s, s]` into `[cin * k * k, b * so * so]`.
pub(crate) fn im2col<T: Scalar>(x: &[T], cin: usize, b: usize, s: usize, k: usize) -> Vec<T> {
    let so = s - k + 1;
    let n = b * so * so;
    let mut cols = vec![T::zero(); cin * k * k * n];
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut cols[row * n..(row + 1) * n];
                for bi in 0..b {
                    let plane = &x[(ci * b + bi) * s * s..(ci * b + bi + 1) * s * s];
                    for oy in 0..so {
                        let src = &plane[(oy + ky) * s + kx..(oy + ky) * s + kx + so];
                        let d = (bi * so + oy) * so;
                        dst_row[d..d + so].copy_from_slice(src);
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back onto `[cin, b, s, s]`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], cin: usize, b: usize, s: usize, k: usize) -> Vec<T> {
    let so = s - k + 1;
    let n = b * so * so;
    let mut x = vec![T::zero(); cin * b * s * s];
    for ci in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &cols[row * n..(row + 1) * n];
                for bi in 0..b {
                    let plane = &mut x[(ci * b + bi) * s * s..(ci * b + bi + 1) * s * s];
                    for oy in 0..so {
                        let dst = &mut plane[(oy + ky) * s + kx..(oy + ky) * s + kx + so];
                        let d = (bi * so + oy) * so;
                        for (a, &v) in dst.iter_mut().zip(&src_row[d..d + so]) {
                            *a += v;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Valid convolution plus bias and ReLU. Returns `(output, unfolded input)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward<T: Scalar>(
    x: &[T],
    cin: usize,
    b: usize,
    s: usize,
    w: &[T],
    bias: &[T],
    cout: usize,
    k: usize,
) -> (Vec<T>, Vec<T>) {
    let so = s - k + 1;
    let n = b * so * so;
    let cols = im2col(x, cin, b, s, k);
    let mut out = vec![T::zero(); cout * n];
    T::gemm(cout, cin * k * k, n, T::one(), w, false, &cols, false, T::zero(), &mut out);
    for (row, &bv) in out.chunks_mut(n).zip(bias) {
        for v in row {
            *v = (*v + bv).max(T::zero());
        }
    }
    (out, cols)
}

/// Backward pass of [`conv_forward`]. `dout` is the gradient with respect to
/// the ReLU output and is masked in place. Accumulates into `dw`, `db` and
/// returns the input gradient when asked.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    dout: &mut [T],
    out: &[T],
    cols: &[T],
    w: &[T],
    cin: usize,
    b: usize,
    s: usize,
    cout: usize,
    k: usize,
    dw: &mut [T],
    db: &mut [T],
    need_dx: bool,
) -> Option<Vec<T>> {
    let so = s - k + 1;
    let n = b * so * so;
    let kk = cin * k * k;
    for (g, &o) in dout.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
    T::gemm(cout, n, kk, T::one(), dout, false, cols, true, T::one(), dw);
    for (acc, row) in db.iter_mut().zip(dout.chunks(n)) {
        *acc += row.iter().copied().sum::<T>();
    }
    if !need_dx {
        return None;
    }
    let mut dcols = vec![T::zero(); kk * n];
    T::gemm(kk, cout, n, T::one(), w, true, dout, false, T::zero(), &mut dcols);
    Some(col2im(&dcols, cin, b, s, k))
}

/// Max pooling over `p x p` windows of every `[s, s]` plane. Returns the
/// output and, per output cell, the flat input index of the maximum.
pub(crate) fn pool_forward<T: Scalar>(x: &[T], planes: usize, s: usize, p: usize) -> (Vec<T>, Vec<u32>) {
    let so = s / p;
    let mut out = Vec::with_capacity(planes * so * so);
    let mut arg = Vec::with_capacity(planes * so * so);
    for pl in 0..planes {
        let base = pl * s * s;
        for oy in 0..so {
            for ox in 0..so {
                let mut best = base + oy * p * s + ox * p;
                for dy in 0..p {
                    for dx in 0..p {
                        let idx = base + (oy * p + dy) * s + ox * p + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn pool_backward<T: Scalar>(dout: &[T], arg: &[u32], in_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); in_len];
    for (&g, &i) in dout.iter().zip(arg) {
        dx[i as usize] += g;
    }
    dx
}

/// `[c, b, hw]` to per-sample rows `[b, c * hw]`.
pub(crate) fn flatten<T: Scalar>(x: &[T], c: usize, b: usize, hw: usize) -> Vec<T> {
    let f = c * hw;
    let mut out = vec![T::zero(); b * f];
    for ci in 0..c {
        for bi in 0..b {
            let src = &x[(ci * b + bi) * hw..(ci * b + bi + 1) * hw];
            out[bi * f + ci * hw..bi * f + (ci + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

/// Inverse of [`flatten`] for gradients with row stride `stride >= c * hw`.
pub(crate) fn unflatten<T: Scalar>(
    rows: &[T],
    stride: usize,
    c: usize,
    b: usize,
    hw: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); c * b * hw];
    for ci in 0..c {
        for bi in 0..b {
            let src = &rows[bi * stride + ci * hw..bi * stride + (ci + 1) * hw];
            out[(ci * b + bi) * hw..(ci * b + bi + 1) * hw].copy_from_slice(src);
        }
    }
    out
}

/// `y = x w^T + bias` for `x: [b, in]`, `w: [out, in]`, optional ReLU.
pub(crate) fn dense_forward<T: Scalar>(
    x: &[T],
    b: usize,
    w: &[T],
    bias: &[T],
    n_in: usize,
    n_out: usize,
    relu: bool,
) -> Vec<T> {
    let mut y = vec![T::zero(); b * n_out];
    T::gemm(b, n_in, n_out, T::one(), x, false, w, true, T::zero(), &mut y);
    for row in y.chunks_mut(n_out) {
        for (v, &bv) in row.iter_mut().zip(bias) {
            *v += bv;
            if relu && *v < T::zero() {
                *v = T::zero();
            }
        }
    }
    y
}

/// Accumulate `dw += dy^T x`, `db += colsum(dy)`; return `dx = dy w`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn dense_backward<T: Scalar>(
    dy: &[T],
    x: &[T],
    w: &[T],
    b: usize,
    n_in: usize,
    n_out: usize,
    dw: &mut [T],
    db: &mut [T],
) -> Vec<T> {
    T::gemm(n_out, b, n_in, T::one(), dy, true, x, false, T::one(), dw);
    for row in dy.chunks(n_out) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let mut dx = vec![T::zero(); b * n_in];
    T::gemm(b, n_out, n_in, T::one(), dy, false, w, false, T::zero(), &mut dx);
    dx
}
