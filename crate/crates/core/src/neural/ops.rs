//! Per-layer kernels. Spatial planes are row-major `h x w`; a sample is
//! `c` consecutive planes.

use super::layers::Padding;
use super::Scalar;

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

/// Source index of `v + d` along an axis of length `n`, or `None` in the
/// zero-padded halo.
#[inline]
fn tap(v: usize, d: isize, n: usize, padding: Padding) -> Option<usize> {
    let s = v as isize + d;
    if s >= 0 && (s as usize) < n {
        Some(s as usize)
    } else {
        match padding {
            Padding::Zero => None,
            Padding::Circular => Some(s.rem_euclid(n as isize) as usize),
        }
    }
}

/// Unfolds 3x3 neighbourhoods: row `ci*9 + ky*3 + kx`, column `y*w + x`.
pub(crate) fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, padding: Padding, col: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let out = &mut row[y * w..(y + 1) * w];
                    let Some(sy) = tap(y, ky as isize - 1, h, padding) else {
                        out.fill(T::zero());
                        continue;
                    };
                    let src = &plane[sy * w..(sy + 1) * w];
                    match kx {
                        1 => out.copy_from_slice(src),
                        0 => {
                            out[1..].copy_from_slice(&src[..w - 1]);
                            out[0] = tap(0, -1, w, padding).map_or(T::zero(), |s| src[s]);
                        }
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = tap(w - 1, 1, w, padding).map_or(T::zero(), |s| src[s]);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back onto the image.
pub(crate) fn col2im<T: Scalar>(col: &[T], c: usize, h: usize, w: usize, padding: Padding, x: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let Some(sy) = tap(y, ky as isize - 1, h, padding) else {
                        continue;
                    };
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy * w..(sy + 1) * w];
                    match kx {
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += *s),
                        0 => {
                            dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += *s);
                            if let Some(s) = tap(0, -1, w, padding) {
                                dst[s] += src[0];
                            }
                        }
                        _ => {
                            dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += *s);
                            if let Some(s) = tap(w - 1, 1, w, padding) {
                                dst[s] += src[w - 1];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolution of one sample. `k` is 3 or 1.
pub(crate) fn conv_forward<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    weight: &[T],
    bias: &[T],
    padding: Padding,
    out: &mut [T],
) {
    let hw = h * w;
    let cout = bias.len();
    let rows = cin * k * k;
    let col;
    let b: &[T] = if k == 3 {
        let mut buf = vec![T::zero(); rows * hw];
        im2col(x, cin, h, w, padding, &mut buf);
        col = buf;
        &col
    } else {
        x
    };
    for (co, plane) in out.chunks_exact_mut(hw).enumerate() {
        plane.fill(bias[co]);
    }
    T::gemm(cout, rows, hw, weight, false, b, false, T::one(), out);
}

/// Gradients of one sample's convolution. Accumulates into `dweight` and
/// `dbias`; writes `dx` when requested.
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    weight: &[T],
    padding: Padding,
    dweight: &mut [T],
    dbias: &mut [T],
    dx: Option<&mut [T]>,
) {
    let hw = h * w;
    let cout = dbias.len();
    let rows = cin * k * k;
    let col;
    let b: &[T] = if k == 3 {
        let mut buf = vec![T::zero(); rows * hw];
        im2col(x, cin, h, w, padding, &mut buf);
        col = buf;
        &col
    } else {
        x
    };
    T::gemm(cout, hw, rows, dy, false, b, true, T::one(), dweight);
    for (db, plane) in dbias.iter_mut().zip(dy.chunks_exact(hw)) {
        *db += plane.iter().copied().sum::<T>();
    }
    if let Some(dx) = dx {
        if k == 3 {
            let mut dcol = vec![T::zero(); rows * hw];
            T::gemm(rows, cout, hw, weight, true, dy, false, T::zero(), &mut dcol);
            dx.fill(T::zero());
            col2im(&dcol, cin, h, w, padding, dx);
        } else {
            T::gemm(rows, cout, hw, weight, true, dy, false, T::zero(), dx);
        }
    }
}

pub(crate) fn maxpool_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        let p = &x[ci * h * w..];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                out[(ci * oh + y) * ow + xx] = p[i].max(p[i + 1]).max(p[i + w]).max(p[i + w + 1]);
            }
        }
    }
}

/// Routes each pooled gradient to the first maximal input of its window.
pub(crate) fn maxpool_backward<T: Scalar>(x: &[T], dy: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let (oh, ow) = (h / 2, w / 2);
    dx.fill(T::zero());
    for ci in 0..c {
        let base = ci * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let i = base + 2 * y * w + 2 * xx;
                let mut best = i;
                for j in [i + 1, i + w, i + w + 1] {
                    if x[j] > x[best] {
                        best = j;
                    }
                }
                dx[best] += dy[(ci * oh + y) * ow + xx];
            }
        }
    }
}

pub(crate) fn upsample_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                out[(ci * oh + y) * ow + xx] = x[(ci * h + y / 2) * w + xx / 2];
            }
        }
    }
}

pub(crate) fn upsample_backward<T: Scalar>(dy: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let (oh, ow) = (2 * h, 2 * w);
    dx.fill(T::zero());
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                dx[(ci * h + y / 2) * w + xx / 2] += dy[(ci * oh + y) * ow + xx];
            }
        }
    }
}

/// Per-channel batch mean and biased variance over `(n, h, w)`.
pub(crate) fn channel_moments<T: Scalar>(x: &[T], n: usize, c: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let m = T::of((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for i in 0..n {
            s += x[(i * c + ch) * hw..][..hw].iter().copied().sum::<T>();
        }
        let mu = s / m;
        let mut q = T::zero();
        for i in 0..n {
            q += x[(i * c + ch) * hw..][..hw].iter().map(|v| (*v - mu) * (*v - mu)).sum::<T>();
        }
        mean[ch] = mu;
        var[ch] = q / m;
    }
    (mean, var)
}

pub(crate) fn affine_normalize<T: Scalar>(
    x: &[T],
    n: usize,
    c: usize,
    hw: usize,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
    out: &mut [T],
) {
    for i in 0..n {
        for ch in 0..c {
            let (s, t) = (gamma[ch] * inv_std[ch], beta[ch] - gamma[ch] * inv_std[ch] * mean[ch]);
            let o = (i * c + ch) * hw;
            for (d, v) in out[o..o + hw].iter_mut().zip(&x[o..o + hw]) {
                *d = s * *v + t;
            }
        }
    }
}

/// Batch-norm backward in train mode. Returns `(dx, dgamma, dbeta)`.
pub(crate) fn batchnorm_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    n: usize,
    c: usize,
    hw: usize,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let m = T::of((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut g, mut b) = (T::zero(), T::zero());
        for i in 0..n {
            let o = (i * c + ch) * hw;
            for (v, d) in x[o..o + hw].iter().zip(&dy[o..o + hw]) {
                g += *d * (*v - mean[ch]) * inv_std[ch];
                b += *d;
            }
        }
        dgamma[ch] = g;
        dbeta[ch] = b;
    }
    let mut dx = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let o = (i * c + ch) * hw;
            let k = gamma[ch] * inv_std[ch] / m;
            for j in o..o + hw {
                let xhat = (x[j] - mean[ch]) * inv_std[ch];
                dx[j] = k * (m * dy[j] - dbeta[ch] - xhat * dgamma[ch]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Nested-loop 3x3 convolution used as the oracle.
    fn direct_conv(x: &[f64], cin: usize, h: usize, w: usize, weight: &[f64], bias: &[f64], padding: Padding) -> Vec<f64> {
        let cout = bias.len();
        let mut out = vec![0.0; cout * h * w];
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = bias[co];
                    for ci in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                let (sy, sx) = match padding {
                                    Padding::Zero => {
                                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                            continue;
                                        }
                                        (sy as usize, sx as usize)
                                    }
                                    Padding::Circular => (sy.rem_euclid(h as isize) as usize, sx.rem_euclid(w as isize) as usize),
                                };
                                s += weight[((co * cin + ci) * 3 + ky) * 3 + kx] * x[(ci * h + sy) * w + sx];
                            }
                        }
                    }
                    out[(co * h + y) * w + xx] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for padding in [Padding::Zero, Padding::Circular] {
            for (cin, cout, h, w) in [(1, 1, 3, 3), (2, 3, 5, 7), (4, 2, 8, 6)] {
                let x: Vec<f64> = (0..cin * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let wt: Vec<f64> = (0..cout * cin * 9).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let b: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mut out = vec![0.0; cout * h * w];
                conv_forward(&x, cin, h, w, 3, &wt, &b, padding, &mut out);
                let oracle = direct_conv(&x, cin, h, w, &wt, &b, padding);
                for (a, o) in out.iter().zip(&oracle) {
                    assert!((a - o).abs() <= 1e-5 * o.abs().max(1.0), "{a} vs {o}");
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for padding in [Padding::Zero, Padding::Circular] {
            let (c, h, w) = (3, 4, 5);
            let x: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..c * 9 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut col = vec![0.0; y.len()];
            im2col(&x, c, h, w, padding, &mut col);
            let mut back = vec![0.0; x.len()];
            col2im(&y, c, h, w, padding, &mut back);
            let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn pool_and_upsample() {
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let mut p = vec![0.0; 4];
        maxpool_forward(&x, 1, 4, 4, &mut p);
        assert_eq!(p, vec![5.0, 7.0, 13.0, 15.0]);
        let mut dx = vec![0.0; 16];
        maxpool_backward(&x, &[1.0, 2.0, 3.0, 4.0], 1, 4, 4, &mut dx);
        assert_eq!(dx[5] + dx[7] + dx[13] + dx[15], 10.0);
        let mut u = vec![0.0; 16];
        upsample_forward(&p, 1, 2, 2, &mut u);
        assert_eq!(&u[..4], &[5.0, 5.0, 7.0, 7.0]);
        let mut d = vec![0.0; 4];
        upsample_backward(&vec![1.0; 16], 1, 2, 2, &mut d);
        assert_eq!(d, vec![4.0; 4]);
    }
}
