//! Dense kernels on row-major slices.

use crate::scalar::Scalar;

pub const LN_EPS: f64 = 1e-5;

/// Dot product with eight independent accumulators (fixed summation order).
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = a · b + bias`, with `a: m×k`, `b: k×n`, `bias: n`.
pub fn linear<T: Scalar>(a: &[T], w: &[T], bias: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * n);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    matmul_acc(a, w, &mut out, m, k, n);
    out
}

/// `out += a · b` with `a: m×k`, `b: k×n`.
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            axpy(aip, &b[p * n..(p + 1) * n], orow);
        }
    }
}

/// `out += aᵀ · g` with `a: m×k`, `g: m×n`, `out: k×n` (weight gradients).
pub fn matmul_at_b_acc<T: Scalar>(a: &[T], g: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            axpy(aip, grow, &mut out[p * n..(p + 1) * n]);
        }
    }
}

/// `out += g · wᵀ` with `g: m×n`, `w: k×n`, `out: m×k` (input gradients).
pub fn matmul_a_bt_acc<T: Scalar>(g: &[T], w: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(g.len(), m * n);
    debug_assert_eq!(w.len(), k * n);
    debug_assert_eq!(out.len(), m * k);
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            out[i * k + p] += dot(grow, &w[p * n..(p + 1) * n]);
        }
    }
}

/// Column sums of `g: m×n` accumulated into `out: n`.
pub fn col_sum_acc<T: Scalar>(g: &[T], out: &mut [T], n: usize) {
    for row in g.chunks_exact(n) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
}

/// Row-wise layer norm. Returns `(y, xhat, inv_std)`.
pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], n: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / n;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv = vec![T::zero(); rows];
    let nf = T::of(n as f64);
    let eps = T::of(LN_EPS);
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        let mean = xr.iter().copied().sum::<T>() / nf;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        let is = T::one() / (var + eps).sqrt();
        inv[r] = is;
        for c in 0..n {
            let h = (xr[c] - mean) * is;
            xhat[r * n + c] = h;
            y[r * n + c] = h * gain[c] + bias[c];
        }
    }
    (y, xhat, inv)
}

/// Layer-norm backward. Accumulates gain/bias gradients and returns `dx`.
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    inv: &[T],
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    n: usize,
) -> Vec<T> {
    let nf = T::of(n as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); n];
    for (r, &is) in inv.iter().enumerate() {
        let dyr = &dy[r * n..(r + 1) * n];
        let xr = &xhat[r * n..(r + 1) * n];
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for c in 0..n {
            dgain[c] += dyr[c] * xr[c];
            dbias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xr[c];
        }
        m1 /= nf;
        m2 /= nf;
        for c in 0..n {
            dx[r * n + c] = is * (dxhat[c] - m1 - xr[c] * m2);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Scalar>(u: T) -> T {
    let t = (T::of(GELU_C) * (u + T::of(GELU_A) * u * u * u)).tanh();
    T::of(0.5) * u * (T::one() + t)
}

#[inline]
pub fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let t = (c * (u + a * u * u * u)).tanh();
    let half = T::of(0.5);
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * u * u)
}

/// In-place softmax of one row.
pub fn softmax_inplace<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    out[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        out
    }

    fn seq(len: usize, s: f64) -> Vec<f64> {
        (0..len).map(|i| ((i as f64 + 1.0) * s).sin()).collect()
    }

    #[test]
    fn matmul_variants_agree_with_naive() {
        let (m, k, n) = (5, 7, 11);
        let a = seq(m * k, 0.37);
        let b = seq(k * n, 0.91);
        let mut out = vec![0.0; m * n];
        matmul_acc(&a, &b, &mut out, m, k, n);
        let want = naive_mm(&a, &b, m, k, n);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // aᵀ g where a: m×k, g: m×n.
        let g = seq(m * n, 1.3);
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let want = naive_mm(&at, &g, k, m, n);
        let mut out = vec![0.0; k * n];
        matmul_at_b_acc(&a, &g, &mut out, m, k, n);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // g wᵀ where g: m×n, w: k×n.
        let w = seq(k * n, 0.11);
        let mut wt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                wt[j * k + p] = w[p * n + j];
            }
        }
        let want = naive_mm(&g, &wt, m, n, k);
        let mut out = vec![0.0; m * k];
        matmul_a_bt_acc(&g, &w, &mut out, m, k, n);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &u in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad::<f64>(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = seq(12, 0.5);
        let (y, _, _) = layer_norm(&x, &[1.0; 4], &[0.0; 4], 4);
        for row in y.chunks(4) {
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut r = vec![1.0f32, 2.0, 3.0, -100.0];
        softmax_inplace(&mut r);
        assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(r[2] > r[1] && r[1] > r[0]);
    }
}
