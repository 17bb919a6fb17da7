//! Dense row-major kernels used by the encoder.

use crate::scalar::Scalar;

/// `out (n×m) = a (n×k) · b (k×m)`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        if arow.iter().all(|&x| x == T::zero()) {
            continue;
        }
        axpy_rows(&mut out[i * m..(i + 1) * m], arow, b, m);
    }
    out
}

/// `row += Σ_p coef[p] · b[p]`, adding the terms in order of `p`.
#[inline]
fn axpy_rows<T: Scalar>(row: &mut [T], coef: &[T], b: &[T], m: usize) {
    let k = coef.len();
    let mut p = 0;
    while p + 4 <= k {
        let (x0, x1, x2, x3) = (coef[p], coef[p + 1], coef[p + 2], coef[p + 3]);
        let b0 = &b[p * m..(p + 1) * m];
        let b1 = &b[(p + 1) * m..(p + 2) * m];
        let b2 = &b[(p + 2) * m..(p + 3) * m];
        let b3 = &b[(p + 3) * m..(p + 4) * m];
        for j in 0..m {
            row[j] = row[j] + x0 * b0[j] + x1 * b1[j] + x2 * b2[j] + x3 * b3[j];
        }
        p += 4;
    }
    while p < k {
        let x = coef[p];
        for (o, &w) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
            *o += x * w;
        }
        p += 1;
    }
}

/// Adds a bias row to every row of `x` (n×m).
pub fn add_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

/// `out (n×k) = g (n×m) · bᵀ` where `b` is k×m.
pub fn matmul_bt<T: Scalar>(g: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    matmul(g, &transpose(b, k, m), n, m, k)
}

/// `rows×cols` → `cols×rows`.
pub fn transpose<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// `acc (k×m) += aᵀ · g` where `a` is n×k and `g` is n×m.
pub fn acc_at_g<T: Scalar>(acc: &mut [T], a: &[T], g: &[T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == T::zero() {
                continue;
            }
            let arow = &mut acc[p * m..(p + 1) * m];
            for (o, &y) in arow.iter_mut().zip(grow) {
                *o += x * y;
            }
        }
    }
}

/// `acc (m) += column sums of g (n×m)`.
pub fn acc_col_sum<T: Scalar>(acc: &mut [T], g: &[T]) {
    for row in g.chunks_exact(acc.len()) {
        for (o, &y) in acc.iter_mut().zip(row) {
            *o += y;
        }
    }
}

pub const LN_EPS: f64 = 1e-5;

/// Per-row normalised inputs and reciprocal standard deviations.
#[derive(Debug, Clone)]
pub struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T]) -> (Vec<T>, NormCache<T>) {
    let d = gain.len();
    let n = x.len() / d;
    let inv_d = T::lit(1.0 / d as f64);
    let eps = T::lit(LN_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let r = T::one() / (var + eps).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let h = (row[j] - mean) * r;
            xhat[i * d + j] = h;
            y[i * d + j] = h * gain[j] + bias[j];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Returns dx; accumulates parameter gradients into `dgain`/`dbias`.
pub fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &NormCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let d = gain.len();
    let n = dy.len() / d;
    let inv_d = T::lit(1.0 / d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for i in 0..n {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        if dyr.iter().all(|&v| v == T::zero()) {
            continue;
        }
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let r = cache.rstd[i];
        for j in 0..d {
            dx[i * d + j] = r * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<T: Scalar>(u: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * u * (T::one() + (c * (u + a * u * u * u)).tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let t = (c * (u + a * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * u * u)
}
