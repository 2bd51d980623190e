//! Row-major matrix primitives and their gradients.
//!
//! Everything is `f64`; the checkpoint codec narrows to `f32` only at
//! serialization time.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `y = x · wᵀ + b` with `w` stored `[out, in]`.
pub fn linear(x: &Mat, w: &[f64], b: &[f64], out_dim: usize) -> Mat {
    let (t, d_in) = (x.rows, x.cols);
    debug_assert_eq!(w.len(), out_dim * d_in);
    debug_assert_eq!(b.len(), out_dim);
    let mut y = Mat::zeros(t, out_dim);
    for i in 0..t {
        let xi = x.row(i);
        let yi = y.row_mut(i);
        yi.copy_from_slice(b);
        for (o, yo) in yi.iter_mut().enumerate() {
            let wr = &w[o * d_in..(o + 1) * d_in];
            let mut acc = 0.0;
            for (xv, wv) in xi.iter().zip(wr) {
                acc += xv * wv;
            }
            *yo += acc;
        }
    }
    y
}

/// Gradients of [`linear`]: returns `dx` and accumulates `dw`, `db`.
pub fn linear_backward(dy: &Mat, x: &Mat, w: &[f64], dw: &mut [f64], db: &mut [f64]) -> Mat {
    let (t, d_in) = (x.rows, x.cols);
    let mut dx = Mat::zeros(t, d_in);
    for i in 0..t {
        let dyi = dy.row(i);
        let xi = x.row(i);
        let dxi = dx.row_mut(i);
        for (o, &g) in dyi.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            db[o] += g;
            let wr = &w[o * d_in..(o + 1) * d_in];
            for (dxv, &wv) in dxi.iter_mut().zip(wr) {
                *dxv += g * wv;
            }
            let dwr = &mut dw[o * d_in..(o + 1) * d_in];
            for (dwv, &xv) in dwr.iter_mut().zip(xi) {
                *dwv += g * xv;
            }
        }
    }
    dx
}

/// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.cols, b.cols);
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ai = a.row(i);
        let oi = out.row_mut(i);
        for (j, oj) in oi.iter_mut().enumerate() {
            let bj = b.row(j);
            let mut acc = 0.0;
            for (x, y) in ai.iter().zip(bj) {
                acc += x * y;
            }
            *oj = acc;
        }
    }
    out
}

/// `a · b` for `a: [m,k]`, `b: [k,n]`.
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.cols, b.rows);
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let ai = a.row(i);
        let oi = out.row_mut(i);
        for (k, &av) in ai.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let bk = b.row(k);
            for (o, bv) in oi.iter_mut().zip(bk) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `aᵀ · b` for `a: [k,m]`, `b: [k,n]`.
pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    debug_assert_eq!(a.rows, b.rows);
    let mut out = Mat::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let ak = a.row(k);
        let bk = b.row(k);
        for (i, &av) in ak.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let oi = out.row_mut(i);
            for (o, bv) in oi.iter_mut().zip(bk) {
                *o += av * bv;
            }
        }
    }
    out
}

/// In-place row softmax.
pub fn softmax_rows(m: &mut Mat) {
    for i in 0..m.rows {
        let row = m.row_mut(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Gradient through a row softmax: `ds = a ⊙ (da − rowsum(da ⊙ a))`.
pub fn softmax_backward(da: &Mat, a: &Mat) -> Mat {
    let mut ds = Mat::zeros(a.rows, a.cols);
    for i in 0..a.rows {
        let ai = a.row(i);
        let dai = da.row(i);
        let dot: f64 = ai.iter().zip(dai).map(|(x, y)| x * y).sum();
        for (d, (&av, &dav)) in ds.row_mut(i).iter_mut().zip(ai.iter().zip(dai)) {
            *d = av * (dav - dot);
        }
    }
    ds
}

pub const LN_EPS: f64 = 1e-5;

pub struct LnCache {
    pub xhat: Mat,
    pub invstd: Vec<f64>,
}

/// Per-row layer norm with gain/bias.
pub fn layernorm(x: &Mat, g: &[f64], b: &[f64]) -> (Mat, LnCache) {
    let (t, d) = (x.rows, x.cols);
    let mut y = Mat::zeros(t, d);
    let mut xhat = Mat::zeros(t, d);
    let mut invstd = vec![0.0; t];
    for i in 0..t {
        let xi = x.row(i);
        let mean = xi.iter().sum::<f64>() / d as f64;
        let var = xi.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / libm::sqrt(var + LN_EPS);
        invstd[i] = istd;
        let xh = xhat.row_mut(i);
        let yi = y.row_mut(i);
        for j in 0..d {
            xh[j] = (xi[j] - mean) * istd;
            yi[j] = g[j] * xh[j] + b[j];
        }
    }
    (y, LnCache { xhat, invstd })
}

pub fn layernorm_backward(
    dy: &Mat,
    cache: &LnCache,
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
) -> Mat {
    let (t, d) = (dy.rows, dy.cols);
    let mut dx = Mat::zeros(t, d);
    for i in 0..t {
        let dyi = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            dg[j] += dyi[j] * xh[j];
            db[j] += dyi[j];
            let dxh = dyi[j] * g[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[j];
        }
        let istd = cache.invstd[i];
        let n = d as f64;
        let dxi = dx.row_mut(i);
        for j in 0..d {
            let dxh = dyi[j] * g[j];
            dxi[j] = istd * (dxh - sum_dxhat / n - xh[j] * sum_dxhat_xhat / n);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = libm::tanh(inner);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Sinusoidal position encoding row for position `pos`.
pub fn position_row(pos: usize, d: usize, out: &mut [f64]) {
    let mut k = 0;
    while 2 * k < d {
        let freq = libm::exp(-(libm::log(10000.0)) * (2 * k) as f64 / d as f64);
        let angle = pos as f64 * freq;
        out[2 * k] = libm::sin(angle);
        if 2 * k + 1 < d {
            out[2 * k + 1] = libm::cos(angle);
        }
        k += 1;
    }
}
