//! Dense row-major helpers on `f64` slices.

/// Borrowed matrix view with explicit strides.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    /// `rows x cols` row-major.
    pub fn new(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major `rows x cols` buffer.
    pub fn t(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    /// Column block of a row-major buffer with row stride `stride`.
    pub fn block(data: &'a [f64], stride: usize, col: usize) -> Self {
        Self {
            data: &data[col..],
            rs: stride,
            cs: 1,
        }
    }

    pub fn block_t(data: &'a [f64], stride: usize, col: usize) -> Self {
        Self {
            data: &data[col..],
            rs: 1,
            cs: stride,
        }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = alpha * a b + beta * c` where `a` is `m x k`, `b` is `k x n`, and
/// `c` is written with row stride `rsc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: View<'_>,
    b: View<'_>,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    assert!((m - 1) * rsc + n - 1 < c.len(), "output view out of bounds");
    // SAFETY: every index touched by dgemm is within the bounds checked
    // above, and `c` cannot alias the shared inputs.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// `out (rows x cols) = x (rows x inner) w (inner x cols) + bias`.
pub(crate) fn linear(x: &[f64], rows: usize, inner: usize, w: &[f64], bias: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm(rows, inner, cols, 1.0, View::new(x, inner), View::new(w, cols), 1.0, &mut out, cols);
    out
}

/// Accumulates the gradients of [`linear`]: `dw += x^T dy`, `db += sum dy`,
/// and returns `dx = dy w^T` when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    x: &[f64],
    dy: &[f64],
    rows: usize,
    inner: usize,
    cols: usize,
    w: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    gemm(inner, rows, cols, 1.0, View::t(x, inner), View::new(dy, cols), 1.0, dw, cols);
    for row in dy.chunks_exact(cols) {
        for (acc, v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![0.0; rows * inner];
        gemm(rows, cols, inner, 1.0, View::new(dy, cols), View::t(w, cols), 0.0, &mut dx, inner);
        dx
    })
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub(crate) fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

pub(crate) const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm. Returns `(y, xhat, rstd)`.
pub(crate) fn layer_norm(x: &[f64], cols: usize, gamma: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = x.len() / cols;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for c in 0..cols {
            let h = (row[c] - mean) * s;
            xhat[r * cols + c] = h;
            y[r * cols + c] = gamma[c] * h + beta[c];
        }
    }
    (y, xhat, rstd)
}

pub(crate) fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    cols: usize,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; cols];
    for (r, &s) in rstd.iter().enumerate() {
        let base = r * cols;
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for c in 0..cols {
            let g = dy[base + c];
            dgamma[c] += g * xhat[base + c];
            dbeta[c] += g;
            dxhat[c] = g * gamma[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat[base + c];
        }
        mean_d /= cols as f64;
        mean_dx /= cols as f64;
        for c in 0..cols {
            dx[base + c] = s * (dxhat[c] - mean_d - xhat[base + c] * mean_dx);
        }
    }
    dx
}

pub(crate) fn add_assign(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}
