//! Row-major matrix storage and the few dense kernels everything else uses.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{EtdError, Result};

/// Dense row-major matrix of `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dims must be >= 1");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(EtdError::Shape {
                context: "Matrix::from_vec",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(EtdError::Input("matrix entries must be finite".into()));
        }
        Ok(Matrix { rows, cols, data })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        &mut self.data
    }

    /// `out = self * x`. Panics on shape mismatch; public entry points
    /// validate shapes before reaching this kernel.
    #[inline]
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec input width");
        assert_eq!(out.len(), self.rows, "matvec output width");
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o = dot(row, x);
        }
    }

    /// `out += self * x`.
    #[inline]
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols, "matvec input width");
        assert_eq!(out.len(), self.rows, "matvec output width");
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols)) {
            *o += dot(row, x);
        }
    }

    /// `out += selfᵀ * d` — the input-gradient kernel of the backward pass.
    #[inline]
    pub fn matvec_t_add(&self, d: &[f64], out: &mut [f64]) {
        assert_eq!(d.len(), self.rows, "transposed matvec input width");
        assert_eq!(out.len(), self.cols, "transposed matvec output width");
        for (&s, row) in d.iter().zip(self.data.chunks_exact(self.cols)) {
            if s != 0.0 {
                axpy(s, row, out);
            }
        }
    }

    /// `self += d * xᵀ` — the parameter-gradient kernel of the backward pass.
    #[inline]
    pub fn add_outer(&mut self, d: &[f64], x: &[f64]) {
        assert_eq!(d.len(), self.rows, "outer product row count");
        assert_eq!(x.len(), self.cols, "outer product col count");
        for (&s, row) in d.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if s != 0.0 {
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += s * xi;
                }
            }
        }
    }
}

/// Dot product with eight independent accumulators. The fixed association
/// order keeps results bit-reproducible across runs while letting the
/// compiler vectorize.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n8 = a.len() & !7;
    let mut acc = [0.0f64; 8];
    for (ca, cb) in a[..n8].chunks_exact(8).zip(b[..n8].chunks_exact(8)) {
        for k in 0..8 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in a[n8..].iter().zip(&b[n8..]) {
        s += x * y;
    }
    s
}

/// `out += s * a`.
#[inline]
pub fn axpy(s: f64, a: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), out.len());
    for (o, &x) in out.iter_mut().zip(a) {
        *o += s * x;
    }
}

/// Draws an orthogonal matrix scaled by `gain`.
///
/// The matrix is the Q factor of a Householder QR decomposition of a
/// standard-normal draw, with column signs fixed by the diagonal of R so the
/// distribution is uniform over the orthogonal group. For `cols <= rows` the
/// columns are orthonormal (`WᵀW = gain²·I`); for `rows <= cols` the rows are
/// (`WWᵀ = gain²·I`).
pub fn orthogonal_init(rows: usize, cols: usize, gain: f64, rng: &mut ChaCha8Rng) -> Matrix {
    assert!(rows >= 1 && cols >= 1, "orthogonal_init dims must be >= 1");
    assert!(gain >= 0.0, "orthogonal_init gain must be >= 0");
    let transpose = rows < cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };

    // a: n x m, n >= m, row-major.
    let mut a: Vec<f64> = (0..n * m).map(|_| standard_normal(rng)).collect();

    // Householder vectors; v[k] has length n - k.
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut diag_sign = vec![1.0f64; m];
    for k in 0..m {
        let mut v: Vec<f64> = (k..n).map(|i| a[i * m + k]).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Degenerate column (probability zero for normal draws); leave
            // the reflector as identity.
            vs.push(vec![0.0; n - k]);
            diag_sign[k] = 1.0;
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm > 0.0 {
            for x in v.iter_mut() {
                *x /= vnorm;
            }
        }
        // Apply H = I - 2vvᵀ to the trailing block of A.
        for j in k..m {
            let mut s = 0.0;
            for i in k..n {
                s += v[i - k] * a[i * m + j];
            }
            s *= 2.0;
            for i in k..n {
                a[i * m + j] -= s * v[i - k];
            }
        }
        diag_sign[k] = if a[k * m + k] >= 0.0 { 1.0 } else { -1.0 };
        vs.push(v);
    }

    // Accumulate thin Q by applying the reflectors to the first m columns
    // of the identity, in reverse order.
    let mut q = vec![0.0f64; n * m];
    for j in 0..m {
        q[j * m + j] = 1.0;
    }
    for k in (0..m).rev() {
        let v = &vs[k];
        for j in 0..m {
            let mut s = 0.0;
            for i in k..n {
                s += v[i - k] * q[i * m + j];
            }
            s *= 2.0;
            for i in k..n {
                q[i * m + j] -= s * v[i - k];
            }
        }
    }

    // Sign-fix columns and scale.
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..n {
        for j in 0..m {
            let w = gain * diag_sign[j] * q[i * m + j];
            if transpose {
                out.set(j, i, w);
            } else {
                out.set(i, j, w);
            }
        }
    }
    out
}

/// Standard normal draw via Box–Muller; two uniforms per call keeps the
/// stream consumption deterministic.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
