//! Dense complex linear algebra sized for small tensor-product systems.
//!
//! Matrices are stored row-major and dense; the spaces simulated by this
//! crate stay at dimension <= 1024 (a five-atom plaquette is 162), so no
//! sparsity or blocking is attempted. The one non-trivial routine is
//! [`CMatrix::eigh`], a Hermitian eigendecomposition built from Householder
//! tridiagonalization followed by implicit-shift QL iteration; it backs the
//! propagator and is validated by reconstruction/unitarity property tests.

use alloc::{vec, vec::Vec};
use core::fmt;
use core::ops::{Index, IndexMut};

use num_complex::Complex64 as C64;
#[allow(unused_imports)]
use num_traits::Float;

/// Errors from matrix construction and decomposition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LinalgError {
    /// An operation requiring a square matrix got a rectangular one.
    NotSquare { rows: usize, cols: usize },
    /// Operand shapes are incompatible.
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    /// QL iteration failed to converge on some eigenvalue.
    NoConvergence { eigenvalue_index: usize },
}

impl fmt::Display for LinalgError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinalgError::NotSquare { rows, cols } => {
                write!(f, "matrix is {rows}x{cols}, expected square")
            }
            LinalgError::ShapeMismatch { left, right } => write!(
                f,
                "shape mismatch: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            LinalgError::NoConvergence { eigenvalue_index } => write!(
                f,
                "eigensolver failed to converge at eigenvalue {eigenvalue_index}"
            ),
        }
    }
}

impl core::error::Error for LinalgError {}

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.4}{:+.4}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl CMatrix {
    /// Zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    /// Build from a closure over (row, col).
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = CMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Build a square matrix from a flat row-major slice.
    pub fn from_rows(n: usize, entries: &[C64]) -> Self {
        assert_eq!(entries.len(), n * n, "entry count must be n*n");
        CMatrix {
            rows: n,
            cols: n,
            data: entries.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Raw row-major data.
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// Matrix product `self * rhs`.
    pub fn mul(&self, rhs: &CMatrix) -> Result<CMatrix, LinalgError> {
        if self.cols != rhs.rows {
            return Err(LinalgError::ShapeMismatch {
                left: (self.rows, self.cols),
                right: (rhs.rows, rhs.cols),
            });
        }
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let aik = self[(i, k)];
                if aik == C64::new(0.0, 0.0) {
                    continue;
                }
                let lhs_row = i * rhs.cols;
                let rhs_row = k * rhs.cols;
                for j in 0..rhs.cols {
                    out.data[lhs_row + j] += aik * rhs.data[rhs_row + j];
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[C64]) -> Result<Vec<C64>, LinalgError> {
        if self.cols != v.len() {
            return Err(LinalgError::ShapeMismatch {
                left: (self.rows, self.cols),
                right: (v.len(), 1),
            });
        }
        let mut out = vec![C64::new(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = C64::new(0.0, 0.0);
            for (a, x) in row.iter().zip(v.iter()) {
                acc += a * x;
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    /// In-place `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &CMatrix, alpha: C64) -> Result<(), LinalgError> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(LinalgError::ShapeMismatch {
                left: (self.rows, self.cols),
                right: (other.rows, other.cols),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Multiply every entry by a scalar.
    pub fn scale(&mut self, alpha: C64) {
        for a in self.data.iter_mut() {
            *a *= alpha;
        }
    }

    /// Sum of diagonal entries.
    pub fn trace(&self) -> C64 {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self[(i, i)]).sum()
    }

    /// Kronecker product `self (x) rhs` (left factor is slow-varying).
    pub fn kron(&self, rhs: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.rows * rhs.rows, self.cols * rhs.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for k in 0..rhs.rows {
                    for l in 0..rhs.cols {
                        out[(i * rhs.rows + k, j * rhs.cols + l)] = a * rhs[(k, l)];
                    }
                }
            }
        }
        out
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Largest magnitude of `A - A^dagger` entries (0 for exactly Hermitian).
    pub fn hermitian_deviation(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut dev: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                dev = dev.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        dev
    }

    /// Largest entry magnitude of `self - other`.
    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    /// Eigendecomposition of a Hermitian matrix: `A = V diag(w) V^dagger`
    /// with real eigenvalues `w` sorted ascending and orthonormal columns in
    /// `V`. The strictly lower triangle and the diagonal's real part are
    /// trusted; tiny anti-Hermitian noise in the input is ignored.
    pub fn eigh(&self) -> Result<Eigh, LinalgError> {
        if !self.is_square() {
            return Err(LinalgError::NotSquare {
                rows: self.rows,
                cols: self.cols,
            });
        }
        let n = self.rows;
        if n == 0 {
            return Ok(Eigh {
                values: Vec::new(),
                vectors: CMatrix::zeros(0, 0),
            });
        }
        if n == 1 {
            return Ok(Eigh {
                values: vec![self[(0, 0)].re],
                vectors: CMatrix::identity(1),
            });
        }

        // Working copy, symmetrised so the decomposition is exactly Hermitian.
        let mut a = CMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = C64::new(self[(i, i)].re, 0.0);
            for j in (i + 1)..n {
                let avg = (self[(i, j)] + self[(j, i)].conj()) * 0.5;
                a[(i, j)] = avg;
                a[(j, i)] = avg.conj();
            }
        }

        let mut q = CMatrix::identity(n);

        // Householder reduction to Hermitian tridiagonal form. After step k
        // the k-th column below the first subdiagonal is zero.
        for k in 0..n - 1 {
            let m = n - k - 1; // length of the column segment below the diagonal
            if m == 1 {
                continue; // 2x2 trailing block is already tridiagonal
            }
            // x = a[k+1.., k]
            let mut xnorm2 = 0.0;
            for i in (k + 1)..n {
                xnorm2 += a[(i, k)].norm_sqr();
            }
            if xnorm2 == 0.0 {
                continue;
            }
            let xnorm = xnorm2.sqrt();
            let x0 = a[(k + 1, k)];
            // alpha = -phase(x0) * |x|, making v = x - alpha*e1 large.
            let phase = if x0.norm() == 0.0 {
                C64::new(1.0, 0.0)
            } else {
                x0 / x0.norm()
            };
            let alpha = -phase * xnorm;
            // v = x - alpha e1, u = v/|v|
            let mut u = vec![C64::new(0.0, 0.0); m];
            u[0] = x0 - alpha;
            for i in (k + 2)..n {
                u[i - k - 1] = a[(i, k)];
            }
            let unorm2: f64 = u.iter().map(|z| z.norm_sqr()).sum();
            if unorm2 == 0.0 {
                continue;
            }
            let unorm = unorm2.sqrt();
            for z in u.iter_mut() {
                *z /= unorm;
            }

            // Apply P = I - 2 u u^dagger to the trailing Hermitian block:
            // p = A u ; kappa = Re(u^dagger p) ; w = p - kappa u ;
            // A <- A - 2 u w^dagger - 2 w u^dagger.
            let mut p = vec![C64::new(0.0, 0.0); m];
            for i in 0..m {
                let mut acc = C64::new(0.0, 0.0);
                let row = k + 1 + i;
                for j in 0..m {
                    acc += a[(row, k + 1 + j)] * u[j];
                }
                p[i] = acc;
            }
            let kappa: f64 = u
                .iter()
                .zip(p.iter())
                .map(|(ui, pi)| (ui.conj() * pi).re)
                .sum();
            let w: Vec<C64> = p
                .iter()
                .zip(u.iter())
                .map(|(pi, ui)| pi - ui * kappa)
                .collect();
            for i in 0..m {
                for j in 0..m {
                    let upd = u[i] * w[j].conj() + w[i] * u[j].conj();
                    a[(k + 1 + i, k + 1 + j)] -= upd * 2.0;
                }
            }
            // Column k collapses onto alpha * e1 exactly by construction.
            a[(k + 1, k)] = alpha;
            a[(k, k + 1)] = alpha.conj();
            for i in (k + 2)..n {
                a[(i, k)] = C64::new(0.0, 0.0);
                a[(k, i)] = C64::new(0.0, 0.0);
            }
            // Q <- Q P (applied to columns k+1..n).
            for row in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..m {
                    acc += q[(row, k + 1 + j)] * u[j];
                }
                let acc2 = acc * 2.0;
                for j in 0..m {
                    let delta = acc2 * u[j].conj();
                    q[(row, k + 1 + j)] -= delta;
                }
            }
        }

        // Chase complex phases off the subdiagonal: T = D Treal D^dagger with
        // d_{k+1} = d_k * beta_k / |beta_k|; fold D into Q's columns.
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n]; // e[i] = subdiagonal below row i (e[n-1] unused)
        let mut dphase = C64::new(1.0, 0.0);
        for i in 0..n {
            d[i] = a[(i, i)].re;
            if i > 0 {
                // scale column i of Q by the accumulated phase
                if dphase != C64::new(1.0, 0.0) {
                    for row in 0..n {
                        q[(row, i)] *= dphase;
                    }
                }
            }
            if i + 1 < n {
                let beta = a[(i + 1, i)];
                let babs = beta.norm();
                e[i] = babs;
                if babs > 0.0 {
                    dphase *= beta / babs;
                }
            }
        }

        // Implicit-shift QL iteration on the real tridiagonal (d, e),
        // accumulating plane rotations into the complex columns of Q.
        for l in 0..n {
            let mut iter = 0;
            loop {
                let mut m = l;
                while m + 1 < n {
                    let dd = d[m].abs() + d[m + 1].abs();
                    if e[m].abs() <= f64::EPSILON * dd {
                        break;
                    }
                    m += 1;
                }
                if m == l {
                    break;
                }
                iter += 1;
                if iter > 50 {
                    return Err(LinalgError::NoConvergence {
                        eigenvalue_index: l,
                    });
                }
                let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
                let mut r = g.hypot(1.0);
                let denom = g + if g >= 0.0 { r.abs() } else { -r.abs() };
                g = d[m] - d[l] + e[l] / denom;
                let mut s = 1.0;
                let mut c = 1.0;
                let mut p = 0.0;
                let mut i = m;
                let mut underflow = false;
                while i > l {
                    i -= 1;
                    let mut f = s * e[i];
                    let b = c * e[i];
                    r = f.hypot(g);
                    e[i + 1] = r;
                    if r == 0.0 {
                        d[i + 1] -= p;
                        e[m] = 0.0;
                        underflow = true;
                        break;
                    }
                    s = f / r;
                    c = g / r;
                    g = d[i + 1] - p;
                    r = (d[i] - g) * s + 2.0 * c * b;
                    p = s * r;
                    d[i + 1] = g + p;
                    g = c * r - b;
                    // rotate columns i and i+1 of Q
                    for row in 0..n {
                        f = q[(row, i + 1)].re;
                        let fi = q[(row, i + 1)].im;
                        let gr = q[(row, i)].re;
                        let gi = q[(row, i)].im;
                        q[(row, i + 1)] = C64::new(s * gr + c * f, s * gi + c * fi);
                        q[(row, i)] = C64::new(c * gr - s * f, c * gi - s * fi);
                    }
                }
                if underflow && i + 1 > l + 1 {
                    continue;
                }
                if !underflow {
                    d[l] -= p;
                    e[l] = g;
                    e[m] = 0.0;
                }
            }
        }

        // Sort eigenpairs ascending.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap_or(core::cmp::Ordering::Equal));
        let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
        let mut vectors = CMatrix::zeros(n, n);
        for (new_col, &old_col) in order.iter().enumerate() {
            for row in 0..n {
                vectors[(row, new_col)] = q[(row, old_col)];
            }
        }

        Ok(Eigh { values, vectors })
    }
}

/// Result of a Hermitian eigendecomposition.
#[derive(Debug, Clone)]
pub struct Eigh {
    /// Eigenvalues, ascending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as matrix columns, ordered like `values`.
    pub vectors: CMatrix,
}

impl Eigh {
    /// Reassemble `f(A) = V diag(f(w)) V^dagger` for a scalar map `f`
    /// applied to the eigenvalues (complex-valued, e.g. `exp(-i w t)`).
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> C64) -> CMatrix {
        let n = self.values.len();
        let mut out = CMatrix::zeros(n, n);
        for k in 0..n {
            let fk = f(self.values[k]);
            if fk == C64::new(0.0, 0.0) {
                continue;
            }
            for i in 0..n {
                let vik = self.vectors[(i, k)] * fk;
                for j in 0..n {
                    out[(i, j)] += vik * self.vectors[(j, k)].conj();
                }
            }
        }
        out
    }

    /// Apply `f(A)` to a vector without forming the full matrix:
    /// `V diag(f(w)) V^dagger x`.
    pub fn apply_map(&self, f: impl Fn(f64) -> C64, x: &[C64]) -> Vec<C64> {
        let n = self.values.len();
        assert_eq!(x.len(), n);
        // y = V^dagger x
        let mut y = vec![C64::new(0.0, 0.0); n];
        for k in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..n {
                acc += self.vectors[(i, k)].conj() * x[i];
            }
            y[k] = acc * f(self.values[k]);
        }
        // out = V y
        let mut out = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += self.vectors[(i, k)] * y[k];
            }
            out[i] = acc;
        }
        out
    }
}
