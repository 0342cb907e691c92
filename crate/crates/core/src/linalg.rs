//! Dense kernels: a small row-major matrix type, packed lower-triangular
//! factors, Cholesky factorization (and its reverse-mode adjoint), triangular
//! solves, the log-Cholesky maps and Householder null-space bases.
//!
//! Packed lower-triangular storage is row-major: entry `(i, j)` with `j <= i`
//! lives at `i * (i + 1) / 2 + j`. The log-Cholesky vector uses the same slot
//! order, so for `P = 2` the slots are `(diag_0, sub_10, diag_1)`.

use std::ops::{Index, IndexMut};

use thiserror::Error;

/// Smallest admissible Cholesky pivot.
pub const PIVOT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-positive diagonal entry at {index}: {value:e}")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (max relative asymmetry {0:e})")]
    NotSymmetric(f64),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "matvec dimension");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `selfᵀ x`.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, x.len(), "t_matvec dimension");
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, &v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn add_assign_scaled(&mut self, other: &Matrix, scale: f64) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetrized(&self) -> Matrix {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..i {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Max over off-diagonal pairs of `|a_ij - a_ji|`, relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// Trace of `selfᵀ other` (the Frobenius inner product).
    pub fn frobenius_dot(&self, other: &Matrix) -> f64 {
        dot(&self.data, &other.data)
    }

    /// `Zᵀ self Z`.
    pub fn congruence(&self, z: &Matrix) -> Matrix {
        z.transpose().matmul(&self.matmul(z))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn packed_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

#[inline]
pub fn packed_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

/// Lower-triangular matrix in packed row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    entries: Vec<f64>,
}

impl LowerTriangular {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![0.0; packed_len(dim)] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim);
        for i in 0..dim {
            l.set(i, i, 1.0);
        }
        l
    }

    pub fn from_packed(dim: usize, entries: Vec<f64>) -> Result<Self, LinalgError> {
        if entries.len() != packed_len(dim) {
            return Err(LinalgError::DimensionMismatch { expected: packed_len(dim), found: entries.len() });
        }
        Ok(Self { dim, entries })
    }

    /// Takes the lower triangle of a square matrix; the strict upper part is ignored.
    pub fn from_dense_lower(m: &Matrix) -> Result<Self, LinalgError> {
        if m.rows() != m.cols() {
            return Err(LinalgError::NotSquare { rows: m.rows(), cols: m.cols() });
        }
        let dim = m.rows();
        let mut l = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                l.set(i, j, m[(i, j)]);
            }
        }
        Ok(l)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn packed(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.entries[packed_index(i, j)]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[packed_index(i, j)] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        let start = packed_index(i, 0);
        &self.entries[start..start + i + 1]
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `Σ ln L_kk`, i.e. half the log-determinant of `L Lᵀ`.
    pub fn log_diag_sum(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i).ln()).sum()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for j in 0..=i {
                m[(i, j)] = self.get(i, j);
            }
        }
        m
    }

    /// `L x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| dot(self.row(i), &x[..=i])).collect()
    }

    /// `Lᵀ x`.
    pub fn t_matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, &xi) in x.iter().enumerate().take(self.dim) {
            for (o, &l) in out.iter_mut().zip(self.row(i)) {
                *o += l * xi;
            }
        }
        out
    }

    /// `L Lᵀ` as a dense symmetric matrix.
    pub fn gram(&self) -> Matrix {
        let n = self.dim;
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = dot(&self.row(i)[..=j], self.row(j));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// Which system [`solve_triangular`] solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriangularMode {
    /// `L x = b`
    Lower,
    /// `Lᵀ x = b`
    LowerTransposed,
}

/// Cholesky factor `L` of a symmetric positive definite matrix, `A = L Lᵀ`.
pub fn cholesky(a: &Matrix) -> Result<LowerTriangular, LinalgError> {
    if a.rows() != a.cols() {
        return Err(LinalgError::NotSquare { rows: a.rows(), cols: a.cols() });
    }
    let asym = a.asymmetry();
    if asym > 1e-10 {
        return Err(LinalgError::NotSymmetric(asym));
    }
    let n = a.rows();
    let mut l = LowerTriangular::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let s = dot(&l.row(i)[..j], &l.row(j)[..j]);
            if i == j {
                let pivot = a[(i, i)] - s;
                // NaN pivots fail this test as well.
                if !(pivot > PIVOT_FLOOR) {
                    return Err(LinalgError::NotPositiveDefinite { index: i, pivot });
                }
                l.set(i, i, pivot.sqrt());
            } else {
                let v = (a[(i, j)] - s) / l.get(j, j);
                l.set(i, j, v);
            }
        }
    }
    Ok(l)
}

pub fn solve_triangular(l: &LowerTriangular, b: &[f64], mode: TriangularMode) -> Result<Vec<f64>, LinalgError> {
    let n = l.dim();
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch { expected: n, found: b.len() });
    }
    let mut x = b.to_vec();
    match mode {
        TriangularMode::Lower => {
            for i in 0..n {
                let row = l.row(i);
                let s = dot(&row[..i], &x[..i]);
                x[i] = (x[i] - s) / row[i];
            }
        }
        TriangularMode::LowerTransposed => {
            for i in (0..n).rev() {
                x[i] /= l.get(i, i);
                let xi = x[i];
                for (xj, &lij) in x[..i].iter_mut().zip(&l.row(i)[..i]) {
                    *xj -= lij * xi;
                }
            }
        }
    }
    Ok(x)
}

/// Solves `L Lᵀ x = b`.
pub fn cholesky_solve(l: &LowerTriangular, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
    let y = solve_triangular(l, b, TriangularMode::Lower)?;
    solve_triangular(l, &y, TriangularMode::LowerTransposed)
}

/// Unconstrained encoding of a lower-triangular factor with positive diagonal:
/// diagonal slots hold logs, off-diagonal slots are copied.
#[derive(Debug, Clone, PartialEq)]
pub struct LogCholVector {
    dim: usize,
    values: Vec<f64>,
}

impl LogCholVector {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self, LinalgError> {
        if values.len() != packed_len(dim) {
            return Err(LinalgError::DimensionMismatch { expected: packed_len(dim), found: values.len() });
        }
        Ok(Self { dim, values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, values: vec![0.0; packed_len(dim)] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// `ψ⁻¹`: exponentiate diagonal slots.
pub fn log_chol_expand(l: &LogCholVector) -> LowerTriangular {
    expand_slice(l.dim, &l.values)
}

pub(crate) fn expand_slice(dim: usize, values: &[f64]) -> LowerTriangular {
    let mut entries = values.to_vec();
    for i in 0..dim {
        let k = packed_index(i, i);
        entries[k] = entries[k].exp();
    }
    LowerTriangular { dim, entries }
}

/// `ψ`: log of the diagonal, off-diagonals copied.
pub fn log_chol_compress(l: &LowerTriangular) -> Result<LogCholVector, LinalgError> {
    let mut values = l.entries.clone();
    for i in 0..l.dim {
        let k = packed_index(i, i);
        let d = values[k];
        if !(d > 0.0) {
            return Err(LinalgError::NonPositiveDiagonal { index: i, value: d });
        }
        values[k] = d.ln();
    }
    Ok(LogCholVector { dim: l.dim, values })
}

/// Orthonormal basis (`Q × (Q−1)`) of the orthogonal complement of `c`, taken
/// from the trailing columns of the Householder reflector mapping `c` onto the
/// first axis.
pub fn nullspace_basis(c: &[f64]) -> Result<Matrix, LinalgError> {
    let q = c.len();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    if q == 0 || norm == 0.0 || !norm.is_finite() {
        return Err(LinalgError::ZeroVector);
    }
    // v = c - alpha e1 with alpha = -sign(c1) ||c|| avoids cancellation.
    let alpha = if c[0] >= 0.0 { -norm } else { norm };
    let mut v = c.to_vec();
    v[0] -= alpha;
    let vtv: f64 = v.iter().map(|x| x * x).sum();
    let mut z = Matrix::zeros(q, q.saturating_sub(1));
    for i in 0..q {
        for j in 1..q {
            let h = if i == j { 1.0 } else { 0.0 } - 2.0 * v[i] * v[j] / vtv;
            z[(i, j - 1)] = h;
        }
    }
    Ok(z)
}

/// Numerical rank of a symmetric positive semidefinite matrix by counting
/// pivots of a diagonally pivoted Cholesky factorization that exceed
/// `rel_tol * max|diag|`.
pub fn psd_rank(a: &Matrix, rel_tol: f64) -> usize {
    let n = a.rows();
    let scale = (0..n).fold(0.0_f64, |m, i| m.max(a[(i, i)].abs()));
    if scale == 0.0 {
        return 0;
    }
    let tol = rel_tol * scale;
    let mut work = a.clone();
    let mut remaining: Vec<usize> = (0..n).collect();
    let mut rank = 0;
    while !remaining.is_empty() {
        let (pos, &piv) = remaining
            .iter()
            .enumerate()
            .max_by(|(_, &x), (_, &y)| work[(x, x)].total_cmp(&work[(y, y)]))
            .expect("non-empty");
        let d = work[(piv, piv)];
        if d <= tol {
            break;
        }
        rank += 1;
        remaining.swap_remove(pos);
        // Schur complement update on the remaining indices.
        for &i in &remaining {
            let f = work[(i, piv)] / d;
            for &j in &remaining {
                work[(i, j)] -= f * work[(piv, j)];
            }
        }
    }
    rank
}

/// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.symmetrized();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)] * m[(i, j)]).sum();
        let total: f64 = m.as_slice().iter().map(|v| v * v).sum();
        if off <= 1e-30 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Solves `L X = B` column by column.
pub fn solve_lower_matrix(l: &LowerTriangular, b: &Matrix, mode: TriangularMode) -> Matrix {
    let mut out = Matrix::zeros(b.rows(), b.cols());
    for j in 0..b.cols() {
        let col = solve_triangular(l, &b.column(j), mode).expect("dimension checked by caller");
        for (i, v) in col.into_iter().enumerate() {
            out[(i, j)] = v;
        }
    }
    out
}

/// Reverse-mode adjoint of `L = chol(A)`.
///
/// Given the adjoint `l_bar` of the lower factor, returns the symmetric `G`
/// with `df = tr(G dA)` for every symmetric perturbation `dA`:
/// `G = L⁻ᵀ sym(Φ(Lᵀ L̄)) L⁻¹`, where `Φ` keeps the lower triangle and halves
/// the diagonal.
pub fn cholesky_adjoint(l: &LowerTriangular, l_bar: &Matrix) -> Matrix {
    let n = l.dim();
    // M = Lᵀ L̄, restricted to its lower triangle with halved diagonal.
    let mut phi = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            // (Lᵀ L̄)_ij = Σ_k L_ki L̄_kj, with L_ki = 0 for k < i and L̄_kj = 0 for k < j.
            let mut s = 0.0;
            for k in i..n {
                s += l.get(k, i) * l_bar[(k, j)];
            }
            phi[(i, j)] = if i == j { 0.5 * s } else { s };
        }
    }
    let sym = phi.symmetrized();
    // G = L⁻ᵀ S L⁻¹: first Y = L⁻ᵀ S, then G = (L⁻ᵀ Yᵀ)ᵀ = Y L⁻¹.
    let y = solve_lower_matrix(l, &sym, TriangularMode::LowerTransposed);
    let g = solve_lower_matrix(l, &y.transpose(), TriangularMode::LowerTransposed);
    g.symmetrized()
}
