//! Dense real linear algebra.
//!
//! Everything is row-major `f64`. Solves go through a Cholesky factorization
//! with escalating diagonal jitter, which is all the ridge-regularized systems
//! in this crate need. Vectorization is column-major throughout.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Relative symmetry tolerance accepted by [`solve_spd`].
pub const SYMMETRY_TOL: f64 = 1e-10;
/// First jitter is `JITTER_BASE * trace / dim`.
pub const JITTER_BASE: f64 = 1e-12;
/// Jitter retries (each ×10) before giving up.
pub const JITTER_RETRIES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dims(cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// A single column.
    pub fn column(v: &[f64]) -> Self {
        Matrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Matrix product. Panics if the inner dimensions disagree.
    pub fn matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "matmul: inner dimensions differ");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, r) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * r;
                }
            }
        }
        out
    }

    /// `selfᵀ · rhs` without forming the transpose.
    pub fn tr_matmul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.rows, rhs.rows, "tr_matmul: row counts differ");
        let mut out = Matrix::zeros(self.cols, rhs.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = rhs.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// Matrix-vector product. Panics on length mismatch.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec: length mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `selfᵀ · v`.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tr_mul_vec: length mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    pub fn add(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "add: shape mismatch"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "sub: shape mismatch"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    /// `self += s · other`.
    pub fn add_scaled(&mut self, s: f64, other: &Matrix) {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "add_scaled: shape mismatch"
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// Elementwise product.
    pub fn hadamard(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            (self.rows, self.cols),
            (rhs.rows, rhs.cols),
            "hadamard: shape mismatch"
        );
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a * b)
                .collect(),
        }
    }

    pub fn add_diagonal(&mut self, s: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += s;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|a| a * a).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }

    /// Largest `|a_ij - a_ji|`; `None` for non-square matrices.
    pub fn asymmetry(&self) -> Option<f64> {
        if !self.is_square() {
            return None;
        }
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        Some(worst)
    }

    /// Replaces the matrix with `(A + Aᵀ)/2`.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square(), "symmetrize: matrix not square");
        for i in 0..self.rows {
            for j in i + 1..self.cols {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = avg;
                self[(j, i)] = avg;
            }
        }
    }

    /// Copies the block starting at `(r0, c0)`.
    pub fn submatrix(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |i, j| self[(r0 + i, c0 + j)])
    }

    /// Copies rows and columns selected by `idx`.
    pub fn select(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(idx.len(), idx.len(), |i, j| self[(idx[i], idx[j])])
    }

    /// Writes `block` with its top-left corner at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &Matrix) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] = block[(i, j)];
            }
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Lower-triangular Cholesky factor of `M + jitter·I`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
    jitter: f64,
}

impl Cholesky {
    /// Factors a symmetric matrix, adding diagonal jitter only if the plain
    /// factorization breaks down. Jitter starts at `1e-12·trace/dim` and grows
    /// tenfold per retry, six retries at most.
    pub fn factor(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dims(m.rows(), m.cols()));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("matrix"));
        }
        let asym = m.asymmetry().unwrap_or(0.0);
        if asym > SYMMETRY_TOL * m.max_abs() {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let n = m.rows();
        if n == 0 {
            return Ok(Cholesky {
                l: Matrix::zeros(0, 0),
                jitter: 0.0,
            });
        }
        let base = JITTER_BASE * (m.trace().abs() / n as f64).max(f64::MIN_POSITIVE);
        let mut jitter = 0.0;
        for _ in 0..=JITTER_RETRIES {
            if let Some(l) = try_cholesky(m, jitter) {
                return Ok(Cholesky { l, jitter });
            }
            jitter = if jitter == 0.0 { base } else { jitter * 10.0 };
        }
        Err(Error::NotPositiveDefinite)
    }

    /// Diagonal shift that was needed for the factorization to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim(), "solve_vec: length mismatch");
        let n = self.dim();
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let s = dot(&l.row(i)[..i], &y[..i]);
            y[i] = (y[i] - s) / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    pub fn solve(&self, rhs: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(rhs.rows(), rhs.cols());
        for j in 0..rhs.cols() {
            let x = self.solve_vec(&rhs.col(j));
            for (i, v) in x.into_iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

fn try_cholesky(m: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)] + jitter - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        d = libm::sqrt(d);
        l[(j, j)] = d;
        for i in j + 1..n {
            let s = m[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Solves `M X = rhs` for symmetric positive (semi)definite `M`.
///
/// Falls back to jittered Cholesky when needed, then applies up to two steps
/// of iterative refinement against the unjittered `M`, keeping a step only if
/// it reduces the residual.
pub fn solve_spd(m: &Matrix, rhs: &Matrix) -> Result<Matrix> {
    if rhs.rows() != m.rows() {
        return Err(Error::dims(m.rows(), rhs.rows()));
    }
    if !rhs.is_finite() {
        return Err(Error::NonFinite("right-hand side"));
    }
    let chol = Cholesky::factor(m)?;
    let mut x = chol.solve(rhs);
    if chol.jitter() > 0.0 {
        let mut res = rhs.sub(&m.matmul(&x));
        let mut res_norm = res.frobenius_norm();
        for _ in 0..2 {
            let candidate = x.add(&chol.solve(&res));
            let cand_res = rhs.sub(&m.matmul(&candidate));
            let cand_norm = cand_res.frobenius_norm();
            if cand_norm >= res_norm {
                break;
            }
            x = candidate;
            res = cand_res;
            res_norm = cand_norm;
        }
    }
    Ok(x)
}

/// Minimizes `‖A X − B‖_F` through the normal equations `AᵀA X = AᵀB`.
pub fn solve_least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::dims(a.rows(), b.rows()));
    }
    if a.rows() < a.cols() {
        return Err(Error::dims(a.cols(), a.rows()));
    }
    let mut ata = a.tr_matmul(a);
    ata.symmetrize();
    let atb = a.tr_matmul(b);
    solve_spd(&ata, &atb).map_err(|e| match e {
        Error::NotPositiveDefinite => Error::RankDeficient,
        other => other,
    })
}

/// Kronecker product; block `(i, j)` equals `a_ij · B`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (p, q) = (b.rows(), b.cols());
    Matrix::from_fn(a.rows() * p, a.cols() * q, |i, j| {
        a[(i / p, j / q)] * b[(i % p, j % q)]
    })
}

/// Column-major stacking.
pub fn vec(a: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.rows() * a.cols());
    for j in 0..a.cols() {
        for i in 0..a.rows() {
            out.push(a[(i, j)]);
        }
    }
    out
}

/// Inverse of [`vec`].
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::dims(rows * cols, v.len()));
    }
    Ok(Matrix::from_fn(rows, cols, |i, j| v[j * rows + i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{gram, KernelSpec};
    use crate::rng;
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng::seeded(seed);
        Matrix::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
    }

    fn residual(m: &Matrix, x: &Matrix, rhs: &Matrix) -> f64 {
        m.matmul(x).sub(rhs).frobenius_norm()
    }

    #[test]
    fn identity_solve() {
        let x = solve_spd(&Matrix::identity(3), &Matrix::column(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_solve() {
        let m = Matrix::from_rows(&[[2.0, 0.0], [0.0, 4.0]]).unwrap();
        let x = solve_spd(&m, &Matrix::column(&[2.0, 8.0])).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15 && (x[(1, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_gram_solve_residual() {
        let pts: Vec<[f64; 1]> = [0.0, 0.1, 0.2, 0.3, 0.4].iter().map(|&x| [x]).collect();
        let g = gram(&KernelSpec::gaussian(100.0).unwrap(), &pts).unwrap();
        let rhs = Matrix::column(&[1.0; 5]);
        let x = solve_spd(&g, &rhs).unwrap();
        assert!(residual(&g, &x, &rhs) < 1e-8);
    }

    #[test]
    fn rejects_asymmetric_and_mismatched() {
        let m = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]).unwrap();
        assert!(matches!(
            solve_spd(&m, &Matrix::column(&[1.0, 1.0])),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            solve_spd(&Matrix::identity(2), &Matrix::column(&[1.0; 3])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn negative_definite_exhausts_jitter() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]).unwrap();
        assert_eq!(
            solve_spd(&m, &Matrix::column(&[1.0, 1.0])),
            Err(Error::NotPositiveDefinite)
        );
    }

    #[test]
    fn jitter_stays_below_cap() {
        // rank-one PSD matrix needs jitter, never more than 1e-6·trace/dim
        let v = Matrix::column(&[1.0, 2.0, 3.0, 4.0]);
        let m = v.matmul(&v.transpose());
        let chol = Cholesky::factor(&m).unwrap();
        assert!(chol.jitter() > 0.0);
        assert!(chol.jitter() <= 1e-6 * m.trace() / 4.0);
    }

    #[test]
    fn least_squares_cases() {
        let x = solve_least_squares(&Matrix::identity(2), &Matrix::column(&[1.0, 2.0])).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14 && (x[(1, 0)] - 2.0).abs() < 1e-14);

        let a = Matrix::column(&[1.0, 1.0]);
        let x = solve_least_squares(&a, &Matrix::column(&[0.0, 2.0])).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14);

        let a = random_matrix(50, 6, 11);
        let x0 = random_matrix(6, 2, 12);
        let b = a.matmul(&x0);
        let x = solve_least_squares(&a, &b).unwrap();
        assert!(x.sub(&x0).max_abs() < 1e-8);
        let grad = a.tr_matmul(&a.matmul(&x).sub(&b));
        assert!(grad.frobenius_norm() <= 1e-6 * a.tr_matmul(&b).frobenius_norm());
    }

    #[test]
    fn kron_examples() {
        let b = random_matrix(2, 3, 1);
        assert_eq!(kron(&Matrix::identity(1), &b), b);
        let k = kron(
            &Matrix::from_rows(&[[1.0, 2.0]]).unwrap(),
            &Matrix::identity(2),
        );
        let expected = Matrix::from_rows(&[[1.0, 0.0, 2.0, 0.0], [0.0, 1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(k, expected);
    }

    #[test]
    fn kron_vec_identity_on_psi_form() {
        // vec(R Ψ) = (Ψᵀ ⊗ I) vec(R), checked entry by entry
        let r = random_matrix(3, 3, 21);
        let psi = random_matrix(3, 3, 22);
        let lhs = vec(&r.matmul(&psi));
        let rhs = kron(&psi.transpose(), &Matrix::identity(3)).mul_vec(&vec(&r));
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn vec_examples() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(vec(&a), [1.0, 3.0, 2.0, 4.0]);
        assert_eq!(vec(&Matrix::column(&[7.5])), [7.5]);
        let a = random_matrix(4, 6, 5);
        assert_eq!(unvec(&vec(&a), 4, 6).unwrap(), a);
        assert!(unvec(&[1.0, 2.0], 3, 1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn spd_residual_bound(dim in 1usize..50, seed in any::<u64>()) {
                let a = random_matrix(dim, dim, seed);
                let mut m = a.tr_matmul(&a);
                m.add_diagonal(1e-3);
                m.symmetrize();
                let rhs = random_matrix(dim, 2, seed ^ 0x9e37);
                let x = solve_spd(&m, &rhs).unwrap();
                prop_assert!(residual(&m, &x, &rhs) <= 1e-8 * (1.0 + rhs.frobenius_norm()));
            }

            #[test]
            fn vec_axb_identity(p in 1usize..5, q in 1usize..5, r in 1usize..5, s in 1usize..5, seed in any::<u64>()) {
                let a = random_matrix(p, q, seed);
                let x = random_matrix(q, r, seed.wrapping_add(1));
                let b = random_matrix(r, s, seed.wrapping_add(2));
                let lhs = vec(&a.matmul(&x).matmul(&b));
                let rhs = kron(&b.transpose(), &a).mul_vec(&vec(&x));
                for (u, v) in lhs.iter().zip(&rhs) {
                    prop_assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }
}
