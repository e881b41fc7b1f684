//! Dense matrices and singular value decomposition.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration: column pairs of the
//! working matrix are rotated until all pairs are numerically orthogonal,
//! after which the column norms are the singular values. It is accurate
//! for small singular values and needs no external LAPACK.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// `u * v^T` for column vectors `u`, `v`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(src) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "vector of length {} does not match {} columns",
                x.len(),
                self.cols
            )));
        }
        Ok((0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape(format!(
                "cannot subtract {}x{} from {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Thin SVD `m = u * diag(s) * v^T`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// `rows x r`, orthonormal columns.
    pub u: Matrix,
    /// Non-increasing, non-negative.
    pub s: Vec<f64>,
    /// `cols x r`, orthonormal columns.
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u * diag(s) * v^T` using the first `k` triplets.
    pub fn reconstruct_rank(&self, k: usize) -> Matrix {
        let k = k.min(self.s.len());
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(m, n);
        for r in 0..k {
            let s = self.s[r];
            for i in 0..m {
                let us = self.u.get(i, r) * s;
                if us == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += us * self.v.get(j, r);
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_rank(self.s.len())
    }

    /// Sum of squared singular values beyond the first `k`.
    pub fn tail_energy(&self, k: usize) -> f64 {
        self.s.iter().skip(k).map(|s| s * s).sum()
    }

    /// Keeps only the leading `k` triplets.
    pub fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.s.len());
        self.s.truncate(k);
        self.u = keep_columns(&self.u, k);
        self.v = keep_columns(&self.v, k);
        self
    }
}

fn keep_columns(m: &Matrix, k: usize) -> Matrix {
    Matrix::from_fn(m.rows(), k, |i, j| m.get(i, j))
}

/// Sweep cap for the Jacobi iteration.
pub const MAX_SWEEPS: usize = 60;

/// Off-diagonal floor relative to `||m||_F`: column pairs whose inner
/// product is below `(OFF_DIAGONAL_TOL * ||m||_F)^2` count as orthogonal.
pub const OFF_DIAGONAL_TOL: f64 = 1e-12;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn rotate(p: &mut [f64], q: &mut [f64], c: f64, s: f64) {
    for (x, y) in p.iter_mut().zip(q.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Orthonormal completion: replaces `cols[j]` for every `j` in `missing`
/// with a unit vector orthogonal to all other accepted columns.
fn complete_basis(cols: &mut [Vec<f64>], accepted: &mut Vec<usize>, missing: &[usize], dim: usize) {
    for &j in missing {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..dim {
            let mut cand = vec![0.0; dim];
            cand[e] = 1.0;
            for _ in 0..2 {
                for &a in accepted.iter() {
                    let proj = dot(&cand, &cols[a]);
                    for (c, &u) in cand.iter_mut().zip(&cols[a]) {
                        *c -= proj * u;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, cand));
            }
        }
        let (norm, mut cand) = best.expect("dimension is positive");
        for c in cand.iter_mut() {
            *c /= norm;
        }
        cols[j] = cand;
        accepted.push(j);
    }
}

type Columns = Vec<Vec<f64>>;

/// SVD of a tall (`rows >= cols`) matrix given as columns.
fn jacobi_tall(mut cols: Columns, rows: usize, norm: f64) -> Result<(Columns, Vec<f64>, Columns)> {
    let n = cols.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    let rel_tol = f64::EPSILON * (rows as f64).max(1.0);
    let floor = (OFF_DIAGONAL_TOL * norm).powi(2);
    let mut converged = n < 2;
    for _sweep in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (head, tail) = cols.split_at_mut(q);
                let (cp, cq) = (&mut head[p], &mut tail[0]);
                let alpha = dot(cp, cp);
                let beta = dot(cq, cq);
                let gamma = dot(cp, cq);
                if gamma.abs() <= floor || gamma.abs() <= rel_tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(cp, cq, c, s);
                let (vh, vt) = v.split_at_mut(q);
                rotate(&mut vh[p], &mut vt[0], c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD did not converge within {MAX_SWEEPS} sweeps"
        )));
    }

    let mut sigma: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let mut u: Vec<Vec<f64>> = order.iter().map(|&j| cols[j].clone()).collect();
    let v: Vec<Vec<f64>> = order.iter().map(|&j| v[j].clone()).collect();
    sigma = order.iter().map(|&j| sigma[j]).collect();

    // Columns at the off-diagonal floor carry no reliable direction.
    let null_level = OFF_DIAGONAL_TOL * norm;
    let mut accepted = Vec::new();
    let mut missing = Vec::new();
    for (j, col) in u.iter_mut().enumerate() {
        if sigma[j] > null_level && sigma[j] > 0.0 {
            for x in col.iter_mut() {
                *x /= sigma[j];
            }
            accepted.push(j);
        } else {
            missing.push(j);
        }
    }
    complete_basis(&mut u, &mut accepted, &missing, rows);
    Ok((u, sigma, v))
}

fn columns_to_matrix(cols: &[Vec<f64>], rows: usize) -> Matrix {
    Matrix::from_fn(rows, cols.len(), |i, j| cols[j][i])
}

/// Full thin SVD: `r = min(rows, cols)` triplets.
pub fn svd_full(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::Numeric("SVD input contains non-finite values".into()));
    }
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::shape("SVD input has an empty dimension"));
    }
    let norm = m.frobenius_norm();
    let transposed = m.rows() < m.cols();
    let work = if transposed { m.transpose() } else { m.clone() };
    let (rows, n) = (work.rows(), work.cols());
    let cols: Vec<Vec<f64>> = (0..n).map(|j| work.column(j)).collect();
    let (left, s, right) = jacobi_tall(cols, rows, norm)?;

    let (mut u, mut v) = if transposed {
        (right, left)
    } else {
        (left, right)
    };
    // Deterministic signs: first significant entry of each left vector is >= 0.
    for (uc, vc) in u.iter_mut().zip(v.iter_mut()) {
        if let Some(&first) = uc.iter().find(|x| x.abs() > 1e-8) {
            if first < 0.0 {
                uc.iter_mut().for_each(|x| *x = -*x);
                vc.iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
    Ok(SvdResult {
        u: columns_to_matrix(&u, m.rows()),
        s,
        v: columns_to_matrix(&v, m.cols()),
    })
}

/// Leading `rank` singular triplets.
pub fn svd_truncated(m: &Matrix, rank: usize) -> Result<SvdResult> {
    let max = m.rows().min(m.cols());
    if rank == 0 || rank > max {
        return Err(Error::Parameter(format!(
            "truncation rank {rank} outside 1..={max}"
        )));
    }
    Ok(svd_full(m)?.truncate(rank))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_orthonormal(m: &Matrix) {
        let g = m.transpose().matmul(m).unwrap();
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - want).abs() < 1e-10, "gram[{i},{j}] = {}", g.get(i, j));
            }
        }
    }

    #[test]
    fn identity_singular_values() {
        let svd = svd_full(&Matrix::identity(3)).unwrap();
        assert_eq!(svd.s, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_singular_values_sorted() {
        let svd = svd_full(&Matrix::from_diag(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!(svd.s, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn rank_one_truncation_is_exact() {
        let m = Matrix::outer(&[1.0, -2.0, 0.5], &[3.0, 1.0, 4.0, 1.0]);
        let svd = svd_truncated(&m, 1).unwrap();
        let resid = m.sub(&svd.reconstruct()).unwrap().frobenius_norm();
        assert!(resid <= 1e-10);
    }

    #[test]
    fn rank_deficient_has_orthonormal_factors() {
        let m = Matrix::outer(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0]);
        let svd = svd_full(&m).unwrap();
        assert_orthonormal(&svd.u);
        assert_orthonormal(&svd.v);
        assert!(svd.s[1] < 1e-12 * svd.s[0]);
        let wide = svd_full(&m.transpose()).unwrap();
        assert_orthonormal(&wide.u);
        assert_orthonormal(&wide.v);
    }

    #[test]
    fn zero_matrix() {
        let svd = svd_full(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(svd.s, vec![0.0, 0.0]);
        assert_orthonormal(&svd.u);
        assert_orthonormal(&svd.v);
    }

    #[test]
    fn truncated_rank_bounds() {
        let m = Matrix::identity(3);
        assert!(matches!(svd_truncated(&m, 0), Err(Error::Parameter(_))));
        assert!(matches!(svd_truncated(&m, 4), Err(Error::Parameter(_))));
        assert_eq!(svd_truncated(&m, 3).unwrap().s, svd_full(&m).unwrap().s);
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = Matrix::new(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(svd_full(&m), Err(Error::Numeric(_))));
    }

    #[test]
    fn left_vectors_have_non_negative_lead() {
        let m = Matrix::new(2, 2, vec![-1.0, 0.0, 0.0, -2.0]).unwrap();
        let svd = svd_full(&m).unwrap();
        for r in 0..2 {
            let col = svd.u.column(r);
            let lead = col.iter().find(|x| x.abs() > 1e-8).unwrap();
            assert!(*lead > 0.0);
        }
        let resid = m.sub(&svd.reconstruct()).unwrap().frobenius_norm();
        assert!(resid < 1e-14);
    }
}
