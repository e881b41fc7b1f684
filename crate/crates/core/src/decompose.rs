//! Nearest sum-of-Kronecker-products approximation of N-dimensional tensors.
//!
//! A tensor `w` of shape `a * b` (elementwise) is rearranged into a matrix
//! whose row `p` is the flattened `p`-th non-overlapping patch of shape `b`.
//! Under that rearrangement `kron(a, b)` becomes the rank-one matrix
//! `vec(a) vec(b)^T`, and the Frobenius norm is unchanged, so the best
//! `r_hat`-term approximation is the rank-`r_hat` truncated SVD.

use crate::error::{Error, Result};
use crate::linalg::{svd_full, Matrix, SvdResult};
use crate::tensor::{fold, kron, numel, unfold, DenseTensor};

/// Shapes of the two Kronecker factors. `shape_a[n] * shape_b[n]` is the
/// target extent along dimension `n`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactorShapePair {
    pub shape_a: Vec<usize>,
    pub shape_b: Vec<usize>,
}

impl FactorShapePair {
    pub fn new(shape_a: Vec<usize>, shape_b: Vec<usize>) -> Result<Self> {
        if shape_a.len() != shape_b.len() {
            return Err(Error::shape(format!(
                "factor shapes {shape_a:?} and {shape_b:?} differ in rank"
            )));
        }
        if shape_a.is_empty() {
            return Err(Error::shape("factor shapes must have at least one dimension"));
        }
        for (n, (&a, &b)) in shape_a.iter().zip(&shape_b).enumerate() {
            if a == 0 || b == 0 {
                return Err(Error::shape_at(n, format!("factor extent 0 in dimension {n}")));
            }
        }
        Ok(Self { shape_a, shape_b })
    }

    /// Pair for `target` whose B factor has shape `shape_b`.
    pub fn from_shape_b(target: &[usize], shape_b: &[usize]) -> Result<Self> {
        Self::complement(target, shape_b, false)
    }

    /// Pair for `target` whose A factor has shape `shape_a`.
    pub fn from_shape_a(target: &[usize], shape_a: &[usize]) -> Result<Self> {
        Self::complement(target, shape_a, true)
    }

    fn complement(target: &[usize], known: &[usize], known_is_a: bool) -> Result<Self> {
        if target.len() != known.len() {
            return Err(Error::shape(format!(
                "factor shape {known:?} has {} dimensions, target {target:?} has {}",
                known.len(),
                target.len()
            )));
        }
        let mut other = Vec::with_capacity(target.len());
        for (n, (&t, &k)) in target.iter().zip(known).enumerate() {
            if k == 0 || t % k != 0 {
                return Err(Error::shape_at(
                    n,
                    format!("factor extent {k} does not divide dimension {n} of extent {t}"),
                ));
            }
            other.push(t / k);
        }
        if known_is_a {
            Self::new(known.to_vec(), other)
        } else {
            Self::new(other, known.to_vec())
        }
    }

    pub fn ndim(&self) -> usize {
        self.shape_a.len()
    }

    pub fn target_shape(&self) -> Vec<usize> {
        self.shape_a.iter().zip(&self.shape_b).map(|(a, b)| a * b).collect()
    }

    pub fn len_a(&self) -> usize {
        numel(&self.shape_a)
    }

    pub fn len_b(&self) -> usize {
        numel(&self.shape_b)
    }

    /// Number of Kronecker terms needed to represent any tensor of the
    /// target shape exactly with this pair.
    pub fn full_rank(&self) -> usize {
        self.len_a().min(self.len_b())
    }

    /// Checks that this pair tiles `target`, naming the first bad dimension.
    pub fn validate_for(&self, target: &[usize]) -> Result<()> {
        if target.len() != self.ndim() {
            return Err(Error::shape(format!(
                "pair has {} dimensions, tensor has {}",
                self.ndim(),
                target.len()
            )));
        }
        for (n, ((&a, &b), &t)) in self.shape_a.iter().zip(&self.shape_b).zip(target).enumerate() {
            if a * b != t {
                return Err(Error::shape_at(
                    n,
                    format!("dimension {n}: {a} x {b} = {} does not match extent {t}", a * b),
                ));
            }
        }
        Ok(())
    }
}

/// Rearranges `w` into the `(prod a) x (prod b)` matrix whose rows are the
/// flattened non-overlapping patches of shape `shape_b`.
pub fn rearrange_w(w: &DenseTensor, shape_b: &[usize]) -> Result<Matrix> {
    let patches = unfold(w, shape_b)?;
    let rows = patches.shape()[0];
    let cols = numel(shape_b);
    Matrix::new(rows, cols, patches.into_data())
}

/// Inverse of [`rearrange_w`].
pub fn unrearrange_w(m: &Matrix, pair: &FactorShapePair) -> Result<DenseTensor> {
    if m.rows() != pair.len_a() || m.cols() != pair.len_b() {
        return Err(Error::shape(format!(
            "{}x{} matrix does not match pair {:?} / {:?}",
            m.rows(),
            m.cols(),
            pair.shape_a,
            pair.shape_b
        )));
    }
    let mut shape = vec![m.rows()];
    shape.extend_from_slice(&pair.shape_b);
    let patches = DenseTensor::new(shape, m.data().to_vec())?;
    fold(&patches, &pair.target_shape())
}

/// Flattens an A factor in patch-grid order (row-major).
pub fn rearrange_a(a: &DenseTensor) -> Vec<f64> {
    a.data().to_vec()
}

/// Flattens a B factor in within-patch order (row-major).
pub fn rearrange_b(b: &DenseTensor) -> Vec<f64> {
    b.data().to_vec()
}

/// `r_hat` Kronecker factor pairs approximating one tensor.
#[derive(Clone, Debug)]
pub struct GkpdDecomposition {
    pub target_shape: Vec<usize>,
    pub pair: FactorShapePair,
    pub r_hat: usize,
    pub factors_a: Vec<DenseTensor>,
    pub factors_b: Vec<DenseTensor>,
    /// Full singular spectrum of the rearranged tensor.
    pub singular_values: Vec<f64>,
    /// Sum of the squared discarded singular values.
    pub singular_tail_sq: f64,
    /// Frobenius distance between the input and [`reconstruct`] of this decomposition.
    pub achieved_error: f64,
}

impl GkpdDecomposition {
    /// Builds a decomposition from explicit factors, e.g. ones loaded from disk.
    /// Spectral fields are left empty and errors zero.
    pub fn from_factors(factors_a: Vec<DenseTensor>, factors_b: Vec<DenseTensor>) -> Result<Self> {
        if factors_a.is_empty() || factors_a.len() != factors_b.len() {
            return Err(Error::shape(format!(
                "need equally many A and B factors, got {} and {}",
                factors_a.len(),
                factors_b.len()
            )));
        }
        let pair = FactorShapePair::new(
            factors_a[0].shape().to_vec(),
            factors_b[0].shape().to_vec(),
        )?;
        for (r, (a, b)) in factors_a.iter().zip(&factors_b).enumerate() {
            if a.shape() != pair.shape_a.as_slice() || b.shape() != pair.shape_b.as_slice() {
                return Err(Error::shape(format!(
                    "term {r} has shapes {:?} / {:?}, expected {:?} / {:?}",
                    a.shape(),
                    b.shape(),
                    pair.shape_a,
                    pair.shape_b
                )));
            }
        }
        Ok(Self {
            target_shape: pair.target_shape(),
            r_hat: factors_a.len(),
            pair,
            factors_a,
            factors_b,
            singular_values: Vec::new(),
            singular_tail_sq: 0.0,
            achieved_error: 0.0,
        })
    }

    /// Number of stored scalars across all factors.
    pub fn stored_params(&self) -> usize {
        self.factors_a.iter().map(DenseTensor::len).sum::<usize>()
            + self.factors_b.iter().map(DenseTensor::len).sum::<usize>()
    }

    pub fn reconstruct(&self) -> DenseTensor {
        reconstruct(self)
    }
}

/// Sum over terms of `kron(factors_a[r], factors_b[r])`.
pub fn reconstruct(d: &GkpdDecomposition) -> DenseTensor {
    let mut out = DenseTensor::zeros(&d.target_shape).expect("target shape is valid");
    for (a, b) in d.factors_a.iter().zip(&d.factors_b) {
        let term = kron(a, b).expect("factor ranks agree");
        out.add_assign(&term).expect("factor shapes tile the target");
    }
    out
}

pub fn reconstruction_error(w: &DenseTensor, d: &GkpdDecomposition) -> Result<f64> {
    if w.shape() != d.target_shape.as_slice() {
        return Err(Error::shape(format!(
            "tensor shape {:?} does not match decomposition target {:?}",
            w.shape(),
            d.target_shape
        )));
    }
    Ok(w.sub(&reconstruct(d))?.norm())
}

/// Singular values below this fraction of the largest are treated as zero
/// and their factors returned as zero tensors.
pub const NUMERICAL_RANK_TOL: f64 = 1e-13;

/// Best `r_hat`-term Kronecker approximation of `w` for the given pair.
pub fn gkpd_solve(w: &DenseTensor, pair: &FactorShapePair, r_hat: usize) -> Result<GkpdDecomposition> {
    pair.validate_for(w.shape())?;
    check_r_hat(pair, r_hat)?;
    if !w.is_finite() {
        return Err(Error::Numeric("tensor contains non-finite values".into()));
    }
    let svd = svd_full(&rearrange_w(w, &pair.shape_b)?)?;
    gkpd_from_svd(w, pair, &svd, r_hat)
}

fn check_r_hat(pair: &FactorShapePair, r_hat: usize) -> Result<()> {
    let full = pair.full_rank();
    if r_hat == 0 || r_hat > full {
        return Err(Error::Parameter(format!(
            "r_hat = {r_hat} outside 1..={full} for pair {:?} / {:?}",
            pair.shape_a, pair.shape_b
        )));
    }
    Ok(())
}

/// Builds the decomposition from a precomputed SVD of `rearrange_w(w, pair.shape_b)`.
///
/// Term `r` stores `u_r * sqrt(s_r)` as A and `v_r * sqrt(s_r)` as B.
pub fn gkpd_from_svd(
    w: &DenseTensor,
    pair: &FactorShapePair,
    svd: &SvdResult,
    r_hat: usize,
) -> Result<GkpdDecomposition> {
    pair.validate_for(w.shape())?;
    check_r_hat(pair, r_hat)?;
    if svd.u.rows() != pair.len_a() || svd.v.rows() != pair.len_b() {
        return Err(Error::shape("SVD does not belong to this factor pair"));
    }
    let s_max = svd.s.first().copied().unwrap_or(0.0);
    let mut factors_a = Vec::with_capacity(r_hat);
    let mut factors_b = Vec::with_capacity(r_hat);
    for r in 0..r_hat {
        let s = svd.s[r];
        let (a, b) = if s > NUMERICAL_RANK_TOL * s_max {
            let scale = s.sqrt();
            (
                svd.u.column(r).into_iter().map(|x| x * scale).collect(),
                svd.v.column(r).into_iter().map(|x| x * scale).collect(),
            )
        } else {
            (vec![0.0; pair.len_a()], vec![0.0; pair.len_b()])
        };
        factors_a.push(DenseTensor::new(pair.shape_a.clone(), a)?);
        factors_b.push(DenseTensor::new(pair.shape_b.clone(), b)?);
    }
    let mut d = GkpdDecomposition {
        target_shape: w.shape().to_vec(),
        pair: pair.clone(),
        r_hat,
        factors_a,
        factors_b,
        singular_values: svd.s.clone(),
        singular_tail_sq: svd.tail_energy(r_hat),
        achieved_error: 0.0,
    };
    d.achieved_error = reconstruction_error(w, &d)?;
    Ok(d)
}
