//! Test-only oracles and generators. Nothing here calls into the
//! implementation paths it is used to check.
#![allow(dead_code)]

use gkpd::{DenseTensor, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> DenseTensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseTensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|&d| n.is_multiple_of(d)).collect()
}

pub fn random_divisor(rng: &mut impl Rng, n: usize) -> usize {
    let d = divisors(n);
    d[rng.random_range(0..d.len())]
}

/// SplitMix64 stream mapped to [-1, 1); stable across crate versions,
/// used to generate golden inputs.
pub struct SplitMix64(pub u64);

impl SplitMix64 {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    pub fn tensor(&mut self, shape: &[usize]) -> DenseTensor {
        let n: usize = shape.iter().product();
        DenseTensor::new(shape.to_vec(), (0..n).map(|_| self.next_f64()).collect()).unwrap()
    }
}

// ---------------------------------------------------------------------------
// Index-definition oracles
// ---------------------------------------------------------------------------

/// Row-major multi-index of a flat offset.
pub fn unravel(mut off: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for n in (0..shape.len()).rev() {
        idx[n] = off % shape[n];
        off /= shape[n];
    }
    idx
}

pub fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &s)| acc * s + i)
}

/// Kronecker product straight from the element definition
/// `out[i] = a[i / b_n] * b[i % b_n]`.
pub fn kron_by_definition(a: &DenseTensor, b: &DenseTensor) -> DenseTensor {
    let shape: Vec<usize> = a.shape().iter().zip(b.shape()).map(|(x, y)| x * y).collect();
    let n: usize = shape.iter().product();
    let mut data = vec![0.0; n];
    for (off, v) in data.iter_mut().enumerate() {
        let i = unravel(off, &shape);
        let j: Vec<usize> = i.iter().zip(b.shape()).map(|(&i, &bn)| i / bn).collect();
        let k: Vec<usize> = i.iter().zip(b.shape()).map(|(&i, &bn)| i % bn).collect();
        *v = a.data()[ravel(&j, a.shape())] * b.data()[ravel(&k, b.shape())];
    }
    DenseTensor::new(shape, data).unwrap()
}

/// Explicit slice `w[start .. start + extent]` along every dimension.
pub fn slice(w: &DenseTensor, start: &[usize], extent: &[usize]) -> Vec<f64> {
    let n: usize = extent.iter().product();
    (0..n)
        .map(|off| {
            let q = unravel(off, extent);
            let i: Vec<usize> = q.iter().zip(start).map(|(q, s)| q + s).collect();
            w.data()[ravel(&i, w.shape())]
        })
        .collect()
}

/// Rearranged matrix built by slicing patch `p` (row-major over the patch
/// grid) out of `w` one element at a time.
pub fn rearrange_by_slicing(w: &DenseTensor, shape_b: &[usize]) -> Matrix {
    let grid: Vec<usize> = w.shape().iter().zip(shape_b).map(|(s, b)| s / b).collect();
    let rows: usize = grid.iter().product();
    let cols: usize = shape_b.iter().product();
    let mut data = Vec::with_capacity(rows * cols);
    for p in 0..rows {
        let pidx = unravel(p, &grid);
        let start: Vec<usize> = pidx.iter().zip(shape_b).map(|(p, b)| p * b).collect();
        data.extend(slice(w, &start, shape_b));
    }
    Matrix::new(rows, cols, data).unwrap()
}

pub fn norm_by_loop(w: &DenseTensor) -> f64 {
    let mut s = 0.0;
    for &v in w.data() {
        s += v * v;
    }
    s.sqrt()
}

// ---------------------------------------------------------------------------
// Linear algebra oracles
// ---------------------------------------------------------------------------

/// Eigenvalues of a symmetric matrix by the classical cyclic Jacobi method.
#[allow(clippy::needless_range_loop)]
pub fn symmetric_eigenvalues(g: &Matrix) -> Vec<f64> {
    let n = g.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| g.row(i).to_vec()).collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

/// Singular values via eigenvalues of the smaller Gram matrix.
pub fn singular_values_by_gram(m: &Matrix) -> Vec<f64> {
    let gram = if m.rows() >= m.cols() {
        Matrix::from_fn(m.cols(), m.cols(), |i, j| (0..m.rows()).map(|k| m.get(k, i) * m.get(k, j)).sum())
    } else {
        Matrix::from_fn(m.rows(), m.rows(), |i, j| (0..m.cols()).map(|k| m.get(i, k) * m.get(j, k)).sum())
    };
    symmetric_eigenvalues(&gram).into_iter().map(|l| l.max(0.0).sqrt()).collect()
}

/// Inverse of a small symmetric positive semi-definite matrix by
/// Gauss-Jordan elimination; a tiny ridge keeps it regular.
fn invert_gram(g: &[f64], n: usize) -> Vec<f64> {
    let scale = (0..n).map(|i| g[i * n + i].abs()).fold(0.0, f64::max).max(1e-300);
    let mut a = g.to_vec();
    for i in 0..n {
        a[i * n + i] += 1e-14 * scale;
    }
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs())).unwrap();
        for c in 0..n {
            a.swap(col * n + c, piv * n + c);
            inv.swap(col * n + c, piv * n + c);
        }
        let d = a[col * n + col];
        for c in 0..n {
            a[col * n + c] /= d;
            inv[col * n + c] /= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r * n + col];
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                a[r * n + c] -= f * a[col * n + c];
                inv[r * n + c] -= f * inv[col * n + c];
            }
        }
    }
    inv
}

/// One half step: `out = m * f * (f^T f)^-1` where `m` is read through
/// `get(i, j)` with `i < out_rows`, `j < f_rows`. Factors are row-major
/// `rows x rank`.
fn als_half_step(
    get: impl Fn(usize, usize) -> f64,
    out_rows: usize,
    f: &[f64],
    f_rows: usize,
    rank: usize,
    out: &mut [f64],
) {
    let mut gram = vec![0.0; rank * rank];
    for row in f.chunks_exact(rank) {
        for r in 0..rank {
            for s in 0..rank {
                gram[r * rank + s] += row[r] * row[s];
            }
        }
    }
    let inv = invert_gram(&gram, rank);
    let mut proj = vec![0.0; rank];
    for i in 0..out_rows {
        proj.iter_mut().for_each(|p| *p = 0.0);
        for j in 0..f_rows {
            let m = get(i, j);
            for r in 0..rank {
                proj[r] += m * f[j * rank + r];
            }
        }
        for s in 0..rank {
            out[i * rank + s] = (0..rank).map(|r| proj[r] * inv[r * rank + s]).sum();
        }
    }
}

/// Alternating least squares for `min ||m - a b^T||_F` with `a: rows x rank`,
/// `b: cols x rank`, from a random start. Returns the final squared error.
pub fn als_rank_r(m: &Matrix, rank: usize, steps: usize, rng: &mut impl Rng) -> f64 {
    let (rows, cols) = (m.rows(), m.cols());
    let mut b: Vec<f64> = (0..cols * rank).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut a = vec![0.0; rows * rank];
    for _ in 0..steps {
        als_half_step(|i, j| m.get(i, j), rows, &b, cols, rank, &mut a);
        als_half_step(|j, i| m.get(i, j), cols, &a, rows, rank, &mut b);
    }
    let mut err = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let approx: f64 = (0..rank).map(|r| a[i * rank + r] * b[j * rank + r]).sum();
            let d = m.get(i, j) - approx;
            err += d * d;
        }
    }
    err
}

// ---------------------------------------------------------------------------
// Convolution oracle
// ---------------------------------------------------------------------------

/// Scalar-loop convolution with bounds checks instead of a padded copy.
pub fn conv_by_loops(w: &DenseTensor, x: &DenseTensor, stride: (usize, usize), pad: (usize, usize)) -> DenseTensor {
    let [f, c, kh, kw] = <[usize; 4]>::try_from(w.shape()).unwrap();
    let [_, h, wd] = <[usize; 3]>::try_from(x.shape()).unwrap();
    let ho = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let wo = (wd + 2 * pad.1 - kw) / stride.1 + 1;
    let mut out = vec![0.0; f * ho * wo];
    for fo in 0..f {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for ci in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let y = (oy * stride.0 + i) as isize - pad.0 as isize;
                            let xx = (ox * stride.1 + j) as isize - pad.1 as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                continue;
                            }
                            acc += w.get(&[fo, ci, i, j]) * x.get(&[ci, y as usize, xx as usize]);
                        }
                    }
                }
                out[(fo * ho + oy) * wo + ox] = acc;
            }
        }
    }
    DenseTensor::new(vec![f, ho, wo], out).unwrap()
}

/// Explicit `kron(a, b)` matrix for 2-D matrices.
pub fn kron_matrix(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows() * b.rows(), a.cols() * b.cols(), |i, j| {
        a.get(i / b.rows(), j / b.cols()) * b.get(i % b.rows(), j % b.cols())
    })
}
