//! Dense N-dimensional tensors.
//!
//! Storage is row-major (last index varies fastest) everywhere in the
//! crate. The multidimensional Kronecker product and non-overlapping patch
//! extraction share the same index arithmetic: an index `i` along a
//! dimension splits into a block coordinate `i / b` and an in-block
//! coordinate `i % b`, see [`split_index`].

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenseTensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::shape("tensor must have at least one dimension"));
    }
    if let Some(n) = shape.iter().position(|&s| s == 0) {
        return Err(Error::shape_at(n, format!("dimension {n} has extent 0")));
    }
    Ok(())
}

/// Number of elements of a shape.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides of a shape.
pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for n in (0..shape.len().saturating_sub(1)).rev() {
        strides[n] = strides[n + 1] * shape[n + 1];
    }
    strides
}

/// Visits every multi-index of `shape` in row-major order.
pub fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        f(&idx);
        let mut n = shape.len();
        loop {
            if n == 0 {
                return;
            }
            n -= 1;
            idx[n] += 1;
            if idx[n] < shape[n] {
                break;
            }
            idx[n] = 0;
        }
    }
}

/// Quotient and remainder of `i` with respect to the factor extent `b`:
/// `i = j * b + k` with `0 <= k < b`.
#[inline]
pub fn split_index(i: usize, b: usize) -> (usize, usize) {
    (i / b, i % b)
}

/// Inverse of [`split_index`].
#[inline]
pub fn join_index(j: usize, k: usize, b: usize) -> usize {
    j * b + k
}

/// Flat offsets of every block origin (row-major over `grid`) and every
/// in-block element (row-major over `block`) inside a tensor of shape
/// `grid * block`. Element `(p, q)` lives at `outer[p] + inner[q]`.
fn block_offsets(grid: &[usize], block: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let full: Vec<usize> = grid.iter().zip(block).map(|(g, b)| g * b).collect();
    let strides = row_major_strides(&full);
    let mut outer = Vec::with_capacity(numel(grid));
    for_each_index(grid, |p| {
        outer.push(
            p.iter()
                .zip(block)
                .zip(&strides)
                .map(|((&p, &b), &s)| p * b * s)
                .sum(),
        );
    });
    let mut inner = Vec::with_capacity(numel(block));
    for_each_index(block, |q| {
        inner.push(q.iter().zip(&strides).map(|(&q, &s)| q * s).sum());
    });
    (outer, inner)
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        if data.len() != numel(&shape) {
            return Err(Error::shape(format!(
                "data length {} does not match shape {:?} ({} elements)",
                data.len(),
                shape,
                numel(&shape)
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        check_shape(shape)?;
        let mut data = Vec::with_capacity(numel(shape));
        for_each_index(shape, |idx| data.push(f(idx)));
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// The single-element tensor of shape `[1; ndim]` holding `1.0`,
    /// the Kronecker identity.
    pub fn unit(ndim: usize) -> Result<Self> {
        Self::new(vec![1; ndim], vec![1.0])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        row_major_strides(&self.shape)
    }

    /// Flat offset of a multi-index. Panics if the index is out of bounds.
    pub fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (n, (&i, &s)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(i < s, "index {i} out of bounds for dimension {n} of extent {s}");
            off = off * s + i;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let off = self.offset(idx);
        self.data[off] = value;
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        Ok(self
            .sub(other)?
            .data
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs())))
    }

    pub fn norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Bounds-checked multi-index into a tensor of a given shape.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn zeros(ndim: usize) -> Self {
        Self(vec![0; ndim])
    }

    /// Checks `indices[n] < shape[n]` for every `n`.
    pub fn check_within(&self, shape: &[usize]) -> Result<()> {
        if self.0.len() != shape.len() {
            return Err(Error::shape(format!(
                "index has {} components, shape has {} dimensions",
                self.0.len(),
                shape.len()
            )));
        }
        for (n, (&i, &s)) in self.0.iter().zip(shape).enumerate() {
            if i >= s {
                return Err(Error::shape_at(
                    n,
                    format!("index {i} out of bounds for dimension {n} of extent {s}"),
                ));
            }
        }
        Ok(())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for MultiIndex {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

/// Multidimensional Kronecker product: `out[i] = a[i / b.shape] * b[i % b.shape]`
/// per dimension, giving shape `a.shape[n] * b.shape[n]`.
pub fn kron(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.ndim() != b.ndim() {
        return Err(Error::shape(format!(
            "kron operands must have the same number of dimensions ({} vs {})",
            a.ndim(),
            b.ndim()
        )));
    }
    let shape: Vec<usize> = a.shape.iter().zip(&b.shape).map(|(x, y)| x * y).collect();
    let (outer, inner) = block_offsets(&a.shape, &b.shape);
    let mut data = vec![0.0; numel(&shape)];
    for (&av, &base) in a.data.iter().zip(&outer) {
        for (&bv, &off) in b.data.iter().zip(&inner) {
            data[base + off] = av * bv;
        }
    }
    Ok(DenseTensor { shape, data })
}

fn patch_grid(shape: &[usize], patch: &[usize]) -> Result<Vec<usize>> {
    if patch.len() != shape.len() {
        return Err(Error::shape(format!(
            "patch shape {:?} has {} dimensions, tensor has {}",
            patch,
            patch.len(),
            shape.len()
        )));
    }
    let mut grid = Vec::with_capacity(shape.len());
    for (n, (&s, &d)) in shape.iter().zip(patch).enumerate() {
        if d == 0 || s % d != 0 {
            return Err(Error::shape_at(
                n,
                format!("patch extent {d} does not divide dimension {n} of extent {s}"),
            ));
        }
        grid.push(s / d);
    }
    Ok(grid)
}

/// Extracts the non-overlapping patches of shape `patch` from `w`.
///
/// The result has shape `[num_patches, patch...]`; patches are enumerated
/// row-major over the patch grid.
pub fn unfold(w: &DenseTensor, patch: &[usize]) -> Result<DenseTensor> {
    let grid = patch_grid(&w.shape, patch)?;
    let (outer, inner) = block_offsets(&grid, patch);
    let mut data = Vec::with_capacity(w.len());
    for &base in &outer {
        data.extend(inner.iter().map(|&off| w.data[base + off]));
    }
    let mut shape = Vec::with_capacity(patch.len() + 1);
    shape.push(outer.len());
    shape.extend_from_slice(patch);
    Ok(DenseTensor { shape, data })
}

/// Inverse of [`unfold`]: reassembles `patches` (shape `[num_patches, patch...]`)
/// into a tensor of shape `shape`.
pub fn fold(patches: &DenseTensor, shape: &[usize]) -> Result<DenseTensor> {
    check_shape(shape)?;
    if patches.ndim() != shape.len() + 1 {
        return Err(Error::shape(format!(
            "patch tensor of rank {} cannot fold into rank {}",
            patches.ndim(),
            shape.len()
        )));
    }
    let patch = &patches.shape[1..];
    let grid = patch_grid(shape, patch)?;
    let (outer, inner) = block_offsets(&grid, patch);
    if outer.len() != patches.shape[0] {
        return Err(Error::shape(format!(
            "{} patches given, shape {:?} needs {}",
            patches.shape[0],
            shape,
            outer.len()
        )));
    }
    let mut data = vec![0.0; numel(shape)];
    let mut src = patches.data.iter();
    for &base in &outer {
        for &off in &inner {
            data[base + off] = *src.next().expect("patch count checked");
        }
    }
    Ok(DenseTensor {
        shape: shape.to_vec(),
        data,
    })
}

pub fn frobenius_norm(w: &DenseTensor) -> f64 {
    // Scaled accumulation avoids overflow/underflow for extreme magnitudes.
    let max = w.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        return max;
    }
    let sum: f64 = w.data.iter().map(|v| (v / max) * (v / max)).sum();
    max * sum.sqrt()
}
