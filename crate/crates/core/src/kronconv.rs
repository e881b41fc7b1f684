//! Convolution with Kronecker-factored weights.
//!
//! Weights use the `[F, C, Kh, Kw]` layout and inputs `[C, H, W]`. All
//! convolutions are cross-correlations with symmetric zero padding.
//!
//! For `W = kron(A, B)` with `A: [F1, C1, Kh1, Kw1]` and
//! `B: [F2, C2, Kh2, Kw2]`, the forward pass runs in two stages without
//! forming `W`:
//!
//! 1. each `(C2, Kh2, Kw2)` sub-patch of the padded input is collapsed by
//!    `B` (a 3D convolution with channel stride `C2`), giving `[F2, C1, H1, W1]`;
//! 2. each of the `F2` maps is convolved with `A` using spatial dilation
//!    `(Kh2, Kw2)` and the original stride, giving `[F2, F1, H', W']`.
//!
//! The output channel is `f = f1 * F2 + f2`, the Kronecker index order.

use rayon::prelude::*;

use crate::decompose::GkpdDecomposition;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::tensor::{join_index, kron, split_index, DenseTensor, MultiIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: (0, 0),
        }
    }
}

impl ConvGeometry {
    pub fn new(stride: (usize, usize), padding: (usize, usize)) -> Result<Self> {
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::Parameter("stride must be positive".into()));
        }
        Ok(Self { stride, padding })
    }

    pub fn padded(&self, h: usize, w: usize) -> (usize, usize) {
        (h + 2 * self.padding.0, w + 2 * self.padding.1)
    }

    /// Output spatial size `floor((in + 2p - k) / s) + 1`.
    pub fn output_dims(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        let (hp, wp) = self.padded(h, w);
        if kh > hp || kw > wp {
            return Err(Error::shape(format!(
                "kernel {kh}x{kw} larger than padded input {hp}x{wp}"
            )));
        }
        Ok(((hp - kh) / self.stride.0 + 1, (wp - kw) / self.stride.1 + 1))
    }
}

fn dims4(t: &DenseTensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::shape(format!(
            "{what} must be 4-D [F, C, Kh, Kw], got {:?}",
            t.shape()
        ))),
    }
}

fn dims3(t: &DenseTensor, what: &str) -> Result<[usize; 3]> {
    match *t.shape() {
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::shape(format!(
            "{what} must be 3-D [C, H, W], got {:?}",
            t.shape()
        ))),
    }
}

/// Zero-pads the spatial dimensions of a `[C, H, W]` tensor.
pub fn pad_input(x: &DenseTensor, padding: (usize, usize)) -> Result<DenseTensor> {
    let [c, h, w] = dims3(x, "input")?;
    if padding == (0, 0) {
        return Ok(x.clone());
    }
    let (hp, wp) = (h + 2 * padding.0, w + 2 * padding.1);
    let mut out = DenseTensor::zeros(&[c, hp, wp])?;
    let src = x.data();
    let dst = out.data_mut();
    for ch in 0..c {
        for y in 0..h {
            let s = (ch * h + y) * w;
            let d = (ch * hp + y + padding.0) * wp + padding.1;
            dst[d..d + w].copy_from_slice(&src[s..s + w]);
        }
    }
    Ok(out)
}

/// Strided, dilated cross-correlation of a padded `[C, Hp, Wp]` slice with
/// `weight: [F, C, Kh, Kw]`, accumulating into `out: [F, Ho, Wo]`.
#[allow(clippy::too_many_arguments)]
fn correlate(
    weight: &[f64],
    [f, c, kh, kw]: [usize; 4],
    input: &[f64],
    (hp, wp): (usize, usize),
    stride: (usize, usize),
    dilation: (usize, usize),
    out: &mut [f64],
    (ho, wo): (usize, usize),
) -> u64 {
    let mut macs = 0u64;
    for fo in 0..f {
        for ci in 0..c {
            let plane = &input[ci * hp * wp..(ci + 1) * hp * wp];
            for i in 0..kh {
                for j in 0..kw {
                    let wv = weight[((fo * c + ci) * kh + i) * kw + j];
                    for oy in 0..ho {
                        let row = &plane[(oy * stride.0 + i * dilation.0) * wp..];
                        let dst = &mut out[(fo * ho + oy) * wo..(fo * ho + oy + 1) * wo];
                        let x0 = j * dilation.1;
                        for (ox, d) in dst.iter_mut().enumerate() {
                            *d += wv * row[ox * stride.1 + x0];
                        }
                    }
                    macs += (ho * wo) as u64;
                }
            }
        }
    }
    macs
}

/// Direct convolution; returns the output and the number of
/// multiply-accumulates performed.
pub fn conv2d_direct_counted(
    w: &DenseTensor,
    x: &DenseTensor,
    g: &ConvGeometry,
) -> Result<(DenseTensor, u64)> {
    let [f, c, kh, kw] = dims4(w, "weight")?;
    let [cx, h, wd] = dims3(x, "input")?;
    if c != cx {
        return Err(Error::shape_at(
            0,
            format!("weight expects {c} input channels, input has {cx}"),
        ));
    }
    let (ho, wo) = g.output_dims(h, wd, kh, kw)?;
    let xp = pad_input(x, g.padding)?;
    let mut out = DenseTensor::zeros(&[f, ho, wo])?;
    let macs = correlate(
        w.data(),
        [f, c, kh, kw],
        xp.data(),
        g.padded(h, wd),
        g.stride,
        (1, 1),
        out.data_mut(),
        (ho, wo),
    );
    Ok((out, macs))
}

pub fn conv2d_direct(w: &DenseTensor, x: &DenseTensor, g: &ConvGeometry) -> Result<DenseTensor> {
    conv2d_direct_counted(w, x, g).map(|(y, _)| y)
}

/// One Kronecker term `kron(a, b)` of a convolution weight.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvFactorPair {
    pub a: DenseTensor,
    pub b: DenseTensor,
}

impl ConvFactorPair {
    pub fn new(a: DenseTensor, b: DenseTensor) -> Result<Self> {
        dims4(&a, "factor A")?;
        dims4(&b, "factor B")?;
        Ok(Self { a, b })
    }

    pub fn dims_a(&self) -> [usize; 4] {
        dims4(&self.a, "factor A").expect("validated")
    }

    pub fn dims_b(&self) -> [usize; 4] {
        dims4(&self.b, "factor B").expect("validated")
    }

    /// Shape of the represented weight `[F1*F2, C1*C2, Kh1*Kh2, Kw1*Kw2]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        let (a, b) = (self.dims_a(), self.dims_b());
        [a[0] * b[0], a[1] * b[1], a[2] * b[2], a[3] * b[3]]
    }

    pub fn reconstruct(&self) -> DenseTensor {
        kron(&self.a, &self.b).expect("both factors are 4-D")
    }

    /// Splits a 4-D decomposition into its terms.
    pub fn from_decomposition(d: &GkpdDecomposition) -> Result<Vec<Self>> {
        d.factors_a
            .iter()
            .zip(&d.factors_b)
            .map(|(a, b)| Self::new(a.clone(), b.clone()))
            .collect()
    }
}

/// Stage 1: `[F2, C1, H1, W1]` from the padded input, channel stride `C2`.
fn stage_one(b: &DenseTensor, xp: &DenseTensor, c1: usize) -> (DenseTensor, u64) {
    let [f2, c2, kh2, kw2] = dims4(b, "factor B").expect("validated");
    let [_, hp, wp] = dims3(xp, "input").expect("validated");
    let (h1, w1) = (hp - kh2 + 1, wp - kw2 + 1);
    let plane = h1 * w1;
    let mut z = DenseTensor::zeros(&[f2, c1, h1, w1]).expect("positive dims");
    // Channel group `c1` of the input holds channels c1*C2 .. c1*C2 + C2.
    let macs: u64 = z
        .data_mut()
        .par_chunks_mut(c1 * plane)
        .enumerate()
        .map(|(fo, out_f)| {
            let wf = &b.data()[fo * c2 * kh2 * kw2..(fo + 1) * c2 * kh2 * kw2];
            let mut macs = 0;
            for (g, out) in out_f.chunks_mut(plane).enumerate() {
                let group = &xp.data()[join_index(g, 0, c2) * hp * wp..join_index(g + 1, 0, c2) * hp * wp];
                macs += correlate(wf, [1, c2, kh2, kw2], group, (hp, wp), (1, 1), (1, 1), out, (h1, w1));
            }
            macs
        })
        .sum();
    (z, macs)
}

/// Stage 2: `[F2, F1, H', W']` by convolving every stage-1 map with `a`.
fn stage_two(
    a: &DenseTensor,
    z: &DenseTensor,
    dilation: (usize, usize),
    stride: (usize, usize),
    (ho, wo): (usize, usize),
) -> (DenseTensor, u64) {
    let [f1, c1, kh1, kw1] = dims4(a, "factor A").expect("validated");
    let [f2, _, h1, w1] = dims4(z, "stage-1 output").expect("validated");
    let mut y = DenseTensor::zeros(&[f2, f1, ho, wo]).expect("positive dims");
    let in_len = c1 * h1 * w1;
    let macs: u64 = y
        .data_mut()
        .par_chunks_mut(f1 * ho * wo)
        .enumerate()
        .map(|(fo, out)| {
            let input = &z.data()[fo * in_len..(fo + 1) * in_len];
            correlate(a.data(), [f1, c1, kh1, kw1], input, (h1, w1), stride, dilation, out, (ho, wo))
        })
        .sum();
    (y, macs)
}

/// Reconstruction-free forward pass of one Kronecker term, with its
/// multiply-accumulate count.
pub fn kron_conv_forward_counted(
    pair: &ConvFactorPair,
    x: &DenseTensor,
    g: &ConvGeometry,
) -> Result<(DenseTensor, u64)> {
    let [f1, c1, _, _] = pair.dims_a();
    let [f2, c2, kh2, kw2] = pair.dims_b();
    let [f, c, kh, kw] = pair.weight_shape();
    let [cx, h, w] = dims3(x, "input")?;
    if c != cx {
        return Err(Error::shape_at(
            1,
            format!("factors represent {c} input channels ({c1} x {c2}), input has {cx}"),
        ));
    }
    let (ho, wo) = g.output_dims(h, w, kh, kw)?;
    let xp = pad_input(x, g.padding)?;
    let (z, macs1) = stage_one(&pair.b, &xp, c1);
    let (y2, macs2) = stage_two(&pair.a, &z, (kh2, kw2), g.stride, (ho, wo));

    // [F2, F1, H', W'] -> [F1 * F2, H', W'] with f = f1 * F2 + f2.
    let plane = ho * wo;
    let mut y = DenseTensor::zeros(&[f, ho, wo])?;
    let src = y2.data();
    let dst = y.data_mut();
    for fo in 0..f {
        let (i1, i2) = split_index(fo, f2);
        let s = (i2 * f1 + i1) * plane;
        dst[fo * plane..(fo + 1) * plane].copy_from_slice(&src[s..s + plane]);
    }
    Ok((y, macs1 + macs2))
}

pub fn kron_conv_forward(pair: &ConvFactorPair, x: &DenseTensor, g: &ConvGeometry) -> Result<DenseTensor> {
    kron_conv_forward_counted(pair, x, g).map(|(y, _)| y)
}

/// Sum of [`kron_conv_forward`] over all terms.
pub fn kron_conv_sum_forward_counted(
    pairs: &[ConvFactorPair],
    x: &DenseTensor,
    g: &ConvGeometry,
) -> Result<(DenseTensor, u64)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::Parameter("at least one Kronecker term is required".into()))?;
    for (r, p) in pairs.iter().enumerate() {
        if p.a.shape() != first.a.shape() || p.b.shape() != first.b.shape() {
            return Err(Error::shape(format!(
                "term {r} has factor shapes {:?} / {:?}, term 0 has {:?} / {:?}",
                p.a.shape(),
                p.b.shape(),
                first.a.shape(),
                first.b.shape()
            )));
        }
    }
    let (mut acc, mut macs) = kron_conv_forward_counted(first, x, g)?;
    for p in &pairs[1..] {
        let (y, m) = kron_conv_forward_counted(p, x, g)?;
        acc.add_assign(&y)?;
        macs += m;
    }
    Ok((acc, macs))
}

pub fn kron_conv_sum_forward(pairs: &[ConvFactorPair], x: &DenseTensor, g: &ConvGeometry) -> Result<DenseTensor> {
    kron_conv_sum_forward_counted(pairs, x, g).map(|(y, _)| y)
}

/// Runs a 4-D decomposition as a Kronecker convolution.
pub fn decomposition_forward(d: &GkpdDecomposition, x: &DenseTensor, g: &ConvGeometry) -> Result<DenseTensor> {
    kron_conv_sum_forward(&ConvFactorPair::from_decomposition(d)?, x, g)
}

/// `kron(a, b) * x` computed as `Y = B X A^T` on the column-stacked
/// reshapes `X: n2 x n1` and `Y: m2 x m1`.
pub fn kron_matvec(a: &Matrix, b: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    let (m1, n1) = (a.rows(), a.cols());
    let (m2, n2) = (b.rows(), b.cols());
    if x.len() != n1 * n2 {
        return Err(Error::shape(format!(
            "vector of length {} does not match {n1} x {n2} columns",
            x.len()
        )));
    }
    let xm = Matrix::from_fn(n2, n1, |r, c| x[c * n2 + r]);
    let ym = b.matmul(&xm)?.matmul(&a.transpose())?;
    let mut y = vec![0.0; m1 * m2];
    for c in 0..m1 {
        for r in 0..m2 {
            y[c * m2 + r] = ym.get(r, c);
        }
    }
    Ok(y)
}

/// Checks the reindexing identity `W[i] X[i + o] == A[j] B[k] X[g(j, k) + o]`
/// for every index `i` of `W = kron(a, b)`, where `j, k` split `i` and `g`
/// rejoins them. Comparison is exact.
pub fn reindex_check(a: &DenseTensor, b: &DenseTensor, x: &DenseTensor, offsets: &MultiIndex) -> Result<bool> {
    reindex_check_with(a, b, x, offsets, join_index)
}

/// [`reindex_check`] with a caller-supplied reindexing `g(j, k, b_n)`.
/// An index that `g` maps outside `x` counts as a violation.
pub fn reindex_check_with(
    a: &DenseTensor,
    b: &DenseTensor,
    x: &DenseTensor,
    offsets: &MultiIndex,
    g: impl Fn(usize, usize, usize) -> usize,
) -> Result<bool> {
    let w = kron(a, b)?;
    let o = offsets.as_slice();
    if x.ndim() != w.ndim() || o.len() != w.ndim() {
        return Err(Error::shape(format!(
            "input rank {} and offset rank {} must match weight rank {}",
            x.ndim(),
            o.len(),
            w.ndim()
        )));
    }
    for (n, ((&ws, &xs), &on)) in w.shape().iter().zip(x.shape()).zip(o).enumerate() {
        if ws + on > xs {
            return Err(Error::shape_at(
                n,
                format!("offset {on} in dimension {n} pushes extent {ws} past input extent {xs}"),
            ));
        }
    }
    let ndim = w.ndim();
    let mut ok = true;
    let mut shifted = vec![0; ndim];
    let mut j = vec![0; ndim];
    let mut k = vec![0; ndim];
    let mut regathered = vec![0; ndim];
    crate::tensor::for_each_index(w.shape(), |i| {
        if !ok {
            return;
        }
        for n in 0..ndim {
            let bn = b.shape()[n];
            shifted[n] = i[n] + o[n];
            (j[n], k[n]) = split_index(i[n], bn);
            regathered[n] = g(j[n], k[n], bn) + o[n];
        }
        if regathered.iter().zip(x.shape()).any(|(&r, &s)| r >= s) {
            ok = false;
            return;
        }
        let lhs = w.get(i) * x.get(&shifted);
        let rhs = a.get(&j) * b.get(&k) * x.get(&regathered);
        ok = lhs == rhs;
    });
    Ok(ok)
}
