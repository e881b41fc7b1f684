//! Parameter and multiply-accumulate accounting for Kronecker convolutions,
//! and the per-tensor configuration search.
//!
//! One FLOP is counted as one multiply-accumulate (MAC). Weights use the
//! `[F, C, Kh, Kw]` layout; factor A is `[F1, C1, Kh1, Kw1]` and factor B
//! is `[F2, C2, Kh2, Kw2]`.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::Serialize;

use crate::decompose::{gkpd_from_svd, rearrange_w, FactorShapePair, GkpdDecomposition};
use crate::error::{Error, Result};
use crate::kronconv::ConvGeometry;
use crate::linalg::svd_full;
use crate::tensor::DenseTensor;

/// An exact non-negative ratio `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

impl Ratio {
    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Exact equality of the two fractions.
    pub fn same_as(&self, other: &Ratio) -> bool {
        self.num * other.den == other.num * self.den
    }
}

fn conv_dims(pair: &FactorShapePair) -> Result<([usize; 4], [usize; 4])> {
    match (pair.shape_a.as_slice(), pair.shape_b.as_slice()) {
        (&[f1, c1, kh1, kw1], &[f2, c2, kh2, kw2]) => Ok(([f1, c1, kh1, kw1], [f2, c2, kh2, kw2])),
        _ => Err(Error::shape(format!(
            "convolution factors must be 4-D, got {:?} / {:?}",
            pair.shape_a, pair.shape_b
        ))),
    }
}

/// Parameters stored by `r_hat` terms: `r_hat * (|A| + |B|)`.
pub fn param_count(pair: &FactorShapePair, r_hat: usize) -> u64 {
    (r_hat * (pair.len_a() + pair.len_b())) as u64
}

/// `|A| |B| / (r_hat (|A| + |B|))` as an exact fraction.
pub fn memory_reduction_ratio(pair: &FactorShapePair, r_hat: usize) -> Ratio {
    let (la, lb) = (pair.len_a() as u128, pair.len_b() as u128);
    Ratio {
        num: la * lb,
        den: r_hat as u128 * (la + lb),
    }
}

pub fn memory_reduction(pair: &FactorShapePair, r_hat: usize) -> f64 {
    memory_reduction_ratio(pair, r_hat).value()
}

/// MACs per output position of the two-stage forward pass, assuming both
/// stages run on the same spatial grid: `r_hat (F2 |A| + C1 |B|)`.
pub fn macs_per_position(pair: &FactorShapePair, r_hat: usize) -> Result<u64> {
    let ([_, c1, _, _], [f2, _, _, _]) = conv_dims(pair)?;
    Ok((r_hat * (f2 * pair.len_a() + c1 * pair.len_b())) as u64)
}

/// `|A| |B| / (r_hat (F2 |A| + C1 |B|))` as an exact fraction.
pub fn flops_reduction_ratio(pair: &FactorShapePair, r_hat: usize) -> Result<Ratio> {
    Ok(Ratio {
        num: pair.len_a() as u128 * pair.len_b() as u128,
        den: macs_per_position(pair, r_hat)? as u128,
    })
}

pub fn flops_reduction(pair: &FactorShapePair, r_hat: usize) -> Result<f64> {
    Ok(flops_reduction_ratio(pair, r_hat)?.value())
}

/// Factor shapes of the separable 3x3 split: A carries the 3x1 part and
/// B the 1x3 part.
pub fn separable_3x3_pair(f1: usize, c1: usize, f2: usize, c2: usize) -> Result<FactorShapePair> {
    FactorShapePair::new(vec![f1, c1, 3, 1], vec![f2, c2, 1, 3])
}

/// `3 F1 C2 / (F1 + C2)`, the single-term FLOPs reduction of the separable 3x3 split.
pub fn separable_3x3_flops_reduction(f1: usize, c2: usize) -> Ratio {
    Ratio {
        num: 3 * f1 as u128 * c2 as u128,
        den: (f1 + c2) as u128,
    }
}

/// Spatial input size plus convolution geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputGeometry {
    pub height: usize,
    pub width: usize,
    pub conv: ConvGeometry,
}

/// MACs of a direct convolution: `F C Kh Kw H' W'`.
pub fn count_macs_direct(w_shape: &[usize], input: &InputGeometry) -> Result<u64> {
    let &[f, c, kh, kw] = w_shape else {
        return Err(Error::shape(format!("weight shape {w_shape:?} is not 4-D")));
    };
    let (ho, wo) = input.conv.output_dims(input.height, input.width, kh, kw)?;
    Ok((f * c * kh * kw * ho * wo) as u64)
}

/// MACs of the two-stage Kronecker forward pass over `r_hat` terms.
///
/// Stage 1 evaluates B at every stride-1 position of the padded input
/// (`H1 = Hp - Kh2 + 1`); stage 2 evaluates A on the output grid.
pub fn count_macs_kron(pair: &FactorShapePair, r_hat: usize, input: &InputGeometry) -> Result<u64> {
    let ([f1, c1, kh1, kw1], [f2, c2, kh2, kw2]) = conv_dims(pair)?;
    let (ho, wo) = input
        .conv
        .output_dims(input.height, input.width, kh1 * kh2, kw1 * kw2)?;
    let (hp, wp) = input.conv.padded(input.height, input.width);
    let (h1, w1) = (hp - kh2 + 1, wp - kw2 + 1);
    let stage1 = f2 * c1 * c2 * kh2 * kw2 * h1 * w1;
    let stage2 = f2 * f1 * c1 * kh1 * kw1 * ho * wo;
    Ok((r_hat * (stage1 + stage2)) as u64)
}

/// One factor-shape choice with its costs and, once solved, its error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfigCandidate {
    pub shape_a: Vec<usize>,
    pub shape_b: Vec<usize>,
    pub r_hat: usize,
    pub params: u64,
    pub macs_per_position: u64,
    pub memory_reduction: f64,
    pub flops_reduction: f64,
    /// Absolute Frobenius reconstruction error.
    pub error: Option<f64>,
    /// Error divided by the norm of the original tensor.
    pub relative_error: Option<f64>,
}

impl ConfigCandidate {
    pub fn new(pair: &FactorShapePair, r_hat: usize) -> Result<Self> {
        Ok(Self {
            shape_a: pair.shape_a.clone(),
            shape_b: pair.shape_b.clone(),
            r_hat,
            params: param_count(pair, r_hat),
            macs_per_position: macs_per_position(pair, r_hat)?,
            memory_reduction: memory_reduction(pair, r_hat),
            flops_reduction: flops_reduction(pair, r_hat)?,
            error: None,
            relative_error: None,
        })
    }

    pub fn pair(&self) -> FactorShapePair {
        FactorShapePair {
            shape_a: self.shape_a.clone(),
            shape_b: self.shape_b.clone(),
        }
    }

    /// Report order: error (unsolved last), then params, then shapes, then `r_hat`.
    pub fn order(&self, other: &Self) -> Ordering {
        let err = match (self.error, other.error) {
            (Some(a), Some(b)) => a.total_cmp(&b),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        };
        err.then(self.params.cmp(&other.params))
            .then_with(|| self.shape_a.cmp(&other.shape_a))
            .then_with(|| self.shape_b.cmp(&other.shape_b))
            .then(self.r_hat.cmp(&other.r_hat))
    }
}

/// Constraints for candidate enumeration.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchBudget {
    /// Keep candidates with FLOPs reduction at least this.
    pub min_flops_reduction: f64,
    /// Keep candidates with memory reduction at least this.
    pub min_memory_reduction: f64,
    pub r_hat_range: RangeInclusive<usize>,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            min_flops_reduction: 0.0,
            min_memory_reduction: 0.0,
            r_hat_range: 1..=1,
        }
    }
}

pub fn divisors(n: usize) -> Vec<usize> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n.is_multiple_of(d) {
            small.push(d);
            if d * d != n {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Every divisor-pair factorization of `w_shape` crossed with `r_hat_range`,
/// filtered by the FLOPs floor and full Kronecker rank.
pub fn enumerate_candidates(
    w_shape: &[usize],
    min_flops_reduction: f64,
    r_hat_range: RangeInclusive<usize>,
) -> Result<Vec<ConfigCandidate>> {
    enumerate_candidates_with(
        w_shape,
        &SearchBudget {
            min_flops_reduction,
            min_memory_reduction: 0.0,
            r_hat_range,
        },
    )
}

pub fn enumerate_candidates_with(w_shape: &[usize], budget: &SearchBudget) -> Result<Vec<ConfigCandidate>> {
    if w_shape.len() != 4 {
        return Err(Error::shape(format!("weight shape {w_shape:?} is not 4-D")));
    }
    if let Some(n) = w_shape.iter().position(|&s| s == 0) {
        return Err(Error::shape_at(n, format!("dimension {n} has extent 0")));
    }
    let per_dim: Vec<Vec<usize>> = w_shape.iter().map(|&s| divisors(s)).collect();
    let mut out = Vec::new();
    let mut shape_a = vec![0; 4];
    for &a0 in &per_dim[0] {
        for &a1 in &per_dim[1] {
            for &a2 in &per_dim[2] {
                for &a3 in &per_dim[3] {
                    shape_a.copy_from_slice(&[a0, a1, a2, a3]);
                    let pair = FactorShapePair::from_shape_a(w_shape, &shape_a)?;
                    let full = pair.full_rank();
                    for r_hat in budget.r_hat_range.clone() {
                        if r_hat == 0 || r_hat > full {
                            continue;
                        }
                        let c = ConfigCandidate::new(&pair, r_hat)?;
                        if c.flops_reduction >= budget.min_flops_reduction
                            && c.memory_reduction >= budget.min_memory_reduction
                        {
                            out.push(c);
                        }
                    }
                }
            }
        }
    }
    out.sort_by(ConfigCandidate::order);
    out.dedup();
    Ok(out)
}

/// Outcome of [`select_configuration`].
#[derive(Clone, Debug)]
pub struct Selection {
    /// All candidates with errors filled, sorted best first.
    pub candidates: Vec<ConfigCandidate>,
    /// Decomposition of the winner, `candidates[0]`.
    pub decomposition: GkpdDecomposition,
}

impl Selection {
    pub fn winner(&self) -> &ConfigCandidate {
        &self.candidates[0]
    }
}

/// Solves every candidate and picks the one with the smallest
/// reconstruction error. One SVD is computed per distinct factor pair.
pub fn select_configuration(w: &DenseTensor, candidates: &[ConfigCandidate]) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Parameter("no candidates to select from".into()));
    }
    let mut by_pair: BTreeMap<FactorShapePair, Vec<usize>> = BTreeMap::new();
    for (i, c) in candidates.iter().enumerate() {
        let pair = c.pair();
        pair.validate_for(w.shape())?;
        by_pair.entry(pair).or_default().push(i);
    }
    let norm = w.norm();
    let groups: Vec<(FactorShapePair, Vec<usize>)> = by_pair.into_iter().collect();
    let solved: Vec<Vec<(usize, f64)>> = groups
        .par_iter()
        .map(|(pair, idx)| {
            let svd = svd_full(&rearrange_w(w, &pair.shape_b)?)?;
            idx.iter()
                .map(|&i| Ok((i, gkpd_from_svd(w, pair, &svd, candidates[i].r_hat)?.achieved_error)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut annotated = candidates.to_vec();
    for (i, err) in solved.into_iter().flatten() {
        annotated[i].error = Some(err);
        annotated[i].relative_error = Some(if norm > 0.0 { err / norm } else { 0.0 });
    }
    annotated.sort_by(ConfigCandidate::order);
    annotated.dedup();
    let best = &annotated[0];
    let pair = best.pair();
    let svd = svd_full(&rearrange_w(w, &pair.shape_b)?)?;
    let decomposition = gkpd_from_svd(w, &pair, &svd, best.r_hat)?;
    Ok(Selection {
        candidates: annotated,
        decomposition,
    })
}
