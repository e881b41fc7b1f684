mod common;

use common::*;
use gkpd::decompose::unrearrange_w;
use gkpd::{
    gkpd_solve, kron, rearrange_a, rearrange_b, rearrange_w, reconstruction_error, svd_full, DenseTensor, Error,
    FactorShapePair, Matrix,
};
use proptest::prelude::*;
use rand::Rng;

fn pair(a: &[usize], b: &[usize]) -> FactorShapePair {
    FactorShapePair::new(a.to_vec(), b.to_vec()).unwrap()
}

#[test]
fn rearranged_kron_is_exact_outer_product() {
    let mut rng = rng(31);
    for _ in 0..40 {
        let ndim = rng.random_range(1..=4);
        let sa: Vec<usize> = (0..ndim).map(|_| rng.random_range(1..=3)).collect();
        let sb: Vec<usize> = (0..ndim).map(|_| rng.random_range(1..=3)).collect();
        let a = random_tensor(&mut rng, &sa);
        let b = random_tensor(&mut rng, &sb);
        let m = rearrange_w(&kron(&a, &b).unwrap(), &sb).unwrap();
        let outer = Matrix::outer(&rearrange_a(&a), &rearrange_b(&b));
        assert_eq!(m, outer);
        let s = svd_full(&m).unwrap().s;
        assert!(s.iter().skip(1).all(|&x| x <= 1e-12 * s[0]));
    }
}

#[test]
fn rearrangement_matches_slicing_and_inverts() {
    let mut rng = rng(32);
    for (a, b) in [
        (vec![2, 3, 1, 1], vec![4, 2, 3, 3]),
        (vec![1, 1, 3, 1], vec![5, 2, 1, 3]),
        (vec![2, 2, 2], vec![1, 3, 2]),
    ] {
        let p = pair(&a, &b);
        let w = random_tensor(&mut rng, &p.target_shape());
        let m = rearrange_w(&w, &b).unwrap();
        assert_eq!(m, rearrange_by_slicing(&w, &b));
        assert_eq!(unrearrange_w(&m, &p).unwrap(), w);
    }
}

/// The classical 2-D block rearrangement: row `i + j * m1` holds the
/// column-major vec of block `(i, j)`.
fn column_major_block_rearrangement(w: &Matrix, (m1, n1): (usize, usize), (m2, n2): (usize, usize)) -> Matrix {
    Matrix::from_fn(m1 * n1, m2 * n2, |row, col| {
        let (i, j) = (row % m1, row / m1);
        let (p, q) = (col % m2, col / m2);
        w.get(i * m2 + p, j * n2 + q)
    })
}

#[test]
fn matrix_case_agrees_with_block_rearrangement() {
    let mut rng = rng(33);
    let w = random_matrix(&mut rng, 4, 6);
    let t = DenseTensor::new(vec![4, 6], w.data().to_vec()).unwrap();
    let ours = svd_full(&rearrange_w(&t, &[2, 3]).unwrap()).unwrap().s;
    let classical = singular_values_by_gram(&column_major_block_rearrangement(&w, (2, 2), (2, 3)));
    for (x, y) in ours.iter().zip(&classical) {
        assert!((x - y).abs() <= 1e-10 * ours[0]);
    }
    let d = gkpd_solve(&t, &pair(&[2, 2], &[2, 3]), 1).unwrap();
    let tail: f64 = classical[1..].iter().map(|s| s * s).sum();
    assert!((d.achieved_error - tail.sqrt()).abs() <= 1e-10 * t.norm());
}

#[test]
fn objective_is_preserved_by_rearrangement() {
    let mut rng = rng(34);
    for _ in 0..30 {
        let sa: Vec<usize> = (0..4).map(|_| rng.random_range(1..=3)).collect();
        let sb: Vec<usize> = (0..4).map(|_| rng.random_range(1..=3)).collect();
        let p = pair(&sa, &sb);
        let w = random_tensor(&mut rng, &p.target_shape());
        let a = random_tensor(&mut rng, &sa);
        let b = random_tensor(&mut rng, &sb);
        let lhs = w.sub(&kron(&a, &b).unwrap()).unwrap().norm();
        let rhs = rearrange_w(&w, &sb)
            .unwrap()
            .sub(&Matrix::outer(&rearrange_a(&a), &rearrange_b(&b)))
            .unwrap()
            .frobenius_norm();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1.0));
    }
}

#[test]
fn full_rank_is_exact_for_every_pair() {
    let mut rng = rng(35);
    for shape in [[4usize, 6, 3, 2], [8, 4, 3, 3], [2, 9, 1, 5]] {
        let w = random_tensor(&mut rng, &shape);
        for &a0 in &divisors(shape[0]) {
            for &a1 in &divisors(shape[1]) {
                for &a2 in &divisors(shape[2]) {
                    for &a3 in &divisors(shape[3]) {
                        let shape_a = [a0, a1, a2, a3];
                        let p = FactorShapePair::from_shape_a(&shape, &shape_a).unwrap();
                        let d = gkpd_solve(&w, &p, p.full_rank()).unwrap();
                        assert!(d.achieved_error <= 1e-8 * w.norm(), "{shape_a:?}: {}", d.achieved_error);
                    }
                }
            }
        }
    }
}

#[test]
fn error_equals_singular_tail() {
    let mut rng = rng(36);
    let w = random_tensor(&mut rng, &[4, 4]);
    let p = pair(&[2, 2], &[2, 2]);
    let d = gkpd_solve(&w, &p, 2).unwrap();
    let m = rearrange_by_slicing(&w, &[2, 2]);
    let s = singular_values_by_gram(&m);
    let tail = s[2] * s[2] + s[3] * s[3];
    assert!((d.singular_tail_sq - tail).abs() <= 1e-10 * w.norm().powi(2));
    assert!((d.achieved_error - tail.sqrt()).abs() <= 1e-10 * w.norm());
    assert!((reconstruction_error(&w, &d).unwrap() - d.achieved_error).abs() < 1e-14);
}

#[test]
fn planted_sum_recovered_at_its_rank() {
    let mut rng = rng(37);
    let p = pair(&[4, 2, 1, 1], &[2, 3, 3, 3]);
    let mut w = DenseTensor::zeros(&p.target_shape()).unwrap();
    for _ in 0..3 {
        let a = random_tensor(&mut rng, &p.shape_a);
        let b = random_tensor(&mut rng, &p.shape_b);
        w.add_assign(&kron(&a, &b).unwrap()).unwrap();
    }
    let d2 = gkpd_solve(&w, &p, 2).unwrap();
    let d3 = gkpd_solve(&w, &p, 3).unwrap();
    assert!(d2.achieved_error > 1e-3 * w.norm());
    assert!(d3.achieved_error <= 1e-10 * w.norm());
}

#[test]
fn zero_tensor_gives_zero_factors() {
    let w = DenseTensor::zeros(&[4, 2, 3, 3]).unwrap();
    let d = gkpd_solve(&w, &pair(&[2, 1, 1, 1], &[2, 2, 3, 3]), 2).unwrap();
    assert_eq!(d.achieved_error, 0.0);
    assert!(d.factors_a.iter().chain(&d.factors_b).all(|f| f.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn shape_errors_name_the_dimension() {
    let w = DenseTensor::zeros(&[4, 6, 3, 3]).unwrap();
    match gkpd_solve(&w, &pair(&[2, 4, 1, 1], &[2, 2, 3, 3]), 1) {
        Err(Error::Shape { dim: Some(1), .. }) => {}
        other => panic!("expected shape error in dim 1, got {other:?}"),
    }
    assert!(matches!(
        gkpd_solve(&w, &pair(&[2, 3, 1, 1], &[2, 2, 3, 3]), 7),
        Err(Error::Parameter(_))
    ));
    let mut bad = w.clone();
    bad.data_mut()[3] = f64::INFINITY;
    assert!(matches!(
        gkpd_solve(&bad, &pair(&[2, 3, 1, 1], &[2, 2, 3, 3]), 1),
        Err(Error::Numeric(_))
    ));
}

#[test]
fn gkpd_is_no_worse_than_als() {
    let mut rng = rng(38);
    for _ in 0..10 {
        let p = pair(&[2, 3, 1, 1], &[4, 2, 3, 3]);
        let w = random_tensor(&mut rng, &p.target_shape());
        for r in 1..=3 {
            let d = gkpd_solve(&w, &p, r).unwrap();
            let m = rearrange_by_slicing(&w, &p.shape_b);
            let best = (0..20).map(|_| als_rank_r(&m, r, 50, &mut rng)).fold(f64::INFINITY, f64::min);
            assert!(d.achieved_error.powi(2) <= best + 1e-8 * w.norm().powi(2));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scaling_the_tensor_scales_the_solution(seed in any::<u64>(), c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
        let mut rng = common::rng(seed);
        let p = pair(&[2, 2, 1, 3], &[3, 1, 3, 1]);
        let w = random_tensor(&mut rng, &p.target_shape());
        let d1 = gkpd_solve(&w, &p, 2).unwrap();
        let d2 = gkpd_solve(&w.scale(c), &p, 2).unwrap();
        prop_assert!((d2.achieved_error - c.abs() * d1.achieved_error).abs() <= 1e-10 * c.abs() * w.norm());
        for (x, y) in d1.singular_values.iter().zip(&d2.singular_values) {
            prop_assert!((y - c.abs() * x).abs() <= 1e-10 * c.abs() * d1.singular_values[0]);
        }
        let scaled = d1.reconstruct().scale(c);
        prop_assert!(scaled.max_abs_diff(&d2.reconstruct()).unwrap() <= 1e-9 * c.abs());
    }

    #[test]
    fn error_never_grows_with_more_terms(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let p = pair(&[3, 2, 1, 1], &[2, 2, 3, 3]);
        let w = random_tensor(&mut rng, &p.target_shape());
        let mut prev = f64::INFINITY;
        for r in 1..=p.full_rank() {
            let e = gkpd_solve(&w, &p, r).unwrap().achieved_error;
            prop_assert!(e <= prev + 1e-12 * w.norm());
            prev = e;
        }
    }

    #[test]
    fn kron_inputs_are_rank_one(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let a = random_tensor(&mut rng, &[2, 3, 1, 2]);
        let b = random_tensor(&mut rng, &[3, 1, 2, 2]);
        let w = kron(&a, &b).unwrap();
        let d = gkpd_solve(&w, &pair(&[2, 3, 1, 2], &[3, 1, 2, 2]), 1).unwrap();
        prop_assert!(d.achieved_error <= 1e-12 * w.norm());
        prop_assert!((d.singular_values[0] - a.norm() * b.norm()).abs() <= 1e-12 * w.norm());
    }
}
