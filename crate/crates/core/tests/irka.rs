mod common;

use common::*;
use nalgebra::dvector;
use proptest::prelude::*;
use stochmor::irka::*;
use stochmor::linalg::{block_diag, eigenvalues};
use stochmor::metrics::{l2w_distance, sqrtm_psd, AdditiveEvaluator};
use stochmor::wave::{build_wave_model, Preset, WaveConfig};
use stochmor::{CMat, Error, Mat, NoiseKind, StateSpaceModel, WeightMatrix, C64};

fn guess_of(m: &StateSpaceModel, b: &Mat) -> Initialization {
    Initialization::Given(Box::new(ReducedGuess { a: m.a.clone(), b: b.clone(), c: m.c.clone(), n: m.noise_matrices().to_vec() }))
}

fn projector(v: &Mat) -> Mat {
    v * v.transpose()
}

/// `sin` of the largest principal angle between two orthonormal bases.
fn subspace_gap(v: &Mat, w: &Mat) -> f64 {
    (projector(v) - projector(w)).svd(false, false).singular_values.max()
}

fn wave_mult(n: usize) -> StateSpaceModel {
    build_wave_model(&WaveConfig::preset(Preset::Mult, n)).unwrap()
}

#[test]
fn full_order_guess_is_a_fixed_point() {
    let m = random_multiplicative(&mut rng(21), 5, 2, 2, 2);
    let opts = IrkaOptions { init: guess_of(&m, &m.b1), ..Default::default() };
    let res = reduce_bilinear_irka(&m, 5, &WeightMatrix::identity(2), &opts).unwrap();
    assert!(res.converged);
    assert_eq!(res.iterations, 1);
    assert!(l2w_distance(&m, &res.reduced, &WeightMatrix::identity(2)).unwrap().distance <= 1e-8);
}

#[test]
fn scalar_h2_optimum_matches_grid_search() {
    let a = Mat::from_diagonal(&dvector![-1.0, -3.0]);
    let b = Mat::from_column_slice(2, 1, &[1.0, 1.0]);
    let c = Mat::from_row_slice(1, 2, &[1.0, 1.0]);
    let (ah, bh, ch, res) = reduce_linear_irka(&a, &b, &c, 1, &Mat::identity(1, 1), &IrkaOptions::default()).unwrap();
    assert!(res.converged);

    // ‖h − g e^{â t}‖² = 7/6 − 2g S(â) + g²/(−2â) with S = 1/(1−â) + 1/(3−â);
    // the optimal gain is g = −2â S, leaving 7/6 + 2â S².
    let s = |x: f64| 1.0 / (1.0 - x) + 1.0 / (3.0 - x);
    let err = |x: f64| 7.0 / 6.0 + 2.0 * x * s(x) * s(x);
    let mut best = (f64::INFINITY, 0.0);
    for i in 1..400_000 {
        let x = -4.0 * i as f64 / 400_000.0;
        if err(x) < best.0 {
            best = (err(x), x);
        }
    }
    let (a_opt, g_opt) = (best.1, -2.0 * best.1 * s(best.1));
    assert!((ah[(0, 0)] - a_opt).abs() < 1e-3, "{} vs {a_opt}", ah[(0, 0)]);
    assert!((bh[(0, 0)] * ch[(0, 0)] - g_opt).abs() < 1e-3);
}

#[test]
fn random_projection_is_not_stationary() {
    let m = random_multiplicative(&mut rng(22), 10, 1, 2, 1);
    let opts = IrkaOptions { init: Initialization::Random { seed: 3 }, max_iter: 0, ..Default::default() };
    let res = reduce_bilinear_irka(&m, 3, &WeightMatrix::identity(1), &opts).unwrap();
    assert!(!res.converged);
    let o = optimality_residuals(&m, &res.reduced, &WeightMatrix::identity(1)).unwrap();
    assert!(o.max() > 1e-2, "{o:?}");
}

#[test]
fn similar_full_order_model_is_stationary() {
    let mut g = rng(23);
    let m = random_multiplicative(&mut g, 6, 1, 2, 2);
    let t = well_conditioned(&mut g, 6);
    let o = optimality_residuals(&m, &transform(&m, &t), &WeightMatrix::identity(1)).unwrap();
    assert!(o.max() < 1e-10, "{o:?}");
}

#[test]
fn converged_wave_reduction_fixed_point_and_realization_invariance() {
    let m = wave_mult(60);
    let w = WeightMatrix::identity(1);
    let res = reduce_bilinear_irka(&m, 6, &w, &IrkaOptions::default()).unwrap();
    assert!(res.converged);
    assert!((res.v.tr_mul(&res.v) - Mat::identity(6, 6)).norm() < 1e-12);
    assert!((res.wb.tr_mul(&res.wb) - Mat::identity(6, 6)).norm() < 1e-12);
    let again = petrov_galerkin_project(&m, &res.v, &res.wb).unwrap();
    assert!((&again.a - &res.reduced.a).norm() <= 1e-10 * res.reduced.a.norm());

    let o = optimality_residuals(&m, &res.reduced, &w).unwrap();
    assert!(o.max() < 1e-6, "{o:?}");
    let t = well_conditioned(&mut rng(24), 6);
    let ot = optimality_residuals(&m, &transform(&res.reduced, &t), &w).unwrap();
    assert!(ot.max() < 1e-6, "{ot:?}");

    let restart = IrkaOptions { init: guess_of(&res.reduced, &res.reduced.b1), ..Default::default() };
    let res2 = reduce_bilinear_irka(&m, 6, &w, &restart).unwrap();
    assert!(res2.converged && res2.iterations <= 2);
    let last = res.history.last().unwrap();
    assert!(spectral_change(last, res2.history.last().unwrap()) < restart.tol);
}

#[test]
fn history_is_independent_of_thread_count() {
    let m = wave_mult(40);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| reduce_bilinear_irka(&m, 4, &WeightMatrix::identity(1), &IrkaOptions::default()).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.history, b.history);
    assert_eq!(a.reduced, b.reduced);
}

/// Textbook IRKA: interpolate at the mirrored reduced poles.
fn classical_irka_step(a: &Mat, b: &Mat, c: &Mat, ah: &Mat) -> (Mat, Mat, Mat) {
    let n = a.nrows();
    let shifts: Vec<C64> = eigenvalues(ah).unwrap().into_iter().map(|z| -z).collect();
    let ac = a.map(|x| C64::new(x, 0.0));
    let bc = b.map(|x| C64::new(x, 0.0));
    let ct = c.transpose().map(|x| C64::new(x, 0.0));
    let eye = CMat::identity(n, n);
    let mut vcols = Vec::new();
    let mut wcols = Vec::new();
    for s in &shifts {
        vcols.push((&eye * *s - &ac).lu().solve(&bc).unwrap().column(0).into_owned());
        wcols.push((&eye * *s - ac.transpose()).lu().solve(&ct).unwrap().column(0).into_owned());
    }
    let v = realify_orthonormalize(&CMat::from_columns(&vcols)).unwrap();
    let w = realify_orthonormalize(&CMat::from_columns(&wcols)).unwrap();
    let m = w.tr_mul(&v).try_inverse().unwrap();
    let ah = &m * w.tr_mul(&(a * &v));
    (v, w, ah)
}

#[test]
fn linear_specialization_matches_textbook_irka() {
    let mut g = rng(25);
    let q = gaussian(&mut g, 20, 20);
    let a = -(&q * q.transpose() / 20.0 + Mat::identity(20, 20) * 0.5);
    let b = gaussian(&mut g, 20, 1);
    let c = gaussian(&mut g, 1, 20);
    let v0 = realify_orthonormalize(&gaussian(&mut g, 20, 4).map(|x| C64::new(x, 0.0))).unwrap();
    let a0 = v0.tr_mul(&(&a * &v0));
    let guess = ReducedGuess { a: a0.clone(), b: v0.tr_mul(&b), c: &c * &v0, n: vec![] };

    let mut ah = a0;
    let mut expected = (Mat::zeros(0, 0), Mat::zeros(0, 0));
    for _ in 0..3 {
        let (v, w, next) = classical_irka_step(&a, &b, &c, &ah);
        ah = next;
        expected = (v, w);
    }
    let opts = IrkaOptions { init: Initialization::Given(Box::new(guess)), max_iter: 3, tol: 0.0, ..Default::default() };
    let (_, _, _, res) = reduce_linear_irka(&a, &b, &c, 4, &Mat::identity(1, 1), &opts).unwrap();
    assert_eq!(res.iterations, 3);
    assert!(subspace_gap(&res.v, &expected.0) < 1e-8, "{}", subspace_gap(&res.v, &expected.0));
    assert!(subspace_gap(&res.wb, &expected.1) < 1e-8);
}

#[test]
fn noise_subsystem_is_weighted_bilinear_irka_without_noise() {
    let mut g = rng(26);
    let mut m = random_additive(&mut g, 12, 1, 2, 1);
    let q = gaussian(&mut g, 12, 12);
    m.a = -(&q * q.transpose() / 12.0 + Mat::identity(12, 12) * 0.5);
    let opts = IrkaOptions::default();
    let two = reduce_two_step(&m, 3, 2, &opts).unwrap();
    let b2 = m.b2.clone().unwrap();
    let as_bilinear = StateSpaceModel::multiplicative(m.a.clone(), b2, vec![], m.c.clone(), Mat::zeros(0, 0)).unwrap();
    let w = WeightMatrix::new(sqrtm_psd(&m.k).unwrap()).unwrap();
    let direct = reduce_bilinear_irka(&as_bilinear, 2, &w, &opts).unwrap();
    assert_eq!(direct.reduced.a, two.part2.reduced.a);
    assert_eq!(Some(&direct.reduced.b1), two.part2.reduced.b2.as_ref());
    assert_eq!(direct.reduced.c, two.part2.reduced.c);
    assert_eq!(direct.history, two.part2.history);
}

#[test]
fn zero_noise_columns_do_not_change_one_step() {
    let base = random_additive(&mut rng(27), 12, 1, 2, 1);
    let m = StateSpaceModel::additive(base.a.clone(), base.b1.clone(), Mat::zeros(12, 2), base.c.clone(), Mat::identity(2, 2)).unwrap();
    let one = reduce_one_step(&m, 3, &IrkaOptions::default()).unwrap();
    let (_, _, _, lin) = reduce_linear_irka(&m.a, &m.b1, &m.c, 3, &Mat::identity(1, 1), &IrkaOptions::default()).unwrap();
    assert!(subspace_gap(&one.v, &lin.v) < 1e-10);
    assert!(subspace_gap(&one.wb, &lin.wb) < 1e-10);
    assert!((&one.reduced.a - &lin.reduced.a).norm() < 1e-10);
    assert!(one.reduced.b2.as_ref().unwrap().norm() < 1e-12);
}

#[test]
fn one_step_weight_gram_is_the_weight_square() {
    let k = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
    let w = block_diag(&Mat::identity(1, 1), &sqrtm_psd(&k).unwrap());
    let mut g = rng(28);
    let b = gaussian(&mut g, 7, 3);
    let bt = gaussian(&mut g, 4, 3);
    let lhs = -(&b * one_step_weight_gram(1, &k) * bt.transpose());
    let rhs = -((&b * &w) * (&bt * &w).transpose());
    assert!((lhs - rhs).norm() < 1e-14 * b.norm() * bt.norm());
}

#[test]
fn exact_two_step_gives_zero_bounds() {
    let m = random_additive(&mut rng(29), 5, 1, 2, 1);
    let b2 = m.b2.clone().unwrap();
    let as_det = |b: &Mat| StateSpaceModel::deterministic(m.a.clone(), b.clone(), m.c.clone()).unwrap();
    let o1 = IrkaOptions { init: guess_of(&as_det(&m.b1), &m.b1), ..Default::default() };
    let o2 = IrkaOptions { init: guess_of(&as_det(&b2), &b2), ..Default::default() };
    let two = reduce_two_step_with(&m, 5, 5, &o1, &o2).unwrap();
    let b = AdditiveEvaluator::new(&m, &Default::default()).unwrap().two_step(&two, 1.0).unwrap();
    assert!(b.e1 <= 1e-8 && b.e2 <= 1e-8, "{b:?}");
}

#[test]
fn petrov_galerkin_examples() {
    let m = random_multiplicative(&mut rng(30), 5, 1, 2, 1);
    let eye = Mat::identity(5, 5);
    let lead = eye.columns(0, 2).into_owned();
    let red = petrov_galerkin_project(&m, &lead, &lead).unwrap();
    assert_eq!(red.a, m.a.view((0, 0), (2, 2)).into_owned());
    assert_eq!(red.b1, m.b1.rows(0, 2).into_owned());
    assert_eq!(red.c, m.c.columns(0, 2).into_owned());
    assert_eq!(red.n.as_ref().unwrap()[1], m.n.as_ref().unwrap()[1].view((0, 0), (2, 2)).into_owned());
    assert_eq!(petrov_galerkin_project(&m, &eye, &eye).unwrap(), m);
    let other = eye.columns(2, 2).into_owned();
    assert!(matches!(petrov_galerkin_project(&m, &lead, &other), Err(Error::Singular { .. })));
}

#[test]
fn realify_examples() {
    let s = 0.5f64.sqrt();
    let v = CMat::from_column_slice(2, 2, &[C64::new(s, 0.0), C64::new(0.0, s), C64::new(s, 0.0), C64::new(0.0, -s)]);
    let q = realify_orthonormalize(&v).unwrap();
    assert!((projector(&q) - Mat::identity(2, 2)).norm() < 1e-12);
    let dup = CMat::from_column_slice(3, 2, &[C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(2.0, 0.0), C64::new(0.0, 0.0)]);
    assert!(matches!(realify_orthonormalize(&dup), Err(Error::RankDeficient { expected: 2, rank: 1 })));
}

#[test]
fn algorithm_kind_is_enforced() {
    let add = random_additive(&mut rng(31), 4, 1, 2, 1);
    assert!(reduce_bilinear_irka(&add, 2, &WeightMatrix::identity(1), &IrkaOptions::default()).is_err());
    let mult = random_multiplicative(&mut rng(32), 4, 1, 1, 1);
    assert_eq!(mult.kind, NoiseKind::Multiplicative);
    assert!(reduce_two_step(&mult, 2, 2, &IrkaOptions::default()).is_err());
    assert!(reduce_one_step(&mult, 2, &IrkaOptions::default()).is_err());
    assert!(reduce_bilinear_irka(&mult, 0, &WeightMatrix::identity(1), &IrkaOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn residuals_are_nonnegative_and_similarity_stable(seed in any::<u64>(), n in 3usize..=8) {
        let mut g = rng(seed);
        let m = random_multiplicative(&mut g, n, 1, 2, 1);
        let opts = IrkaOptions { init: Initialization::Random { seed }, max_iter: 0, ..Default::default() };
        let red = reduce_bilinear_irka(&m, 2, &WeightMatrix::identity(1), &opts).unwrap().reduced;
        let t = well_conditioned(&mut g, 2);
        let o1 = optimality_residuals(&m, &red, &WeightMatrix::identity(1)).unwrap();
        prop_assert!(o1.res_a >= 0.0 && o1.res_b >= 0.0 && o1.res_d >= 0.0 && o1.res_c.iter().all(|&x| x >= 0.0));
        let o2 = optimality_residuals(&m, &transform(&red, &t), &WeightMatrix::identity(1)).unwrap();
        prop_assert!(o2.max().is_finite() && o2.max() > 0.0);
    }
}
