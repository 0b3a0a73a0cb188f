mod common;

use common::{random_fantope_point, random_symmetric};
use kce_core::fantope_game::{
    fantope_project, round_projection, solve, FantopeIterate, GameState, SolverConfig,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Projection onto the Fantope by eigendecomposition and plain bisection on
/// the shift, independent of the library implementation.
fn oracle_project(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let e = SymmetricEigen::new(a.clone());
    let clipped = |t: f64| e.eigenvalues.map(|l| (l - t).clamp(0.0, 1.0));
    let (mut lo, mut hi) = (e.eigenvalues.min() - 1.0, e.eigenvalues.max());
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if clipped(mid).sum() > k as f64 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let l = clipped(0.5 * (lo + hi));
    &e.eigenvectors * DMatrix::from_diagonal(&l) * e.eigenvectors.transpose()
}

fn spectrum(b: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new(b.clone()).eigenvalues
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn projection_matches_oracle(seed in 0u64..100_000, r in 2usize..24, k in 1usize..4, scale in 0.1..5.0f64) {
        prop_assume!(k < r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_symmetric(r, scale, &mut rng);
        let p = fantope_project(&a, k).unwrap();
        prop_assert!((p.b.trace() - k as f64).abs() < 1e-8);
        let ev = spectrum(&p.b);
        prop_assert!(ev.min() >= -1e-9 && ev.max() <= 1.0 + 1e-9);
        prop_assert!((&p.b - oracle_project(&a, k)).amax() < 1e-7);
    }

    #[test]
    fn projection_is_idempotent(seed in 0u64..100_000, r in 2usize..24, k in 1usize..4) {
        prop_assume!(k < r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_symmetric(r, 2.0, &mut rng);
        let once = fantope_project(&a, k).unwrap();
        let twice = fantope_project(&once.b, k).unwrap();
        prop_assert!((&once.b - &twice.b).amax() < 1e-9);
    }

    #[test]
    fn projection_is_closest_feasible_point(seed in 0u64..100_000, r in 2usize..16, k in 1usize..4) {
        prop_assume!(k < r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_symmetric(r, 2.0, &mut rng);
        let p = fantope_project(&a, k).unwrap();
        let d = (&a - &p.b).norm();
        for _ in 0..10 {
            let f = random_fantope_point(r, k, &mut rng);
            prop_assert!((f.trace() - k as f64).abs() < 1e-9);
            prop_assert!(d <= (&a - &f).norm() + 1e-9);
        }
    }

    #[test]
    fn rounding_a_projection_is_exact(seed in 0u64..100_000, r in 3usize..16, k in 1usize..3) {
        prop_assume!(k < r);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = DMatrix::from_fn(r, r, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let u = q.columns(0, k).into_owned();
        let b = FantopeIterate { b: &u * u.transpose(), k };
        let rounded = round_projection(&b).unwrap();
        let theta = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
        let phi = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
        let relaxed = theta.dot(&((DMatrix::identity(r, r) - &b.b) * &phi));
        let exact = theta.dot(&(&rounded.p * &phi));
        prop_assert!((relaxed - exact).abs() < 1e-10);
    }
}

fn toy_problem(n: usize, r: usize, seed: u64) -> (DMatrix<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
    let y = (0..n).map(|i| x[(i, 0)] + 0.3 * x[(i, 1)] > 0.0).collect();
    (x, y)
}

#[test]
fn iterates_stay_feasible() {
    let (x, y) = toy_problem(120, 10, 1);
    let cfg = SolverConfig {
        batch_size: 32,
        lr_b: 0.5,
        lr_theta: 0.5,
        ..SolverConfig::default()
    };
    for k in 1..=3 {
        let mut state = GameState::new(x.nrows(), 10, k, &cfg).unwrap();
        for _ in 0..60 {
            state.step(&x, &y).unwrap();
            assert!(state.b().is_feasible(1e-8, 1e-9));
        }
    }
}

#[test]
fn solving_is_deterministic() {
    let (x, y) = toy_problem(200, 8, 2);
    let (dx, dy) = toy_problem(80, 8, 3);
    let cfg = SolverConfig {
        batch_size: 32,
        total_batches: 120,
        eval_every: 40,
        seed: 7,
        ..SolverConfig::default()
    };
    let a = solve(&x, &y, &dx, &dy, 1, &cfg).unwrap();
    let b = solve(&x, &y, &dx, &dy, 1, &cfg).unwrap();
    assert_eq!(a, b);
}
