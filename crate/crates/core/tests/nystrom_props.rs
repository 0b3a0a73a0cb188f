use kce_core::kernels::{gram, KernelSpec};
use kce_core::nystrom;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(max_n: usize, max_d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (2..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        prop::collection::vec(-1.0..1.0f64, n * d)
            .prop_map(move |v| DMatrix::from_row_slice(n, d, &v))
    })
}

fn psd_kernels() -> Vec<KernelSpec> {
    vec![
        KernelSpec::Linear,
        KernelSpec::poly(0.5, 0.3, 3).unwrap(),
        KernelSpec::rbf(0.3).unwrap(),
        KernelSpec::rbf(2.0).unwrap(),
        KernelSpec::laplace(0.3).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn full_rank_is_exact(x in points(64, 5), seed in 0u64..1000) {
        for k in psd_kernels() {
            let map = nystrom::fit(&x, &k, x.nrows(), seed).unwrap();
            let phi = map.transform_rows(&x).unwrap();
            let exact = gram(&k, &x).unwrap().entries;
            let err = (&phi * phi.transpose() - exact).amax();
            prop_assert!(err < 1e-8, "{k}: {err}");
        }
    }

    #[test]
    fn landmarks_are_reproduced(x in points(40, 4), seed in 0u64..1000) {
        let k = KernelSpec::rbf(0.5).unwrap();
        let l = (x.nrows() / 2).max(1);
        let map = nystrom::fit(&x, &k, l, seed).unwrap();
        let phi = map.transform_rows(&map.landmarks).unwrap();
        let exact = gram(&k, &map.landmarks).unwrap().entries;
        prop_assert!((&phi * phi.transpose() - exact).amax() < 1e-8);
    }

    #[test]
    fn fitting_is_deterministic(x in points(30, 4), seed in 0u64..1000) {
        let k = KernelSpec::laplace(0.3).unwrap();
        let a = nystrom::fit(&x, &k, 10.min(x.nrows()), seed).unwrap();
        let b = nystrom::fit(&x, &k, 10.min(x.nrows()), seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn error_shrinks_with_more_landmarks() {
    let k = KernelSpec::rbf(1.0).unwrap();
    let sizes = [4, 8, 16, 32];
    let mut means = vec![0.0; sizes.len()];
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(64, 3, |_, _| rng.random_range(-1.0..1.0));
        let exact = gram(&k, &x).unwrap().entries;
        for (slot, &l) in sizes.iter().enumerate() {
            let phi = nystrom::fit(&x, &k, l, seed)
                .unwrap()
                .transform_rows(&x)
                .unwrap();
            means[slot] += (&exact - &phi * phi.transpose()).norm() / 20.0;
        }
    }
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "{means:?}");
    }
}
