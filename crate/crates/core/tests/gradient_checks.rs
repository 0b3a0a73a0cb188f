mod common;

use kce_core::kernels::KernelSpec;
use kce_core::nystrom;
use kce_core::preimage::{mean_loss, train, PreimageConfig, PreimageNet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn preimage_loss_gradient() {
    for seed in 0..20 {
        let e = common::preimage_gradient_error(seed);
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

#[test]
fn mlp_adversary_gradient() {
    for seed in 0..20 {
        let e = common::mlp_gradient_error(seed);
        assert!(e < 1e-4, "seed {seed}: relative error {e}");
    }
}

fn setup(
    seed: u64,
) -> (
    DMatrix<f64>,
    DMatrix<f64>,
    DMatrix<f64>,
    nystrom::NystromMap,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(60, 3, |_, _| rng.random_range(-1.0..1.0));
    let dev = DMatrix::from_fn(20, 3, |_, _| rng.random_range(-1.0..1.0));
    let map = nystrom::fit(&x, &KernelSpec::rbf(1.0).unwrap(), 20, seed).unwrap();
    let r = map.rank();
    let w = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0)).normalize();
    let p = DMatrix::identity(r, r) - &w * w.transpose();
    (x, dev, p, map)
}

#[test]
fn fresh_net_is_exact_identity() {
    let (x, _, _, _) = setup(0);
    let net = PreimageNet::with_sizes(3, 16, 8, 0.1, 4).unwrap();
    assert_eq!(net.forward_rows(&x, false, 0).unwrap(), x);
    assert_eq!(net.forward_rows(&x, true, 9).unwrap(), x);
}

#[test]
fn selected_dev_loss_never_exceeds_initial() {
    for seed in 0..4 {
        let (x, dev, p, map) = setup(seed);
        let net = PreimageNet::with_sizes(3, 16, 8, 0.1, seed).unwrap();
        let cfg = PreimageConfig {
            lr: 0.5,
            batch_size: 16,
            total_batches: 60,
            eval_every: 10,
            seed,
        };
        let fit = train(&net, &x, &dev, &p, &map, &cfg).unwrap();
        let initial = mean_loss(&net, &dev, &p, &map).unwrap();
        let chosen = mean_loss(&fit.net, &dev, &p, &map).unwrap();
        assert!(chosen <= initial);
        assert_eq!(fit.history[0], (0, initial));
        let again = train(&net, &x, &dev, &p, &map, &cfg).unwrap();
        assert_eq!(fit, again);
    }
}
