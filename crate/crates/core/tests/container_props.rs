use kce_core::container::{
    game_from_section, game_section, nystrom_from_section, nystrom_section, preimage_from_section,
    preimage_section, Array, Container, Section,
};
use kce_core::fantope_game::{solve, SolverConfig};
use kce_core::kernels::KernelSpec;
use kce_core::nystrom;
use kce_core::preimage::PreimageNet;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn any_f64() -> impl Strategy<Value = f64> {
    prop_oneof![
        prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
        Just(f64::INFINITY),
        Just(f64::NEG_INFINITY),
    ]
}

fn array() -> impl Strategy<Value = Array> {
    ("[a-z.]{1,8}", prop::collection::vec(0u64..4, 0..3)).prop_flat_map(|(name, shape)| {
        let len = shape.iter().product::<u64>() as usize;
        prop::collection::vec(any_f64(), len).prop_map(move |data| Array {
            name: name.clone(),
            shape: shape.clone(),
            data,
        })
    })
}

fn section() -> impl Strategy<Value = Section> {
    (
        "[a-z]{1,6}",
        prop::collection::vec(("[a-z_]{1,5}", "[ -~]{0,12}"), 0..4),
        prop::collection::vec(array(), 0..4),
    )
        .prop_map(|(name, meta, arrays)| {
            let mut s = Section::new(&name);
            for (k, v) in meta {
                s = s.with_meta(&k, v);
            }
            s.arrays = arrays;
            s
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(80))]

    #[test]
    fn bytes_round_trip(sections in prop::collection::vec(section(), 0..4)) {
        let c = Container { sections, ..Container::default() };
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.sections.len(), c.sections.len());
        for (a, b) in c.sections.iter().zip(&back.sections) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(&a.metadata, &b.metadata);
            for (x, y) in a.arrays.iter().zip(&b.arrays) {
                prop_assert_eq!(&x.shape, &y.shape);
                prop_assert!(x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits()));
            }
        }
    }

    #[test]
    fn corrupted_bytes_are_rejected(sections in prop::collection::vec(section(), 1..3), pos in any::<prop::sample::Index>()) {
        let c = Container { sections, ..Container::default() };
        let mut bytes = c.to_bytes().unwrap();
        let i = pos.index(bytes.len());
        bytes[i] ^= 0x40;
        prop_assert!(Container::from_bytes(&bytes).is_err());
    }
}

#[test]
fn pipeline_artifacts_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = DMatrix::from_fn(60, 3, |_, _| rng.random_range(-1.0..1.0));
    let y: Vec<bool> = (0..60).map(|i| x[(i, 0)] * x[(i, 1)] > 0.0).collect();
    let map = nystrom::fit(
        &x,
        &"poly gamma=0.5 alpha=0.3 d=3"
            .parse::<KernelSpec>()
            .unwrap(),
        20,
        1,
    )
    .unwrap();
    let phi = map.transform_rows(&x).unwrap();
    let cfg = SolverConfig {
        batch_size: 16,
        total_batches: 30,
        eval_every: 10,
        ..SolverConfig::default()
    };
    let sol = solve(&phi, &y, &phi, &y, 1, &cfg).unwrap();
    let net = PreimageNet::with_sizes(3, 8, 5, 0.1, 2).unwrap();

    let mut c = Container::default();
    c.push(nystrom_section(&map));
    c.push(game_section(&sol));
    c.push(preimage_section(&net));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.kce1");
    c.write(&path).unwrap();
    let back = Container::read(&path).unwrap();
    assert_eq!(
        nystrom_from_section(back.section("nystrom").unwrap()).unwrap(),
        map
    );
    assert_eq!(
        game_from_section(back.section("game").unwrap()).unwrap(),
        sol
    );
    assert_eq!(
        preimage_from_section(back.section("preimage").unwrap()).unwrap(),
        net
    );
}
