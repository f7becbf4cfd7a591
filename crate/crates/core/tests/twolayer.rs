use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use poresurr::kernels::{Kernel, KernelFamily, KernelSpec, TwoLayerKernelSpec};
use poresurr::twolayer::{optimize_a, singular_spectrum, AInit, TwoLayerTrainConfig};

fn points(seed: u64, n: usize, d: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, d, |_, _| rng.gen_range(0.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scaled_identity_equals_shallow_kernel(seed in any::<u64>(), eps in 0.03f64..2.0, f in 0usize..3) {
        let family = KernelFamily::ALL[f];
        let x = points(seed, 6, 4);
        let two: Kernel = TwoLayerKernelSpec::new(
            KernelSpec::new(family, 1.0).unwrap(),
            DMatrix::identity(4, 4) * eps,
        ).unwrap().into();
        let shallow: Kernel = KernelSpec::new(family, eps).unwrap().into();
        let (a, b) = (two.gram(&x, &x).unwrap(), shallow.gram(&x, &x).unwrap());
        prop_assert!((&a - &b).amax() <= 1e-14 * b.amax());
    }

    #[test]
    fn spectrum_reconstructs(seed in any::<u64>(), d in 1usize..7) {
        let a = points(seed, d, d) - DMatrix::from_element(d, d, 0.5);
        let s = singular_spectrum(&a);
        prop_assert!((s.reconstruct() - &a).amax() < 1e-12);
        prop_assert!(s.values.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn optimization_is_a_pure_function_of_its_inputs() {
    let x = points(1, 30, 3);
    let y = DMatrix::from_fn(30, 2, |i, j| (3.0 * x[(i, 0)]).sin() + j as f64);
    let cfg = TwoLayerTrainConfig {
        n_epochs: 20,
        batch_size: 8,
        a_init: AInit::Identity,
        ..Default::default()
    };
    let a = optimize_a(&x, &y, &cfg).unwrap();
    let b = optimize_a(&x, &y, &cfg).unwrap();
    assert_eq!(a, b);
    // four batches per epoch, the last one short
    assert_eq!(a.loss_history.len() + a.skipped_steps.len(), 20 * 4);
    let other = optimize_a(&x, &y, &TwoLayerTrainConfig { rng_seed: 9, ..cfg }).unwrap();
    assert_ne!(other.a, a.a);
}
