mod common;

use arnet_core::numopt::{projection_residual, solve_l1_projection};
use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn identity_examples() {
    let phi = solve_l1_projection(&(DMatrix::identity(3, 3) * 2.0), 1, 0.0).unwrap();
    assert_eq!(phi, vec![0.0, 0.5, 0.0]);
    let phi = solve_l1_projection(&DMatrix::identity(3, 3), 0, 1.0).unwrap();
    assert!(phi.iter().all(|v| *v == 0.0));
}

#[test]
fn rejects_bad_input() {
    let h = DMatrix::identity(2, 2);
    assert!(solve_l1_projection(&h, 2, 0.1).is_err());
    assert!(solve_l1_projection(&h, 0, -1.0).is_err());
    assert!(solve_l1_projection(&DMatrix::zeros(2, 3), 0, 0.1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn objective_matches_vertex_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = rng.gen_range(1..=3);
        let h = random_jacobian(q, &mut rng);
        let l = rng.gen_range(0..q);
        let tau = rng.gen_range(0.0..0.4);
        let phi = solve_l1_projection(&h, l, tau).unwrap();
        let brute = l1_projection_by_vertices(&h, l, tau).unwrap();
        let obj: f64 = phi.iter().map(|v| v.abs()).sum();
        prop_assert!((obj - brute).abs() < 1e-8, "{obj} vs {brute}");
        prop_assert!(residual_ok(&h, l, &phi, tau));
    }

    #[test]
    fn residual_within_tau(seed in any::<u64>(), q in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_jacobian(q, &mut rng);
        let l = rng.gen_range(0..q);
        let tau = rng.gen_range(0.0..0.3);
        let phi = solve_l1_projection(&h, l, tau).unwrap();
        prop_assert!(projection_residual(&h, l, &phi) <= tau + 1e-8);
    }
}
