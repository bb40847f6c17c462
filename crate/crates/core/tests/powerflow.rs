mod common;

use adnflex::powerflow::PowerFlow;
use common::{jacobian_error, polar_powerflow, random_transmission, rng, scrambled};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn rectangular_solution_matches_polar_oracle() {
    let mut r = rng(7);
    let mut solved = 0;
    for _ in 0..50 {
        let n = r.random_range(2..=10);
        let case = random_transmission(&mut r, n);
        let lambda = r.random_range(0.0..0.5);
        let Some(oracle) = polar_powerflow(&case, lambda) else { continue };
        let pf = PowerFlow::new(&case).unwrap();
        let mut start = pf.flat_start();
        start.lambda = lambda;
        let pt = pf.solve(&start).unwrap();
        for k in 0..n {
            assert!((pt.vm(k) - oracle.vm[k]).abs() < 1e-8, "bus {k}");
            assert!((pt.angle_deg(k).to_radians() - oracle.va[k]).abs() < 1e-8, "bus {k}");
        }
        assert!((pt.delta_l - oracle.delta_l).abs() < 1e-5, "{} vs {} lam {lambda}", pt.delta_l, oracle.delta_l);
        solved += 1;
    }
    assert!(solved >= 45, "oracle solved only {solved} cases");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn jacobian_matches_central_differences(seed in 0u64..1_000_000) {
        let (pf, pt) = scrambled(seed);
        let err = jacobian_error(&pf, &pt);
        prop_assert!(err <= 1e-6, "seed {seed}: relative error {err}");
    }
}
