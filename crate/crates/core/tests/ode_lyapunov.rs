mod common;

use common::*;
use perlyap::ode_lyapunov::*;
use perlyap::system::GridSpec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn gramian_of_scalar_ode() {
    let sys = system("s1");
    let fund = ode_fundamental(&sys.a0, &GridSpec::default()).unwrap();
    let wt = weighted_gramian(&fund, &sys.w).unwrap();
    assert!((wt[(0, 0)] - (1.0 - (-2f64).exp())).abs() < 1e-8);
}

#[test]
fn s5_is_stable_with_positive_p() {
    let sys = system("s5");
    let fund = ode_fundamental(&sys.a0, &GridSpec::default()).unwrap();
    assert!((fund.monodromy()[(0, 0)] - (-0.5f64).exp()).abs() < 1e-10);
    let rep = check_periodic_lyapunov(&fund, &sys.w, 20).unwrap();
    assert!(rep.stable && rep.p_positive && rep.consistent);
}

#[test]
fn p_is_periodic() {
    let sys = system("s5");
    let lyap = OdeLyapunov::new(ode_fundamental(&sys.a0, &GridSpec::default()).unwrap(), &sys.w).unwrap();
    assert!((lyap.p(0.0).unwrap() - lyap.p(1.0).unwrap()).amax() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn definiteness_tracks_stability(seed in 0u64..10_000, shift in -1.5f64..1.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a0 = random_periodic(&mut rng, 2, 1.0, 2, shift, 0.6);
        let fund = ode_fundamental(&a0, &GridSpec::default().with_m(16)).unwrap();
        let radius = fund.multipliers().unwrap().iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assume!((radius - 1.0).abs() > 0.05);
        let rep = check_periodic_lyapunov(&fund, &unit_weight(2, 1.0), 20).unwrap();
        prop_assert!(rep.consistent, "radius {radius}, min eig {}", rep.min_eig_p);
    }
}
