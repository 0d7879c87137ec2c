mod common;

use approx::assert_abs_diff_eq;
use common::*;
use nalgebra::DVector;
use perlyap::propagation::*;
use perlyap::system::HilbertState;
use proptest::prelude::*;
use std::sync::OnceLock;

fn unit_state(m: usize) -> HilbertState {
    HilbertState::from_fn(DVector::from_element(1, 1.0), m, 1.0, |_| DVector::from_element(1, 1.0))
}

fn table(name: &'static str) -> &'static FundamentalMatrixTable {
    static S2: OnceLock<FundamentalMatrixTable> = OnceLock::new();
    static P: OnceLock<FundamentalMatrixTable> = OnceLock::new();
    static OSC: OnceLock<FundamentalMatrixTable> = OnceLock::new();
    let cell = match name {
        "s2" => &S2,
        "periodic" => &P,
        _ => &OSC,
    };
    cell.get_or_init(|| fundamental_matrix(&system(name), &grid(32)).unwrap())
}

#[test]
fn scalar_ode_decays_exponentially() {
    let traj = integrate_dde(&system("s1"), &grid(32), 0.0, &unit_state(32), 2.0).unwrap();
    assert_abs_diff_eq!(traj.x(1.0)[0], (-1f64).exp(), epsilon = 1e-8);
}

#[test]
fn pure_delay_follows_method_of_steps() {
    let traj = integrate_dde(&system("s2"), &grid(32), 0.0, &unit_state(32), 2.0).unwrap();
    assert_abs_diff_eq!(traj.x(0.5)[0], 0.5, epsilon = 1e-12);
    // On [1, 2]: x(t) = -t + (t - 1)^2 / 2 + 1.
    assert_abs_diff_eq!(traj.x(1.5)[0], -1.5 + 0.125 + 1.0, epsilon = 1e-12);
}

#[test]
fn fundamental_matrix_of_ode_is_exponential() {
    let kt = fundamental_matrix(&system("s1"), &grid(16)).unwrap();
    for (t, s) in [(0.5, 0.1), (2.3, 0.7), (1.0, 1.0)] {
        assert_abs_diff_eq!(kt.k(t, s).unwrap()[(0, 0)], (-(t - s)).exp(), epsilon = 1e-9);
    }
    assert_eq!(kt.k(0.2, 0.5).unwrap()[(0, 0)], 0.0);
    assert_eq!(kt.k_lim(0.5, 0.5, Approach::FromBelow).unwrap()[(0, 0)], 0.0);
    assert_eq!(kt.k_lim(0.5, 0.5, Approach::FromAbove).unwrap()[(0, 0)], 1.0);
}

#[test]
fn out_of_table_is_reported() {
    let kt = table("s2");
    assert!(kt.k(kt.span() + 1.0, 0.0).is_err());
}

#[test]
fn composition_improves_under_refinement() {
    let sys = system("periodic");
    let r = |m: usize| {
        let kt = fundamental_matrix(&sys, &grid(m)).unwrap();
        composition_residual(&kt, 2.37, 1.21, 0.13).unwrap().amax()
    };
    let (coarse, fine) = (r(8), r(16));
    assert!(fine < coarse / 3.0, "{coarse} -> {fine}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn composition_identity_holds(s in 0.0f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.5, pick in 0usize..3) {
        let kt = table(["s2", "periodic", "oscillator"][pick]);
        let (xi, t) = (s + a, s + a + b);
        prop_assert!(composition_residual(kt, t, xi, s).unwrap().amax() < 1e-4);
    }

    #[test]
    fn cauchy_formula_matches_direct_integration(seed in 0u64..1000, t in 0.05f64..2.5, pick in 0usize..2) {
        let kt = table(["s2", "periodic"][pick]);
        let phi = perlyap::functional::random_states(1, 32, 1.0, 1, seed).pop().unwrap();
        let traj = integrate_dde(kt.system(), kt.grid(), 0.0, &phi, 3.0).unwrap();
        let x = cauchy_solution(kt, 0.0, &phi, t).unwrap();
        prop_assert!((x - traj.x(t)).amax() < 1e-6);
    }

    #[test]
    fn solution_is_linear_in_state(s1 in 0u64..500, s2 in 0u64..500, alpha in -2.0f64..2.0) {
        let kt = table("oscillator");
        let a = perlyap::functional::random_states(2, 16, 1.0, 1, s1).pop().unwrap();
        let b = perlyap::functional::random_states(2, 16, 1.0, 1, s2).pop().unwrap();
        let c = HilbertState::new(&a.head * alpha + &b.head, a.tail.iter().zip(&b.tail).map(|(x, y)| x * alpha + y).collect(), 1.0).unwrap();
        let t = 1.7;
        let lhs = cauchy_solution(kt, 0.0, &c, t).unwrap();
        let rhs = cauchy_solution(kt, 0.0, &a, t).unwrap() * alpha + cauchy_solution(kt, 0.0, &b, t).unwrap();
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }
}
