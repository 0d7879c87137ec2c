mod common;

use std::sync::Arc;

use approx::assert_abs_diff_eq;
use common::*;
use nalgebra::DMatrix;
use perlyap::delay_lyapunov::*;
use perlyap::ode_lyapunov;
use perlyap::propagation::fundamental_matrix;
use perlyap::system::PeriodicMatrixFunction;
use perlyap::Error;

fn table(name: &str, m: usize) -> Arc<LyapunovMatrixTable> {
    Arc::new(solve_lyapunov_matrix(&system(name), &grid(m), &SolveOptions::default()).unwrap())
}

#[test]
fn shooting_oracle_reproduces_pure_delay_closed_form() {
    let one = DMatrix::from_element(1, 1, 1.0);
    let oracle = ShootingOracle::new(&(&one * 0.0), &(-&one), &one, 1.0);
    for tau in [-1.0, -0.4, 0.0, 0.25, 0.8, 1.0] {
        assert_abs_diff_eq!(oracle.v(tau)[(0, 0)], pure_delay_exact(tau), epsilon = 1e-10);
    }
}

#[test]
fn pure_delay_matches_shooting_oracle() {
    let tab = table("s2", 32);
    let one = DMatrix::from_element(1, 1, 1.0);
    let oracle = ShootingOracle::new(&(&one * 0.0), &(-&one), &one, 1.0);
    let d = tab.delta();
    let mut err = 0.0f64;
    for i in 0..=32 {
        for j in 0..=32 {
            let u = oracle.u(i as f64 * d, j as f64 * d);
            err = err.max((tab.get(i, j) - u).amax());
        }
    }
    assert!(err < 1e-5, "max nodal error {err}");
}

#[test]
fn matrix_time_invariant_system_matches_shooting_oracle() {
    let a0 = DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, -0.3, -0.8]);
    let a1 = DMatrix::from_row_slice(2, 2, &[-0.2, 0.1, 0.0, -0.4]);
    let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
    let sys = perlyap::system::DelaySystem::constant(1.0, 1.0, &a0, &a1, &w).unwrap();
    let tab = solve_lyapunov_matrix(&sys, &grid(16), &SolveOptions::default()).unwrap();
    let oracle = ShootingOracle::new(&a0, &a1, &w, 1.0);
    let d = tab.delta();
    let mut err = 0.0f64;
    for i in (0..=16).step_by(3) {
        for j in (0..=16).step_by(2) {
            err = err.max((tab.get(i, j) - oracle.u(i as f64 * d, j as f64 * d)).amax());
        }
    }
    assert!(err < 1e-4, "max nodal error {err}");
}

#[test]
fn ode_case_reduces_to_periodic_lyapunov_matrix() {
    let sys = system("s5");
    let g = grid(16);
    let tab = solve_lyapunov_matrix(&sys, &g, &SolveOptions::default()).unwrap();
    let fund = ode_lyapunov::ode_fundamental(&sys.a0, &g).unwrap();
    let lyap = ode_lyapunov::OdeLyapunov::new(fund, &sys.w).unwrap();
    let d = tab.delta();
    for i in (0..=16).step_by(4) {
        let th = i as f64 * d;
        for j in i..=16 {
            let s = j as f64 * d;
            let expect = lyap.fund.phi_ts(s, th).unwrap().transpose() * lyap.p(s).unwrap();
            assert!((tab.get(i, j) - expect).amax() < 1e-5, "({th}, {s})");
        }
    }
}

#[test]
fn s1_extension_closed_form() {
    let ev = ExtendedEvaluator::new(table("s1", 16));
    assert_abs_diff_eq!(ev.eval(-0.5, 0.25).unwrap()[(0, 0)], (-0.75f64).exp(), epsilon = 1e-6);
    assert_abs_diff_eq!(ev.eval(1.7, 0.4).unwrap()[(0, 0)], (-1.3f64).exp(), epsilon = 1e-6);
}

#[test]
fn extension_matches_oracle_off_the_table() {
    let ev = ExtendedEvaluator::new(table("s2", 32));
    for (th, s) in [(0.13, 0.71), (1.3, 1.45), (2.2, 1.6), (0.4, 1.1), (3.05, 2.5)] {
        let tau: f64 = th - s;
        let exact = pure_delay_exact(tau);
        assert!((ev.eval(th, s).unwrap()[(0, 0)] - exact).abs() < 1e-5, "({th}, {s})");
    }
    assert!(matches!(ev.eval(0.0, 2.5), Err(Error::UnsupportedSeparation { .. })));
}

#[test]
fn evaluator_returns_table_nodes_unchanged() {
    let tab = table("periodic", 16);
    let ev = ExtendedEvaluator::new(tab.clone());
    let d = tab.delta();
    assert_eq!(ev.eval(3.0 * d, 7.0 * d).unwrap(), *tab.get(3, 7));
    assert_eq!(ev.eval(7.0 * d, 3.0 * d).unwrap(), *tab.get(7, 3));
}

#[test]
fn connection_function_agrees_with_shifted_matrix() {
    let ev = ExtendedEvaluator::new(table("periodic", 32));
    assert!(g_residual(&ev).unwrap() < 1e-5);
    for s in [0.0, 0.3, 1.0] {
        let r = ev.g(1.0, s).unwrap() - ev.eval(0.0, s).unwrap();
        assert!(r.amax() < 1e-5, "s = {s}");
    }
}

#[test]
fn zero_weight_gives_zero_matrix() {
    let sys = system("periodic");
    let zero = PeriodicMatrixFunction::constant_symmetric(&DMatrix::zeros(1, 1), 1.0).unwrap();
    let sys = sys.with_weight(zero).unwrap();
    let tab = Arc::new(solve_lyapunov_matrix(&sys, &grid(8), &SolveOptions::default()).unwrap());
    assert_eq!(tab.max_abs(), 0.0);
    let res = property_residuals(&ExtendedEvaluator::new(tab)).unwrap();
    assert_eq!(res.pde, 0.0);
    assert_eq!(res.ode, 0.0);
}

#[test]
fn singular_systems_are_refused_with_diagnosis() {
    for name in ["s3", "s4"] {
        match solve_lyapunov_matrix(&system(name), &grid(32), &SolveOptions::default()) {
            Err(Error::NonUniqueLyapunovMatrix { rcond, report, .. }) => {
                assert!(rcond < 1e-10, "{name}: rcond {rcond}");
                assert!(!report.holds);
                assert!(report.closest.as_ref().unwrap().distance < 1e-3);
            }
            other => panic!("{name}: expected NonUniqueLyapunovMatrix, got {other:?}"),
        }
    }
}

#[test]
fn solution_is_linear_in_weight() {
    let sys = system("s2");
    let kt = Arc::new(fundamental_matrix(&sys, &grid(16)).unwrap());
    let solver = LyapunovSolver::new(kt, &SolveOptions::default()).unwrap();
    let w1 = sys.w.clone();
    let w2 = cosine_weight(1.0);
    let sum = PeriodicMatrixFunction::new_symmetric(
        1,
        1.0,
        vec![perlyap::system::Fourier { c0: 2.0, cos: vec![0.5], sin: vec![] }],
    )
    .unwrap();
    let (a, b, c) = (solver.solve(&w1).unwrap(), solver.solve(&w2).unwrap(), solver.solve(&sum).unwrap());
    for i in 0..=16 {
        for j in 0..=16 {
            assert!((c.get(i, j) - a.get(i, j) - b.get(i, j)).amax() < 1e-10);
        }
    }
}

#[test]
fn property_residuals_shrink_with_refinement() {
    let coarse = property_residuals(&ExtendedEvaluator::new(table("periodic", 16))).unwrap();
    let fine = property_residuals(&ExtendedEvaluator::new(table("periodic", 32))).unwrap();
    assert!(fine.pde < coarse.pde / 3.0);
    assert!(fine.ode < coarse.ode / 3.0);
    assert!(fine.symmetry < 1e-8);
    assert!(fine.periodicity < 1e-6);
}

#[test]
fn two_dimensional_system_with_long_period() {
    let tab = table("oscillator", 16);
    assert!(tab.info.symmetry_residual < 1e-8);
    let ev = ExtendedEvaluator::new(tab);
    let res = property_residuals(&ev).unwrap();
    assert!(res.periodicity < 1e-5, "{res:?}");
    assert!(res.pde < 1e-2, "{res:?}");
}
