//! Quadratic functional `v0(t, phi)` and its prescribed derivative
//! `-x^T(t) W(t) x(t)` along solutions.

use std::sync::Arc;

use perlyap::delay_lyapunov::{solve_lyapunov_matrix, SolveOptions};
use perlyap::functional::{
    derivative_check, integrated_residuals, operator_stein_residual, quadratic_form, random_states, AssembledP0,
    FunctionalEvaluator,
};
use perlyap::system::parse_config;

fn main() -> perlyap::Result<()> {
    let (sys, grid) = parse_config(include_str!("../configs/periodic.json"))?;
    let tab = Arc::new(solve_lyapunov_matrix(&sys, &grid, &SolveOptions::default())?);
    let fe = FunctionalEvaluator::from_table(tab.clone());
    let p0 = AssembledP0::new(&tab);

    let states = random_states(sys.n, grid.m, sys.h, 5, 7);
    for (i, phi) in states.iter().enumerate() {
        println!("state {i}: v0 = {:+.6}, <phi, P0 phi> = {:+.6}", fe.v0(0.0, phi)?, quadratic_form(&p0, phi));
    }

    let phi = &states[0];
    let windows = [(1.0, 1.5), (1.2, 2.9), (2.0, 3.0)];
    let res = integrated_residuals(&fe, phi, 0.0, &windows)?;
    for ((a, b), r) in windows.iter().zip(&res) {
        println!("  window [{a}, {b}]: residual {r:.2e}");
    }
    let fd = derivative_check(&fe, phi, 0.0, 3.0, 12)?;
    println!("pointwise derivative: max residual {:.2e} with step {:.4}", fd.max_residual, fd.fd_step);

    let stein = operator_stein_residual(&p0, &tab.kt, &states)?;
    println!("operator Stein identity: max relative residual {:.2e}", stein.max_relative);
    Ok(())
}
