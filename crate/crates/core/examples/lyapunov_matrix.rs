//! Solves for the delay Lyapunov matrix of `x'(t) = -x(t - 1)` and compares
//! it with the closed form `u(tau) = c cos(tau) - sin(tau) / 2`.

use std::sync::Arc;

use perlyap::delay_lyapunov::{property_residuals, solve_lyapunov_matrix, ExtendedEvaluator, SolveOptions};
use perlyap::system::parse_config;

fn exact(tau: f64) -> f64 {
    let c = 1f64.cos() / (2.0 * (1.0 - 1f64.sin()));
    c * tau.abs().cos() - 0.5 * tau.abs().sin()
}

fn main() -> perlyap::Result<()> {
    let (sys, grid) = parse_config(include_str!("../configs/s2.json"))?;
    for m in [8, 16, 32] {
        let tab = solve_lyapunov_matrix(&sys, &grid.with_m(m), &SolveOptions::default())?;
        let ev = ExtendedEvaluator::new(Arc::new(tab));
        let mut err = 0.0f64;
        for (th, s) in [(0.1, 0.7), (0.55, 0.2), (0.93, 0.93), (0.31, 0.0)] {
            err = err.max((ev.eval(th, s)?[(0, 0)] - exact(th - s)).abs());
        }
        let res = property_residuals(&ev)?;
        println!(
            "m = {m:>2}: max error {err:.2e}, rcond {:.2e}, pde {:.2e}, ode {:.2e}, periodicity {:.2e}",
            ev.table().info.rcond,
            res.pde,
            res.ode,
            res.periodicity
        );
    }

    // Beyond the square [0, h]^2 the extension formula takes over.
    let tab = solve_lyapunov_matrix(&sys, &grid, &SolveOptions::default())?;
    let ev = ExtendedEvaluator::new(Arc::new(tab));
    println!("U(2.4, 2.1) = {:.8}, exact {:.8}", ev.eval(2.4, 2.1)?[(0, 0)], exact(0.3));
    Ok(())
}
