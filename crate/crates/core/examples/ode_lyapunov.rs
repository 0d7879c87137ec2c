//! Periodic Lyapunov matrix of a delay-free system `x' = A0(t) x`.
//!
//! `P(t)` is positive definite exactly when the multipliers are inside the
//! unit circle.

use perlyap::ode_lyapunov::{check_periodic_lyapunov, ode_fundamental, OdeLyapunov};
use perlyap::system::parse_config;

fn main() -> perlyap::Result<()> {
    let (sys, grid) = parse_config(include_str!("../configs/s5.json"))?;
    let fund = ode_fundamental(&sys.a0, &grid)?;
    println!("multipliers {:?}", fund.multipliers()?);

    let lyap = OdeLyapunov::new(fund.clone(), &sys.w)?;
    println!("Stein residual {:.2e}", lyap.stein_residual());
    for k in 0..5 {
        let t = k as f64 * sys.period / 4.0;
        println!("  P({t:.2}) = {:.10}", lyap.p(t)?[(0, 0)]);
    }

    let check = check_periodic_lyapunov(&fund, &sys.w, 40)?;
    println!("stable {}, min eig P {:.4}, consistent {}", check.stable, check.min_eig_p, check.consistent);
    Ok(())
}
