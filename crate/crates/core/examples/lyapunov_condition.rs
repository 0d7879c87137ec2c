//! Tests the multiplier condition `mu_i mu_j != 1` on a few systems.
//!
//! The pure-delay system with `A1 = -pi/2` has multipliers on the unit
//! circle and fails; so does `x' = 0`.

use perlyap::monodromy::{floquet_spectrum, lyapunov_condition, monodromy_matrix, DEFAULT_CONDITION_TOL, DEFAULT_FLOOR};
use perlyap::propagation::fundamental_matrix;
use perlyap::system::parse_config;

fn main() -> perlyap::Result<()> {
    let systems = [
        ("x' = -x", include_str!("../configs/s1.json")),
        ("x' = -x(t-1)", include_str!("../configs/s2.json")),
        ("x' = 0", include_str!("../configs/s3.json")),
        ("x' = -pi/2 x(t-1)", include_str!("../configs/s4.json")),
    ];
    for (label, text) in systems {
        let (sys, grid) = parse_config(text)?;
        let kt = fundamental_matrix(&sys, &grid)?;
        let spec = floquet_spectrum(&monodromy_matrix(&kt)?, DEFAULT_FLOOR)?;
        let rep = lyapunov_condition(&spec, DEFAULT_CONDITION_TOL);
        println!("{label:<20} {}", rep.summary());
    }
    Ok(())
}
