//! Floquet multipliers of a delay system with a periodic coefficient.
//!
//! Run with `cargo run --example floquet_spectrum`.

use perlyap::monodromy::{classify_stability, floquet_spectrum, monodromy_matrix, DEFAULT_FLOOR, DEFAULT_STABILITY_MARGIN};
use perlyap::propagation::fundamental_matrix;
use perlyap::system::parse_config;

fn main() -> perlyap::Result<()> {
    let (sys, grid) = parse_config(include_str!("../configs/periodic.json"))?;
    let kt = fundamental_matrix(&sys, &grid)?;
    let mono = monodromy_matrix(&kt)?;
    let spec = floquet_spectrum(&mono, DEFAULT_FLOOR)?;

    println!("{} multipliers above {:e} ({} discarded)", spec.multipliers.len(), spec.floor, spec.discarded);
    for (i, z) in spec.multipliers.iter().take(8).enumerate() {
        println!("  mu_{i} = {:+.8} {:+.8}i   |mu| = {:.8}", z.re, z.im, z.norm());
    }
    println!("spectral radius {:.6}", spec.spectral_radius());
    println!("{:?}", classify_stability(&spec, DEFAULT_STABILITY_MARGIN));
    Ok(())
}
