//! Discretized monodromy operator, Floquet multipliers and the Lyapunov
//! condition.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::dense;
use crate::error::Result;
use crate::propagation::{Approach, FundamentalMatrixTable};
use crate::quadrature;
use crate::system::DelaySystem;

/// Default modulus below which multipliers are treated as discretization noise.
pub const DEFAULT_FLOOR: f64 = 1e-6;
/// Default tolerance for `|mu_i mu_j - 1|`.
pub const DEFAULT_CONDITION_TOL: f64 = 1e-4;
/// Default margin around the unit circle for stability decisions.
pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-3;

/// Matrix of the monodromy operator acting on `(phi0, Phi(theta_0..theta_m))`,
/// so of size `n (m + 2)`.
#[derive(Clone, Debug)]
pub struct MonodromyMatrix {
    pub matrix: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
}

/// Builds the matrix from the Cauchy formula: the state at `T` is
/// `x(T + theta) = K(T + theta, 0) phi0 + int K(T + theta, h + tau) A1(h + tau) Phi(tau) dtau`,
/// with `Phi` read from its nodal values by piecewise-cubic interpolation.
pub fn monodromy_matrix(table: &FundamentalMatrixTable) -> Result<MonodromyMatrix> {
    let sys = table.system();
    let grid = table.grid();
    let (n, m, h, tp) = (sys.n, grid.m, sys.h, sys.period);
    let d = grid.delta(h);
    let dim = n * (m + 2);
    let mut mat = DMatrix::zeros(dim, dim);
    let has_delay = !sys.a1.is_zero();
    for row in 0..=(m + 1) {
        let t = if row == 0 { tp } else { tp - h + (row - 1) as f64 * d };
        let k0 = table.k(t, 0.0)?;
        mat.view_mut((row * n, 0), (n, n)).copy_from(&k0);
        if !has_delay {
            continue;
        }
        let mut breaks = Vec::new();
        quadrature::shifted_breaks(t - h, h, -h, 0.0, &mut breaks);
        for q in quadrature::panel_rule(-h, 0.0, -h, d, &breaks, grid.quad_rule, false) {
            let src = h + q.x;
            let kk = table.k_lim(t, src, Approach::from_side(q.side, -1))?;
            if kk.iter().all(|&v| v == 0.0) {
                continue;
            }
            let blk = kk * sys.a1(src) * q.w;
            let st = quadrature::stencil(q.x, -h, d, m, &[]);
            for (k, w) in st.iter() {
                let mut dst = mat.view_mut((row * n, (k + 1) * n), (n, n));
                dst += &blk * w;
            }
        }
    }
    Ok(MonodromyMatrix { matrix: mat, n, m })
}

#[derive(Clone, Debug, Serialize)]
pub struct FloquetSpectrum {
    /// Multipliers with modulus at least `floor`, by decreasing modulus.
    pub multipliers: Vec<Complex64>,
    pub floor: f64,
    pub discarded: usize,
}

pub fn floquet_spectrum(mono: &MonodromyMatrix, floor: f64) -> Result<FloquetSpectrum> {
    let ev = dense::eigenvalues(&mono.matrix)?;
    let total = ev.len();
    let mut kept: Vec<Complex64> = ev.into_iter().filter(|z| z.norm() >= floor).collect();
    kept.sort_by(|a, b| {
        b.norm()
            .partial_cmp(&a.norm())
            .unwrap()
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    Ok(FloquetSpectrum { discarded: total - kept.len(), multipliers: kept, floor })
}

impl FloquetSpectrum {
    pub fn spectral_radius(&self) -> f64 {
        self.multipliers.first().map_or(0.0, |z| z.norm())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MultiplierPair {
    pub i: usize,
    pub j: usize,
    pub mu_i: Complex64,
    pub mu_j: Complex64,
    pub distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovConditionReport {
    pub holds: bool,
    pub tol: f64,
    /// Pair minimizing `|mu_i mu_j - 1|` (with `i <= j`).
    pub closest: Option<MultiplierPair>,
    pub violations: Vec<MultiplierPair>,
}

impl LyapunovConditionReport {
    pub fn summary(&self) -> String {
        match &self.closest {
            None => format!("Lyapunov condition holds (no multipliers above floor, tol {:e})", self.tol),
            Some(p) => format!(
                "Lyapunov condition {} (tol {:e}); closest pair mu_{} = {:.6}{:+.6}i, mu_{} = {:.6}{:+.6}i with |mu_i mu_j - 1| = {:e}",
                if self.holds { "holds" } else { "fails" },
                self.tol,
                p.i,
                p.mu_i.re,
                p.mu_i.im,
                p.j,
                p.mu_j.re,
                p.mu_j.im,
                p.distance
            ),
        }
    }
}

/// Checks that no two multipliers (a multiplier paired with itself included)
/// satisfy `mu_i mu_j = 1`.
pub fn lyapunov_condition(spec: &FloquetSpectrum, tol: f64) -> LyapunovConditionReport {
    let mu = &spec.multipliers;
    let mut closest: Option<MultiplierPair> = None;
    let mut violations = Vec::new();
    for i in 0..mu.len() {
        for j in i..mu.len() {
            let distance = (mu[i] * mu[j] - 1.0).norm();
            let pair = MultiplierPair { i, j, mu_i: mu[i], mu_j: mu[j], distance };
            if distance < tol {
                violations.push(pair.clone());
            }
            if closest.as_ref().is_none_or(|c| distance < c.distance) {
                closest = Some(pair);
            }
        }
    }
    LyapunovConditionReport { holds: violations.is_empty(), tol, closest, violations }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Stability {
    Stable,
    Unstable,
    Inconclusive,
}

pub fn classify_stability(spec: &FloquetSpectrum, margin: f64) -> Stability {
    let r = spec.spectral_radius();
    if r < 1.0 - margin {
        Stability::Stable
    } else if r > 1.0 + margin {
        Stability::Unstable
    } else {
        Stability::Inconclusive
    }
}

/// `z'(t) = A0^T(-t) z(t) + A1^T(-t + h) z(t - h)`.
pub fn dual_system(sys: &DelaySystem) -> Result<DelaySystem> {
    DelaySystem::new(
        sys.period,
        sys.h,
        sys.a0.transposed().reflected(0.0),
        sys.a1.transposed().reflected(sys.h),
        sys.w.reflected(0.0),
    )
}

/// Hausdorff distance between the parts of two spectra with modulus at
/// least `min_modulus`.
pub fn hausdorff_distance(a: &FloquetSpectrum, b: &FloquetSpectrum, min_modulus: f64) -> f64 {
    let pa: Vec<Complex64> = a.multipliers.iter().copied().filter(|z| z.norm() >= min_modulus).collect();
    let pb: Vec<Complex64> = b.multipliers.iter().copied().filter(|z| z.norm() >= min_modulus).collect();
    let directed = |x: &[Complex64], y: &[Complex64]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0f64, f64::max)
    };
    if pa.is_empty() && pb.is_empty() {
        return 0.0;
    }
    directed(&pa, &pb).max(directed(&pb, &pa))
}
