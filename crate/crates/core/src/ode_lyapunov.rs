//! Periodic Lyapunov matrices for the delay-free system `x' = A0(t) x`.
//!
//! `P(t) = Phi^T(T, t) P0 Phi(T, t) + int_t^T Phi^T(xi, t) W(xi) Phi(xi, t) dxi`,
//! where `P0` solves the Stein equation `P0 - M^T P0 M = W_T`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::dense;
use crate::error::{Error, Result};
use crate::quadrature::{self, QuadRule};
use crate::system::{GridSpec, PeriodicMatrixFunction};

pub const STEIN_RCOND_TOL: f64 = 1e-12;

/// `Phi(t, 0)` on `[0, T]` with cubic Hermite dense output.
#[derive(Clone, Debug)]
pub struct OdeFundamental {
    a0: PeriodicMatrixFunction,
    dt: f64,
    phi: Vec<DMatrix<f64>>,
    dphi: Vec<DMatrix<f64>>,
}

pub fn ode_fundamental(a0: &PeriodicMatrixFunction, grid: &GridSpec) -> Result<OdeFundamental> {
    grid.validate()?;
    let n = a0.dim();
    let steps = 4 * grid.m * grid.substeps;
    let dt = a0.period() / steps as f64;
    let mut phi = Vec::with_capacity(steps + 1);
    let mut dphi = Vec::with_capacity(steps + 1);
    let mut x = DMatrix::identity(n, n);
    for j in 0..steps {
        let t = j as f64 * dt;
        let k1 = a0.eval(t) * &x;
        let amid = a0.eval(t + 0.5 * dt);
        let k2 = &amid * (&x + &k1 * (0.5 * dt));
        let k3 = &amid * (&x + &k2 * (0.5 * dt));
        let k4 = a0.eval(t + dt) * (&x + &k3 * dt);
        let xn = &x + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (dt / 6.0);
        if !xn.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { t: t + dt });
        }
        phi.push(x);
        dphi.push(k1);
        x = xn;
    }
    dphi.push(a0.eval(a0.period()) * &x);
    phi.push(x);
    Ok(OdeFundamental { a0: a0.clone(), dt, phi, dphi })
}

impl OdeFundamental {
    pub fn period(&self) -> f64 {
        self.a0.period()
    }

    pub fn dim(&self) -> usize {
        self.a0.dim()
    }

    /// `Phi(t, 0)` for `t in [0, T]`.
    pub fn phi(&self, t: f64) -> DMatrix<f64> {
        let last = self.phi.len() - 2;
        let r = (t / self.dt).clamp(0.0, (last + 1) as f64);
        let j = (r.floor() as usize).min(last);
        let u = r - j as f64;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = (u3 - 2.0 * u2 + u) * self.dt;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = (u3 - u2) * self.dt;
        &self.phi[j] * h00 + &self.dphi[j] * h10 + &self.phi[j + 1] * h01 + &self.dphi[j + 1] * h11
    }

    /// `Phi(t, s) = Phi(t, 0) Phi(s, 0)^{-1}` for `s, t in [0, T]`.
    pub fn phi_ts(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        let inv = self
            .phi(s)
            .try_inverse()
            .ok_or_else(|| Error::InvalidSystem("fundamental matrix is singular".into()))?;
        Ok(self.phi(t) * inv)
    }

    /// Monodromy matrix `M = Phi(T, 0)`.
    pub fn monodromy(&self) -> DMatrix<f64> {
        self.phi.last().unwrap().clone()
    }

    pub fn multipliers(&self) -> Result<Vec<Complex64>> {
        dense::eigenvalues(&self.monodromy())
    }
}

/// Solves `P - M^T P M = Q` through its Kronecker form.
pub fn stein_solve(m: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mt = m.transpose();
    let a = DMatrix::identity(n * n, n * n) - mt.kronecker(&mt);
    let norm1 = |x: &DMatrix<f64>| {
        x.column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let lu = a.clone().lu();
    let rcond = match lu.try_inverse() {
        Some(inv) => 1.0 / (norm1(&a) * norm1(&inv)),
        None => 0.0,
    };
    if !(rcond >= STEIN_RCOND_TOL) {
        return Err(Error::SingularStein { rcond });
    }
    let rhs = nalgebra::DVector::from_column_slice(q.as_slice());
    let x = lu.solve(&rhs).ok_or(Error::SingularStein { rcond })?;
    let p = DMatrix::from_column_slice(n, n, x.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

fn gram(fund: &OdeFundamental, w: &PeriodicMatrixFunction, t: f64) -> Result<DMatrix<f64>> {
    let tp = fund.period();
    let n = fund.dim();
    let mut out = DMatrix::zeros(n, n);
    if t >= tp {
        return Ok(out);
    }
    let inv = fund
        .phi(t)
        .try_inverse()
        .ok_or_else(|| Error::InvalidSystem("fundamental matrix is singular".into()))?;
    for q in quadrature::panel_rule(t, tp, 0.0, tp / 64.0, &[], QuadRule::Gauss2, true) {
        let f = fund.phi(q.x) * &inv;
        out += f.transpose() * w.eval(q.x) * f * q.w;
    }
    Ok(out)
}

/// `W_T = int_0^T Phi^T(xi, 0) W(xi) Phi(xi, 0) dxi`.
pub fn weighted_gramian(fund: &OdeFundamental, w: &PeriodicMatrixFunction) -> Result<DMatrix<f64>> {
    gram(fund, w, 0.0)
}

#[derive(Clone, Debug)]
pub struct OdeLyapunov {
    pub fund: OdeFundamental,
    pub w: PeriodicMatrixFunction,
    pub p0: DMatrix<f64>,
    pub w_t: DMatrix<f64>,
}

impl OdeLyapunov {
    pub fn new(fund: OdeFundamental, w: &PeriodicMatrixFunction) -> Result<OdeLyapunov> {
        let w_t = weighted_gramian(&fund, w)?;
        let p0 = stein_solve(&fund.monodromy(), &w_t)?;
        Ok(OdeLyapunov { fund, w: w.clone(), p0, w_t })
    }

    /// `P(t)` for `t in [0, T]`.
    pub fn p(&self, t: f64) -> Result<DMatrix<f64>> {
        periodic_p(&self.fund, &self.w, &self.p0, t)
    }

    /// `|P0 - M^T P0 M - W_T|`.
    pub fn stein_residual(&self) -> f64 {
        let m = self.fund.monodromy();
        (&self.p0 - m.transpose() * &self.p0 * &m - &self.w_t).norm()
    }
}

pub fn periodic_p(fund: &OdeFundamental, w: &PeriodicMatrixFunction, p0: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let tp = fund.period();
    let f = fund.phi_ts(tp, t)?;
    let p = f.transpose() * p0 * f + gram(fund, w, t)?;
    Ok((&p + p.transpose()) * 0.5)
}

#[derive(Clone, Debug, Serialize)]
pub struct PeriodicLyapunovCheck {
    pub multipliers: Vec<Complex64>,
    pub stable: bool,
    /// Smallest eigenvalue of `P(t)` over the sample times.
    pub min_eig_p: f64,
    pub p_positive: bool,
    pub consistent: bool,
    pub stein_residual: f64,
}

/// Checks that `P(t)` is positive definite exactly when all multipliers lie
/// inside the unit circle, sampling `P` at `samples` uniform times.
pub fn check_periodic_lyapunov(fund: &OdeFundamental, w: &PeriodicMatrixFunction, samples: usize) -> Result<PeriodicLyapunovCheck> {
    let multipliers = fund.multipliers()?;
    let stable = multipliers.iter().all(|z| z.norm() < 1.0);
    let lyap = OdeLyapunov::new(fund.clone(), w)?;
    let tp = fund.period();
    let mut min_eig = f64::INFINITY;
    for i in 0..samples.max(1) {
        let p = lyap.p(i as f64 * tp / samples.max(1) as f64)?;
        let e = p.symmetric_eigen().eigenvalues.min();
        min_eig = min_eig.min(e);
    }
    let p_positive = min_eig > 0.0;
    Ok(PeriodicLyapunovCheck {
        multipliers,
        stable,
        min_eig_p: min_eig,
        p_positive,
        consistent: stable == p_positive,
        stein_residual: lyap.stein_residual(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::Fourier;

    #[test]
    fn scalar_constant_system() {
        // x' = -x, W = 2: P(t) = 1 for every t.
        let a0 = PeriodicMatrixFunction::constant(&DMatrix::from_element(1, 1, -1.0), 1.0);
        let w = PeriodicMatrixFunction::constant_symmetric(&DMatrix::from_element(1, 1, 2.0), 1.0).unwrap();
        let lyap = OdeLyapunov::new(ode_fundamental(&a0, &GridSpec::default()).unwrap(), &w).unwrap();
        assert!((lyap.p0[(0, 0)] - 1.0).abs() < 1e-12);
        for t in [0.0, 0.3, 0.9] {
            assert!((lyap.p(t).unwrap()[(0, 0)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_periodic_system_has_closed_form() {
        // x' = (-1 + 0.3 cos 2 pi t) x with W = 1.
        let a0 = PeriodicMatrixFunction::new(1, 1.0, vec![Fourier { c0: -1.0, cos: vec![0.3], sin: vec![] }]).unwrap();
        let w = PeriodicMatrixFunction::constant_symmetric(&DMatrix::from_element(1, 1, 1.0), 1.0).unwrap();
        let lyap = OdeLyapunov::new(ode_fundamental(&a0, &GridSpec::default()).unwrap(), &w).unwrap();
        let g = |t: f64| -t + 0.3 * (2.0 * std::f64::consts::PI * t).sin() / (2.0 * std::f64::consts::PI);
        let m = g(1.0).exp();
        assert!((lyap.fund.monodromy()[(0, 0)] - m).abs() < 1e-12);
        assert!(lyap.stein_residual() < 1e-12);
        // P(t) = int_t^inf exp(2 (g(xi) - g(t))) dxi solves P' = -2 a0 P - 1.
        let t = 0.4;
        let h = 1e-4;
        let dp = (lyap.p(t + h).unwrap()[(0, 0)] - lyap.p(t - h).unwrap()[(0, 0)]) / (2.0 * h);
        let a = -1.0 + 0.3 * (2.0 * std::f64::consts::PI * t).cos();
        assert!((dp + 2.0 * a * lyap.p(t).unwrap()[(0, 0)] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn unit_multiplier_makes_stein_singular() {
        let m = DMatrix::identity(2, 2);
        assert!(matches!(stein_solve(&m, &m), Err(Error::SingularStein { .. })));
    }

    #[test]
    fn stein_matches_series_for_contraction() {
        let m = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let p = stein_solve(&m, &q).unwrap();
        let mut s = DMatrix::zeros(2, 2);
        let mut mk = DMatrix::identity(2, 2);
        for _ in 0..200 {
            s += mk.transpose() * &q * &mk;
            mk = &mk * &m;
        }
        assert!((p - s).norm() < 1e-12);
    }
}
