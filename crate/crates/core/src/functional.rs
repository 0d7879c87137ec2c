//! The quadratic functional `v0(t, phi) = <phi, P(t) phi>` built from the
//! delay Lyapunov matrix:
//!
//! ```text
//! v0(t, phi) = phi0^T U(t, t) phi0
//!   + 2 phi0^T int U(t, t + th + h) A1(t + th + h) Phi(th) dth
//!   + int int Phi^T(th) A1^T(t + th + h) U(t + th + h, t + s + h) A1(t + s + h) Phi(s) ds dth
//! ```
//!
//! with integrals over `[-h, 0]`. Along solutions
//! `d/dt v0(t, x_t) = -x^T(t) W(t) x(t)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::delay_lyapunov::{ExtendedEvaluator, LyapunovMatrixTable};
use crate::error::{Error, Result};
use crate::monodromy::{self, FloquetSpectrum, Stability};
use crate::propagation::{self, FundamentalMatrixTable, Trajectory};
use crate::quadrature::{self, QuadRule};
use crate::system::HilbertState;

/// Weights of the tail quadrature: `outer[k]` for single integrals and the
/// symmetric matrix `pair[k][l]` for the double integral. The double rule
/// restarts the inner integral at the diagonal and is averaged over both
/// orders of integration.
struct TailWeights {
    outer: Vec<f64>,
    pair: Vec<Vec<f64>>,
}

fn tail_weights(m: usize, kinks: &[usize], step: f64, rule: QuadRule) -> TailWeights {
    let collapse = |b: &[usize]| {
        let mut w = vec![0.0; m + 1];
        for nw in quadrature::nodal_rule(m, b, step, rule) {
            w[nw.k] += nw.w;
        }
        w
    };
    let outer = collapse(kinks);
    let inner: Vec<Vec<f64>> = (0..=m)
        .map(|k| {
            let mut b = kinks.to_vec();
            b.push(k);
            collapse(&b)
        })
        .collect();
    let pair = (0..=m)
        .map(|k| (0..=m).map(|l| 0.5 * (outer[k] * inner[k][l] + outer[l] * inner[l][k])).collect())
        .collect();
    TailWeights { outer, pair }
}

fn resampled(phi: &HilbertState, m: usize) -> HilbertState {
    if phi.m() == m {
        return phi.clone();
    }
    let mut out = HilbertState::from_fn(phi.head.clone(), m, phi.h, |th| phi.tail_at(th));
    out.kinks = phi.kinks.clone();
    out
}

/// Block form of `P(0)` on the mesh of the Lyapunov matrix table:
/// `U0(0, 0)`, the head-tail kernel `U0(0, h + th) A1(h + th)` and the
/// tail-tail kernel `A1^T(h + th) U0(h + th, h + s) A1(h + s)`.
#[derive(Clone, Debug)]
pub struct AssembledP0 {
    pub n: usize,
    pub m: usize,
    pub h: f64,
    pub rule: QuadRule,
    pub u00: DMatrix<f64>,
    pub head_tail: Vec<DMatrix<f64>>,
    tail_tail: Vec<DMatrix<f64>>,
}

impl AssembledP0 {
    pub fn new(table: &LyapunovMatrixTable) -> AssembledP0 {
        let sys = table.system();
        let (m, d) = (table.m, table.delta());
        let a1: Vec<DMatrix<f64>> = (0..=m).map(|k| sys.a1(k as f64 * d)).collect();
        let head_tail = (0..=m).map(|l| table.get(0, l) * &a1[l]).collect();
        let mut tail_tail = Vec::with_capacity((m + 1) * (m + 1));
        for k in 0..=m {
            for l in 0..=m {
                tail_tail.push(a1[k].transpose() * table.get(k, l) * &a1[l]);
            }
        }
        AssembledP0 {
            n: table.n,
            m,
            h: table.h,
            rule: table.kt.grid().quad_rule,
            u00: table.get(0, 0).clone(),
            head_tail,
            tail_tail,
        }
    }

    pub fn tail_tail(&self, k: usize, l: usize) -> &DMatrix<f64> {
        &self.tail_tail[k * (self.m + 1) + l]
    }
}

/// `P(0) phi`. States on another mesh are first resampled onto the mesh of
/// `p0`.
pub fn apply_p0(p0: &AssembledP0, phi: &HilbertState) -> HilbertState {
    let phi = resampled(phi, p0.m);
    let m = p0.m;
    let tw = tail_weights(m, &phi.kink_nodes(), phi.delta(), p0.rule);
    let mut head = &p0.u00 * &phi.head;
    for l in 0..=m {
        head += &p0.head_tail[l] * &phi.tail[l] * tw.outer[l];
    }
    let tail = (0..=m)
        .map(|k| {
            let mut v = p0.head_tail[k].transpose() * &phi.head;
            if tw.outer[k] > 0.0 {
                for l in 0..=m {
                    v += p0.tail_tail(k, l) * &phi.tail[l] * (tw.pair[k][l] / tw.outer[k]);
                }
            }
            v
        })
        .collect();
    HilbertState { head, tail, h: phi.h, kinks: phi.kinks.clone() }
}

/// `phi0^T psi0 + int Phi^T Psi`, with the tail rule restarted at the kinks
/// of both states.
pub fn inner(phi: &HilbertState, psi: &HilbertState) -> f64 {
    inner_with(phi, psi, QuadRule::Gauss2)
}

fn inner_with(phi: &HilbertState, psi: &HilbertState, rule: QuadRule) -> f64 {
    let psi = resampled(psi, phi.m());
    let mut b = phi.kink_nodes();
    b.extend(psi.kink_nodes());
    let rule = quadrature::nodal_rule(phi.m(), &b, phi.delta(), rule);
    phi.head.dot(&psi.head) + rule.iter().map(|nw| nw.w * phi.tail[nw.k].dot(&psi.tail[nw.k])).sum::<f64>()
}

/// `<phi, P(0) phi>`.
pub fn quadratic_form(p0: &AssembledP0, phi: &HilbertState) -> f64 {
    inner_with(phi, &apply_p0(p0, phi), p0.rule)
}

/// Evaluates `v0(t, phi)` for any `t >= 0` through the extended Lyapunov
/// matrix.
pub struct FunctionalEvaluator {
    ev: Arc<ExtendedEvaluator>,
}

impl FunctionalEvaluator {
    pub fn new(ev: Arc<ExtendedEvaluator>) -> FunctionalEvaluator {
        FunctionalEvaluator { ev }
    }

    pub fn from_table(table: Arc<LyapunovMatrixTable>) -> FunctionalEvaluator {
        Self::new(Arc::new(ExtendedEvaluator::new(table)))
    }

    pub fn evaluator(&self) -> &ExtendedEvaluator {
        &self.ev
    }

    pub fn table(&self) -> &LyapunovMatrixTable {
        self.ev.table()
    }

    fn kt(&self) -> &FundamentalMatrixTable {
        &self.ev.table().kt
    }

    /// `U(t + th_k + h, t + th_l + h)` on the tail mesh, `k, l = 0..=m`.
    fn kernel(&self, t: f64, m: usize) -> Result<Vec<DMatrix<f64>>> {
        let d = self.table().h / m as f64;
        let mut u = vec![DMatrix::zeros(0, 0); (m + 1) * (m + 1)];
        for k in 0..=m {
            for l in k..=m {
                let v = self.ev.eval(t + k as f64 * d, t + l as f64 * d)?;
                u[l * (m + 1) + k] = v.transpose();
                u[k * (m + 1) + l] = v;
            }
        }
        Ok(u)
    }

    pub fn v0(&self, t: f64, phi: &HilbertState) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::InvalidArgument(format!("v0 needs t >= 0, got {t}")));
        }
        let sys = self.table().system();
        if phi.dim() != sys.n {
            return Err(Error::InvalidArgument("state dimension does not match the system".into()));
        }
        let x0 = &phi.head;
        if sys.a1.is_zero() {
            return Ok(x0.dot(&(self.ev.eval(t, t)? * x0)));
        }
        let m = phi.m();
        let d = phi.delta();
        let rule = self.kt().grid().quad_rule;
        let tw = tail_weights(m, &phi.kink_nodes(), d, rule);
        let u = self.kernel(t, m)?;
        let g: Vec<DVector<f64>> = (0..=m).map(|k| sys.a1(t + k as f64 * d) * &phi.tail[k]).collect();
        let mut v = x0.dot(&(&u[0] * x0));
        for l in 0..=m {
            v += 2.0 * tw.outer[l] * x0.dot(&(&u[l] * &g[l]));
        }
        for k in 0..=m {
            for l in 0..=m {
                let w = tw.pair[k][l];
                if w != 0.0 {
                    v += w * g[k].dot(&(&u[k * (m + 1) + l] * &g[l]));
                }
            }
        }
        Ok(v)
    }

    fn trajectory(&self, phi: &HilbertState, t0: f64, t_end: f64) -> Result<Trajectory> {
        propagation::integrate_dde(self.table().system(), self.kt().grid(), t0, phi, t_end)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeSample {
    pub t: f64,
    pub fd_derivative: f64,
    pub prescribed: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeCheck {
    pub samples: Vec<DerivativeSample>,
    pub max_residual: f64,
    pub fd_step: f64,
}

/// Compares a five-point central difference of `t -> v0(t, x_t)` with
/// `-x^T(t) W(t) x(t)` along the solution from `(t0, phi)`. The difference
/// step is the mesh step and sample times lie on the mesh lattice in
/// `[t0 + h, t0 + horizon]`, where `x_t` is continuous. Times within four
/// steps (fewer on coarse meshes) of a breakpoint `t0 + q h` are skipped:
/// there the kink of `x_t` sits next to an end of `[-h, 0]` and the tail
/// quadrature loses order.
pub fn derivative_check(
    fe: &FunctionalEvaluator,
    phi: &HilbertState,
    t0: f64,
    horizon: f64,
    samples: usize,
) -> Result<DerivativeCheck> {
    if !(horizon > 0.0) || samples < 3 {
        return Err(Error::InvalidArgument("derivative check needs horizon > 0 and samples >= 3".into()));
    }
    let tab = fe.table();
    let sys = tab.system();
    let m = tab.m;
    let e = tab.delta();
    let traj = fe.trajectory(phi, t0, t0 + horizon)?;
    let j_max = (horizon / e).floor() as usize;
    let gap = (m / 4).clamp(2, 4);
    let valid: Vec<usize> = (m + gap..=j_max.saturating_sub(2)).filter(|j| j % m >= gap && j % m <= m - gap).collect();
    if valid.is_empty() {
        return Err(Error::InvalidArgument("horizon too short for the difference stencil".into()));
    }
    let mut picks: Vec<usize> = (0..samples)
        .map(|i| valid[(i * (valid.len() - 1)) / (samples - 1).max(1)])
        .collect();
    picks.dedup();
    let v_at = |j: usize| -> Result<f64> {
        let t = t0 + j as f64 * e;
        fe.v0(t, &traj.state_at(t, m)?)
    };
    let mut out = Vec::with_capacity(picks.len());
    let mut worst = 0.0f64;
    for j in picks {
        let t = t0 + j as f64 * e;
        let fd = (v_at(j - 2)? - 8.0 * v_at(j - 1)? + 8.0 * v_at(j + 1)? - v_at(j + 2)?) / (12.0 * e);
        let x = traj.x(t);
        let prescribed = -x.dot(&(sys.w(t) * &x));
        let abs_error = (fd - prescribed).abs();
        worst = worst.max(abs_error);
        out.push(DerivativeSample { t, fd_derivative: fd, prescribed, abs_error });
    }
    Ok(DerivativeCheck { samples: out, max_residual: worst, fd_step: e })
}

/// `|v0(b, x_b) - v0(a, x_a) + int_a^b x^T W x|` for each window, along the
/// solution from `(t0, phi)`. Window ends are rounded to the mesh lattice
/// from `t0`. A head that differs from `Phi(0)` makes `x_t` jump while
/// `t < t0 + h`, which the sampled states resolve only to first order, so
/// windows should start at `t0 + h` or later.
pub fn integrated_residuals(fe: &FunctionalEvaluator, phi: &HilbertState, t0: f64, windows: &[(f64, f64)]) -> Result<Vec<f64>> {
    let tab = fe.table();
    let (m, e) = (tab.m, tab.delta());
    let snap = |t: f64| t0 + ((t - t0) / e).round().max(0.0) * e;
    let t_end = windows.iter().map(|w| snap(w.1)).fold(t0, f64::max);
    let traj = fe.trajectory(phi, t0, t_end.max(t0 + e))?;
    windows
        .iter()
        .map(|&(a, b)| {
            let (a, b) = (snap(a), snap(b));
            if b < a {
                return Err(Error::InvalidArgument("window end precedes its start".into()));
            }
            let va = fe.v0(a, &traj.state_at(a, m)?)?;
            let vb = fe.v0(b, &traj.state_at(b, m)?)?;
            Ok((vb - va + traj.weighted_energy(a, b)).abs())
        })
        .collect()
}

/// `count` windows with ends on the lattice `start + j step` inside
/// `[start, stop]`.
pub fn random_windows<R: Rng>(start: f64, stop: f64, step: f64, count: usize, rng: &mut R) -> Vec<(f64, f64)> {
    let j_max = ((stop - start) / step + 1e-9).floor().max(1.0) as usize;
    let t0 = start;
    (0..count)
        .map(|_| {
            let a = rng.random_range(0..j_max);
            let b = rng.random_range(a + 1..=j_max);
            (t0 + a as f64 * step, t0 + b as f64 * step)
        })
        .collect()
}

/// State `x_T` of the solution from `(0, phi)`, from the Cauchy formula.
pub fn period_map(kt: &FundamentalMatrixTable, phi: &HilbertState) -> Result<HilbertState> {
    let sys = kt.system();
    let (h, tp) = (sys.h, sys.period);
    let m = phi.m();
    let head = propagation::cauchy_solution(kt, 0.0, phi, tp)?;
    let d = phi.delta();
    let mut tail = Vec::with_capacity(m + 1);
    for k in 0..=m {
        tail.push(propagation::cauchy_solution(kt, 0.0, phi, tp - h + k as f64 * d)?);
    }
    let mut out = HilbertState::new(head, tail, h)?;
    let tol = 1e-12 * (1.0 + tp);
    let mut q = 0.0;
    while q * h < tp {
        let th = q * h - tp;
        if th > -h + tol && th < -tol {
            out.kinks.push(th);
        }
        q += 1.0;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct SteinTrial {
    pub lhs: f64,
    pub rhs: f64,
    pub relative: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorSteinReport {
    pub trials: Vec<SteinTrial>,
    pub max_relative: f64,
}

/// Checks `<phi, P0 phi> - <U phi, P0 U phi> = int_0^T x^T W x` on the given
/// states, where `U` is the period map. Returns the largest
/// `|lhs - rhs| / (1 + |rhs|)`.
pub fn operator_stein_residual(p0: &AssembledP0, kt: &FundamentalMatrixTable, states: &[HilbertState]) -> Result<OperatorSteinReport> {
    let sys = kt.system();
    let mut trials = Vec::with_capacity(states.len());
    let mut worst = 0.0f64;
    for phi in states {
        let phi = resampled(phi, p0.m);
        let next = period_map(kt, &phi)?;
        let lhs = quadratic_form(p0, &phi) - quadratic_form(p0, &next);
        let traj = propagation::integrate_dde(sys, kt.grid(), 0.0, &phi, sys.period)?;
        let rhs = traj.weighted_energy(0.0, sys.period);
        let relative = (lhs - rhs).abs() / (1.0 + rhs.abs());
        worst = worst.max(relative);
        trials.push(SteinTrial { lhs, rhs, relative });
    }
    Ok(OperatorSteinReport { trials, max_relative: worst })
}

/// Random states with head uniform in `(-1, 1)` and cubic tails.
pub fn random_states(n: usize, m: usize, h: f64, count: usize, seed: u64) -> Vec<HilbertState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| HilbertState::random(n, m, h, &mut rng)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct NonnegativityReport {
    pub stability: Stability,
    /// `min <phi, P0 phi> / |phi|^2` over the probes.
    pub min_quotient: f64,
    /// Set when a stable system shows a quotient below `-1e-6`.
    pub flagged: bool,
}

pub const NONNEGATIVITY_FLAG: f64 = -1e-6;

pub fn nonnegativity_probe(p0: &AssembledP0, spec: &FloquetSpectrum, states: &[HilbertState]) -> NonnegativityReport {
    let stability = monodromy::classify_stability(spec, monodromy::DEFAULT_STABILITY_MARGIN);
    let min_quotient = states
        .iter()
        .map(|phi| quadratic_form(p0, phi) / phi.norm_sq().max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    NonnegativityReport {
        stability,
        min_quotient,
        flagged: stability == Stability::Stable && min_quotient < NONNEGATIVITY_FLAG,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delay_lyapunov::{solve_lyapunov_matrix, SolveOptions};
    use crate::system::{DelaySystem, GridSpec};

    fn scalar(a0: f64, a1: f64, w: f64) -> DelaySystem {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        DelaySystem::constant(1.0, 1.0, &m(a0), &m(a1), &m(w)).unwrap()
    }

    fn setup(sys: &DelaySystem, m: usize) -> (Arc<LyapunovMatrixTable>, FunctionalEvaluator) {
        let grid = GridSpec::default().with_m(m);
        let tab = Arc::new(solve_lyapunov_matrix(sys, &grid, &SolveOptions::default()).unwrap());
        (tab.clone(), FunctionalEvaluator::from_table(tab))
    }

    fn unit_state(m: usize) -> HilbertState {
        HilbertState::from_fn(DVector::from_element(1, 1.0), m, 1.0, |_| DVector::from_element(1, 1.0))
    }

    #[test]
    fn ode_case_functional_is_constant() {
        let (_, fe) = setup(&scalar(-1.0, 0.0, 2.0), 8);
        for t in [0.0, 0.37, 1.6] {
            assert!((fe.v0(t, &unit_state(8)).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn two_evaluation_paths_agree() {
        let (tab, fe) = setup(&scalar(0.0, -1.0, 1.0), 16);
        let p0 = AssembledP0::new(&tab);
        for phi in random_states(1, 16, 1.0, 5, 3).iter().chain([unit_state(16)].iter()) {
            let a = quadratic_form(&p0, phi);
            let b = fe.v0(0.0, phi).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} {b}");
        }
    }

    #[test]
    fn p0_is_self_adjoint() {
        let (tab, _) = setup(&scalar(-0.5, -1.0, 1.0), 16);
        let p0 = AssembledP0::new(&tab);
        let s = random_states(1, 16, 1.0, 2, 9);
        let a = inner(&s[0], &apply_p0(&p0, &s[1]));
        let b = inner(&s[1], &apply_p0(&p0, &s[0]));
        assert!((a - b).abs() < 1e-12, "{a} {b}");
    }

    #[test]
    fn stein_residual_on_pure_delay() {
        let (tab, _) = setup(&scalar(0.0, -1.0, 1.0), 16);
        let p0 = AssembledP0::new(&tab);
        let rep = operator_stein_residual(&p0, &tab.kt, &random_states(1, 16, 1.0, 3, 1)).unwrap();
        assert!(rep.max_relative < 1e-3, "{}", rep.max_relative);
    }
}
