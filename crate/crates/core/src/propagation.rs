//! Method-of-steps integration and the fundamental matrix `K(t, s)`.
//!
//! Solutions are advanced by RK4 with a fixed step `h / (m * substeps)` so
//! that the points `t0 + q h` are mesh points. Each step keeps both end
//! values and both one-sided derivatives, which gives a cubic Hermite
//! interpolant on every step. A stage on segment `[t0 + q h, t0 + (q+1) h]`
//! reads its delayed value from segment `q - 1` only, so the jump of the
//! initial data at `t0` never leaks into the wrong piece.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quadrature::{self, Side};
use crate::system::{DelaySystem, GridSpec, HilbertState};

/// Initial data on `[t0 - h, t0)`.
#[derive(Clone, Debug)]
pub enum History {
    Zero,
    State(HilbertState),
}

/// Piecewise-cubic solution `X(t)` (an `n x p` matrix) on `[t0, t0 + span]`.
#[derive(Clone, Debug)]
pub struct DenseSolution {
    n: usize,
    p: usize,
    t0: f64,
    h: f64,
    dt: f64,
    steps_per_segment: usize,
    x: Vec<DMatrix<f64>>,
    fp: Vec<DMatrix<f64>>,
    fm: Vec<DMatrix<f64>>,
    history: History,
}

fn hermite(x0: &DMatrix<f64>, f0: &DMatrix<f64>, x1: &DMatrix<f64>, f1: &DMatrix<f64>, dt: f64, u: f64) -> DMatrix<f64> {
    let u2 = u * u;
    let u3 = u2 * u;
    let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
    let h10 = u3 - 2.0 * u2 + u;
    let h01 = -2.0 * u3 + 3.0 * u2;
    let h11 = u3 - u2;
    let mut out = x0 * h00;
    out.zip_zip_apply(f0, x1, |o, a, b| *o += h10 * dt * a + h01 * b);
    out.zip_apply(f1, |o, b| *o += h11 * dt * b);
    out
}

fn hermite_deriv(x0: &DMatrix<f64>, f0: &DMatrix<f64>, x1: &DMatrix<f64>, f1: &DMatrix<f64>, dt: f64, u: f64) -> DMatrix<f64> {
    let u2 = u * u;
    let d00 = (6.0 * u2 - 6.0 * u) / dt;
    let d10 = 3.0 * u2 - 4.0 * u + 1.0;
    let d01 = (-6.0 * u2 + 6.0 * u) / dt;
    let d11 = 3.0 * u2 - 2.0 * u;
    let mut out = x0 * d00;
    out.zip_zip_apply(f0, x1, |o, a, b| *o += d10 * a + d01 * b);
    out.zip_apply(f1, |o, b| *o += d11 * b);
    out
}

impl DenseSolution {
    /// Integrates `segments` delay intervals starting from `head` at `t0`.
    pub fn integrate(
        sys: &DelaySystem,
        grid: &GridSpec,
        t0: f64,
        head: DMatrix<f64>,
        history: History,
        segments: usize,
    ) -> Result<DenseSolution> {
        let n = sys.n;
        let p = head.ncols();
        if head.nrows() != n {
            return Err(Error::InvalidArgument("initial value has wrong dimension".into()));
        }
        if let History::State(st) = &history {
            if p != 1 || st.dim() != n {
                return Err(Error::InvalidArgument("history does not match the initial value".into()));
            }
        }
        let h = sys.h;
        let s_per = grid.m * grid.substeps;
        let dt = h / s_per as f64;
        let nsteps = s_per * segments.max(1);
        let has_delay = !sys.a1.is_zero();
        let mut sol = DenseSolution {
            n,
            p,
            t0,
            h,
            dt,
            steps_per_segment: s_per,
            x: Vec::with_capacity(nsteps + 1),
            fp: Vec::with_capacity(nsteps),
            fm: Vec::with_capacity(nsteps),
            history,
        };
        sol.x.push(head);
        let zero = DMatrix::zeros(n, p);
        for j in 0..nsteps {
            let tj = t0 + j as f64 * dt;
            let delayed = |c: f64, sol: &DenseSolution| -> DMatrix<f64> {
                if !has_delay {
                    zero.clone()
                } else if j < s_per {
                    sol.history_at((j as f64 + c) * dt - h)
                } else {
                    let k = j - s_per;
                    hermite(&sol.x[k], &sol.fp[k], &sol.x[k + 1], &sol.fm[k], dt, c)
                }
            };
            let rhs = |t: f64, x: &DMatrix<f64>, xd: &DMatrix<f64>| -> DMatrix<f64> {
                let mut out = sys.a0(t) * x;
                if has_delay {
                    out += sys.a1(t) * xd;
                }
                out
            };
            let xj = sol.x[j].clone();
            let d0 = delayed(0.0, &sol);
            let dh = delayed(0.5, &sol);
            let d1 = delayed(1.0, &sol);
            let k1 = rhs(tj, &xj, &d0);
            let k2 = rhs(tj + 0.5 * dt, &(&xj + &k1 * (0.5 * dt)), &dh);
            let k3 = rhs(tj + 0.5 * dt, &(&xj + &k2 * (0.5 * dt)), &dh);
            let k4 = rhs(tj + dt, &(&xj + &k3 * dt), &d1);
            let xn = &xj + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (dt / 6.0);
            let t1 = t0 + (j + 1) as f64 * dt;
            if !xn.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteState { t: t1 });
            }
            let f1 = rhs(t1, &xn, &d1);
            sol.fp.push(k1);
            sol.fm.push(f1);
            sol.x.push(xn);
        }
        Ok(sol)
    }

    fn history_at(&self, theta: f64) -> DMatrix<f64> {
        match &self.history {
            History::Zero => DMatrix::zeros(self.n, self.p),
            History::State(st) => {
                let v = st.tail_at(theta.clamp(-self.h, 0.0));
                DMatrix::from_column_slice(self.n, 1, v.as_slice())
            }
        }
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Length of the integrated interval.
    pub fn span(&self) -> f64 {
        self.fp.len() as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_per_segment(&self) -> usize {
        self.steps_per_segment
    }

    fn locate(&self, d: f64) -> (usize, f64) {
        let r = d / self.dt;
        let j = (r.floor().max(0.0) as usize).min(self.fp.len() - 1);
        (j, r - j as f64)
    }

    /// Value at `t0 + d`; the initial history for `d < 0`.
    pub fn value_at_offset(&self, d: f64) -> DMatrix<f64> {
        if d < 0.0 {
            return self.history_at(d);
        }
        let (j, u) = self.locate(d);
        hermite(&self.x[j], &self.fp[j], &self.x[j + 1], &self.fm[j], self.dt, u)
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        self.value_at_offset(t - self.t0)
    }

    /// Derivative of the dense interpolant at `t > t0`.
    pub fn deriv(&self, t: f64) -> DMatrix<f64> {
        let (j, u) = self.locate(t - self.t0);
        hermite_deriv(&self.x[j], &self.fp[j], &self.x[j + 1], &self.fm[j], self.dt, u)
    }
}

/// How a quadrature node approaches the jump of `K(t, s)` at `t = s`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Approach {
    /// `t - s -> 0+`, giving the identity.
    FromAbove,
    /// `t - s -> 0-`, giving zero.
    FromBelow,
    /// Evaluate at the point itself; the identity when `t = s`.
    Exact,
}

impl Approach {
    /// Maps a quadrature side to an approach, given whether `t - s`
    /// increases (`+1`) or decreases (`-1`) with the integration variable.
    pub fn from_side(side: Side, direction: i8) -> Approach {
        match (side, direction > 0) {
            (Side::Interior, _) => Approach::Exact,
            (Side::Start, true) | (Side::End, false) => Approach::FromAbove,
            (Side::Start, false) | (Side::End, true) => Approach::FromBelow,
        }
    }
}

const COLUMN_CACHE_LIMIT: usize = 2048;

/// Fundamental matrix `K(t, s)` of the delay system.
///
/// Columns `K(., s)` are integrated on demand and cached; sources are first
/// reduced into `[0, T)` using `K(t + T, s + T) = K(t, s)`. Sources on the
/// mesh `j h / m` are tabulated at construction.
pub struct FundamentalMatrixTable {
    sys: DelaySystem,
    grid: GridSpec,
    segments: usize,
    cache: Mutex<HashMap<i64, Arc<DenseSolution>>>,
}

impl std::fmt::Debug for FundamentalMatrixTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FundamentalMatrixTable")
            .field("grid", &self.grid)
            .field("span", &self.span())
            .finish()
    }
}

fn source_key(s: f64) -> i64 {
    (s * (1u64 << 40) as f64).round() as i64
}

pub fn fundamental_matrix(sys: &DelaySystem, grid: &GridSpec) -> Result<FundamentalMatrixTable> {
    FundamentalMatrixTable::new(sys, grid)
}

impl FundamentalMatrixTable {
    pub fn new(sys: &DelaySystem, grid: &GridSpec) -> Result<Self> {
        grid.validate()?;
        let span = 2.0 * sys.period + 2.0 * sys.h;
        let segments = (span / sys.h - 1e-9).ceil() as usize;
        let table = FundamentalMatrixTable {
            sys: sys.clone(),
            grid: *grid,
            segments,
            cache: Mutex::new(HashMap::new()),
        };
        let d = grid.delta(sys.h);
        let count = (sys.period / d - 1e-9).ceil() as usize;
        for j in 0..count {
            table.column(j as f64 * d)?;
        }
        Ok(table)
    }

    pub fn system(&self) -> &DelaySystem {
        &self.sys
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Largest `t - s` for which `K(t, s)` is available.
    pub fn span(&self) -> f64 {
        self.segments as f64 * self.sys.h
    }

    fn reduce(&self, t: f64, s: f64) -> (f64, f64) {
        let tp = self.sys.period;
        let k = (s / tp).floor();
        if k == 0.0 {
            return (t, s);
        }
        let mut sr = s - k * tp;
        if sr >= tp {
            sr -= tp;
        }
        (t - (s - sr), sr)
    }

    /// Column `K(., s)` for a reduced source `s in [0, T)`.
    pub fn column(&self, s: f64) -> Result<Arc<DenseSolution>> {
        let key = source_key(s);
        if let Some(c) = self.cache.lock().unwrap().get(&key) {
            return Ok(c.clone());
        }
        let n = self.sys.n;
        let col = Arc::new(DenseSolution::integrate(
            &self.sys,
            &self.grid,
            s,
            DMatrix::identity(n, n),
            History::Zero,
            self.segments,
        )?);
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= COLUMN_CACHE_LIMIT {
            let d = self.grid.delta(self.sys.h);
            cache.retain(|&k, _| {
                let x = k as f64 / (1u64 << 40) as f64 / d;
                (x - x.round()).abs() < 1e-9
            });
        }
        cache.insert(key, col.clone());
        Ok(col)
    }

    /// `K(t, s)`: zero for `t < s` and the identity at `t = s`.
    pub fn k(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        self.k_lim(t, s, Approach::Exact)
    }

    pub fn k_lim(&self, t: f64, s: f64, approach: Approach) -> Result<DMatrix<f64>> {
        let n = self.sys.n;
        let d = t - s;
        let tol = 1e-12 * (1.0 + t.abs().max(s.abs()));
        if d.abs() <= tol {
            return Ok(match approach {
                Approach::FromBelow => DMatrix::zeros(n, n),
                _ => DMatrix::identity(n, n),
            });
        }
        if d < 0.0 {
            return Ok(DMatrix::zeros(n, n));
        }
        if d > self.span() * (1.0 + 1e-12) {
            return Err(Error::OutOfTable { t, s });
        }
        let (tr, sr) = self.reduce(t, s);
        let col = self.column(sr)?;
        Ok(col.value_at_offset(tr - sr))
    }

    /// Number of cached columns.
    pub fn cached_columns(&self) -> usize {
        self.cache.lock().unwrap().len()
    }
}

/// `x(t) = K(t, t0) phi0 + int_{-h}^0 K(t, t0 + h + tau) A1(t0 + h + tau) Phi(tau) dtau`.
pub fn cauchy_solution(table: &FundamentalMatrixTable, t0: f64, state: &HilbertState, t: f64) -> Result<DVector<f64>> {
    let sys = table.system();
    let h = sys.h;
    let mut x = table.k(t, t0)? * &state.head;
    if sys.a1.is_zero() {
        return Ok(x);
    }
    let mut breaks = state.kinks.clone();
    quadrature::shifted_breaks(t - t0 - h, h, -h, 0.0, &mut breaks);
    let pts = quadrature::panel_rule(-h, 0.0, -h, state.delta(), &breaks, table.grid().quad_rule, false);
    for q in pts {
        let src = t0 + h + q.x;
        let k = table.k_lim(t, src, Approach::from_side(q.side, -1))?;
        if k.iter().all(|&v| v == 0.0) {
            continue;
        }
        let v = sys.a1(src) * state.tail_at(q.x);
        x += (k * v) * q.w;
    }
    Ok(x)
}

/// `K(t,s) - K(t,xi) K(xi,s) - int_{-h}^0 K(t, xi+theta+h) A1(xi+theta+h) K(xi+theta, s) dtheta`
/// for `s <= xi <= t`.
pub fn composition_residual(table: &FundamentalMatrixTable, t: f64, xi: f64, s: f64) -> Result<DMatrix<f64>> {
    if !(s <= xi && xi <= t) {
        return Err(Error::InvalidArgument("composition needs s <= xi <= t".into()));
    }
    let sys = table.system();
    let h = sys.h;
    let mut r = table.k(t, s)? - table.k(t, xi)? * table.k(xi, s)?;
    if sys.a1.is_zero() {
        return Ok(r);
    }
    let mut breaks = Vec::new();
    quadrature::shifted_breaks(t - xi - h, h, -h, 0.0, &mut breaks);
    quadrature::shifted_breaks(s - xi, h, -h, 0.0, &mut breaks);
    let d = table.grid().delta(h);
    let pts = quadrature::panel_rule(-h, 0.0, -h, d, &breaks, table.grid().quad_rule, false);
    for q in pts {
        let a = xi + q.x + h;
        let k1 = table.k_lim(t, a, Approach::from_side(q.side, -1))?;
        let k2 = table.k_lim(xi + q.x, s, Approach::from_side(q.side, 1))?;
        r -= k1 * sys.a1(a) * k2 * q.w;
    }
    Ok(r)
}

/// Solution of the delay system from a state at `t0`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    sol: DenseSolution,
    sys: DelaySystem,
}

pub fn integrate_dde(sys: &DelaySystem, grid: &GridSpec, t0: f64, state: &HilbertState, t_end: f64) -> Result<Trajectory> {
    if !state.is_finite() {
        return Err(Error::NonFiniteState { t: t0 });
    }
    if t_end < t0 {
        return Err(Error::InvalidArgument("t_end precedes t0".into()));
    }
    let segments = (((t_end - t0) / sys.h) - 1e-9).ceil().max(1.0) as usize;
    let head = DMatrix::from_column_slice(sys.n, 1, state.head.as_slice());
    let sol = DenseSolution::integrate(sys, grid, t0, head, History::State(state.clone()), segments)?;
    Ok(Trajectory { sol, sys: sys.clone() })
}

impl Trajectory {
    pub fn t0(&self) -> f64 {
        self.sol.t0()
    }

    pub fn t_end(&self) -> f64 {
        self.sol.t0() + self.sol.span()
    }

    pub fn x(&self, t: f64) -> DVector<f64> {
        let v = self.sol.eval(t);
        DVector::from_column_slice(v.as_slice())
    }

    pub fn dx(&self, t: f64) -> DVector<f64> {
        let v = self.sol.deriv(t);
        DVector::from_column_slice(v.as_slice())
    }

    /// `|x'(t) - A0(t) x(t) - A1(t) x(t - h)|` for the dense interpolant.
    pub fn dde_residual(&self, t: f64) -> f64 {
        let h = self.sys.h;
        let r = self.dx(t) - self.sys.a0(t) * self.x(t) - self.sys.a1(t) * self.x(t - h);
        r.norm()
    }

    /// Points `t0 + q h` where the solution may lose smoothness.
    pub fn breakpoints(&self) -> Vec<f64> {
        let q_max = (self.sol.span() / self.sys.h).round() as usize;
        (0..=q_max).map(|q| self.t0() + q as f64 * self.sys.h).collect()
    }

    /// State `x_t` sampled on `m + 1` tail nodes.
    pub fn state_at(&self, t: f64, m: usize) -> Result<HilbertState> {
        let h = self.sys.h;
        if t < self.t0() - 1e-12 || t > self.t_end() + 1e-12 {
            return Err(Error::InvalidArgument(format!("t = {t} outside the integrated interval")));
        }
        let mut st = HilbertState::from_fn(self.x(t), m, h, |th| self.x(t + th));
        let tol = 1e-12 * (1.0 + t.abs());
        st.kinks = self
            .breakpoints()
            .iter()
            .map(|&b| b - t)
            .filter(|&th| th > -h + tol && th < -tol)
            .collect();
        Ok(st)
    }

    /// `int_a^b x^T W x` by Gauss quadrature split at the breakpoints.
    pub fn weighted_energy(&self, a: f64, b: f64) -> f64 {
        let d = self.sol.dt() * self.sol.steps_per_segment() as f64 / 32.0;
        let pts = quadrature::panel_rule(a, b, self.t0(), d, &self.breakpoints(), quadrature::QuadRule::Gauss2, true);
        pts.iter()
            .map(|q| {
                let x = self.x(q.x);
                q.w * (x.transpose() * self.sys.w(q.x) * &x)[(0, 0)]
            })
            .sum()
    }
}
