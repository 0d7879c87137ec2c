#![allow(dead_code)]

use nalgebra::DMatrix;
use perlyap::system::{parse_config, DelaySystem, Fourier, GridSpec, PeriodicMatrixFunction};
use rand::Rng;

pub fn config(name: &str) -> &'static str {
    match name {
        "s1" => include_str!("../../configs/s1.json"),
        "s2" => include_str!("../../configs/s2.json"),
        "s3" => include_str!("../../configs/s3.json"),
        "s4" => include_str!("../../configs/s4.json"),
        "s5" => include_str!("../../configs/s5.json"),
        "periodic" => include_str!("../../configs/periodic.json"),
        "oscillator" => include_str!("../../configs/oscillator.json"),
        _ => panic!("no config {name}"),
    }
}

pub fn system(name: &str) -> DelaySystem {
    parse_config(config(name)).unwrap().0
}

pub fn grid(m: usize) -> GridSpec {
    GridSpec::default().with_m(m)
}

pub fn scalar(a0: f64, a1: f64, w: f64) -> DelaySystem {
    let m = |v: f64| DMatrix::from_element(1, 1, v);
    DelaySystem::constant(1.0, 1.0, &m(a0), &m(a1), &m(w)).unwrap()
}

/// `u(tau)` of `x'(t) = -x(t - 1)` with `W = 1`, for `|tau| <= 1`.
pub fn pure_delay_exact(tau: f64) -> f64 {
    let c = 1f64.cos() / (2.0 * (1.0 - 1f64.sin()));
    let t = tau.abs();
    c * t.cos() - 0.5 * t.sin()
}

fn random_fourier<R: Rng>(rng: &mut R, c0: f64, degree: usize, amp: f64) -> Fourier {
    Fourier {
        c0,
        cos: (0..degree).map(|_| rng.random_range(-amp..amp)).collect(),
        sin: (0..degree).map(|_| rng.random_range(-amp..amp)).collect(),
    }
}

/// Random `n x n` periodic matrix with Fourier degree `degree`; diagonal
/// means are shifted by `diag`.
pub fn random_periodic<R: Rng>(rng: &mut R, n: usize, period: f64, degree: usize, diag: f64, amp: f64) -> PeriodicMatrixFunction {
    let entries = (0..n * n)
        .map(|k| {
            let c0 = rng.random_range(-amp..amp) + if k / n == k % n { diag } else { 0.0 };
            random_fourier(rng, c0, degree, amp)
        })
        .collect();
    PeriodicMatrixFunction::new(n, period, entries).unwrap()
}

pub fn unit_weight(n: usize, period: f64) -> PeriodicMatrixFunction {
    PeriodicMatrixFunction::constant_symmetric(&DMatrix::identity(n, n), period).unwrap()
}

/// `W(t) = 1 + 0.5 cos(2 pi t / T)` in dimension one.
pub fn cosine_weight(period: f64) -> PeriodicMatrixFunction {
    PeriodicMatrixFunction::new_symmetric(1, period, vec![Fourier { c0: 1.0, cos: vec![0.5], sin: vec![] }]).unwrap()
}

/// Delay Lyapunov matrix `V(tau)` of a time-invariant system, computed by
/// shooting on the boundary value problem for `X(tau) = V(tau)`,
/// `Y(tau) = V(tau - h)`, `tau in [0, h]`:
///
/// ```text
/// X' = X A0 + Y A1,  Y' = -A0^T Y - A1^T X,
/// X(0) = Y(h),  Y(0) = X(h)^T,
/// X(0) A0 + A0^T X(0) + Y(0) A1 + A1^T Y(0)^T = -W.
/// ```
///
/// The boundary conditions are redundant for `n > 1`; the linear system is
/// solved by least squares.
///
/// `U(theta, s) = V(theta - s)`, with `V(-tau) = V(tau)^T`.
pub struct ShootingOracle {
    a0: DMatrix<f64>,
    a1: DMatrix<f64>,
    h: f64,
    x0: DMatrix<f64>,
    y0: DMatrix<f64>,
    steps: usize,
}

fn rhs(a0: &DMatrix<f64>, a1: &DMatrix<f64>, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    (x * a0 + y * a1, -(a0.transpose() * y) - a1.transpose() * x)
}

fn rk4(a0: &DMatrix<f64>, a1: &DMatrix<f64>, mut x: DMatrix<f64>, mut y: DMatrix<f64>, tau: f64, steps: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = steps.max(1);
    let dt = tau / n as f64;
    for _ in 0..n {
        let (k1x, k1y) = rhs(a0, a1, &x, &y);
        let (k2x, k2y) = rhs(a0, a1, &(&x + &k1x * (dt / 2.0)), &(&y + &k1y * (dt / 2.0)));
        let (k3x, k3y) = rhs(a0, a1, &(&x + &k2x * (dt / 2.0)), &(&y + &k2y * (dt / 2.0)));
        let (k4x, k4y) = rhs(a0, a1, &(&x + &k3x * dt), &(&y + &k3y * dt));
        x += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
        y += (k1y + k2y * 2.0 + k3y * 2.0 + k4y) * (dt / 6.0);
    }
    (x, y)
}

impl ShootingOracle {
    pub fn new(a0: &DMatrix<f64>, a1: &DMatrix<f64>, w: &DMatrix<f64>, h: f64) -> ShootingOracle {
        let n = a0.nrows();
        let nn = n * n;
        let steps = 4000;
        let unpack = |z: &[f64]| (DMatrix::from_column_slice(n, n, &z[..nn]), DMatrix::from_column_slice(n, n, &z[nn..]));
        let residual = |z: &[f64], with_w: bool| -> Vec<f64> {
            let (x0, y0) = unpack(z);
            let (xh, yh) = rk4(a0, a1, x0.clone(), y0.clone(), h, steps);
            let bc1 = &x0 - yh;
            let bc3 = &y0 - xh.transpose();
            let mut bc2 = &x0 * a0 + a0.transpose() * x0.transpose() + &y0 * a1 + a1.transpose() * y0.transpose();
            if with_w {
                bc2 += w;
            }
            bc1.iter().chain(bc2.iter()).chain(bc3.iter()).copied().collect()
        };
        let mut jac = DMatrix::zeros(3 * nn, 2 * nn);
        for c in 0..2 * nn {
            let mut e = vec![0.0; 2 * nn];
            e[c] = 1.0;
            for (r, v) in residual(&e, false).into_iter().enumerate() {
                jac[(r, c)] = v;
            }
        }
        let b = -nalgebra::DVector::from_vec(residual(&vec![0.0; 2 * nn], true));
        let z = jac.svd(true, true).solve(&b, 1e-12).expect("least-squares solve failed");
        let (x0, y0) = unpack(z.as_slice());
        ShootingOracle { a0: a0.clone(), a1: a1.clone(), h, x0, y0, steps }
    }

    /// `V(tau)` for `|tau| <= h`.
    pub fn v(&self, tau: f64) -> DMatrix<f64> {
        let t = tau.abs().min(self.h);
        let steps = ((t / self.h) * self.steps as f64).ceil() as usize;
        let (x, _) = rk4(&self.a0, &self.a1, self.x0.clone(), self.y0.clone(), t, steps);
        if tau < 0.0 {
            x.transpose()
        } else {
            x
        }
    }

    pub fn u(&self, theta: f64, s: f64) -> DMatrix<f64> {
        self.v(theta - s)
    }
}
