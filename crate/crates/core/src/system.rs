//! Periodic delay systems `x'(t) = A0(t) x(t) + A1(t) x(t - h)` and their
//! configuration format.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{self, QuadRule};

/// Truncated Fourier series `c0 + sum_k cos[k-1] cos(w k t) + sin[k-1] sin(w k t)`
/// with `w = 2 pi / T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fourier {
    pub c0: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl Fourier {
    pub fn constant(c0: f64) -> Fourier {
        Fourier { c0, cos: Vec::new(), sin: Vec::new() }
    }

    pub fn eval(&self, omega: f64, t: f64) -> f64 {
        let mut v = self.c0;
        for (k, a) in self.cos.iter().enumerate() {
            v += a * (omega * (k + 1) as f64 * t).cos();
        }
        for (k, b) in self.sin.iter().enumerate() {
            v += b * (omega * (k + 1) as f64 * t).sin();
        }
        v
    }

    fn is_finite(&self) -> bool {
        self.c0.is_finite() && self.cos.iter().chain(&self.sin).all(|x| x.is_finite())
    }

    fn harmonics(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    /// Coefficients of `t -> self(shift - t)`.
    fn reflected(&self, omega: f64, shift: f64) -> Fourier {
        let nh = self.harmonics();
        let mut cos = vec![0.0; nh];
        let mut sin = vec![0.0; nh];
        for k in 0..nh {
            let a = self.cos.get(k).copied().unwrap_or(0.0);
            let b = self.sin.get(k).copied().unwrap_or(0.0);
            let phi = omega * (k + 1) as f64 * shift;
            let (sp, cp) = phi.sin_cos();
            cos[k] = a * cp + b * sp;
            sin[k] = a * sp - b * cp;
        }
        Fourier { c0: self.c0, cos, sin }
    }
}

/// `n x n` matrix of Fourier series with common period `T`.
///
/// Symmetric functions keep one series per unordered index pair, so
/// `get(i, j)` and `get(j, i)` are the same object.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicMatrixFunction {
    n: usize,
    period: f64,
    symmetric: bool,
    entries: Vec<Fourier>,
}

impl PeriodicMatrixFunction {
    /// Builds from row-major entries.
    pub fn new(n: usize, period: f64, entries: Vec<Fourier>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::InvalidSystem(format!(
                "expected {} entries, got {}",
                n * n,
                entries.len()
            )));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidSystem("non-finite Fourier coefficient".into()));
        }
        Ok(PeriodicMatrixFunction { n, period, symmetric: false, entries })
    }

    /// Builds a symmetric function from row-major entries, checking that the
    /// coefficients of `(i, j)` and `(j, i)` agree.
    pub fn new_symmetric(n: usize, period: f64, entries: Vec<Fourier>) -> Result<Self> {
        let full = Self::new(n, period, entries)?;
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                let a = &full.entries[i * n + j];
                let b = &full.entries[j * n + i];
                if !same_series(a, b) {
                    return Err(Error::InvalidSystem(format!(
                        "W is not symmetric at entry ({i}, {j})"
                    )));
                }
                packed.push(a.clone());
            }
        }
        Ok(PeriodicMatrixFunction { n, period, symmetric: true, entries: packed })
    }

    pub fn constant(m: &DMatrix<f64>, period: f64) -> Self {
        let n = m.nrows();
        let entries = (0..n * n).map(|k| Fourier::constant(m[(k / n, k % n)])).collect();
        PeriodicMatrixFunction { n, period, symmetric: false, entries }
    }

    pub fn constant_symmetric(m: &DMatrix<f64>, period: f64) -> Result<Self> {
        let n = m.nrows();
        let entries = (0..n * n).map(|k| Fourier::constant(m[(k / n, k % n)])).collect();
        Self::new_symmetric(n, period, entries)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn get(&self, i: usize, j: usize) -> &Fourier {
        if self.symmetric {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            &self.entries[a * self.n - a * (a + 1) / 2 + b]
        } else {
            &self.entries[i * self.n + j]
        }
    }

    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        let omega = 2.0 * PI / self.period;
        let n = self.n;
        let mut out = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if self.symmetric && j < i {
                    out[(i, j)] = out[(j, i)];
                } else {
                    out[(i, j)] = self.get(i, j).eval(omega, t);
                }
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.c0 == 0.0 && e.cos.iter().chain(&e.sin).all(|&x| x == 0.0))
    }

    /// Row-major list of entries, expanded for symmetric functions.
    pub fn row_major(&self) -> Vec<Fourier> {
        let n = self.n;
        (0..n * n).map(|k| self.get(k / n, k % n).clone()).collect()
    }

    /// `t -> F(t)^T`.
    pub fn transposed(&self) -> Self {
        let n = self.n;
        let entries = (0..n * n).map(|k| self.get(k % n, k / n).clone()).collect();
        PeriodicMatrixFunction { n, period: self.period, symmetric: self.symmetric, entries: self.pack(entries) }
    }

    /// `t -> F(shift - t)`.
    pub fn reflected(&self, shift: f64) -> Self {
        let omega = 2.0 * PI / self.period;
        let entries = self.row_major().iter().map(|e| e.reflected(omega, shift)).collect();
        PeriodicMatrixFunction { n: self.n, period: self.period, symmetric: self.symmetric, entries: self.pack(entries) }
    }

    fn pack(&self, row_major: Vec<Fourier>) -> Vec<Fourier> {
        if !self.symmetric {
            return row_major;
        }
        let n = self.n;
        let mut packed = Vec::new();
        for i in 0..n {
            for j in i..n {
                packed.push(row_major[i * n + j].clone());
            }
        }
        packed
    }
}

fn same_series(a: &Fourier, b: &Fourier) -> bool {
    let nh = a.harmonics().max(b.harmonics());
    let at = |v: &Vec<f64>, k: usize| v.get(k).copied().unwrap_or(0.0);
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()));
    close(a.c0, b.c0) && (0..nh).all(|k| close(at(&a.cos, k), at(&b.cos, k)) && close(at(&a.sin, k), at(&b.sin, k)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelaySystem {
    pub n: usize,
    pub period: f64,
    pub h: f64,
    pub a0: PeriodicMatrixFunction,
    pub a1: PeriodicMatrixFunction,
    pub w: PeriodicMatrixFunction,
}

impl DelaySystem {
    pub fn new(
        period: f64,
        h: f64,
        a0: PeriodicMatrixFunction,
        a1: PeriodicMatrixFunction,
        w: PeriodicMatrixFunction,
    ) -> Result<Self> {
        let n = a0.dim();
        if n == 0 {
            return Err(Error::InvalidSystem("dimension must be positive".into()));
        }
        if a1.dim() != n || w.dim() != n {
            return Err(Error::InvalidSystem("A0, A1 and W must have the same dimension".into()));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidSystem(format!("period must be positive, got {period}")));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidSystem(format!("delay must be positive, got {h}")));
        }
        if period < h * (1.0 - 1e-12) {
            return Err(Error::InvalidSystem(format!("period T = {period} is shorter than the delay h = {h}")));
        }
        if !w.is_symmetric() {
            return Err(Error::InvalidSystem("W must be stored symmetrically".into()));
        }
        let reperiod = |f: PeriodicMatrixFunction| PeriodicMatrixFunction { period, ..f };
        Ok(DelaySystem { n, period, h, a0: reperiod(a0), a1: reperiod(a1), w: reperiod(w) })
    }

    /// Time-invariant system with constant matrices.
    pub fn constant(
        period: f64,
        h: f64,
        a0: &DMatrix<f64>,
        a1: &DMatrix<f64>,
        w: &DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(
            period,
            h,
            PeriodicMatrixFunction::constant(a0, period),
            PeriodicMatrixFunction::constant(a1, period),
            PeriodicMatrixFunction::constant_symmetric(w, period)?,
        )
    }

    pub fn a0(&self, t: f64) -> DMatrix<f64> {
        self.a0.eval(t)
    }

    pub fn a1(&self, t: f64) -> DMatrix<f64> {
        self.a1.eval(t)
    }

    pub fn w(&self, t: f64) -> DMatrix<f64> {
        self.w.eval(t)
    }

    /// Same system with a different weight.
    pub fn with_weight(&self, w: PeriodicMatrixFunction) -> Result<Self> {
        Self::new(self.period, self.h, self.a0.clone(), self.a1.clone(), w)
    }
}

/// Discretization parameters shared by every solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    /// Mesh intervals per delay interval.
    pub m: usize,
    /// Integrator steps per mesh interval.
    pub substeps: usize,
    pub quad_rule: QuadRule,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { m: 32, substeps: 8, quad_rule: QuadRule::Gauss2 }
    }
}

impl GridSpec {
    pub fn new(m: usize, substeps: usize) -> Result<Self> {
        let g = GridSpec { m, substeps, quad_rule: QuadRule::Gauss2 };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 4 {
            return Err(Error::InvalidArgument(format!("grid m must be at least 4, got {}", self.m)));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be positive".into()));
        }
        Ok(())
    }

    pub fn with_m(self, m: usize) -> Self {
        GridSpec { m, ..self }
    }

    /// Mesh spacing `h / m`.
    pub fn delta(&self, h: f64) -> f64 {
        h / self.m as f64
    }

    /// Integrator step `h / (m * substeps)`.
    pub fn dt(&self, h: f64) -> f64 {
        h / (self.m * self.substeps) as f64
    }
}

/// State `(phi0, Phi)` of the delay system: a head vector and a tail
/// function on `[-h, 0]` sampled at `m + 1` uniform nodes and read back by
/// piecewise-cubic interpolation.
///
/// `kinks` lists positions in `(-h, 0)` where the tail may fail to be
/// smooth; interpolation and quadrature never cross them.
#[derive(Clone, Debug, PartialEq)]
pub struct HilbertState {
    pub head: DVector<f64>,
    pub tail: Vec<DVector<f64>>,
    pub h: f64,
    pub kinks: Vec<f64>,
}

impl HilbertState {
    pub fn new(head: DVector<f64>, tail: Vec<DVector<f64>>, h: f64) -> Result<Self> {
        if tail.len() < 2 {
            return Err(Error::InvalidArgument("tail needs at least two samples".into()));
        }
        if tail.iter().any(|v| v.len() != head.len()) {
            return Err(Error::InvalidArgument("tail samples must match head dimension".into()));
        }
        Ok(HilbertState { head, tail, h, kinks: Vec::new() })
    }

    /// Samples `phi` on the mesh and takes `head` as the value at 0.
    pub fn from_fn(head: DVector<f64>, m: usize, h: f64, phi: impl Fn(f64) -> DVector<f64>) -> Self {
        let d = h / m as f64;
        let tail = (0..=m).map(|k| phi(-h + k as f64 * d)).collect();
        HilbertState { head, tail, h, kinks: Vec::new() }
    }

    /// Head uniform in `(-1, 1)`, each tail component a cubic polynomial
    /// with coefficients uniform in `(-1, 1)`.
    pub fn random<R: Rng>(n: usize, m: usize, h: f64, rng: &mut R) -> Self {
        let head = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let coef: Vec<[f64; 4]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        Self::from_fn(head, m, h, |th| {
            let x = th / h;
            DVector::from_fn(n, |i, _| {
                let c = &coef[i];
                c[0] + x * (c[1] + x * (c[2] + x * c[3]))
            })
        })
    }

    pub fn dim(&self) -> usize {
        self.head.len()
    }

    pub fn m(&self) -> usize {
        self.tail.len() - 1
    }

    pub fn delta(&self) -> f64 {
        self.h / self.m() as f64
    }

    /// Kink positions as mesh node indices, for those that fall on nodes.
    pub fn kink_nodes(&self) -> Vec<usize> {
        let d = self.delta();
        self.kinks
            .iter()
            .filter_map(|&x| {
                let r = (x + self.h) / d;
                let k = r.round();
                ((r - k).abs() < 1e-8 && k > 0.0 && k < self.m() as f64).then_some(k as usize)
            })
            .collect()
    }

    /// Tail value at `theta in [-h, 0]`.
    pub fn tail_at(&self, theta: f64) -> DVector<f64> {
        let st = quadrature::stencil(theta, -self.h, self.delta(), self.m(), &self.kinks);
        let mut v = DVector::zeros(self.dim());
        for (k, w) in st.iter() {
            v.axpy(w, &self.tail[k], 1.0);
        }
        v
    }

    /// `|phi0|^2 + int |Phi|^2`.
    pub fn norm_sq(&self) -> f64 {
        let rule = quadrature::nodal_rule(self.m(), &self.kink_nodes(), self.delta(), QuadRule::Gauss2);
        self.head.norm_squared() + rule.iter().map(|nw| nw.w * self.tail[nw.k].norm_squared()).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.head.iter().chain(self.tail.iter().flat_map(|v| v.iter())).all(|x| x.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    substeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quad_rule: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    n: usize,
    #[serde(rename = "T")]
    period: f64,
    h: f64,
    #[serde(rename = "A0")]
    a0: Vec<Fourier>,
    #[serde(rename = "A1")]
    a1: Vec<Fourier>,
    #[serde(rename = "W")]
    w: Vec<Fourier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridDoc>,
}

/// Parses a JSON system description. Matrices are row-major lists of
/// `{"c0": .., "cos": [..], "sin": [..]}` entries.
pub fn parse_config(text: &str) -> Result<(DelaySystem, GridSpec)> {
    let doc: ConfigDoc = serde_json::from_str(text).map_err(|e| Error::MalformedConfig(e.to_string()))?;
    let n = doc.n;
    if n == 0 {
        return Err(Error::InvalidSystem("n must be positive".into()));
    }
    for (name, v) in [("A0", &doc.a0), ("A1", &doc.a1), ("W", &doc.w)] {
        if v.len() != n * n {
            return Err(Error::InvalidSystem(format!("{name} has {} entries, expected {}", v.len(), n * n)));
        }
    }
    let sys = DelaySystem::new(
        doc.period,
        doc.h,
        PeriodicMatrixFunction::new(n, doc.period, doc.a0)?,
        PeriodicMatrixFunction::new(n, doc.period, doc.a1)?,
        PeriodicMatrixFunction::new_symmetric(n, doc.period, doc.w)?,
    )?;
    let mut grid = GridSpec::default();
    if let Some(g) = doc.grid {
        if let Some(m) = g.m {
            grid.m = m;
        }
        if let Some(s) = g.substeps {
            grid.substeps = s;
        }
        if let Some(q) = g.quad_rule {
            grid.quad_rule = QuadRule::parse(&q)
                .ok_or_else(|| Error::MalformedConfig(format!("unknown quad_rule {q:?}")))?;
        }
    }
    grid.validate().map_err(|e| Error::MalformedConfig(e.to_string()))?;
    Ok((sys, grid))
}

pub fn serialize_config(sys: &DelaySystem, grid: &GridSpec) -> String {
    let doc = ConfigDoc {
        n: sys.n,
        period: sys.period,
        h: sys.h,
        a0: sys.a0.row_major(),
        a1: sys.a1.row_major(),
        w: sys.w.row_major(),
        grid: Some(GridDoc {
            m: Some(grid.m),
            substeps: Some(grid.substeps),
            quad_rule: Some(grid.quad_rule.name().to_string()),
        }),
    };
    serde_json::to_string_pretty(&doc).expect("config serialization cannot fail")
}
