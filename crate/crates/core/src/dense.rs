//! Dense linear algebra for the large systems (LU, condition estimates,
//! eigenvalues), backed by faer. Small `n x n` algebra stays in nalgebra.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::Mat;
use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn to_faer(a: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let f = to_faer(a);
    let ev = f.eigenvalues().map_err(|e| Error::EigenFailure(format!("{e:?}")))?;
    if ev.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::EigenFailure("non-finite eigenvalue".into()));
    }
    Ok(ev)
}

/// Partial-pivoting LU of a row/column-equilibrated square matrix
/// `Ae = Dr A Dc`. Solves are with respect to the original `A`; the
/// condition estimate refers to `Ae`.
pub struct LuSolver {
    lu: PartialPivLu<f64>,
    n: usize,
    norm1: f64,
    r: Vec<f64>,
    c: Vec<f64>,
}

impl LuSolver {
    /// Factorizes `a` without scaling.
    pub fn new(a: &Mat<f64>) -> LuSolver {
        let n = a.nrows();
        Self::build(a.as_ref(), vec![1.0; n], vec![1.0; n])
    }

    /// Scales rows, then columns, to unit max-norm before factorizing.
    pub fn new_equilibrated(a: &Mat<f64>) -> LuSolver {
        let n = a.nrows();
        let mut r = vec![0.0f64; n];
        for j in 0..n {
            for i in 0..n {
                r[i] = r[i].max(a[(i, j)].abs());
            }
        }
        let r: Vec<f64> = r.into_iter().map(|v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect();
        let mut c = vec![0.0f64; n];
        for j in 0..n {
            for i in 0..n {
                c[j] = c[j].max(a[(i, j)].abs() * r[i]);
            }
        }
        let c: Vec<f64> = c.into_iter().map(|v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect();
        let ae = Mat::from_fn(n, n, |i, j| r[i] * a[(i, j)] * c[j]);
        Self::build(ae.as_ref(), r, c)
    }

    fn build(ae: faer::MatRef<'_, f64>, r: Vec<f64>, c: Vec<f64>) -> LuSolver {
        let n = ae.nrows();
        let mut norm1 = 0.0f64;
        for j in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += ae[(i, j)].abs();
            }
            norm1 = norm1.max(s);
        }
        LuSolver { lu: ae.partial_piv_lu(), n, norm1, r, c }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// 1-norm of the (equilibrated) factorized matrix.
    pub fn norm1(&self) -> f64 {
        self.norm1
    }

    fn solve_scaled(&self, b: &[f64], transpose: bool) -> Vec<f64> {
        let mut x = Mat::from_fn(self.n, 1, |i, _| b[i]);
        if transpose {
            self.lu.solve_transpose_in_place(x.as_mut());
        } else {
            self.lu.solve_in_place(x.as_mut());
        }
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    /// `A^{-1} b = Dc Ae^{-1} Dr b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rb: Vec<f64> = b.iter().zip(&self.r).map(|(x, r)| x * r).collect();
        let y = self.solve_scaled(&rb, false);
        y.iter().zip(&self.c).map(|(x, c)| x * c).collect()
    }

    /// `A^{-T} b = Dr Ae^{-T} Dc b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let cb: Vec<f64> = b.iter().zip(&self.c).map(|(x, c)| x * c).collect();
        let y = self.solve_scaled(&cb, true);
        y.iter().zip(&self.r).map(|(x, r)| x * r).collect()
    }

    /// Reciprocal 1-norm condition number of the factorized matrix, with
    /// `|Ae^{-1}|_1` estimated by the Hager-Higham method. Returns 0 when a
    /// solve breaks down.
    pub fn rcond(&self) -> f64 {
        let n = self.n;
        if n == 0 || self.norm1 == 0.0 {
            return 0.0;
        }
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0f64;
        let mut last_j = usize::MAX;
        for _ in 0..5 {
            let y = self.solve_scaled(&x, false);
            if y.iter().any(|v| !v.is_finite()) {
                return 0.0;
            }
            est = est.max(y.iter().map(|v| v.abs()).sum());
            let xi: Vec<f64> = y.iter().map(|&v| if v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = self.solve_scaled(&xi, true);
            if z.iter().any(|v| !v.is_finite()) {
                return 0.0;
            }
            let (j, zmax) = z
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx || j == last_j {
                break;
            }
            last_j = j;
            x = vec![0.0; n];
            x[j] = 1.0;
        }
        let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
        let b: Vec<f64> = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + i as f64 / denom))
            .collect();
        let y = self.solve_scaled(&b, false);
        if y.iter().any(|v| !v.is_finite()) {
            return 0.0;
        }
        let alt = 2.0 * y.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
        est = est.max(alt);
        1.0 / (self.norm1 * est)
    }

    /// Smallest singular value of the original `A` by inverse iteration on `A^T A`.
    pub fn sigma_min(&self, iterations: usize) -> f64 {
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 13) as f64 / 13.0).collect();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= nx);
        let mut sigma = f64::INFINITY;
        for _ in 0..iterations.max(1) {
            let y = self.solve(&x);
            let z = self.solve_transpose(&y);
            let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !nz.is_finite() || nz == 0.0 {
                return 0.0;
            }
            sigma = 1.0 / nz.sqrt();
            x = z.into_iter().map(|v| v / nz).collect();
        }
        sigma
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rcond_of_diagonal_matrix() {
        let a = Mat::from_fn(4, 4, |i, j| if i == j { [1.0, 2.0, 1e-3, 5.0][i] } else { 0.0 });
        let lu = LuSolver::new(&a);
        assert!((lu.rcond() - 1e-3 / 5.0).abs() < 1e-12);
        assert!((lu.sigma_min(20) - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn equilibration_removes_bad_scaling() {
        let a = Mat::from_fn(2, 2, |i, j| [[1e6, 2e6], [3.0, 1.0]][i][j]);
        let plain = LuSolver::new(&a);
        let eq = LuSolver::new_equilibrated(&a);
        assert!(eq.rcond() > 100.0 * plain.rcond());
        let x = eq.solve(&[5e6, 5.0]);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
        let y = eq.solve_transpose(&[1e6 + 6.0, 2e6 + 2.0]);
        assert!((y[0] - 1.0).abs() < 1e-9 && (y[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn singular_matrix_has_zero_rcond() {
        let a = Mat::from_fn(3, 3, |i, j| (i + j) as f64);
        let lu = LuSolver::new(&a);
        assert!(lu.rcond() < 1e-15);
    }

    #[test]
    fn eigenvalues_of_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let mut ev = eigenvalues(&a).unwrap();
        ev.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        assert!((ev[0] - Complex64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((ev[1] - Complex64::new(0.0, 1.0)).norm() < 1e-14);
    }
}
