//! Quadrature and interpolation on uniform meshes with known breakpoints.
//!
//! Integrands in this crate are smooth between breakpoints whose positions
//! are known in advance (the jump of `K(t, s)` at `t = s` and the kinks at
//! `t = s + qh`). Every rule here takes those breakpoints explicitly.

use serde::{Deserialize, Serialize};

/// Which one-sided limit a quadrature point stands for.
///
/// `Start` means the point is the left end of a smooth piece, so the
/// integrand must be evaluated as the limit from the right. `End` is the
/// mirror case. `Interior` points lie strictly inside a smooth piece.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Start,
    Interior,
    End,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum QuadRule {
    #[serde(rename = "trapezoid")]
    Trapezoid,
    #[default]
    #[serde(rename = "composite-gauss-2")]
    Gauss2,
}

impl QuadRule {
    pub fn name(self) -> &'static str {
        match self {
            QuadRule::Trapezoid => "trapezoid",
            QuadRule::Gauss2 => "composite-gauss-2",
        }
    }

    pub fn parse(s: &str) -> Option<QuadRule> {
        match s {
            "trapezoid" => Some(QuadRule::Trapezoid),
            "composite-gauss-2" => Some(QuadRule::Gauss2),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct QuadPoint {
    pub x: f64,
    pub w: f64,
    pub side: Side,
}

const G2_X: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
const G2_W: [f64; 2] = [1.0, 1.0];
const G4_X: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const G4_W: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

fn push_panel(out: &mut Vec<QuadPoint>, a: f64, b: f64, rule: QuadRule, high: bool) {
    let len = b - a;
    if len <= 0.0 {
        return;
    }
    match rule {
        QuadRule::Trapezoid => {
            out.push(QuadPoint { x: a, w: 0.5 * len, side: Side::Start });
            out.push(QuadPoint { x: b, w: 0.5 * len, side: Side::End });
        }
        QuadRule::Gauss2 => {
            let (xs, ws): (&[f64], &[f64]) = if high { (&G4_X, &G4_W) } else { (&G2_X, &G2_W) };
            let mid = 0.5 * (a + b);
            for (x, w) in xs.iter().zip(ws) {
                out.push(QuadPoint { x: mid + 0.5 * len * x, w: 0.5 * len * w, side: Side::Interior });
            }
        }
    }
}

/// Composite rule on `[a, b]` with panels cut at the mesh lines
/// `origin + k * step` and at every breakpoint inside the interval.
///
/// With `high = true` the Gauss variant uses four points per panel; this is
/// used where the integrand contains products of several interpolants.
pub fn panel_rule(
    a: f64,
    b: f64,
    origin: f64,
    step: f64,
    breaks: &[f64],
    rule: QuadRule,
    high: bool,
) -> Vec<QuadPoint> {
    let mut cuts = vec![a, b];
    if b > a {
        let eps = 1e-12 * step.max(1.0);
        let k0 = ((a - origin) / step).floor() as i64 + 1;
        let mut k = k0;
        loop {
            let x = origin + k as f64 * step;
            if x >= b - eps {
                break;
            }
            if x > a + eps {
                cuts.push(x);
            }
            k += 1;
        }
        for &x in breaks {
            if x > a + eps && x < b - eps {
                cuts.push(x);
            }
        }
    }
    cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    cuts.dedup_by(|p, q| (*p - *q).abs() <= 1e-12 * step.max(1.0));
    let mut out = Vec::with_capacity(cuts.len() * 4);
    for win in cuts.windows(2) {
        push_panel(&mut out, win[0], win[1], rule, high);
    }
    out
}

/// Breakpoints `c + q * h` that fall strictly inside `(a, b)`.
pub fn shifted_breaks(c: f64, h: f64, a: f64, b: f64, out: &mut Vec<f64>) {
    let q0 = ((a - c) / h).floor() as i64;
    let q1 = ((b - c) / h).ceil() as i64;
    for q in q0..=q1 {
        let x = c + q as f64 * h;
        if x > a && x < b {
            out.push(x);
        }
    }
}

fn segment_weights(panels: usize, rule: QuadRule) -> Vec<f64> {
    if rule == QuadRule::Trapezoid {
        let mut w = vec![1.0; panels + 1];
        w[0] = 0.5;
        w[panels] = 0.5;
        return w;
    }
    match panels {
        1 => vec![0.5, 0.5],
        2 => vec![1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0],
        3 => vec![3.0 / 8.0, 9.0 / 8.0, 9.0 / 8.0, 3.0 / 8.0],
        4 => vec![14.0 / 45.0, 64.0 / 45.0, 24.0 / 45.0, 64.0 / 45.0, 14.0 / 45.0],
        5 => {
            let mut w = vec![0.0; 6];
            for (i, v) in [1.0 / 3.0, 4.0 / 3.0, 1.0 / 3.0].iter().enumerate() {
                w[i] += v;
            }
            for (i, v) in [3.0 / 8.0, 9.0 / 8.0, 9.0 / 8.0, 3.0 / 8.0].iter().enumerate() {
                w[2 + i] += v;
            }
            w
        }
        _ => {
            // Gregory end corrections, fourth order.
            let mut w = vec![1.0; panels + 1];
            let g = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];
            for i in 0..3 {
                w[i] = g[i];
                w[panels - i] = g[i];
            }
            w
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NodeWeight {
    pub k: usize,
    pub w: f64,
    pub side: Side,
}

/// Rule on the nodes `0..=m` of a uniform mesh with spacing `step`,
/// restarted at every breakpoint node. A breakpoint node appears twice,
/// once as the end of the piece on its left and once as the start of the
/// piece on its right.
pub fn nodal_rule(m: usize, breaks: &[usize], step: f64, rule: QuadRule) -> Vec<NodeWeight> {
    let mut b: Vec<usize> = breaks.iter().copied().filter(|&k| k > 0 && k < m).collect();
    b.push(0);
    b.push(m);
    b.sort_unstable();
    b.dedup();
    let mut out = Vec::with_capacity(m + 1 + 2 * b.len());
    for win in b.windows(2) {
        let (a, c) = (win[0], win[1]);
        let w = segment_weights(c - a, rule);
        for (t, k) in (a..=c).enumerate() {
            let side = if k == a {
                Side::Start
            } else if k == c {
                Side::End
            } else {
                Side::Interior
            };
            out.push(NodeWeight { k, w: w[t] * step, side });
        }
    }
    out
}

/// Interpolation stencil: `value(x) = sum_i w[i] * f[idx[i]]`.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub len: usize,
}

impl Stencil {
    fn single(k: usize) -> Stencil {
        Stencil { idx: [k, 0, 0, 0], w: [1.0, 0.0, 0.0, 0.0], len: 1 }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len).map(move |i| (self.idx[i], self.w[i]))
    }
}

/// Piecewise-cubic Lagrange stencil on nodes `x0 + k * step`, `k = 0..=m`.
///
/// Stencils never straddle a breakpoint: the nodes used all lie in the
/// closed piece containing `x`, so interpolation stays high order on both
/// sides of a kink. Points within `1e-12 * step` of a node return that node.
pub fn stencil(x: f64, x0: f64, step: f64, m: usize, breaks: &[f64]) -> Stencil {
    let r = (x - x0) / step;
    let rk = r.round();
    if (r - rk).abs() <= 1e-10 && rk >= 0.0 && rk <= m as f64 {
        return Stencil::single(rk as usize);
    }
    let mut lo_b = 0.0f64;
    let mut hi_b = m as f64;
    for &bx in breaks {
        let rb = (bx - x0) / step;
        if rb <= r && rb > lo_b {
            lo_b = rb;
        }
        if rb > r && rb < hi_b {
            hi_b = rb;
        }
    }
    let mut k_lo = (lo_b - 1e-9).ceil().max(0.0) as i64;
    let mut k_hi = (hi_b + 1e-9).floor().min(m as f64) as i64;
    if k_hi - k_lo < 1 {
        k_lo = 0;
        k_hi = m as i64;
    }
    let npts = (k_hi - k_lo + 1).min(4);
    let c = r.floor() as i64;
    let start = (c - (npts - 1) / 2).max(k_lo).min(k_hi - npts + 1);
    let mut st = Stencil { idx: [0; 4], w: [0.0; 4], len: npts as usize };
    for i in 0..npts as usize {
        let ki = start + i as i64;
        let mut w = 1.0;
        for j in 0..npts as usize {
            if j != i {
                let kj = (start + j as i64) as f64;
                w *= (r - kj) / (ki as f64 - kj);
            }
        }
        st.idx[i] = ki as usize;
        st.w[i] = w;
    }
    st
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_nodal(m: usize, breaks: &[usize], f: impl Fn(f64) -> f64) -> f64 {
        let d = 1.0 / m as f64;
        nodal_rule(m, breaks, d, QuadRule::Gauss2)
            .iter()
            .map(|nw| nw.w * f(nw.k as f64 * d))
            .sum()
    }

    #[test]
    fn nodal_rule_is_exact_on_cubics_for_every_segment_length() {
        for m in 2..=12 {
            let v = integrate_nodal(m, &[], |x| x * x * x - 2.0 * x + 1.0);
            assert!((v - (0.25 - 1.0 + 1.0)).abs() < 1e-13, "m={m} v={v}");
        }
    }

    #[test]
    fn nodal_rule_handles_kinks_at_nodes() {
        let f = |x: f64| (x - 0.375).abs().powi(3) + (x - 0.375).abs();
        let exact = (0.375f64.powi(4) + 0.625f64.powi(4)) / 4.0 + (0.375f64.powi(2) + 0.625f64.powi(2)) / 2.0;
        let v = integrate_nodal(16, &[6], f);
        assert!((v - exact).abs() < 1e-13);
    }

    #[test]
    fn panel_rule_respects_breaks() {
        let f = |x: f64| if x < 0.3 { x } else { 1.0 + x * x };
        let pts = panel_rule(0.0, 1.0, 0.0, 0.125, &[0.3], QuadRule::Gauss2, false);
        let v: f64 = pts.iter().map(|p| p.w * f(p.x)).sum();
        let exact = 0.045 + 0.7 + (1.0 - 0.027) / 3.0;
        assert!((v - exact).abs() < 1e-13);
    }

    #[test]
    fn trapezoid_panels_mark_sides() {
        let pts = panel_rule(0.0, 0.5, 0.0, 0.25, &[], QuadRule::Trapezoid, false);
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[0].side, Side::Start);
        assert_eq!(pts[1].side, Side::End);
    }

    #[test]
    fn stencil_reproduces_cubics_and_stays_in_piece() {
        let f = |x: f64| 2.0 * x * x * x - x + 0.5;
        let m = 10;
        let step = 0.1;
        let vals: Vec<f64> = (0..=m).map(|k| f(k as f64 * step)).collect();
        for &x in &[0.01, 0.37, 0.55, 0.99] {
            let st = stencil(x, 0.0, step, m, &[]);
            let v: f64 = st.iter().map(|(k, w)| w * vals[k]).sum();
            assert!((v - f(x)).abs() < 1e-12);
        }
        let st = stencil(0.52, 0.0, step, m, &[0.5]);
        assert!(st.iter().all(|(k, _)| k >= 5));
        let st = stencil(0.48, 0.0, step, m, &[0.5]);
        assert!(st.iter().all(|(k, _)| k <= 5));
    }
}
