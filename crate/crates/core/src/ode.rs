//! The profile ODE `dA/ds = g_p(A)`, `A(0) = alpha0`.
//!
//! `g_p` is expensive (a root find plus several quadratures per value), so it
//! is tabulated once on a uniform grid and replaced by a clamped cubic spline.
//! Integration uses fixed-step classic RK4; dense output is cubic Hermite.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::ratefn::{rate_profile, QuadConfig};

pub const DEFAULT_GRID_POINTS: usize = 512;
pub const DEFAULT_STOP_MARGIN: f64 = 1e-4;

/// Spline interpolant of `alpha -> g_p(alpha)` on `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct DriftTable {
    p: f64,
    cfg: QuadConfig,
    lo: f64,
    step: f64,
    values: Vec<f64>,
    second: Vec<f64>,
}

impl DriftTable {
    pub fn build(lo: f64, hi: f64, p: f64, points: usize, cfg: &QuadConfig) -> Result<Self> {
        if !(lo > 0.0 && hi < 0.5 && lo < hi) || points < 8 {
            return domain(format!("drift grid [{lo}, {hi}] with {points} points is invalid"));
        }
        let step = (hi - lo) / (points - 1) as f64;
        let values = (0..points)
            .map(|i| rate_profile(lo + i as f64 * step, p, cfg).map(|r| r.g_p))
            .collect::<Result<Vec<_>>>()?;
        let v = &values;
        let n = points - 1;
        // Fourth-order one-sided end slopes.
        let d0 = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * step);
        let dn = (25.0 * v[n] - 48.0 * v[n - 1] + 36.0 * v[n - 2] - 16.0 * v[n - 3]
            + 3.0 * v[n - 4])
            / (12.0 * step);
        let second = clamped_spline_moments(v, step, d0, dn);
        Ok(Self { p, cfg: *cfg, lo, step, values, second })
    }

    /// Table covering `[alpha0 - 0.01, 1/2 - stop_margin/2]`, clipped to (0, 1/2).
    pub fn for_solve(alpha0: f64, p: f64, stop_margin: f64, cfg: &QuadConfig) -> Result<Self> {
        let lo = (alpha0 - 0.01).max(0.5 * alpha0);
        let hi = 0.5 - 0.5 * stop_margin;
        Self::build(lo, hi, p, DEFAULT_GRID_POINTS, cfg)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.lo + self.step * (self.values.len() - 1) as f64)
    }

    /// `g_p(alpha)`: spline inside the grid, direct evaluation outside.
    pub fn eval(&self, alpha: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        if alpha < lo || alpha > hi {
            return rate_profile(alpha, self.p, &self.cfg).map(|r| r.g_p);
        }
        let n = self.values.len() - 1;
        let i = (((alpha - lo) / self.step) as usize).min(n - 1);
        let h = self.step;
        let a = (lo + (i + 1) as f64 * h - alpha) / h;
        let b = 1.0 - a;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.second[i], self.second[i + 1]);
        Ok(a * y0 + b * y1 + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0)
    }
}

fn clamped_spline_moments(y: &[f64], h: f64, d0: f64, dn: f64) -> Vec<f64> {
    let n = y.len();
    // Tridiagonal system for the second derivatives, solved by Thomas' algorithm.
    let mut diag = vec![4.0; n];
    let mut rhs = vec![0.0; n];
    diag[0] = 2.0;
    diag[n - 1] = 2.0;
    rhs[0] = 6.0 * ((y[1] - y[0]) / h - d0) / h;
    rhs[n - 1] = 6.0 * (dn - (y[n - 1] - y[n - 2]) / h) / h;
    for i in 1..n - 1 {
        rhs[i] = 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
    }
    for i in 1..n {
        let w = 1.0 / diag[i - 1];
        diag[i] -= w;
        rhs[i] -= w * rhs[i - 1];
    }
    let mut m = vec![0.0; n];
    m[n - 1] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        m[i] = (rhs[i] - m[i + 1]) / diag[i];
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeSolution {
    pub alpha0: f64,
    pub p: f64,
    pub step: f64,
    /// `(s_k, A_k)` with `s_k = k h`.
    pub nodes: Vec<(f64, f64)>,
    /// Slopes `g_p(A_k)`, used by the Hermite interpolant.
    pub slopes: Vec<f64>,
    pub terminated_at_half: bool,
    pub s_end: f64,
}

fn check_solve(alpha0: f64, p: f64, h: f64, stop_margin: f64) -> Result<()> {
    if !(alpha0 > 0.0 && alpha0 < 0.5) {
        return domain(format!("alpha0 must lie in (0,1/2), got {alpha0}"));
    }
    if p.is_nan() || p <= 0.5 {
        return domain(format!("p must exceed 1/2, got {p}"));
    }
    if !(h > 0.0 && h.is_finite()) {
        return domain(format!("step must be positive, got {h}"));
    }
    if !(stop_margin > 0.0 && stop_margin < 0.25) {
        return domain(format!("stop_margin must lie in (0,1/4), got {stop_margin}"));
    }
    Ok(())
}

/// Solves with a freshly built drift table.
pub fn solve_a(
    alpha0: f64,
    p: f64,
    s_max: f64,
    h: f64,
    stop_margin: f64,
    cfg: &QuadConfig,
) -> Result<OdeSolution> {
    check_solve(alpha0, p, h, stop_margin)?;
    let table = DriftTable::for_solve(alpha0, p, stop_margin, cfg)?;
    solve_a_with(&table, alpha0, s_max, h, stop_margin)
}

/// RK4 with step `h` until `s_max` or until `A >= 1/2 - stop_margin`.
pub fn solve_a_with(
    table: &DriftTable,
    alpha0: f64,
    s_max: f64,
    h: f64,
    stop_margin: f64,
) -> Result<OdeSolution> {
    check_solve(alpha0, table.p(), h, stop_margin)?;
    if !(s_max >= 0.0 && s_max.is_finite()) {
        return domain(format!("s_max must be non-negative, got {s_max}"));
    }
    let n_steps = (s_max / h + 1e-9).floor() as usize;
    let stop = 0.5 - stop_margin;
    let rhs = |a: f64| -> Result<f64> {
        if !(a > 0.0 && a < 0.5) {
            return Err(Error::OutOfRange(format!("profile left (0, 1/2): A = {a}")));
        }
        table.eval(a)
    };
    let mut a = alpha0;
    let mut slope = rhs(a)?;
    let mut nodes = vec![(0.0, a)];
    let mut slopes = vec![slope];
    let mut terminated = a >= stop;
    for k in 1..=n_steps {
        if terminated {
            break;
        }
        let k1 = slope;
        let k2 = rhs(a + 0.5 * h * k1)?;
        let k3 = rhs(a + 0.5 * h * k2)?;
        let k4 = rhs(a + h * k3)?;
        let next = a + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !(next > a && next < 0.5) {
            return Err(Error::OutOfRange(format!("profile left [alpha0, 1/2): A = {next}")));
        }
        a = next;
        slope = rhs(a)?;
        nodes.push((k as f64 * h, a));
        slopes.push(slope);
        terminated = a >= stop;
    }
    let s_end = nodes.last().map(|n| n.0).unwrap_or(0.0);
    Ok(OdeSolution {
        alpha0,
        p: table.p(),
        step: h,
        nodes,
        slopes,
        terminated_at_half: terminated,
        s_end,
    })
}

/// Cubic Hermite dense output; exact at nodes.
pub fn eval_a(sol: &OdeSolution, s: f64) -> Result<f64> {
    if !(s >= 0.0 && s <= sol.s_end * (1.0 + 1e-12)) {
        return Err(Error::OutOfRange(format!("s={s} outside [0, {}]", sol.s_end)));
    }
    let n = sol.nodes.len();
    if n == 1 {
        return Ok(sol.nodes[0].1);
    }
    let h = sol.step;
    let i = ((s / h) as usize).min(n - 2);
    let (s0, y0) = sol.nodes[i];
    if s == s0 {
        return Ok(y0);
    }
    let (_, y1) = sol.nodes[i + 1];
    let (d0, d1) = (sol.slopes[i], sol.slopes[i + 1]);
    let u = (s - s0) / h;
    let u2 = u * u;
    let u3 = u2 * u;
    Ok((2.0 * u3 - 3.0 * u2 + 1.0) * y0
        + (u3 - 2.0 * u2 + u) * h * d0
        + (-2.0 * u3 + 3.0 * u2) * y1
        + (u3 - u2) * h * d1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BlowupProbe {
    ReachedHalfAt(f64),
    HorizonExceeded,
}

pub const PROBE_STEP: f64 = 1e-3;

/// First node time at which `A >= 1/2 - stop_margin`, if within `s_budget`.
pub fn probe_blowup(
    alpha0: f64,
    p: f64,
    s_budget: f64,
    stop_margin: f64,
    cfg: &QuadConfig,
) -> Result<BlowupProbe> {
    let sol = solve_a(alpha0, p, s_budget, PROBE_STEP, stop_margin, cfg)?;
    Ok(if sol.terminated_at_half {
        BlowupProbe::ReachedHalfAt(sol.s_end)
    } else {
        BlowupProbe::HorizonExceeded
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_reproduces_cubic() {
        let h = 0.1;
        let y: Vec<f64> = (0..20).map(|i| (i as f64 * h).powi(3)).collect();
        let x_end = 19.0 * h;
        let m = clamped_spline_moments(&y, h, 0.0, 3.0 * x_end * x_end);
        for (i, mi) in m.iter().enumerate() {
            assert!((mi - 6.0 * i as f64 * h).abs() < 1e-9);
        }
    }
}
