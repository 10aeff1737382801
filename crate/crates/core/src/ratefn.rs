//! Rate function of the eventual-leadership probability.
//!
//! `F_p(rho, alpha)` is the scaled log-Laplace transform of the embedded
//! catch-up variable under the tilt `lambda = rho (1-alpha)^p t^p`:
//!
//! ```text
//! F_p = (1-alpha) [ int_L^1 -ln(1 + rho/u^p) du + int_1^inf -ln(1 - rho^2/u^{2p}) du ],
//! L = alpha / (1-alpha).
//! ```
//!
//! Its minimum over `rho` in (0,1) is `c_p(alpha)`. The integrals over `[1, inf)`
//! are mapped to `(0, 1]` by `u = 1/v`; the leading `v^{2p-2}` behaviour at the
//! origin is integrated analytically and only the bounded remainder goes
//! through quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::ceil_product;
use crate::quad::{integrate, integrate_with_breaks, Tolerance};
use crate::series::{power_tail, CompensatedSum};

/// Target for `|dF/drho|` at the returned minimizer.
pub const ROOT_TOL: f64 = 1e-10;

const BRACKET_LO: f64 = 1e-8;
const BRACKET_HI: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    /// `U_max`: the `[1, inf)` integral gets a dedicated panel for `u > U_max`,
    /// i.e. `v < 1/U_max` after the change of variables.
    pub tail_cut: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-10, max_subdivisions: 2000, tail_cut: 16.0 }
    }
}

impl QuadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::Config("quadrature tolerances must be positive".into()));
        }
        if self.max_subdivisions < 10 {
            return Err(Error::Config("max_subdivisions must be at least 10".into()));
        }
        if !(self.tail_cut > 1.0 && self.tail_cut.is_finite()) {
            return Err(Error::Config("tail_cut must be a finite value above 1".into()));
        }
        Ok(())
    }

    fn tolerance(&self) -> Tolerance {
        Tolerance { abs: self.abs_tol, rel: self.rel_tol, max_subdivisions: self.max_subdivisions }
    }

    fn tail_breaks(&self) -> [f64; 3] {
        [0.0, 1.0 / self.tail_cut, 1.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateProfile {
    pub alpha: f64,
    pub p: f64,
    pub rho_star: f64,
    pub c_p: f64,
    pub c_p_prime: f64,
    pub g_p: f64,
    pub grad_norm_at_star: f64,
}

fn check_args(rho: f64, alpha: f64, p: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return domain(format!("rho must lie in (0,1), got {rho}"));
    }
    check_alpha_p(alpha, p)
}

fn check_alpha_p(alpha: f64, p: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return domain(format!("alpha must lie in (0,1/2), got {alpha}"));
    }
    if !(p > 0.5 && p.is_finite()) {
        return domain(format!("p must exceed 1/2, got {p}"));
    }
    Ok(())
}

/// `-ln(1-x) - x` without cancellation for small `x`.
fn neg_log1m_minus_x(x: f64) -> f64 {
    if x < 0.05 {
        let mut term = x;
        let mut sum = 0.0;
        let mut k = 2.0;
        loop {
            term *= x;
            let add = term / k;
            sum += add;
            if add <= 1e-18 * sum {
                return sum;
            }
            k += 1.0;
        }
    } else {
        -(-x).ln_1p() - x
    }
}

/// `F_p(rho, alpha)`.
pub fn f_p(rho: f64, alpha: f64, p: f64, cfg: &QuadConfig) -> Result<f64> {
    check_args(rho, alpha, p)?;
    cfg.validate()?;
    let l = alpha / (1.0 - alpha);
    let near = integrate(|u| -(rho * u.powf(-p)).ln_1p(), l, 1.0, cfg.tolerance())?;
    let r2 = rho * rho;
    let far = integrate_with_breaks(
        |v: f64| {
            if v == 0.0 {
                return 0.0;
            }
            let x = r2 * v.powf(2.0 * p);
            neg_log1m_minus_x(x) / (v * v)
        },
        &cfg.tail_breaks(),
        cfg.tolerance(),
    )?;
    Ok((1.0 - alpha) * (near.value + far.value + r2 / (2.0 * p - 1.0)))
}

/// `dF_p/drho`.
pub fn df_drho(rho: f64, alpha: f64, p: f64, cfg: &QuadConfig) -> Result<f64> {
    check_args(rho, alpha, p)?;
    cfg.validate()?;
    let l = alpha / (1.0 - alpha);
    let near = integrate(|u| -1.0 / (u.powf(p) + rho), l, 1.0, cfg.tolerance())?;
    let r2 = rho * rho;
    let far = integrate_with_breaks(
        |v: f64| {
            let x = r2 * v.powf(2.0 * p);
            2.0 * rho * r2 * v.powf(4.0 * p - 2.0) / (1.0 - x)
        },
        &cfg.tail_breaks(),
        cfg.tolerance(),
    )?;
    Ok((1.0 - alpha) * (near.value + far.value + 2.0 * rho / (2.0 * p - 1.0)))
}

/// `d^2 F_p/drho^2`; strictly positive.
pub fn d2f_drho2(rho: f64, alpha: f64, p: f64, cfg: &QuadConfig) -> Result<f64> {
    check_args(rho, alpha, p)?;
    cfg.validate()?;
    let l = alpha / (1.0 - alpha);
    let near = integrate(
        |u| {
            let d = u.powf(p) + rho;
            1.0 / (d * d)
        },
        l,
        1.0,
        cfg.tolerance(),
    )?;
    let r2 = rho * rho;
    let far = integrate_with_breaks(
        |v: f64| {
            let x = r2 * v.powf(2.0 * p);
            2.0 * r2 * v.powf(4.0 * p - 2.0) * (3.0 - x) / ((1.0 - x) * (1.0 - x))
        },
        &cfg.tail_breaks(),
        cfg.tolerance(),
    )?;
    Ok((1.0 - alpha) * (near.value + far.value + 2.0 / (2.0 * p - 1.0)))
}

/// Minimizer of `F_p(., alpha)` over (0,1): bisection down to a bracket of
/// width 1e-3, then Newton steps kept inside the bracket.
pub fn rho_star(alpha: f64, p: f64, cfg: &QuadConfig) -> Result<f64> {
    check_alpha_p(alpha, p)?;
    let (mut lo, mut hi) = (BRACKET_LO, BRACKET_HI);
    let f_lo = df_drho(lo, alpha, p, cfg)?;
    let f_hi = df_drho(hi, alpha, p, cfg)?;
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::BracketFailure { lo, hi, f_lo, f_hi });
    }
    while hi - lo >= 1e-3 {
        let mid = 0.5 * (lo + hi);
        if df_drho(mid, alpha, p, cfg)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..100 {
        let g = df_drho(x, alpha, p, cfg)?;
        if g.abs() <= ROOT_TOL {
            return Ok(x);
        }
        if g < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let h = d2f_drho2(x, alpha, p, cfg)?;
        let newton = x - g / h;
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if next == x || hi - lo <= f64::EPSILON * hi {
            return Ok(x);
        }
        x = next;
    }
    Ok(x)
}

/// `c_p`, its derivative in `alpha`, and the conditioned drift `g_p`.
///
/// With `L = alpha/(1-alpha)` and `dF/drho = 0` at the minimizer,
/// `c_p' = [ln(1 + rho*/L^p) - c_p] / (1-alpha)`.
pub fn rate_profile(alpha: f64, p: f64, cfg: &QuadConfig) -> Result<RateProfile> {
    let rho = rho_star(alpha, p, cfg)?;
    let c = f_p(rho, alpha, p, cfg)?;
    let grad = df_drho(rho, alpha, p, cfg)?.abs();
    let l = alpha / (1.0 - alpha);
    let c_prime = ((rho / l.powf(p)).ln_1p() - c) / (1.0 - alpha);
    Ok(RateProfile {
        alpha,
        p,
        rho_star: rho,
        c_p: c,
        c_p_prime: c_prime,
        g_p: drift(alpha, p, c_prime),
        grad_norm_at_star: grad,
    })
}

/// `-alpha + alpha^p e^{c'} / (alpha^p e^{c'} + (1-alpha)^p)`.
pub fn drift(alpha: f64, p: f64, c_prime: f64) -> f64 {
    let log_odds = p * (alpha / (1.0 - alpha)).ln() + c_prime;
    let share = if log_odds >= 0.0 {
        1.0 / (1.0 + (-log_odds).exp())
    } else {
        let e = log_odds.exp();
        e / (1.0 + e)
    };
    share - alpha
}

/// Finite-`t` log-Laplace transform `ln E[exp(-lambda Z_t)]`,
/// `lambda = rho (1-alpha)^p t^p`.
///
/// Terms below `J = max(y, (10 lambda)^{1/p})` are summed exactly (largest
/// index first); the remaining infinite tail is expanded as
/// `sum_k lambda^{2k}/k * sum_{j>=J} j^{-2pk}` and truncated once the next
/// term is below `tail_terms_tol`.
pub fn g_t_discrete(rho: f64, alpha: f64, t: u64, p: f64, tail_terms_tol: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return domain(format!("rho must lie in [0,1), got {rho}"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return domain(format!("alpha must lie in (0,1), got {alpha}"));
    }
    if !(p > 0.5 && p.is_finite()) {
        return domain(format!("p must exceed 1/2, got {p}"));
    }
    let x = ceil_product(alpha, t);
    if x == 0 || x >= t {
        return domain(format!("[t={t}, alpha={alpha}] leaves a bin empty"));
    }
    let y = t - x;
    let lambda = rho * (1.0 - alpha).powf(p) * (t as f64).powf(p);
    gt_from_lambda(x, y, lambda, p, tail_terms_tol)
}

pub(crate) fn gt_from_lambda(x: u64, y: u64, lambda: f64, p: f64, tol: f64) -> Result<f64> {
    if lambda >= (y as f64).powf(p) {
        return domain(format!("tilt {lambda} makes the transform infinite (first rate {y}^p)"));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let l2 = lambda * lambda;
    let j_cut = ((10.0 * lambda).powf(1.0 / p).ceil() as u64).max(y);

    let mut acc = CompensatedSum::new();
    // -ln(1-r) = sum_k r^k/k, and r <= 1/100 beyond j_cut.
    let mut lk = 1.0;
    for k in 1..200u32 {
        lk *= l2;
        let term = lk / k as f64 * power_tail(2.0 * p * k as f64, j_cut);
        acc.add(term);
        if term <= tol {
            break;
        }
    }
    for j in (y..j_cut).rev() {
        let r = l2 * (j as f64).powf(-2.0 * p);
        acc.add(-(-r).ln_1p());
    }
    for j in (x..y).rev() {
        acc.add(-(lambda * (j as f64).powf(-p)).ln_1p());
    }
    Ok(acc.value())
}
