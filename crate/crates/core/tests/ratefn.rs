use feedback_urns::oracle::{c_p1, cp_closed_form_p1, dcp_drho_p1, rho_star_p1};
use feedback_urns::ratefn::*;
use feedback_urns::sim::{RngStream, Truncation, ZSampler};

fn cfg() -> QuadConfig {
    QuadConfig::default()
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn vanishing_tilt_limits() {
    let f = f_p(1e-12, 0.3, 1.0, &cfg()).unwrap();
    assert!(f < 0.0 && f > -1e-10, "{f}");
    // dF/drho at 0 is -(1-alpha) int_L^1 u^-p du
    let d = df_drho(1e-12, 0.3, 1.0, &cfg()).unwrap();
    let expect = -(0.7f64) * (-(0.3f64 / 0.7).ln());
    assert!((d - expect).abs() < 1e-9, "{d} {expect}");
    let g = g_t_discrete(1e-12, 0.3, 100, 1.0, 1e-16).unwrap();
    assert!(g < 0.0 && g > -1e-9, "{g}");
}

#[test]
fn closed_form_agreement_at_p1() {
    let c = cfg();
    for &alpha in &grid(0.1, 0.45, 9) {
        for &rho in &grid(0.1, 0.9, 9) {
            let f = f_p(rho, alpha, 1.0, &c).unwrap();
            assert!((f - cp_closed_form_p1(alpha, rho).unwrap()).abs() < 1e-8);
            let d = df_drho(rho, alpha, 1.0, &c).unwrap();
            assert!((d - dcp_drho_p1(alpha, rho).unwrap()).abs() < 1e-8);
        }
        let prof = rate_profile(alpha, 1.0, &c).unwrap();
        assert!((prof.c_p - c_p1(alpha)).abs() < 1e-8);
        assert!((prof.rho_star - rho_star_p1(alpha)).abs() < 1e-8);
    }
}

#[test]
fn first_derivative_matches_finite_difference() {
    let (rho, alpha, p, h) = (0.4, 0.3, 0.9, 1e-5);
    let c = cfg();
    let fd = (f_p(rho + h, alpha, p, &c).unwrap() - f_p(rho - h, alpha, p, &c).unwrap()) / (2.0 * h);
    let d = df_drho(rho, alpha, p, &c).unwrap();
    assert!(((fd - d) / d).abs() < 1e-6, "{fd} {d}");
}

#[test]
fn second_derivative_matches_finite_difference() {
    let (rho, alpha, p, h) = (0.4, 0.3, 1.0, 1e-3);
    let c = cfg();
    let f = |r| f_p(r, alpha, p, &c).unwrap();
    let fd = (f(rho + h) - 2.0 * f(rho) + f(rho - h)) / (h * h);
    let d2 = d2f_drho2(rho, alpha, p, &c).unwrap();
    assert!(((fd - d2) / d2).abs() < 1e-4, "{fd} {d2}");
}

#[test]
fn second_derivative_positive_with_lower_bound() {
    let c = cfg();
    for &p in &[0.6, 1.0, 1.5] {
        for &alpha in &grid(0.05, 0.45, 9) {
            let l = alpha / (1.0 - alpha);
            let lower = feedback_urns::quad::integrate(
                |u: f64| 1.0 / (u.powf(p) + 1.0).powi(2),
                l,
                1.0,
                feedback_urns::quad::Tolerance { abs: 1e-12, rel: 1e-12, max_subdivisions: 200 },
            )
            .unwrap()
            .value
                * (1.0 - alpha);
            for &rho in &grid(0.1, 0.9, 9) {
                let d2 = d2f_drho2(rho, alpha, p, &c).unwrap();
                assert!(d2 > 0.0 && d2 >= lower, "p={p} a={alpha} r={rho}");
            }
        }
    }
}

#[test]
fn minimizer_properties() {
    let c = cfg();
    for &p in &[0.6, 0.75, 1.0, 1.5] {
        let mut prev: Option<RateProfile> = None;
        for &alpha in &grid(0.05, 0.45, 20) {
            let prof = rate_profile(alpha, p, &c).unwrap();
            assert!(prof.grad_norm_at_star <= ROOT_TOL);
            assert!(prof.c_p < 0.0 && prof.c_p_prime > 0.0 && prof.g_p > 0.0);
            assert!(prof.rho_star > 0.0 && prof.rho_star < 1.0);
            let at = |r: f64| f_p(r, alpha, p, &c).unwrap();
            for dr in [-0.05, 0.05] {
                let r = prof.rho_star + dr;
                if r > 0.0 && r < 1.0 {
                    assert!(at(r) >= prof.c_p);
                }
            }
            if let Some(q) = prev {
                assert!(prof.c_p > q.c_p, "c_p not increasing at p={p}, alpha={alpha}");
                assert!(prof.rho_star <= q.rho_star);
            }
            prev = Some(prof);
        }
    }
}

#[test]
fn convex_on_fifty_point_grid() {
    let c = cfg();
    for &(alpha, p) in &[(0.1, 0.6), (0.3, 1.0), (0.45, 1.5)] {
        let rs = grid(0.02, 0.98, 50);
        let fs: Vec<f64> = rs.iter().map(|&r| f_p(r, alpha, p, &c).unwrap()).collect();
        for w in fs.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] > 0.0);
        }
    }
}

#[test]
fn c_prime_matches_finite_difference() {
    let c = cfg();
    for &p in &[0.75, 1.0, 1.5] {
        let h = 1e-3;
        let cm = rate_profile(0.3 - h, p, &c).unwrap().c_p;
        let cp = rate_profile(0.3 + h, p, &c).unwrap().c_p;
        let prof = rate_profile(0.3, p, &c).unwrap();
        assert!(((cp - cm) / (2.0 * h) - prof.c_p_prime).abs() < 2e-4, "p={p}");
    }
    // p = 1: c' = ln((1-alpha)/alpha) and g = 1/2 - alpha.
    let prof = rate_profile(0.3, 1.0, &c).unwrap();
    assert!((prof.c_p_prime - (0.7f64 / 0.3).ln()).abs() < 1e-9);
    assert!((prof.g_p - 0.2).abs() < 1e-9);
}

#[test]
fn rho_star_is_a_root_and_non_increasing() {
    let c = cfg();
    let r30 = rho_star(0.30, 1.0, &c).unwrap();
    let r35 = rho_star(0.35, 1.0, &c).unwrap();
    assert!(df_drho(r30, 0.3, 1.0, &c).unwrap().abs() <= 1e-10);
    assert!(r35 <= r30);
}

#[test]
fn domain_and_bracket_errors() {
    let c = cfg();
    assert!(f_p(1.0, 0.3, 1.0, &c).is_err());
    assert!(f_p(0.5, 0.5, 1.0, &c).is_err());
    assert!(df_drho(0.5, 0.3, 0.5, &c).is_err());
    let bad = QuadConfig { max_subdivisions: 5, ..c };
    assert!(f_p(0.5, 0.3, 1.0, &bad).is_err());
    // A tolerance the rule cannot reach surfaces as non-convergence.
    let tight = QuadConfig { abs_tol: 1e-300, rel_tol: 1e-300, max_subdivisions: 10, ..c };
    assert!(matches!(
        rho_star(0.3, 1.0, &tight),
        Err(feedback_urns::Error::QuadratureNonConvergence { .. })
    ));
}

#[test]
fn finite_t_transform_converges_at_rate_one_over_t() {
    let c = cfg();
    let (alpha, p) = (0.3, 1.0);
    let rho = rho_star(alpha, p, &c).unwrap();
    let f = f_p(rho, alpha, p, &c).unwrap();
    let dev = |t: u64| (g_t_discrete(rho, alpha, t, p, 1e-16).unwrap() / t as f64 - f).abs();
    let d: Vec<f64> = [500, 1000, 2000, 4000].iter().map(|&t| dev(t)).collect();
    for w in d.windows(2) {
        let r = w[1] / w[0];
        assert!((0.3..=0.8).contains(&r), "{d:?}");
    }
    assert!(d[2] <= 0.6 * d[1]);
}

#[test]
fn finite_t_transform_for_sublinear_feedback() {
    // Long-range tail series against a brute-force sum to j = 2e7.
    let (rho, alpha, t, p) = (0.5, 0.3, 200u64, 0.7);
    let g = g_t_discrete(rho, alpha, t, p, 1e-18).unwrap();
    let x = 60u64;
    let y = 140u64;
    let lambda = rho * (1.0f64 - alpha).powf(p) * (t as f64).powf(p);
    let mut brute = 0.0;
    for j in (y..20_000_000u64).rev() {
        brute += -(-(lambda * lambda) * (j as f64).powf(-2.0 * p)).ln_1p();
    }
    // remainder beyond 2e7 from the leading term only
    let rest = lambda * lambda * (2e7f64).powf(1.0 - 2.0 * p) / (2.0 * p - 1.0);
    for j in (x..y).rev() {
        brute += -(lambda * (j as f64).powf(-p)).ln_1p();
    }
    assert!((g - (brute + rest)).abs() < 1e-8, "{g} {}", brute + rest);
}

#[test]
fn finite_t_transform_rejects_infinite_tilt() {
    // lambda >= y^p
    assert!(g_t_discrete(0.99, 0.45, 4, 1.0, 1e-12).is_err());
}

#[test]
fn finite_t_transform_matches_monte_carlo_laplace() {
    // ln E[exp(-lambda Z)] estimated directly from untilted Z samples.
    let (t, alpha, p, rho) = (50u64, 0.4, 1.0, 0.2);
    let g = g_t_discrete(rho, alpha, t, p, 1e-16).unwrap();
    let sampler = ZSampler::new(t, alpha, p, Truncation::Untruncated, 0.0).unwrap();
    let lambda = rho * (1.0 - alpha) * t as f64;
    let n = 1_000_000u64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in 0..n {
        let z = sampler.sample(&mut RngStream::new(17, i)).value;
        let w = (-lambda * z).exp();
        s1 += w;
        s2 += w * w;
    }
    let mean = s1 / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    let truth = g.exp();
    assert!((mean - truth).abs() <= 3.0 * se, "mc {mean} ± {se}, exact {truth}");
}
