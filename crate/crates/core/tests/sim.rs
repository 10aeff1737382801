use feedback_urns::model::{InitialCondition, PowerFeedback};
use feedback_urns::oracle::{dp_race, enumerate_paths, DpTable, Harmonic};
use feedback_urns::series::power_sum;
use feedback_urns::sim::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn fb(p: f64) -> PowerFeedback {
    PowerFeedback::new(p).unwrap()
}

fn init(t: u64, alpha: f64) -> InitialCondition {
    InitialCondition::new(t, alpha).unwrap()
}

fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

fn within(a: f64, sa: f64, b: f64, sb: f64, k: f64) -> bool {
    (a - b).abs() <= k * (sa * sa + sb * sb).sqrt()
}

#[test]
fn streams_are_reproducible_and_distinct() {
    let mut a = RngStream::new(5, 9);
    let mut b = RngStream::new(5, 9);
    let mut c = RngStream::new(5, 10);
    let va: Vec<f64> = (0..16).map(|_| a.uniform()).collect();
    let vb: Vec<f64> = (0..16).map(|_| b.uniform()).collect();
    let vc: Vec<f64> = (0..16).map(|_| c.uniform()).collect();
    assert_eq!(va, vb);
    assert_ne!(va, vc);
}

#[test]
fn exponential_mean() {
    let mut rng = RngStream::new(1, 0);
    let n = 1_000_000;
    let mean: f64 = (0..n).map(|_| exp_variate(2.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() <= 3.0 * 0.5 / 1e3);
    assert!(exp_variate(0.0, &mut rng).is_err());
}

#[test]
fn exponential_multiplication_property() {
    let n = 100_000;
    let mut r1 = RngStream::new(2, 0);
    let mut r2 = RngStream::new(2, 1);
    let a: Vec<f64> = (0..n).map(|_| 3.0 * exp_variate(6.0, &mut r1).unwrap()).collect();
    let b: Vec<f64> = (0..n).map(|_| exp_variate(2.0, &mut r2).unwrap()).collect();
    let d = ks_two_sample(a, b);
    let crit = (-(0.5e-3f64).ln() / 2.0).sqrt() * (2.0 / n as f64).sqrt();
    assert!(d < crit, "KS {d} >= {crit}");
}

#[test]
fn exponential_minimum_property() {
    let mut rng = RngStream::new(3, 0);
    let n = 1_000_000;
    let wins = (0..n)
        .filter(|_| exp_variate(1.0, &mut rng).unwrap() < exp_variate(3.0, &mut rng).unwrap())
        .count();
    assert!((wins as f64 / n as f64 - 0.25).abs() < 0.005);
}

#[test]
fn discrete_run_basics() {
    let mut rng = RngStream::new(4, 0);
    let tr = run_discrete(init(20, 0.4), fb(1.0), 0, &mut rng);
    assert_eq!(tr.bin1_counts, vec![8]);
    let n = 1_000_000u64;
    let first = (0..n)
        .filter(|&i| run_discrete(init(2, 0.5), fb(1.0), 1, &mut RngStream::new(4, i)).bin1_counts[1] == 2)
        .count();
    assert!((first as f64 / n as f64 - 0.5).abs() < 0.005);
}

#[test]
fn discrete_five_step_law_matches_enumeration() {
    let exact = enumerate_paths(8, 12, 1.0, 5).unwrap();
    let n = 1_000_000u64;
    let mut hist = [0u64; 6];
    for i in 0..n {
        let tr = run_discrete(init(20, 0.4), fb(1.0), 5, &mut RngStream::new(6, i));
        hist[(tr.bin1_counts[5] - 8) as usize] += 1;
    }
    for (j, (&h, &p)) in hist.iter().zip(&exact.prob).enumerate() {
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((h as f64 / n as f64 - p).abs() <= 3.0 * sd + 1e-12, "cell {j}");
    }
}

#[test]
fn z_components_have_the_right_moments() {
    let (t, alpha, p, r) = (20u64, 0.4, 1.0, 10_000u64);
    let sampler = ZSampler::new(t, alpha, p, Truncation::At(r), 0.0).unwrap();
    let n = 1_000_000u64;
    let (mut sd, mut sd2, mut sa, mut sa2) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let z = sampler.sample(&mut RngStream::new(8, i));
        assert!((z.value - z.a_part - z.delta_part).abs() < 1e-12);
        sd += z.delta_part;
        sd2 += z.delta_part * z.delta_part;
        sa += z.a_part;
        sa2 += z.a_part * z.a_part;
    }
    let nf = n as f64;
    let (md, vd) = (sd / nf, sd2 / nf - (sd / nf).powi(2));
    let (ma, va) = (sa / nf, sa2 / nf - (sa / nf).powi(2));
    assert!(md.abs() <= 3.0 * (vd / nf).sqrt());
    let var_exact = 2.0 * power_sum(2.0, 12, r);
    // Var of a sample variance ~ (mu4 - sigma^4)/n; Laplace-like sum, bounded by 6 sigma^4 / n.
    assert!((vd - var_exact).abs() <= 3.0 * (6.0 / nf).sqrt() * var_exact, "{vd} {var_exact}");
    let mean_a: f64 = (8..12).map(|j| 1.0 / j as f64).sum();
    assert!((ma - mean_a).abs() <= 3.0 * (va / nf).sqrt());
}

#[test]
fn sample_z_preconditions() {
    let mut rng = RngStream::new(0, 0);
    assert!(sample_z(20, 0.4, 1.0, 39, &mut rng).is_err());
    let z = sample_z(20, 0.4, 1.0, 10_000, &mut rng).unwrap();
    assert_eq!(z.truncation_r, Some(10_000));
    assert!((z.residual_variance_bound - 2e-4).abs() < 1e-18);
    // p close to 1/2 leaves too much variance beyond R.
    assert!(matches!(sample_z(20, 0.4, 0.6, 10_000, &mut rng), Err(feedback_urns::Error::Config(_))));
}

#[test]
fn gaussian_tail_block_matches_exact_pairs() {
    // Same truncation level, pairs beyond 1024 sampled individually vs aggregated.
    let exact = ZSampler::from_state(8, 12, 1.0, 0.0, Truncation::At(3000), false).unwrap();
    let hybrid = ZSampler::from_state(8, 12, 1.0, 0.0, Truncation::At(3000), true).unwrap();
    let a = direct_with(&exact, 200_000, 21).unwrap();
    let b = direct_with(&hybrid, 200_000, 22).unwrap();
    assert!(within(a.estimate, a.std_error, b.estimate, b.std_error, 3.0), "{a:?} {b:?}");
    // Tilted: exact-pair normalizer and Gaussian normalizer both give unbiased weights.
    let lambda = 0.25 * 0.6 * 20.0;
    let exact = ZSampler::from_state(8, 12, 1.0, lambda, Truncation::At(3000), false).unwrap();
    let hybrid = ZSampler::from_state(8, 12, 1.0, lambda, Truncation::At(3000), true).unwrap();
    assert!((exact.log_normalizer() - hybrid.log_normalizer()).abs() < 1e-7);
    let a = tilted_with(&exact, 100_000, 23).unwrap();
    let b = tilted_with(&hybrid, 100_000, 24).unwrap();
    assert!(within(a.estimate, a.std_error, b.estimate, b.std_error, 3.0), "{a:?} {b:?}");
}

#[test]
fn direct_symmetric_state_is_one_half() {
    let e = mc_elead_direct_state(7, 7, 0.8, 100_000, Truncation::Untruncated, 11).unwrap();
    assert!((e.estimate - 0.5).abs() <= 3.0 * e.std_error);
}

#[test]
fn direct_agrees_with_race_oracle() {
    let e = mc_elead_direct(20, 0.4, 1.0, 200_000, Truncation::default_for(20), 12).unwrap();
    let dp = dp_race(8, 12, 2000, 1.0).unwrap();
    let dp_err = (dp - dp_race(8, 12, 1000, 1.0).unwrap()).abs();
    assert!(within(e.estimate, e.std_error, dp, dp_err, 3.0), "{e:?} {dp}");
}

#[test]
fn direct_is_increasing_in_alpha() {
    let lo = mc_elead_direct(40, 0.35, 1.0, 1_000_000, Truncation::default_for(40), 13).unwrap();
    let hi = mc_elead_direct(40, 0.45, 1.0, 1_000_000, Truncation::default_for(40), 14).unwrap();
    assert!(hi.estimate - lo.estimate > 3.0 * (lo.std_error.powi(2) + hi.std_error.powi(2)).sqrt());
}

#[test]
fn truncation_level_effect() {
    // R = 2t drops sum_{j>40} 2/j^2 ~ 0.05 of a total ~ 0.18 variance: visibly biased.
    // R = 200t drops ~5e-4 and is indistinguishable from the full sum.
    let mk = |tr| ZSampler::new(20, 0.4, 1.0, tr, 0.0).unwrap();
    let short = direct_with(&mk(Truncation::At(40)), 400_000, 15).unwrap();
    let long = direct_with(&mk(Truncation::At(4000)), 400_000, 16).unwrap();
    let full = direct_with(&mk(Truncation::Untruncated), 400_000, 17).unwrap();
    assert!(within(long.estimate, long.std_error, full.estimate, full.std_error, 3.0));
    assert!(!within(short.estimate, short.std_error, full.estimate, full.std_error, 3.0));
}

#[test]
fn tilted_zero_tilt_is_direct() {
    let d = mc_elead_direct(30, 0.4, 1.0, 50_000, Truncation::Untruncated, 3).unwrap();
    let t = mc_elead_tilted(30, 0.4, 1.0, 50_000, 0.0, Truncation::Untruncated, 3).unwrap();
    assert!((d.estimate - t.estimate).abs() < 1e-14);
    assert!((t.ess.unwrap() - (d.estimate * 50_000.0)).abs() < 1e-6);
}

#[test]
fn tilted_is_unbiased() {
    let rho = feedback_urns::ratefn::rho_star(0.4, 1.0, &Default::default()).unwrap();
    let d = mc_elead_direct(30, 0.4, 1.0, 1_000_000, Truncation::Untruncated, 31).unwrap();
    let t = mc_elead_tilted(30, 0.4, 1.0, 1_000_000, rho, Truncation::Untruncated, 32).unwrap();
    assert!(within(d.estimate, d.std_error, t.estimate, t.std_error, 3.0), "{d:?} {t:?}");
    assert!(t.std_error < d.std_error);
    assert!(!t.low_ess);
}

#[test]
fn tilted_rejects_infinite_transform() {
    // lambda = rho (1-alpha) t must stay below y = t - ceil(alpha t)
    assert!(mc_elead_tilted(4, 0.45, 1.0, 1000, 0.99, Truncation::Untruncated, 0).is_err());
}

#[test]
fn estimates_are_reproducible_across_thread_counts() {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            (
                mc_elead_direct(20, 0.4, 1.0, 40_000, Truncation::Untruncated, 77).unwrap(),
                mc_elead_tilted(20, 0.4, 1.0, 40_000, 0.3, Truncation::Untruncated, 77).unwrap(),
            )
        })
    };
    assert_eq!(run(1), run(3));
}

struct Constant;
impl Harmonic for Constant {
    fn win_prob(&self, _: u64, _: u64) -> f64 {
        1.0
    }
}

#[test]
fn constant_harmonic_leaves_the_law_unchanged() {
    let paths = conditioned_paths_htransform(init(20, 0.4), 1.3, 30, &Constant, 200, 5).unwrap();
    for (i, path) in paths.iter().enumerate() {
        let free = run_discrete(init(20, 0.4), fb(1.3), 30, &mut RngStream::new(5, i as u64));
        assert_eq!(path.bin1_counts, free.bin1_counts);
    }
}

#[test]
fn conditioned_step_is_the_bayes_ratio() {
    let table = DpTable::new(500, 1.0).unwrap();
    let got = htransform_step_prob(&table, 8, 12, 1.0).unwrap();
    let w = dp_race(8, 12, 500, 1.0).unwrap();
    let w_up = dp_race(9, 12, 500, 1.0).unwrap();
    // P(next to bin 1 | bin 1 wins) = q W(9,12) / W(8,12)
    assert!((got - 0.4 * w_up / w).abs() < 1e-12);
}

#[test]
fn conditioning_on_a_null_event_fails() {
    struct Zero;
    impl Harmonic for Zero {
        fn win_prob(&self, _: u64, _: u64) -> f64 {
            0.0
        }
    }
    let r = conditioned_paths_htransform(init(20, 0.4), 1.0, 5, &Zero, 10, 0);
    assert!(matches!(r, Err(feedback_urns::Error::NullConditioning { .. })));
}

#[test]
fn rejection_acceptance_rates() {
    let sym = conditioned_paths_rejection(init(20, 0.5), 1.0, 5, 300, 20_000, 1_000_000, 9).unwrap();
    assert!((sym.acceptance_rate() - 0.5).abs() <= 3.0 * sym.acceptance_std_error());
    let out = conditioned_paths_rejection(init(20, 0.4), 1.0, 5, 500, 20_000, 1_000_000, 10).unwrap();
    let dp = dp_race(8, 12, 500, 1.0).unwrap();
    assert!((out.acceptance_rate() - dp).abs() <= 3.0 * out.acceptance_std_error());
    assert_eq!(out.paths.len(), 20_000);
    let err = conditioned_paths_rejection(init(20, 0.4), 1.0, 5, 500, 1_000, 100, 10);
    assert!(matches!(err, Err(feedback_urns::Error::Budget(_))));
}

#[test]
fn rejection_and_htransform_laws_agree() {
    let (r_dp, horizon) = (300u64, 10usize);
    let table = DpTable::new(r_dp, 1.0).unwrap();
    let n = 20_000u64;
    let h = conditioned_paths_htransform(init(20, 0.4), 1.0, horizon, &table, n, 41).unwrap();
    let r = conditioned_paths_rejection(init(20, 0.4), 1.0, horizon, r_dp, n, 10_000_000, 42).unwrap();
    for slice in [3usize, 6, 10] {
        let mut hist = vec![[0f64; 2]; slice + 1];
        for p in &h {
            hist[(p.bin1_counts[slice] - 8) as usize][0] += 1.0;
        }
        for p in &r.paths {
            hist[(p.bin1_counts[slice] - 8) as usize][1] += 1.0;
        }
        let cells: Vec<[f64; 2]> = hist.into_iter().filter(|c| c[0] + c[1] >= 10.0).collect();
        let stat: f64 = cells
            .iter()
            .map(|c| {
                let e = (c[0] + c[1]) / 2.0;
                (c[0] - e).powi(2) / e + (c[1] - e).powi(2) / e
            })
            .sum();
        let crit = ChiSquared::new((cells.len() - 1) as f64).unwrap().inverse_cdf(1.0 - 1e-3);
        assert!(stat < crit, "slice {slice}: {stat} >= {crit}");
    }
}

#[test]
fn race_win_rate_matches_rejection_attempts() {
    let init = InitialCondition::new(20, 0.4).unwrap();
    let rate = race_win_rate(init, 1.0, 200, 1 << 14, 3).unwrap();
    let rej = conditioned_paths_rejection(init, 1.0, 0, 200, 1, 1 << 14, 3).unwrap();
    assert_eq!(rej.attempts, 1 << 14);
    assert_eq!(rate.accepted, rej.accepted);
    assert!((rate.acceptance_rate() - 0.18).abs() < 0.02, "{}", rate.acceptance_rate());
}
