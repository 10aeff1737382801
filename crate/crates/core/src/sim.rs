//! Monte Carlo: discrete paths, the embedded variable `Z_t`, direct and
//! exponentially tilted estimators of `P(ELead)`, and samplers of paths
//! conditioned on bin 1 winning the race to a level.
//!
//! Every replica owns an RNG stream keyed by `(seed, replica index)`. Work is
//! split into fixed-size chunks whose partial results are merged in index
//! order, so outputs do not depend on the number of threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::{prob_bin1_unchecked, InitialCondition, PowerFeedback, Trajectory};
use crate::oracle::Harmonic;
use crate::series::{power_sum, power_tail, CompensatedSum};

const CHUNK: usize = 1 << 14;

/// ChaCha8 keyed by `seed` on stream `stream_id`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    #[inline]
    pub fn uniform_pos(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Exponential variate with the given rate, by inversion.
pub fn exp_variate(rate: f64, rng: &mut RngStream) -> Result<f64> {
    if !(rate > 0.0 && rate.is_finite()) {
        return domain(format!("exponential rate must be positive, got {rate}"));
    }
    Ok(-rng.uniform_pos().ln() / rate)
}

/// Runs the discrete process for `n_steps` balls.
pub fn run_discrete(
    init: InitialCondition,
    fb: PowerFeedback,
    n_steps: usize,
    rng: &mut RngStream,
) -> Trajectory {
    let s = init.to_state();
    let (mut n1, mut n2) = (s.n1, s.n2);
    let mut counts = Vec::with_capacity(n_steps + 1);
    counts.push(n1);
    for _ in 0..n_steps {
        if rng.uniform() < prob_bin1_unchecked(n1, n2, fb.p()) {
            n1 += 1;
        } else {
            n2 += 1;
        }
        counts.push(n1);
    }
    Trajectory { init, bin1_counts: counts }
}

/// Where the paired-difference sum stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Truncation {
    /// Keep pairs `j <= R`.
    At(u64),
    /// Keep all pairs.
    Untruncated,
}

impl Truncation {
    pub fn level(&self) -> Option<u64> {
        match self {
            Truncation::At(r) => Some(*r),
            Truncation::Untruncated => None,
        }
    }

    /// `max(10^4, 50 t)`.
    pub fn default_for(t: u64) -> Self {
        Truncation::At((50 * t).max(10_000))
    }
}

/// Upper bound on the variance dropped by truncating at `R`:
/// `sum_{j>R} 2/j^{2p} <= 2 R^{1-2p} / (2p-1)`.
pub fn residual_variance_bound(r: u64, p: f64) -> f64 {
    2.0 * (r as f64).powf(1.0 - 2.0 * p) / (2.0 * p - 1.0)
}

pub const DEFAULT_RESIDUAL_VARIANCE_CEILING: f64 = 1e-2;

// Pairs with index >= this (and with lambda/j^p <= GAUSS_TILT_RATIO) are
// aggregated into one Gaussian with the exact variance.
const GAUSS_MIN_INDEX: u64 = 1024;
const GAUSS_TILT_RATIO: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZSample {
    pub value: f64,
    /// Catch-up time of bin 1: `sum_{j=x}^{y-1} X(1,j)`.
    pub a_part: f64,
    /// Coupled difference `sum_{j>=y} (X(1,j) - X(2,j))`.
    pub delta_part: f64,
    pub truncation_r: Option<u64>,
    pub residual_variance_bound: f64,
}

/// Sampler of `Z = A + Delta` from state `(x, y)`, optionally under the
/// exponential tilt `exp(-lambda Z) / E exp(-lambda Z)`.
///
/// Under the tilt the rates become `j^p + lambda` for `X(1,j)` and
/// `j^p - lambda` for `X(2,j)`. Each pair difference is an asymmetric
/// Laplace variable drawn from a single uniform. Pairs beyond
/// `J0 = max(y, 1024, (lambda/0.02)^{1/p})` contribute a Gaussian with their
/// exact variance `v`, tilted to mean `-lambda v`; the normalizer uses the
/// matching `lambda^2 v / 2` for that block, so the importance weights are
/// exact for the sampled variable.
#[derive(Debug, Clone)]
pub struct ZSampler {
    x: u64,
    y: u64,
    p: f64,
    lambda: f64,
    truncation: Truncation,
    a_rates: Vec<f64>,
    // (P(D > 0), 1/mu1, 1/mu2) per exact pair.
    pairs: Vec<(f64, f64, f64)>,
    gauss_mean: f64,
    gauss_sd: f64,
    log_normalizer: f64,
    residual_variance_bound: f64,
}

impl ZSampler {
    /// From the `[t, alpha]` start with tilt `lambda = rho (1-alpha)^p t^p`.
    pub fn new(t: u64, alpha: f64, p: f64, truncation: Truncation, rho: f64) -> Result<Self> {
        let init = InitialCondition::new(t, alpha)?;
        if !(0.0..1.0).contains(&rho) {
            return domain(format!("tilt rho must lie in [0,1), got {rho}"));
        }
        let s = init.to_state();
        let lambda = rho * (1.0 - alpha).powf(p) * (t as f64).powf(p);
        Self::from_state(s.n1, s.n2, p, lambda, truncation, true)
    }

    /// From an arbitrary state. With `gaussian_tail = false` every pair up to
    /// `R` is sampled individually (requires `Truncation::At`).
    pub fn from_state(
        x: u64,
        y: u64,
        p: f64,
        lambda: f64,
        truncation: Truncation,
        gaussian_tail: bool,
    ) -> Result<Self> {
        if x == 0 || y == 0 {
            return domain(format!("state ({x}, {y}) has an empty bin"));
        }
        if !(p > 0.5 && p.is_finite()) {
            return domain(format!("p must exceed 1/2, got {p}"));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return domain(format!("tilt must be non-negative, got {lambda}"));
        }
        if x > y {
            return domain(format!("state ({x}, {y}): bin 1 must not lead"));
        }
        if lambda >= (y as f64).powf(p) {
            return domain(format!("tilt {lambda} makes the rate of X(2,{y}) non-positive"));
        }
        if let Truncation::At(r) = truncation {
            if r < y {
                return domain(format!("truncation level {r} below first paired index {y}"));
            }
        } else if !gaussian_tail {
            return domain("an untruncated sampler needs the Gaussian tail block");
        }

        let mut log_norm = CompensatedSum::new();
        let a_rates: Vec<f64> = (x..y)
            .map(|j| {
                let f = (j as f64).powf(p);
                log_norm.add(-(lambda / f).ln_1p());
                f + lambda
            })
            .collect();

        let j0 = if gaussian_tail {
            let tilt_cut = (lambda / GAUSS_TILT_RATIO).powf(1.0 / p).ceil() as u64;
            y.max(GAUSS_MIN_INDEX).max(tilt_cut)
        } else {
            u64::MAX
        };
        let exact_end = match truncation {
            Truncation::At(r) => j0.min(r + 1),
            Truncation::Untruncated => j0,
        };
        let pairs: Vec<(f64, f64, f64)> = (y..exact_end)
            .map(|j| {
                let f = (j as f64).powf(p);
                let (mu1, mu2) = (f + lambda, f - lambda);
                log_norm.add(-(-(lambda / f) * (lambda / f)).ln_1p());
                (mu2 / (mu1 + mu2), 1.0 / mu1, 1.0 / mu2)
            })
            .collect();

        let v = match truncation {
            Truncation::At(r) if exact_end > r => 0.0,
            Truncation::At(r) => 2.0 * power_sum(2.0 * p, exact_end, r),
            Truncation::Untruncated => 2.0 * power_tail(2.0 * p, exact_end),
        };
        log_norm.add(0.5 * lambda * lambda * v);

        let residual = match truncation {
            Truncation::At(r) => residual_variance_bound(r, p),
            Truncation::Untruncated => 0.0,
        };
        Ok(Self {
            x,
            y,
            p,
            lambda,
            truncation,
            a_rates,
            pairs,
            gauss_mean: -lambda * v,
            gauss_sd: v.sqrt(),
            log_normalizer: log_norm.value(),
            residual_variance_bound: residual,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `ln E[exp(-lambda Z)]` for the sampled variable.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn residual_variance_bound(&self) -> f64 {
        self.residual_variance_bound
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    pub fn state(&self) -> (u64, u64, f64) {
        (self.x, self.y, self.p)
    }

    pub fn sample(&self, rng: &mut RngStream) -> ZSample {
        let mut a = 0.0;
        for &rate in &self.a_rates {
            a -= rng.uniform_pos().ln() / rate;
        }
        let mut d = 0.0;
        for &(pos, inv1, inv2) in &self.pairs {
            let u = rng.uniform_pos();
            if u <= pos {
                d -= (u / pos).ln() * inv1;
            } else {
                d += ((u - pos) / (1.0 - pos)).ln() * inv2;
            }
        }
        if self.gauss_sd > 0.0 {
            d += self.gauss_mean + self.gauss_sd * rng.normal();
        }
        ZSample {
            value: a + d,
            a_part: a,
            delta_part: d,
            truncation_r: self.truncation.level(),
            residual_variance_bound: self.residual_variance_bound,
        }
    }
}

/// One draw of `Z_t` from `[t, alpha]`, truncated at `R >= 2t`.
pub fn sample_z(t: u64, alpha: f64, p: f64, r: u64, rng: &mut RngStream) -> Result<ZSample> {
    if r < 2 * t {
        return domain(format!("truncation level {r} must be at least 2t = {}", 2 * t));
    }
    let sampler = ZSampler::new(t, alpha, p, Truncation::At(r), 0.0)?;
    check_residual(&sampler)?;
    Ok(sampler.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum McMethod {
    Direct,
    Tilted,
    DpOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub method: McMethod,
    pub estimate: f64,
    pub std_error: f64,
    pub log_estimate: Option<f64>,
    /// Delta-method error of `log_estimate`.
    pub log_std_error: Option<f64>,
    pub n_reps: u64,
    pub truncation_r: Option<u64>,
    pub tilt_rho: Option<f64>,
    pub seed: u64,
    /// Effective sample size of the importance weights on `{Z < 0}`.
    pub ess: Option<f64>,
    pub low_ess: bool,
}

fn check_reps(n_reps: u64) -> Result<()> {
    if n_reps < 1000 {
        return domain(format!("need at least 1000 replicas, got {n_reps}"));
    }
    Ok(())
}

fn chunk_ranges(n: u64) -> Vec<(u64, u64)> {
    (0..n).step_by(CHUNK).map(|s| (s, (s + CHUNK as u64).min(n))).collect()
}

/// Fraction of replicas with `Z < 0`, for the `[t, alpha]` start.
pub fn mc_elead_direct(
    t: u64,
    alpha: f64,
    p: f64,
    n_reps: u64,
    truncation: Truncation,
    seed: u64,
) -> Result<McEstimate> {
    let sampler = ZSampler::new(t, alpha, p, truncation, 0.0)?;
    check_residual(&sampler)?;
    direct_with(&sampler, n_reps, seed)
}

/// Direct estimator from an arbitrary state.
pub fn mc_elead_direct_state(
    x: u64,
    y: u64,
    p: f64,
    n_reps: u64,
    truncation: Truncation,
    seed: u64,
) -> Result<McEstimate> {
    let sampler = ZSampler::from_state(x, y, p, 0.0, truncation, true)?;
    check_residual(&sampler)?;
    direct_with(&sampler, n_reps, seed)
}

fn check_residual(sampler: &ZSampler) -> Result<()> {
    let bound = sampler.residual_variance_bound();
    if bound > DEFAULT_RESIDUAL_VARIANCE_CEILING {
        return Err(Error::Config(format!(
            "residual variance bound {bound:.3e} at R={:?} exceeds {DEFAULT_RESIDUAL_VARIANCE_CEILING:e}",
            sampler.truncation().level()
        )));
    }
    Ok(())
}

/// Direct estimator for a prepared sampler; no check on the truncation level.
pub fn direct_with(sampler: &ZSampler, n_reps: u64, seed: u64) -> Result<McEstimate> {
    check_reps(n_reps)?;
    let hits: u64 = chunk_ranges(n_reps)
        .into_par_iter()
        .map(|(lo, hi)| {
            (lo..hi)
                .filter(|&i| sampler.sample(&mut RngStream::new(seed, i)).value < 0.0)
                .count() as u64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let n = n_reps as f64;
    let est = hits as f64 / n;
    Ok(McEstimate {
        method: McMethod::Direct,
        estimate: est,
        std_error: (est * (1.0 - est) / n).sqrt(),
        log_estimate: None,
        log_std_error: None,
        n_reps,
        truncation_r: sampler.truncation().level(),
        tilt_rho: None,
        seed,
        ess: None,
        low_ess: false,
    })
}

// Running sums of exp(lw - max) and exp(2 (lw - max)) over weighted hits.
#[derive(Debug, Clone, Copy)]
struct LogSum {
    max: f64,
    s1: f64,
    s2: f64,
}

impl LogSum {
    const EMPTY: LogSum = LogSum { max: f64::NEG_INFINITY, s1: 0.0, s2: 0.0 };

    fn push(&mut self, lw: f64) {
        if lw > self.max {
            let r = (self.max - lw).exp();
            self.s1 = self.s1 * r + 1.0;
            self.s2 = self.s2 * r * r + 1.0;
            self.max = lw;
        } else {
            let e = (lw - self.max).exp();
            self.s1 += e;
            self.s2 += e * e;
        }
    }

    fn merge(self, other: LogSum) -> LogSum {
        if other.s1 == 0.0 {
            return self;
        }
        if self.s1 == 0.0 {
            return other;
        }
        let max = self.max.max(other.max);
        let (ra, rb) = ((self.max - max).exp(), (other.max - max).exp());
        LogSum {
            max,
            s1: self.s1 * ra + other.s1 * rb,
            s2: self.s2 * ra * ra + other.s2 * rb * rb,
        }
    }
}

/// Importance-sampling estimate under the tilt with parameter `rho`
/// (use [`crate::ratefn::rho_star`] for the asymptotically optimal choice).
pub fn mc_elead_tilted(
    t: u64,
    alpha: f64,
    p: f64,
    n_reps: u64,
    rho: f64,
    truncation: Truncation,
    seed: u64,
) -> Result<McEstimate> {
    let sampler = ZSampler::new(t, alpha, p, truncation, rho)?;
    let mut est = tilted_with(&sampler, n_reps, seed)?;
    est.tilt_rho = Some(rho);
    Ok(est)
}

pub fn tilted_with(sampler: &ZSampler, n_reps: u64, seed: u64) -> Result<McEstimate> {
    check_reps(n_reps)?;
    let lambda = sampler.lambda();
    let log_norm = sampler.log_normalizer();
    let acc = chunk_ranges(n_reps)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut acc = LogSum::EMPTY;
            for i in lo..hi {
                let z = sampler.sample(&mut RngStream::new(seed, i)).value;
                if z < 0.0 {
                    acc.push(lambda * z + log_norm);
                }
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(LogSum::EMPTY, LogSum::merge);

    let n = n_reps as f64;
    let (estimate, std_error, log_est, log_se, ess) = if acc.s1 == 0.0 {
        (0.0, 0.0, f64::NEG_INFINITY, f64::INFINITY, 0.0)
    } else {
        let mean_scaled = acc.s1 / n;
        let var_scaled = ((acc.s2 - acc.s1 * acc.s1 / n) / (n - 1.0)).max(0.0);
        let rel_se = (var_scaled / n).sqrt() / mean_scaled;
        let log_est = acc.max + mean_scaled.ln();
        let est = log_est.exp();
        (est, est * rel_se, log_est, rel_se, acc.s1 * acc.s1 / acc.s2)
    };
    Ok(McEstimate {
        method: McMethod::Tilted,
        estimate,
        std_error,
        log_estimate: Some(log_est),
        log_std_error: Some(log_se),
        n_reps,
        truncation_r: sampler.truncation().level(),
        tilt_rho: None,
        seed,
        ess: Some(ess),
        low_ess: ess < n / 100.0,
    })
}

/// Bin-1 probability of the chain conditioned through the harmonic `h`.
#[inline]
fn conditioned_q<H: Harmonic>(h: &H, n1: u64, n2: u64, p: f64) -> Result<f64> {
    let q = prob_bin1_unchecked(n1, n2, p);
    let up = q * h.win_prob(n1 + 1, n2);
    let down = (1.0 - q) * h.win_prob(n1, n2 + 1);
    if up + down == 0.0 {
        return Err(Error::NullConditioning { n1, n2 });
    }
    Ok(up / (up + down))
}

/// One-step bin-1 probability of the `h`-transformed chain at `(n1, n2)`.
pub fn htransform_step_prob<H: Harmonic>(h: &H, n1: u64, n2: u64, p: f64) -> Result<f64> {
    if h.win_prob(n1, n2) == 0.0 {
        return Err(Error::NullConditioning { n1, n2 });
    }
    conditioned_q(h, n1, n2, p)
}

/// Paths of the process conditioned on the event whose win probability is `h`
/// (for a [`crate::oracle::DpTable`], bin 1 reaching the table level first).
pub fn conditioned_paths_htransform<H: Harmonic + Sync>(
    init: InitialCondition,
    p: f64,
    horizon_steps: usize,
    h: &H,
    n_paths: u64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let s = init.to_state();
    if h.win_prob(s.n1, s.n2) == 0.0 {
        return Err(Error::NullConditioning { n1: s.n1, n2: s.n2 });
    }
    let chunks: Vec<Result<Vec<Trajectory>>> = chunk_ranges(n_paths)
        .into_par_iter()
        .map(|(lo, hi)| {
            (lo..hi)
                .map(|i| {
                    let mut rng = RngStream::new(seed, i);
                    let (mut n1, mut n2) = (s.n1, s.n2);
                    let mut counts = Vec::with_capacity(horizon_steps + 1);
                    counts.push(n1);
                    for _ in 0..horizon_steps {
                        if rng.uniform() < conditioned_q(h, n1, n2, p)? {
                            n1 += 1;
                        } else {
                            n2 += 1;
                        }
                        counts.push(n1);
                    }
                    Ok(Trajectory { init, bin1_counts: counts })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n_paths as usize);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionOutcome {
    pub paths: Vec<Trajectory>,
    /// Attempts actually simulated (whole chunks).
    pub attempts: u64,
    /// Bin-1 wins among those attempts.
    pub accepted: u64,
}

impl RejectionOutcome {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.attempts as f64
    }

    pub fn acceptance_std_error(&self) -> f64 {
        let r = self.acceptance_rate();
        (r * (1.0 - r) / self.attempts as f64).sqrt()
    }
}

/// Runs unconditioned races to level `r_dp` and keeps the first
/// `n_accept_target` bin-1 wins, ordered by attempt index.
#[allow(clippy::too_many_arguments)]
pub fn conditioned_paths_rejection(
    init: InitialCondition,
    p: f64,
    horizon_steps: usize,
    r_dp: u64,
    n_accept_target: u64,
    max_attempts: u64,
    seed: u64,
) -> Result<RejectionOutcome> {
    let s = init.to_state();
    if s.n1 >= r_dp || s.n2 >= r_dp {
        return domain(format!("start ({}, {}) not below level {r_dp}", s.n1, s.n2));
    }
    let f = PowerFeedback::new(p)?.table(r_dp + horizon_steps as u64 + 1);
    let attempt = |i: u64| -> Option<Vec<u64>> {
        let mut rng = RngStream::new(seed, i);
        let (mut n1, mut n2) = (s.n1, s.n2);
        let mut counts = Vec::with_capacity(horizon_steps + 1);
        counts.push(n1);
        let mut k = 0;
        loop {
            let decided = n1 >= r_dp || n2 >= r_dp;
            if k >= horizon_steps && decided {
                break;
            }
            let (a, b) = (f[n1 as usize], f[n2 as usize]);
            if rng.uniform() * (a + b) < a {
                n1 += 1;
            } else {
                n2 += 1;
            }
            k += 1;
            if k <= horizon_steps {
                counts.push(n1);
            }
        }
        // Winner: the first bin to reach r_dp along the path.
        let won = first_to_level(&counts, s.n1, s.n2, r_dp).unwrap_or(n1 >= r_dp);
        won.then_some(counts)
    };

    let mut paths = Vec::new();
    let mut attempts = 0u64;
    let mut accepted = 0u64;
    let batch = CHUNK as u64 * rayon::current_num_threads().max(1) as u64;
    while (paths.len() as u64) < n_accept_target {
        if attempts >= max_attempts {
            return Err(Error::Budget(format!(
                "{} of {n_accept_target} paths accepted after {attempts} attempts",
                paths.len()
            )));
        }
        let end = (attempts + batch).min(max_attempts);
        let chunk_results: Vec<Vec<Option<Vec<u64>>>> = (attempts..end)
            .step_by(CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|lo| (lo..(lo + CHUNK as u64).min(end)).map(attempt).collect())
            .collect();
        for c in chunk_results.into_iter().flatten().flatten() {
            accepted += 1;
            if (paths.len() as u64) < n_accept_target {
                paths.push(Trajectory { init, bin1_counts: c });
            }
        }
        attempts = end;
    }
    Ok(RejectionOutcome { paths, attempts, accepted })
}

/// Bin-1 win rate of `n_attempts` unconditioned races to level `r_dp`.
/// Uses the same replica streams as [`conditioned_paths_rejection`], so the
/// win indicators agree attempt by attempt.
pub fn race_win_rate(
    init: InitialCondition,
    p: f64,
    r_dp: u64,
    n_attempts: u64,
    seed: u64,
) -> Result<RejectionOutcome> {
    let s = init.to_state();
    if s.n1 >= r_dp || s.n2 >= r_dp {
        return domain(format!("start ({}, {}) not below level {r_dp}", s.n1, s.n2));
    }
    check_reps(n_attempts)?;
    let f = PowerFeedback::new(p)?.table(r_dp + 1);
    let wins: u64 = chunk_ranges(n_attempts)
        .into_par_iter()
        .map(|(lo, hi)| {
            (lo..hi)
                .filter(|&i| {
                    let mut rng = RngStream::new(seed, i);
                    let (mut n1, mut n2) = (s.n1, s.n2);
                    while n1 < r_dp && n2 < r_dp {
                        let (a, b) = (f[n1 as usize], f[n2 as usize]);
                        if rng.uniform() * (a + b) < a {
                            n1 += 1;
                        } else {
                            n2 += 1;
                        }
                    }
                    n1 >= r_dp
                })
                .count() as u64
        })
        .sum();
    Ok(RejectionOutcome { paths: Vec::new(), attempts: n_attempts, accepted: wins })
}

// If the race was decided within the recorded prefix, report the winner.
fn first_to_level(counts: &[u64], x: u64, y: u64, r: u64) -> Option<bool> {
    let t0 = x + y;
    for (k, &n1) in counts.iter().enumerate() {
        let n2 = t0 + k as u64 - n1;
        if n1 >= r {
            return Some(true);
        }
        if n2 >= r {
            return Some(false);
        }
    }
    None
}
