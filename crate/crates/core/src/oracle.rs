//! Exact reference computations used to validate the numerical and Monte
//! Carlo machinery: the race-to-level dynamic program, the `p = 1` closed form
//! of the rate function, exhaustive path enumeration and a brute-force check
//! of the unimodality lemma for `b(n) = C(m,n) rho^n a^n (1-rho)^{m-n}`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::model::prob_bin1_unchecked;
use crate::series::CompensatedSum;

/// Largest level accepted by [`DpTable::new`] (the table holds `(R+1)^2` doubles).
pub const DEFAULT_TABLE_MAX_R: u64 = 8192;
/// Largest level accepted by [`dp_race`] (O(R) memory, O(R^2) time).
pub const DEFAULT_RACE_MAX_R: u64 = 50_000;

/// A function on urn states that is harmonic for some conditioning event.
pub trait Harmonic {
    /// Probability of the conditioning event from `(n1, n2)`.
    fn win_prob(&self, n1: u64, n2: u64) -> f64;
}

/// Race-to-`R` win probabilities for bin 1 over all states `1 <= n1, n2 <= R`.
#[derive(Debug, Clone)]
pub struct DpTable {
    r: u64,
    p: f64,
    w: Vec<f64>,
}

impl DpTable {
    pub fn new(r: u64, p: f64) -> Result<Self> {
        Self::with_cap(r, p, DEFAULT_TABLE_MAX_R)
    }

    pub fn with_cap(r: u64, p: f64, cap: u64) -> Result<Self> {
        check_race(r, p)?;
        if r > cap {
            return Err(Error::Budget(format!("DP table level {r} exceeds cap {cap}")));
        }
        let n = (r + 1) as usize;
        let mut w = vec![0.0; n * n];
        for n2 in 1..r as usize {
            w[r as usize * n + n2] = 1.0;
        }
        for n1 in (1..r).rev() {
            let row = n1 as usize * n;
            let next = row + n;
            for n2 in (1..r).rev() {
                let q = prob_bin1_unchecked(n1, n2, p);
                let k = n2 as usize;
                w[row + k] = q * w[next + k] + (1.0 - q) * w[row + k + 1];
            }
        }
        Ok(Self { r, p, w })
    }

    pub fn level(&self) -> u64 {
        self.r
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `W(n1, n2)` for `1 <= n1, n2 <= R`.
    pub fn get(&self, n1: u64, n2: u64) -> f64 {
        debug_assert!(n1 <= self.r && n2 <= self.r);
        self.w[n1 as usize * (self.r as usize + 1) + n2 as usize]
    }

    /// Largest violation of the one-step recurrence over interior states.
    pub fn max_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n1 in 1..self.r {
            for n2 in 1..self.r {
                let q = prob_bin1_unchecked(n1, n2, self.p);
                let rhs = q * self.get(n1 + 1, n2) + (1.0 - q) * self.get(n1, n2 + 1);
                worst = worst.max((self.get(n1, n2) - rhs).abs());
            }
        }
        worst
    }
}

impl Harmonic for DpTable {
    fn win_prob(&self, n1: u64, n2: u64) -> f64 {
        if n1 >= self.r {
            1.0
        } else if n2 >= self.r {
            0.0
        } else {
            self.get(n1, n2)
        }
    }
}

fn check_race(r: u64, p: f64) -> Result<()> {
    if r < 2 {
        return domain(format!("race level must be at least 2, got {r}"));
    }
    if !(p > 0.0 && p.is_finite()) {
        return domain(format!("p must be positive, got {p}"));
    }
    Ok(())
}

/// Probability that bin 1 reaches `r` balls before bin 2, from `(x, y)`.
///
/// Rolls one row of the table at a time; agrees bit-for-bit with [`DpTable`].
pub fn dp_race(x: u64, y: u64, r: u64, p: f64) -> Result<f64> {
    dp_race_with_cap(x, y, r, p, DEFAULT_RACE_MAX_R)
}

pub fn dp_race_with_cap(x: u64, y: u64, r: u64, p: f64, cap: u64) -> Result<f64> {
    check_race(r, p)?;
    if x == 0 || y == 0 || x >= r || y >= r {
        return domain(format!("start ({x}, {y}) must satisfy 1 <= x, y < R = {r}"));
    }
    if r > cap {
        return Err(Error::Budget(format!("DP level {r} exceeds cap {cap}")));
    }
    let n = (r + 1) as usize;
    let mut next = vec![0.0; n];
    for v in next.iter_mut().take(r as usize).skip(1) {
        *v = 1.0;
    }
    let mut row = vec![0.0; n];
    for n1 in (x..r).rev() {
        row[r as usize] = 0.0;
        for n2 in (y..r).rev() {
            let q = prob_bin1_unchecked(n1, n2, p);
            let k = n2 as usize;
            row[k] = q * next[k] + (1.0 - q) * row[k + 1];
        }
        std::mem::swap(&mut row, &mut next);
    }
    Ok(next[y as usize])
}

fn check_p1_args(rho: f64, alpha: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return domain(format!("rho must lie in (0,1), got {rho}"));
    }
    if !(alpha > 0.0 && alpha < 0.5) {
        return domain(format!("alpha must lie in (0,1/2), got {alpha}"));
    }
    Ok(())
}

/// `F_1(rho, alpha)` from elementary antiderivatives:
/// `int ln(1+rho/u) du = u ln(1+rho/u) + rho ln(u+rho)` and
/// `int ln(1-rho^2/u^2) du = u ln(1-rho^2/u^2) + rho ln((u+rho)/(u-rho))`.
pub fn cp_closed_form_p1(alpha: f64, rho: f64) -> Result<f64> {
    check_p1_args(rho, alpha)?;
    let l = alpha / (1.0 - alpha);
    let near = -((1.0 + rho) * rho.ln_1p() - (l * (rho / l).ln_1p() + rho * (l + rho).ln()));
    let far = (-rho * rho).ln_1p() + rho * ((1.0 + rho) / (1.0 - rho)).ln();
    Ok((1.0 - alpha) * (near + far))
}

/// `dF_1/drho = (1-alpha) ln((L+rho)/(1-rho))`.
pub fn dcp_drho_p1(alpha: f64, rho: f64) -> Result<f64> {
    check_p1_args(rho, alpha)?;
    let l = alpha / (1.0 - alpha);
    Ok((1.0 - alpha) * ((l + rho) / (1.0 - rho)).ln())
}

/// `d^2F_1/drho^2 = (1-alpha) (1/(L+rho) + 1/(1-rho))`.
pub fn d2cp_drho2_p1(alpha: f64, rho: f64) -> Result<f64> {
    check_p1_args(rho, alpha)?;
    let l = alpha / (1.0 - alpha);
    Ok((1.0 - alpha) * (1.0 / (l + rho) + 1.0 / (1.0 - rho)))
}

/// Root of [`dcp_drho_p1`]: `(1-2 alpha) / (2 (1-alpha))`.
pub fn rho_star_p1(alpha: f64) -> f64 {
    (1.0 - 2.0 * alpha) / (2.0 * (1.0 - alpha))
}

/// `c_1(alpha) = -ln 2 - alpha ln alpha - (1-alpha) ln(1-alpha)`.
pub fn c_p1(alpha: f64) -> f64 {
    -std::f64::consts::LN_2 - alpha * alpha.ln() - (1.0 - alpha) * (-alpha).ln_1p()
}

/// Exact law of the bin-1 increment over `k` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDistribution {
    /// `prob[j]`: probability that bin 1 gains exactly `j` balls.
    pub prob: Vec<f64>,
    /// Number of distinct paths with increment `j`.
    pub count: Vec<u64>,
}

pub const MAX_ENUMERATION_STEPS: u32 = 20;

/// Sums the probabilities of all `2^k` paths from `(x, y)`.
pub fn enumerate_paths(x: u64, y: u64, p: f64, k: u32) -> Result<PathDistribution> {
    if k > MAX_ENUMERATION_STEPS {
        return Err(Error::Budget(format!(
            "path enumeration limited to {MAX_ENUMERATION_STEPS} steps, got {k}"
        )));
    }
    if x == 0 || y == 0 {
        return domain(format!("start ({x}, {y}) must have both bins non-empty"));
    }
    let mut acc = vec![CompensatedSum::new(); k as usize + 1];
    let mut count = vec![0u64; k as usize + 1];
    for mask in 0u32..(1u32 << k) {
        let (mut n1, mut n2) = (x, y);
        let mut prob = 1.0;
        for step in 0..k {
            let q = prob_bin1_unchecked(n1, n2, p);
            if mask >> step & 1 == 1 {
                prob *= q;
                n1 += 1;
            } else {
                prob *= 1.0 - q;
                n2 += 1;
            }
        }
        let j = (n1 - x) as usize;
        acc[j].add(prob);
        count[j] += 1;
    }
    Ok(PathDistribution { prob: acc.iter().map(|a| a.value()).collect(), count })
}

/// Parameters of the sequence `b(n) = C(m,n) rho^n a^n (1-rho)^{m-n}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaCase {
    pub m: u64,
    pub rho: f64,
    pub a: f64,
}

impl LemmaCase {
    pub fn new(m: u64, rho: f64, a: f64) -> Result<Self> {
        if m < 2 {
            return domain(format!("m must be at least 2, got {m}"));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return domain(format!("rho must lie in (0,1), got {rho}"));
        }
        if !(a > 0.0 && a.is_finite()) {
            return domain(format!("a must be positive, got {a}"));
        }
        Ok(Self { m, rho, a })
    }

    /// Mode location `ceil((rho a m - (1-rho)) / (rho a + 1 - rho))`, floored at 0.
    pub fn n0(&self) -> u64 {
        let (m, r, a) = (self.m as f64, self.rho, self.a);
        let v = (r * a * m - (1.0 - r)) / (r * a + 1.0 - r);
        v.ceil().max(0.0) as u64
    }

    /// All of `b(0..=m)`.
    pub fn values(&self) -> Vec<f64> {
        let lf = log_factorials(self.m);
        let lra = (self.rho * self.a).ln();
        let l1r = (-self.rho).ln_1p();
        let m = self.m as usize;
        (0..=m)
            .map(|n| (lf[m] - lf[n] - lf[m - n] + n as f64 * lra + (m - n) as f64 * l1r).exp())
            .collect()
    }
}

fn log_factorials(m: u64) -> Vec<f64> {
    let mut out = Vec::with_capacity(m as usize + 1);
    let mut acc = CompensatedSum::new();
    out.push(0.0);
    for k in 1..=m {
        acc.add((k as f64).ln());
        out.push(acc.value());
    }
    out
}

/// `b(n)`, evaluated in log space.
pub fn lemma_b(case: &LemmaCase, n: u64) -> Result<f64> {
    if n > case.m {
        return Err(Error::OutOfRange(format!("n={n} exceeds m={}", case.m)));
    }
    Ok(case.values()[n as usize])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub k: f64,
    /// `sum_{|n - n0| > K sqrt(m)} b(n)`.
    pub tail: f64,
    /// `m b(n0) exp(-K^2 / (2 (1 - n0/m)))`; `None` when `n0 = m`.
    pub bound: Option<f64>,
    pub pass: bool,
    /// Same bound with `1 - n0/m` replaced by `max(n0/m, 1 - n0/m)`.
    pub symmetric_bound: f64,
    pub symmetric_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub case: LemmaCase,
    pub n0: u64,
    pub maximizers: Vec<u64>,
    pub unimodal: bool,
    /// First index where the sequence rises again after having fallen.
    pub unimodal_witness: Option<u64>,
    pub argmax_ok: bool,
    pub tails: Vec<TailCheck>,
}

impl LemmaReport {
    pub fn tail_ok(&self) -> bool {
        self.tails.iter().all(|c| c.pass)
    }

    pub fn all_ok(&self) -> bool {
        self.unimodal && self.argmax_ok && self.tail_ok()
    }
}

// Relative slack for equality of b values (ties and rounding).
const LEMMA_RTOL: f64 = 1e-12;

/// Exhaustive check of unimodality, the mode location and the tail bound.
pub fn lemma_verify(case: &LemmaCase, k_grid: &[f64]) -> LemmaReport {
    let b = case.values();
    let m = case.m;
    let n0 = case.n0().min(m);

    let mut falling = false;
    let mut unimodal_witness = None;
    for n in 0..m as usize {
        if b[n + 1] < b[n] * (1.0 - LEMMA_RTOL) {
            falling = true;
        } else if falling && b[n + 1] > b[n] * (1.0 + LEMMA_RTOL) {
            unimodal_witness = Some(n as u64 + 1);
            break;
        }
    }

    let top = b.iter().cloned().fold(0.0, f64::max);
    let maximizers: Vec<u64> = (0..=m).filter(|&n| b[n as usize] >= top * (1.0 - LEMMA_RTOL)).collect();
    let argmax_ok = maximizers.contains(&n0);

    let sqrt_m = (m as f64).sqrt();
    let x = n0 as f64 / m as f64;
    let peak = m as f64 * b[n0 as usize];
    let tails = k_grid
        .iter()
        .map(|&k| {
            let mut acc = CompensatedSum::new();
            for (n, &v) in b.iter().enumerate() {
                if (n as f64 - n0 as f64).abs() > k * sqrt_m {
                    acc.add(v);
                }
            }
            let tail = acc.value();
            let bound = (n0 < m).then(|| peak * (-k * k / (2.0 * (1.0 - x))).exp());
            let symmetric_bound = peak * (-k * k / (2.0 * x.max(1.0 - x))).exp();
            TailCheck {
                k,
                tail,
                bound,
                pass: bound.is_none_or(|bd| tail <= bd * (1.0 + LEMMA_RTOL)),
                symmetric_bound,
                symmetric_pass: tail <= symmetric_bound * (1.0 + LEMMA_RTOL),
            }
        })
        .collect();

    LemmaReport {
        case: *case,
        n0,
        maximizers,
        unimodal: unimodal_witness.is_none(),
        unimodal_witness,
        argmax_ok,
        tails,
    }
}
