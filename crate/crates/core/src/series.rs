//! Compensated summation and tails of `sum_j j^-beta`.

/// Kahan–Babuška (Neumaier) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

// Terms summed directly before switching to Euler–Maclaurin.
const DIRECT_TERMS: u64 = 32;

/// `sum_{j >= start} j^-beta` for `beta > 1`, `start >= 1`.
///
/// The first few terms are summed directly, the remainder by Euler–Maclaurin
/// with corrections through the seventh derivative.
pub fn power_tail(beta: f64, start: u64) -> f64 {
    debug_assert!(beta > 1.0 && start >= 1);
    let m = start.max(DIRECT_TERMS);
    let mut acc = CompensatedSum::new();
    for j in (start..m).rev() {
        acc.add((j as f64).powf(-beta));
    }
    let mf = m as f64;
    let f = mf.powf(-beta);
    // int_m^inf + f(m)/2 - sum_k B_2k/(2k)! f^(2k-1)(m), k = 1..4
    let integral = mf.powf(1.0 - beta) / (beta - 1.0);
    let d1 = -beta * f / mf;
    let d3 = -beta * (beta + 1.0) * (beta + 2.0) * f / (mf * mf * mf);
    let d5 = -beta * (beta + 1.0) * (beta + 2.0) * (beta + 3.0) * (beta + 4.0) * f / mf.powi(5);
    let d7 = d5 * (beta + 5.0) * (beta + 6.0) / (mf * mf);
    acc.add(integral + 0.5 * f - d1 / 12.0 + d3 / 720.0 - d5 / 30240.0 + d7 / 1_209_600.0);
    acc.value()
}

/// `sum_{j=lo}^{hi} j^-beta` (inclusive), zero when `hi < lo`.
pub fn power_sum(beta: f64, lo: u64, hi: u64) -> f64 {
    if hi < lo {
        return 0.0;
    }
    if hi - lo < 4096 {
        let mut acc = CompensatedSum::new();
        for j in (lo..=hi).rev() {
            acc.add((j as f64).powf(-beta));
        }
        return acc.value();
    }
    power_tail(beta, lo) - power_tail(beta, hi + 1)
}
