//! Two-bin balls-in-bins process with power-law feedback `f(x) = x^p`.
//!
//! A new ball joins bin `i` with probability `f(n_i) / (f(n_1) + f(n_2))`.
//! States are encoded either directly as ball counts or through the
//! `[t, alpha]` shorthand `(ceil(alpha t), t - ceil(alpha t))`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Feedback law `f(x) = x^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFeedback {
    p: f64,
}

impl PowerFeedback {
    pub fn new(p: f64) -> Result<Self> {
        if !(p.is_finite() && p > 0.0) {
            return domain(format!("feedback exponent must be positive and finite, got {p}"));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// `n^p`, computed as `exp(p ln n)`.
    pub fn evaluate(&self, n: u64) -> f64 {
        debug_assert!(n >= 1);
        (self.p * (n as f64).ln()).exp()
    }

    /// Table of `f(n)` for `n = 0..=n_max` (entry 0 is unused and set to 0).
    pub fn table(&self, n_max: u64) -> Vec<f64> {
        let mut out = Vec::with_capacity(n_max as usize + 1);
        out.push(0.0);
        out.extend((1..=n_max).map(|n| self.evaluate(n)));
        out
    }
}

/// Ball counts of the two bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UrnState {
    pub n1: u64,
    pub n2: u64,
}

impl UrnState {
    pub fn new(n1: u64, n2: u64) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return domain(format!("ball counts must be positive, got ({n1}, {n2})"));
        }
        Ok(Self { n1, n2 })
    }

    pub fn total(&self) -> u64 {
        self.n1 + self.n2
    }
}

/// `ceil(alpha * t)` with a guard against representation error, so that
/// e.g. `0.35 * 20 = 7.000000000000001` rounds to 7 rather than 8.
pub fn ceil_product(alpha: f64, t: u64) -> u64 {
    let v = alpha * t as f64;
    let r = v.round();
    if (v - r).abs() <= 1e-9 * v.abs().max(1.0) {
        r as u64
    } else {
        v.ceil() as u64
    }
}

/// The `[t, alpha]` initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub t: u64,
    pub alpha: f64,
}

impl InitialCondition {
    pub fn new(t: u64, alpha: f64) -> Result<Self> {
        if t < 2 {
            return domain(format!("need at least two initial balls, got t={t}"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return domain(format!("alpha must lie in (0,1), got {alpha}"));
        }
        let init = Self { t, alpha };
        let x = init.bin1();
        if x == 0 || x >= t {
            return domain(format!("[t={t}, alpha={alpha}] leaves a bin empty"));
        }
        Ok(init)
    }

    pub fn bin1(&self) -> u64 {
        ceil_product(self.alpha, self.t)
    }

    pub fn to_state(&self) -> UrnState {
        let x = self.bin1();
        UrnState { n1: x, n2: self.t - x }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// One bin receives all but finitely many balls.
    Monopoly,
    /// Some bin leads from some time on, but both keep receiving balls.
    EventualLeadership,
    /// Leadership changes infinitely often.
    AlmostBalanced,
}

/// Classification of `f(x) = x^p`.
///
/// Monopoly iff `sum 1/f(n)` converges (p > 1); eventual leadership iff
/// additionally `sum 1/f(n)^2` converges (p > 1/2); otherwise almost balanced.
pub fn classify_regime(fb: PowerFeedback) -> Regime {
    let p = fb.p();
    if p > 1.0 {
        Regime::Monopoly
    } else if p > 0.5 {
        Regime::EventualLeadership
    } else {
        Regime::AlmostBalanced
    }
}

/// Probability that the next ball goes to bin 1.
pub fn transition_prob_bin1(state: UrnState, fb: PowerFeedback) -> Result<f64> {
    if state.n1 == 0 || state.n2 == 0 {
        return domain(format!(
            "transition probability needs positive counts, got ({}, {})",
            state.n1, state.n2
        ));
    }
    Ok(prob_bin1_unchecked(state.n1, state.n2, fb.p()))
}

#[inline]
pub(crate) fn prob_bin1_unchecked(n1: u64, n2: u64, p: f64) -> f64 {
    if n1 >= n2 {
        let r = (p * (n2 as f64 / n1 as f64).ln()).exp();
        1.0 / (1.0 + r)
    } else {
        let r = (p * (n1 as f64 / n2 as f64).ln()).exp();
        r / (1.0 + r)
    }
}

/// A sample path of the bin-1 count, one entry per added ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub init: InitialCondition,
    pub bin1_counts: Vec<u64>,
}

impl Trajectory {
    pub fn new(init: InitialCondition, bin1_counts: Vec<u64>) -> Result<Self> {
        match bin1_counts.first() {
            Some(&c) if c == init.bin1() => {}
            _ => return domain("trajectory must start at ceil(alpha t)"),
        }
        if bin1_counts.windows(2).any(|w| w[1] < w[0] || w[1] - w[0] > 1) {
            return domain("consecutive bin-1 counts must differ by 0 or 1");
        }
        Ok(Self { init, bin1_counts })
    }

    pub fn steps(&self) -> usize {
        self.bin1_counts.len() - 1
    }

    /// State after `k` added balls.
    pub fn state_at(&self, k: usize) -> Option<UrnState> {
        let n1 = *self.bin1_counts.get(k)?;
        Some(UrnState { n1, n2: self.init.t + k as u64 - n1 })
    }

    /// Fraction of balls in bin 1 after `ceil(s t)` added balls.
    pub fn fraction_at(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0 && s.is_finite()) {
            return domain(format!("time must be non-negative, got {s}"));
        }
        let k = ceil_product(s, self.init.t) as usize;
        self.fraction_at_step(k)
    }

    pub fn fraction_at_step(&self, k: usize) -> Result<f64> {
        let n1 = self.bin1_counts.get(k).ok_or_else(|| {
            Error::OutOfRange(format!("step {k} beyond recorded {} steps", self.steps()))
        })?;
        Ok(*n1 as f64 / (self.init.t + k as u64) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fb(p: f64) -> PowerFeedback {
        PowerFeedback::new(p).unwrap()
    }

    #[test]
    fn symmetric_and_polya_values() {
        let s = UrnState::new(5, 5).unwrap();
        assert_eq!(transition_prob_bin1(s, fb(2.0)).unwrap(), 0.5);
        let s = UrnState::new(1, 2).unwrap();
        assert!((transition_prob_bin1(s, fb(1.0)).unwrap() - 1.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn matches_extended_precision_reference() {
        // 3^0.8 / (3^0.8 + 7^0.8), evaluated with mpmath at 40 digits.
        let reference = 0.336_743_944_893_472_6_f64;
        let got = transition_prob_bin1(UrnState::new(3, 7).unwrap(), fb(0.8)).unwrap();
        assert!((got - reference).abs() < 1e-15, "{got}");
    }

    #[test]
    fn empty_bin_is_rejected() {
        assert!(UrnState::new(0, 3).is_err());
        let bad = UrnState { n1: 0, n2: 3 };
        assert!(matches!(transition_prob_bin1(bad, fb(1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn regime_examples_and_boundaries() {
        assert_eq!(classify_regime(fb(2.0)), Regime::Monopoly);
        assert_eq!(classify_regime(fb(0.75)), Regime::EventualLeadership);
        assert_eq!(classify_regime(fb(0.5)), Regime::AlmostBalanced);
        assert_eq!(classify_regime(fb(1.0)), Regime::EventualLeadership);
        for k in 1..=50 {
            let p = k as f64 / 100.0;
            assert_eq!(classify_regime(fb(p)), Regime::AlmostBalanced);
            assert_eq!(classify_regime(fb(0.5 + p)), Regime::EventualLeadership);
            assert_eq!(classify_regime(fb(1.0 + p * 10.0)), Regime::Monopoly);
        }
    }

    #[test]
    fn ceil_absorbs_representation_error() {
        assert_eq!(ceil_product(0.35, 20), 7);
        assert_eq!(ceil_product(0.3, 1000), 300);
        assert_eq!(ceil_product(0.4, 25), 10);
        assert_eq!(ceil_product(0.41, 10), 5);
        assert_eq!(InitialCondition::new(10, 0.4).unwrap().to_state(), UrnState { n1: 4, n2: 6 });
    }

    #[test]
    fn fraction_examples() {
        let init = InitialCondition::new(10, 0.4).unwrap();
        let traj = Trajectory::new(init, (4..=14).collect()).unwrap();
        assert_eq!(traj.fraction_at(0.0).unwrap(), 0.4);
        assert_eq!(traj.fraction_at(1.0).unwrap(), 0.7);
        assert!(matches!(traj.fraction_at(1.2), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn fraction_matches_recount() {
        let init = InitialCondition::new(100, 0.3).unwrap();
        // Deterministic pattern: a ball to bin 1 on every third step.
        let mut counts = vec![30u64];
        let mut added = Vec::new();
        for k in 0..80 {
            let to1 = k % 3 == 0;
            added.push(to1);
            counts.push(counts.last().unwrap() + to1 as u64);
        }
        let traj = Trajectory::new(init, counts).unwrap();
        let recount = 30 + added[..50].iter().filter(|&&b| b).count();
        assert_eq!(traj.fraction_at(0.5).unwrap(), recount as f64 / 150.0);
    }

    #[test]
    fn malformed_trajectory_rejected() {
        let init = InitialCondition::new(10, 0.4).unwrap();
        assert!(Trajectory::new(init, vec![4, 6]).is_err());
        assert!(Trajectory::new(init, vec![5, 6]).is_err());
    }

    proptest! {
        #[test]
        fn exchange_symmetry(n1 in 1u64..100_000, n2 in 1u64..100_000, p in 0.05f64..4.0) {
            let f = fb(p);
            let a = transition_prob_bin1(UrnState { n1, n2 }, f).unwrap();
            let b = transition_prob_bin1(UrnState { n1: n2, n2: n1 }, f).unwrap();
            prop_assert!((a + b - 1.0).abs() <= 1e-15);
            prop_assert!(a > 0.0 && a < 1.0);
        }

        #[test]
        fn increasing_in_bin1(n1 in 1u64..10_000, n2 in 1u64..10_000, p in 0.05f64..4.0) {
            let f = fb(p);
            let a = transition_prob_bin1(UrnState { n1, n2 }, f).unwrap();
            let b = transition_prob_bin1(UrnState { n1: n1 + 1, n2 }, f).unwrap();
            prop_assert!(b > a);
        }

        #[test]
        fn fraction_at_zero_is_initial(t in 2u64..5000, alpha in 0.01f64..0.99) {
            if let Ok(init) = InitialCondition::new(t, alpha) {
                let traj = Trajectory::new(init, vec![init.bin1()]).unwrap();
                prop_assert_eq!(traj.fraction_at(0.0).unwrap(), init.bin1() as f64 / t as f64);
            }
        }
    }
}
