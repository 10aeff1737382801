//! Experiment pipelines. Each one fills a [`ResultRecord`]; verdicts are then
//! recomputed from the record alone by [`judge`], so they can be checked
//! against a data file after the fact.

use anyhow::{Context, Result};
use feedback_urns::model::{classify_regime, InitialCondition, PowerFeedback};
use feedback_urns::ode::{eval_a, solve_a_with, DriftTable, OdeSolution};
use feedback_urns::oracle::{
    c_p1, dp_race, lemma_verify, rho_star_p1, DpTable, LemmaCase,
};
use feedback_urns::ratefn::{f_p, g_t_discrete, rate_profile, rho_star};
use feedback_urns::sim::{
    conditioned_paths_htransform, mc_elead_direct, mc_elead_tilted, race_win_rate, run_discrete,
    RngStream, Truncation,
};
use rayon::prelude::*;
use serde_json::Value;

use crate::config::{ConfigError, Experiment, ExperimentConfig};
use crate::record::{Cell, ResultRecord, Verdict};

/// Gradient target at the minimizer.
pub const GRAD_TOL: f64 = 1e-10;
/// Agreement with the p=1 closed forms.
pub const ORACLE_TOL: f64 = 1e-8;
pub const SIGMAS: f64 = 3.0;
/// Required change of the race probability when the level doubles.
pub const DP_STABILITY_TOL: f64 = 1e-4;
pub const SLOPE_MAX: f64 = -0.2;
pub const COVERAGE_MIN: f64 = 0.99;
/// Constant in the one-block drift slack `Q (sqrt(eta) + 1/(eta t))`.
pub const DRIFT_Q: f64 = 0.5;
/// Target level for the trajectory horizon: `A(K) <= 1/2 - TRAJECTORY_MARGIN`.
pub const TRAJECTORY_MARGIN: f64 = 0.02;
pub const LEMMA_K: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
pub const LEMMA_A: [f64; 3] = [0.5, 1.0, 2.0];
const LAPLACE_TAIL_TOL: f64 = 1e-16;

fn stream_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn single_alpha(cfg: &ExperimentConfig) -> Result<f64, ConfigError> {
    match cfg.alpha.as_slice() {
        [a] => Ok(*a),
        _ => Err(ConfigError::Value {
            key: "alpha".into(),
            msg: format!("{} takes a single value", cfg.experiment.name()),
        }),
    }
}

fn need(ok: bool, key: &str, msg: impl Into<String>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Value { key: key.into(), msg: msg.into() })
    }
}

/// Checks the preconditions of `cfg.experiment` before anything runs.
pub fn validate(cfg: &ExperimentConfig) -> Result<(), ConfigError> {
    let in_open_half = |a: &f64| *a > 0.0 && *a < 0.5;
    let t_increasing = cfg.t.windows(2).all(|w| w[0] < w[1]);
    match cfg.experiment {
        Experiment::RateTable => {
            need(cfg.p > 0.5, "p", "must exceed 1/2")?;
            need(cfg.alpha.iter().all(in_open_half), "alpha", "grid must lie in (0, 1/2)")
        }
        Experiment::RateConvergence => {
            need(cfg.p > 0.5, "p", "must exceed 1/2")?;
            need(in_open_half(&single_alpha(cfg)?), "alpha", "must lie in (0, 1/2)")?;
            need(!cfg.t.is_empty() && t_increasing, "t", "grid must be non-empty and increasing")?;
            need(cfg.n_reps >= 1000, "reps", "need at least 1000")
        }
        Experiment::LaplaceCheck => {
            need(cfg.p > 0.5, "p", "must exceed 1/2")?;
            need(in_open_half(&single_alpha(cfg)?), "alpha", "must lie in (0, 1/2)")?;
            need(t_increasing, "t", "grid must be increasing")?;
            need(cfg.t.iter().all(|&t| t >= 2), "t", "must be at least 2")
        }
        Experiment::OdeSolve => {
            need(cfg.p > 0.5, "p", "must exceed 1/2")?;
            need(in_open_half(&single_alpha(cfg)?), "alpha", "must lie in (0, 1/2)")?;
            need(cfg.s_max >= 0.0 && cfg.s_max.is_finite(), "s-max", "must be non-negative")?;
            need(cfg.step > 0.0 && cfg.step <= 0.1, "step", "must lie in (0, 0.1]")?;
            need(cfg.stop_margin > 0.0 && cfg.stop_margin < 0.25, "stop-margin", "must lie in (0, 1/4)")
        }
        Experiment::TrajectoryVsOde => {
            need(cfg.p > 0.5, "p", "must exceed 1/2")?;
            let a = single_alpha(cfg)?;
            need(a > 0.0 && a < 0.5 - TRAJECTORY_MARGIN, "alpha", "must lie in (0, 0.48)")?;
            need(!cfg.t.is_empty() && t_increasing, "t", "grid must be non-empty and increasing")?;
            need(cfg.paths >= 2, "paths", "need at least 2")?;
            need(cfg.drift_t >= 8, "drift-t", "must be at least 8")?;
            need(
                cfg.dp_r <= feedback_urns::oracle::DEFAULT_TABLE_MAX_R,
                "dp-R",
                format!("table level is capped at {}", feedback_urns::oracle::DEFAULT_TABLE_MAX_R),
            )?;
            if let Some(k) = cfg.k {
                need(k > 0.0 && k.is_finite(), "K", "must be positive")?;
            }
            Ok(())
        }
        Experiment::OracleCrosscheck => {
            need(cfg.p > 0.5, "p", "must exceed 1/2")?;
            need(cfg.alpha.iter().all(|a| *a > 0.0 && *a <= 0.5), "alpha", "must lie in (0, 1/2]")?;
            need(cfg.t.iter().all(|&t| (2..=60).contains(&t)), "t", "must lie in [2, 60]")?;
            need(cfg.n_reps >= 1000, "reps", "need at least 1000")?;
            need(cfg.dp_r >= 4, "dp-R", "must be at least 4")
        }
        Experiment::LemmaSweep => need(cfg.m_max >= 2, "m-max", "must be at least 2"),
        Experiment::Simulate => {
            need(cfg.p > 0.0, "p", "must be positive")?;
            need(cfg.alpha.len() == 1 && cfg.t.len() == 1, "t", "simulate takes a single t and alpha")?;
            need(cfg.n_reps >= 1, "reps", "need at least one path")
        }
    }
}

/// Runs the configured experiment and attaches its verdicts.
pub fn run(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let mut rec = match cfg.experiment {
        Experiment::RateTable => rate_table(cfg),
        Experiment::RateConvergence => rate_convergence(cfg),
        Experiment::LaplaceCheck => laplace_check(cfg),
        Experiment::OdeSolve => ode_solve(cfg),
        Experiment::TrajectoryVsOde => trajectory_vs_ode(cfg),
        Experiment::OracleCrosscheck => oracle_crosscheck(cfg),
        Experiment::LemmaSweep => lemma_sweep(cfg),
        Experiment::Simulate => simulate(cfg),
    }?;
    rec.verdicts = judge(&rec);
    Ok(rec)
}

/// Verdicts recomputed from a record's rows, summary and parameter echo.
pub fn judge(rec: &ResultRecord) -> Vec<Verdict> {
    match rec.experiment.as_str() {
        "rate-table" => judge_rate_table(rec),
        "rate-convergence" => judge_rate_convergence(rec),
        "laplace-check" => judge_laplace(rec),
        "ode-solve" => judge_ode(rec),
        "trajectory-vs-ode" => judge_trajectory(rec),
        "oracle-crosscheck" => judge_crosscheck(rec),
        "lemma-sweep" => judge_lemma(rec),
        _ => Vec::new(),
    }
}

fn record(cfg: &ExperimentConfig, columns: &[&str]) -> ResultRecord {
    ResultRecord::new(cfg.experiment.name(), cfg.echo(), columns)
}

fn summary(rec: &mut ResultRecord, key: &str, v: impl Into<Value>) {
    rec.summary.insert(key.into(), v.into());
}

fn real(v: f64) -> Value {
    serde_json::Number::from_f64(v).map(Value::Number).unwrap_or(Value::Null)
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", ")
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------- rate-table

const RATE_TABLE_COLUMNS: [&str; 9] = [
    "alpha", "rho_star", "c_p", "c_p_prime", "g_p", "grad_norm", "oracle_c_p", "oracle_rho_star",
    "status",
];

fn rate_table(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let mut rec = record(cfg, &RATE_TABLE_COLUMNS);
    let p1 = cfg.p == 1.0;
    let rows: Vec<Vec<Cell>> = cfg
        .alpha
        .par_iter()
        .map(|&a| {
            let (oc, orho) = if p1 { (c_p1(a), rho_star_p1(a)) } else { (f64::NAN, f64::NAN) };
            match rate_profile(a, cfg.p, &cfg.quad) {
                Ok(r) => vec![
                    a.into(),
                    r.rho_star.into(),
                    r.c_p.into(),
                    r.c_p_prime.into(),
                    r.g_p.into(),
                    r.grad_norm_at_star.into(),
                    oc.into(),
                    orho.into(),
                    "ok".into(),
                ],
                Err(e) => {
                    let mut row = vec![Cell::Real(a)];
                    row.extend(std::iter::repeat_n(Cell::Real(f64::NAN), 5));
                    row.extend([oc.into(), orho.into(), format!("error: {e}").into()]);
                    row
                }
            }
        })
        .collect();
    for r in rows {
        rec.push_row(r);
    }
    summary(&mut rec, "regime", format!("{:?}", classify_regime(PowerFeedback::new(cfg.p)?)));
    Ok(rec)
}

fn judge_rate_table(rec: &ResultRecord) -> Vec<Verdict> {
    let status = rec.texts("status");
    let ok: Vec<usize> = (0..status.len()).filter(|&i| status[i] == "ok").collect();
    let pick = |c: &str| -> Vec<f64> {
        let v = rec.reals(c);
        ok.iter().map(|&i| v[i]).collect()
    };
    let (rho, c, cp, g, grad) =
        (pick("rho_star"), pick("c_p"), pick("c_p_prime"), pick("g_p"), pick("grad_norm"));
    let mut out = vec![
        Verdict::new(
            "rows_evaluated",
            ok.len() == status.len(),
            format!("{} of {} rows ok", ok.len(), status.len()),
        ),
        Verdict::new(
            "c_p_increasing",
            c.windows(2).all(|w| w[1] > w[0]),
            format!("c_p = [{}]", fmt_list(&c)),
        ),
        Verdict::new(
            "rho_star_non_increasing",
            rho.windows(2).all(|w| w[1] <= w[0]),
            format!("rho* = [{}]", fmt_list(&rho)),
        ),
        Verdict::new("g_p_positive", g.iter().all(|v| *v > 0.0), format!("g_p = [{}]", fmt_list(&g))),
        Verdict::new("c_p_negative", c.iter().all(|v| *v < 0.0), "c_p < 0 at every row"),
        Verdict::new("c_p_prime_positive", cp.iter().all(|v| *v > 0.0), "c_p' > 0 at every row"),
        Verdict::new(
            "gradient_at_minimizer",
            grad.iter().all(|v| *v <= GRAD_TOL),
            format!("max |dF/drho| = {:.3e}", grad.iter().cloned().fold(0.0, f64::max)),
        ),
    ];
    let (oc, orho) = (pick("oracle_c_p"), pick("oracle_rho_star"));
    if oc.iter().any(|v| v.is_finite()) {
        let dc = c.iter().zip(&oc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let dr = rho.iter().zip(&orho).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        out.push(Verdict::new(
            "closed_form_agreement",
            dc <= ORACLE_TOL && dr <= ORACLE_TOL,
            format!("max |c_p - oracle| = {dc:.3e}, max |rho* - oracle| = {dr:.3e}"),
        ));
    }
    out
}

// ---------------------------------------------------------- rate-convergence

const CONVERGENCE_COLUMNS: [&str; 14] = [
    "t", "x", "y", "estimate", "std_error", "log_estimate", "log_std_error", "log_over_t", "c_p",
    "deviation", "ess", "low_ess", "dp_estimate", "dp_gap",
];

fn truncation_or(cfg: &ExperimentConfig, fallback: Truncation) -> Truncation {
    cfg.truncation_r.map(Truncation::At).unwrap_or(fallback)
}

fn rate_convergence(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let alpha = cfg.alpha[0];
    let prof = rate_profile(alpha, cfg.p, &cfg.quad)?;
    let mut rec = record(cfg, &CONVERGENCE_COLUMNS);
    for &t in &cfg.t {
        let init = InitialCondition::new(t, alpha)?;
        let s = init.to_state();
        let est = mc_elead_tilted(
            t,
            alpha,
            cfg.p,
            cfg.n_reps,
            prof.rho_star,
            truncation_or(cfg, Truncation::Untruncated),
            stream_seed(cfg.seed, t),
        )
        .with_context(|| format!("tilted estimate at t={t}"))?;
        let log_est = est.log_estimate.unwrap_or(f64::NAN);
        let (dp, gap) = if t <= 60 {
            let w = dp_race(s.n1, s.n2, cfg.dp_r, cfg.p)?;
            let half = dp_race(s.n1, s.n2, cfg.dp_r / 2, cfg.p)?;
            (w, (w - half).abs())
        } else {
            (f64::NAN, f64::NAN)
        };
        rec.push_row(vec![
            t.into(),
            s.n1.into(),
            s.n2.into(),
            est.estimate.into(),
            est.std_error.into(),
            log_est.into(),
            est.log_std_error.unwrap_or(f64::NAN).into(),
            (log_est / t as f64).into(),
            prof.c_p.into(),
            (log_est / t as f64 - prof.c_p).abs().into(),
            est.ess.unwrap_or(f64::NAN).into(),
            est.low_ess.into(),
            dp.into(),
            gap.into(),
        ]);
    }
    summary(&mut rec, "rho_star", real(prof.rho_star));
    summary(&mut rec, "c_p", real(prof.c_p));
    if rec.rows.len() >= 2 {
        let slope = log_log_slope(&rec.reals("t"), &rec.reals("deviation"));
        summary(&mut rec, "fitted_slope", real(slope));
    }
    Ok(rec)
}

fn judge_rate_convergence(rec: &ResultRecord) -> Vec<Verdict> {
    let t = rec.reals("t");
    let lt = rec.reals("log_over_t");
    let dev = rec.reals("deviation");
    let mut out = vec![
        Verdict::new("log_rate_negative", lt.iter().all(|v| *v < 0.0), format!("ln P/t = [{}]", fmt_list(&lt))),
        Verdict::new(
            "log_rate_increasing",
            lt.windows(2).all(|w| w[1] > w[0]),
            "ln P/t increases with t",
        ),
        Verdict::new(
            "effective_sample_size",
            rec.flags("low_ess").iter().all(|f| !f),
            "no point flagged for weight collapse",
        ),
    ];
    if dev.len() >= 2 {
        let (first, last) = (dev[0], dev[dev.len() - 1]);
        out.push(Verdict::new(
            "deviation_shrinks",
            last < first,
            format!("d(t_first) = {first:.4e}, d(t_last) = {last:.4e}"),
        ));
        let slope = log_log_slope(&t, &dev);
        out.push(Verdict::new(
            "deviation_decay_exponent",
            slope <= SLOPE_MAX,
            format!("fitted exponent {slope:.3} (need <= {SLOPE_MAX})"),
        ));
    }
    let (est, se, dp, gap) =
        (rec.reals("estimate"), rec.reals("std_error"), rec.reals("dp_estimate"), rec.reals("dp_gap"));
    for i in (0..t.len()).filter(|&i| dp[i].is_finite()) {
        let sigma = (se[i] * se[i] + gap[i] * gap[i]).sqrt();
        let diff = (est[i] - dp[i]).abs();
        out.push(Verdict::new(
            &format!("dp_agreement_t{}", t[i]),
            diff <= SIGMAS * sigma,
            format!("|tilted - dp| = {diff:.3e}, 3 sigma = {:.3e}", SIGMAS * sigma),
        ));
    }
    out
}

// ------------------------------------------------------------- laplace-check

const LAPLACE_COLUMNS: [&str; 7] =
    ["rho_label", "rho", "t", "g_t", "f_p", "deviation", "scaled_deviation"];

fn laplace_check(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let alpha = cfg.alpha[0];
    let star = rho_star(alpha, cfg.p, &cfg.quad)?;
    let mut rec = record(cfg, &LAPLACE_COLUMNS);
    for r in &cfg.rho {
        let (label, rho) = match r {
            None => ("star".to_string(), star),
            Some(v) => (format!("rho={v}"), *v),
        };
        let f = f_p(rho, alpha, cfg.p, &cfg.quad)?;
        let rows: Vec<Result<Vec<Cell>>> = cfg
            .t
            .par_iter()
            .map(|&t| {
                let g = g_t_discrete(rho, alpha, t, cfg.p, LAPLACE_TAIL_TOL)?;
                let d = (g / t as f64 - f).abs();
                Ok(vec![
                    label.as_str().into(),
                    rho.into(),
                    t.into(),
                    g.into(),
                    f.into(),
                    d.into(),
                    (d * t as f64).into(),
                ])
            })
            .collect();
        for row in rows {
            rec.push_row(row?);
        }
    }
    summary(&mut rec, "rho_star", real(star));
    Ok(rec)
}

fn judge_laplace(rec: &ResultRecord) -> Vec<Verdict> {
    let labels = rec.texts("rho_label");
    let t = rec.reals("t");
    let d = rec.reals("deviation");
    let sd = rec.reals("scaled_deviation");
    let mut seen: Vec<&str> = Vec::new();
    for l in &labels {
        if !seen.contains(&l.as_str()) {
            seen.push(l);
        }
    }
    let mut out = Vec::new();
    for l in seen {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == l).collect();
        if idx.len() < 2 {
            continue;
        }
        // d is O(1/t): doubling t must cut it to at most 0.6 of its value.
        let ratios: Vec<f64> = idx.windows(2).map(|w| d[w[1]] / d[w[0]]).collect();
        let limits: Vec<f64> = idx.windows(2).map(|w| 1.2 * t[w[0]] / t[w[1]]).collect();
        out.push(Verdict::new(
            &format!("decay_{l}"),
            ratios.iter().zip(&limits).all(|(r, m)| r <= m),
            format!("successive ratios [{}]", fmt_list(&ratios)),
        ));
        let scaled: Vec<f64> = idx.iter().map(|&i| sd[i]).collect();
        let (lo, hi) = scaled
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        out.push(Verdict::new(
            &format!("bounded_{l}"),
            hi.is_finite() && hi <= 2.0 * lo,
            format!("t*d in [{lo:.4e}, {hi:.4e}]"),
        ));
    }
    out
}

// ----------------------------------------------------------------- ode-solve

const ODE_COLUMNS: [&str; 3] = ["s", "A", "g"];

/// Convergence order of RK4 from end values at steps `h`, `h/2`, `h/4`.
pub fn rk4_order(table: &DriftTable, alpha0: f64, s_end: f64, stop_margin: f64) -> Result<f64> {
    let h = s_end / 10.0;
    let end = |h: f64| -> Result<f64> {
        let sol = solve_a_with(table, alpha0, s_end, h, stop_margin)?;
        Ok(sol.nodes.last().map(|n| n.1).unwrap_or(alpha0))
    };
    let (a, b, c) = (end(h)?, end(h / 2.0)?, end(h / 4.0)?);
    Ok(((a - b) / (b - c)).abs().log2())
}

/// `|A(s1 + s2) - A_{A(s1)}(s2)|` at the step `h`, with `A(s1)` taken from
/// the dense output.
pub fn flow_residual(
    table: &DriftTable,
    alpha0: f64,
    s1: f64,
    s2: f64,
    h: f64,
    stop_margin: f64,
) -> Result<f64> {
    let whole = solve_a_with(table, alpha0, s1 + s2 + h, h, stop_margin)?;
    anyhow::ensure!(whole.s_end >= s1 + s2, "profile stopped at {} before {}", whole.s_end, s1 + s2);
    let mid = eval_a(&whole, s1)?;
    let rest = solve_a_with(table, mid, s2, h, stop_margin)?;
    let a = eval_a(&whole, s1 + rest.s_end)?;
    Ok((a - rest.nodes.last().map(|n| n.1).unwrap_or(mid)).abs())
}

fn ode_solve(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let alpha0 = cfg.alpha[0];
    let table = DriftTable::for_solve(alpha0, cfg.p, cfg.stop_margin, &cfg.quad)?;
    let sol = solve_a_with(&table, alpha0, cfg.s_max, cfg.step, cfg.stop_margin)?;
    let mut rec = record(cfg, &ODE_COLUMNS);
    for (&(s, a), g) in sol.nodes.iter().zip(&sol.slopes) {
        rec.push_row(vec![s.into(), a.into(), (*g).into()]);
    }
    summary(&mut rec, "terminated_at_half", sol.terminated_at_half);
    summary(&mut rec, "s_end", real(sol.s_end));
    let horizon = sol.s_end.min(1.0);
    if horizon > 4.0 * cfg.step {
        let order = rk4_order(&table, alpha0, horizon, cfg.stop_margin)?;
        // Split away from the step grid so the dense output is exercised.
        let span = horizon - 2.0 * cfg.step;
        let split = 0.37 * span;
        let flow = flow_residual(&table, alpha0, split, span - split, cfg.step, cfg.stop_margin)?;
        summary(&mut rec, "order_horizon", real(horizon));
        summary(&mut rec, "rk4_order", real(order));
        summary(&mut rec, "flow_residual", real(flow));
    }
    Ok(rec)
}

fn judge_ode(rec: &ResultRecord) -> Vec<Verdict> {
    let a = rec.reals("A");
    let mut out = vec![
        Verdict::new("monotone", a.windows(2).all(|w| w[1] > w[0]), "A strictly increasing"),
        Verdict::new("below_half", a.iter().all(|v| *v < 0.5), "A < 1/2 at every node"),
    ];
    if let Some(order) = rec.summary_f64("rk4_order") {
        out.push(Verdict::new(
            "rk4_order",
            (3.5..=4.5).contains(&order),
            format!("empirical order {order:.3}"),
        ));
    }
    if let Some(flow) = rec.summary_f64("flow_residual") {
        out.push(Verdict::new("flow_property", flow <= 1e-9, format!("residual {flow:.3e}")));
    }
    out
}

// --------------------------------------------------------- trajectory-vs-ode

const TRAJECTORY_COLUMNS: [&str; 12] = [
    "t",
    "horizon_steps",
    "initial_deviation",
    "mean_sup_deviation",
    "mean_sup_deviation_log_time",
    "path_q50",
    "path_q90",
    "path_q99",
    "path_max",
    "scaled_q99",
    "w_bound",
    "coverage",
];

/// Largest `s` with `A(s) <= level`, or the end of the solution.
fn horizon_for_level(sol: &OdeSolution, level: f64) -> Result<f64> {
    let Some(i) = sol.nodes.iter().position(|n| n.1 > level) else {
        return Ok(sol.s_end);
    };
    if i == 0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (sol.nodes[i - 1].0, sol.nodes[i].0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if eval_a(sol, mid)? <= level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let k = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[k - 1]
}

struct PathStats {
    mean_dev: f64,
    mean_dev_log_time: f64,
    sup_devs: Vec<f64>,
}

fn path_stats(
    paths: &[feedback_urns::model::Trajectory],
    sol: &OdeSolution,
    t: u64,
    steps: usize,
) -> Result<PathStats> {
    let n = paths.len() as f64;
    let mut target = Vec::with_capacity(steps + 1);
    let mut target_log = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let s = (k as f64 / t as f64).min(sol.s_end);
        target.push(eval_a(sol, s)?);
        target_log.push(eval_a(sol, s.ln_1p())?);
    }
    let mut mean = vec![0.0; steps + 1];
    let mut sup_devs = Vec::with_capacity(paths.len());
    for path in paths {
        let mut sup: f64 = 0.0;
        for k in 0..=steps {
            let f = path.fraction_at_step(k)?;
            mean[k] += f;
            sup = sup.max((f - target[k]).abs());
        }
        sup_devs.push(sup);
    }
    let mut mean_dev: f64 = 0.0;
    let mut mean_dev_log_time: f64 = 0.0;
    for k in 0..=steps {
        let m = mean[k] / n;
        mean_dev = mean_dev.max((m - target[k]).abs());
        mean_dev_log_time = mean_dev_log_time.max((m - target_log[k]).abs());
    }
    Ok(PathStats { mean_dev, mean_dev_log_time, sup_devs })
}

fn trajectory_vs_ode(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let alpha = cfg.alpha[0];
    let level = 0.5 - TRAJECTORY_MARGIN;
    let table = DriftTable::for_solve(alpha, cfg.p, cfg.stop_margin, &cfg.quad)?;
    let k_horizon = match cfg.k {
        Some(k) => k,
        None => {
            let probe = solve_a_with(&table, alpha, 50.0, cfg.step, TRAJECTORY_MARGIN)?;
            horizon_for_level(&probe, level)?
        }
    };
    // The mean path is also compared at ln(1+s), which needs A out to ln(1+K).
    let sol = solve_a_with(&table, alpha, k_horizon, cfg.step, cfg.stop_margin)?;
    let t_max = *cfg.t.last().expect("validated non-empty");
    let max_steps = (k_horizon * t_max as f64).floor() as u64;
    anyhow::ensure!(
        cfg.dp_r > t_max + max_steps + 1 && cfg.dp_r > cfg.drift_t + 64,
        "dp-R = {} too small for {} balls",
        cfg.dp_r,
        t_max + max_steps
    );
    let dp = DpTable::new(cfg.dp_r, cfg.p)?;

    let mut rec = record(cfg, &TRAJECTORY_COLUMNS);
    let mut per_t = Vec::new();
    for &t in &cfg.t {
        let init = InitialCondition::new(t, alpha)?;
        let steps = (k_horizon * t as f64).floor() as usize;
        let paths =
            conditioned_paths_htransform(init, cfg.p, steps, &dp, cfg.paths, stream_seed(cfg.seed, t))?;
        let mut stats = path_stats(&paths, &sol, t, steps)?;
        stats.sup_devs.sort_by(f64::total_cmp);
        let initial = (init.bin1() as f64 / t as f64 - alpha).abs();
        per_t.push((t, steps, initial, stats));
    }
    // W from the smaller sizes, coverage checked at every size.
    let fit: Vec<&(u64, usize, f64, PathStats)> =
        if per_t.len() > 1 { per_t[..per_t.len() - 1].iter().collect() } else { per_t.iter().collect() };
    let w = fit
        .iter()
        .map(|(t, _, _, s)| quantile(&s.sup_devs, 0.99) * (*t as f64).cbrt())
        .fold(0.0, f64::max);
    for (t, steps, initial, s) in &per_t {
        let bound = w / (*t as f64).cbrt();
        let covered = s.sup_devs.partition_point(|d| *d <= bound) as f64 / s.sup_devs.len() as f64;
        let q99 = quantile(&s.sup_devs, 0.99);
        rec.push_row(vec![
            (*t).into(),
            (*steps as u64).into(),
            (*initial).into(),
            s.mean_dev.into(),
            s.mean_dev_log_time.into(),
            quantile(&s.sup_devs, 0.5).into(),
            quantile(&s.sup_devs, 0.9).into(),
            q99.into(),
            s.sup_devs[s.sup_devs.len() - 1].into(),
            (q99 * (*t as f64).cbrt()).into(),
            bound.into(),
            covered.into(),
        ]);
    }
    summary(&mut rec, "K", real(k_horizon));
    summary(&mut rec, "A_at_K", real(eval_a(&sol, sol.s_end)?));
    summary(&mut rec, "W", real(w));

    // One block of m = ceil(t^{1/3}) steps from [drift_t, alpha].
    let t0 = cfg.drift_t;
    let init = InitialCondition::new(t0, alpha)?;
    let m = (t0 as f64).cbrt().ceil() as usize;
    let eta = m as f64 / t0 as f64;
    let a0 = init.bin1() as f64 / t0 as f64;
    let g = rate_profile(a0, cfg.p, &cfg.quad)?.g_p;
    let paths =
        conditioned_paths_htransform(init, cfg.p, m, &dp, cfg.paths, stream_seed(cfg.seed, 1 << 32))?;
    let incs: Vec<f64> = paths
        .iter()
        .map(|p| Ok((p.fraction_at_step(m)? - a0) / eta))
        .collect::<Result<_>>()?;
    let n = incs.len() as f64;
    let mean = incs.iter().sum::<f64>() / n;
    let var = incs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    summary(&mut rec, "drift_t", t0);
    summary(&mut rec, "drift_block", m as u64);
    summary(&mut rec, "drift_eta", real(eta));
    summary(&mut rec, "drift_mean", real(mean));
    summary(&mut rec, "drift_std_error", real((var / n).sqrt()));
    summary(&mut rec, "drift_target", real(g));
    summary(&mut rec, "drift_slack", real(DRIFT_Q * (eta.sqrt() + 1.0 / (eta * t0 as f64))));
    Ok(rec)
}

fn judge_trajectory(rec: &ResultRecord) -> Vec<Verdict> {
    let t = rec.reals("t");
    let dev = rec.reals("mean_sup_deviation");
    let init = rec.reals("initial_deviation");
    let cov = rec.reals("coverage");
    let mut out = vec![
        Verdict::new(
            "mean_deviation_decreasing",
            dev.windows(2).all(|w| w[1] < w[0]),
            format!("sup deviation of the mean path [{}]", fmt_list(&dev)),
        ),
        Verdict::new(
            "initial_rounding",
            init.iter().zip(&t).all(|(d, t)| *d <= 1.0 / t),
            "deviation at s=0 at most 1/t",
        ),
    ];
    if let Some(c) = cov.last() {
        out.push(Verdict::new(
            "w_bound_coverage",
            *c >= COVERAGE_MIN,
            format!(
                "W = {:.4}, coverage {c:.4} at t = {}",
                rec.summary_f64("W").unwrap_or(f64::NAN),
                t.last().copied().unwrap_or(f64::NAN)
            ),
        ));
    }
    let get = |k| rec.summary_f64(k).unwrap_or(f64::NAN);
    let (mean, se, target, slack) =
        (get("drift_mean"), get("drift_std_error"), get("drift_target"), get("drift_slack"));
    let diff = (mean - target).abs();
    out.push(Verdict::new(
        "one_block_drift",
        diff <= SIGMAS * se + slack,
        format!("mean {mean:.4} vs g_p {target:.4}: diff {diff:.4}, 3 sigma + slack {:.4}", SIGMAS * se + slack),
    ));
    out
}

// --------------------------------------------------------- oracle-crosscheck

const CROSSCHECK_COLUMNS: [&str; 7] = ["t", "alpha", "method", "estimate", "std_error", "samples", "note"];

/// Estimators compared pairwise.
pub const CROSSCHECK_METHODS: [&str; 4] = ["direct", "tilted", "dp_race", "rejection"];

fn oracle_crosscheck(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let mut rec = record(cfg, &CROSSCHECK_COLUMNS);
    let trunc = Truncation::At(cfg.truncation_r.unwrap_or(100_000));
    for (k, &t) in cfg.t.iter().enumerate() {
        for (j, &alpha) in cfg.alpha.iter().enumerate() {
            let init = InitialCondition::new(t, alpha)?;
            let s = init.to_state();
            let seed = stream_seed(cfg.seed, ((k as u64) << 16) + j as u64);
            let direct = mc_elead_direct(t, alpha, cfg.p, cfg.n_reps, trunc, seed)?;
            let rho = if alpha < 0.5 { rho_star(alpha, cfg.p, &cfg.quad)? } else { 0.0 };
            let tilted = mc_elead_tilted(
                t,
                alpha,
                cfg.p,
                cfg.n_reps,
                rho,
                Truncation::Untruncated,
                stream_seed(seed, 1),
            )?;
            let w = dp_race(s.n1, s.n2, cfg.dp_r, cfg.p)?;
            let w_half = dp_race(s.n1, s.n2, cfg.dp_r / 2, cfg.p)?;
            let gap = (w - w_half).abs();
            let rej = race_win_rate(init, cfg.p, cfg.dp_r, cfg.n_reps, stream_seed(seed, 2))?;
            let rows: [(&str, f64, f64, u64, String); 5] = [
                ("direct", direct.estimate, direct.std_error, cfg.n_reps, format!("R={}", trunc.level().unwrap_or(0))),
                ("tilted", tilted.estimate, tilted.std_error, cfg.n_reps, format!("rho={rho:.6}")),
                ("dp_race", w, gap, 0, format!("R={}; error bar is the level-halving gap", cfg.dp_r)),
                ("dp_race_half", w_half, 0.0, 0, format!("R={}", cfg.dp_r / 2)),
                (
                    "rejection",
                    rej.acceptance_rate(),
                    rej.acceptance_std_error(),
                    rej.attempts,
                    format!("R={}", cfg.dp_r),
                ),
            ];
            for (m, e, se, n, note) in rows {
                rec.push_row(vec![
                    t.into(),
                    alpha.into(),
                    m.into(),
                    e.into(),
                    se.into(),
                    n.into(),
                    note.into(),
                ]);
            }
        }
    }
    Ok(rec)
}

fn judge_crosscheck(rec: &ResultRecord) -> Vec<Verdict> {
    let t = rec.reals("t");
    let a = rec.reals("alpha");
    let m = rec.texts("method");
    let e = rec.reals("estimate");
    let se = rec.reals("std_error");
    let mut points: Vec<(f64, f64)> = Vec::new();
    for i in 0..t.len() {
        if !points.contains(&(t[i], a[i])) {
            points.push((t[i], a[i]));
        }
    }
    let mut out = Vec::new();
    for (pt, pa) in points {
        let find = |name: &str| {
            (0..t.len()).find(|&i| t[i] == pt && a[i] == pa && m[i] == name).map(|i| (e[i], se[i]))
        };
        let tag = format!("t={pt} alpha={pa}");
        for (i, x) in CROSSCHECK_METHODS.iter().enumerate() {
            for y in &CROSSCHECK_METHODS[i + 1..] {
                let (Some((ex, sx)), Some((ey, sy))) = (find(x), find(y)) else { continue };
                let sigma = (sx * sx + sy * sy).sqrt();
                let diff = (ex - ey).abs();
                out.push(Verdict::new(
                    &format!("{tag}: {x} ~ {y}"),
                    diff <= SIGMAS * sigma,
                    format!("|diff| = {diff:.3e}, 3 sigma = {:.3e}", SIGMAS * sigma),
                ));
            }
        }
        if let (Some((w, _)), Some((wh, _))) = (find("dp_race"), find("dp_race_half")) {
            let gap = (w - wh).abs();
            out.push(Verdict::new(
                &format!("{tag}: dp_race level-stable"),
                gap <= DP_STABILITY_TOL,
                format!("|W(R) - W(R/2)| = {gap:.3e} (need <= {DP_STABILITY_TOL:e})"),
            ));
        }
    }
    out
}

// --------------------------------------------------------------- lemma-sweep

const LEMMA_COLUMNS: [&str; 9] = [
    "m", "rho", "a", "n0", "unimodal", "argmax_ok", "tail_failures", "symmetric_tail_failures",
    "witness",
];

fn lemma_sweep(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let mut cases = Vec::new();
    for m in 2..=cfg.m_max {
        for r in 1..=9 {
            for a in LEMMA_A {
                cases.push(LemmaCase::new(m, r as f64 / 10.0, a)?);
            }
        }
    }
    let rows: Vec<Vec<Cell>> = cases
        .par_iter()
        .map(|c| {
            let rep = lemma_verify(c, &LEMMA_K);
            let fails = rep.tails.iter().filter(|k| !k.pass).count() as u64;
            let sym_fails = rep.tails.iter().filter(|k| !k.symmetric_pass).count() as u64;
            let witness = rep
                .tails
                .iter()
                .find(|k| !k.pass)
                .map(|k| format!("K={} tail={:.6e} bound={:.6e}", k.k, k.tail, k.bound.unwrap_or(f64::NAN)))
                .or_else(|| rep.unimodal_witness.map(|n| format!("unimodality breaks at n={n}")))
                .unwrap_or_default();
            vec![
                c.m.into(),
                c.rho.into(),
                c.a.into(),
                rep.n0.into(),
                rep.unimodal.into(),
                rep.argmax_ok.into(),
                fails.into(),
                sym_fails.into(),
                witness.into(),
            ]
        })
        .collect();
    let mut rec = record(cfg, &LEMMA_COLUMNS);
    for r in rows {
        rec.push_row(r);
    }
    let sym: f64 = rec.reals("symmetric_tail_failures").iter().sum();
    let n = rec.rows.len() as u64;
    summary(&mut rec, "cases", n);
    summary(&mut rec, "tail_checks", n * LEMMA_K.len() as u64);
    summary(&mut rec, "symmetric_tail_failures", sym as u64);
    Ok(rec)
}

fn judge_lemma(rec: &ResultRecord) -> Vec<Verdict> {
    let n = rec.rows.len();
    let uni = rec.flags("unimodal").iter().filter(|f| !**f).count();
    let arg = rec.flags("argmax_ok").iter().filter(|f| !**f).count();
    let tail: f64 = rec.reals("tail_failures").iter().sum();
    let witness = rec
        .texts("witness")
        .iter()
        .zip(rec.reals("m").iter().zip(rec.reals("rho").iter().zip(rec.reals("a"))))
        .find(|(w, _)| w.starts_with("K="))
        .map(|(w, (m, (r, a)))| format!("; first witness m={m} rho={r} a={a} {w}"))
        .unwrap_or_default();
    vec![
        Verdict::new("unimodal", uni == 0, format!("{uni} of {n} cases not unimodal")),
        Verdict::new("argmax_is_n0", arg == 0, format!("{arg} of {n} cases with argmax != n0")),
        Verdict::new(
            "tail_bound",
            tail == 0.0,
            format!("{tail} of {} tail checks exceed the bound{witness}", n * LEMMA_K.len()),
        ),
    ]
}

// ------------------------------------------------------------------ simulate

const SIMULATE_COLUMNS: [&str; 5] = ["step", "s", "mean_fraction", "sd_fraction", "bin1_ahead"];
const SIM_CHUNK: u64 = 1024;

fn simulate(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    let init = InitialCondition::new(cfg.t[0], cfg.alpha[0])?;
    let fb = PowerFeedback::new(cfg.p)?;
    let steps = cfg.steps as usize;
    let chunks: Vec<(u64, u64)> = (0..cfg.n_reps)
        .step_by(SIM_CHUNK as usize)
        .map(|lo| (lo, (lo + SIM_CHUNK).min(cfg.n_reps)))
        .collect();
    // Per chunk: sum of fractions, sum of squares, count ahead; merged in chunk order.
    let parts: Vec<Vec<(f64, f64, u64)>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = vec![(0.0, 0.0, 0u64); steps + 1];
            for i in lo..hi {
                let mut rng = RngStream::new(cfg.seed, i);
                let path = run_discrete(init, fb, steps, &mut rng);
                for (k, slot) in acc.iter_mut().enumerate() {
                    let st = path.state_at(k).expect("recorded step");
                    let f = st.n1 as f64 / st.total() as f64;
                    slot.0 += f;
                    slot.1 += f * f;
                    slot.2 += u64::from(st.n1 > st.n2);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![(0.0, 0.0, 0u64); steps + 1];
    for part in parts {
        for (t, p) in total.iter_mut().zip(part) {
            t.0 += p.0;
            t.1 += p.1;
            t.2 += p.2;
        }
    }
    let n = cfg.n_reps as f64;
    let mut rec = record(cfg, &SIMULATE_COLUMNS);
    for (k, (s1, s2, ahead)) in total.into_iter().enumerate() {
        let mean = s1 / n;
        let var = if cfg.n_reps > 1 { ((s2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        rec.push_row(vec![
            (k as u64).into(),
            (k as f64 / init.t as f64).into(),
            mean.into(),
            var.sqrt().into(),
            (ahead as f64 / n).into(),
        ]);
    }
    summary(&mut rec, "regime", format!("{:?}", classify_regime(fb)));
    summary(&mut rec, "initial_state", vec![init.to_state().n1, init.to_state().n2]);
    Ok(rec)
}
