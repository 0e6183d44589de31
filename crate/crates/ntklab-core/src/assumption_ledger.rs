//! The thirteen parameter conditions.
//!
//! Each inequality is transcribed verbatim and evaluated in log space
//! wherever powers and factorials appear, so tuples with astronomically
//! large width never overflow (plausibly feasible tuples need m beyond
//! 2^70, which is why the counts here are u128 and independent of what a
//! desk can actually allocate). A direct-arithmetic evaluator covers the
//! same inequalities and is cross-checked against the log-space route on
//! non-overflowing tuples.
//!
//! Margins are the signed normalized gap in [-1, 1]: positive iff the
//! condition holds, -1 for hopeless, +1 for vacuous. A floor-zero sample
//! count in condition (xiii) makes the summand infinite; that is reported
//! as a failure with a -inf margin sentinel (serialized as null).

use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

pub const CONDITION_KEYS: [&str; 13] = [
    "i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x", "xi", "xii", "xiii",
];

/// Parameters of one feasibility query. Pure arithmetic: nothing here
/// allocates a network, so the counts may exceed any memory bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamTuple {
    pub n: u128,
    pub m: u128,
    pub d: u128,
    pub epsilon: f64,
    pub delta: f64,
    pub lambda_epsilon: f64,
    /// Derivative depth; auto-selected from condition (viii) when absent.
    #[serde(default)]
    pub u: Option<usize>,
    /// The absolute constant of condition (ii); the source never pins its
    /// numeric value, so it is configuration, surfaced in every report.
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_c() -> f64 {
    1.0
}

impl ParamTuple {
    pub fn t_epsilon(&self) -> f64 {
        2.0 / self.lambda_epsilon * (2.0 / self.epsilon).ln()
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("counts must be positive".into()));
        }
        if self.m % 2 != 0 {
            return Err(Error::InvalidConfig("width m must be even".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta {} outside (0,1)", self.delta)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 2.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon {} outside (0, 2]",
                self.epsilon
            )));
        }
        let cap = 1.0 / (4.0 * self.d as f64);
        if !(self.lambda_epsilon > 0.0 && self.lambda_epsilon <= cap + 1e-15) {
            return Err(Error::InvalidEigenvalue(self.lambda_epsilon));
        }
        if !(self.c > 0.0) {
            return Err(Error::InvalidConfig("constant C must be positive".into()));
        }
        Ok(())
    }
}

/// One condition's verdict with its normalized margin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionResult {
    pub key: String,
    pub holds: bool,
    pub margin: f64,
}

/// Verdicts for all thirteen conditions plus the derived quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub conditions: Vec<ConditionResult>,
    /// Smallest depth satisfying (viii), when one exists below the cap.
    pub chosen_u: Option<usize>,
    /// Depth actually used to evaluate (viii)-(xiii).
    pub u_evaluated: usize,
    pub all_hold: bool,
    pub lambda_epsilon: f64,
    pub t_epsilon: f64,
    pub c: f64,
}

impl AssumptionReport {
    pub fn holds(&self, key: &str) -> bool {
        self.conditions.iter().find(|c| c.key == key).map(|c| c.holds).unwrap_or(false)
    }

    pub fn margin(&self, key: &str) -> f64 {
        self.conditions
            .iter()
            .find(|c| c.key == key)
            .map(|c| c.margin)
            .unwrap_or(f64::NAN)
    }
}

/// Normalized margin for "lhs <= rhs" over nonnegative sides held in log
/// space: bounded in [-1, 1], positive iff the condition holds.
fn margin_le_log(ln_lhs: f64, ln_rhs: f64) -> f64 {
    if ln_lhs == f64::NEG_INFINITY && ln_rhs == f64::NEG_INFINITY {
        return 0.0;
    }
    if ln_lhs <= ln_rhs {
        1.0 - (ln_lhs - ln_rhs).exp()
    } else {
        (ln_rhs - ln_lhs).exp() - 1.0
    }
}

/// Normalized margin for sides that may be negative but never overflow.
fn margin_linear(favorable: f64, unfavorable: f64) -> f64 {
    let scale = favorable.abs().max(unfavorable.abs());
    if scale == 0.0 {
        return 0.0;
    }
    (favorable - unfavorable) / scale
}

/// log of sum_{u=lo..=hi} exp(u ln x - ln u!), sum of positive terms.
fn ln_sum_powers(ln_x: f64, lo: usize, hi: usize) -> f64 {
    if lo > hi || ln_x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let terms: Vec<f64> =
        (lo..=hi).map(|u| u as f64 * ln_x - ln_gamma(u as f64 + 1.0)).collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    // Compensated accumulation of the shifted exponentials.
    let mut sum = 0.0;
    let mut comp = 0.0;
    for t in &terms {
        let v = (t - max).exp();
        let y = v - comp;
        let s = sum + y;
        comp = (s - sum) - y;
        sum = s;
    }
    max + sum.ln()
}

struct Scales {
    n: f64,
    m: f64,
    d: f64,
    eps: f64,
    delta: f64,
    lam: f64,
    c: f64,
    t: f64,
}

impl Scales {
    fn of(p: &ParamTuple) -> Self {
        Scales {
            n: p.n as f64,
            m: p.m as f64,
            d: p.d as f64,
            eps: p.epsilon,
            delta: p.delta,
            lam: p.lambda_epsilon,
            c: p.c,
            t: p.t_epsilon(),
        }
    }
}

/// Condition (viii) in log space at a given depth.
fn ln_viii(s: &Scales, u: usize) -> f64 {
    if s.t == 0.0 {
        return f64::NEG_INFINITY;
    }
    u as f64 * (8.0 * s.t / s.d).ln() - ln_gamma(u as f64 + 1.0)
}

/// Smallest depth <= u_max satisfying condition (viii).
pub fn auto_select_u(p: &ParamTuple, u_max: usize) -> Result<Option<usize>> {
    p.validate()?;
    if u_max > 64 {
        return Err(Error::InvalidConfig(format!("U_max {u_max} exceeds 64")));
    }
    let s = Scales::of(p);
    let ln_budget = (s.eps / 14.0).ln();
    Ok((1..=u_max).find(|u| ln_viii(&s, *u) <= ln_budget))
}

/// Depth used when (viii) is infeasible below the cap: the depth that gets
/// closest, so the reported margins are as favorable as the cap allows.
fn fallback_u(s: &Scales, u_max: usize) -> usize {
    (1..=u_max)
        .min_by(|a, b| ln_viii(s, *a).partial_cmp(&ln_viii(s, *b)).expect("finite"))
        .unwrap_or(1)
}

/// Evaluate all thirteen conditions (log-space route).
pub fn check(p: &ParamTuple) -> Result<AssumptionReport> {
    p.validate()?;
    let s = Scales::of(p);
    let chosen = match p.u {
        Some(u) => {
            if u == 0 {
                return Err(Error::InvalidConfig("U must be positive".into()));
            }
            Some(u)
        }
        None => auto_select_u(p, 64)?,
    };
    let u_eval = chosen.unwrap_or_else(|| fallback_u(&s, 64));
    let ln_budget_delta = (s.delta / 6.0).ln();
    let ln_budget_eps = (s.eps / 14.0).ln();

    let mut out = Vec::with_capacity(13);
    let mut push = |key: &str, holds: bool, margin: f64| {
        out.push(ConditionResult { key: key.to_string(), holds, margin });
    };

    // (i)  m e^{-d/16} <= delta/6
    let ln_lhs = s.m.ln() - s.d / 16.0;
    push("i", ln_lhs <= ln_budget_delta, margin_le_log(ln_lhs, ln_budget_delta));

    // (ii) sqrt n - C sqrt d >= (2/sqrt 5) sqrt n
    let lhs = s.n.sqrt() - s.c * s.d.sqrt();
    let rhs = 2.0 / 5.0_f64.sqrt() * s.n.sqrt();
    push("ii", lhs >= rhs, margin_linear(lhs, rhs));

    // (iii) n e^{-2d} <= delta/6
    let ln_lhs = s.n.ln() - 2.0 * s.d;
    push("iii", ln_lhs <= ln_budget_delta, margin_le_log(ln_lhs, ln_budget_delta));

    // (iv) n (e/2)^{-md/(40n)} <= delta/6
    let ln_lhs = s.n.ln() - s.m * s.d / (40.0 * s.n) * (std::f64::consts::E / 2.0).ln();
    push("iv", ln_lhs <= ln_budget_delta, margin_le_log(ln_lhs, ln_budget_delta));

    // (v) 12 d^{1/4} / m^{1/4} <= sqrt(1/10) - 1/4
    let ln_lhs = 12.0_f64.ln() + 0.25 * (s.d.ln() - s.m.ln());
    let ln_rhs = (0.1_f64.sqrt() - 0.25).ln();
    push("v", ln_lhs <= ln_rhs, margin_le_log(ln_lhs, ln_rhs));

    // (vi) d/2 - 8/(m lam^2 d) >= 1
    let lhs = s.d / 2.0 - 8.0 / (s.m * s.lam * s.lam * s.d);
    push("vi", lhs >= 1.0, margin_linear(lhs, 1.0));

    // (vii) lam >= 20 sqrt(log(2m)/m) + 16/((md)^{1/4} sqrt(pi lam))
    let rhs = 20.0 * ((2.0 * s.m).ln() / s.m).sqrt()
        + (16.0_f64.ln() - 0.25 * (s.m.ln() + s.d.ln()) - 0.5 * (PI * s.lam).ln()).exp();
    push("vii", s.lam >= rhs, margin_linear(s.lam, rhs));

    // (viii) (8T)^U/(d^U U!) <= eps/14
    let ln_lhs = ln_viii(&s, u_eval);
    push("viii", ln_lhs <= ln_budget_eps, margin_le_log(ln_lhs, ln_budget_eps));

    // (ix) (32 sqrt2/(sqrt m pi lam)) sum_{u=2}^U T^u/(u! d^{u-1/2}) <= eps/14
    let ln_sum = 0.5 * s.d.ln() + ln_sum_powers((s.t / s.d).ln(), 2, u_eval);
    let ln_lhs = (32.0 * 2.0_f64.sqrt()).ln() - 0.5 * s.m.ln() - PI.ln() - s.lam.ln() + ln_sum;
    push("ix", ln_lhs <= ln_budget_eps, margin_le_log(ln_lhs, ln_budget_eps));

    // (x) (6/(md)^{1/4}) sum_{u=2}^U (8T)^u/(d^u u!) <= eps/14
    let ln_lhs = 6.0_f64.ln() - 0.25 * (s.m.ln() + s.d.ln())
        + ln_sum_powers(if s.t > 0.0 { (8.0 * s.t / s.d).ln() } else { f64::NEG_INFINITY }, 2, u_eval);
    push("x", ln_lhs <= ln_budget_eps, margin_le_log(ln_lhs, ln_budget_eps));

    // (xi) 24 T/(m d^3)^{1/4} <= eps/14
    let ln_lhs = if s.t > 0.0 {
        24.0_f64.ln() + s.t.ln() - 0.25 * (s.m.ln() + 3.0 * s.d.ln())
    } else {
        f64::NEG_INFINITY
    };
    push("xi", ln_lhs <= ln_budget_eps, margin_le_log(ln_lhs, ln_budget_eps));

    // (xii) 4T/((m d^3)^{1/4} sqrt(pi lam)) <= eps/14
    let ln_lhs = if s.t > 0.0 {
        4.0_f64.ln() + s.t.ln() - 0.25 * (s.m.ln() + 3.0 * s.d.ln()) - 0.5 * (PI * s.lam).ln()
    } else {
        f64::NEG_INFINITY
    };
    push("xii", ln_lhs <= ln_budget_eps, margin_le_log(ln_lhs, ln_budget_eps));

    // (xiii) 2 sum_{u=1}^U (2T)^u/(u! d^u sqrt(floor(n/u))) <= eps/14
    if (1..=u_eval).any(|u| p.n / u as u128 == 0) {
        push("xiii", false, f64::NEG_INFINITY);
    } else {
        let mut terms = Vec::with_capacity(u_eval);
        for u in 1..=u_eval {
            let floor_nu = (p.n / u as u128) as f64;
            let ln_t = if s.t > 0.0 {
                u as f64 * (2.0 * s.t / s.d).ln() - ln_gamma(u as f64 + 1.0) - 0.5 * floor_nu.ln()
            } else {
                f64::NEG_INFINITY
            };
            terms.push(ln_t);
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ln_lhs = if max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            let mut sum = 0.0;
            let mut comp = 0.0;
            for t in &terms {
                let v = (t - max).exp();
                let y = v - comp;
                let sm = sum + y;
                comp = (sm - sum) - y;
                sum = sm;
            }
            2.0_f64.ln() + max + sum.ln()
        };
        push("xiii", ln_lhs <= ln_budget_eps, margin_le_log(ln_lhs, ln_budget_eps));
    }

    let all_hold = out.iter().all(|c| c.holds);
    Ok(AssumptionReport {
        conditions: out,
        chosen_u: chosen,
        u_evaluated: u_eval,
        all_hold,
        lambda_epsilon: p.lambda_epsilon,
        t_epsilon: p.t_epsilon(),
        c: p.c,
    })
}

/// Direct-arithmetic route: the same inequalities with naive powers and
/// factorials. Overflows on purpose for extreme tuples; the tests compare
/// it against the log-space route wherever it stays finite.
pub fn check_direct(p: &ParamTuple) -> Result<AssumptionReport> {
    p.validate()?;
    let s = Scales::of(p);
    let chosen = match p.u {
        Some(u) => Some(u),
        None => auto_select_u(p, 64)?,
    };
    let u_eval = chosen.unwrap_or_else(|| fallback_u(&s, 64));
    let budget_delta = s.delta / 6.0;
    let budget_eps = s.eps / 14.0;
    let factorial = |u: usize| -> f64 { (1..=u).map(|k| k as f64).product() };

    let mut out = Vec::with_capacity(13);
    let push_le = |key: &str, lhs: f64, rhs: f64, out: &mut Vec<ConditionResult>| {
        let margin = if lhs <= rhs {
            1.0 - lhs / rhs
        } else {
            rhs / lhs - 1.0
        };
        out.push(ConditionResult { key: key.to_string(), holds: lhs <= rhs, margin });
    };

    push_le("i", s.m * (-s.d / 16.0).exp(), budget_delta, &mut out);
    {
        let lhs = s.n.sqrt() - s.c * s.d.sqrt();
        let rhs = 2.0 / 5.0_f64.sqrt() * s.n.sqrt();
        out.push(ConditionResult {
            key: "ii".into(),
            holds: lhs >= rhs,
            margin: margin_linear(lhs, rhs),
        });
    }
    push_le("iii", s.n * (-2.0 * s.d).exp(), budget_delta, &mut out);
    push_le(
        "iv",
        s.n * (std::f64::consts::E / 2.0).powf(-s.m * s.d / (40.0 * s.n)),
        budget_delta,
        &mut out,
    );
    push_le("v", 12.0 * s.d.powf(0.25) / s.m.powf(0.25), 0.1_f64.sqrt() - 0.25, &mut out);
    {
        let lhs = s.d / 2.0 - 8.0 / (s.m * s.lam * s.lam * s.d);
        out.push(ConditionResult {
            key: "vi".into(),
            holds: lhs >= 1.0,
            margin: margin_linear(lhs, 1.0),
        });
    }
    {
        let rhs = 20.0 * ((2.0 * s.m).ln() / s.m).sqrt()
            + 16.0 / ((s.m * s.d).powf(0.25) * (PI * s.lam).sqrt());
        out.push(ConditionResult {
            key: "vii".into(),
            holds: s.lam >= rhs,
            margin: margin_linear(s.lam, rhs),
        });
    }
    push_le(
        "viii",
        (8.0 * s.t).powi(u_eval as i32) / (s.d.powi(u_eval as i32) * factorial(u_eval)),
        budget_eps,
        &mut out,
    );
    {
        let sum: f64 = (2..=u_eval)
            .map(|u| s.t.powi(u as i32) / (factorial(u) * s.d.powf(u as f64 - 0.5)))
            .sum();
        push_le(
            "ix",
            32.0 * 2.0_f64.sqrt() / (s.m.sqrt() * PI * s.lam) * sum,
            budget_eps,
            &mut out,
        );
    }
    {
        let sum: f64 = (2..=u_eval)
            .map(|u| (8.0 * s.t).powi(u as i32) / (s.d.powi(u as i32) * factorial(u)))
            .sum();
        push_le("x", 6.0 / (s.m * s.d).powf(0.25) * sum, budget_eps, &mut out);
    }
    push_le("xi", 24.0 * s.t / (s.m * s.d.powi(3)).powf(0.25), budget_eps, &mut out);
    push_le(
        "xii",
        4.0 * s.t / ((s.m * s.d.powi(3)).powf(0.25) * (PI * s.lam).sqrt()),
        budget_eps,
        &mut out,
    );
    {
        if (1..=u_eval).any(|u| p.n / u as u128 == 0) {
            out.push(ConditionResult {
                key: "xiii".into(),
                holds: false,
                margin: f64::NEG_INFINITY,
            });
        } else {
            let sum: f64 = (1..=u_eval)
                .map(|u| {
                    (2.0 * s.t).powi(u as i32)
                        / (factorial(u)
                            * s.d.powi(u as i32)
                            * ((p.n / u as u128) as f64).sqrt())
                })
                .sum();
            push_le("xiii", 2.0 * sum, budget_eps, &mut out);
        }
    }

    let all_hold = out.iter().all(|c| c.holds);
    Ok(AssumptionReport {
        conditions: out,
        chosen_u: chosen,
        u_evaluated: u_eval,
        all_hold,
        lambda_epsilon: p.lambda_epsilon,
        t_epsilon: p.t_epsilon(),
        c: p.c,
    })
}

/// Condition keys sorted most binding first (ascending margin; -inf
/// sentinels lead).
pub fn binding_constraints(report: &AssumptionReport) -> Vec<String> {
    let mut keyed: Vec<(f64, String)> =
        report.conditions.iter().map(|c| (c.margin, c.key.clone())).collect();
    keyed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    keyed.into_iter().map(|(_, k)| k).collect()
}

/// Parameter directions that can only help a condition: growing these never
/// flips it from hold to fail.
///
/// Note the deliberate omission of (i) from the width list: m e^{-d/16} is
/// increasing in m, so width growth can only hurt (i). Dimension growth is
/// what rescues it.
const MONOTONE_IN_M: [&str; 7] = ["iv", "v", "vii", "ix", "x", "xi", "xii"];
const MONOTONE_IN_N: [&str; 2] = ["ii", "xiii"];
const MONOTONE_IN_D: [&str; 2] = ["i", "iii"];

/// Randomized monotonicity ladders: sample a base tuple, double one
/// parameter several times, and collect any hold-to-fail flip among the
/// conditions that are monotone in that parameter. Empty result = pass.
pub fn monotonicity_violations(trials: usize, seed: u64) -> Result<Vec<String>> {
    let mut stream = rng::stream("assumption_ledger.monotone", seed);
    let mut violations = Vec::new();
    for trial in 0..trials {
        let d0 = stream.gen_range(3u128..=512);
        let base = ParamTuple {
            n: 1u128 << stream.gen_range(3u32..=20),
            m: 1u128 << stream.gen_range(4u32..=40),
            d: d0,
            epsilon: stream.gen_range(0.05..1.95),
            delta: stream.gen_range(0.01..0.99),
            // keep lambda valid for every dimension on the d-ladder
            lambda_epsilon: stream.gen_range(0.05..1.0) / (4.0 * (d0 * 16) as f64),
            u: Some(stream.gen_range(1usize..=8)),
            c: stream.gen_range(0.5..2.0),
        };
        let track = |tuple: &ParamTuple| -> Result<AssumptionReport> { check(tuple) };
        let mut ladder = |mutate: &dyn Fn(&ParamTuple, u32) -> ParamTuple,
                          keys: &[&str],
                          label: &str|
         -> Result<()> {
            let mut prev = track(&base)?;
            for step in 1..=4u32 {
                let next_tuple = mutate(&base, step);
                let next = track(&next_tuple)?;
                for key in keys {
                    if prev.holds(key) && !next.holds(key) {
                        violations.push(format!(
                            "trial {trial}: ({key}) flipped hold->fail on {label} ladder step {step}"
                        ));
                    }
                }
                prev = next;
            }
            Ok(())
        };
        ladder(
            &|p, s| ParamTuple { m: p.m << s, ..p.clone() },
            &MONOTONE_IN_M,
            "m",
        )?;
        ladder(
            &|p, s| ParamTuple { n: p.n << s, ..p.clone() },
            &MONOTONE_IN_N,
            "n",
        )?;
        ladder(
            &|p, s| ParamTuple { d: p.d << s, ..p.clone() },
            &MONOTONE_IN_D,
            "d",
        )?;
    }
    Ok(violations)
}

/// A tuple on which all thirteen conditions hold; plausible widths sit far
/// beyond any allocatable array, which is the point of keeping the ledger
/// symbolic.
pub fn feasibility_sentinel() -> ParamTuple {
    ParamTuple {
        n: 131_072,
        m: 1u128 << 80,
        d: 1024,
        epsilon: 1.9,
        delta: 0.5,
        lambda_epsilon: 1.0 / 4096.0,
        u: None,
        c: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_d4() -> ParamTuple {
        ParamTuple {
            n: 10_000,
            m: 1_000_000,
            d: 4,
            epsilon: 0.1,
            delta: 0.1,
            lambda_epsilon: 1.0 / 16.0,
            u: None,
            c: 1.0,
        }
    }

    #[test]
    fn condition_i_example() {
        // m = 1024, d = 256, delta = 0.1: 1024 e^{-16} ~ 1.15e-4 <= 1/60.
        let p = ParamTuple {
            n: 4096,
            m: 1024,
            d: 256,
            epsilon: 0.5,
            delta: 0.1,
            lambda_epsilon: 1.0 / 1024.0,
            u: Some(1),
            c: 1.0,
        };
        let r = check(&p).unwrap();
        assert!(r.holds("i"));
        assert!(r.margin("i") > 0.99);
    }

    #[test]
    fn condition_v_fails_at_desk_width() {
        // 12 sqrt2 / 10^{1.5} ~ 0.537 > sqrt(1/10) - 1/4 ~ 0.0662.
        let r = check(&desk_d4()).unwrap();
        assert!(!r.holds("v"));
        assert!((r.margin("v") - (-0.8766)).abs() < 1e-3);
        let binding = binding_constraints(&r);
        assert!(binding.contains(&"v".to_string()));
        // The hopeless dimension-driven conditions saturate at -1 and sort
        // ahead of (v).
        assert!(r.margin("viii") < r.margin("v"));
        assert!(!r.all_hold);
    }

    #[test]
    fn condition_iii_with_large_dimension_is_vacuous() {
        let p = ParamTuple {
            n: 1,
            m: 2,
            d: 100,
            epsilon: 1.9,
            delta: 0.999,
            lambda_epsilon: 1.0 / 400.0,
            u: Some(1),
            c: 1.0,
        };
        let r = check(&p).unwrap();
        assert!(r.holds("iii"));
        assert!(r.margin("iii") > 0.999999);
    }

    #[test]
    fn sentinel_tuple_holds_everything() {
        let r = check(&feasibility_sentinel()).unwrap();
        assert!(r.all_hold, "failing: {:?}", binding_constraints(&r));
        assert_eq!(r.chosen_u, Some(9));
    }

    #[test]
    fn single_condition_failure_is_most_binding() {
        // Same sentinel with n = d = 1024 makes (ii) the only failure:
        // sqrt n - C sqrt d = 0 < (2/sqrt5) sqrt n.
        let p = ParamTuple { n: 1024, ..feasibility_sentinel() };
        let r = check(&p).unwrap();
        let failing: Vec<&str> =
            r.conditions.iter().filter(|c| !c.holds).map(|c| c.key.as_str()).collect();
        assert_eq!(failing, vec!["ii"]);
        assert_eq!(binding_constraints(&r)[0], "ii");
    }

    #[test]
    fn auto_u_selection_matches_scan_oracle() {
        let base = |eps: f64| ParamTuple {
            n: 8192,
            m: 1u128 << 40,
            d: 1024,
            epsilon: eps,
            delta: 0.5,
            lambda_epsilon: 1.0 / 4096.0,
            u: None,
            c: 1.0,
        };
        assert_eq!(auto_select_u(&base(1.999), 64).unwrap(), Some(1));
        assert_eq!(auto_select_u(&base(1.98), 64).unwrap(), Some(3));
        assert_eq!(auto_select_u(&base(1.9), 64).unwrap(), Some(9));
        // The top-eigenvalue setting at eps = 0.1 needs a depth in the
        // hundreds; below the cap of 64 the scan reports infeasible.
        assert_eq!(auto_select_u(&base(0.1), 64).unwrap(), None);
        // Degenerate eps = 2 gives T = 0 and the smallest depth.
        assert_eq!(auto_select_u(&base(2.0), 64).unwrap(), Some(1));
        assert!(auto_select_u(&base(1.0), 65).is_err());
    }

    #[test]
    fn floor_zero_sample_count_is_minus_infinity() {
        let p = ParamTuple {
            n: 2,
            m: 1u128 << 30,
            d: 64,
            epsilon: 0.5,
            delta: 0.5,
            lambda_epsilon: 1.0 / 256.0,
            u: Some(3),
            c: 1.0,
        };
        let r = check(&p).unwrap();
        assert!(!r.holds("xiii"));
        assert_eq!(r.margin("xiii"), f64::NEG_INFINITY);
        assert_eq!(binding_constraints(&r)[0], "xiii");
    }

    #[test]
    fn invalid_lambda_is_rejected() {
        let mut p = desk_d4();
        p.lambda_epsilon = 1.0; // above 1/(4d)
        assert!(matches!(check(&p), Err(Error::InvalidEigenvalue(_))));
    }

    #[test]
    fn log_space_matches_direct_on_safe_tuples() {
        let mut stream = rng::stream("ledger.test.direct", 0);
        let mut compared = 0;
        for _ in 0..200 {
            let d = stream.gen_range(3u128..=64);
            let p = ParamTuple {
                n: stream.gen_range(8u128..=4096),
                m: 2 * stream.gen_range(8u128..=100_000),
                d,
                epsilon: stream.gen_range(0.3..1.9),
                delta: stream.gen_range(0.05..0.95),
                lambda_epsilon: stream.gen_range(0.2..1.0) / (4.0 * d as f64),
                u: Some(stream.gen_range(1usize..=4)),
                c: stream.gen_range(0.5..2.0),
            };
            let a = check(&p).unwrap();
            let b = check_direct(&p).unwrap();
            for (ca, cb) in a.conditions.iter().zip(b.conditions.iter()) {
                assert_eq!(ca.key, cb.key);
                if !cb.margin.is_finite() || !ca.margin.is_finite() {
                    continue;
                }
                assert_eq!(ca.holds, cb.holds, "{}: {p:?}", ca.key);
                let scale = ca.margin.abs().max(cb.margin.abs()).max(1e-12);
                assert!(
                    (ca.margin - cb.margin).abs() <= 1e-12 * scale.max(1.0),
                    "{}: log {} vs direct {} ({p:?})",
                    ca.key,
                    ca.margin,
                    cb.margin
                );
                compared += 1;
            }
        }
        assert!(compared > 1000);
    }

    #[test]
    fn monotonicity_ladders_pass() {
        let violations = monotonicity_violations(100, 7).unwrap();
        assert!(violations.is_empty(), "{violations:?}");
    }

    #[test]
    fn margins_sign_consistent_with_verdicts() {
        for p in [desk_d4(), feasibility_sentinel()] {
            let r = check(&p).unwrap();
            for c in &r.conditions {
                if c.margin > 0.0 {
                    assert!(c.holds, "{}", c.key);
                }
                if c.margin < 0.0 {
                    assert!(!c.holds, "{}", c.key);
                }
            }
        }
    }

    #[test]
    fn binding_order_is_ascending_even_when_all_hold() {
        let r = check(&feasibility_sentinel()).unwrap();
        let order = binding_constraints(&r);
        assert_eq!(order.len(), 13);
        let mut prev = f64::NEG_INFINITY;
        for key in &order {
            let m = r.margin(key);
            assert!(m >= prev);
            prev = m;
        }
        // (ii) carries the thinnest cushion on the sentinel.
        assert_eq!(order[0], "ii");
    }
}
