//! Exact spectrum of the analytical NTK operator on the sphere.
//!
//! Funk-Hecke reduces the operator to one eigenvalue per spherical-harmonic
//! order h, with multiplicity N(d, h):
//!
//! * h = 0: a double-factorial ratio (even/odd d cases),
//! * h = 1: exactly 1/(4d), repeated d times — the top of the spectrum,
//! * h = 2: a finite Beta-function expression,
//! * odd h >= 3: exactly zero,
//! * even h >= 4: a positive series over the Taylor tail of the kernel.
//!
//! The series terms decay only polynomially, like r^{-(d+2)/2}, so the
//! partial sum is finished with a power-law tail correction fitted to the
//! exact last term and term ratio; for d = 3 a raw cutoff at the iteration
//! guard would still be ~1e-11 short. A Gauss-Legendre quadrature oracle of
//! the Funk-Hecke integral cross-checks every closed form.

use crate::error::{Error, Result};
use crate::rng;
use crate::sphere_data::{sample_sphere_stream, RegressionFunction};
use ndarray::Array1;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Legendre polynomial of order h in d dimensions,
/// P_h(d; z) = h! G((d-1)/2) sum_r (-1/4)^r (1-z^2)^r z^{h-2r} / (r! (h-2r)! G(r+(d-1)/2)).
pub fn legendre(h: usize, d: usize, z: f64) -> Result<f64> {
    if d < 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    if z.abs() > 1.0 + 1e-12 {
        return Err(Error::PolynomialDomain(z));
    }
    let z = z.clamp(-1.0, 1.0);
    let half = (d as f64 - 1.0) / 2.0;
    let lead = ln_gamma(h as f64 + 1.0) + ln_gamma(half);
    let one_minus_z2 = (1.0 - z * z).max(0.0);
    let mut sum = 0.0;
    for r in 0..=(h / 2) {
        let ln_coeff = lead
            - ln_gamma(r as f64 + 1.0)
            - ln_gamma((h - 2 * r) as f64 + 1.0)
            - ln_gamma(r as f64 + half);
        let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
        let quarter = 0.25_f64.powi(r as i32);
        let poly = one_minus_z2.powi(r as i32) * z.powi((h - 2 * r) as i32);
        sum += sign * quarter * poly * ln_coeff.exp();
    }
    Ok(sum)
}

/// Dimension N(d, h) of the space of order-h spherical harmonics, exact.
pub fn multiplicity(h: usize, d: usize) -> Result<u128> {
    if d < 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    match h {
        0 => Ok(1),
        1 => Ok(d as u128),
        _ => {
            // (2h + d - 2) (h + d - 3)! / (h! (d - 2)!)
            //   = (2h + d - 2)/(h + d - 2) * C(h + d - 2, h)
            // computed as a running product of exact rationals.
            let overflow = || Error::MultiplicityOverflow { d, h };
            let mut num: u128 = 1;
            // C(h + d - 2, min(h, d - 2)) with intermediate gcd reduction.
            let k = h.min(d - 2) as u128;
            let n_top = (h + d - 2) as u128;
            let mut denom: u128 = 1;
            for i in 1..=k {
                num = num.checked_mul(n_top - k + i).ok_or_else(overflow)?;
                denom = denom.checked_mul(i).ok_or_else(overflow)?;
                let g = gcd(num, denom);
                num /= g;
                denom /= g;
            }
            debug_assert_eq!(denom, 1);
            let scaled = num.checked_mul((2 * h + d - 2) as u128).ok_or_else(overflow)?;
            Ok(scaled / (h + d - 2) as u128)
        }
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

/// ln of the double factorial n!!.
fn ln_double_factorial(n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 0 {
        // (2k)!! = 2^k k!
        let k = n as f64 / 2.0;
        k * std::f64::consts::LN_2 + ln_gamma(k + 1.0)
    } else {
        // (2k+1)!! = (2k+1)! / (2^k k!)
        let k = (n as f64 - 1.0) / 2.0;
        ln_gamma(n as f64 + 1.0) - k * std::f64::consts::LN_2 - ln_gamma(k + 1.0)
    }
}

/// Iteration guard for the even-h series; the tail correction below makes
/// reaching it harmless, but a run this long signals d < 3 slipped through.
const SERIES_GUARD: usize = 1_000_000;

/// Eigenvalue mu_h / |S^{d-1}| of the analytical NTK operator.
pub fn eigenvalue_closed_form(h: usize, d: usize) -> Result<f64> {
    if d < 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    let df = d as f64;
    let half = (df - 1.0) / 2.0;
    match h {
        0 => {
            let ratio = ln_double_factorial(d - 2) - ln_double_factorial(d - 1);
            let ln_c = if d % 2 == 0 { PI.ln() } else { std::f64::consts::LN_2 };
            Ok((2.0 * (ratio - ln_c)).exp())
        }
        1 => Ok(1.0 / (4.0 * df)),
        2 => {
            let ln_pref = ln_beta(half, 2.0) - (8.0 * PI).ln() - ln_beta(half, 0.5);
            Ok(ln_pref.exp() * (ln_beta(df / 2.0, 0.5).exp() + ln_beta(df / 2.0 + 1.0, 0.5).exp()))
        }
        _ if h % 2 == 1 => Ok(0.0),
        _ => {
            // Positive series over the kernel's Taylor tail, summed by exact
            // term ratios with a fitted power-law tail.
            let hf = h as f64;
            let ln_pref = hf.ln() + ln_beta(hf, half)
                - (hf + 1.0) * std::f64::consts::LN_2
                - PI.ln()
                - ln_beta(half, 0.5);
            let b = hf + half;
            let r0 = h / 2 - 1;
            let r0f = r0 as f64;
            // t(r0) = C(2r0+2, h) / (B(1/2, r0) r0 (1+2r0)) * B(r0+3/2-h/2, b)
            let ln_t0 = ln_gamma(2.0 * r0f + 3.0)
                - ln_gamma(hf + 1.0)
                - ln_gamma(2.0 * r0f + 3.0 - hf)
                - ln_beta(0.5, r0f)
                - r0f.ln()
                - (1.0 + 2.0 * r0f).ln()
                + ln_beta(r0f + 1.5 - hf / 2.0, b);
            let ratio = |r: f64| -> f64 {
                ((2.0 * r + 4.0) * (2.0 * r + 3.0)) / ((2.0 * r + 4.0 - hf) * (2.0 * r + 3.0 - hf))
                    * ((r + 0.5) / r)
                    * ((r + 1.5 - hf / 2.0) / (r + 1.5 - hf / 2.0 + b))
                    * ((r * (1.0 + 2.0 * r)) / ((r + 1.0) * (2.0 * r + 3.0)))
            };
            let mut t = ln_t0.exp();
            let mut sum = t;
            let mut r = r0f;
            let mut iters = 0usize;
            loop {
                t *= ratio(r);
                r += 1.0;
                sum += t;
                iters += 1;
                if t < 1e-16 * sum || iters >= SERIES_GUARD {
                    break;
                }
            }
            // Power-law tail matched to the exact last term and ratio:
            // t(x) ~ t(R) (x/R)^{-p}, midpoint Euler-Maclaurin integral.
            let rho = ratio(r);
            let p = r * (1.0 - rho);
            if !(p > 1.0) {
                return Err(Error::SeriesFailure(iters));
            }
            let tail = t * r.powf(p) * (r + 0.5).powf(1.0 - p) / (p - 1.0);
            Ok(ln_pref.exp() * (sum + tail))
        }
    }
}

/// Caps for the quadrature oracle; it exists to cross-check the closed
/// forms at desk scale, not to replace them.
pub const QUADRATURE_H_MAX: usize = 12;
pub const QUADRATURE_D_MAX: usize = 64;

/// Funk-Hecke quadrature oracle:
/// mu_h/|S^{d-1}| = (1/B((d-1)/2, 1/2)) \int_{-1}^{1} P_h(d; z) kappa(z) (1-z^2)^{(d-3)/2} dz,
/// by adaptive Gauss-Legendre to the given absolute tolerance.
pub fn eigenvalue_quadrature(h: usize, d: usize) -> Result<f64> {
    eigenvalue_quadrature_tol(h, d, 1e-10)
}

pub fn eigenvalue_quadrature_tol(h: usize, d: usize, tol: f64) -> Result<f64> {
    if d < 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    if h > QUADRATURE_H_MAX || d > QUADRATURE_D_MAX {
        return Err(Error::OracleScale(format!(
            "quadrature oracle supports h <= {QUADRATURE_H_MAX}, d <= {QUADRATURE_D_MAX} (got h={h}, d={d})"
        )));
    }
    let weight_exp = (d as f64 - 3.0) / 2.0;
    let integrand = |z: f64| -> f64 {
        let p = legendre(h, d, z).expect("z stays in [-1,1]");
        let kappa = z * (0.5 - z.acos() / (2.0 * PI));
        let w = (1.0 - z * z).max(0.0).powf(weight_exp);
        p * kappa * w
    };
    let integral = adaptive_gauss_legendre(&integrand, -1.0, 1.0, tol * 0.1, 48)
        .ok_or(Error::QuadratureFailure { h, d, tol })?;
    Ok(integral / ln_beta((d as f64 - 1.0) / 2.0, 0.5).exp())
}

const GL_POINTS: usize = 21;

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence.
fn gl_rule() -> &'static Vec<(f64, f64)> {
    use std::sync::OnceLock;
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_POINTS;
        let mut rule = Vec::with_capacity(n);
        for i in 1..=n {
            let mut x = (PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 1..n {
                    let next = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
                    p0 = p1;
                    p1 = next;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-15 {
                    break;
                }
            }
            rule.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        rule
    })
}

fn gl21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in gl_rule() {
        acc += w * f(c + hw * x);
    }
    acc * hw
}

/// Adaptive bisection with a 21-point panel rule; the error estimate is the
/// difference against the two half-panel sums.
fn adaptive_gauss_legendre<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: f64,
    max_depth: usize,
) -> Option<f64> {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> Option<f64> {
        let mid = 0.5 * (a + b);
        let left = gl21(f, a, mid);
        let right = gl21(f, mid, b);
        let refined = left + right;
        if (refined - whole).abs() <= tol || (b - a) < 1e-14 {
            return Some(refined);
        }
        if depth == 0 {
            return None;
        }
        let l = recurse(f, a, mid, left, tol * 0.5, depth - 1)?;
        let r = recurse(f, mid, b, right, tol * 0.5, depth - 1)?;
        Some(l + r)
    }
    let whole = gl21(f, a, b);
    recurse(f, a, b, whole, tol, max_depth)
}

/// One row of the spectrum: order, eigenvalue, multiplicity, and the range
/// this order occupies in the global ordering lambda_1 >= lambda_2 >= ...
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumEntry {
    pub h: usize,
    pub value: f64,
    pub multiplicity: u128,
    pub l_start: u128,
    pub l_end: u128,
}

/// Eigenvalues of H for all orders up to h_max, globally ordered.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub d: usize,
    pub h_max: usize,
    pub entries: Vec<SpectrumEntry>,
}

impl SpectrumTable {
    pub fn lambda_1(&self) -> f64 {
        self.entries[0].value
    }

    /// Entry holding a given harmonic order, if tabulated.
    pub fn order(&self, h: usize) -> Option<&SpectrumEntry> {
        self.entries.iter().find(|e| e.h == h)
    }
}

/// Tabulate the spectrum for orders 0..=h_max, sorted by eigenvalue
/// descending (zero odd orders land at the end), with cumulative index
/// ranges in the global ordering.
pub fn build_spectrum(d: usize, h_max: usize) -> Result<SpectrumTable> {
    if h_max < 2 {
        return Err(Error::InvalidConfig("h_max must be at least 2".into()));
    }
    let mut entries = Vec::with_capacity(h_max + 1);
    for h in 0..=h_max {
        entries.push(SpectrumEntry {
            h,
            value: eigenvalue_closed_form(h, d)?,
            multiplicity: multiplicity(h, d)?,
            l_start: 0,
            l_end: 0,
        });
    }
    let v0 = entries[0].value;
    let v1 = entries[1].value;
    if !(v0 < v1) {
        return Err(Error::NonFinite("spectrum order: expected value(0) < value(1)"));
    }
    entries.sort_by(|a, b| b.value.partial_cmp(&a.value).expect("finite eigenvalues"));
    let mut cursor: u128 = 1;
    for e in entries.iter_mut() {
        e.l_start = cursor;
        e.l_end = cursor + e.multiplicity - 1;
        cursor = e.l_end + 1;
    }
    Ok(SpectrumTable { d, h_max, entries })
}

/// Accuracy plan: the cutoff index L_eps whose tail mass certificate is at
/// most eps/4, the eigenvalue at the cutoff, and the training horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonPlan {
    pub epsilon: f64,
    pub l_epsilon: u128,
    pub lambda_epsilon: f64,
    pub t_epsilon: f64,
    /// Certified (or Monte-Carlo estimated) mass of f* beyond L_eps.
    pub tail_mass: f64,
    /// Standard error of the Monte-Carlo tail estimate; 0 when certified
    /// analytically.
    pub tail_stderr: f64,
    /// Monte-Carlo projection budget used for custom functions.
    pub mc_budget: usize,
}

pub fn t_epsilon(lambda: f64, epsilon: f64) -> f64 {
    2.0 / lambda * (2.0 / epsilon).ln()
}

/// Choose L_eps, lambda_eps and T_eps for a target accuracy.
///
/// Linear and harmonic-combo functions carry their spectral mass on orders
/// {0, 1, 2} with analytically known weights, so the tail certificate is
/// exact (a pure-linear f* is odd and has no mass outside order 1 at all).
/// Custom functions are projected by Monte Carlo onto an orthonormalized
/// degree <= 2 harmonic basis; the plan fails if the residual exceeds eps/4.
pub fn plan_epsilon(
    f: &RegressionFunction,
    d: usize,
    epsilon: f64,
    table: &SpectrumTable,
    mc_budget: usize,
    seed: u64,
) -> Result<EpsilonPlan> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidConfig(format!("epsilon {epsilon} outside (0,1)")));
    }
    if table.d != d {
        return Err(Error::DimensionMismatch { expected: d, got: table.d });
    }
    let budget = epsilon / 4.0;
    let (masses, residual_sq, residual_se, used_mc) = match f.order_masses() {
        Some(m) => (m, 0.0, 0.0, 0),
        None => {
            let (m, res_sq, se) = project_degree_two(f, d, mc_budget, seed)?;
            (m, res_sq, se, mc_budget)
        }
    };
    // Orders sorted by eigenvalue descending: h=1, then h=0, then h=2.
    let order_seq = [1usize, 0, 2];
    let mut remaining: f64 = masses.iter().sum::<f64>() + residual_sq;
    let mut chosen: Option<&SpectrumEntry> = None;
    for h in order_seq {
        let entry = table.order(h).ok_or_else(|| {
            Error::InvalidConfig(format!("spectrum table lacks order {h}"))
        })?;
        remaining -= masses[h];
        chosen = Some(entry);
        if remaining.max(0.0).sqrt() <= budget {
            break;
        }
    }
    let entry = chosen.expect("order sequence is nonempty");
    let tail = remaining.max(0.0).sqrt();
    if tail > budget {
        return Err(Error::PlanInfeasible { tail, budget });
    }
    Ok(EpsilonPlan {
        epsilon,
        l_epsilon: entry.l_end,
        lambda_epsilon: entry.value,
        t_epsilon: t_epsilon(entry.value, epsilon),
        tail_mass: tail,
        tail_stderr: residual_se,
        mc_budget: used_mc,
    })
}

/// L2 norms (residual outside the degree <= 2 harmonic span, total) of a
/// function, estimated on one Monte-Carlo sample. Used as the monitored
/// proxy for the projection split of the error function.
pub fn degree_two_residual(
    f: &RegressionFunction,
    d: usize,
    mc: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (masses, residual_sq, _) = project_degree_two(f, d, mc, seed)?;
    let total_sq = masses.iter().sum::<f64>() + residual_sq;
    Ok((residual_sq.sqrt(), total_sq.sqrt()))
}

/// Monte-Carlo projection of f onto an orthonormalized degree <= 2 basis
/// {1, x_k, x_j x_k}. Returns per-order squared masses, the squared
/// residual, and a standard error for the residual estimate.
fn project_degree_two(
    f: &RegressionFunction,
    d: usize,
    mc_budget: usize,
    seed: u64,
) -> Result<([f64; 3], f64, f64)> {
    if mc_budget < 1024 {
        return Err(Error::InvalidConfig(format!(
            "mc_budget {mc_budget} too small for degree-2 projection"
        )));
    }
    let mut stream = rng::stream("ntk_spectrum.project", seed);
    let x = sample_sphere_stream(d, mc_budget, &mut stream)?;
    let vals = f.eval_batch(x.view());
    let mc = mc_budget as f64;

    // Raw basis columns in order: [1], [x_k], [x_j x_k, j<k], [x_k^2].
    // Gram-Schmidt in this order keeps each orthonormal column a pure
    // harmonic order (0, 1, 2, 2); the x_k^2 family loses one rank to the
    // constant, which the residual tolerance drops automatically.
    let mut orders: Vec<usize> = vec![0];
    let mut cols: Vec<Array1<f64>> = vec![Array1::ones(mc_budget)];
    for k in 0..d {
        cols.push(x.column(k).to_owned());
        orders.push(1);
    }
    for j in 0..d {
        for k in (j + 1)..d {
            cols.push(&x.column(j) * &x.column(k));
            orders.push(2);
        }
    }
    for k in 0..d {
        cols.push(&x.column(k) * &x.column(k));
        orders.push(2);
    }

    let inner = |a: &Array1<f64>, b: &Array1<f64>| a.dot(b) / mc;
    let mut basis: Vec<(usize, Array1<f64>)> = Vec::new();
    for (order, mut col) in orders.into_iter().zip(cols.into_iter()) {
        for (_, q) in &basis {
            let c = inner(&col, q);
            col.scaled_add(-c, q);
        }
        let norm_sq = inner(&col, &col);
        if norm_sq > 1e-8 {
            basis.push((order, col / norm_sq.sqrt()));
        }
    }

    let total = inner(&vals, &vals);
    let mut masses = [0.0_f64; 3];
    let mut explained = 0.0;
    for (order, q) in &basis {
        let c = inner(&vals, q);
        masses[*order] += c * c;
        explained += c * c;
    }
    let residual_sq = (total - explained).max(0.0);
    // Standard error of the residual L2 norm via the residual samples.
    let mut resid = vals.clone();
    for (_, q) in &basis {
        let c = inner(&resid, q);
        resid.scaled_add(-c, q);
    }
    let r2: Array1<f64> = resid.mapv(|v| v * v);
    let mean = r2.sum() / mc;
    let var = r2.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / mc;
    let se_mean = (var / mc).sqrt();
    let se_norm = if mean > 0.0 { se_mean / (2.0 * mean.sqrt()) } else { 0.0 };
    Ok((masses, residual_sq, se_norm))
}
