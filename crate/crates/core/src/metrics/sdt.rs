//! Signal detection and equivalence testing for the discrimination study.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use super::MetricsError;

/// Response counts of a yes/no discrimination task. "Signal" trials are the
/// ones where the correct answer is yes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub hits: u64,
    pub misses: u64,
    pub false_alarms: u64,
    pub correct_rejections: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdtResult {
    pub hit_rate: f64,
    pub fa_rate: f64,
    pub d_prime: f64,
    pub criterion: f64,
    /// True when a rate of 0 or 1 had to be pulled in before the probit.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TostResult {
    pub z_lower: f64,
    pub z_upper: f64,
    pub p_lower: f64,
    pub p_upper: f64,
    pub p_tost: f64,
}

const A: [f64; 6] = [
    -3.969683028665376e1,
    2.209460984245205e2,
    -2.759285104469687e2,
    1.383577518672690e2,
    -3.066479806614716e1,
    2.506628277459239e0,
];
const B: [f64; 5] = [
    -5.447609879822406e1,
    1.615858368580409e2,
    -1.556989798598866e2,
    6.680131188771972e1,
    -1.328068155288572e1,
];
const C: [f64; 6] = [
    -7.784894002430293e-3,
    -3.223964580411365e-1,
    -2.400758277161838e0,
    -2.549732539343734e0,
    4.374664141464968e0,
    2.938163982698783e0,
];
const D: [f64; 4] = [
    7.784695709041462e-3,
    3.224671290700398e-1,
    2.445134137142996e0,
    3.754408661907416e0,
];

fn tail(q: f64) -> f64 {
    (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
        / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
}

/// Inverse standard normal CDF.
///
/// Acklam's rational approximation (relative error about 1e-9 in the
/// central region, 1e-7 worst case) followed by one Halley step on the
/// exact CDF, which brings the result to near machine precision.
pub fn probit(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    };
    let e = 0.5 * erfc(-x / std::f64::consts::SQRT_2) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Sensitivity and bias from raw counts. Rates of exactly 0 or 1 are
/// clamped to `[1/(2N), 1 - 1/(2N)]` with N the trial count of that class.
pub fn sdt_analysis(c: &ConfusionCounts) -> Result<SdtResult, MetricsError> {
    let signal = c.hits + c.misses;
    let noise = c.false_alarms + c.correct_rejections;
    if signal == 0 || noise == 0 {
        return Err(MetricsError::Degenerate(
            "signal detection needs at least one signal and one noise trial".into(),
        ));
    }
    let clamp = |k: u64, n: u64| {
        let n = n as f64;
        let lo = 1.0 / (2.0 * n);
        let r = k as f64 / n;
        let r2 = r.clamp(lo, 1.0 - lo);
        (r2, r2 != r)
    };
    let (h, ch) = clamp(c.hits, signal);
    let (f, cf) = clamp(c.false_alarms, noise);
    let mut out = sdt_from_rates(h, f);
    out.hit_rate = c.hits as f64 / signal as f64;
    out.fa_rate = c.false_alarms as f64 / noise as f64;
    out.clamped = ch || cf;
    Ok(out)
}

/// Sensitivity and bias from rates strictly inside (0, 1).
pub fn sdt_from_rates(hit_rate: f64, fa_rate: f64) -> SdtResult {
    let zh = probit(hit_rate);
    let zf = probit(fa_rate);
    SdtResult {
        hit_rate,
        fa_rate,
        d_prime: zh - zf,
        criterion: -0.5 * (zh + zf),
        clamped: false,
    }
}

/// Large-sample standard error of d' from counts:
/// `sqrt(H(1-H) / (N_s phi(z_H)^2) + F(1-F) / (N_n phi(z_F)^2))`, using the
/// same clamped rates as [`sdt_analysis`].
pub fn dprime_standard_error(c: &ConfusionCounts) -> Result<f64, MetricsError> {
    let r = sdt_analysis(c)?;
    let n = Normal::standard();
    let signal = (c.hits + c.misses) as f64;
    let noise = (c.false_alarms + c.correct_rejections) as f64;
    let lo_s = 1.0 / (2.0 * signal);
    let lo_n = 1.0 / (2.0 * noise);
    let h = r.hit_rate.clamp(lo_s, 1.0 - lo_s);
    let f = r.fa_rate.clamp(lo_n, 1.0 - lo_n);
    let term = |p: f64, trials: f64| p * (1.0 - p) / (trials * n.pdf(probit(p)).powi(2));
    Ok((term(h, signal) + term(f, noise)).sqrt())
}

/// Two one-sided tests of `|d'| < margin` with a normal approximation.
pub fn tost_equivalence(d_prime: f64, se: f64, margin: f64) -> Result<TostResult, MetricsError> {
    if !(se > 0.0) || !se.is_finite() {
        return Err(MetricsError::Degenerate(format!("standard error must be positive, got {se}")));
    }
    let n = Normal::standard();
    let z_lower = (d_prime + margin) / se;
    let z_upper = (d_prime - margin) / se;
    let p_lower = n.sf(z_lower);
    let p_upper = n.cdf(z_upper);
    Ok(TostResult {
        z_lower,
        z_upper,
        p_lower,
        p_upper,
        p_tost: p_lower.max(p_upper),
    })
}
