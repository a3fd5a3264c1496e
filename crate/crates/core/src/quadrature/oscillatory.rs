//! One-sided Fourier-type integrals of slowly decaying, possibly singular
//! weights:
//!
//! * `∫₀^∞ (1 − cos ωs) f(s) ds`
//! * `∫₀^∞ sin(ωs) f(s) ds`
//!
//! `f` is assumed to behave like a power near zero and near infinity. The
//! range is split at the half period `P = π/ω`. Below `P`, panels shrink
//! geometrically toward zero and the last sliver is closed with the local
//! power law. Above `P`, half periods are integrated one at a time and the
//! alternating remainder is summed by repeated averaging of partial sums.

use super::{euler_limit, gauss_legendre, integrate_to_infinity, local_decay};
use crate::error::{Error, Result};

const NEAR_PANELS: usize = 60;
const EXPLICIT_HALF_PERIODS: usize = 32;
const TAIL_TERMS: usize = 48;
const RULE: usize = 20;
const ACCEPT: f64 = 1e-8;

/// `∫_{[0,P]} w(s) f(s) ds` with geometric panels toward 0. `small(s0)` gives
/// the closed-form power-law remainder on `[0, s0]`.
fn near_zero<F, W, S>(f: &F, weight: W, p: f64, small: S) -> f64
where
    F: Fn(f64) -> f64,
    W: Fn(f64) -> f64,
    S: Fn(f64, f64, f64) -> f64,
{
    let rule = gauss_legendre(RULE);
    let mut top = p;
    let mut acc = 0.0;
    for _ in 0..NEAR_PANELS {
        let lo = 0.5 * top;
        acc += rule.integrate(lo, top, |s| weight(s) * f(s));
        top = lo;
    }
    if let Some(q) = local_decay(f, top) {
        acc += small(f(top), top, q);
    }
    acc
}

fn half_period<F: Fn(f64) -> f64, W: Fn(f64) -> f64>(f: &F, w: W, k: usize, p: f64) -> f64 {
    gauss_legendre(RULE).integrate(k as f64 * p, (k + 1) as f64 * p, |s| w(s) * f(s))
}

fn accelerated<F: Fn(f64) -> f64, W: Fn(f64) -> f64>(
    f: &F,
    w: W,
    first: usize,
    p: f64,
    context: &str,
) -> Result<f64> {
    let mut sums = Vec::with_capacity(TAIL_TERMS);
    let mut s = 0.0;
    for k in first..first + TAIL_TERMS {
        s += half_period(f, &w, k, p);
        sums.push(s);
    }
    let (value, spread) = euler_limit(&sums);
    let scale = sums.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if spread > ACCEPT * scale.max(1e-300) && spread > 1e-300 {
        return Err(Error::Quadrature {
            achieved: spread / scale.max(1e-300),
            wanted: ACCEPT,
            context: context.to_string(),
        });
    }
    Ok(value)
}

/// `∫₀^∞ (1 − cos ωs) f(s) ds` for `ω > 0`. Needs `f(s) = O(s^{-q})` with
/// `q < 3` near zero and decay faster than `1/s` at infinity.
pub fn one_minus_cos<F: Fn(f64) -> f64>(f: F, omega: f64) -> Result<f64> {
    if omega == 0.0 {
        return Ok(0.0);
    }
    let omega = omega.abs();
    let p = std::f64::consts::PI / omega;
    let w = |s: f64| {
        let t = (0.5 * omega * s).sin();
        2.0 * t * t
    };
    let near = near_zero(&f, w, p, |f0, s0, q| {
        omega * omega * f0 * s0.powi(3) / (2.0 * (3.0 - q))
    });
    let mut mid = 0.0;
    for k in 1..=EXPLICIT_HALF_PERIODS {
        mid += half_period(&f, w, k, p);
    }
    let first = EXPLICIT_HALF_PERIODS + 1;
    let s_start = first as f64 * p;
    let flat = integrate_to_infinity(&f, s_start)?;
    let cos_part = accelerated(&f, |s| (omega * s).cos(), first, p, "cosine tail")?;
    Ok(near + mid + flat - cos_part)
}

/// `∫₀^∞ sin(ωs) f(s) ds` for `ω > 0`. Needs `f(s) = O(s^{-q})` with `q < 2`
/// near zero and `f → 0` monotonically at infinity.
pub fn sine<F: Fn(f64) -> f64>(f: F, omega: f64) -> Result<f64> {
    if omega == 0.0 {
        return Ok(0.0);
    }
    let sign = omega.signum();
    let omega = omega.abs();
    let p = std::f64::consts::PI / omega;
    let w = |s: f64| (omega * s).sin();
    let near = near_zero(&f, w, p, |f0, s0, q| omega * f0 * s0 * s0 / (2.0 - q));
    let mut mid = 0.0;
    for k in 1..=EXPLICIT_HALF_PERIODS {
        mid += half_period(&f, w, k, p);
    }
    let tail = accelerated(&f, w, EXPLICIT_HALF_PERIODS + 1, p, "sine tail")?;
    Ok(sign * (near + mid + tail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma;

    #[test]
    fn sine_transform_of_power() {
        // ∫ s^{μ-1} sin s ds = Γ(μ) sin(πμ/2)
        for mu in [0.2, 0.5, 0.8] {
            let v = sine(|s: f64| s.powf(mu - 1.0), 1.0).unwrap();
            let exact = gamma(mu) * (std::f64::consts::PI * mu / 2.0).sin();
            assert!((v / exact - 1.0).abs() < 1e-9, "mu={mu}: {v} vs {exact}");
        }
    }

    #[test]
    fn one_minus_cos_of_power() {
        // ∫ (1 - cos s) s^{-1-β} ds = Γ(1-β) cos(πβ/2) / β  for 0 < β < 2
        for beta in [0.2, 0.5, 1.5, 1.9] {
            let v = one_minus_cos(|s: f64| s.powf(-1.0 - beta), 1.0).unwrap();
            let exact = -gamma(-beta) * (std::f64::consts::PI * beta / 2.0).cos();
            assert!((v / exact - 1.0).abs() < 1e-9, "beta={beta}: {v} vs {exact}");
        }
    }

    #[test]
    fn frequency_scaling() {
        let f = |s: f64| s.powf(-1.5);
        let a = one_minus_cos(f, 1.0).unwrap();
        let b = one_minus_cos(f, 7.0).unwrap();
        assert!((b / a - 7f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn non_power_weight() {
        // ∫ (1 - cos s) e^{-s} ds = 1 - 1/2
        let v = one_minus_cos(|s: f64| (-s).exp(), 1.0).unwrap();
        assert!((v - 0.5).abs() < 1e-10, "{v}");
    }
}
