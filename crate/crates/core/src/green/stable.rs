//! Closed-form Green function, Poisson kernel and mean exit time of the
//! symmetric α-stable process (ψ = |ξ|^α, 1 < α < 2) killed on leaving a
//! bounded interval.
//!
//! On `(−1, 1)` the Green function is `R |x−y|^{α−1} I(w)` with
//! `w = (1−x²)(1−y²)/(x−y)²`, `R = 1/(2^α Γ(α/2)²)` and
//! `I(w) = ∫₀^w t^{α/2−1}(1+t)^{−1/2} dt`. For `w > 1` the growth of `I` is
//! split off analytically, which keeps the diagonal and the gradient accurate:
//! `G = R [ (2/(α−1)) P^{(α−1)/2} + |x−y|^{α−1} E(w) ]`, `P = (1−x²)(1−y²)`.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use crate::error::{domain, Result};
use crate::quadrature::gauss_legendre;

const SERIES_TERMS: usize = 64;

/// `binom(−1/2, k)` for k = 0, 1, ….
fn half_binomials() -> [f64; SERIES_TERMS] {
    let mut c = [0.0; SERIES_TERMS];
    c[0] = 1.0;
    for k in 0..SERIES_TERMS - 1 {
        c[k + 1] = -c[k] * (k as f64 + 0.5) / (k as f64 + 1.0);
    }
    c
}

/// α-dependent special-function constants on the reference interval.
#[derive(Clone, Debug)]
pub struct StableConstants {
    pub alpha: f64,
    /// `R = 1/(2^α Γ(α/2)²)`.
    pub r: f64,
    coeffs: [f64; SERIES_TERMS],
    i_half: f64,
    i_one: f64,
    j_full: f64,
    /// `E(∞)`; `R (α−1) E(∞) = −(α−1) K(1)`.
    pub e_inf: f64,
    /// `sin(πα/2)/π`, the Poisson-kernel constant.
    pub poisson_c: f64,
    gamma_1a: f64,
}

impl StableConstants {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return domain(format!("stable interval formulas need 1 < alpha < 2, got {alpha}"));
        }
        let coeffs = half_binomials();
        let mut s = Self {
            alpha,
            r: 1.0 / (2f64.powf(alpha) * gamma(alpha / 2.0).powi(2)),
            coeffs,
            i_half: 0.0,
            i_one: 0.0,
            j_full: 0.0,
            e_inf: 0.0,
            poisson_c: (PI * alpha / 2.0).sin() / PI,
            gamma_1a: gamma(1.0 + alpha),
        };
        s.i_half = s.i_series(0.5);
        s.i_one = s.i_half + s.i_panel(0.5, 1.0);
        s.j_full = s.j_series(0.5) + s.j_panel(0.5, 1.0);
        s.e_inf = s.i_one - 2.0 / (alpha - 1.0) + s.j_full;
        Ok(s)
    }

    fn i_integrand(&self, t: f64) -> f64 {
        t.powf(0.5 * self.alpha - 1.0) / (1.0 + t).sqrt()
    }

    fn i_panel(&self, lo: f64, hi: f64) -> f64 {
        gauss_legendre(24).integrate(lo, hi, |t| self.i_integrand(t))
    }

    /// `Σ c_k w^{k+a}/(k+a)`, `a = α/2`, for `w ≤ 1/2`.
    fn i_series(&self, w: f64) -> f64 {
        let a = 0.5 * self.alpha;
        let mut p = w.powf(a);
        let mut acc = 0.0;
        for (k, c) in self.coeffs.iter().enumerate() {
            let term = c * p / (k as f64 + a);
            acc += term;
            if term.abs() < 1e-18 * acc.abs() {
                break;
            }
            p *= w;
        }
        acc
    }

    /// `I(w)` for `0 ≤ w ≤ 1`.
    pub fn i_small(&self, w: f64) -> f64 {
        if w <= 0.0 {
            0.0
        } else if w <= 0.5 {
            self.i_series(w)
        } else {
            self.i_half + self.i_panel(0.5, w)
        }
    }

    /// `g(s) = s^{−(1+α)/2}[(1+s)^{−1/2} − 1]`.
    fn g(&self, s: f64) -> f64 {
        s.powf(-0.5 * (1.0 + self.alpha)) * sqrt_factor_minus_one(s)
    }

    fn j_panel(&self, lo: f64, hi: f64) -> f64 {
        gauss_legendre(24).integrate(lo, hi, |s| self.g(s))
    }

    /// `∫₀^ε g`, for `ε ≤ 1/2`.
    fn j_series(&self, eps: f64) -> f64 {
        let b = 0.5 * (1.0 - self.alpha);
        let mut p = eps.powf(1.0 + b);
        let mut acc = 0.0;
        for k in 1..SERIES_TERMS {
            let term = self.coeffs[k] * p / (k as f64 + b);
            acc += term;
            if term.abs() < 1e-18 * acc.abs() {
                break;
            }
            p *= eps;
        }
        acc
    }

    /// `E(w) = I(1) − 2/(α−1) + ∫_{1/w}^1 g`, for `w ≥ 1`.
    pub fn e_large(&self, w: f64) -> f64 {
        let eps = 1.0 / w;
        let j = if eps <= 0.5 {
            self.j_full - self.j_series(eps)
        } else {
            self.j_panel(eps, 1.0)
        };
        self.i_one - 2.0 / (self.alpha - 1.0) + j
    }

    /// `E′(w) = w^{(α−3)/2}[(1+1/w)^{−1/2} − 1]`.
    fn e_prime(&self, w: f64) -> f64 {
        w.powf(0.5 * (self.alpha - 3.0)) * sqrt_factor_minus_one(1.0 / w)
    }

    /// `I′(w)`.
    fn i_prime(&self, w: f64) -> f64 {
        self.i_integrand(w)
    }
}

/// `(1+s)^{−1/2} − 1` without cancellation.
#[inline]
fn sqrt_factor_minus_one(s: f64) -> f64 {
    let q = (1.0 + s).sqrt();
    -s / (q * (1.0 + q))
}

/// Reference-interval Green function at normalized points, given the
/// boundary factors `px = 1−u²`, `py = 1−v²` (computed from endpoint
/// distances by the caller).
fn green_ref(c: &StableConstants, u: f64, v: f64, px: f64, py: f64) -> f64 {
    let alpha = c.alpha;
    let d = (u - v).abs();
    let p = px * py;
    if d == 0.0 {
        return 2.0 * c.r * px.powf(alpha - 1.0) / (alpha - 1.0);
    }
    let w = p / (d * d);
    if w <= 1.0 {
        c.r * d.powf(alpha - 1.0) * c.i_small(w)
    } else {
        c.r * (2.0 / (alpha - 1.0) * p.powf(0.5 * (alpha - 1.0)) + d.powf(alpha - 1.0) * c.e_large(w))
    }
}

/// `∂_u` of the reference Green function, `u ≠ v`.
fn green_ref_du(c: &StableConstants, u: f64, v: f64, px: f64, py: f64) -> f64 {
    let alpha = c.alpha;
    let diff = u - v;
    let d = diff.abs();
    let sgn = diff.signum();
    let p = px * py;
    let w = p / (d * d);
    // ∂_u w = (1−v²)[−2u/(u−v)² − 2(1−u²)/(u−v)³]
    let dw = py * (-2.0 * u / (d * d) - 2.0 * px / (diff * d * d));
    if w <= 1.0 {
        c.r * ((alpha - 1.0) * sgn * d.powf(alpha - 2.0) * c.i_small(w)
            + d.powf(alpha - 1.0) * c.i_prime(w) * dw)
    } else {
        let dp = -2.0 * u * py;
        c.r * (p.powf(0.5 * (alpha - 3.0)) * dp
            + (alpha - 1.0) * sgn * d.powf(alpha - 2.0) * c.e_large(w)
            + d.powf(alpha - 1.0) * c.e_prime(w) * dw)
    }
}

/// The α-stable Green function of one interval `(a, b)`.
#[derive(Clone, Debug)]
pub struct StableInterval {
    pub consts: StableConstants,
    pub a: f64,
    pub b: f64,
    half: f64,
    mid: f64,
}

impl StableInterval {
    pub fn new(alpha: f64, a: f64, b: f64) -> Result<Self> {
        if !(b > a) {
            return domain(format!("empty interval ({a}, {b})"));
        }
        Ok(Self::with_constants(StableConstants::new(alpha)?, a, b))
    }

    pub fn with_constants(consts: StableConstants, a: f64, b: f64) -> Self {
        Self {
            consts,
            a,
            b,
            half: 0.5 * (b - a),
            mid: 0.5 * (a + b),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.consts.alpha
    }

    pub fn contains(&self, x: f64) -> bool {
        self.a < x && x < self.b
    }

    #[inline]
    fn normalize(&self, x: f64) -> (f64, f64) {
        let u = (x - self.mid) / self.half;
        let p = ((x - self.a) / self.half) * ((self.b - x) / self.half);
        (u, p)
    }

    /// `G(x, y)`; zero unless both points lie inside, finite on the diagonal.
    pub fn value(&self, x: f64, y: f64) -> f64 {
        if !(self.contains(x) && self.contains(y)) {
            return 0.0;
        }
        let (u, px) = self.normalize(x);
        let (v, py) = self.normalize(y);
        self.half.powf(self.alpha() - 1.0) * green_ref(&self.consts, u, v, px, py)
    }

    /// `G(x, x) = 2R (1−u²)^{α−1} L^{α−1}/(α−1)`.
    pub fn diagonal(&self, x: f64) -> f64 {
        self.value(x, x)
    }

    /// `∂_x G(x, y)` for `x ≠ y`, both inside.
    pub fn gradient(&self, x: f64, y: f64) -> Result<f64> {
        if x == y {
            return domain("gradient of the Green function is singular on the diagonal");
        }
        if !(self.contains(x) && self.contains(y)) {
            return Ok(0.0);
        }
        Ok(self.gradient_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn gradient_unchecked(&self, x: f64, y: f64) -> f64 {
        let (u, px) = self.normalize(x);
        let (v, py) = self.normalize(y);
        self.half.powf(self.alpha() - 2.0) * green_ref_du(&self.consts, u, v, px, py)
    }

    /// Coefficient `c` of the singular part `c·sign(x−y)|x−y|^{α−2}` of
    /// `∂_x G`; independent of the interval.
    pub fn singular_coefficient(&self) -> f64 {
        self.consts.r * (self.alpha() - 1.0) * self.consts.e_inf
    }

    /// `lim_{x→y} [∂_x G(x,y) − c·sign(x−y)|x−y|^{α−2}] = −2R u (1−u²)^{α−2} L^{α−2}`.
    pub fn diagonal_regular_gradient(&self, y: f64) -> f64 {
        let (u, p) = self.normalize(y);
        -2.0 * self.consts.r * u * p.powf(self.alpha() - 2.0) * self.half.powf(self.alpha() - 2.0)
    }

    /// Poisson kernel `P(x, z)` for `x` inside and `z` outside the closure.
    pub fn poisson(&self, x: f64, z: f64) -> f64 {
        if !self.contains(x) || (self.a <= z && z <= self.b) {
            return 0.0;
        }
        let (_, px) = self.normalize(x);
        let pz = ((z - self.a) / self.half) * ((z - self.b) / self.half);
        self.consts.poisson_c * (px / pz).powf(0.5 * self.alpha()) / (x - z).abs()
    }

    /// `c (1−u²)^{α/2}` and `∂_x` of its logarithm: the `x`-dependent factor
    /// of the Poisson kernel `P(x,z) = c (1−u²)^{α/2} (ζ²−1)^{−α/2} / (L|x−z|)`
    /// with `L` absorbed into the `z` factor.
    #[inline]
    pub(crate) fn poisson_inner(&self, x: f64) -> (f64, f64) {
        let (u, px) = self.normalize(x);
        (
            self.consts.poisson_c * px.powf(0.5 * self.alpha()),
            -self.alpha() * u / (px * self.half),
        )
    }

    /// `(ζ²−1)^{−α/2}` for `z` outside the closure.
    #[inline]
    pub(crate) fn poisson_outer(&self, z: f64) -> f64 {
        let pz = ((z - self.a) / self.half) * ((z - self.b) / self.half);
        pz.powf(-0.5 * self.alpha())
    }

    /// `∂_x P(x, z)`.
    pub fn poisson_dx(&self, x: f64, z: f64) -> f64 {
        let p = self.poisson(x, z);
        if p == 0.0 {
            return 0.0;
        }
        let (u, px) = self.normalize(x);
        p * (-self.alpha() * u / (px * self.half) - 1.0 / (x - z))
    }

    /// `E^x τ = ((x−a)(b−x))^{α/2} / Γ(1+α)`.
    pub fn mean_exit_time(&self, x: f64) -> f64 {
        if !self.contains(x) {
            return 0.0;
        }
        ((x - self.a) * (self.b - x)).powf(0.5 * self.alpha()) / self.consts.gamma_1a
    }
}

/// Closed-form mean exit time of the α-stable process from `(a, b)`.
pub fn stable_mean_exit_time(alpha: f64, a: f64, b: f64, x: f64) -> f64 {
    if !(a < x && x < b) {
        return 0.0;
    }
    ((x - a) * (b - x)).powf(0.5 * alpha) / gamma(1.0 + alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_models::stable_k_constant;
    use crate::quadrature::{tanh_sinh, tanh_sinh_pieces};

    fn oracle(alpha: f64) -> StableInterval {
        StableInterval::new(alpha, -1.0, 1.0).unwrap()
    }

    /// `I(w)` by direct adaptive quadrature.
    fn i_direct(alpha: f64, w: f64) -> f64 {
        tanh_sinh(|t| t.powf(alpha / 2.0 - 1.0) / (1.0 + t).sqrt(), 0.0, w, 1e-13)
            .unwrap()
            .value
    }

    #[test]
    fn near_and_far_forms_agree_with_direct_integral() {
        for alpha in [1.2, 1.5, 1.9] {
            let g = oracle(alpha);
            let c = &g.consts;
            for (x, y) in [(0.0, 0.3), (-0.5, 0.5), (0.9, -0.95), (0.1, 0.11), (0.5, 0.5001)] {
                let d = (x - y) as f64;
                let w = (1.0 - x * x) * (1.0 - y * y) / (d * d);
                let direct = c.r * d.abs().powf(alpha - 1.0) * i_direct(alpha, w);
                let v = g.value(x, y);
                assert!((v / direct - 1.0).abs() < 1e-9, "alpha={alpha} ({x},{y}): {v} vs {direct}");
            }
        }
    }

    #[test]
    fn singular_coefficient_matches_free_kernel() {
        for alpha in [1.2, 1.5, 1.9] {
            let g = oracle(alpha);
            let expected = -(alpha - 1.0) * stable_k_constant(alpha);
            assert!((g.singular_coefficient() / expected - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetric_and_vanishing_at_boundary() {
        let g = StableInterval::new(1.5, -0.3, 2.1).unwrap();
        for (x, y) in [(0.0, 1.0), (-0.2, 2.0), (1.7, 0.4)] {
            assert!((g.value(x, y) - g.value(y, x)).abs() < 1e-14 * g.value(x, y));
        }
        let x = 0.5;
        let lim: Vec<f64> = [1e-4, 1e-6, 1e-8]
            .iter()
            .map(|&d| g.value(x, 2.1 - d) / d.powf(0.75))
            .collect();
        assert!((lim[1] / lim[2] - 1.0).abs() < 1e-3);
        assert!(lim[2] > 0.0);
        assert_eq!(g.value(x, 2.2), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = oracle(1.5);
        let exact = g.gradient(0.0, 0.3).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [1e-3, 1e-4, 1e-5] {
            let fd = (g.value(eps, 0.3) - g.value(-eps, 0.3)) / (2.0 * eps);
            let err = (fd - exact).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-6 * exact.abs());
        for (x, y) in [(0.97, 0.2), (-0.6, -0.59), (0.3, 0.9)] {
            let eps = 1e-6 * (x - y as f64).abs().min(1.0 - (x as f64).abs());
            let fd = (g.value(x + eps, y) - g.value(x - eps, y)) / (2.0 * eps);
            let d = g.gradient(x, y).unwrap();
            assert!((fd / d - 1.0).abs() < 1e-5, "({x},{y}): {fd} vs {d}");
        }
        // increasing toward y from the left boundary
        assert!(g.gradient(-0.99, 0.3).unwrap() > 0.0);
        // reflection
        let a = g.gradient(0.2, -0.4).unwrap();
        let b = g.gradient(-0.2, 0.4).unwrap();
        assert!((a + b).abs() < 1e-13);
    }

    #[test]
    fn diagonal_regular_part() {
        let g = StableInterval::new(1.5, -1.0, 3.0).unwrap();
        let c = g.singular_coefficient();
        let y = 0.4;
        let d = 1e-6;
        let lhs = g.gradient(y + d, y).unwrap() - c * d.powf(-0.5);
        assert!((lhs - g.diagonal_regular_gradient(y)).abs() < 1e-4, "{lhs}");
        let rhs = g.gradient(y - d, y).unwrap() + c * d.powf(-0.5);
        assert!((rhs - g.diagonal_regular_gradient(y)).abs() < 1e-4, "{rhs}");
    }

    #[test]
    fn integrated_green_is_mean_exit_time() {
        for alpha in [1.2, 1.5, 1.9] {
            let g = StableInterval::new(alpha, -0.5, 1.5).unwrap();
            for x in [0.5, -0.3, 1.4] {
                let v = tanh_sinh_pieces(|y| g.value(x, y), &[-0.5, x, 1.5], 1e-12).unwrap();
                let m = g.mean_exit_time(x);
                assert!((v / m - 1.0).abs() < 1e-8, "alpha={alpha}, x={x}: {v} vs {m}");
            }
        }
        assert!((oracle(1.5).mean_exit_time(0.0) - 0.752253).abs() < 1e-6);
    }

    #[test]
    fn poisson_kernel_is_ikeda_watanabe_integral() {
        let g = oracle(1.5);
        let c = crate::levy_models::stable_density_constant(1.5);
        for (x, z) in [(0.0, 1.5), (0.3, -2.0), (-0.8, 1.1)] {
            let f = |y: f64| g.value(x, y) * c * (z - y as f64).abs().powf(-2.5);
            let iw = tanh_sinh_pieces(f, &[-1.0, x, 1.0], 1e-12).unwrap();
            let p = g.poisson(x, z);
            assert!((iw / p - 1.0).abs() < 1e-7, "({x},{z}): {iw} vs {p}");
            let eps = 1e-6;
            let fd = (g.poisson(x + eps, z) - g.poisson(x - eps, z)) / (2.0 * eps);
            assert!((fd / g.poisson_dx(x, z) - 1.0).abs() < 1e-6);
        }
    }
}
