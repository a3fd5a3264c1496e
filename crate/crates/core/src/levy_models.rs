//! Symmetric unimodal Lévy models: characteristic exponent ψ, Lévy density ν,
//! and empirical weak-scaling exponents.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{domain, Error, Result};
use crate::quadrature::{gauss_legendre, integrate_from_zero, integrate_to_infinity, oscillatory};

/// Lévy density constant of the symmetric α-stable law normalized by ψ(ξ)=|ξ|^α.
pub fn stable_density_constant(alpha: f64) -> f64 {
    gamma(1.0 + alpha) * (PI * alpha / 2.0).sin() / PI
}

/// Coefficient `A_α` in `h(r) = A_α r^{-α}` for the α-stable law.
pub fn stable_h_constant(alpha: f64) -> f64 {
    2.0 * stable_density_constant(alpha) * (1.0 / (2.0 - alpha) + 1.0 / alpha)
}

/// `K(1)` for the α-stable law, `1 < α < 2`.
pub fn stable_k_constant(alpha: f64) -> f64 {
    1.0 / (2.0 * gamma(alpha) * (PI * (alpha - 1.0) / 2.0).sin())
}

type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Process family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Family {
    Stable { alpha: f64 },
    /// ψ(ξ) = Σ wᵢ |ξ|^{αᵢ}.
    StableMixture { terms: Vec<(f64, f64)> },
    /// Stable density cut to zero beyond `radius`.
    TruncatedStable { alpha: f64, radius: f64 },
    Custom { name: String },
}

/// A symmetric unimodal pure-jump Lévy model. Cheap to clone.
#[derive(Clone)]
pub struct LevyModel {
    family: Family,
    custom_nu: Option<DensityFn>,
}

impl fmt::Debug for LevyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LevyModel").field("family", &self.family).finish()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 2.0 {
        Ok(())
    } else {
        Err(Error::Model(format!("stability index {alpha} outside (0, 2)")))
    }
}

impl LevyModel {
    pub fn stable(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            family: Family::Stable { alpha },
            custom_nu: None,
        })
    }

    /// Sum of independent stable components with weights `w` and indices `α`.
    pub fn stable_mixture(terms: &[(f64, f64)]) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Model("empty mixture".into()));
        }
        for &(w, a) in terms {
            check_alpha(a)?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Model(format!("mixture weight {w} must be positive")));
            }
        }
        Ok(Self {
            family: Family::StableMixture {
                terms: terms.to_vec(),
            },
            custom_nu: None,
        })
    }

    pub fn truncated_stable(alpha: f64, radius: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Model(format!("truncation radius {radius} must be positive")));
        }
        Ok(Self {
            family: Family::TruncatedStable { alpha, radius },
            custom_nu: None,
        })
    }

    /// Model given only by its Lévy density on `(0, ∞)`. ψ and the derived
    /// kernels go through generic quadrature and are much slower.
    pub fn custom(name: &str, nu: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            family: Family::Custom { name: name.into() },
            custom_nu: Some(Arc::new(nu)),
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Short tag for reports.
    pub fn tag(&self) -> String {
        match &self.family {
            Family::Stable { alpha } => format!("stable(alpha={alpha})"),
            Family::StableMixture { terms } => {
                let parts: Vec<String> = terms.iter().map(|(w, a)| format!("{w}*|xi|^{a}")).collect();
                format!("mixture({})", parts.join("+"))
            }
            Family::TruncatedStable { alpha, radius } => {
                format!("truncated-stable(alpha={alpha},radius={radius})")
            }
            Family::Custom { name } => format!("custom({name})"),
        }
    }

    /// Stability index, for the pure stable family only.
    pub fn stable_alpha(&self) -> Option<f64> {
        match self.family {
            Family::Stable { alpha } => Some(alpha),
            _ => None,
        }
    }

    /// Characteristic exponent ψ(ξ), ξ ≥ 0.
    pub fn psi(&self, xi: f64) -> Result<f64> {
        if xi.is_nan() || xi < 0.0 {
            return domain(format!("psi needs a nonnegative frequency, got {xi}"));
        }
        if xi == 0.0 {
            return Ok(0.0);
        }
        Ok(self.psi_pos(xi))
    }

    /// ψ without argument checks; `xi > 0`.
    pub(crate) fn psi_pos(&self, xi: f64) -> f64 {
        match &self.family {
            Family::Stable { alpha } => xi.powf(*alpha),
            Family::StableMixture { terms } => terms.iter().map(|(w, a)| w * xi.powf(*a)).sum(),
            Family::TruncatedStable { alpha, radius } => truncated_psi(*alpha, *radius, xi),
            Family::Custom { .. } => {
                let nu = self.custom_nu.as_ref().expect("custom model without density");
                2.0 * oscillatory::one_minus_cos(|z| nu(z), xi).unwrap_or(f64::NAN)
            }
        }
    }

    /// Lévy density ν(r), r > 0.
    pub fn nu(&self, r: f64) -> Result<f64> {
        if r.is_nan() || r <= 0.0 {
            return domain(format!("nu needs a positive radius, got {r}"));
        }
        Ok(self.nu_pos(r))
    }

    pub(crate) fn nu_pos(&self, r: f64) -> f64 {
        match &self.family {
            Family::Stable { alpha } => stable_density_constant(*alpha) * r.powf(-1.0 - alpha),
            Family::StableMixture { terms } => terms
                .iter()
                .map(|(w, a)| w * stable_density_constant(*a) * r.powf(-1.0 - a))
                .sum(),
            Family::TruncatedStable { alpha, radius } => {
                if r > *radius {
                    0.0
                } else {
                    stable_density_constant(*alpha) * r.powf(-1.0 - alpha)
                }
            }
            Family::Custom { .. } => (self.custom_nu.as_ref().unwrap())(r),
        }
    }

    /// One-sided tail mass `∫_r^∞ ν(z) dz`.
    pub fn tail_mass(&self, r: f64) -> f64 {
        match &self.family {
            Family::Stable { alpha } => stable_density_constant(*alpha) * r.powf(-alpha) / alpha,
            Family::StableMixture { terms } => terms
                .iter()
                .map(|(w, a)| w * stable_density_constant(*a) * r.powf(-a) / a)
                .sum(),
            Family::TruncatedStable { alpha, radius } => {
                if r >= *radius {
                    0.0
                } else {
                    stable_density_constant(*alpha) * (r.powf(-alpha) - radius.powf(-alpha)) / alpha
                }
            }
            Family::Custom { .. } => {
                let nu = self.custom_nu.as_ref().unwrap();
                integrate_to_infinity(&|z| nu(z), r).unwrap_or(f64::NAN)
            }
        }
    }

    /// One-sided truncated second moment `∫_0^r z² ν(z) dz`.
    pub fn second_moment(&self, r: f64) -> f64 {
        match &self.family {
            Family::Stable { alpha } => {
                stable_density_constant(*alpha) * r.powf(2.0 - alpha) / (2.0 - alpha)
            }
            Family::StableMixture { terms } => terms
                .iter()
                .map(|(w, a)| w * stable_density_constant(*a) * r.powf(2.0 - a) / (2.0 - a))
                .sum(),
            Family::TruncatedStable { alpha, radius } => {
                stable_density_constant(*alpha) * r.min(*radius).powf(2.0 - alpha) / (2.0 - alpha)
            }
            Family::Custom { .. } => {
                let nu = self.custom_nu.as_ref().unwrap();
                integrate_from_zero(&|z| z * z * nu(z), r)
            }
        }
    }

    /// `h(r) = ∫ (1 ∧ z²/r²) ν(z) dz`.
    pub fn h(&self, r: f64) -> Result<f64> {
        if r.is_nan() || r <= 0.0 {
            return domain(format!("h needs a positive radius, got {r}"));
        }
        let v = 2.0 * (self.second_moment(r) / (r * r) + self.tail_mass(r));
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Quadrature {
                achieved: f64::INFINITY,
                wanted: 0.0,
                context: format!("h({r}) for {}", self.tag()),
            })
        }
    }

    /// `∫(1 ∧ z²) ν(dz)`, finite for every valid Lévy density.
    pub fn levy_integrability(&self) -> f64 {
        2.0 * (self.second_moment(1.0) + self.tail_mass(1.0))
    }

    /// Gaussian variance of jumps below `eps` (two-sided), used to compensate
    /// removed small jumps in simulation.
    pub fn small_jump_variance(&self, eps: f64) -> f64 {
        2.0 * self.second_moment(eps)
    }
}

/// ∫₀^a (1 − cos u) u^{-1-α} du.
fn truncated_core(alpha: f64, a: f64) -> f64 {
    if a <= 2.0 {
        let mut term_pow = a * a;
        let mut fact = 2.0;
        let mut acc = 0.0;
        let mut sign = 1.0;
        for k in 1..40 {
            let n = 2.0 * k as f64;
            acc += sign * term_pow * a.powf(-alpha) / (fact * (n - alpha));
            term_pow *= a * a;
            fact *= (n + 1.0) * (n + 2.0);
            sign = -sign;
            if term_pow / fact < 1e-18 {
                break;
            }
        }
        return acc;
    }
    let total = 1.0 / (2.0 * stable_density_constant(alpha));
    total - truncated_tail(alpha, a)
}

/// ∫_a^∞ (1 − cos u) u^{-1-α} du for a > 2.
fn truncated_tail(alpha: f64, a: f64) -> f64 {
    a.powf(-alpha) / alpha - cos_tail(alpha + 1.0, a)
}

/// ∫_a^∞ cos(u) u^{-β} du.
fn cos_tail(beta: f64, a: f64) -> f64 {
    if a >= 60.0 {
        // i e^{ia} Σ (−i)^k (β)_k a^{-β-k}, real part
        let (s, c) = a.sin_cos();
        let mut re = 0.0;
        let mut coef = a.powf(-beta);
        for k in 0..60 {
            // i (−i)^k e^{ia}: k mod 4 selects the phase
            let v = match k % 4 {
                0 => -s,
                1 => c,
                2 => s,
                _ => -c,
            };
            re += coef * v;
            coef *= (beta + k as f64) / a;
            if coef.abs() < 1e-18 * a.powf(-beta) {
                break;
            }
        }
        return re;
    }
    // Half-period pieces from a to the next multiple of π, then to 60 and the
    // asymptotic series beyond.
    let rule = gauss_legendre(20);
    let f = |u: f64| u.cos() * u.powf(-beta);
    let mut acc = 0.0;
    let mut lo = a;
    while lo < 60.0 {
        let hi = (lo + PI).min(60.0);
        acc += rule.integrate(lo, hi, f);
        lo = hi;
    }
    acc + cos_tail(beta, 60.0)
}

fn truncated_psi(alpha: f64, radius: f64, xi: f64) -> f64 {
    let c = stable_density_constant(alpha);
    let a = xi * radius;
    if a > 2.0 {
        xi.powf(alpha) * (1.0 - 2.0 * c * truncated_tail(alpha, a))
    } else {
        2.0 * c * xi.powf(alpha) * truncated_core(alpha, a)
    }
}

/// Empirical weak-scaling exponents and constants of ψ.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub alpha_lower: f64,
    pub c_lower: f64,
    pub alpha_upper: f64,
    pub c_upper: f64,
    /// Lower exponent and constant restricted to θ ≥ 1.
    pub alpha_lower_1: Option<f64>,
    pub c_lower_1: Option<f64>,
    pub theta_min: f64,
    pub theta_max: f64,
    pub n_grid: usize,
    /// Whether `alpha_lower_1 > 1`, the standing assumption for gradient
    /// perturbations.
    pub passes: bool,
}

struct Bracket {
    lower: f64,
    c_lower: f64,
    upper: f64,
    c_upper: f64,
}

/// Extremal slopes of `log ψ` on a geometric grid. The exponents are read off
/// the extreme ratio curves `m(λ) = min_θ ψ(λθ)/ψ(θ)` and `M(λ) = max_θ …`
/// between `λ = Λ^{f₁}` and `λ = Λ^{f₂}`, where Λ spans the whole grid and θ
/// runs over the lowest `theta_frac` of the grid (all of it when 1).
/// Taking a slope between two λ removes the constant from the estimate.
fn bracket(psi: &[f64], ratio: f64, theta_frac: f64, window: (f64, f64)) -> Bracket {
    let n = psi.len();
    let span = n - 1;
    let j1 = (span as f64 * window.0).round().max(1.0) as usize;
    let j2 = (span as f64 * window.1).round().max(j1 as f64 + 1.0).min(span as f64) as usize;
    let theta_top = ((span as f64 * theta_frac).round() as usize).max(1);
    let extremes = |j: usize| {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for i in 0..(n - j).min(theta_top + 1) {
            let r = psi[i + j] / psi[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    };
    let (m1, big1) = extremes(j1);
    let (m2, big2) = extremes(j2);
    let dl = (j2 - j1) as f64 * ratio.ln();
    let mut lower = (m2 / m1).ln() / dl;
    let mut upper = (big2 / big1).ln() / dl;
    if lower > upper {
        let mid = 0.5 * (lower + upper);
        lower = mid;
        upper = mid;
    }
    let mut c_lower = 1.0f64;
    let mut c_upper = 1.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let lam_ln = (j - i) as f64 * ratio.ln();
            let r = psi[j] / psi[i];
            c_lower = c_lower.min(r / (lower * lam_ln).exp());
            c_upper = c_upper.max(r / (upper * lam_ln).exp());
        }
    }
    Bracket {
        lower,
        c_lower,
        upper,
        c_upper,
    }
}

/// Estimates weak lower/upper scaling exponents of ψ over `[θ_min, θ_max]`
/// with `n_grid` geometric points.
pub fn estimate_scaling(
    model: &LevyModel,
    theta_min: f64,
    theta_max: f64,
    n_grid: usize,
) -> Result<ScalingReport> {
    if !(theta_min > 0.0 && theta_max > theta_min) {
        return domain(format!("bad scaling range [{theta_min}, {theta_max}]"));
    }
    if n_grid < 16 {
        return domain(format!("scaling grid needs at least 16 points, got {n_grid}"));
    }
    let ratio = (theta_max / theta_min).powf(1.0 / (n_grid - 1) as f64);
    let grid: Vec<f64> = (0..n_grid).map(|i| theta_min * ratio.powi(i as i32)).collect();
    let psi: Vec<f64> = grid.iter().map(|&t| model.psi_pos(t)).collect();
    for (i, w) in psi.windows(2).enumerate() {
        if !(w[0] > 0.0 && w[1].is_finite() && w[1] >= w[0]) {
            return Err(Error::Model(format!(
                "psi is not positive and nondecreasing near theta={:e}",
                grid[i]
            )));
        }
    }
    // The global window keeps λθ away from the far end of the grid. On θ ≥ 1
    // the binding θ sit at the threshold and only large λ matter.
    let global = bracket(&psi, ratio, 1.0, (1.0 / 8.0, 3.0 / 8.0));
    let first_one = grid.iter().position(|&t| t >= 1.0);
    let (alpha_lower_1, c_lower_1) = match first_one {
        Some(i) if n_grid - i >= 16 => {
            let b = bracket(&psi[i..], ratio, 0.25, (0.25, 0.75));
            (Some(b.lower), Some(b.c_lower))
        }
        _ => (None, None),
    };
    Ok(ScalingReport {
        alpha_lower: global.lower,
        c_lower: global.c_lower,
        alpha_upper: global.upper,
        c_upper: global.c_upper,
        alpha_lower_1,
        c_lower_1,
        theta_min,
        theta_max,
        n_grid,
        passes: alpha_lower_1.is_some_and(|a| a > 1.0),
    })
}

/// Scaling estimate on `[10^{-d}, 10^{d}]` with 64 points per decade.
pub fn estimate_scaling_default(model: &LevyModel, decades: u32) -> Result<ScalingReport> {
    let d = decades as f64;
    estimate_scaling(model, 10f64.powf(-d), 10f64.powf(d), (128 * decades + 1) as usize)
}

/// Whether ν is nonincreasing on a log grid of `n_grid` points over
/// `[1e-6, 1e6]`.
pub fn check_unimodal(model: &LevyModel, n_grid: usize) -> bool {
    let n = n_grid.max(2);
    let ratio = 1e12f64.powf(1.0 / (n - 1) as f64);
    let mut prev = f64::INFINITY;
    for i in 0..n {
        let v = model.nu_pos(1e-6 * ratio.powi(i as i32));
        if !(v.is_finite() && v >= 0.0) || v > prev * (1.0 + 1e-12) {
            return false;
        }
        prev = v;
    }
    true
}

/// ψ(ξ) by quadrature of ν, independent of any closed form.
pub fn psi_by_quadrature(model: &LevyModel, xi: f64) -> Result<f64> {
    if xi == 0.0 {
        return Ok(0.0);
    }
    match model.family() {
        Family::TruncatedStable { radius, .. } => {
            // ν has compact support: integrate (1 − cos) ν over (0, radius).
            let r = *radius;
            let f = |z: f64| {
                let t = (0.5 * xi * z).sin();
                2.0 * t * t * model.nu_pos(z)
            };
            let head = integrate_from_zero(&f, r.min(1.0 / xi));
            let mut acc = head;
            let mut lo = r.min(1.0 / xi);
            let step = PI / xi;
            let rule = gauss_legendre(20);
            while lo < r {
                let hi = (lo + step).min(r);
                acc += rule.integrate(lo, hi, f);
                lo = hi;
            }
            Ok(2.0 * acc)
        }
        _ => Ok(2.0 * oscillatory::one_minus_cos(|z| model.nu_pos(z), xi)?),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_exponent_and_origin() {
        let m = LevyModel::stable(1.5).unwrap();
        assert!((m.psi(2.0).unwrap() - 2f64.powf(1.5)).abs() < 1e-15);
        assert_eq!(m.psi(0.0).unwrap(), 0.0);
        assert!(m.psi(-1.0).is_err());
        assert!(m.nu(0.0).is_err());
    }

    #[test]
    fn mixture_at_unit_frequency() {
        let m = LevyModel::stable_mixture(&[(1.0, 1.2), (1.0, 1.8)]).unwrap();
        assert!((m.psi(1.0).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn stable_density_homogeneity() {
        let m = LevyModel::stable(1.5).unwrap();
        for r in [1e-3, 0.7, 40.0] {
            let q = m.nu(2.0 * r).unwrap() / m.nu(r).unwrap();
            assert!((q - 2f64.powf(-2.5)).abs() < 1e-14);
        }
    }

    #[test]
    fn density_constant_normalizes_psi() {
        // ∫(1 − cos z) C |z|^{-1-α} dz = 1, the integral done by quadrature
        for alpha in [1.2, 1.5, 1.9] {
            let c = stable_density_constant(alpha);
            let v = 2.0 * oscillatory::one_minus_cos(|z: f64| c * z.powf(-1.0 - alpha), 1.0).unwrap();
            assert!((v - 1.0).abs() < 1e-9, "alpha={alpha}: {v}");
        }
    }

    #[test]
    fn psi_quadrature_matches_closed_form() {
        let m = LevyModel::stable(1.5).unwrap();
        for k in -3..=3 {
            let xi = 10f64.powi(k);
            let q = psi_by_quadrature(&m, xi).unwrap();
            assert!((q / m.psi(xi).unwrap() - 1.0).abs() < 1e-6, "xi={xi}");
        }
    }

    #[test]
    fn truncated_psi_matches_quadrature() {
        let m = LevyModel::truncated_stable(1.5, 2.0).unwrap();
        for xi in [1e-3, 0.3, 0.9, 1.1, 7.0, 29.0, 31.0, 400.0] {
            let q = psi_by_quadrature(&m, xi).unwrap();
            let c = m.psi(xi).unwrap();
            assert!((q / c - 1.0).abs() < 1e-8, "xi={xi}: {q} vs {c}");
        }
        assert_eq!(m.nu(2.5).unwrap(), 0.0);
    }

    #[test]
    fn truncated_h_vanishes_at_large_radius() {
        let m = LevyModel::truncated_stable(1.5, 1.0).unwrap();
        let mut prev = f64::INFINITY;
        for r in [1.0, 10.0, 1e3, 1e6] {
            let h = m.h(r).unwrap();
            assert!(h < prev);
            prev = h;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn stable_scaling_is_exact() {
        let m = LevyModel::stable(1.5).unwrap();
        let r = estimate_scaling(&m, 1e-3, 1e3, 6 * 64 + 1).unwrap();
        assert!((r.alpha_lower - 1.5).abs() < 1e-6 && (r.alpha_upper - 1.5).abs() < 1e-6);
        assert!((r.c_lower - 1.0).abs() < 1e-6 && (r.c_upper - 1.0).abs() < 1e-6);
        assert!(r.passes);
        let r = estimate_scaling(&m, 1.0, 10.0, 16).unwrap();
        assert!((r.alpha_lower - 1.5).abs() < 1e-6 && (r.alpha_upper - 1.5).abs() < 1e-6);
    }

    #[test]
    fn mixture_scaling_brackets() {
        let m = LevyModel::stable_mixture(&[(1.0, 1.2), (1.0, 1.8)]).unwrap();
        let r = estimate_scaling(&m, 1e-12, 1e12, 24 * 64 + 1).unwrap();
        assert!((r.alpha_lower - 1.2).abs() < 0.01, "{}", r.alpha_lower);
        assert!((r.alpha_upper - 1.8).abs() < 0.01, "{}", r.alpha_upper);
        assert!((r.alpha_lower_1.unwrap() - 1.8).abs() < 0.01, "{:?}", r.alpha_lower_1);
        assert!(r.c_lower <= 1.0 && r.c_upper >= 1.0);
    }

    #[test]
    fn unimodality() {
        assert!(check_unimodal(&LevyModel::stable(1.5).unwrap(), 200));
        let mix = LevyModel::stable_mixture(&[(1.0, 1.2), (1.0, 1.8)]).unwrap();
        assert!(check_unimodal(&mix, 200));
        let bad = LevyModel::custom("r*exp(-r)", |r| r * (-r).exp());
        assert!(!check_unimodal(&bad, 200));
    }
}
