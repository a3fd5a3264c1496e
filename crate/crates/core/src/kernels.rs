//! The kernel hierarchy of a model: `h`, `V = h^{-1/2}`, `M = V²/r²`, the
//! compensated potential kernel `K` and its derivative, tabulated on a
//! geometric grid.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::levy_models::{stable_k_constant, LevyModel};
use crate::quadrature::oscillatory;

/// Upper constant in `ψ(1/r)/2 ≤ h(r) ≤ C₁ ψ(1/r)`.
pub const C1: f64 = PI * PI / 2.0;

pub fn compute_h(model: &LevyModel, r: f64) -> Result<f64> {
    model.h(r)
}

pub fn compute_v(model: &LevyModel, r: f64) -> Result<f64> {
    if r == 0.0 {
        return Ok(0.0);
    }
    if r.is_nan() || r < 0.0 {
        return domain(format!("V needs r >= 0, got {r}"));
    }
    Ok(1.0 / model.h(r)?.sqrt())
}

pub fn compute_m(model: &LevyModel, r: f64) -> Result<f64> {
    if r.is_nan() || r <= 0.0 {
        return domain(format!("M needs r > 0, got {r}"));
    }
    Ok(1.0 / (model.h(r)? * r * r))
}

/// `K(x) = π⁻¹ ∫₀^∞ (1 − cos xs)/ψ(s) ds`; closed form for the stable family.
pub fn compute_k(model: &LevyModel, x: f64) -> Result<f64> {
    if x.is_nan() {
        return domain("K at NaN");
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    match model.stable_alpha() {
        Some(alpha) if alpha > 1.0 => Ok(stable_k_constant(alpha) * x.abs().powf(alpha - 1.0)),
        _ => compute_k_quadrature(model, x),
    }
}

/// `K` by oscillatory quadrature, whatever the family.
pub fn compute_k_quadrature(model: &LevyModel, x: f64) -> Result<f64> {
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok(oscillatory::one_minus_cos(|s| 1.0 / model.psi_pos(s), x.abs())? / PI)
}

/// `K′(x) = π⁻¹ ∫₀^∞ s sin(xs)/ψ(s) ds`, odd in `x`.
pub fn compute_dk(model: &LevyModel, x: f64) -> Result<f64> {
    if x.is_nan() || x == 0.0 {
        return domain(format!("K' needs x != 0, got {x}"));
    }
    match model.stable_alpha() {
        Some(alpha) if alpha > 1.0 => {
            Ok(x.signum() * (alpha - 1.0) * stable_k_constant(alpha) * x.abs().powf(alpha - 2.0))
        }
        _ => compute_dk_quadrature(model, x),
    }
}

pub fn compute_dk_quadrature(model: &LevyModel, x: f64) -> Result<f64> {
    if x == 0.0 {
        return domain("K' needs x != 0");
    }
    Ok(oscillatory::sine(|s| s / model.psi_pos(s), x)? / PI)
}

/// Points per decade of the kernel grid.
pub const POINTS_PER_DECADE: usize = 128;

/// Tabulated kernels on `[1e-6·diam, 1e2·diam]`.
#[derive(Clone, Debug)]
pub struct KernelTable {
    model: LevyModel,
    diam: f64,
    log_r0: f64,
    log_step: f64,
    r: Vec<f64>,
    h: Vec<f64>,
    v: Vec<f64>,
    m: Vec<f64>,
    k: Vec<f64>,
    dk: Vec<f64>,
}

impl KernelTable {
    /// Builds the table for a domain of diameter `diam`. `K` and `K′` are
    /// always computed by quadrature so that the table is a genuine check of
    /// any closed form.
    pub fn build(model: &LevyModel, diam: f64) -> Result<Self> {
        if !(diam > 0.0 && diam.is_finite()) {
            return domain(format!("table diameter must be positive, got {diam}"));
        }
        let decades = 8;
        let n = decades * POINTS_PER_DECADE + 1;
        let log_r0 = (1e-6 * diam).ln();
        let log_step = std::f64::consts::LN_10 / POINTS_PER_DECADE as f64;
        let r: Vec<f64> = (0..n).map(|i| (log_r0 + i as f64 * log_step).exp()).collect();
        let rows: Vec<Result<(f64, f64, f64)>> = r
            .par_iter()
            .map(|&ri| {
                let h = model.h(ri)?;
                let k = compute_k_quadrature(model, ri)?;
                let dk = compute_dk_quadrature(model, ri)?;
                Ok((h, k, dk))
            })
            .collect();
        let mut h = Vec::with_capacity(n);
        let mut k = Vec::with_capacity(n);
        let mut dk = Vec::with_capacity(n);
        for row in rows {
            let (a, b, c) = row?;
            h.push(a);
            k.push(b);
            dk.push(c);
        }
        let v: Vec<f64> = h.iter().map(|x| 1.0 / x.sqrt()).collect();
        let m: Vec<f64> = h.iter().zip(&r).map(|(x, ri)| 1.0 / (x * ri * ri)).collect();
        Ok(Self {
            model: model.clone(),
            diam,
            log_r0,
            log_step,
            r,
            h,
            v,
            m,
            k,
            dk,
        })
    }

    pub fn model(&self) -> &LevyModel {
        &self.model
    }

    pub fn diam(&self) -> f64 {
        self.diam
    }

    /// Localization scale `R = diam ∨ 1` of the derivative bound.
    pub fn big_r(&self) -> f64 {
        self.diam.max(1.0)
    }

    pub fn grid(&self) -> &[f64] {
        &self.r
    }

    pub fn r_min(&self) -> f64 {
        self.r[0]
    }

    pub fn r_max(&self) -> f64 {
        *self.r.last().unwrap()
    }

    fn locate(&self, r: f64) -> Option<(usize, f64)> {
        let t = (r.ln() - self.log_r0) / self.log_step;
        let last = (self.r.len() - 1) as f64;
        if !(t >= -1e-9 && t <= last + 1e-9) {
            return None;
        }
        let t = t.clamp(0.0, last);
        let i = (t.floor() as usize).min(self.r.len() - 2);
        Some((i, t - i as f64))
    }

    fn interp(&self, ys: &[f64], r: f64) -> Option<f64> {
        let (i, f) = self.locate(r)?;
        let (a, b) = (ys[i], ys[i + 1]);
        if a > 0.0 && b > 0.0 {
            Some((a.ln() * (1.0 - f) + b.ln() * f).exp())
        } else {
            Some(a * (1.0 - f) + b * f)
        }
    }

    /// `h(r)`, interpolated in range and evaluated directly outside it.
    pub fn h(&self, r: f64) -> f64 {
        self.interp(&self.h, r)
            .unwrap_or_else(|| self.model.h(r).unwrap_or(f64::NAN))
    }

    pub fn v(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        self.interp(&self.v, r)
            .unwrap_or_else(|| compute_v(&self.model, r).unwrap_or(f64::NAN))
    }

    pub fn m(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return f64::INFINITY;
        }
        self.interp(&self.m, r)
            .unwrap_or_else(|| compute_m(&self.model, r).unwrap_or(f64::NAN))
    }

    /// `K(x)`; out-of-range arguments fall back to direct evaluation.
    pub fn k(&self, x: f64) -> f64 {
        let a = x.abs();
        if a == 0.0 {
            return 0.0;
        }
        self.interp(&self.k, a)
            .unwrap_or_else(|| compute_k(&self.model, a).unwrap_or(f64::NAN))
    }

    pub fn dk(&self, x: f64) -> f64 {
        let a = x.abs();
        if a == 0.0 {
            return f64::NAN;
        }
        x.signum()
            * self
                .interp(&self.dk, a)
                .unwrap_or_else(|| compute_dk(&self.model, a).unwrap_or(f64::NAN))
    }

    /// `V⁻¹(v)`; values outside the tabulated range are refused.
    pub fn v_inverse(&self, v: f64) -> Result<f64> {
        if v == 0.0 {
            return Ok(0.0);
        }
        let (lo, hi) = (self.v[0], *self.v.last().unwrap());
        if !(v >= lo && v <= hi) {
            return Err(Error::OutOfRange { value: v, lo, hi });
        }
        let j = self.v.partition_point(|&x| x < v);
        if j == 0 {
            return Ok(self.r[0]);
        }
        let i = j - 1;
        if j >= self.v.len() || self.v[j] == v {
            return Ok(self.r[j.min(self.v.len() - 1)]);
        }
        let f = (v.ln() - self.v[i].ln()) / (self.v[j].ln() - self.v[i].ln());
        Ok((self.r[i].ln() * (1.0 - f) + self.r[j].ln() * f).exp())
    }

    /// `[V⁻¹(√t)]⁻¹ ∧ t/(V²(|x|)|x|)` and the bracket `(f/C, C f)`.
    pub fn heat_kernel_envelope(&self, t: f64, x: f64, constant: f64) -> Result<HeatEnvelope> {
        if t.is_nan() || t <= 0.0 {
            return domain(format!("heat kernel envelope needs t > 0, got {t}"));
        }
        let on_diag = 1.0 / self.v_inverse(t.sqrt())?;
        let a = x.abs();
        let off_diag = if a == 0.0 {
            f64::INFINITY
        } else {
            let v = self.v(a);
            t / (v * v * a)
        };
        let value = on_diag.min(off_diag);
        Ok(HeatEnvelope {
            value,
            lower: value / constant,
            upper: value * constant,
            on_diagonal_branch: on_diag <= off_diag,
        })
    }

    /// CSV with columns `r,h,V,M,K,dK`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,h,V,M,K,dK\n");
        for i in 0..self.r.len() {
            let _ = writeln!(
                s,
                "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.r[i], self.h[i], self.v[i], self.m[i], self.k[i], self.dk[i]
            );
        }
        s
    }

    /// Checks the monotonicity and subadditivity properties of the table.
    /// `slack` is a relative tolerance on every inequality. `K(x + y)` is
    /// evaluated directly on every `k_stride`-th grid pair.
    pub fn check_invariants(&self, slack: f64, k_stride: usize) -> Result<InvariantReport> {
        let n = self.r.len();
        let mut failures = Vec::new();
        let h_monotone = self.h.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack));
        if !h_monotone {
            failures.push("h not nonincreasing".to_string());
        }
        let v_monotone = self.v.windows(2).all(|w| w[1] >= w[0] * (1.0 - slack));
        let m_decreasing = self.m.windows(2).all(|w| w[1] < w[0] * (1.0 + slack));
        if !m_decreasing {
            failures.push("M not decreasing".to_string());
        }
        let mut v_bracket = v_monotone;
        for i in 0..n {
            for j in i + 1..n {
                let lambda = self.r[j] / self.r[i];
                if self.v[j] > lambda * self.v[i] * (1.0 + slack) {
                    v_bracket = false;
                }
            }
        }
        if !v_bracket {
            failures.push("V(r) <= V(lr) <= l V(r) violated".to_string());
        }
        let stride = k_stride.max(1);
        let sub: Vec<usize> = (0..n).step_by(stride).collect();
        let pairs: Vec<(usize, usize)> = sub
            .iter()
            .flat_map(|&i| sub.iter().filter(move |&&j| j >= i).map(move |&j| (i, j)))
            .collect();
        let worst: Result<Vec<f64>> = pairs
            .par_iter()
            .map(|&(i, j)| {
                let kxy = compute_k_quadrature(&self.model, self.r[i] + self.r[j])?;
                Ok(kxy / (self.k[i] + self.k[j]))
            })
            .collect();
        let k_subadditive_ratio = worst?.into_iter().fold(0.0, f64::max);
        let k_subadditive = k_subadditive_ratio <= 1.0 + slack;
        if !k_subadditive {
            failures.push(format!("K subadditivity ratio {k_subadditive_ratio}"));
        }
        let big_r = self.big_r();
        let mut dk_constant = 0.0f64;
        for i in 0..n {
            let c = self.dk[i].abs() / self.m(self.r[i].min(big_r));
            dk_constant = dk_constant.max(c);
        }
        let dk_bounded = dk_constant.is_finite();
        if !dk_bounded {
            failures.push("|K'| / M(r ∧ R) unbounded".to_string());
        }
        let dk_sign = self.dk.iter().all(|&d| d >= 0.0);
        if !dk_sign {
            failures.push("K' negative on (0, ∞)".to_string());
        }
        let mut h_psi = (f64::INFINITY, 0.0f64);
        let mut k_v2 = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let p = self.model.psi_pos(1.0 / self.r[i]);
            let q = self.h[i] / p;
            h_psi = (h_psi.0.min(q), h_psi.1.max(q));
            if self.r[i] <= big_r {
                let e = self.k[i] * self.r[i] / (self.v[i] * self.v[i]);
                k_v2 = (k_v2.0.min(e), k_v2.1.max(e));
            }
        }
        let h_psi_ok = h_psi.0 >= 0.5 * (1.0 - slack) && h_psi.1 <= C1 * (1.0 + slack);
        if !h_psi_ok {
            failures.push(format!("h/psi(1/r) bracket {h_psi:?}"));
        }
        Ok(InvariantReport {
            model: self.model.tag(),
            points: n,
            h_nonincreasing: h_monotone,
            v_subadditive: v_bracket,
            m_decreasing,
            k_subadditive,
            k_subadditive_max_ratio: k_subadditive_ratio,
            k_pairs_checked: pairs.len(),
            dk_bound_constant: dk_constant,
            dk_bounded,
            dk_nonnegative: dk_sign,
            h_over_psi: [h_psi.0, h_psi.1],
            k_over_v2: [k_v2.0, k_v2.1],
            h_psi_bracket: h_psi_ok,
            failures,
        })
    }
}

/// Heat-kernel comparability envelope at `(t, x)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HeatEnvelope {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub on_diagonal_branch: bool,
}

/// Outcome of [`KernelTable::check_invariants`].
#[derive(Clone, Debug, Serialize)]
pub struct InvariantReport {
    pub model: String,
    pub points: usize,
    pub h_nonincreasing: bool,
    pub v_subadditive: bool,
    pub m_decreasing: bool,
    pub k_subadditive: bool,
    pub k_subadditive_max_ratio: f64,
    pub k_pairs_checked: usize,
    pub dk_bound_constant: f64,
    pub dk_bounded: bool,
    pub dk_nonnegative: bool,
    pub h_over_psi: [f64; 2],
    pub k_over_v2: [f64; 2],
    pub h_psi_bracket: bool,
    pub failures: Vec<String>,
}

impl InvariantReport {
    pub fn all_pass(&self) -> bool {
        self.failures.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_models::stable_h_constant;

    #[test]
    fn stable_h_has_closed_form() {
        let m = LevyModel::stable(1.5).unwrap();
        let a = stable_h_constant(1.5);
        assert!((a - 1.596).abs() < 1e-3, "{a}");
        for r in [1e-3, 0.5, 2.0, 30.0] {
            assert!((compute_h(&m, r).unwrap() / (a * r.powf(-1.5)) - 1.0).abs() < 1e-13);
            let (h1, h2) = (compute_h(&m, r).unwrap(), compute_h(&m, 2.0 * r).unwrap());
            assert!(h2 <= h1 && h1 <= 4.0 * h2);
        }
        assert_eq!(compute_v(&m, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn stable_k_homogeneity_and_derivative() {
        let m = LevyModel::stable(1.5).unwrap();
        let k1 = compute_k_quadrature(&m, 1.0).unwrap();
        let k2 = compute_k_quadrature(&m, 2.0).unwrap();
        assert!((k2 / k1 - 2f64.sqrt()).abs() < 1e-9);
        let d1 = compute_dk_quadrature(&m, 1.0).unwrap();
        assert!((d1 / (0.5 * k1) - 1.0).abs() < 1e-8, "{d1} vs {}", 0.5 * k1);
        let dm = compute_dk_quadrature(&m, -1.0).unwrap();
        assert!((dm + d1).abs() < 1e-14);
        assert_eq!(compute_k(&m, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn mixture_dk_matches_finite_difference() {
        let m = LevyModel::stable_mixture(&[(1.0, 1.2), (1.0, 1.8)]).unwrap();
        let x = 0.7;
        let d = compute_dk(&m, x).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4] {
            let fd = (compute_k(&m, x + eps).unwrap() - compute_k(&m, x - eps).unwrap()) / (2.0 * eps);
            let err = (fd - d).abs();
            assert!(err < 10.0 * eps, "eps={eps}: err {err}");
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn envelope_branches() {
        let m = LevyModel::stable(1.5).unwrap();
        let t = KernelTable::build(&m, 2.0).unwrap();
        let e = t.heat_kernel_envelope(1.0, 0.0, 2.0).unwrap();
        assert!(e.on_diagonal_branch);
        let a = stable_h_constant(1.5);
        // V(r) = r^{3/4}/√A, so V⁻¹(1) = A^{2/3}
        assert!((e.value - a.powf(-2.0 / 3.0)).abs() < 1e-9 * e.value);
        let far = t.heat_kernel_envelope(1.0, 10.0, 2.0).unwrap();
        assert!(!far.on_diagonal_branch);
        assert!((far.value - a / 10f64.powf(2.5)).abs() < 1e-9 * far.value);
        assert!((far.lower * 4.0 - far.upper).abs() < 1e-12 * far.upper);
        assert!(t.v_inverse(t.v(1e9)).is_err());
    }

    #[test]
    fn v_inverse_roundtrip_on_grid() {
        let m = LevyModel::stable_mixture(&[(1.0, 1.2), (1.0, 1.8)]).unwrap();
        let t = KernelTable::build(&m, 1.0).unwrap();
        for &r in t.grid().iter().step_by(37) {
            let back = t.v_inverse(t.v(r)).unwrap();
            assert!((back / r - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn stable_table_matches_closed_form() {
        let m = LevyModel::stable(1.5).unwrap();
        let t = KernelTable::build(&m, 2.0).unwrap();
        let k1 = stable_k_constant(1.5);
        for &r in t.grid() {
            assert!((t.k(r) / (k1 * r.sqrt()) - 1.0).abs() < 1e-6, "r={r}");
        }
        let a = stable_h_constant(1.5);
        assert!((t.m(1.0) / t.m(4.0) - 2.0).abs() < 1e-9);
        assert!((t.m(1.0) - 1.0 / a).abs() < 1e-9);
    }
}
