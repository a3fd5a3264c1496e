//! Quadrature primitives shared by every kernel and Green-function routine.
//!
//! Three families are provided: fixed Gauss–Legendre panels, an adaptive
//! tanh-sinh (double exponential) rule that tolerates algebraic endpoint
//! singularities, and one-sided oscillatory transforms in [`oscillatory`].

pub mod oscillatory;

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// A Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    fn compute(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Integrates `f` over `[a, b]`.
    #[inline]
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(c + h * x);
        }
        acc * h
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (c + h * x, h * w))
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

const MAX_CACHED_RULE: usize = 64;

/// Cached Gauss–Legendre rule with `n` points (`1 <= n <= 64`).
pub fn gauss_legendre(n: usize) -> &'static GaussLegendre {
    static RULES: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
    assert!((1..=MAX_CACHED_RULE).contains(&n), "rule size {n} not cached");
    let rules =
        RULES.get_or_init(|| (1..=MAX_CACHED_RULE).map(GaussLegendre::compute).collect());
    &rules[n - 1]
}

/// Composite Gauss–Legendre over consecutive breakpoints.
pub fn integrate_panels<F: FnMut(f64) -> f64>(breaks: &[f64], n: usize, mut f: F) -> f64 {
    let rule = gauss_legendre(n);
    breaks
        .windows(2)
        .map(|w| rule.integrate(w[0], w[1], &mut f))
        .sum()
}

/// Integrates over `[a, b]` with panels refined geometrically toward one
/// endpoint, down to `scale`. Use when the integrand has a boundary layer of
/// width `scale` at that endpoint. The innermost panel is handled by tanh-sinh.
pub fn integrate_with_layer<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    layer_at_b: bool,
    scale: f64,
    rel_tol: f64,
) -> Result<f64> {
    let len = b - a;
    if len <= 0.0 {
        return Ok(0.0);
    }
    let scale = scale.clamp(len * 1e-300, len);
    let mut offsets = vec![scale];
    while *offsets.last().unwrap() * 2.0 < len {
        let next = offsets.last().unwrap() * 2.0;
        offsets.push(next);
    }
    offsets.push(len);
    offsets.dedup();
    let point = |off: f64| if layer_at_b { b - off } else { a + off };
    let inner = if layer_at_b {
        tanh_sinh(&f, b - scale, b, rel_tol)?.value
    } else {
        tanh_sinh(&f, a, a + scale, rel_tol)?.value
    };
    let rule = gauss_legendre(16);
    let mut acc = inner;
    for w in offsets.windows(2) {
        let (p, q) = (point(w[0]), point(w[1]));
        let (lo, hi) = if p < q { (p, q) } else { (q, p) };
        acc += rule.integrate(lo, hi, &f);
    }
    Ok(acc)
}

/// Local power exponent `q` with `f(s) ≈ c s^{-q}`, from samples at `s`, `2s`.
pub(crate) fn local_decay<F: Fn(f64) -> f64>(f: &F, s: f64) -> Option<f64> {
    let (a, b) = (f(s), f(2.0 * s));
    if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
        Some(-(b / a).ln() / std::f64::consts::LN_2)
    } else {
        None
    }
}

const TAIL_DECADES: f64 = 30.0;
const PANELS_PER_DECADE: f64 = 2.0;

/// `∫_{s0}^∞ f(s) ds` for a non-oscillatory `f` that decays at least like a
/// power `s^{-p}`, `p > 1`. Log-spaced panels cover thirty decades and the
/// rest is closed with the local power law.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: &F, s0: f64) -> Result<f64> {
    let rule = gauss_legendre(16);
    let panels = (TAIL_DECADES * PANELS_PER_DECADE) as usize;
    let du = std::f64::consts::LN_10 / PANELS_PER_DECADE;
    let u0 = s0.ln();
    let mut acc = 0.0;
    for k in 0..panels {
        let a = u0 + k as f64 * du;
        acc += rule.integrate(a, a + du, |u| {
            let s = u.exp();
            f(s) * s
        });
    }
    let s_max = (u0 + panels as f64 * du).exp();
    let fm = f(s_max);
    if fm > 0.0 {
        match local_decay(f, s_max) {
            Some(p) if p > 1.0 => acc += s_max * fm / (p - 1.0),
            _ => {
                return Err(Error::Quadrature {
                    achieved: f64::INFINITY,
                    wanted: 0.0,
                    context: "integrand does not decay faster than 1/s".into(),
                })
            }
        }
    }
    Ok(acc)
}

/// `∫_0^{s0} f(s) ds` for `f` that behaves like a power `s^{-q}`, `q < 1`,
/// near zero. Panels halve toward zero; the final sliver uses the power law.
pub fn integrate_from_zero<F: Fn(f64) -> f64>(f: &F, s0: f64) -> f64 {
    let rule = gauss_legendre(16);
    let mut top = s0;
    let mut acc = 0.0;
    for _ in 0..80 {
        let lo = 0.5 * top;
        acc += rule.integrate(lo, top, f);
        top = lo;
    }
    if let Some(q) = local_decay(f, top) {
        if q < 1.0 {
            acc += f(top) * top / (1.0 - q);
        }
    }
    acc
}

/// Graded composite Gauss–Legendre rule on `[a, b]`. Panel breakpoints are
/// `a + (b−a) g(k/panels)` with `g(τ) = τ^q/(τ^q + (1−τ)^q)`, which crowds
/// panels toward both ends when `q > 1`. Nodes are strictly interior and the
/// weights sum to `b − a`.
pub fn graded_rule(a: f64, b: f64, panels: usize, order: usize, q: f64) -> Vec<(f64, f64)> {
    let g = |t: f64| {
        let (p, r) = (t.powf(q), (1.0 - t).powf(q));
        p / (p + r)
    };
    let rule = gauss_legendre(order);
    let mut out = Vec::with_capacity(panels * order);
    for k in 0..panels {
        let lo = a + (b - a) * g(k as f64 / panels as f64);
        let hi = a + (b - a) * g((k + 1) as f64 / panels as f64);
        out.extend(rule.mapped(lo, hi));
    }
    out
}

/// Result of an adaptive rule.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

const TS_TMAX: f64 = 5.0;
const TS_MAX_LEVEL: u32 = 9;

/// One tanh-sinh node: offset from the nearer endpoint and weight, both for
/// the reference half-length 1.
#[inline]
fn ts_node(t: f64) -> (f64, f64) {
    let u = std::f64::consts::FRAC_PI_2 * t.sinh();
    let e = (-2.0 * u.abs()).exp();
    // 1 - tanh|u| = 2e/(1+e), sech^2 u = 4e/(1+e)^2
    let offset = 2.0 * e / (1.0 + e);
    let w = std::f64::consts::FRAC_PI_2 * t.cosh() * 4.0 * e / ((1.0 + e) * (1.0 + e));
    (offset, w)
}

/// Adaptive tanh-sinh on `[a, b]`. Integrable algebraic singularities at
/// either endpoint are fine; the integrand is never evaluated at `a` or `b`.
pub fn tanh_sinh<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<Estimate> {
    tanh_sinh_ends(|x, _, _| f(x), a, b, rel_tol)
}

/// Tanh-sinh where the integrand also receives the exact distances
/// `x − a` and `b − x`. Those stay accurate far below the spacing of
/// floating-point numbers near `a` or `b`, so singular factors such as
/// `(b − x)^{-1/2}` can be evaluated without cancellation.
pub fn tanh_sinh_ends<F: Fn(f64, f64, f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<Estimate> {
    match ts_adaptive(f, a, b, rel_tol) {
        Ok(e) => Ok(e),
        Err(e) if relaxed(e, rel_tol) => Ok(e),
        Err(e) => Err(Error::Quadrature {
            achieved: e.error / e.value.abs().max(1e-300),
            wanted: rel_tol,
            context: format!("tanh-sinh on [{a}, {b}]"),
        }),
    }
}

/// Refines until the level-to-level change is below `rel_tol`; on failure
/// returns the last estimate as the error.
fn ts_adaptive<F: Fn(f64, f64, f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> std::result::Result<Estimate, Estimate> {
    if b <= a {
        return Ok(Estimate {
            value: 0.0,
            error: 0.0,
        });
    }
    let half = 0.5 * (b - a);
    let eval = |t: f64| -> f64 {
        let (off, w) = ts_node(t);
        if w == 0.0 || off == 0.0 {
            return 0.0;
        }
        let d = half * off;
        let (x, da, db) = if t > 0.0 {
            (b - d, 2.0 * half - d, d)
        } else if t < 0.0 {
            (a + d, d, 2.0 * half - d)
        } else {
            (a + half, half, half)
        };
        let v = f(x, da, db);
        if v.is_finite() {
            v * w
        } else {
            0.0
        }
    };
    let mut h = 1.0;
    let mut sum = eval(0.0);
    let mut k = 1;
    while (k as f64) * h <= TS_TMAX {
        let t = k as f64 * h;
        sum += eval(t) + eval(-t);
        k += 1;
    }
    let mut prev = sum * h * half;
    let mut err = f64::INFINITY;
    for _level in 1..=TS_MAX_LEVEL {
        h *= 0.5;
        let mut k = 1;
        while (k as f64) * h <= TS_TMAX {
            let t = k as f64 * h;
            sum += eval(t) + eval(-t);
            k += 2;
        }
        let cur = sum * h * half;
        err = (cur - prev).abs();
        prev = cur;
        if err <= rel_tol * cur.abs() || err < 1e-300 {
            return Ok(Estimate { value: cur, error: err });
        }
    }
    Err(Estimate {
        value: prev,
        error: err,
    })
}

fn relaxed(e: Estimate, rel_tol: f64) -> bool {
    e.error <= (100.0 * rel_tol).max(1e-9) * e.value.abs()
}

/// Tanh-sinh over consecutive breakpoints, summing the pieces. A piece that
/// does not converge on its own is accepted when its error is small against
/// the whole sum.
pub fn tanh_sinh_pieces<F: Fn(f64) -> f64>(f: F, breaks: &[f64], rel_tol: f64) -> Result<f64> {
    let (mut acc, mut loose_err, mut worst) = (0.0, 0.0, None);
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            match ts_adaptive(|x, _, _| f(x), w[0], w[1], rel_tol) {
                Ok(e) => acc += e.value,
                Err(e) => {
                    acc += e.value;
                    loose_err += e.error;
                    worst = Some((w[0], w[1]));
                }
            }
        }
    }
    match worst {
        Some((a, b)) if !relaxed(Estimate { value: acc, error: loose_err }, rel_tol) => Err(Error::Quadrature {
            achieved: loose_err / acc.abs().max(1e-300),
            wanted: rel_tol,
            context: format!("tanh-sinh pieces, worst on [{a}, {b}]"),
        }),
        _ => Ok(acc),
    }
}

/// Fixed-level tanh-sinh nodes on `[a, b]` (weights included), for
/// integrals that must reuse one node set across many integrands.
pub fn tanh_sinh_rule(a: f64, b: f64, level: u32) -> Vec<(f64, f64)> {
    let half = 0.5 * (b - a);
    let h = 0.5f64.powi(level as i32);
    let kmax = (TS_TMAX / h).floor() as i64;
    let mut out = Vec::with_capacity(2 * kmax as usize + 1);
    for k in -kmax..=kmax {
        let t = k as f64 * h;
        let (off, w) = ts_node(t);
        if w < 1e-300 {
            continue;
        }
        let x = if k > 0 {
            b - half * off
        } else if k < 0 {
            a + half * off
        } else {
            a + half
        };
        if x <= a || x >= b {
            continue;
        }
        out.push((x, w * h * half));
    }
    out
}

/// Limit of an oscillating sequence of partial sums by repeated averaging
/// (the Euler transform). Returns the value and the last-level spread.
pub fn euler_limit(partial_sums: &[f64]) -> (f64, f64) {
    let mut v = partial_sums.to_vec();
    if v.len() < 2 {
        return (v.first().copied().unwrap_or(0.0), f64::INFINITY);
    }
    while v.len() > 2 {
        for i in 0..v.len() - 1 {
            v[i] = 0.5 * (v[i] + v[i + 1]);
        }
        v.pop();
    }
    (0.5 * (v[0] + v[1]), (v[0] - v[1]).abs())
}
