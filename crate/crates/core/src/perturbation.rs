//! Nyström discretization of the perturbation formula
//! `G̃(x,y) = G(x,y) + ∫_D G̃(x,z) b(z) ∂_z G(z,y) dz`
//! and the comparability of `G̃` with `G`.
//!
//! For a fixed source `x` the row `z ↦ G̃(x,z)` solves a Fredholm equation of
//! the second kind. On the grid `y_1..y_n` with weights `w_j` it reads
//! `Φ (I − B) = G` with `B[j,i] = w_j b(y_j) ∂G(y_j, y_i)` off the diagonal.
//! The `c·sign(z−y)|z−y|^{α−2}` singularity of `∂G` is subtracted and
//! integrated in closed form, which moves its mass onto `B[i,i]`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::geometry::C11Set;
use crate::green::checks::{graded_points, kappa_sup};
use crate::green::{exit_cdf_batch, exit_cdf_weighted, integrate_exit, GreenFunction, StableGreen};
use crate::kato::DriftField;
use crate::quadrature::{gauss_legendre, tanh_sinh_pieces};

/// Gauss–Legendre order of every grid panel.
pub const PANEL_ORDER: usize = 8;

/// Quadrature grid on `D`: graded Gauss–Legendre panels per component.
#[derive(Clone, Debug, Serialize)]
pub struct NystromGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    comp_of: Vec<usize>,
    /// `(lo, hi, first node index)` per panel, in increasing order.
    panels: Vec<(f64, f64, usize)>,
    grading: f64,
}

impl NystromGrid {
    /// About `n` nodes shared between the components in proportion to their
    /// lengths, graded toward every boundary point with exponent `2/α`.
    pub fn new(d: &C11Set, n: usize, alpha: f64) -> Result<Self> {
        Self::with_grading(d, n, 2.0 / alpha)
    }

    pub fn with_grading(d: &C11Set, n: usize, grading: f64) -> Result<Self> {
        Self::with_breaks(d, n, grading, &[])
    }

    /// Like [`NystromGrid::with_grading`], with panels split at `breaks`.
    /// Putting a source point on a panel boundary keeps the cusp of
    /// `G(x, ·)` out of every panel interior.
    pub fn with_breaks(d: &C11Set, n: usize, grading: f64, breaks: &[f64]) -> Result<Self> {
        if n < PANEL_ORDER * d.len() {
            return domain(format!("grid needs at least {} nodes, got {n}", PANEL_ORDER * d.len()));
        }
        if !(grading >= 1.0) {
            return domain(format!("grading exponent must be >= 1, got {grading}"));
        }
        let total = d.measure();
        let rule = gauss_legendre(PANEL_ORDER);
        let mut grid = Self {
            nodes: Vec::new(),
            weights: Vec::new(),
            comp_of: Vec::new(),
            panels: Vec::new(),
            grading,
        };
        for (k, &(a, b)) in d.intervals().iter().enumerate() {
            let share = n as f64 * (b - a) / total / PANEL_ORDER as f64;
            let count = (share.round() as usize).max(1);
            for p in 0..count {
                let (lo, hi) = panel_bounds(a, b, count, p, grading);
                let mut cuts = vec![lo];
                cuts.extend(breaks.iter().copied().filter(|&x| x > lo + 1e-9 * (hi - lo) && x < hi - 1e-9 * (hi - lo)));
                cuts.push(hi);
                cuts.sort_by(f64::total_cmp);
                for w in cuts.windows(2) {
                    grid.panels.push((w[0], w[1], grid.nodes.len()));
                    for (x, wt) in rule.mapped(w[0], w[1]) {
                        grid.nodes.push(x);
                        grid.weights.push(wt);
                        grid.comp_of.push(k);
                    }
                }
            }
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn component_of(&self, i: usize) -> usize {
        self.comp_of[i]
    }

    pub fn grading(&self) -> f64 {
        self.grading
    }

    pub fn counts_per_component(&self) -> Vec<usize> {
        let k = self.comp_of.last().map_or(0, |&c| c + 1);
        (0..k).map(|c| self.comp_of.iter().filter(|&&x| x == c).count()).collect()
    }

    pub fn panel_breaks(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.panels.iter().flat_map(|&(lo, hi, _)| [lo, hi]).collect();
        v.dedup();
        v
    }

    fn panel_index(&self, i: usize) -> usize {
        self.panels.partition_point(|&(_, _, start)| start <= i) - 1
    }

    /// Polynomial interpolation of node values on the panel containing `y`.
    pub fn interpolate(&self, values: &[f64], y: f64) -> Option<f64> {
        let p = self.panels.iter().find(|&&(lo, hi, _)| lo <= y && y <= hi)?;
        let xs = &self.nodes[p.2..p.2 + PANEL_ORDER];
        let vs = &values[p.2..p.2 + PANEL_ORDER];
        Some(lagrange_basis(xs, y).iter().zip(vs).map(|(l, v)| l * v).sum())
    }
}

fn panel_bounds(a: f64, b: f64, count: usize, p: usize, q: f64) -> (f64, f64) {
    let g = |t: f64| {
        let (u, v) = (t.powf(q), (1.0 - t).powf(q));
        a + (b - a) * u / (u + v)
    };
    let lo = if p == 0 { a } else { g(p as f64 / count as f64) };
    let hi = if p + 1 == count { b } else { g((p + 1) as f64 / count as f64) };
    (lo, hi)
}

/// `G` and `∂G` on grid pairs, and the weighted kernel of `∂G` with
/// product-integration weights near the diagonal.
#[derive(Clone, Debug)]
pub struct DiscreteGreen {
    /// `G(y_i, y_k)`.
    pub g: DMatrix<f64>,
    /// `∂_z G(y_j, y_i)` for `j ≠ i`; the diagonal is `NaN`.
    pub dg: DMatrix<f64>,
    /// `K[j,i]` with `∫_D φ(z) ∂_z G(z, y_i) dz ≈ Σ_j φ(y_j) K[j,i]`.
    pub kernel: DMatrix<f64>,
    /// The same for `G`: `∫_D φ(z) G(z, y_i) dz ≈ Σ_j φ(y_j) W[j,i]`, with
    /// the `c/(α−1)·|u|^{α−1}` cusp of `G` product-integrated.
    pub green_weights: DMatrix<f64>,
}

/// Evaluates `G` and `∂G` on the grid and assembles the weighted kernel.
///
/// On the panel holding `y_i` and its neighbours, `∂G = s + r` with
/// `s(u) = c·sign(u)|u|^{α−2}`. The `s` part is integrated against the
/// panel's Lagrange basis exactly up to a smooth quadrature, the `r` part by
/// the panel rule; `r(y_i, y_i)` is the diagonal regular gradient. Farther
/// panels use the plain rule.
pub fn discretize_green<G: GreenFunction + ?Sized>(g: &G, grid: &NystromGrid) -> Result<DiscreteGreen> {
    let ys = grid.nodes();
    if ys.windows(2).any(|w| w[0] >= w[1]) {
        return domain("grid nodes coincide");
    }
    let (c, alpha) = g
        .singular_part()
        .ok_or_else(|| Error::Unsupported(format!("{:?} Green function has no gradient", g.kind())))?;
    let (gm, dm) = g.matrices(ys, ys)?;
    let n = ys.len();
    let s = |u: f64| c * u.signum() * u.abs().powf(alpha - 2.0);
    let cusp = |u: f64| c / (alpha - 1.0) * u.abs().powf(alpha - 1.0);
    let cols: Result<Vec<(Vec<f64>, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y = ys[i];
            let mut col: Vec<f64> = (0..n)
                .map(|j| if j == i { 0.0 } else { grid.weights[j] * dm[(j, i)] })
                .collect();
            let mut gcol: Vec<f64> = (0..n).map(|j| grid.weights[j] * gm[(j, i)]).collect();
            let pi = grid.panel_index(i);
            let lo = pi.saturating_sub(1);
            let hi = (pi + 1).min(grid.panels.len() - 1);
            for p in lo..=hi {
                let start = grid.panels[p].2;
                if grid.comp_of[start] != grid.comp_of[i] {
                    continue;
                }
                let w = singular_panel_weights(grid, p, y, alpha - 2.0, true);
                let wg = singular_panel_weights(grid, p, y, alpha - 1.0, false);
                for m in 0..PANEL_ORDER {
                    let j = start + m;
                    col[j] = if j == i {
                        0.0
                    } else {
                        grid.weights[j] * (dm[(j, i)] - s(ys[j] - y))
                    } + c * w[m];
                    gcol[j] = grid.weights[j] * (gm[(j, i)] - cusp(ys[j] - y))
                        + c / (alpha - 1.0) * wg[m];
                }
            }
            col[i] += grid.weights[i] * g.diagonal_regular_gradient(y)?;
            Ok((col, gcol))
        })
        .collect();
    let cols = cols?;
    let kernel = DMatrix::from_fn(n, n, |j, i| cols[i].0[j]);
    let green_weights = DMatrix::from_fn(n, n, |j, i| cols[i].1[j]);
    Ok(DiscreteGreen { g: gm, dg: dm, kernel, green_weights })
}

/// `∫_panel L_m(z) σ(z−y)|z−y|^e dz` for the Lagrange basis `L_m` of panel
/// `p`, with `σ = sign` when `signed` and `σ = 1` otherwise. With
/// `F(U) = ∫_0^{|U|} φ(y + sign(U) w) w^e dw` and `w = |U| v^{1/(e+1)}`,
/// `F(U) = |U|^{e+1}/(e+1) ∫_0^1 φ(y + U v^{1/(e+1)}) dv` has a smooth
/// integrand.
fn singular_panel_weights(grid: &NystromGrid, p: usize, y: f64, e: f64, signed: bool) -> [f64; PANEL_ORDER] {
    let (lo, hi, start) = grid.panels[p];
    let xs = &grid.nodes[start..start + PANEL_ORDER];
    let rule = gauss_legendre(32);
    let pw = 1.0 / (e + 1.0);
    let mut out = [0.0; PANEL_ORDER];
    for (u, end_sign) in [(hi - y, 1.0), (lo - y, -1.0)] {
        if u == 0.0 {
            continue;
        }
        // ∫_{u0}^{u1} = F(u1) − F(u0) for signed kernels; the even kernel
        // flips the sign of F on the negative side.
        let sign = if signed { end_sign } else { end_sign * u.signum() };
        let scale = u.abs().powf(e + 1.0) / (e + 1.0);
        for (t, w) in rule.mapped(0.0, 1.0) {
            let z = y + u * t.powf(pw);
            let basis = lagrange_basis(xs, z);
            for m in 0..PANEL_ORDER {
                out[m] += sign * scale * w * basis[m];
            }
        }
    }
    out
}

fn lagrange_basis(xs: &[f64], z: f64) -> [f64; PANEL_ORDER] {
    let mut out = [1.0; PANEL_ORDER];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, &xj) in xs.iter().enumerate() {
            if j != i {
                *o *= (z - xj) / (xs[i] - xj);
            }
        }
    }
    out
}

impl DiscreteGreen {
    /// The weighted operator `B[j,i] = b(y_j) K[j,i]`.
    pub fn operator(&self, b: &[f64]) -> DMatrix<f64> {
        let mut m = self.kernel.clone();
        for (j, bj) in b.iter().enumerate() {
            m.row_mut(j).scale_mut(*bj);
        }
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    Direct,
    FixedPoint,
}

/// Fixed-point residual target on `G`-normalized values.
pub const RESIDUAL_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 200;

/// Solved `G̃` on grid pairs. Rows index the source `x`, columns the target.
#[derive(Clone, Debug)]
pub struct PerturbedGreen {
    pub gt: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub mode: SolveMode,
    /// Discrete κ: `max_{i,k} Σ_j G_ij |B_jk| / G_ik`.
    pub kappa_sup: f64,
    /// `G`-normalized sup change per fixed-point iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// `max |G̃ − G − G̃B| / max G`.
    pub residual: f64,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Solves the discretized perturbation formula. Fixed-point mode is refused
/// unless the discrete κ is below 1.
pub fn solve_perturbed(
    disc: &DiscreteGreen,
    b: &DriftField,
    grid: &NystromGrid,
    mode: SolveMode,
) -> Result<PerturbedGreen> {
    let bv: Vec<f64> = grid.nodes().iter().map(|&y| b.eval(y)).collect();
    if let Some(j) = bv.iter().position(|v| !v.is_finite()) {
        return domain(format!("drift is not finite at node {}", grid.nodes()[j]));
    }
    let bop = disc.operator(&bv);
    let n = grid.len();
    let g = &disc.g;
    let kappa = {
        let gabs = g * bop.abs();
        let mut k: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                k = k.max(gabs[(i, j)] / g[(i, j)]);
            }
        }
        k
    };
    let system = (DMatrix::identity(n, n) - &bop).transpose();
    let lu = system.lu();
    let (gt, trace, converged) = match mode {
        SolveMode::Direct => {
            let sol = lu
                .solve(&g.transpose())
                .ok_or_else(|| Error::Singular("perturbation system I − B".into()))?;
            (sol.transpose(), vec![], true)
        }
        SolveMode::FixedPoint => {
            if kappa >= 1.0 {
                return Err(Error::Refused(format!(
                    "fixed-point iteration needs κ_sup < 1, discrete κ_sup = {kappa:.4}; use the direct solve"
                )));
            }
            let mut cur = g.clone();
            let mut trace = Vec::new();
            let mut converged = false;
            for _ in 0..MAX_ITERATIONS {
                let next = g + &cur * &bop;
                let mut delta: f64 = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        delta = delta.max((next[(i, j)] - cur[(i, j)]).abs() / g[(i, j)]);
                    }
                }
                cur = next;
                trace.push(delta);
                if delta <= RESIDUAL_TOL {
                    converged = true;
                    break;
                }
            }
            (cur, trace, converged)
        }
    };
    let res = &gt - g - &gt * &bop;
    let residual = res.amax() / g.amax();
    Ok(PerturbedGreen {
        gt,
        g: g.clone(),
        mode,
        kappa_sup: kappa,
        trace,
        converged,
        residual,
        lu,
    })
}

impl PerturbedGreen {
    /// `G̃(x, y_k)` for all nodes and an arbitrary source `x ∈ D`, from the
    /// row equation `Φ (I − B) = G(x, ·)`.
    pub fn row<G: GreenFunction + ?Sized>(&self, g: &G, grid: &NystromGrid, x: f64) -> Result<Vec<f64>> {
        if let Some(i) = grid.nodes().iter().position(|&y| y == x) {
            return Ok(self.gt.row(i).iter().copied().collect());
        }
        if !g.domain().contains(x) {
            return domain(format!("source {x} outside the domain"));
        }
        let src = g.source(x)?;
        let rhs = DVector::from_iterator(grid.len(), grid.nodes().iter().map(|&y| src(y).0));
        let sol = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("perturbation row solve".into()))?;
        Ok(sol.iter().copied().collect())
    }

    /// `y ↦ G̃(x,y)/G(x,y)` interpolated from a row; the ratio is bounded and
    /// smooth enough for panel interpolation where `G̃` alone is not.
    pub fn ratio_interpolant<'a, G: GreenFunction + ?Sized>(
        &self,
        g: &'a G,
        grid: &'a NystromGrid,
        x: f64,
        row: &[f64],
    ) -> Result<RatioRow<'a>> {
        let src = g.source(x)?;
        let q = grid
            .nodes()
            .iter()
            .zip(row)
            .map(|(&y, &v)| v / src(y).0)
            .collect();
        Ok(RatioRow { grid, q })
    }
}

/// Ratio `G̃(x,·)/G(x,·)` on the grid with panel interpolation.
pub struct RatioRow<'a> {
    grid: &'a NystromGrid,
    q: Vec<f64>,
}

impl RatioRow<'_> {
    pub fn at(&self, y: f64) -> f64 {
        self.grid.interpolate(&self.q, y).unwrap_or(0.0)
    }

    pub fn node_values(&self) -> &[f64] {
        &self.q
    }

    /// Panel boundaries, where the interpolant may jump.
    pub fn breaks(&self) -> Vec<f64> {
        self.grid.panel_breaks()
    }
}

/// Sup, inf and histogram of `G̃/G` over grid pairs.
#[derive(Clone, Debug, Serialize)]
pub struct ComparabilityReport {
    pub pairs: usize,
    pub sup: f64,
    pub inf: f64,
    /// `max(sup, 1/inf)`.
    pub constant: f64,
    /// `(lo, hi, count)` over 20 equal bins of `[inf, sup]`.
    pub histogram: Vec<(f64, f64, usize)>,
}

pub fn comparability_report(pg: &PerturbedGreen) -> ComparabilityReport {
    let n = pg.g.nrows();
    let mut ratios = Vec::with_capacity(n * n);
    for i in 0..n {
        if pg.g.row(i).iter().all(|&v| v == 0.0) {
            continue;
        }
        for k in 0..n {
            if pg.g[(i, k)] > 0.0 {
                ratios.push(pg.gt[(i, k)] / pg.g[(i, k)]);
            }
        }
    }
    let sup = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inf = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let bins = 20;
    let width = (sup - inf) / bins as f64;
    let mut counts = vec![0usize; bins];
    for r in &ratios {
        let k = if width > 0.0 { (((r - inf) / width) as usize).min(bins - 1) } else { 0 };
        counts[k] += 1;
    }
    let histogram = (0..bins)
        .map(|k| (inf + k as f64 * width, inf + (k + 1) as f64 * width, counts[k]))
        .collect();
    ComparabilityReport {
        pairs: ratios.len(),
        sup,
        inf,
        constant: sup.max(1.0 / inf),
        histogram,
    }
}

/// Outcome of [`find_epsilon`].
#[derive(Clone, Debug, Serialize)]
pub struct EpsilonSearch {
    /// Largest tested scale with `κ_sup(D_s) < threshold`.
    pub scale: f64,
    pub kappa_sup: f64,
    pub threshold: f64,
    /// Every `(s, κ_sup(D_s))` evaluated.
    pub tested: Vec<(f64, f64)>,
}

/// Points per component on which κ is maximized.
pub const KAPPA_GRID: usize = 8;

/// Bisection in `log s` over the family `D_s = base.scaled(s)`,
/// `s ∈ [s_lo, s_hi]`, for the stable Green function of index `alpha`.
pub fn find_epsilon(
    base: &C11Set,
    alpha: f64,
    b: &DriftField,
    threshold: f64,
    (s_lo, s_hi): (f64, f64),
) -> Result<EpsilonSearch> {
    if !(0.0 < s_lo && s_lo < s_hi) {
        return domain(format!("scale range must satisfy 0 < lo < hi, got ({s_lo}, {s_hi})"));
    }
    let mut tested = Vec::new();
    let mut kappa_at = |s: f64| -> Result<f64> {
        let d = base.scaled(s)?;
        let g = StableGreen::new(alpha, &d)?;
        let pts = graded_points(&d, KAPPA_GRID, 2.0 / alpha);
        let k = kappa_sup(&g, |z| b.eval(z), &pts)?;
        tested.push((s, k));
        Ok(k)
    };
    let k_hi = kappa_at(s_hi)?;
    if k_hi < threshold {
        return Ok(EpsilonSearch { scale: s_hi, kappa_sup: k_hi, threshold, tested });
    }
    let k_lo = kappa_at(s_lo)?;
    if k_lo >= threshold {
        return Err(Error::Refused(format!(
            "κ_sup = {k_lo:.4} >= {threshold} already at the smallest scale {s_lo}"
        )));
    }
    let (mut lo, mut hi, mut k_best) = (s_lo, s_hi, k_lo);
    while hi / lo > 1.0 + 1e-4 {
        let mid = (lo * hi).sqrt();
        let k = kappa_at(mid)?;
        if k < threshold {
            lo = mid;
            k_best = k;
        } else {
            hi = mid;
        }
    }
    Ok(EpsilonSearch { scale: lo, kappa_sup: k_best, threshold, tested })
}

/// `P̃_D(x,z) = ∫_D G̃(x,y) ν(|z−y|) dy` from a solved row.
pub fn perturbed_poisson<G: GreenFunction + ?Sized>(
    g: &G,
    ratio: &RatioRow<'_>,
    x: f64,
    z: f64,
) -> Result<f64> {
    let d = g.domain();
    if d.intervals().iter().any(|&(a, b)| a <= z && z <= b) {
        return domain(format!("perturbed Poisson kernel needs z outside the closure of D, got {z}"));
    }
    let model = g
        .model()
        .ok_or_else(|| Error::Unsupported("Green function carries no model".into()))?;
    let src = g.source(x)?;
    let f = |y: f64| ratio.at(y) * src(y).0 * model.nu_pos((z - y).abs());
    let panels = ratio.breaks();
    let mut acc = 0.0;
    for &(a, b) in d.intervals() {
        let gap = if z > b { z - b } else { a - z };
        let mut br = vec![a, b];
        br.extend(panels.iter().copied().chain([x]).filter(|&p| a < p && p < b));
        let mut t = gap;
        while t < 0.5 * (b - a) {
            br.push(if z > b { b - t } else { a + t });
            t *= 2.0;
        }
        br.sort_by(f64::total_cmp);
        br.dedup();
        acc += tanh_sinh_pieces(f, &br, 1e-10)?;
    }
    Ok(acc)
}

/// `∫_{Dᶜ} P̃_D(x,z) dz`.
pub fn perturbed_poisson_mass<G: GreenFunction + ?Sized>(
    g: &G,
    ratio: &RatioRow<'_>,
    x: f64,
) -> Result<f64> {
    let model = g
        .model()
        .ok_or_else(|| Error::Unsupported("Green function carries no model".into()))?;
    let d = g.domain();
    integrate_exit(g, x, &|y| ratio.at(y), &ratio.breaks(), f64::INFINITY, &|k, da, db| {
        crate::green::exit_intensity(model, d, k, da, db)
    })
}

/// `P̃^x(X_τ ≤ z0)` for `z0 ∉ D`.
pub fn perturbed_exit_cdf<G: GreenFunction + ?Sized>(
    g: &G,
    ratio: &RatioRow<'_>,
    x: f64,
    z0: f64,
) -> Result<f64> {
    exit_cdf_weighted(g, x, &|y| ratio.at(y), &ratio.breaks(), z0)
}

/// [`perturbed_exit_cdf`] at every point of `z0s`.
pub fn perturbed_exit_cdf_batch<G: GreenFunction + ?Sized>(
    g: &G,
    ratio: &RatioRow<'_>,
    x: f64,
    z0s: &[f64],
) -> Result<Vec<f64>> {
    exit_cdf_batch(g, x, &|y| ratio.at(y), &ratio.breaks(), z0s)
}

/// `(1/(hi−lo)) ∫_{lo}^{hi} G̃(x,y) dy` for a bin inside one component.
pub fn perturbed_bin_average<G: GreenFunction + ?Sized>(
    g: &G,
    ratio: &RatioRow<'_>,
    x: f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let src = g.source(x)?;
    let mut br = vec![lo, hi];
    br.extend(ratio.breaks().into_iter().chain([x]).filter(|&p| lo < p && p < hi));
    br.sort_by(f64::total_cmp);
    br.dedup();
    let v = tanh_sinh_pieces(|y| ratio.at(y) * src(y).0, &br, 1e-9)?;
    Ok(v / (hi - lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::stable_mean_exit_time;

    fn interval_setup(n: usize) -> (StableGreen, NystromGrid, DiscreteGreen) {
        let d = C11Set::interval(-1.0, 1.0).unwrap();
        let g = StableGreen::new(1.5, &d).unwrap();
        let grid = NystromGrid::new(&d, n, 1.5).unwrap();
        let disc = discretize_green(&g, &grid).unwrap();
        (g, grid, disc)
    }

    #[test]
    fn grid_invariants() {
        let d = C11Set::new(&[(-1.0, -0.2), (0.2, 1.0)]).unwrap();
        let grid = NystromGrid::new(&d, 160, 1.5).unwrap();
        assert_eq!(grid.counts_per_component(), vec![80, 80]);
        assert!(grid.weights().iter().all(|&w| w > 0.0));
        assert!((grid.weights().iter().sum::<f64>() - d.measure()).abs() < 1e-13);
        assert!(grid.nodes().iter().all(|&y| d.contains(y)));
        let f: Vec<f64> = grid.nodes().iter().map(|y| y.powi(5)).collect();
        assert!((grid.interpolate(&f, 0.5).unwrap() - 0.5f64.powi(5)).abs() < 1e-13);
    }

    #[test]
    fn weighted_rows_give_mean_exit_time() {
        let (_, grid, disc) = interval_setup(200);
        for i in 0..grid.len() {
            let y = grid.nodes()[i];
            let s: f64 = disc.green_weights.column(i).sum();
            let want = stable_mean_exit_time(1.5, -1.0, 1.0, y);
            assert!((s / want - 1.0).abs() < 1e-3, "node {y}: {s} vs {want}");
        }
        let n = grid.len();
        for i in 0..n {
            for j in 0..n {
                assert!((disc.g[(i, j)] - disc.g[(j, i)]).abs() < 1e-12 * disc.g[(i, j)].max(1e-300));
                if i != j {
                    // ∂G(−z, −y) = −∂G(z, y) on a symmetric interval
                    let m = disc.dg[(n - 1 - i, n - 1 - j)];
                    assert!((m + disc.dg[(i, j)]).abs() < 1e-9 * disc.dg[(i, j)].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn zero_drift_is_identity() {
        let (_, grid, disc) = interval_setup(80);
        let pg = solve_perturbed(&disc, &DriftField::zero(), &grid, SolveMode::Direct).unwrap();
        assert_eq!(pg.gt, disc.g);
        let rep = comparability_report(&pg);
        assert_eq!((rep.sup, rep.inf, rep.constant), (1.0, 1.0, 1.0));
    }

    #[test]
    fn operator_matches_quadrature() {
        // (ΦB)_i against the singularity-free integral ∫ f(z) b(z) ∂G(z,y) dz
        // for a smooth f, with z = y ± t² removing the singularity
        let (g, grid, disc) = interval_setup(240);
        let b = DriftField::sine(1.0, 5.0);
        let bv: Vec<f64> = grid.nodes().iter().map(|&y| b.eval(y)).collect();
        let bop = disc.operator(&bv);
        let f = |z: f64| (1.0 - z * z) * (2.0 + z);
        let fv = DVector::from_iterator(grid.len(), grid.nodes().iter().map(|&z| f(z)));
        let lhs = bop.transpose() * fv;
        for i in [10, 120, 200] {
            let y = grid.nodes()[i];
            let src = g.source(y).unwrap();
            let h = |z: f64| f(z) * b.eval(z) * src(z).1;
            let panels = |len: f64| (0..=400).map(|k| len.sqrt() * k as f64 / 400.0).collect::<Vec<_>>();
            let left = crate::quadrature::integrate_panels(&panels(y + 1.0), 16, |t| 2.0 * t * h(y - t * t));
            let right = crate::quadrature::integrate_panels(&panels(1.0 - y), 16, |t| 2.0 * t * h(y + t * t));
            let want = left + right;
            assert!((lhs[i] - want).abs() < 1e-5 * want.abs().max(1.0), "y={y}: {} vs {want}", lhs[i]);
        }
    }

    #[test]
    fn fixed_point_agrees_with_direct() {
        let d = C11Set::interval(-0.05, 0.05).unwrap();
        let g = StableGreen::new(1.5, &d).unwrap();
        let grid = NystromGrid::new(&d, 96, 1.5).unwrap();
        let disc = discretize_green(&g, &grid).unwrap();
        let b = DriftField::constant(1.0);
        let direct = solve_perturbed(&disc, &b, &grid, SolveMode::Direct).unwrap();
        let fixed = solve_perturbed(&disc, &b, &grid, SolveMode::FixedPoint).unwrap();
        assert!(fixed.converged);
        assert!(direct.kappa_sup < 1.0);
        let scale = disc.g.amax();
        assert!((&direct.gt - &fixed.gt).amax() / scale < 1e-8);
        for w in fixed.trace.windows(2) {
            assert!(w[1] <= fixed.kappa_sup * w[0] * (1.0 + 1e-9) + 1e-15, "{w:?}");
        }
        assert!(direct.residual < 1e-12 && fixed.residual < 1e-8);
    }

    #[test]
    fn fixed_point_refused_for_large_kappa() {
        let (_, grid, disc) = interval_setup(80);
        let err = solve_perturbed(&disc, &DriftField::constant(5.0), &grid, SolveMode::FixedPoint);
        assert!(matches!(err, Err(Error::Refused(_))));
    }

    #[test]
    fn reflection_equivariance() {
        let (_, grid, disc) = interval_setup(96);
        let n = grid.len();
        for b in [DriftField::constant(1.0), DriftField::sine(1.0, 5.0)] {
            let p = solve_perturbed(&disc, &b, &grid, SolveMode::Direct).unwrap();
            let q = solve_perturbed(&disc, &b.mirrored(), &grid, SolveMode::Direct).unwrap();
            for i in 0..n {
                for k in 0..n {
                    let (u, v) = (p.gt[(i, k)], q.gt[(n - 1 - i, n - 1 - k)]);
                    assert!((u - v).abs() < 1e-8 * disc.g.amax(), "({i},{k}): {u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn drift_pushes_mass_downstream() {
        let x = 0.0;
        let mut errs = vec![];
        for n in [96, 192] {
            let (g, grid, disc) = interval_setup(n);
            let pg = solve_perturbed(&disc, &DriftField::constant(1.0), &grid, SolveMode::Direct).unwrap();
            let row = pg.row(&g, &grid, x).unwrap();
            let ratio = pg.ratio_interpolant(&g, &grid, x, &row).unwrap();
            let right = perturbed_poisson(&g, &ratio, x, 1.2).unwrap();
            let left = perturbed_poisson(&g, &ratio, x, -1.2).unwrap();
            assert!(right > left);
            let p_left = perturbed_exit_cdf(&g, &ratio, x, -1.0 - 1e-12).unwrap();
            assert!(p_left < 0.5);
            errs.push((perturbed_poisson_mass(&g, &ratio, x).unwrap() - 1.0).abs());
        }
        // first order in h: the ratio has a boundary layer the panels only partly resolve
        assert!(errs[1] < 0.6 * errs[0] && errs[1] < 2e-3, "{errs:?}");
    }

    #[test]
    fn epsilon_search_scaling() {
        let base = C11Set::interval(-1.0, 1.0).unwrap();
        let one = find_epsilon(&base, 1.5, &DriftField::constant(1.0), 1.0 / 3.0, (1e-4, 1.0)).unwrap();
        let two = find_epsilon(&base, 1.5, &DriftField::constant(2.0), 1.0 / 3.0, (1e-4, 1.0)).unwrap();
        assert!(one.kappa_sup < 1.0 / 3.0);
        // κ ∝ ‖b‖ s^{α−1}: doubling b divides ε by 2^{1/(α−1)} = 4
        assert!((one.scale / two.scale / 4.0 - 1.0).abs() < 1e-3, "{} {}", one.scale, two.scale);
        let zero = find_epsilon(&base, 1.5, &DriftField::zero(), 1.0 / 3.0, (1e-4, 1.0)).unwrap();
        assert_eq!(zero.scale, 1.0);
    }
}
