//! Green functions and Poisson kernels of bounded sets, with checkers for
//! the gradient, 3G and κ estimates.

pub mod checks;
pub mod stable;
mod union;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::geometry::C11Set;
use crate::kernels::KernelTable;
use crate::levy_models::LevyModel;
use crate::quadrature::{gauss_legendre, integrate_with_layer, local_decay, tanh_sinh_pieces};

pub use stable::{stable_mean_exit_time, StableInterval};

/// Evaluator returned by [`GreenFunction::source`].
pub type Source<'a> = Box<dyn Fn(f64) -> (f64, f64) + Send + Sync + 'a>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GreenKind {
    StableOracle,
    Envelope,
    NumericTable,
}

/// A Green function `G_D(x, y)` of a bounded set.
pub trait GreenFunction: Send + Sync {
    fn kind(&self) -> GreenKind;

    fn domain(&self) -> &C11Set;

    /// `G(x, y)`, zero unless both points lie in the domain. On the diagonal
    /// this is the finite limit when one exists.
    fn value(&self, x: f64, y: f64) -> f64;

    /// `∂_x G(x, y)` for `x ≠ y`.
    fn gradient(&self, _x: f64, _y: f64) -> Result<f64> {
        Err(Error::Unsupported(format!("{:?} Green function has no gradient", self.kind())))
    }

    /// `(c, α)` with `∂_x G(x,y) = c·sign(x−y)|x−y|^{α−2} + O(1)` near the
    /// diagonal.
    fn singular_part(&self) -> Option<(f64, f64)> {
        None
    }

    /// `lim_{x→y} [∂_x G(x,y) − c·sign(x−y)|x−y|^{α−2}]`.
    fn diagonal_regular_gradient(&self, _y: f64) -> Result<f64> {
        Err(Error::Unsupported("no diagonal expansion".into()))
    }

    /// The process model, when the Green function belongs to one.
    fn model(&self) -> Option<&LevyModel> {
        None
    }

    /// `G[i,k] = G(xs[i], ys[k])` and `D[i,k] = ∂_x G(xs[i], ys[k])`; the
    /// gradient entry is `NaN` where `xs[i] = ys[k]`.
    fn matrices(&self, xs: &[f64], ys: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let cols: Vec<Result<(Vec<f64>, Vec<f64>)>> = ys
            .par_iter()
            .map(|&y| {
                let mut g = Vec::with_capacity(xs.len());
                let mut d = Vec::with_capacity(xs.len());
                for &x in xs {
                    g.push(self.value(x, y));
                    d.push(if x == y { f64::NAN } else { self.gradient(x, y)? });
                }
                Ok((g, d))
            })
            .collect();
        let mut gm = DMatrix::zeros(xs.len(), ys.len());
        let mut dm = DMatrix::zeros(xs.len(), ys.len());
        for (k, c) in cols.into_iter().enumerate() {
            let (g, d) = c?;
            gm.set_column(k, &nalgebra::DVector::from_vec(g));
            dm.set_column(k, &nalgebra::DVector::from_vec(d));
        }
        Ok((gm, dm))
    }

    /// `z ↦ (G(z, y), ∂_z G(z, y))` for a fixed source `y`. Kinds that solve
    /// for a whole column at once override this to share the work.
    fn source(&self, y: f64) -> Result<Source<'_>> {
        Ok(Box::new(move |z| {
            let d = if z == y { f64::NAN } else { self.gradient(z, y).unwrap_or(f64::NAN) };
            (self.value(z, y), d)
        }))
    }

    /// Closed-form Poisson kernel, if known.
    fn exact_poisson(&self, _x: f64, _z: f64) -> Option<f64> {
        None
    }
}

/// Green function of the α-stable process (ψ = |ξ|^α, 1 < α < 2). Exact for
/// one interval; for several intervals the coupling between components is
/// resolved numerically (see the `union` module docs).
#[derive(Clone, Debug)]
pub struct StableGreen {
    domain: C11Set,
    model: LevyModel,
    comps: Vec<StableInterval>,
    solver: Option<union::UnionSolver>,
}

impl StableGreen {
    pub fn new(alpha: f64, domain: &C11Set) -> Result<Self> {
        let (comps, solver) = union::build(alpha, domain)?;
        Ok(Self {
            domain: domain.clone(),
            model: LevyModel::stable(alpha)?,
            comps,
            solver,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.comps[0].alpha()
    }

    pub fn components(&self) -> &[StableInterval] {
        &self.comps
    }

    /// Mean exit time `E^x τ_D = ∫_D G(x,y) dy`; closed form on one interval.
    pub fn mean_exit_time(&self, x: f64) -> Result<f64> {
        if self.solver.is_none() {
            return Ok(self.comps[0].mean_exit_time(x));
        }
        integrate_green(self, x, |_| 1.0)
    }
}

impl GreenFunction for StableGreen {
    fn kind(&self) -> GreenKind {
        if self.solver.is_some() {
            GreenKind::NumericTable
        } else {
            GreenKind::StableOracle
        }
    }

    fn domain(&self) -> &C11Set {
        &self.domain
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        match &self.solver {
            None => self.comps[0].value(x, y),
            Some(s) => match s.column(y) {
                Ok(col) => s.evaluate(&col, x).0,
                Err(_) => 0.0,
            },
        }
    }

    fn gradient(&self, x: f64, y: f64) -> Result<f64> {
        if x == y {
            return domain("gradient of the Green function is singular on the diagonal");
        }
        match &self.solver {
            None => self.comps[0].gradient(x, y),
            Some(s) => {
                if !self.domain.contains(y) {
                    return Ok(0.0);
                }
                Ok(s.evaluate(&s.column(y)?, x).1)
            }
        }
    }

    fn singular_part(&self) -> Option<(f64, f64)> {
        Some((self.comps[0].singular_coefficient(), self.alpha()))
    }

    fn diagonal_regular_gradient(&self, y: f64) -> Result<f64> {
        match &self.solver {
            None => Ok(self.comps[0].diagonal_regular_gradient(y)),
            Some(s) => s.diagonal_regular_gradient(y),
        }
    }

    fn model(&self) -> Option<&LevyModel> {
        Some(&self.model)
    }

    fn matrices(&self, xs: &[f64], ys: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let Some(s) = &self.solver else {
            let c = &self.comps[0];
            let cols: Vec<(Vec<f64>, Vec<f64>)> = ys
                .par_iter()
                .map(|&y| {
                    xs.iter()
                        .map(|&x| {
                            let d = if x == y {
                                f64::NAN
                            } else if c.contains(x) && c.contains(y) {
                                c.gradient_unchecked(x, y)
                            } else {
                                0.0
                            };
                            (c.value(x, y), d)
                        })
                        .unzip()
                })
                .collect();
            return Ok(assemble(xs.len(), cols));
        };
        let cols: Vec<Result<(Vec<f64>, Vec<f64>)>> = ys
            .par_iter()
            .map(|&y| {
                if !self.domain.contains(y) {
                    return Ok((vec![0.0; xs.len()], vec![0.0; xs.len()]));
                }
                let col = s.column(y)?;
                Ok(xs.iter().map(|&x| s.evaluate(&col, x)).unzip())
            })
            .collect();
        let cols: Result<Vec<_>> = cols.into_iter().collect();
        Ok(assemble(xs.len(), cols?))
    }

    fn source(&self, y: f64) -> Result<Source<'_>> {
        match &self.solver {
            Some(s) if self.domain.contains(y) => {
                let col = s.column(y)?;
                Ok(Box::new(move |z| s.evaluate(&col, z)))
            }
            Some(_) => Ok(Box::new(|_| (0.0, 0.0))),
            None => {
                let c = &self.comps[0];
                Ok(Box::new(move |z| {
                    let d = if z == y {
                        f64::NAN
                    } else if c.contains(z) && c.contains(y) {
                        c.gradient_unchecked(z, y)
                    } else {
                        0.0
                    };
                    (c.value(z, y), d)
                }))
            }
        }
    }

    fn exact_poisson(&self, x: f64, z: f64) -> Option<f64> {
        if self.solver.is_none() {
            Some(self.comps[0].poisson(x, z))
        } else {
            None
        }
    }
}

fn assemble(rows: usize, cols: Vec<(Vec<f64>, Vec<f64>)>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut gm = DMatrix::zeros(rows, cols.len());
    let mut dm = DMatrix::zeros(rows, cols.len());
    for (k, (g, d)) in cols.into_iter().enumerate() {
        for i in 0..rows {
            gm[(i, k)] = g[i];
            dm[(i, k)] = d[i];
        }
    }
    (gm, dm)
}

/// Constant-free two-sided estimate
/// `V(δ_x)V(δ_y)(1/√(δ_xδ_y) ∧ 1/|x−y|)`.
#[derive(Clone, Debug)]
pub struct EnvelopeGreen {
    domain: C11Set,
    table: KernelTable,
}

impl EnvelopeGreen {
    pub fn new(domain: &C11Set, table: &KernelTable) -> Self {
        Self {
            domain: domain.clone(),
            table: table.clone(),
        }
    }
}

/// The envelope expression on its own.
pub fn green_envelope(d: &C11Set, table: &KernelTable, x: f64, y: f64) -> f64 {
    let (dx, dy) = (d.delta(x), d.delta(y));
    if dx == 0.0 || dy == 0.0 {
        return 0.0;
    }
    let first = 1.0 / (dx * dy).sqrt();
    let second = if x == y { f64::INFINITY } else { 1.0 / (x - y).abs() };
    table.v(dx) * table.v(dy) * first.min(second)
}

impl GreenFunction for EnvelopeGreen {
    fn kind(&self) -> GreenKind {
        GreenKind::Envelope
    }

    fn domain(&self) -> &C11Set {
        &self.domain
    }

    fn value(&self, x: f64, y: f64) -> f64 {
        green_envelope(&self.domain, &self.table, x, y)
    }

    fn model(&self) -> Option<&LevyModel> {
        Some(self.table.model())
    }
}

/// `G_{{0}ᶜ}(x,y) = K(x) + K(y) − K(y−x)`, the Green function of the line
/// punctured at the origin.
pub fn green_punctured_line(table: &KernelTable, x: f64, y: f64) -> Result<f64> {
    if x == 0.0 || y == 0.0 {
        return domain("punctured-line Green function needs x, y != 0");
    }
    Ok(table.k(x) + table.k(y) - table.k(y - x))
}

/// ν-mass of `[lo, hi]` seen from `y ∉ [lo, hi]` (ends may be infinite).
pub fn nu_mass(model: &LevyModel, y: f64, lo: f64, hi: f64) -> f64 {
    let tail = |d: f64| if d.is_infinite() { 0.0 } else { model.tail_mass(d) };
    if lo > y {
        tail(lo - y) - tail(hi - y)
    } else if hi < y {
        tail(y - hi) - tail(y - lo)
    } else {
        f64::INFINITY
    }
}

/// ν-mass of `Dᶜ` seen from a point of component `k` at distances `da`, `db`
/// from its ends. Taking the distances separately keeps the boundary blow-up
/// accurate below floating-point spacing.
pub fn exit_intensity(model: &LevyModel, d: &C11Set, k: usize, da: f64, db: f64) -> f64 {
    let iv = d.intervals();
    let (a, b) = iv[k];
    let tail = |r: f64| if r.is_infinite() { 0.0 } else { model.tail_mass(r) };
    let mut acc = 0.0;
    let mut near = da;
    for j in (0..=k).rev() {
        let gap_end = if j == 0 { f64::NEG_INFINITY } else { iv[j - 1].1 };
        let far = da + (a - gap_end);
        acc += tail(near) - tail(far);
        if j > 0 {
            near = da + (a - iv[j - 1].0);
        }
    }
    near = db;
    for j in k..iv.len() {
        let gap_end = if j + 1 == iv.len() { f64::INFINITY } else { iv[j + 1].0 };
        let far = db + (gap_end - b);
        acc += tail(near) - tail(far);
        if j + 1 < iv.len() {
            near = db + (iv[j + 1].1 - b);
        }
    }
    acc
}

/// `∫_D G(x,y) f(y) dy`, split at `x` and at the component endpoints. Uses
/// the symmetry of `G`.
pub fn integrate_green<G: GreenFunction + ?Sized>(
    g: &G,
    x: f64,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    let src = g.source(x)?;
    let mut acc = 0.0;
    for &(a, b) in g.domain().intervals() {
        let mut br = vec![a];
        if a < x && x < b {
            br.push(x);
        }
        br.push(b);
        acc += tanh_sinh_pieces(|y| src(y).0 * f(y), &br, 1e-10)?;
    }
    Ok(acc)
}

/// Poisson kernel `P_D(x,z) = ∫_D G(x,y) ν(z−y) dy` for `x ∈ D`, `z ∉ D̄`.
pub fn poisson_kernel<G: GreenFunction + ?Sized>(g: &G, x: f64, z: f64) -> Result<f64> {
    let d = g.domain();
    if !d.contains(x) {
        return domain(format!("poisson kernel needs x in D, got {x}"));
    }
    if d.intervals().iter().any(|&(a, b)| a <= z && z <= b) {
        return domain(format!("poisson kernel needs z outside the closure of D, got {z}"));
    }
    let model = g
        .model()
        .ok_or_else(|| Error::Unsupported("Green function carries no model".into()))?;
    let src = g.source(x)?;
    let mut acc = 0.0;
    for &(a, b) in d.intervals() {
        let f = |y: f64| src(y).0 * model.nu_pos((z - y).abs());
        let (near_b, gap) = if z > b { (true, z - b) } else { (false, a - z) };
        let mut pieces = vec![(a, b)];
        if a < x && x < b {
            pieces = vec![(a, x), (x, b)];
        }
        for (lo, hi) in pieces {
            let touches = if near_b { hi == b } else { lo == a };
            if touches && gap < 0.25 * (hi - lo) {
                acc += integrate_with_layer(f, lo, hi, near_b, gap, 1e-10)?;
            } else {
                acc += tanh_sinh_pieces(f, &[lo, hi], 1e-10)?;
            }
        }
    }
    Ok(acc)
}

/// Total exit mass `∫_{Dᶜ} P_D(x,z) dz = ∫_D G(x,y) ν(Dᶜ − y) dy`.
pub fn poisson_mass<G: GreenFunction + ?Sized>(g: &G, x: f64) -> Result<f64> {
    let model = g
        .model()
        .ok_or_else(|| Error::Unsupported("Green function carries no model".into()))?;
    let d = g.domain();
    integrate_exit(g, x, &|_| 1.0, &[], f64::INFINITY, &|k, da, db| exit_intensity(model, d, k, da, db))
}

/// Exit-law CDF `P^x(X_τ ≤ z0) = ∫_D G(x,y) ν(((−∞, z0] ∖ D) − y) dy` for
/// `z0 ∉ D`.
pub fn exit_cdf<G: GreenFunction + ?Sized>(g: &G, x: f64, z0: f64) -> Result<f64> {
    exit_cdf_weighted(g, x, &|_| 1.0, &[], z0)
}

/// [`exit_cdf`] with `G(x,y)` replaced by `w(y) G(x,y)`; `w` may jump at
/// `breaks`.
pub fn exit_cdf_weighted<G: GreenFunction + ?Sized>(
    g: &G,
    x: f64,
    w: &(dyn Fn(f64) -> f64 + Sync),
    breaks: &[f64],
    z0: f64,
) -> Result<f64> {
    let model = g
        .model()
        .ok_or_else(|| Error::Unsupported("Green function carries no model".into()))?;
    let d = g.domain();
    if d.contains(z0) {
        return domain(format!("exit CDF needs z0 outside D, got {z0}"));
    }
    let iv = d.intervals();
    let ext = exterior_pieces(iv, z0);
    let intensity = |k: usize, da: f64, db: f64| cdf_intensity(model, iv[k], &ext, da, db);
    integrate_exit(g, x, w, breaks, boundary_gap(iv, z0), &intensity)
}

/// Exterior pieces of `(−∞, z0]`.
fn exterior_pieces(iv: &[(f64, f64)], z0: f64) -> Vec<(f64, f64)> {
    let mut ext = Vec::new();
    let mut lo = f64::NEG_INFINITY;
    for &(a, b) in iv {
        if a >= z0 {
            ext.push((lo, z0));
            return ext;
        }
        ext.push((lo, a));
        lo = b;
    }
    ext.push((lo, z0));
    ext
}

fn boundary_gap(iv: &[(f64, f64)], z0: f64) -> f64 {
    iv.iter().map(|&(a, b)| (z0 - a).abs().min((z0 - b).abs())).fold(f64::INFINITY, f64::min)
}

/// ν-mass of the exterior pieces seen from the point at distances `da`, `db`
/// from the ends of `(a, b)`, measured from the nearer end of each piece.
fn cdf_intensity(model: &LevyModel, (a, b): (f64, f64), ext: &[(f64, f64)], da: f64, db: f64) -> f64 {
    ext.iter()
        .map(|&(p, q)| {
            if q <= a {
                let near = da + (a - q);
                let far = if p.is_infinite() { f64::INFINITY } else { da + (a - p) };
                tail(model, near) - tail(model, far)
            } else {
                let near = db + (p - b);
                let far = db + (q - b);
                tail(model, near) - tail(model, far)
            }
        })
        .sum()
}

/// Panel order of [`exit_cdf_batch`].
const BATCH_ORDER: usize = 16;

/// [`exit_cdf_weighted`] at every point of `z0s`, sharing one product rule
/// in `y`: Gauss–Legendre panels graded geometrically (ratio 4) toward each
/// end of `D` and toward `x`, split at `breaks`. `w·G(x,·)` is evaluated
/// once per node; each `z0` then costs one sum, stopping at the ring that
/// matches its own end sliver.
pub fn exit_cdf_batch<G: GreenFunction + ?Sized>(
    g: &G,
    x: f64,
    w: &(dyn Fn(f64) -> f64 + Sync),
    breaks: &[f64],
    z0s: &[f64],
) -> Result<Vec<f64>> {
    let model = g
        .model()
        .ok_or_else(|| Error::Unsupported("Green function carries no model".into()))?;
    let d = g.domain();
    if let Some(&z) = z0s.iter().find(|&&z| d.contains(z)) {
        return domain(format!("exit CDF needs z0 outside D, got {z}"));
    }
    let iv = d.intervals();
    let cut = z0s.iter().map(|&z| boundary_gap(iv, z)).fold(f64::INFINITY, f64::min);
    let src = g.source(x)?;
    let f = |y: f64| {
        let v = src(y).0;
        if v == 0.0 { 0.0 } else { w(y) * v }
    };
    let sliver = |a: f64, b: f64, cut: f64| {
        let len = b - a;
        (1e-7 * len).min(1e-3 * cut).max(1e-13 * a.abs().max(b.abs()).max(len))
    };
    let rule = gauss_legendre(BATCH_ORDER);
    let mut comps = Vec::with_capacity(iv.len());
    for &(a, b) in iv {
        let len = b - a;
        // rings[k] = s·4^k; each z0 integrates up to the ring at its own sliver
        let mut rings = vec![sliver(a, b, cut)];
        while 4.0 * rings[rings.len() - 1] < 0.5 * len {
            rings.push(4.0 * rings[rings.len() - 1]);
        }
        let mut br: Vec<f64> = rings.iter().flat_map(|&t| [a + t, b - t]).collect();
        if a < x && x < b {
            let mut t = 1e-12 * len;
            while t < 0.5 * len {
                br.extend([x - t, x + t]);
                t *= 4.0;
            }
            br.push(x);
        }
        br.extend(breaks.iter().copied());
        br.retain(|&p| a + rings[0] <= p && p <= b - rings[0]);
        br.sort_by(f64::total_cmp);
        br.dedup();
        let mut pieces = vec![];
        for wnd in br.windows(2) {
            let m = ((wnd[1] - wnd[0]) / (len / 16.0)).ceil().max(1.0) as usize;
            let h = (wnd[1] - wnd[0]) / m as f64;
            pieces.extend((0..m).map(|j| (wnd[0] + j as f64 * h, if j + 1 == m { wnd[1] } else { wnd[0] + (j + 1) as f64 * h })));
        }
        let nodes: Vec<(f64, f64)> = pieces
            .par_iter()
            .flat_map_iter(|&(p, q)| rule.mapped(p, q).map(|(y, wt)| (y, wt * f(y))).collect::<Vec<_>>())
            .collect();
        let ends: Vec<[(f64, f64, f64); 2]> = rings
            .par_iter()
            .map(|&t| [(a + t, f(a + t), f(a + 2.0 * t)), (b - t, f(b - t), f(b - 2.0 * t))])
            .collect();
        comps.push((a, b, rings, nodes, ends));
    }
    z0s.par_iter()
        .map(|&z0| {
            let ext = exterior_pieces(iv, z0);
            let mut acc = 0.0;
            for (a, b, rings, nodes, ends) in &comps {
                let (a, b) = (*a, *b);
                let want = sliver(a, b, boundary_gap(iv, z0));
                let k = rings.partition_point(|&t| t <= want).max(1) - 1;
                let (s, [(lo, ga1, ga2), (hi, gb1, gb2)]) = (rings[k], ends[k]);
                let i = |y: f64| cdf_intensity(model, (a, b), &ext, y - a, b - y);
                acc += nodes
                    .iter()
                    .filter(|&&(y, v)| v != 0.0 && lo < y && y < hi)
                    .map(|&(y, v)| v * i(y))
                    .sum::<f64>();
                for (e, g1, g2) in [(lo, ga1, ga2), (hi, gb1, gb2)] {
                    let h1 = g1 * i(e);
                    if h1 == 0.0 {
                        continue;
                    }
                    let h2 = g2 * i(if e == lo { a + 2.0 * s } else { b - 2.0 * s });
                    let q = (h1 > 0.0 && h2 > 0.0 && h1.is_finite() && h2.is_finite())
                        .then(|| -(h2 / h1).ln() / std::f64::consts::LN_2);
                    acc += match q {
                        Some(q) if q < 1.0 => h1 * s / (1.0 - q),
                        _ => {
                            return Err(Error::Quadrature {
                                achieved: f64::NAN,
                                wanted: 1e-10,
                                context: format!("exit integral has a non-integrable boundary layer near {e}"),
                            })
                        }
                    };
                }
            }
            Ok(acc)
        })
        .collect()
}

fn tail(model: &LevyModel, r: f64) -> f64 {
    if r.is_infinite() {
        0.0
    } else {
        model.tail_mass(r)
    }
}

/// `∫_D w(y) G(x,y) I_k(y − a_k, b_k − y) dy` over the components
/// `(a_k, b_k)`, for exit intensities `I_k` that may blow up at the ends and
/// weights `w` that may jump at `breaks`.
///
/// Breakpoints are placed geometrically toward each end so layers of any
/// width are resolved. `G` cannot be resolved below the floating-point
/// spacing of `y`, so a sliver at each end is integrated from the fitted
/// local power law. The sliver has relative width `1e-7`, shrunk well below
/// `cut`, the distance from `∂D` at which `I_k` changes regime.
pub(crate) fn integrate_exit<G: GreenFunction + ?Sized>(
    g: &G,
    x: f64,
    w: &(dyn Fn(f64) -> f64 + Sync),
    breaks: &[f64],
    cut: f64,
    intensity: &(dyn Fn(usize, f64, f64) -> f64 + Sync),
) -> Result<f64> {
    let d = g.domain();
    let src = g.source(x)?;
    let mut acc = 0.0;
    for (k, &(a, b)) in d.intervals().iter().enumerate() {
        let len = b - a;
        let s = (1e-7 * len).min(1e-3 * cut).max(1e-13 * a.abs().max(b.abs()).max(len));
        let f = |y: f64| {
            let v = src(y).0;
            if v == 0.0 { 0.0 } else { w(y) * v * intensity(k, y - a, b - y) }
        };
        let mut br = vec![a + s, b - s];
        let mut t = 4.0 * s;
        while t < 0.5 * len {
            br.push(a + t);
            br.push(b - t);
            t *= 4.0;
        }
        br.extend(breaks.iter().copied().chain([x]).filter(|&p| a + s < p && p < b - s));
        br.sort_by(f64::total_cmp);
        br.dedup();
        acc += tanh_sinh_pieces(f, &br, 1e-10)?;
        for end in [a, b] {
            let dir = if end == a { 1.0 } else { -1.0 };
            let h = |r: f64| f(end + dir * r);
            if h(s) == 0.0 {
                continue;
            }
            acc += match local_decay(&h, s) {
                Some(q) if q < 1.0 => h(s) * s / (1.0 - q),
                _ => {
                    return Err(Error::Quadrature {
                        achieved: f64::NAN,
                        wanted: 1e-10,
                        context: format!("exit integral has a non-integrable boundary layer at {end}"),
                    })
                }
            };
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_models::stable_k_constant;

    #[test]
    fn batched_exit_cdf_matches_pointwise() {
        for d in [C11Set::interval(-1.0, 1.0).unwrap(), C11Set::new(&[(-1.0, -0.2), (0.2, 1.0)]).unwrap()] {
            let g = StableGreen::new(1.5, &d).unwrap();
            let x = 0.3;
            let w = |y: f64| if y < 0.5 { 1.0 + 0.2 * y } else { 0.9 + y * y };
            let zs = [-7.0, -1.0 - 1e-9, -1.0 - 1e-3, -0.1, 0.0, 0.2 - 1e-6, 1.0 + 1e-12, 1.3, 40.0];
            let zs: Vec<f64> = zs.into_iter().filter(|&z| !d.contains(z)).collect();
            let batch = exit_cdf_batch(&g, x, &w, &[0.5], &zs).unwrap();
            for (&z, &fb) in zs.iter().zip(&batch) {
                let fp = exit_cdf_weighted(&g, x, &w, &[0.5], z).unwrap();
                // next to the boundary G(x,y) itself is only good to ~1e-7
                assert!((fb - fp).abs() < 5e-8, "z={z}: {fb} vs {fp}");
            }
        }
        let d = C11Set::interval(-1.0, 1.0).unwrap();
        let g = StableGreen::new(1.5, &d).unwrap();
        let x = 0.3;
        let zs = [-3.0, -1.2, 1.0 + 1e-12, 1.05, 1.3, 40.0];
        let batch = exit_cdf_batch(&g, x, &|_| 1.0, &[], &zs).unwrap();
        for (&z, &fb) in zs.iter().zip(&batch).filter(|(z, _)| (z.abs() - 1.0) > 1e-3) {
            // tail of the closed-form exit density beyond |z|
            let p = |u: f64| g.exact_poisson(x, u.copysign(z)).unwrap();
            let near = crate::quadrature::tanh_sinh(p, z.abs(), z.abs() + 10.0, 1e-13).unwrap().value;
            let tail = near + crate::quadrature::integrate_to_infinity(&p, z.abs() + 10.0).unwrap();
            let exact = if z < 0.0 { tail } else { 1.0 - tail };
            assert!((fb - exact).abs() < 5e-8, "z={z}: {fb} vs {exact}");
        }
    }

    #[test]
    fn envelope_examples() {
        let m = LevyModel::stable(1.5).unwrap();
        let t = KernelTable::build(&m, 2.0).unwrap();
        let d = C11Set::interval(-1.0, 1.0).unwrap();
        let v = t.v(0.5);
        assert!((green_envelope(&d, &t, -0.5, 0.5) - v * v).abs() < 1e-12);
        assert!((green_envelope(&d, &t, 0.5, 0.5) - v * v / 0.5).abs() < 1e-12);
        assert_eq!(green_envelope(&d, &t, 0.5, 1.5), 0.0);
    }

    #[test]
    fn punctured_line() {
        let m = LevyModel::stable(1.5).unwrap();
        let t = KernelTable::build(&m, 2.0).unwrap();
        let k1 = stable_k_constant(1.5);
        let v = green_punctured_line(&t, 1.0, 2.0).unwrap();
        assert!((v - 2f64.sqrt() * k1).abs() < 1e-6);
        assert!((green_punctured_line(&t, 0.7, 0.7).unwrap() - 2.0 * t.k(0.7)).abs() < 1e-12);
        assert!(green_punctured_line(&t, -0.3, 1.1).unwrap() >= 0.0);
    }

    #[test]
    fn poisson_quadrature_matches_closed_form() {
        let d = C11Set::interval(-1.0, 1.0).unwrap();
        let g = StableGreen::new(1.5, &d).unwrap();
        for (x, z) in [(0.0, 1.0 + 1e-4), (0.5, -1.3), (-0.9, 4.0), (0.2, 1.05)] {
            let q = poisson_kernel(&g, x, z).unwrap();
            let e = g.exact_poisson(x, z).unwrap();
            assert!((q / e - 1.0).abs() < 1e-3, "({x},{z}): {q} vs {e}");
        }
        let p1 = poisson_kernel(&g, 0.0, 1.7).unwrap();
        let p2 = poisson_kernel(&g, 0.0, -1.7).unwrap();
        assert!((p1 - p2).abs() < 1e-12 * p1);
        assert!(poisson_kernel(&g, 0.0, 0.5).is_err());
        let mass = poisson_mass(&g, 0.0).unwrap();
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
        let x = 0.35;
        let direct =
            crate::quadrature::integrate_to_infinity(&|u| g.exact_poisson(x, -1.0 - u).unwrap(), 0.3)
                .unwrap();
        let fubini = exit_cdf(&g, x, -1.3).unwrap();
        assert!((direct / fubini - 1.0).abs() < 1e-6, "{direct} vs {fubini}");
    }

    #[test]
    fn union_reduces_to_oracle_structure() {
        let d = C11Set::new(&[(-1.0, -0.2), (0.2, 1.0)]).unwrap();
        let g = StableGreen::new(1.5, &d).unwrap();
        assert_eq!(g.kind(), GreenKind::NumericTable);
        // symmetry, domain monotonicity against the component oracle
        for (x, y) in [(-0.5, 0.6), (0.3, 0.9), (-0.9, -0.3)] {
            let a = g.value(x, y);
            let b = g.value(y, x);
            assert!((a / b - 1.0).abs() < 1e-7, "({x},{y}): {a} vs {b}");
            let c = &g.components()[d.component(x).unwrap()];
            assert!(a >= c.value(x, y));
        }
        // mirror symmetry of the domain
        let a = g.value(-0.5, 0.6);
        let b = g.value(0.5, -0.6);
        assert!((a / b - 1.0).abs() < 1e-9);
        for x in [-0.6, 0.25, 0.99] {
            let m = poisson_mass(&g, x).unwrap();
            assert!((m - 1.0).abs() < 1e-5, "x={x}: mass {m}");
        }
        // exit CDF: 0 far left, mass in the gap, 1 far right, mirror symmetry
        let x = -0.6;
        assert!(exit_cdf(&g, x, -1e9).unwrap() < 1e-9);
        let gap = exit_cdf(&g, x, 0.2).unwrap() - exit_cdf(&g, x, -0.2).unwrap();
        assert!(gap > 0.0 && gap < 1.0);
        assert!((exit_cdf(&g, x, 1e9).unwrap() - 1.0).abs() < 1e-5);
        let left = exit_cdf(&g, x, -1.3).unwrap();
        let right = 1.0 - exit_cdf(&g, -x, 1.3).unwrap();
        assert!((left - right).abs() < 1e-7, "{left} vs {right}");
    }

    #[test]
    fn union_gradient_matches_finite_difference() {
        let d = C11Set::new(&[(-1.0, -0.2), (0.2, 1.0)]).unwrap();
        let g = StableGreen::new(1.5, &d).unwrap();
        for (x, y) in [(-0.5, 0.6), (0.3, 0.5), (0.9, 0.4)] {
            let eps = 1e-5;
            let fd = (g.value(x + eps, y) - g.value(x - eps, y)) / (2.0 * eps);
            let an = g.gradient(x, y).unwrap();
            assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "({x},{y}): {fd} vs {an}");
        }
        let y = 0.45;
        let (c, alpha) = g.singular_part().unwrap();
        let h = 1e-7;
        let lhs = g.gradient(y + h, y).unwrap() - c * h.powf(alpha - 2.0);
        let reg = g.diagonal_regular_gradient(y).unwrap();
        assert!((lhs - reg).abs() < 1e-3, "{lhs} vs {reg}");
    }
}
