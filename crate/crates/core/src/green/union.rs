//! Green function of the α-stable process on a finite union of intervals.
//!
//! There is no closed form once the domain has more than one component. With
//! `I(x)` the component containing `x`, the strong Markov property at the
//! exit from `I(x)` gives
//!
//! `G_D(x,y) = G_{I(x)}(x,y) 1[I(x)=I(y)] + R_y(x)`,
//! `R_y(x) = F(x,y) + ∫_{D∖I(x)} P_{I(x)}(x,v) R_y(v) dv`,
//! `F(x,y) = 1[I(x)≠I(y)] ∫_{I(y)} P_{I(x)}(x,u) G_{I(y)}(u,y) du`,
//!
//! where every kernel on the right is the closed-form interval oracle. The
//! equation for `R_y` couples different components only, so its kernel is
//! smooth; it is solved by Nyström on a graded grid, and the Nyström
//! interpolant gives `R_y` and `∂_x R_y` anywhere in `D`.

use nalgebra::{DMatrix, DVector};

use super::stable::StableInterval;
use crate::error::{Error, Result};
use crate::geometry::C11Set;
use crate::quadrature::{graded_rule, tanh_sinh_rule};

const PANELS: usize = 16;
const ORDER: usize = 8;
const GRADING: f64 = 3.0;
const SOURCE_LEVEL: u32 = 6;

#[derive(Clone, Debug)]
pub(crate) struct UnionSolver {
    comps: Vec<StableInterval>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    comp_of: Vec<usize>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    source_level: u32,
}

/// Per-source data: the source rule on `I(y)` and the solved `R_y` at nodes.
pub(crate) struct SourceColumn {
    y: f64,
    k: usize,
    /// `(u, w·G_{I(y)}(u, y))`.
    rule: Vec<(f64, f64)>,
    r: DVector<f64>,
}

impl UnionSolver {
    pub(crate) fn new(comps: Vec<StableInterval>) -> Result<Self> {
        Self::with_resolution(comps, PANELS, SOURCE_LEVEL)
    }

    pub(crate) fn with_resolution(
        comps: Vec<StableInterval>,
        panels: usize,
        source_level: u32,
    ) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut comp_of = Vec::new();
        for (k, c) in comps.iter().enumerate() {
            for (x, w) in graded_rule(c.a, c.b, panels, ORDER, GRADING) {
                nodes.push(x);
                weights.push(w);
                comp_of.push(k);
            }
        }
        let n = nodes.len();
        let mut m = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            let ci = &comps[comp_of[i]];
            for j in 0..n {
                if comp_of[j] != comp_of[i] {
                    m[(i, j)] -= weights[j] * ci.poisson(nodes[i], nodes[j]);
                }
            }
        }
        let lu = m.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular("union Green system".into()));
        }
        Ok(Self {
            comps,
            nodes,
            weights,
            comp_of,
            lu,
            source_level,
        })
    }

    pub(crate) fn component(&self, x: f64) -> Option<usize> {
        self.comps.iter().position(|c| c.contains(x))
    }

    /// `F(x,y)` and `∂_x F(x,y)` for `x` outside `I(y)`.
    fn source_term(&self, col: &SourceColumn, kx: usize, x: f64) -> (f64, f64) {
        let c = &self.comps[kx];
        let mut f = 0.0;
        let mut df = 0.0;
        let (ax, slope) = c.poisson_inner(x);
        for &(u, q) in &col.rule {
            let p = ax * c.poisson_outer(u) / (x - u).abs();
            f += q * p;
            df += q * p * (slope - 1.0 / (x - u));
        }
        (f, df)
    }

    pub(crate) fn column(&self, y: f64) -> Result<SourceColumn> {
        let k = self
            .component(y)
            .ok_or_else(|| Error::Domain(format!("source {y} outside the domain")))?;
        let c = &self.comps[k];
        let mut rule = tanh_sinh_rule(c.a, y, self.source_level);
        rule.extend(tanh_sinh_rule(y, c.b, self.source_level));
        for p in rule.iter_mut() {
            p.1 *= c.value(p.0, y);
        }
        let mut col = SourceColumn {
            y,
            k,
            rule,
            r: DVector::zeros(0),
        };
        let n = self.nodes.len();
        let mut f = DVector::<f64>::zeros(n);
        for i in 0..n {
            if self.comp_of[i] != k {
                f[i] = self.source_term(&col, self.comp_of[i], self.nodes[i]).0;
            }
        }
        col.r = self
            .lu
            .solve(&f)
            .ok_or_else(|| Error::Singular("union Green solve".into()))?;
        Ok(col)
    }

    /// `(G_D(x,y), ∂_x G_D(x,y))` for the source in `col`; the gradient is
    /// `NaN` when `x = y`.
    pub(crate) fn evaluate(&self, col: &SourceColumn, x: f64) -> (f64, f64) {
        let Some(kx) = self.component(x) else {
            return (0.0, 0.0);
        };
        let c = &self.comps[kx];
        let (mut g, mut dg) = if kx == col.k {
            let d = if x == col.y {
                f64::NAN
            } else {
                c.gradient_unchecked(x, col.y)
            };
            (c.value(x, col.y), d)
        } else {
            self.source_term(col, kx, x)
        };
        let (r, dr) = self.harmonic_part(col, kx, x);
        g += r;
        dg += dr;
        (g, dg)
    }

    /// `∫_{D∖I(x)} P_{I(x)}(x,v) R_y(v) dv` and its `x`-derivative.
    fn harmonic_part(&self, col: &SourceColumn, kx: usize, x: f64) -> (f64, f64) {
        let c = &self.comps[kx];
        let (ax, slope) = c.poisson_inner(x);
        let mut r = 0.0;
        let mut dr = 0.0;
        for j in 0..self.nodes.len() {
            if self.comp_of[j] == kx {
                continue;
            }
            let v = self.nodes[j];
            let p = ax * c.poisson_outer(v) / (x - v).abs() * self.weights[j] * col.r[j];
            r += p;
            dr += p * (slope - 1.0 / (x - v));
        }
        (r, dr)
    }

    /// Regular part of `∂_x G_D` at `x = y`.
    pub(crate) fn diagonal_regular_gradient(&self, y: f64) -> Result<f64> {
        let col = self.column(y)?;
        let c = &self.comps[col.k];
        Ok(c.diagonal_regular_gradient(y) + self.harmonic_part(&col, col.k, y).1)
    }
}

/// Validates that the set is usable for the union solver.
pub(crate) fn build(alpha: f64, d: &C11Set) -> Result<(Vec<StableInterval>, Option<UnionSolver>)> {
    let base = super::stable::StableConstants::new(alpha)?;
    let comps: Vec<StableInterval> = d
        .intervals()
        .iter()
        .map(|&(a, b)| StableInterval::with_constants(base.clone(), a, b))
        .collect();
    let solver = if comps.len() > 1 {
        Some(UnionSolver::new(comps.clone())?)
    } else {
        None
    };
    Ok((comps, solver))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_under_refinement() {
        let d = C11Set::new(&[(-1.0, -0.2), (0.2, 1.0)]).unwrap();
        let (comps, coarse) = build(1.5, &d).unwrap();
        let coarse = coarse.unwrap();
        let fine = UnionSolver::with_resolution(comps, 2 * PANELS, SOURCE_LEVEL + 1).unwrap();
        for (x, y) in [(-0.5, 0.6), (0.25, 0.95), (-0.21, -0.9), (0.6, 0.6)] {
            let (g0, d0) = coarse.evaluate(&coarse.column(y).unwrap(), x);
            let (g1, d1) = fine.evaluate(&fine.column(y).unwrap(), x);
            assert!((g0 / g1 - 1.0).abs() < 1e-7, "({x},{y}): {g0} vs {g1}");
            if x != y {
                assert!((d0 - d1).abs() < 1e-6 * d1.abs().max(1.0), "({x},{y}): {d0} vs {d1}");
            }
        }
    }
}
