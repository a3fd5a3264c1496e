//! Monte Carlo simulation of the drift-perturbed process killed on leaving `D`.
//!
//! Paths use a splitting scheme: a drift substep `X + b(X)Δt` followed by an
//! exact stable increment. The step shrinks near `∂D` so that its natural
//! length scale stays below a fixed fraction of the boundary distance, and an
//! exit is declared at the first post-step position outside `D`.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, Open01, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::C11Set;
use crate::kato::DriftField;
use crate::levy_models::{Family, LevyModel};
use crate::quadrature::gauss_legendre;
use statrs::function::gamma::gamma;

/// Paths per reduction block. Blocks are summed in index order.
pub const BLOCK: usize = 1000;

/// Growth of the step cap with elapsed time, `Δt ≤ RAMP · t`.
const RAMP: f64 = 0.25;

/// Length scale of the first step, as a fraction of a bin. The trapezoid
/// rule books `Δt₀/2` at the deterministic start, so the start bin carries
/// an `O(Δt₀)` error.
const START_SCALE: f64 = 1e-3;

/// A step is bisected while an endpoint lies within this many noise scales
/// `(Δt)^{1/α}` of `∂D`.
pub const BRIDGE_RATIO: f64 = 10.0;

/// Distance from `x` to `∂D`, on either side.
fn boundary_distance(d: &C11Set, x: f64) -> f64 {
    d.intervals().iter().map(|&(a, b)| (x - a).abs().min((x - b).abs())).fold(f64::INFINITY, f64::min)
}

fn comp_of(d: &C11Set, x: f64) -> usize {
    d.component(x).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    /// Largest time step.
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    /// Jumps below this size are replaced by a Gaussian for models without
    /// an exact sampler.
    pub cutoff: f64,
    /// Target occupation bin width; each component is split into equal bins.
    pub bin_width: f64,
    /// Near `∂D` the step is cut so its length scale is at most this
    /// fraction of the boundary distance.
    pub boundary_fraction: f64,
    pub min_dt: f64,
    /// Paths still inside after this many steps are censored.
    pub max_steps: u64,
    /// Bisect steps near `∂D` by bridge sampling (pure stable models only).
    pub bridge: bool,
}

impl Default for PathConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            paths: 100_000,
            seed: 0,
            cutoff: 1e-3,
            bin_width: 0.05,
            boundary_fraction: 0.1,
            min_dt: 1e-14,
            max_steps: 10_000_000,
            bridge: true,
        }
    }
}

impl PathConfig {
    /// Defaults scaled to the mean exit time scale `1/h(r)` of the largest
    /// component, `r` its half length.
    pub fn for_domain(model: &LevyModel, d: &C11Set) -> Result<Self> {
        let r = d.intervals().iter().map(|(a, b)| 0.5 * (b - a)).fold(0.0, f64::max);
        let scale = 1.0 / model.h(r)?;
        Ok(Self {
            dt: 1e-3 * scale,
            min_dt: 1e-14 * scale,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("time step {} must be positive", self.dt));
        }
        if self.paths == 0 {
            return bad("need at least one path".into());
        }
        if !(self.bin_width > 0.0) {
            return bad(format!("bin width {} must be positive", self.bin_width));
        }
        if !(self.boundary_fraction > 0.0 && self.boundary_fraction <= 1.0) {
            return bad(format!("boundary fraction {} outside (0, 1]", self.boundary_fraction));
        }
        if !(self.min_dt > 0.0 && self.min_dt <= self.dt) {
            return bad(format!("minimum step {} outside (0, dt]", self.min_dt));
        }
        if !(self.cutoff > 0.0) {
            return bad(format!("small-jump cutoff {} must be positive", self.cutoff));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    MeanExitTime,
    Occupation,
    ExitProbability,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    /// Sample standard deviation over `√n`.
    pub se: f64,
    pub n: usize,
    pub kind: EstimatorKind,
}

impl McEstimate {
    fn from_sums(sum: f64, sum_sq: f64, n: usize, kind: EstimatorKind) -> Self {
        let nf = n as f64;
        let mean = sum / nf;
        let var = if n > 1 { ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
        Self { value: mean, se: (var / nf).sqrt(), n, kind }
    }

    /// `|value − target|` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target).abs() / self.se
    }
}

/// Equal-width occupation bins covering each component of `D` exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    comps: Vec<(f64, f64, usize, f64)>,
    total: usize,
}

impl Bins {
    pub fn new(d: &C11Set, width: f64) -> Self {
        let mut comps = vec![];
        let mut total = 0;
        for &(a, b) in d.intervals() {
            let n = ((b - a) / width).ceil().max(1.0) as usize;
            comps.push((a, b, total, (b - a) / n as f64));
            total += n;
        }
        Self { comps, total }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// `(lo, hi)` of every bin, in order.
    pub fn edges(&self) -> Vec<(f64, f64)> {
        let mut out = vec![];
        for (k, &(a, b, start, w)) in self.comps.iter().enumerate() {
            let n = self.comps.get(k + 1).map_or(self.total, |c| c.2) - start;
            let edge = |j: usize| if j == n { b } else { a + j as f64 * w };
            out.extend((0..n).map(|j| (edge(j), edge(j + 1))));
        }
        out
    }

    fn width(&self, comp: usize) -> f64 {
        self.comps[comp].3
    }

    fn index(&self, comp: usize, x: f64) -> usize {
        let (a, _, start, w) = self.comps[comp];
        let n = self.comps.get(comp + 1).map_or(self.total, |c| c.2) - start;
        start + (((x - a) / w) as usize).min(n - 1)
    }
}

/// Symmetric α-stable variate with `E e^{iξZ} = e^{−|ξ|^α}`
/// (Chambers–Mallows–Stuck), scaled to time `dt`.
pub fn sample_stable_increment<R: Rng + ?Sized>(alpha: f64, dt: f64, rng: &mut R) -> f64 {
    dt.powf(1.0 / alpha) * standard_stable(alpha, rng)
}

fn standard_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    let v = FRAC_PI_2 * (2.0 * u - 1.0);
    let w: f64 = rng.sample(Exp1);
    let ia = 1.0 / alpha;
    let e = (1.0 - alpha) * ia * ((v - alpha * v).cos() / w).ln() - ia * v.cos().ln();
    (alpha * v).sin() * e.exp()
}

/// Log-log interpolation table, extrapolated linearly past both ends.
#[derive(Clone, Debug)]
struct LogTable {
    x0: f64,
    step: f64,
    y: Vec<f64>,
}

impl LogTable {
    fn build(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        let (x0, x1) = (lo.ln(), hi.ln());
        let step = (x1 - x0) / (n - 1) as f64;
        let y = (0..n).map(|i| f((x0 + i as f64 * step).exp()).map(f64::ln)).collect::<Result<Vec<_>>>()?;
        Ok(Self { x0, step, y })
    }

    fn eval(&self, x: f64) -> f64 {
        let t = (x.ln() - self.x0) / self.step;
        let last = self.y.len() - 1;
        let i = (t.floor().max(0.0) as usize).min(last - 1);
        let f = t - i as f64;
        ((1.0 - f) * self.y[i] + f * self.y[i + 1]).exp()
    }
}

#[derive(Clone, Debug)]
enum Noise {
    /// Independent stable components `(w^{1/α}, α)`.
    Stable(Vec<(f64, f64)>),
    /// Compound Poisson jumps of size above `cutoff` plus a Gaussian for the rest.
    Compound {
        rate: f64,
        sigma2: f64,
        sizes: JumpSizes,
    },
}

#[derive(Clone, Debug)]
enum JumpSizes {
    Truncated { alpha: f64, lo: f64, hi: f64 },
    /// ln r as a function of the tail fraction `T(r)/T(cutoff)` on a log grid.
    Table { fractions: Vec<f64>, radii: Vec<f64> },
}

impl JumpSizes {
    fn sample(&self, u: f64) -> f64 {
        match self {
            Self::Truncated { alpha, lo, hi } => {
                let (a, b) = (lo.powf(-alpha), hi.powf(-alpha));
                (a - u * (a - b)).powf(-1.0 / alpha)
            }
            Self::Table { fractions, radii } => {
                // fractions decrease from 1
                let j = fractions.partition_point(|&f| f > u);
                if j == 0 {
                    return radii[0];
                }
                if j == fractions.len() {
                    return *radii.last().unwrap();
                }
                let (f0, f1) = (fractions[j - 1].ln(), fractions[j].ln());
                let t = (u.ln() - f0) / (f1 - f0);
                ((1.0 - t) * radii[j - 1].ln() + t * radii[j].ln()).exp()
            }
        }
    }
}

/// Stable bridge sampler for `L_t = (w t)^{1/α} Z`, using a table of the
/// density of `Z`.
#[derive(Clone, Debug)]
struct Bridge {
    alpha: f64,
    weight: f64,
    du: f64,
    table: Vec<f64>,
    /// Asymptotic series coefficients of the density beyond the table.
    tail: Vec<f64>,
}

const BRIDGE_TABLE_END: f64 = 60.0;

impl Bridge {
    fn new(alpha: f64, weight: f64) -> Self {
        let xi_max = 42f64.powf(1.0 / alpha);
        let du = 0.01;
        let n = (BRIDGE_TABLE_END / du) as usize + 1;
        let rule = gauss_legendre(16);
        let nodes: Vec<(f64, f64)> = (0..200)
            .flat_map(|k| rule.mapped(xi_max * k as f64 / 200.0, xi_max * (k + 1) as f64 / 200.0))
            .map(|(xi, w)| (xi, w * (-xi.powf(alpha)).exp() / std::f64::consts::PI))
            .collect();
        let table = (0..n)
            .into_par_iter()
            .map(|i| {
                let u = i as f64 * du;
                nodes.iter().map(|&(xi, w)| w * (u * xi).cos()).sum()
            })
            .collect();
        let tail = (1..=6)
            .map(|k| {
                let k = k as f64;
                let sign = if k as i32 % 2 == 1 { 1.0 } else { -1.0 };
                sign * gamma(alpha * k + 1.0) / gamma(k + 1.0) * (std::f64::consts::FRAC_PI_2 * alpha * k).sin()
                    / std::f64::consts::PI
            })
            .collect();
        Self { alpha, weight: weight.powf(alpha), du, table, tail }
    }

    /// Noise scale after time `s`.
    fn scale(&self, s: f64) -> f64 {
        (self.weight * s).powf(1.0 / self.alpha)
    }

    fn unit_density(&self, u: f64) -> f64 {
        let u = u.abs();
        if u < BRIDGE_TABLE_END {
            let t = u / self.du;
            let i = t as usize;
            let f = t - i as f64;
            (1.0 - f) * self.table[i] + f * self.table[i + 1]
        } else {
            self.tail.iter().enumerate().map(|(k, c)| c * u.powf(-self.alpha * (k + 1) as f64 - 1.0)).sum()
        }
    }

    /// `L_{s/2} − L_0` given `L_s − L_0 = ell`. Proposals come from the
    /// equal mixture of the forward and backward half-step laws.
    fn midpoint<R: Rng + ?Sized>(&self, ell: f64, s: f64, rng: &mut R) -> f64 {
        let sh = self.scale(0.5 * s);
        let bound = self.unit_density(0.5 * ell / sh);
        loop {
            let z = sh * standard_stable(self.alpha, rng);
            let m = if rng.random::<bool>() { z } else { ell - z };
            let (a, b) = (self.unit_density(m / sh), self.unit_density((ell - m) / sh));
            let accept = a * b / ((a + b) * bound);
            if rng.random::<f64>() < accept {
                return m;
            }
        }
    }
}

/// Simulator for one `(model, b, D)` triple.
pub struct Simulator<'a> {
    model: &'a LevyModel,
    drift: &'a DriftField,
    domain: &'a C11Set,
    config: PathConfig,
    noise: Noise,
    /// `1/h(r)`, the time the process needs to move distance `r`.
    clock: LogTable,
    bins: Bins,
    bridge: Option<Bridge>,
}

/// How a single path ended.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathStatus {
    Exited,
    Censored,
    /// The drift was not finite at the current position.
    Aborted,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub status: PathStatus,
    pub tau: f64,
    pub exit: f64,
    pub steps: u64,
}

impl<'a> Simulator<'a> {
    pub fn new(model: &'a LevyModel, drift: &'a DriftField, domain: &'a C11Set, config: PathConfig) -> Result<Self> {
        config.validate()?;
        let noise = match model.family() {
            Family::Stable { alpha } => Noise::Stable(vec![(1.0, *alpha)]),
            Family::StableMixture { terms } => {
                Noise::Stable(terms.iter().map(|&(w, a)| (w.powf(1.0 / a), a)).collect())
            }
            Family::TruncatedStable { alpha, radius } => {
                let c = config.cutoff.min(0.5 * radius);
                Noise::Compound {
                    rate: 2.0 * model.tail_mass(c),
                    sigma2: model.small_jump_variance(c),
                    sizes: JumpSizes::Truncated { alpha: *alpha, lo: c, hi: *radius },
                }
            }
            Family::Custom { .. } => {
                let c = config.cutoff;
                let t0 = model.tail_mass(c);
                if !(t0 > 0.0 && t0.is_finite()) {
                    return Err(Error::Model(format!("tail mass {t0} above the cutoff {c}")));
                }
                let (mut radii, mut fractions) = (vec![c], vec![1.0]);
                let mut r = c;
                while *fractions.last().unwrap() > 1e-12 && radii.len() < 2000 {
                    r *= 1.05;
                    radii.push(r);
                    fractions.push(model.tail_mass(r) / t0);
                }
                Noise::Compound {
                    rate: 2.0 * t0,
                    sigma2: model.small_jump_variance(c),
                    sizes: JumpSizes::Table { fractions, radii },
                }
            }
        };
        let diam = domain.diam();
        let clock = LogTable::build(1e-16 * diam, diam, 200, |r| model.h(r).map(|h| 1.0 / h))?;
        let bins = Bins::new(domain, config.bin_width);
        let bridge = match &noise {
            Noise::Stable(terms) if terms.len() == 1 && config.bridge => Some(Bridge::new(terms[0].1, terms[0].0)),
            _ => None,
        };
        Ok(Self { model, drift, domain, config, noise, clock, bins, bridge })
    }

    pub fn config(&self) -> &PathConfig {
        &self.config
    }

    pub fn bins(&self) -> &Bins {
        &self.bins
    }

    /// True when the jump law is approximated (small jumps by a Gaussian).
    pub fn approximate(&self) -> bool {
        matches!(self.noise, Noise::Compound { .. })
    }

    pub fn model(&self) -> &LevyModel {
        self.model
    }

    /// True when steps ending near `∂D` are checked for excursions by
    /// bridge sampling.
    pub fn bridged(&self) -> bool {
        self.bridge.is_some()
    }

    /// Stream `index` of the run's seed.
    pub fn path_rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(index);
        rng
    }

    /// One path from `x0`. Occupation time is added to `occ` per bin and the
    /// touched bins are appended to `touched`.
    pub fn simulate_exit<R: Rng + ?Sized>(
        &self,
        x0: f64,
        rng: &mut R,
        occ: &mut [f64],
        touched: &mut Vec<usize>,
    ) -> PathSample {
        let cfg = &self.config;
        let ivs = self.domain.intervals();
        let mut x = x0;
        let mut t = 0.0;
        let mut comp = match self.domain.component(x0) {
            Some(k) => k,
            None => return PathSample { status: PathStatus::Exited, tau: 0.0, exit: x0, steps: 0 },
        };
        let mut next_jump = match self.noise {
            Noise::Compound { rate, .. } => rng.sample::<f64, _>(Exp1) / rate,
            Noise::Stable(_) => f64::INFINITY,
        };
        let mut add = |z: f64, w: f64| {
            let k = self.bins.index(comp_of(self.domain, z), z);
            if occ[k] == 0.0 {
                touched.push(k);
            }
            occ[k] += w;
        };
        // the occupation density is rough just after the start, so the step
        // grows geometrically from a small fraction of a bin
        let mut ramp = self.clock.eval(START_SCALE * self.bins.width(comp));
        for step in 0..cfg.max_steps {
            let (a, b) = ivs[comp];
            let delta = (x - a).min(b - x);
            let dt = self.clock.eval(cfg.boundary_fraction * delta).min(ramp).clamp(cfg.min_dt, cfg.dt);
            let drift = self.drift.eval(x);
            if !drift.is_finite() {
                return PathSample { status: PathStatus::Aborted, tau: t, exit: x, steps: step };
            }
            let noise = self.increment(dt, &mut next_jump, rng);
            let y = x + drift * dt + noise;
            let exit = match &self.bridge {
                Some(br) => self.first_exit(br, x, drift, noise, dt, rng),
                None if self.domain.contains(y) => None,
                None => Some(y),
            };
            // trapezoid rule in time on the killed path
            add(x, 0.5 * dt);
            match exit {
                None => {
                    add(y, 0.5 * dt);
                    t += dt;
                    ramp = ramp.max(RAMP * t);
                    x = y;
                    comp = comp_of(self.domain, y);
                }
                Some(z) => {
                    return PathSample { status: PathStatus::Exited, tau: t + 0.5 * dt, exit: z, steps: step + 1 };
                }
            }
        }
        PathSample { status: PathStatus::Censored, tau: t, exit: x, steps: cfg.max_steps }
    }

    /// Position of the first exit within a step from `x` whose noise
    /// increment over `dt` is `noise`. Sub-intervals with an endpoint within
    /// [`BRIDGE_RATIO`] noise scales of `∂D`, on either side, are bisected by
    /// bridge sampling, earliest first.
    fn first_exit<R: Rng + ?Sized>(
        &self,
        br: &Bridge,
        x: f64,
        drift: f64,
        noise: f64,
        dt: f64,
        rng: &mut R,
    ) -> Option<f64> {
        let pos = |t: f64, l: f64| x + drift * t + l;
        // (t_a, L_a, t_b, L_b, depth); the left end is always inside
        let mut stack = vec![(0.0, 0.0, dt, noise, 0u32)];
        while let Some((ta, la, tb, lb, depth)) = stack.pop() {
            let (xa, xb) = (pos(ta, la), pos(tb, lb));
            let near = boundary_distance(self.domain, xa).min(boundary_distance(self.domain, xb));
            if depth >= 60 || near >= BRIDGE_RATIO * br.scale(tb - ta) {
                if self.domain.contains(xb) {
                    continue;
                }
                return Some(xb);
            }
            let tm = 0.5 * (ta + tb);
            let lm = la + br.midpoint(lb - la, tb - ta, rng);
            // left half first
            if self.domain.contains(pos(tm, lm)) {
                stack.push((tm, lm, tb, lb, depth + 1));
            }
            stack.push((ta, la, tm, lm, depth + 1));
        }
        None
    }

    fn increment<R: Rng + ?Sized>(&self, dt: f64, next_jump: &mut f64, rng: &mut R) -> f64 {
        match &self.noise {
            Noise::Stable(terms) => terms
                .iter()
                .map(|&(s, a)| s * dt.powf(1.0 / a) * standard_stable(a, rng))
                .sum(),
            Noise::Compound { rate, sigma2, sizes } => {
                let z: f64 = rng.sample(StandardNormal);
                let mut dx = (sigma2 * dt).sqrt() * z;
                let mut left = dt;
                while *next_jump <= left {
                    left -= *next_jump;
                    let r = sizes.sample(rng.sample(Open01));
                    dx += if rng.random::<bool>() { r } else { -r };
                    *next_jump = rng.sample::<f64, _>(Exp1) / rate;
                }
                *next_jump -= left;
                dx
            }
        }
    }

    /// All paths from `x0`, reduced in blocks of [`BLOCK`] in index order.
    pub fn run(&self, x0: f64) -> Result<McRun> {
        if !self.domain.contains(x0) {
            return Err(Error::Domain(format!("starting point {x0} is not in D")));
        }
        let n = self.config.paths;
        let blocks: Vec<Accum> = (0..n.div_ceil(BLOCK))
            .into_par_iter()
            .map(|blk| {
                let mut acc = Accum::new(self.bins.len());
                let mut occ = vec![0.0; self.bins.len()];
                let mut touched = vec![];
                for i in blk * BLOCK..((blk + 1) * BLOCK).min(n) {
                    let mut rng = self.path_rng(i as u64);
                    let s = self.simulate_exit(x0, &mut rng, &mut occ, &mut touched);
                    acc.push(&s, &mut occ, &mut touched);
                }
                acc
            })
            .collect();
        let mut total = Accum::new(self.bins.len());
        for b in blocks {
            total.merge(b);
        }
        Ok(total.finish(x0, self))
    }
}

struct Accum {
    exited: usize,
    censored: usize,
    aborted: usize,
    steps: u64,
    tau: (f64, f64),
    occ: Vec<(f64, f64)>,
    exits: Vec<f64>,
}

impl Accum {
    fn new(bins: usize) -> Self {
        Self {
            exited: 0,
            censored: 0,
            aborted: 0,
            steps: 0,
            tau: (0.0, 0.0),
            occ: vec![(0.0, 0.0); bins],
            exits: vec![],
        }
    }

    fn push(&mut self, s: &PathSample, occ: &mut [f64], touched: &mut Vec<usize>) {
        self.steps += s.steps;
        match s.status {
            PathStatus::Exited => {
                self.exited += 1;
                self.tau.0 += s.tau;
                self.tau.1 += s.tau * s.tau;
                self.exits.push(s.exit);
                for &k in touched.iter() {
                    self.occ[k].0 += occ[k];
                    self.occ[k].1 += occ[k] * occ[k];
                }
            }
            PathStatus::Censored => self.censored += 1,
            PathStatus::Aborted => self.aborted += 1,
        }
        for &k in touched.iter() {
            occ[k] = 0.0;
        }
        touched.clear();
    }

    fn merge(&mut self, o: Accum) {
        self.exited += o.exited;
        self.censored += o.censored;
        self.aborted += o.aborted;
        self.steps += o.steps;
        self.tau.0 += o.tau.0;
        self.tau.1 += o.tau.1;
        for (a, b) in self.occ.iter_mut().zip(o.occ) {
            a.0 += b.0;
            a.1 += b.1;
        }
        self.exits.extend(o.exits);
    }

    fn finish(self, x0: f64, sim: &Simulator<'_>) -> McRun {
        let n = self.exited;
        let green = sim
            .bins
            .edges()
            .into_iter()
            .zip(self.occ)
            .map(|((lo, hi), (s, s2))| {
                let w = hi - lo;
                BinEstimate {
                    lo,
                    hi,
                    estimate: McEstimate::from_sums(s / w, s2 / (w * w), n, EstimatorKind::Occupation),
                }
            })
            .collect();
        McRun {
            x0,
            config: sim.config.clone(),
            approximate: sim.approximate(),
            mean_exit_time: McEstimate::from_sums(self.tau.0, self.tau.1, n, EstimatorKind::MeanExitTime),
            green,
            exits: self.exits,
            censored: self.censored,
            aborted: self.aborted,
            steps: self.steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinEstimate {
    pub lo: f64,
    pub hi: f64,
    /// Occupation time density, an estimate of the bin average of `G̃(x₀, ·)`.
    pub estimate: McEstimate,
}

/// Results of one batch of paths. Censored and aborted paths are excluded
/// from every estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McRun {
    pub x0: f64,
    pub config: PathConfig,
    pub approximate: bool,
    pub mean_exit_time: McEstimate,
    pub green: Vec<BinEstimate>,
    /// Exit positions in path order.
    pub exits: Vec<f64>,
    pub censored: usize,
    pub aborted: usize,
    pub steps: u64,
}

impl McRun {
    /// Fraction of exits at or beyond `z`.
    pub fn exit_probability_above(&self, z: f64) -> McEstimate {
        let k = self.exits.iter().filter(|&&e| e >= z).count() as f64;
        McEstimate::from_sums(k, k, self.exits.len(), EstimatorKind::ExitProbability)
    }

    /// `Σ bin value · width`, which equals the mean exit time.
    pub fn occupation_total(&self) -> f64 {
        self.green.iter().map(|b| b.estimate.value * (b.hi - b.lo)).sum()
    }
}

pub fn mc_mean_exit_time(
    model: &LevyModel,
    b: &DriftField,
    d: &C11Set,
    x0: f64,
    config: &PathConfig,
) -> Result<McEstimate> {
    Ok(Simulator::new(model, b, d, config.clone())?.run(x0)?.mean_exit_time)
}

pub fn mc_green(
    model: &LevyModel,
    b: &DriftField,
    d: &C11Set,
    x0: f64,
    config: &PathConfig,
) -> Result<Vec<BinEstimate>> {
    Ok(Simulator::new(model, b, d, config.clone())?.run(x0)?.green)
}

/// Comparison of the empirical exit law with a reference CDF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitLawReport {
    /// `sup |F_N − F|` over the CDF grid.
    pub ks_grid: f64,
    /// Largest increment of `F` between neighbouring grid points; the true
    /// KS distance is at most `ks_grid + gap`.
    pub gap: f64,
    pub n: usize,
    pub grid: Vec<(f64, f64)>,
}

impl ExitLawReport {
    pub fn ks_bound(&self) -> f64 {
        self.ks_grid + self.gap
    }
}

/// Batched CDF evaluation: values at every point of the slice.
pub type CdfBatch<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>> + Sync + 'a;

/// Tabulates a CDF supported on `Dᶜ` finely enough that neighbouring values
/// differ by at most `gap`.
pub fn exit_cdf_grid(d: &C11Set, cdf: &CdfBatch<'_>, gap: f64) -> Result<Vec<(f64, f64)>> {
    let ivs = d.intervals();
    let (lo, hi) = (ivs[0].0, ivs[ivs.len() - 1].1);
    let mut far = d.diam();
    loop {
        let f = cdf(&[lo - far, hi + far])?;
        if f[0] < 0.5 * gap && 1.0 - f[1] < 0.5 * gap {
            break;
        }
        far *= 4.0;
        if far > 1e12 * d.diam() {
            return Err(Error::Refused("exit law tails too heavy to tabulate".into()));
        }
    }
    // rays (anchor on ∂D, direction, length) covering Dᶜ up to distance `far`
    let mut rays = vec![(lo, -1.0, far), (hi, 1.0, far)];
    for w in ivs.windows(2) {
        let half = 0.5 * (w[1].0 - w[0].1);
        rays.push((w[0].1, 1.0, half));
        rays.push((w[1].0, -1.0, half));
    }
    // closer than this the reference CDF is limited by rounding of `y` near ∂D
    let s_min = 1e-12 * d.diam();
    let mut pending: Vec<Vec<f64>> = rays
        .iter()
        .map(|&(_, _, len)| {
            let mut ss: Vec<f64> = (0..=14).map(|e| (len * 10f64.powi(-e)).max(s_min)).collect();
            ss.extend((1..8).map(|i| len * i as f64 / 8.0));
            ss.sort_by(f64::total_cmp);
            ss.dedup();
            ss
        })
        .collect();
    let mut vals: Vec<Vec<(f64, f64)>> = vec![vec![]; rays.len()];
    while pending.iter().any(|p| !p.is_empty()) {
        let zs: Vec<f64> = rays
            .iter()
            .zip(&pending)
            .flat_map(|(&(anchor, dir, _), ss)| ss.iter().map(move |&s| anchor + dir * s))
            .collect();
        let mut fs = cdf(&zs)?.into_iter();
        for (v, ss) in vals.iter_mut().zip(&mut pending) {
            v.extend(ss.drain(..).map(|s| (s, fs.next().expect("one value per point"))));
            v.sort_by(|p, q| p.0.total_cmp(&q.0));
            ss.extend(
                v.windows(2)
                    .filter(|w| (w[1].1 - w[0].1).abs() > gap)
                    .map(|w| if w[1].0 > 1.5 * w[0].0 { (w[0].0 * w[1].0).sqrt() } else { 0.5 * (w[0].0 + w[1].0) }),
            );
            if v.len() > 20_000 {
                return Err(Error::Refused("exit law grid did not resolve".into()));
            }
        }
    }
    let mut out: Vec<(f64, f64)> = rays
        .iter()
        .zip(vals)
        .flat_map(|(&(anchor, dir, _), v)| v.into_iter().map(move |(s, f)| (anchor + dir * s, f)))
        .collect();
    out.sort_by(|p, q| p.0.total_cmp(&q.0));
    Ok(out)
}

/// KS comparison of `exits` with a CDF tabulated by [`exit_cdf_grid`].
pub fn exit_law_distance(exits: &[f64], grid: Vec<(f64, f64)>) -> ExitLawReport {
    let mut sorted = exits.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut ks: f64 = 0.0;
    let mut gap: f64 = grid.first().map_or(1.0, |p| p.1);
    let mut prev = 0.0;
    for &(z, f) in &grid {
        let emp = sorted.partition_point(|&e| e <= z) as f64 / n as f64;
        ks = ks.max((emp - f).abs());
        gap = gap.max(f - prev);
        prev = f;
    }
    gap = gap.max(1.0 - prev);
    ExitLawReport { ks_grid: ks, gap, n, grid }
}

/// Simulated exit law from `x0` against `cdf`.
pub fn mc_exit_law(
    model: &LevyModel,
    b: &DriftField,
    d: &C11Set,
    x0: f64,
    config: &PathConfig,
    cdf: &CdfBatch<'_>,
    gap: f64,
) -> Result<ExitLawReport> {
    let run = Simulator::new(model, b, d, config.clone())?.run(x0)?;
    Ok(exit_law_distance(&run.exits, exit_cdf_grid(d, cdf, gap)?))
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let z = a[i].min(b[j]);
        while i < a.len() && a[i] <= z {
            i += 1;
        }
        while j < b.len() && b[j] <= z {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::green::{exit_cdf_batch, stable_mean_exit_time, GreenFunction, StableGreen};

    fn interval() -> (LevyModel, C11Set) {
        (LevyModel::stable(1.5).unwrap(), C11Set::interval(-1.0, 1.0).unwrap())
    }

    fn cfg(paths: usize, seed: u64) -> PathConfig {
        PathConfig { dt: 1e-2, paths, seed, ..PathConfig::default() }
    }

    #[test]
    fn stable_increments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut z: Vec<f64> = (0..1_000_000).map(|_| sample_stable_increment(1.5, 1.0, &mut rng)).collect();
        z.sort_by(f64::total_cmp);
        // median of a symmetric law; SE of the sample median is 1/(2 p(0) √n)
        let p0 = statrs::function::gamma::gamma(1.0 + 1.0 / 1.5) / std::f64::consts::PI;
        let se = 1.0 / (2.0 * p0 * 1000.0);
        assert!(z[500_000].abs() < 3.0 * se, "{}", z[500_000]);

        let half: Vec<f64> = (0..100_000).map(|_| sample_stable_increment(1.5, 0.5, &mut rng)).collect();
        let full: Vec<f64> = (0..100_000).map(|_| 2f64.powf(-1.0 / 1.5) * sample_stable_increment(1.5, 1.0, &mut rng)).collect();
        assert!(ks_two_sample(&half, &full) < 0.01);
    }

    #[test]
    fn stable_tail_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000_000;
        let ts = [10.0, 31.6, 100.0, 316.0, 1000.0];
        let mut counts = [0usize; 5];
        for _ in 0..n {
            let z = sample_stable_increment(1.5, 1.0, &mut rng).abs();
            for (c, &t) in counts.iter_mut().zip(&ts) {
                *c += (z > t) as usize;
            }
        }
        let xs: Vec<f64> = ts.iter().map(|t: &f64| t.ln()).collect();
        let ys: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 5.0, ys.iter().sum::<f64>() / 5.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        assert!((slope / -1.5 - 1.0).abs() < 0.05, "{slope}");
    }

    #[test]
    fn bridge_midpoints_have_the_half_step_law() {
        let br = Bridge::new(1.5, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut mids, mut direct) = (vec![], vec![]);
        for _ in 0..100_000 {
            let ell = sample_stable_increment(1.5, 1.0, &mut rng);
            mids.push(br.midpoint(ell, 1.0, &mut rng));
            direct.push(sample_stable_increment(1.5, 0.5, &mut rng));
        }
        assert!(ks_two_sample(&mids, &direct) < 0.01);
        // after a big jump the midpoint sits near one end or the other
        let far: Vec<f64> = (0..20_000).map(|_| br.midpoint(30.0, 1.0, &mut rng)).collect();
        let low = far.iter().filter(|&&m| m < 15.0).count() as f64 / 20_000.0;
        assert!((low - 0.5).abs() < 0.02, "{low}");
        assert!((br.unit_density(0.0) - p0(1.5)).abs() < 1e-9);
    }

    fn p0(alpha: f64) -> f64 {
        statrs::function::gamma::gamma(1.0 + 1.0 / alpha) / std::f64::consts::PI
    }

    #[test]
    fn symmetric_exits_and_drift_shift() {
        let (m, d) = interval();
        let zero = DriftField::zero();
        let run = Simulator::new(&m, &zero, &d, cfg(20_000, 3)).unwrap().run(0.0).unwrap();
        let right = run.exit_probability_above(1.0);
        assert!(right.z_score(0.5) < 3.0, "{right:?}");
        assert!(run.exits.iter().all(|&z| !d.contains(z)));
        // the exit density blows up like (z−1)^{−α/2}, so small overshoots are common
        let eps = 1e-12;
        let g = StableGreen::new(1.5, &d).unwrap();
        let s1 = 1e-3 * eps;
        let c = g.exact_poisson(0.0, 1.0 + s1).unwrap() * (s1 * (2.0 + s1)).powf(0.75) * (1.0 + s1);
        let p = 2.0 * c * 2f64.powf(-0.75) * eps.powf(0.25) / 0.25;
        let n = run.exits.len() as f64;
        let near = run.exits.iter().filter(|&&z| (z.abs() - 1.0).abs() < eps).count() as f64;
        assert!((near - n * p).abs() < 4.0 * (n * p).sqrt(), "{near} vs {}", n * p);
        let up = DriftField::constant(1.0);
        let pushed = Simulator::new(&m, &up, &d, cfg(20_000, 3)).unwrap().run(0.0).unwrap();
        let p = pushed.exit_probability_above(1.0);
        assert!(p.value - 0.5 > 3.0 * p.se, "{p:?}");
    }

    #[test]
    fn mean_exit_time_and_occupation_identity() {
        let (m, d) = interval();
        let zero = DriftField::zero();
        let exact = stable_mean_exit_time(1.5, -1.0, 1.0, 0.2);
        let run = Simulator::new(&m, &zero, &d, cfg(40_000, 4)).unwrap().run(0.2).unwrap();
        assert!(run.mean_exit_time.z_score(exact) < 3.0, "{:?} vs {exact}", run.mean_exit_time);
        assert!((run.occupation_total() - run.mean_exit_time.value).abs() < 1e-3 * run.mean_exit_time.se);
        assert_eq!(run.censored + run.aborted, 0);

        let near = Simulator::new(&m, &zero, &d, cfg(4_000, 5)).unwrap().run(1.0 - 1e-6).unwrap();
        assert!(near.mean_exit_time.value < 1e-3, "{:?}", near.mean_exit_time);

        // halving Δt: the shift is noise, not bias
        let half = PathConfig { dt: 5e-3, ..cfg(40_000, 4) };
        let finer = Simulator::new(&m, &zero, &d, half).unwrap().run(0.2).unwrap();
        let diff = (finer.mean_exit_time.value - run.mean_exit_time.value).abs();
        let se = finer.mean_exit_time.se.hypot(run.mean_exit_time.se);
        assert!(diff < 3.0 * se, "{diff} vs {se}");
    }

    #[test]
    fn green_bins_match_the_oracle() {
        let (m, d) = interval();
        let g = StableGreen::new(1.5, &d).unwrap();
        let zero = DriftField::zero();
        let c = PathConfig { bin_width: 0.1, ..cfg(40_000, 6) };
        let run = Simulator::new(&m, &zero, &d, c).unwrap().run(-0.4).unwrap();
        assert_eq!(run.green.len(), 20);
        for bin in &run.green {
            let mut br = vec![bin.lo, bin.hi];
            if bin.lo < -0.4 && -0.4 < bin.hi {
                br.insert(1, -0.4);
            }
            let avg = crate::quadrature::tanh_sinh_pieces(|y| g.value(-0.4, y), &br, 1e-9).unwrap() / 0.1;
            assert!(bin.estimate.z_score(avg) < 3.5, "[{}, {}]: {:?} vs {avg}", bin.lo, bin.hi, bin.estimate);
        }
    }

    #[test]
    fn standard_error_scales_as_inverse_root_n() {
        let (m, d) = interval();
        let zero = DriftField::zero();
        let se = |n| Simulator::new(&m, &zero, &d, cfg(n, 8)).unwrap().run(0.0).unwrap().mean_exit_time.se;
        let ratio = se(5_000) / se(20_000);
        assert!((ratio / 2.0 - 1.0).abs() < 0.2, "{ratio}");
    }

    #[test]
    fn exit_law_matches_quadrature() {
        let (m, d) = interval();
        let g = StableGreen::new(1.5, &d).unwrap();
        let zero = DriftField::zero();
        let rep = mc_exit_law(&m, &zero, &d, 0.5, &cfg(20_000, 9), &|zs: &[f64]| exit_cdf_batch(&g, 0.5, &|_| 1.0, &[], zs), 1e-3).unwrap();
        // about three times the KS noise level at this N
        assert!(rep.ks_bound() < 0.02, "{} + {}", rep.ks_grid, rep.gap);
        assert!(rep.gap <= 2e-3);
    }

    #[test]
    fn runs_are_reproducible_across_thread_counts() {
        let (m, d) = interval();
        let b = DriftField::sine(1.0, 5.0);
        let sim = Simulator::new(&m, &b, &d, cfg(2_500, 10)).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| sim.run(0.1).unwrap());
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| sim.run(0.1).unwrap());
        assert_eq!(one, three);
        let other = Simulator::new(&m, &b, &d, cfg(2_500, 11)).unwrap().run(0.1).unwrap();
        assert_ne!(one.exits, other.exits);
    }

    #[test]
    fn approximate_models_are_flagged() {
        let d = C11Set::interval(-1.0, 1.0).unwrap();
        let zero = DriftField::zero();
        let m = LevyModel::truncated_stable(1.5, 0.5).unwrap();
        let sim = Simulator::new(&m, &zero, &d, PathConfig { paths: 2_000, ..PathConfig::default() }).unwrap();
        assert!(sim.approximate() && !sim.bridged());
        let run = sim.run(0.0).unwrap();
        assert!(run.approximate && run.mean_exit_time.value.is_finite());
        // fewer long jumps than the stable process, so slower to leave
        let stable = mc_mean_exit_time(&LevyModel::stable(1.5).unwrap(), &zero, &d, 0.0, &cfg(2_000, 0)).unwrap();
        assert!(run.mean_exit_time.value > stable.value);

        let bins = Bins::new(&C11Set::new(&[(-1.0, -0.2), (0.2, 1.0)]).unwrap(), 0.3);
        let e = bins.edges();
        assert_eq!(e.len(), 6);
        assert_eq!((e[0].0, e[2].1, e[3].0, e[5].1), (-1.0, -0.2, 0.2, 1.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let (m, d) = interval();
        let zero = DriftField::zero();
        for c in [
            PathConfig { dt: 0.0, ..PathConfig::default() },
            PathConfig { paths: 0, ..PathConfig::default() },
            PathConfig { boundary_fraction: 2.0, ..PathConfig::default() },
        ] {
            assert!(matches!(Simulator::new(&m, &zero, &d, c), Err(Error::Config(_))));
        }
        let sim = Simulator::new(&m, &zero, &d, PathConfig::default()).unwrap();
        assert!(matches!(sim.run(3.0), Err(Error::Domain(_))));
    }
}
