//! Drift fields and the Kato-class test
//! `lim_{r→0} sup_x ∫_{B(x,r)} M(|x−z|) |b(z)| dz = 0`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::kernels::KernelTable;
use crate::quadrature::{local_decay, tanh_sinh_ends};

/// Serializable description of a drift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DriftFamily {
    Constant { value: f64 },
    /// `amplitude · sin(frequency · z)`.
    Sine { amplitude: f64, frequency: f64 },
    /// `amplitude · |z − center|^{−beta}`.
    Power { amplitude: f64, center: f64, beta: f64 },
    Custom { name: String },
}

/// A drift `b: ℝ → ℝ` with its declared singular points and the region whose
/// translates the Kato modulus scans.
#[derive(Clone)]
pub struct DriftField {
    family: DriftFamily,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    singular: Vec<f64>,
    region: (f64, f64),
}

impl fmt::Debug for DriftField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftField")
            .field("family", &self.family)
            .field("singular", &self.singular)
            .field("region", &self.region)
            .finish()
    }
}

impl DriftField {
    pub fn from_family(family: &DriftFamily) -> Result<Self> {
        let (eval, singular): (Arc<dyn Fn(f64) -> f64 + Send + Sync>, Vec<f64>) = match *family {
            DriftFamily::Constant { value } => {
                check_finite(&[value])?;
                (Arc::new(move |_| value), vec![])
            }
            DriftFamily::Sine { amplitude, frequency } => {
                check_finite(&[amplitude, frequency])?;
                (Arc::new(move |z: f64| amplitude * (frequency * z).sin()), vec![])
            }
            DriftFamily::Power { amplitude, center, beta } => {
                check_finite(&[amplitude, center, beta])?;
                if beta <= 0.0 {
                    return domain(format!("power drift needs beta > 0, got {beta}"));
                }
                (
                    Arc::new(move |z: f64| amplitude * (z - center).abs().powf(-beta)),
                    vec![center],
                )
            }
            DriftFamily::Custom { .. } => {
                return domain("custom drifts are built with DriftField::custom");
            }
        };
        Ok(Self {
            family: family.clone(),
            eval,
            singular,
            region: (-1.0, 1.0),
        })
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(value: f64) -> Self {
        Self::from_family(&DriftFamily::Constant { value }).expect("finite constant")
    }

    pub fn sine(amplitude: f64, frequency: f64) -> Self {
        Self::from_family(&DriftFamily::Sine { amplitude, frequency }).expect("finite sine")
    }

    pub fn power(amplitude: f64, center: f64, beta: f64) -> Result<Self> {
        Self::from_family(&DriftFamily::Power { amplitude, center, beta })
    }

    pub fn custom(
        name: &str,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        singular: Vec<f64>,
    ) -> Self {
        Self {
            family: DriftFamily::Custom { name: name.into() },
            eval: Arc::new(f),
            singular,
            region: (-1.0, 1.0),
        }
    }

    /// The same drift with the translate region replaced.
    pub fn with_region(mut self, lo: f64, hi: f64) -> Self {
        self.region = (lo.min(hi), lo.max(hi));
        self
    }

    pub fn family(&self) -> &DriftFamily {
        &self.family
    }

    /// `constant | bounded-smooth | power-singularity | custom`.
    pub fn tag(&self) -> &'static str {
        match self.family {
            DriftFamily::Constant { .. } => "constant",
            DriftFamily::Sine { .. } => "bounded-smooth",
            DriftFamily::Power { .. } => "power-singularity",
            DriftFamily::Custom { .. } => "custom",
        }
    }

    pub fn singular_points(&self) -> &[f64] {
        &self.singular
    }

    pub fn region(&self) -> (f64, f64) {
        self.region
    }

    pub fn eval(&self, z: f64) -> f64 {
        (self.eval)(z)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.family, DriftFamily::Constant { value } if value == 0.0)
    }

    /// `sup |b|` when known from the family.
    pub fn sup_norm(&self) -> Option<f64> {
        match self.family {
            DriftFamily::Constant { value } => Some(value.abs()),
            DriftFamily::Sine { amplitude, .. } => Some(amplitude.abs()),
            DriftFamily::Power { amplitude, .. } if amplitude == 0.0 => Some(0.0),
            _ => None,
        }
    }

    /// `k · b`.
    pub fn scaled(&self, k: f64) -> Self {
        let family = match self.family.clone() {
            DriftFamily::Constant { value } => DriftFamily::Constant { value: k * value },
            DriftFamily::Sine { amplitude, frequency } => {
                DriftFamily::Sine { amplitude: k * amplitude, frequency }
            }
            DriftFamily::Power { amplitude, center, beta } => {
                DriftFamily::Power { amplitude: k * amplitude, center, beta }
            }
            DriftFamily::Custom { name } => DriftFamily::Custom { name: format!("{k}*{name}") },
        };
        let f = self.eval.clone();
        Self {
            family,
            eval: Arc::new(move |z| k * f(z)),
            singular: self.singular.clone(),
            region: self.region,
        }
    }

    /// `z ↦ −b(−z)`, the drift seen in mirrored coordinates.
    pub fn mirrored(&self) -> Self {
        let f = self.eval.clone();
        let family = match self.family.clone() {
            DriftFamily::Constant { value } => DriftFamily::Constant { value: -value },
            DriftFamily::Sine { amplitude, frequency } => DriftFamily::Sine { amplitude, frequency },
            DriftFamily::Power { amplitude, center, beta } => {
                DriftFamily::Power { amplitude: -amplitude, center: -center, beta }
            }
            DriftFamily::Custom { name } => DriftFamily::Custom { name: format!("mirror({name})") },
        };
        Self {
            family,
            eval: Arc::new(move |z| -f(-z)),
            singular: self.singular.iter().map(|p| -p).collect(),
            region: (-self.region.1, -self.region.0),
        }
    }

    /// Zeros of `b` strictly inside `(lo, hi)` where `|b|` has a kink, when
    /// the family makes them known.
    pub fn kinks(&self, lo: f64, hi: f64) -> Vec<f64> {
        match self.family {
            DriftFamily::Sine { amplitude, frequency } if amplitude != 0.0 && frequency != 0.0 => {
                let step = std::f64::consts::PI / frequency.abs();
                let first = (lo / step).floor() as i64 + 1;
                (first..)
                    .map(|k| k as f64 * step)
                    .take_while(|&z| z < hi)
                    .filter(|&z| z > lo)
                    .collect()
            }
            _ => vec![],
        }
    }

    /// `|b|` at distance `dist` from the declared singular point `pole`,
    /// exact for power drifts however small `dist` is.
    fn abs_near(&self, pole: f64, dist: f64, z: f64) -> f64 {
        match self.family {
            DriftFamily::Power { amplitude, center, beta } if center == pole => {
                amplitude.abs() * dist.powf(-beta)
            }
            _ => self.eval(z).abs(),
        }
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        domain(format!("drift parameters must be finite: {v:?}"))
    }
}

/// Number of evenly spaced translates scanned by [`kato_modulus`].
pub const TRANSLATES: usize = 512;

/// `m(r) = sup_x ∫_{x−r}^{x+r} M(|x−z|) |b(z)| dz` over [`TRANSLATES`]
/// translates of the drift region plus every declared singular point.
/// Returns `+∞` when some window integral diverges.
pub fn kato_modulus(b: &DriftField, table: &KernelTable, r: f64) -> Result<f64> {
    if r.is_nan() || r <= 0.0 {
        return domain(format!("Kato modulus needs r > 0, got {r}"));
    }
    if b.is_zero() {
        return Ok(0.0);
    }
    let (lo, hi) = b.region();
    let mut xs: Vec<f64> = (0..TRANSLATES)
        .map(|i| lo + (hi - lo) * i as f64 / (TRANSLATES - 1) as f64)
        .collect();
    xs.extend_from_slice(b.singular_points());
    let vals: Result<Vec<f64>> = xs.par_iter().map(|&x| window_integral(b, table, x, r)).collect();
    Ok(vals?.into_iter().fold(0.0, f64::max))
}

/// One endpoint of a window piece: the translate, a pole, or a plain cut.
#[derive(Clone, Copy, PartialEq)]
enum Mark {
    Centre,
    Pole(f64),
    Edge,
}

fn window_integral(b: &DriftField, table: &KernelTable, x: f64, r: f64) -> Result<f64> {
    let mut cuts: Vec<(f64, Mark)> = vec![(x - r, Mark::Edge), (x, Mark::Centre), (x + r, Mark::Edge)];
    for &p in b.singular_points() {
        if p == x {
            cuts[1].1 = Mark::Pole(p);
        } else if (p - x).abs() < r {
            cuts.push((p, Mark::Pole(p)));
        }
    }
    for z in b.kinks(x - r, x + r) {
        if z != x && !b.singular_points().contains(&z) {
            cuts.push((z, Mark::Edge));
        }
    }
    cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    for w in cuts.windows(2) {
        let ((lo, ml), (hi, mh)) = (w[0], w[1]);
        let f = |z: f64, dl: f64, dh: f64| {
            let dx = if lo == x { dl } else if hi == x { dh } else { (z - x).abs() };
            let bz = match (ml, mh) {
                (Mark::Pole(p), _) if dl <= dh => b.abs_near(p, dl, z),
                (Mark::Centre, _) if lo == x && dl <= dh => near_centre(b, x, dl, z),
                (_, Mark::Pole(p)) => b.abs_near(p, dh, z),
                (_, Mark::Centre) => near_centre(b, x, dh, z),
                _ => b.eval(z).abs(),
            };
            if bz == 0.0 { 0.0 } else { table.m(dx) * bz }
        };
        for (end, mark) in [(lo, ml), (hi, mh)] {
            if mark == Mark::Edge {
                continue;
            }
            let at_lo = end == lo;
            let g = |s: f64| if at_lo { f(lo + s, s, hi - lo - s) } else { f(hi - s, hi - lo - s, s) };
            let s0 = 1e-12 * (hi - lo);
            if let Some(q) = local_decay(&g, s0) {
                if q >= 1.0 - 1e-6 {
                    return Ok(f64::INFINITY);
                }
            }
        }
        acc += tanh_sinh_ends(f, lo, hi, 1e-8)?.value;
    }
    Ok(acc)
}

fn near_centre(b: &DriftField, x: f64, dist: f64, z: f64) -> f64 {
    if b.singular_points().contains(&x) {
        b.abs_near(x, dist, z)
    } else {
        b.eval(z).abs()
    }
}

/// Outcome of [`is_kato`].
#[derive(Clone, Debug, Serialize)]
pub struct KatoCertificate {
    pub drift: String,
    pub r: Vec<f64>,
    pub modulus: Vec<f64>,
    pub tol: f64,
    pub pass: bool,
}

/// `r_k = 10^{-k}`, `k = 1..=16`.
pub fn default_radii() -> Vec<f64> {
    (1..=16).map(|k| 10f64.powi(-k)).collect()
}

/// Passes iff every `m(r)` is finite, `m` does not increase along the
/// (decreasing) radii, and the last value is at most `tol · m(r₀)`.
pub fn is_kato(b: &DriftField, table: &KernelTable, radii: &[f64], tol: f64) -> Result<KatoCertificate> {
    if radii.windows(2).any(|w| w[1] >= w[0]) {
        return domain("Kato radii must be strictly decreasing");
    }
    let modulus: Result<Vec<f64>> = radii.iter().map(|&r| kato_modulus(b, table, r)).collect();
    let modulus = modulus?;
    let finite = modulus.iter().all(|m| m.is_finite());
    let monotone = modulus.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let first = modulus.first().copied().unwrap_or(0.0);
    let last = modulus.last().copied().unwrap_or(0.0);
    let pass = finite && monotone && (last == 0.0 || last <= tol * first);
    Ok(KatoCertificate {
        drift: serde_json::to_string(b.family()).unwrap_or_default(),
        r: radii.to_vec(),
        modulus,
        tol,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_models::{stable_density_constant, LevyModel};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn table() -> &'static KernelTable {
        static T: OnceLock<KernelTable> = OnceLock::new();
        T.get_or_init(|| KernelTable::build(&LevyModel::stable(1.5).unwrap(), 2.0).unwrap())
    }

    #[test]
    fn constant_drift_closed_form() {
        let c = stable_density_constant(1.5);
        let a = 2.0 * c * (1.0 / 0.5 + 1.0 / 1.5);
        for r in [1e-8, 1e-3, 0.3] {
            let m = kato_modulus(&DriftField::constant(1.0), table(), r).unwrap();
            let want = 4.0 / a * r.sqrt();
            assert!((m / want - 1.0).abs() < 1e-6, "r={r}: {m} vs {want}");
        }
        assert_eq!(kato_modulus(&DriftField::zero(), table(), 0.1).unwrap(), 0.0);
    }

    #[test]
    fn power_counting_thresholds() {
        let radii = default_radii();
        let mild = DriftField::power(1.0, 0.0, 0.4).unwrap();
        let cert = is_kato(&mild, table(), &radii, 0.25).unwrap();
        assert!(cert.pass, "{cert:?}");
        // m(r) ∝ r^{α−1−β} at the pole
        let ratio = cert.modulus[15] / cert.modulus[5];
        assert!((ratio / 1e-1 - 1.0).abs() < 1e-3, "{ratio}");
        let strong = DriftField::power(1.0, 0.0, 0.6).unwrap();
        let cert = is_kato(&strong, table(), &radii, 0.25).unwrap();
        assert!(!cert.pass);
        assert!(cert.modulus.iter().all(|m| m.is_infinite()));
        for b in [DriftField::sine(1.0, 5.0), DriftField::constant(-2.0), DriftField::sine(3.0, 40.0)] {
            assert!(is_kato(&b, table(), &radii, 0.25).unwrap().pass);
        }
    }

    #[test]
    fn mirror_and_scale() {
        let b = DriftField::power(2.0, 0.3, 0.2).unwrap();
        let m = b.mirrored();
        assert_eq!(m.singular_points(), &[-0.3]);
        assert!((m.eval(-0.5) + b.eval(0.5)).abs() < 1e-15);
        assert!((b.scaled(0.5).eval(0.7) - 0.5 * b.eval(0.7)).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn modulus_monotone_in_r_and_b(
            amp in 0.1f64..3.0,
            beta in 0.05f64..0.45,
            r in 1e-6f64..0.5,
            grow in 1.0f64..4.0,
        ) {
            let b = DriftField::power(amp, 0.1, beta).unwrap();
            let m1 = kato_modulus(&b, table(), r).unwrap();
            let m2 = kato_modulus(&b, table(), r * grow).unwrap();
            prop_assert!(m1 <= m2 * (1.0 + 1e-9));
            let big = b.scaled(grow);
            prop_assert!(m1 <= kato_modulus(&big, table(), r).unwrap() * (1.0 + 1e-9));
        }
    }
}
