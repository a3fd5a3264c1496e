//! TOML experiment configuration shared by the command-line front end.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::C11Set;
use crate::kato::{DriftFamily, DriftField};
use crate::levy_models::{Family, LevyModel};
use crate::montecarlo::PathConfig;
use crate::perturbation::SolveMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Family,
    pub domain: DomainSpec,
    #[serde(default = "zero_drift")]
    pub drift: DriftFamily,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

fn zero_drift() -> DriftFamily {
    DriftFamily::Constant { value: 0.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// Endpoint pairs of the components, in increasing order.
    pub intervals: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    /// Nyström nodes over all components.
    pub nystrom: usize,
    /// Panel grading exponent; `2/α` when absent.
    pub grading: Option<f64>,
    /// Points per component for the gradient and envelope checks.
    pub checks: usize,
    /// Grid-pair stride of the direct `K(x+y)` evaluations.
    pub kernel_stride: usize,
    /// Boundary-biased triples for the 3G check.
    pub triples: usize,
    pub solve: SolveMode,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nystrom: 200,
            grading: None,
            checks: 100,
            kernel_stride: 16,
            triples: 10_000,
            solve: SolveMode::Direct,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative slack on the kernel inequalities.
    pub kernel_slack: f64,
    /// Exit mass must be `1 ± poisson_mass`.
    pub poisson_mass: f64,
    /// Perturbed exit mass must be `1 ± perturbed_mass`; the Nyström row
    /// converges only at first order near `∂D`.
    pub perturbed_mass: f64,
    /// Bound on the MC exit-law KS distance.
    pub ks: f64,
    /// Contraction threshold for the small-domain search.
    pub kappa_threshold: f64,
    /// Kato pass rule: `m(r_last) ≤ kato · m(r_first)`.
    pub kato: f64,
    /// Comparability bound reported by `perturb`.
    pub comparability: f64,
    /// Largest admissible `|z|` of any MC bin against the Nyström row.
    pub mc_z: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            kernel_slack: 1e-9,
            poisson_mass: 1e-3,
            perturbed_mass: 1e-2,
            ks: 0.02,
            kappa_threshold: 1.0 / 3.0,
            kato: 0.25,
            comparability: f64::INFINITY,
            mc_z: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSpec {
    /// Starting points.
    pub sources: Vec<f64>,
    pub path: PathConfig,
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            sources: vec![0.0],
            path: PathConfig { paths: 20_000, dt: 1e-2, ..PathConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks that every part of the configuration resolves.
    pub fn validate(&self) -> Result<()> {
        self.levy_model()?;
        self.domain()?;
        self.drift_field()?;
        self.mc.path.validate()?;
        let d = self.domain()?;
        if let Some(&x) = self.mc.sources.iter().find(|&&x| !d.contains(x)) {
            return Err(Error::Config(format!("MC source {x} is outside the domain")));
        }
        if self.grid.checks < 2 || self.grid.kernel_stride == 0 {
            return Err(Error::Config("grid.checks must be >= 2 and grid.kernel_stride >= 1".into()));
        }
        Ok(())
    }

    pub fn levy_model(&self) -> Result<LevyModel> {
        let m = match &self.model {
            Family::Stable { alpha } => LevyModel::stable(*alpha),
            Family::StableMixture { terms } => LevyModel::stable_mixture(terms),
            Family::TruncatedStable { alpha, radius } => LevyModel::truncated_stable(*alpha, *radius),
            Family::Custom { name } => {
                return Err(Error::Config(format!("custom model '{name}' cannot be read from a file")))
            }
        };
        m.map_err(|e| Error::Config(e.to_string()))
    }

    pub fn domain(&self) -> Result<C11Set> {
        C11Set::new(&self.domain.intervals).map_err(|e| Error::Config(e.to_string()))
    }

    /// The drift, with its Kato scan region set to the hull of the domain.
    pub fn drift_field(&self) -> Result<DriftField> {
        let b = DriftField::from_family(&self.drift).map_err(|e| Error::Config(e.to_string()))?;
        let iv = &self.domain.intervals;
        match (iv.first(), iv.last()) {
            (Some(&(lo, _)), Some(&(_, hi))) if lo < hi => Ok(b.with_region(lo, hi)),
            _ => Ok(b),
        }
    }

    pub fn grading(&self) -> Result<f64> {
        match (self.grid.grading, self.levy_model()?.stable_alpha()) {
            (Some(q), _) => Ok(q),
            (None, Some(a)) => Ok(2.0 / a),
            (None, None) => Ok(2.0),
        }
    }
}
