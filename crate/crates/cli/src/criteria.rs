//! The ten acceptance criteria. Each returns its measured quantities and a
//! verdict against the pinned tolerances below.

use std::fs;
use std::path::Path;
use std::time::Instant;

use levy_potential::config::{DomainSpec, GridSpec, McSpec, Tolerances};
use levy_potential::green::checks::{check_gradient_bound, three_g_constant};
use levy_potential::green::{exit_cdf_batch, integrate_green, poisson_mass, stable_mean_exit_time};
use levy_potential::kato::{default_radii, is_kato};
use levy_potential::montecarlo::{exit_cdf_grid, exit_law_distance, PathConfig, Simulator};
use levy_potential::perturbation::{
    comparability_report, discretize_green, find_epsilon, perturbed_bin_average, perturbed_exit_cdf_batch, solve_perturbed,
    NystromGrid, SolveMode,
};
use levy_potential::quadrature::tanh_sinh;
use levy_potential::{
    C11Set, DriftFamily, DriftField, Error, ExperimentConfig, Family, GreenFunction, KernelTable, LevyModel, Result,
    StableGreen,
};
use serde::Serialize;

use crate::commands::{cmd_mc, solve};
use crate::output::Sink;

pub const ALPHA: f64 = 1.5;
pub const ORACLE_REL_ERR: f64 = 1e-3;
pub const ORACLE_BAND: f64 = 0.01;
pub const ORACLE_SECONDS: f64 = 30.0;
/// Quadrature-error padding on the `[1/2, 3/2]` bracket.
pub const BRACKET_PAD: f64 = 1e-3;
pub const REFINEMENT_CHANGE: f64 = 0.1;
pub const MC_Z: f64 = 3.0;
pub const KERNEL_SLACK: f64 = 1e-9;
pub const MASS_TOL: f64 = 1e-3;
pub const KS_FREE: f64 = 0.01;
pub const KS_DRIFT: f64 = 0.02;
pub const EXIT_TIME_MC: f64 = 0.01;
pub const EXIT_TIME_INTEGRAL: f64 = 1e-3;

/// Drift runs need a finer step than the free process: the splitting error
/// of the drift substep is first order in it.
const DRIFT_DT: f64 = 1.25e-3;
const FREE_DT: f64 = 1e-2;
const CDF_GAP: f64 = 1e-3;

#[derive(Clone, Debug, Serialize)]
pub struct Criterion {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub metrics: Vec<(String, f64)>,
    pub detail: String,
}

impl Criterion {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} [{}] {}: {}",
            self.id,
            self.title,
            if self.pass { "PASS" } else { "FAIL" },
            self.detail
        )
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == name).map(|&(_, v)| v)
    }
}

fn done(id: u8, title: &'static str, pass: bool, metrics: &[(&str, f64)], detail: String) -> Criterion {
    Criterion {
        id,
        title,
        pass,
        metrics: metrics.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        detail,
    }
}

fn failed(id: u8, title: &'static str, e: Error) -> Criterion {
    done(id, title, false, &[], format!("error: {e}"))
}

fn rel_change(a: f64, b: f64) -> f64 {
    (b / a - 1.0).abs()
}

fn interval() -> C11Set {
    C11Set::interval(-1.0, 1.0).unwrap()
}

fn two_intervals() -> C11Set {
    C11Set::new(&[(-1.0, -0.2), (0.2, 1.0)]).unwrap()
}

fn sine() -> DriftField {
    DriftField::sine(1.0, 5.0)
}

/// Green function of `(−1, 1)` from the classical ball formula, integrated
/// directly: `c |x−y|^{α−1} ∫_0^w s^{α/2−1} (1+s)^{−1/2} ds` with
/// `w = (1−x²)(1−y²)/|x−y|²`, `c = 1/(2^α Γ(α/2)²)`.
pub fn interval_green_oracle(alpha: f64, x: f64, y: f64) -> Result<f64> {
    let u = (x - y).abs();
    let w = (1.0 - x * x) * (1.0 - y * y) / (u * u);
    let a = 0.5 * alpha;
    let c = 1.0 / (2f64.powf(alpha) * statrs::function::gamma::gamma(a).powi(2));
    let i = tanh_sinh(|s| s.powf(a - 1.0) / (1.0 + s).sqrt(), 0.0, w, 1e-12)?;
    Ok(c * u.powf(alpha - 1.0) * i.value)
}

pub fn criterion_1() -> Criterion {
    const T: &str = "oracle equivalence";
    let run = || -> Result<Criterion> {
        let d = interval();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| Error::Config(e.to_string()))?;
        let start = Instant::now();
        let (g, grid, pg) = pool.install(|| -> Result<_> {
            let g = StableGreen::new(ALPHA, &d)?;
            let grid = NystromGrid::new(&d, 400, ALPHA)?;
            let disc = discretize_green(&g, &grid)?;
            let pg = solve_perturbed(&disc, &DriftField::zero(), &grid, SolveMode::Direct)?;
            Ok((g, grid, pg))
        })?;
        let seconds = start.elapsed().as_secs_f64();
        let ys = grid.nodes();
        let mut worst: f64 = 0.0;
        let mut pairs = 0;
        for i in 0..ys.len() {
            for k in i + 1..ys.len() {
                if (ys[i] - ys[k]).abs() <= ORACLE_BAND {
                    continue;
                }
                let want = interval_green_oracle(ALPHA, ys[i], ys[k])?;
                worst = worst.max((pg.gt[(i, k)] / want - 1.0).abs()).max((pg.gt[(k, i)] / want - 1.0).abs());
                pairs += 2;
            }
        }
        // off-grid sources and targets through the row solve and interpolant
        for j in 0..25 {
            let x = -0.98 + 1.96 * (j as f64 + 0.37) / 25.0;
            let row = pg.row(&g, &grid, x)?;
            let ratio = pg.ratio_interpolant(&g, &grid, x, &row)?;
            for m in 0..40 {
                let y = -0.995 + 1.99 * (m as f64 + 0.61) / 40.0;
                if (x - y).abs() > ORACLE_BAND {
                    let got = ratio.at(y) * g.value(x, y);
                    worst = worst.max((got / interval_green_oracle(ALPHA, x, y)? - 1.0).abs());
                    pairs += 1;
                }
            }
        }
        let pass = worst <= ORACLE_REL_ERR && seconds < ORACLE_SECONDS;
        Ok(done(
            1,
            T,
            pass,
            &[("max_rel_err", worst), ("seconds", seconds), ("pairs", pairs as f64)],
            format!("max relative error {worst:.3e} over {pairs} pairs with |x-y| > {ORACLE_BAND}, solve {seconds:.2} s on one thread"),
        ))
    };
    run().unwrap_or_else(|e| failed(1, T, e))
}

pub fn criterion_2() -> Criterion {
    const T: &str = "small-domain bracket";
    let run = || -> Result<Criterion> {
        let base = interval();
        let b = DriftField::constant(1.0);
        let eps = find_epsilon(&base, ALPHA, &b, 1.0 / 3.0, (1e-4, 1.0))?;
        let d = base.scaled(eps.scale)?;
        let g = StableGreen::new(ALPHA, &d)?;
        let grid = NystromGrid::new(&d, 200, ALPHA)?;
        let disc = discretize_green(&g, &grid)?;
        let pg = solve_perturbed(&disc, &b, &grid, SolveMode::Direct)?;
        let rep = comparability_report(&pg);
        let pass = rep.inf >= 0.5 + BRACKET_PAD && rep.sup <= 1.5 - BRACKET_PAD;
        let c_ok = rep.constant <= 2.0;
        Ok(done(
            2,
            T,
            pass && c_ok,
            &[
                ("epsilon", eps.scale),
                ("kappa_sup", eps.kappa_sup),
                ("inf", rep.inf),
                ("sup", rep.sup),
                ("constant", rep.constant),
            ],
            format!(
                "eps = {:.4e} (kappa {:.4}), ratios in [{:.6}, {:.6}] over {} pairs; C = {:.6}, C <= 2: {}",
                eps.scale,
                eps.kappa_sup,
                rep.inf,
                rep.sup,
                rep.pairs,
                rep.constant,
                if c_ok { "PASS" } else { "FAIL" }
            ),
        ))
    };
    run().unwrap_or_else(|e| failed(2, T, e))
}

pub const SOURCES: [f64; 3] = [-0.6, 0.3, 0.75];

fn two_interval_config(seed: u64, n: usize, paths: usize) -> ExperimentConfig {
    ExperimentConfig {
        model: Family::Stable { alpha: ALPHA },
        domain: DomainSpec { intervals: two_intervals().intervals().to_vec() },
        drift: DriftFamily::Sine { amplitude: 1.0, frequency: 5.0 },
        grid: GridSpec { nystrom: n, ..Default::default() },
        tolerances: Default::default(),
        mc: McSpec {
            sources: SOURCES.to_vec(),
            path: PathConfig { dt: DRIFT_DT, paths, seed, bin_width: 0.1, ..PathConfig::default() },
        },
        output: Default::default(),
    }
}

pub fn criterion_3(seed: u64) -> Criterion {
    const T: &str = "two-interval comparability";
    let run = || -> Result<Criterion> {
        let coarse = two_interval_config(seed, 200, 100_000);
        let fine = two_interval_config(seed, 400, 100_000);
        let c200 = comparability_report(&solve(&coarse, 200)?.pg).constant;
        let solved = solve(&fine, 400)?;
        let c400 = comparability_report(&solved.pg).constant;
        let change = rel_change(c200, c400);

        let (g, grid, pg) = (&solved.g, &solved.grid, &solved.pg);
        let (model, b, d) = (fine.levy_model()?, fine.drift_field()?, fine.domain()?);
        let sim = Simulator::new(&model, &b, &d, fine.mc.path.clone())?;
        let (mut worst, mut bins, mut per_source) = (0.0f64, 0, vec![]);
        for &x0 in &SOURCES {
            let run = sim.run(x0)?;
            let row = pg.row(g, grid, x0)?;
            let ratio = pg.ratio_interpolant(g, grid, x0, &row)?;
            let mut w = 0.0f64;
            for bin in &run.green {
                let want = perturbed_bin_average(g, &ratio, x0, bin.lo, bin.hi)?;
                w = w.max(bin.estimate.z_score(want));
                bins += 1;
            }
            worst = worst.max(w);
            per_source.push(format!("{x0}: {w:.2}"));
        }
        let pass = c400.is_finite() && change < REFINEMENT_CHANGE && worst < MC_Z;
        Ok(done(
            3,
            T,
            pass,
            &[("c_coarse", c200), ("c_fine", c400), ("c_change", change), ("worst_z", worst), ("bins", bins as f64)],
            format!(
                "C = {c200:.5} (n=200), {c400:.5} (n=400), change {:.2}%; worst MC bin |z| {worst:.2} over {bins} bins (per source {})",
                100.0 * change,
                per_source.join(", ")
            ),
        ))
    };
    run().unwrap_or_else(|e| failed(3, T, e))
}

pub fn criterion_4() -> Criterion {
    const T: &str = "kernel invariants";
    let run = || -> Result<Criterion> {
        let models = [
            LevyModel::stable(1.2)?,
            LevyModel::stable(1.5)?,
            LevyModel::stable(1.9)?,
            LevyModel::stable_mixture(&[(1.0, 1.2), (1.0, 1.8)])?,
        ];
        let (mut failures, mut points, mut pairs, mut parts) = (0, 0, 0, vec![]);
        for m in &models {
            let rep = KernelTable::build(m, 2.0)?.check_invariants(KERNEL_SLACK, 1)?;
            failures += rep.failures.len();
            points += rep.points;
            pairs += rep.k_pairs_checked;
            parts.push(if rep.all_pass() { format!("{} ok", m.tag()) } else { format!("{}: {:?}", m.tag(), rep.failures) });
        }
        Ok(done(
            4,
            T,
            failures == 0,
            &[("failures", failures as f64), ("points", points as f64), ("k_pairs", pairs as f64)],
            format!("{points} tabulated points, {pairs} K pairs; {}", parts.join("; ")),
        ))
    };
    run().unwrap_or_else(|e| failed(4, T, e))
}

fn interval_oracle_and_table() -> Result<(StableGreen, KernelTable)> {
    let d = interval();
    Ok((StableGreen::new(ALPHA, &d)?, KernelTable::build(&LevyModel::stable(ALPHA)?, d.diam())?))
}

pub fn criterion_5() -> Criterion {
    const T: &str = "gradient estimate";
    let run = || -> Result<Criterion> {
        let (g, table) = interval_oracle_and_table()?;
        let s1 = check_gradient_bound(&g, &table, 200)?.sup;
        let s2 = check_gradient_bound(&g, &table, 400)?.sup;
        let change = rel_change(s1, s2);
        Ok(done(
            5,
            T,
            s2.is_finite() && change < REFINEMENT_CHANGE,
            &[("sup_n", s1), ("sup_2n", s2), ("change", change)],
            format!("sup {s1:.6} (200x200), {s2:.6} (400x400), change {:.2}%", 100.0 * change),
        ))
    };
    run().unwrap_or_else(|e| failed(5, T, e))
}

pub fn criterion_6(seed: u64) -> Criterion {
    const T: &str = "3G estimate";
    let run = || -> Result<Criterion> {
        let (g, table) = interval_oracle_and_table()?;
        let s1 = three_g_constant(&g, &table, 100_000, seed)?.sup();
        let s2 = three_g_constant(&g, &table, 200_000, seed)?.sup();
        let change = rel_change(s1, s2);
        Ok(done(
            6,
            T,
            s2.is_finite() && change < REFINEMENT_CHANGE,
            &[("sup_n", s1), ("sup_2n", s2), ("change", change)],
            format!("sup {s1:.6} (1e5 triples), {s2:.6} (2e5 triples), change {:.2}%", 100.0 * change),
        ))
    };
    run().unwrap_or_else(|e| failed(6, T, e))
}

pub fn criterion_7(seed: u64) -> Criterion {
    const T: &str = "Poisson mass and exit law";
    let run = || -> Result<Criterion> {
        let d = interval();
        let (g, _) = interval_oracle_and_table()?;
        let mut mass_err: f64 = 0.0;
        for x in [-0.9, -0.5, 0.0, 0.3, 0.7, 0.99] {
            mass_err = mass_err.max((poisson_mass(&g, x)? - 1.0).abs());
        }
        let model = LevyModel::stable(ALPHA)?;
        let x0 = 0.3;
        let free_cfg = PathConfig { dt: FREE_DT, paths: 100_000, seed, ..PathConfig::default() };
        let free = Simulator::new(&model, &DriftField::zero(), &d, free_cfg)?.run(x0)?;
        let ks_free = exit_law_distance(&free.exits, exit_cdf_grid(&d, &|zs: &[f64]| exit_cdf_batch(&g, x0, &|_| 1.0, &[], zs), CDF_GAP)?);

        let b = sine();
        let grid = NystromGrid::with_breaks(&d, 400, 2.0 / ALPHA, &[x0])?;
        let pg = solve_perturbed(&discretize_green(&g, &grid)?, &b, &grid, SolveMode::Direct)?;
        let row = pg.row(&g, &grid, x0)?;
        let ratio = pg.ratio_interpolant(&g, &grid, x0, &row)?;
        let drift_cfg = PathConfig { dt: DRIFT_DT, paths: 100_000, seed, ..PathConfig::default() };
        let pushed = Simulator::new(&model, &b, &d, drift_cfg)?.run(x0)?;
        let cdf = |zs: &[f64]| perturbed_exit_cdf_batch(&g, &ratio, x0, zs);
        let ks_drift = exit_law_distance(&pushed.exits, exit_cdf_grid(&d, &cdf, CDF_GAP)?);

        let pass = mass_err <= MASS_TOL && ks_free.ks_bound() < KS_FREE && ks_drift.ks_bound() < KS_DRIFT;
        Ok(done(
            7,
            T,
            pass,
            &[
                ("mass_err", mass_err),
                ("ks_free", ks_free.ks_bound()),
                ("ks_drift", ks_drift.ks_bound()),
            ],
            format!(
                "max |mass - 1| {mass_err:.2e}; KS b=0 {:.4} (grid {:.4} + gap {:.4}); KS sin drift {:.4} (grid {:.4} + gap {:.4})",
                ks_free.ks_bound(),
                ks_free.ks_grid,
                ks_free.gap,
                ks_drift.ks_bound(),
                ks_drift.ks_grid,
                ks_drift.gap
            ),
        ))
    };
    run().unwrap_or_else(|e| failed(7, T, e))
}

pub fn criterion_8(seed: u64) -> Criterion {
    const T: &str = "mean exit time";
    let run = || -> Result<Criterion> {
        let d = interval();
        let (g, _) = interval_oracle_and_table()?;
        let x0 = 0.0;
        let exact = stable_mean_exit_time(ALPHA, -1.0, 1.0, x0);
        let cfg = PathConfig { dt: FREE_DT, paths: 1_000_000, seed, ..PathConfig::default() };
        let run = Simulator::new(&LevyModel::stable(ALPHA)?, &DriftField::zero(), &d, cfg)?.run(x0)?;
        let m = run.mean_exit_time;
        let rel_mc = (m.value / exact - 1.0).abs();
        let rel_int = (integrate_green(&g, x0, |_| 1.0)? / exact - 1.0).abs();
        Ok(done(
            8,
            T,
            rel_mc < EXIT_TIME_MC && rel_int < EXIT_TIME_INTEGRAL,
            &[("exact", exact), ("mc", m.value), ("se", m.se), ("rel_mc", rel_mc), ("rel_integral", rel_int)],
            format!(
                "closed form {exact:.6}; MC {:.6} +- {:.6} (rel {:.3e}, N=1e6); integral of G rel {rel_int:.2e}",
                m.value, m.se, rel_mc
            ),
        ))
    };
    run().unwrap_or_else(|e| failed(8, T, e))
}

pub fn criterion_9() -> Criterion {
    const T: &str = "Kato certification";
    let run = || -> Result<Criterion> {
        let table = KernelTable::build(&LevyModel::stable(ALPHA)?, 2.0)?;
        let radii = default_radii();
        let tol = Tolerances::default().kato;
        let mild = is_kato(&DriftField::power(1.0, 0.0, 0.4)?, &table, &radii, tol)?.pass;
        let strong = is_kato(&DriftField::power(1.0, 0.0, 0.6)?, &table, &radii, tol)?.pass;
        let mut bounded = true;
        for b in [DriftField::constant(1.0), DriftField::constant(-3.0), sine(), DriftField::sine(2.0, 40.0)] {
            bounded &= is_kato(&b, &table, &radii, tol)?.pass;
        }
        Ok(done(
            9,
            T,
            mild && !strong && bounded,
            &[("accept_0_4", mild as u8 as f64), ("accept_0_6", strong as u8 as f64), ("bounded", bounded as u8 as f64)],
            format!(
                "|z|^-0.4 {}, |z|^-0.6 {}, bounded drifts {}",
                if mild { "accepted" } else { "rejected" },
                if strong { "accepted" } else { "rejected" },
                if bounded { "all accepted" } else { "not all accepted" }
            ),
        ))
    };
    run().unwrap_or_else(|e| failed(9, T, e))
}

pub fn criterion_10(seed: u64, scratch: &Path) -> Criterion {
    const T: &str = "determinism";
    let run = || -> Result<Criterion> {
        let mut cfg = two_interval_config(seed, 80, 2_000);
        cfg.mc.path.dt = FREE_DT;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().map_err(|e| Error::Config(e.to_string()))?;
        let mut outputs = vec![];
        for tag in ["first", "second"] {
            let sink = Sink::new(&scratch.join(tag), &cfg)?;
            pool.install(|| cmd_mc(&cfg, &sink))?;
            let read = |name: &str| fs::read(sink.dir().join(name)).map_err(|e| Error::Config(e.to_string()));
            outputs.push((read("mc_green.csv")?, read("mc_summary.csv")?));
        }
        let same = outputs[0] == outputs[1];
        let bytes = outputs[0].0.len() + outputs[0].1.len();
        Ok(done(
            10,
            T,
            same,
            &[("identical", same as u8 as f64), ("bytes", bytes as f64)],
            format!("two runs at 1 thread: {bytes} CSV bytes, {}", if same { "byte-identical" } else { "different" }),
        ))
    };
    run().unwrap_or_else(|e| failed(10, T, e))
}

/// Every criterion in order; `scratch` receives the determinism runs.
pub fn run_all(seed: u64, scratch: &Path) -> Result<Vec<Criterion>> {
    Ok(vec![
        criterion_1(),
        criterion_2(),
        criterion_3(seed),
        criterion_4(),
        criterion_5(),
        criterion_6(seed),
        criterion_7(seed),
        criterion_8(seed),
        criterion_9(),
        criterion_10(seed, scratch),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_matches_the_closed_form() {
        let g = StableGreen::new(ALPHA, &interval()).unwrap();
        for (x, y) in [(0.0, 0.5), (-0.9, 0.8), (0.3, 0.31), (0.99, -0.2)] {
            let o = interval_green_oracle(ALPHA, x, y).unwrap();
            assert!((o / g.value(x, y) - 1.0).abs() < 1e-9, "({x},{y}): {o} vs {}", g.value(x, y));
        }
        // ∫ G(0, y) dy is the mean exit time
        let int = levy_potential::quadrature::tanh_sinh_pieces(
            |y| interval_green_oracle(ALPHA, 0.0, y).unwrap_or(0.0),
            &[-1.0, 0.0, 1.0],
            1e-9,
        )
        .unwrap();
        assert!((int / stable_mean_exit_time(ALPHA, -1.0, 1.0, 0.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn kato_and_determinism_criteria() {
        assert!(criterion_9().pass);
        let dir = std::env::temp_dir().join(format!("levypot-crit10-{}", std::process::id()));
        let c = criterion_10(3, &dir);
        let _ = fs::remove_dir_all(&dir);
        assert!(c.pass, "{}", c.line());
    }
}
