//! One function per subcommand. Each writes its artifacts through a [`Sink`]
//! and reports whether its checks passed.

use std::fmt::Write as _;
use std::path::PathBuf;

use levy_potential::green::checks::{check_gradient_bound, graded_points, three_g_constant};
use levy_potential::green::{
    exit_cdf_batch, integrate_green, poisson_mass, stable_mean_exit_time, EnvelopeGreen,
};
use levy_potential::kato::{default_radii, is_kato};
use levy_potential::montecarlo::{exit_cdf_grid, exit_law_distance, Simulator};
use levy_potential::perturbation::{
    comparability_report, discretize_green, perturbed_bin_average, perturbed_exit_cdf_batch, perturbed_poisson_mass,
    solve_perturbed, NystromGrid, PerturbedGreen,
};
use levy_potential::{C11Set, Error, ExperimentConfig, GreenFunction, KernelTable, Result, StableGreen};
use serde::Serialize;

use crate::output::{heatmap, line_plot, Series, Sink};

/// Largest side of a heatmap; finer grids are subsampled.
const HEATMAP_SIDE: usize = 100;
/// CDF resolution of the exit-law comparison.
const CDF_GAP: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct Outcome {
    pub command: &'static str,
    pub files: Vec<PathBuf>,
    pub pass: bool,
    /// Human-readable summary, one line each.
    pub lines: Vec<String>,
}

fn stable_alpha(cfg: &ExperimentConfig, what: &str) -> Result<f64> {
    cfg.levy_model()?
        .stable_alpha()
        .ok_or_else(|| Error::Config(format!("{what} needs a stable model, got {}", cfg.levy_model().unwrap().tag())))
}

fn domain_tag(d: &C11Set) -> String {
    let parts: Vec<String> = d.intervals().iter().map(|(a, b)| format!("({a},{b})")).collect();
    parts.join("u")
}

pub fn cmd_kernels(cfg: &ExperimentConfig, sink: &Sink) -> Result<Outcome> {
    let model = cfg.levy_model()?;
    let d = cfg.domain()?;
    let table = KernelTable::build(&model, d.diam())?;
    let report = table.check_invariants(cfg.tolerances.kernel_slack, cfg.grid.kernel_stride)?;
    let meta = [("model", model.tag()), ("diam", d.diam().to_string())];
    let mut files = vec![sink.csv("kernels.csv", &meta, &table.to_csv())?];
    files.push(sink.json("kernel_invariants.json", &report)?);
    let curve = |f: &dyn Fn(f64) -> f64| table.grid().iter().map(|&r| (r, f(r))).collect::<Vec<_>>();
    let series = [
        Series { name: "h", points: curve(&|r| table.h(r)), dashed: false },
        Series { name: "V", points: curve(&|r| table.v(r)), dashed: false },
        Series { name: "M", points: curve(&|r| table.m(r)), dashed: true },
        Series { name: "K", points: curve(&|r| table.k(r)), dashed: false },
        Series { name: "dK", points: curve(&|r| table.dk(r)), dashed: true },
    ];
    files.push(sink.svg("kernels.svg", &line_plot(&model.tag(), "r", "value", &series, true, true))?);
    let mut lines = vec![format!("kernel table: {} points, r in [{:e}, {:e}]", report.points, table.r_min(), table.r_max())];
    lines.extend(report.failures.iter().map(|f| format!("invariant failed: {f}")));
    if report.all_pass() {
        lines.push("kernel invariants: all pass".into());
    }
    Ok(Outcome { command: "kernels", files, pass: report.all_pass(), lines })
}

#[derive(Serialize)]
struct SourceChecks {
    x: f64,
    poisson_mass: f64,
    mean_exit_time: f64,
    closed_form: Option<f64>,
}

#[derive(Serialize)]
struct ThreeG {
    sup: f64,
    triples: usize,
    skipped: usize,
    boundary_band: f64,
}

pub fn cmd_green(cfg: &ExperimentConfig, sink: &Sink) -> Result<Outcome> {
    let model = cfg.levy_model()?;
    let d = cfg.domain()?;
    let table = KernelTable::build(&model, d.diam())?;
    let meta = [("model", model.tag()), ("domain", domain_tag(&d))];
    let Some(alpha) = model.stable_alpha() else {
        // no closed form: the two-sided envelope is all there is
        let env = EnvelopeGreen::new(&d, &table);
        let pts = graded_points(&d, cfg.grid.checks, cfg.grading()?);
        let body = pair_csv("x,y,G_envelope", &pts, |x, y| vec![env.value(x, y)]);
        let files = vec![sink.csv("green.csv", &meta, &body)?];
        let lines = vec![format!("{}: envelope only", model.tag())];
        return Ok(Outcome { command: "green", files, pass: true, lines });
    };
    let g = StableGreen::new(alpha, &d)?;
    let pts = graded_points(&d, cfg.grid.checks, cfg.grading()?);
    let mut files = vec![sink.csv("green.csv", &meta, &pair_csv("x,y,G", &pts, |x, y| vec![g.value(x, y)]))?];

    let gradient = check_gradient_bound(&g, &table, cfg.grid.checks)?;
    let three = three_g_constant(&g, &table, cfg.grid.triples, cfg.mc.path.seed)?;
    let three = ThreeG {
        sup: three.sup(),
        triples: three.ratios.len(),
        skipped: three.skipped,
        boundary_band: three.boundary_band,
    };
    let mut sources = vec![];
    for &x in &cfg.mc.sources {
        let closed_form = match d.intervals() {
            [(a, b)] => Some(stable_mean_exit_time(alpha, *a, *b, x)),
            _ => None,
        };
        sources.push(SourceChecks {
            x,
            poisson_mass: poisson_mass(&g, x)?,
            mean_exit_time: integrate_green(&g, x, |_| 1.0)?,
            closed_form,
        });
    }
    let tol = &cfg.tolerances;
    let mut lines = vec![
        format!("gradient ratio sup over {0}x{0} graded grid: {1:.6}", cfg.grid.checks, gradient.sup),
        format!("3G ratio sup over {} triples: {:.6}", three.triples, three.sup),
    ];
    let mut pass = gradient.sup.is_finite() && three.sup.is_finite();
    for s in &sources {
        let mass_ok = (s.poisson_mass - 1.0).abs() <= tol.poisson_mass;
        let time_ok = s.closed_form.is_none_or(|c| (s.mean_exit_time / c - 1.0).abs() <= 1e-3);
        pass &= mass_ok && time_ok;
        lines.push(format!(
            "x={}: exit mass {:.8}, integral of G {:.8}{}",
            s.x,
            s.poisson_mass,
            s.mean_exit_time,
            s.closed_form.map_or(String::new(), |c| format!(" (closed form {c:.8})"))
        ));
    }
    #[derive(Serialize)]
    struct Checks<'a> {
        gradient: &'a levy_potential::green::checks::CheckRecord,
        three_g: &'a ThreeG,
        sources: &'a [SourceChecks],
    }
    files.push(sink.json("green_checks.json", &Checks { gradient: &gradient, three_g: &three, sources: &sources })?);
    let series: Vec<Series> = cfg
        .mc
        .sources
        .iter()
        .map(|&x| Series {
            name: "G(x0, .)",
            points: fine_points(&d, 400).into_iter().map(|y| (y, g.value(x, y))).collect(),
            dashed: false,
        })
        .collect();
    files.push(sink.svg("green.svg", &line_plot("Green function rows", "y", "G", &series, false, false))?);
    Ok(Outcome { command: "green", files, pass, lines })
}

fn fine_points(d: &C11Set, per_component: usize) -> Vec<f64> {
    d.intervals()
        .iter()
        .flat_map(|&(a, b)| (1..per_component).map(move |k| a + (b - a) * k as f64 / per_component as f64))
        .collect()
}

fn pair_csv(header: &str, pts: &[f64], f: impl Fn(f64, f64) -> Vec<f64>) -> String {
    let mut s = format!("{header}\n");
    for &x in pts {
        for &y in pts {
            let _ = write!(s, "{x:.17e},{y:.17e}");
            for v in f(x, y) {
                let _ = write!(s, ",{v:.17e}");
            }
            s.push('\n');
        }
    }
    s
}

/// Nyström solve on the configured grid, with panel breaks at the sources.
pub struct Solved {
    pub g: StableGreen,
    pub grid: NystromGrid,
    pub pg: PerturbedGreen,
}

pub fn solve(cfg: &ExperimentConfig, n: usize) -> Result<Solved> {
    let alpha = stable_alpha(cfg, "the perturbation solve")?;
    let d = cfg.domain()?;
    let g = StableGreen::new(alpha, &d)?;
    let grid = NystromGrid::with_breaks(&d, n, cfg.grading()?, &cfg.mc.sources)?;
    let disc = discretize_green(&g, &grid)?;
    let pg = solve_perturbed(&disc, &cfg.drift_field()?, &grid, cfg.grid.solve)?;
    Ok(Solved { g, grid, pg })
}

pub fn cmd_perturb(cfg: &ExperimentConfig, sink: &Sink) -> Result<Outcome> {
    let Solved { g, grid, pg } = solve(cfg, cfg.grid.nystrom)?;
    let report = comparability_report(&pg);
    let ys = grid.nodes();
    let n = ys.len();
    let mut body = String::from("x,y,G,Gt,ratio\n");
    for i in 0..n {
        for k in 0..n {
            let (gv, gt) = (pg.g[(i, k)], pg.gt[(i, k)]);
            let _ = writeln!(body, "{:.17e},{:.17e},{gv:.17e},{gt:.17e},{:.17e}", ys[i], ys[k], gt / gv);
        }
    }
    let meta = [
        ("model", g.model().map_or(String::new(), |m| m.tag())),
        ("domain", domain_tag(g.domain())),
        ("drift", cfg.drift_field()?.tag().to_string()),
        ("nodes", n.to_string()),
    ];
    let mut files = vec![sink.csv("perturb.csv", &meta, &body)?];

    let mut masses = vec![];
    for &x in &cfg.mc.sources {
        let row = pg.row(&g, &grid, x)?;
        let ratio = pg.ratio_interpolant(&g, &grid, x, &row)?;
        masses.push((x, perturbed_poisson_mass(&g, &ratio, x)?));
    }
    #[derive(Serialize)]
    struct PerturbJson<'a> {
        nodes: usize,
        grading: f64,
        mode: levy_potential::perturbation::SolveMode,
        kappa_sup: f64,
        residual: f64,
        converged: bool,
        trace: &'a [f64],
        comparability: &'a levy_potential::perturbation::ComparabilityReport,
        exit_mass: &'a [(f64, f64)],
    }
    files.push(sink.json(
        "perturb.json",
        &PerturbJson {
            nodes: n,
            grading: grid.grading(),
            mode: pg.mode,
            kappa_sup: pg.kappa_sup,
            residual: pg.residual,
            converged: pg.converged,
            trace: &pg.trace,
            comparability: &report,
            exit_mass: &masses,
        },
    )?);
    let step = n.div_ceil(HEATMAP_SIDE);
    let idx: Vec<usize> = (0..n).step_by(step).collect();
    let sub: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
    let vals: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| idx.iter().map(|&k| pg.gt[(i, k)] / pg.g[(i, k)]).collect())
        .collect();
    files.push(sink.svg("ratio.svg", &heatmap("perturbed / unperturbed Green function", &sub, &sub, &vals, 1.0))?);

    let tol = &cfg.tolerances;
    let mut pass = report.constant.is_finite() && report.constant <= tol.comparability && pg.converged;
    let mut lines = vec![
        format!("ratio range [{:.6}, {:.6}] over {} pairs, C = {:.6}", report.inf, report.sup, report.pairs, report.constant),
        format!("discrete kappa {:.4}, residual {:.2e}", pg.kappa_sup, pg.residual),
    ];
    if tol.comparability.is_finite() {
        let ok = report.constant <= tol.comparability;
        lines.push(format!("C <= {}: {}", tol.comparability, if ok { "PASS" } else { "FAIL" }));
    }
    for &(x, m) in &masses {
        pass &= (m - 1.0).abs() <= tol.perturbed_mass;
        lines.push(format!("x={x}: perturbed exit mass {m:.6}"));
    }
    Ok(Outcome { command: "perturb", files, pass, lines })
}

#[derive(Serialize)]
struct McSourceJson {
    x0: f64,
    mean_exit_time: f64,
    se: f64,
    exits: usize,
    censored: usize,
    aborted: usize,
    steps: u64,
    occupation_total: f64,
    worst_bin_z: Option<f64>,
    ks_bound: Option<f64>,
}

pub fn cmd_mc(cfg: &ExperimentConfig, sink: &Sink) -> Result<Outcome> {
    let model = cfg.levy_model()?;
    let d = cfg.domain()?;
    let b = cfg.drift_field()?;
    let path = cfg.mc.path.clone();
    let sim = Simulator::new(&model, &b, &d, path.clone())?;
    let reference = match model.stable_alpha() {
        Some(_) => Some(solve(cfg, cfg.grid.nystrom)?),
        None => None,
    };
    let tol = &cfg.tolerances;
    let mut green_csv = String::from("x0,lo,hi,occupation,se,reference,z\n");
    let mut summary_csv = String::from("x0,mean_exit_time,se,paths,exits,censored,aborted,steps,ks_bound\n");
    let (mut pass, mut lines, mut json, mut series) = (true, vec![], vec![], vec![]);
    for &x0 in &cfg.mc.sources {
        let run = sim.run(x0)?;
        let mut refs = vec![f64::NAN; run.green.len()];
        let mut ks = None;
        if let Some(Solved { g, grid, pg }) = &reference {
            let row = pg.row(g, grid, x0)?;
            let ratio = pg.ratio_interpolant(g, grid, x0, &row)?;
            for (r, bin) in refs.iter_mut().zip(&run.green) {
                *r = perturbed_bin_average(g, &ratio, x0, bin.lo, bin.hi)?;
            }
            let cdf = |zs: &[f64]| {
                if b.is_zero() {
                    exit_cdf_batch(g, x0, &|_| 1.0, &[], zs)
                } else {
                    perturbed_exit_cdf_batch(g, &ratio, x0, zs)
                }
            };
            let rep = exit_law_distance(&run.exits, exit_cdf_grid(&d, &cdf, CDF_GAP)?);
            ks = Some(rep.ks_bound());
        }
        let mut worst: Option<f64> = None;
        for (bin, &r) in run.green.iter().zip(&refs) {
            let z = if r.is_nan() { f64::NAN } else { (bin.estimate.value - r) / bin.estimate.se };
            if z.is_finite() {
                worst = Some(worst.unwrap_or(0.0).max(z.abs()));
            }
            let _ = writeln!(
                green_csv,
                "{x0:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{r:.17e},{z:.6}",
                bin.lo, bin.hi, bin.estimate.value, bin.estimate.se
            );
        }
        let m = &run.mean_exit_time;
        let _ = writeln!(
            summary_csv,
            "{x0:.17e},{:.17e},{:.17e},{},{},{},{},{},{}",
            m.value,
            m.se,
            m.n,
            run.exits.len(),
            run.censored,
            run.aborted,
            run.steps,
            ks.map_or("nan".into(), |k| format!("{k:.6}"))
        );
        pass &= worst.is_none_or(|z| z <= tol.mc_z) && ks.is_none_or(|k| k <= tol.ks);
        lines.push(format!(
            "x0={x0}: mean exit time {:.6} +- {:.6}, {} paths, worst bin |z| {}, KS bound {}",
            m.value,
            m.se,
            m.n,
            worst.map_or("n/a".into(), |z| format!("{z:.2}")),
            ks.map_or("n/a".into(), |k| format!("{k:.4}"))
        ));
        let mids = |v: &dyn Fn(usize) -> f64| {
            run.green.iter().enumerate().map(|(i, bin)| (0.5 * (bin.lo + bin.hi), v(i))).collect::<Vec<_>>()
        };
        series.push(Series { name: "occupation density", points: mids(&|i| run.green[i].estimate.value), dashed: false });
        if reference.is_some() {
            series.push(Series { name: "Nystrom bin average", points: mids(&|i| refs[i]), dashed: true });
        }
        json.push(McSourceJson {
            x0,
            mean_exit_time: m.value,
            se: m.se,
            exits: run.exits.len(),
            censored: run.censored,
            aborted: run.aborted,
            steps: run.steps,
            occupation_total: run.occupation_total(),
            worst_bin_z: worst,
            ks_bound: ks,
        });
    }
    let meta = [
        ("seed", path.seed.to_string()),
        ("dt", path.dt.to_string()),
        ("paths", path.paths.to_string()),
        ("model", model.tag()),
        ("domain", domain_tag(&d)),
        ("drift", b.tag().to_string()),
        ("approximate", sim.approximate().to_string()),
    ];
    let files = vec![
        sink.csv("mc_green.csv", &meta, &green_csv)?,
        sink.csv("mc_summary.csv", &meta, &summary_csv)?,
        sink.json("mc.json", &json)?,
        sink.svg("mc_green.svg", &line_plot("occupation densities", "y", "G", &series, false, false))?,
    ];
    Ok(Outcome { command: "mc", files, pass, lines })
}

pub fn cmd_kato(cfg: &ExperimentConfig, sink: &Sink) -> Result<Outcome> {
    let model = cfg.levy_model()?;
    let d = cfg.domain()?;
    let table = KernelTable::build(&model, d.diam())?;
    let b = cfg.drift_field()?;
    let cert = is_kato(&b, &table, &default_radii(), cfg.tolerances.kato)?;
    let mut body = String::from("r,modulus\n");
    for (r, m) in cert.r.iter().zip(&cert.modulus) {
        let _ = writeln!(body, "{r:.17e},{m:.17e}");
    }
    let meta = [("model", model.tag()), ("drift", cert.drift.clone())];
    let points = cert.r.iter().copied().zip(cert.modulus.iter().copied()).collect();
    let files = vec![
        sink.csv("kato.csv", &meta, &body)?,
        sink.json("kato.json", &cert)?,
        sink.svg(
            "kato.svg",
            &line_plot("Kato modulus", "r", "m(r)", &[Series { name: b.tag(), points, dashed: false }], true, true),
        )?,
    ];
    let lines = vec![format!(
        "{}: {} (m(r) from {:.4e} to {:.4e})",
        cert.drift,
        if cert.pass { "Kato class" } else { "not certified" },
        cert.modulus.first().unwrap_or(&f64::NAN),
        cert.modulus.last().unwrap_or(&f64::NAN)
    )];
    Ok(Outcome { command: "kato", files, pass: cert.pass, lines })
}

pub fn cmd_report(cfg: &ExperimentConfig, sink: &Sink) -> Result<Outcome> {
    let results = crate::criteria::run_all(cfg.mc.path.seed, &sink.dir().join("determinism"))?;
    let mut text = String::new();
    for c in &results {
        let _ = writeln!(text, "{}", c.line());
    }
    let files = vec![sink.json("report.json", &results)?, sink.text("report.txt", &text)?];
    let pass = results.iter().all(|c| c.pass);
    Ok(Outcome { command: "report", files, pass, lines: results.iter().map(|c| c.line()).collect() })
}
