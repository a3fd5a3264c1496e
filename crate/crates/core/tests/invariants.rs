use levy_potential::green::exit_cdf_batch;
use levy_potential::perturbation::{discretize_green, solve_perturbed, NystromGrid, SolveMode};
use levy_potential::{C11Set, DriftField, GreenFunction, StableGreen};
use proptest::prelude::*;

fn two_intervals() -> C11Set {
    C11Set::new(&[(-1.0, -0.2), (0.2, 1.0)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn green_is_symmetric_and_positive(alpha in 1.05f64..1.95, x in -0.99f64..0.99, y in -0.99f64..0.99) {
        prop_assume!((x - y).abs() > 1e-6);
        let g = StableGreen::new(alpha, &C11Set::interval(-1.0, 1.0).unwrap()).unwrap();
        let (a, b) = (g.value(x, y), g.value(y, x));
        prop_assert!(a > 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a);
        prop_assert_eq!(g.value(x, 1.5), 0.0);
    }

    #[test]
    fn green_scales_with_the_domain(alpha in 1.05f64..1.95, r in 0.05f64..20.0, x in -0.9f64..0.9, y in -0.9f64..0.9) {
        prop_assume!((x - y).abs() > 1e-3);
        let unit = StableGreen::new(alpha, &C11Set::interval(-1.0, 1.0).unwrap()).unwrap();
        let big = StableGreen::new(alpha, &C11Set::interval(-r, r).unwrap()).unwrap();
        let want = r.powf(alpha - 1.0) * unit.value(x, y);
        prop_assert!((big.value(r * x, r * y) / want - 1.0).abs() < 1e-10);
    }

    #[test]
    fn exit_cdf_is_a_distribution(x in -0.95f64..0.95, mut zs in prop::collection::vec(1.0f64..30.0, 1..8)) {
        let d = two_intervals();
        prop_assume!(d.contains(x));
        let g = StableGreen::new(1.5, &d).unwrap();
        // points on both sides and in the gap
        zs.extend([-5.0, -1.2, -0.1, 0.0, 0.15]);
        zs.sort_by(f64::total_cmp);
        let f = exit_cdf_batch(&g, x, &|_| 1.0, &[], &zs).unwrap();
        for w in f.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10);
        }
        prop_assert!(f[0] >= 0.0 && f[f.len() - 1] <= 1.0 + 1e-6);
    }

    #[test]
    fn reflection_maps_drift_to_its_mirror(amplitude in -2.0f64..2.0, frequency in 0.5f64..8.0) {
        let d = C11Set::interval(-1.0, 1.0).unwrap();
        let g = StableGreen::new(1.5, &d).unwrap();
        let grid = NystromGrid::new(&d, 60, 1.5).unwrap();
        let disc = discretize_green(&g, &grid).unwrap();
        // sin is odd, so -b(-x) = b(x) and G̃ is invariant under (x,y) ↦ (−x,−y)
        let pg = solve_perturbed(&disc, &DriftField::sine(amplitude, frequency), &grid, SolveMode::Direct).unwrap();
        let (n, scale) = (grid.len(), pg.g.amax());
        for i in 0..n {
            for k in 0..n {
                let (a, b) = (pg.gt[(i, k)], pg.gt[(n - 1 - i, n - 1 - k)]);
                prop_assert!((a - b).abs() <= 1e-8 * scale, "({i},{k}): {a} vs {b}");
            }
        }
    }
}

#[test]
fn zero_drift_is_the_identity() {
    let d = two_intervals();
    let g = StableGreen::new(1.3, &d).unwrap();
    let grid = NystromGrid::new(&d, 60, 1.3).unwrap();
    let disc = discretize_green(&g, &grid).unwrap();
    let pg = solve_perturbed(&disc, &DriftField::zero(), &grid, SolveMode::Direct).unwrap();
    assert_eq!(pg.gt, pg.g);
    assert!(pg.residual == 0.0 && pg.converged);
}

#[test]
fn constant_drift_pushes_exits_downstream() {
    let d = C11Set::interval(-1.0, 1.0).unwrap();
    let g = StableGreen::new(1.5, &d).unwrap();
    let grid = NystromGrid::with_breaks(&d, 200, 2.0 / 1.5, &[0.0]).unwrap();
    let disc = discretize_green(&g, &grid).unwrap();
    let pg = solve_perturbed(&disc, &DriftField::constant(2.0), &grid, SolveMode::Direct).unwrap();
    let row = pg.row(&g, &grid, 0.0).unwrap();
    let ratio = pg.ratio_interpolant(&g, &grid, 0.0, &row).unwrap();
    let left = levy_potential::perturbation::perturbed_exit_cdf_batch(&g, &ratio, 0.0, &[-1.0 - 1e-9]).unwrap()[0];
    let free = exit_cdf_batch(&g, 0.0, &|_| 1.0, &[], &[-1.0 - 1e-9]).unwrap()[0];
    // exit mass in (−1−ε, −1) from the leading term c·(2s)^{−3/4} of the closed-form kernel
    let (eps, s1) = (1e-9f64, 1e-11f64);
    let c = g.exact_poisson(0.0, -1.0 - s1).unwrap() * (s1 * (2.0 + s1)).powf(0.75) * (1.0 + s1);
    let sliver = c * 2f64.powf(-0.75) * eps.powf(0.25) / 0.25;
    assert!((free - (0.5 - sliver)).abs() < 1e-7, "{free} vs {}", 0.5 - sliver);
    assert!(left < free - 0.05, "{left} vs {free}");
}
