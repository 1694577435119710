use std::f64::consts::PI;
use std::sync::Arc;

use motisim::solver::helmholtz_solve;
use motisim::{DomainSpec, Field, Grid};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = DomainSpec> {
    prop_oneof![
        (0.2f64..5.0, 8usize..64).prop_map(|(l, n)| DomainSpec::interval(l, n)),
        (0.2f64..5.0, 8usize..64).prop_map(|(r, n)| DomainSpec::disk(r, n)),
        (0.2f64..3.0, 0.2f64..3.0, 8usize..20, 8usize..20).prop_map(|(a, b, n, m)| DomainSpec::rectangle(a, b, n, m)),
    ]
}

fn grid_and_fields() -> impl Strategy<Value = (Arc<Grid>, Vec<f64>, Vec<f64>)> {
    spec_strategy().prop_flat_map(|spec| {
        let grid = Grid::build(spec).unwrap();
        let n = grid.len();
        (Just(grid), prop::collection::vec(-10.0f64..10.0, n), prop::collection::vec(-10.0f64..10.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn total_weight_is_measure(spec in spec_strategy()) {
        let m = spec.measure();
        let g = Grid::build(spec).unwrap();
        prop_assert!((g.total_weight() / m - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn constant_in_kernel(spec in spec_strategy(), c in -100.0f64..100.0) {
        let g = Grid::build(spec).unwrap();
        prop_assert!(g.apply_laplacian(&vec![c; g.len()]).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn laplacian_is_weighted_symmetric((g, f, h) in grid_and_fields()) {
        let lf = g.apply_laplacian(&f);
        let lh = g.apply_laplacian(&h);
        let a = g.inner(&lf, &h);
        let b = g.inner(&f, &lh);
        let scale = g.inner(&lf, &lf).sqrt() * g.inner(&h, &h).sqrt() + 1.0;
        prop_assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
    }

    #[test]
    fn divergence_theorem((g, f, _) in grid_and_fields()) {
        let total = g.integrate(&g.apply_laplacian(&f));
        let norm = f.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let lap_scale = g.integrate(&g.apply_laplacian(&f).iter().map(|x| x.abs()).collect::<Vec<_>>());
        prop_assert!(total.abs() <= 1e-10 * norm.max(1.0) + 1e-13 * lap_scale, "{total}");
    }

    #[test]
    fn green_identity((g, f, _) in grid_and_fields()) {
        let lhs = g.grad_norm_sq(&f);
        let rhs = -g.inner(&f, &g.apply_laplacian(&f));
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

fn weighted_rel_l2(g: &Grid, approx: &[f64], exact: &[f64]) -> f64 {
    let diff: Vec<f64> = approx.iter().zip(exact).map(|(a, b)| a - b).collect();
    (g.inner(&diff, &diff) / g.inner(exact, exact)).sqrt()
}

fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

#[test]
fn interval_eigenfunction_converges_at_second_order() {
    let errors: Vec<f64> = [32, 64, 128, 256]
        .iter()
        .map(|&n| {
            let g = Grid::build(DomainSpec::interval(1.0, n)).unwrap();
            let f = Field::from_fn(g.clone(), |x| (PI * x[0]).cos());
            let exact: Vec<f64> = f.values().iter().map(|v| -PI * PI * v).collect();
            weighted_rel_l2(&g, f.laplacian().values(), &exact)
        })
        .collect();
    assert!(errors[3] < 1e-3);
    for o in observed_orders(&errors) {
        assert!(o >= 1.9, "{errors:?}");
    }
}

#[test]
fn rectangle_eigenfunction_converges_at_second_order() {
    let errors: Vec<f64> = [8, 16, 32, 64]
        .iter()
        .map(|&n| {
            let g = Grid::build(DomainSpec::rectangle(2.0, 1.0, 2 * n, n)).unwrap();
            let f = Field::from_fn(g.clone(), |x| (PI * x[0] / 2.0).cos() * (PI * x[1]).cos());
            let k2 = PI * PI / 4.0 + PI * PI;
            let exact: Vec<f64> = f.values().iter().map(|v| -k2 * v).collect();
            weighted_rel_l2(&g, f.laplacian().values(), &exact)
        })
        .collect();
    for o in observed_orders(&errors) {
        assert!(o >= 1.9, "{errors:?}");
    }
}

#[test]
fn disk_interior_laplacian_converges_at_second_order() {
    // f = r^4/4 - r^2/2 has f'(1) = 0 and radial Laplacian 4 r^2 - 2
    let errors: Vec<f64> = [32, 64, 128, 256]
        .iter()
        .map(|&n| {
            let g = Grid::build(DomainSpec::disk(1.0, n)).unwrap();
            let f = Field::from_fn(g.clone(), |x| x[0].powi(4) / 4.0 - x[0] * x[0] / 2.0);
            g.nodes()
                .zip(f.laplacian().values())
                .take(n - 1)
                .map(|(x, l)| (l - (4.0 * x[0] * x[0] - 2.0)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    for o in observed_orders(&errors) {
        assert!(o >= 1.9, "{errors:?}");
    }
}

#[test]
fn disk_helmholtz_solution_converges_at_second_order() {
    let exact = |r: f64| r.powi(4) / 4.0 - r * r / 2.0;
    let errors: Vec<f64> = [32, 64, 128, 256]
        .iter()
        .map(|&n| {
            let g = Grid::build(DomainSpec::disk(1.0, n)).unwrap();
            let rhs = Field::from_fn(g.clone(), |x| exact(x[0]) - (4.0 * x[0] * x[0] - 2.0));
            let w = helmholtz_solve(&rhs).unwrap();
            let f = Field::from_fn(g.clone(), |x| exact(x[0]));
            w.distance_sup(&f)
        })
        .collect();
    for o in observed_orders(&errors) {
        assert!(o >= 1.9, "{errors:?}");
    }
}

#[test]
fn gradient_energy_of_cosine() {
    let g = Grid::build(DomainSpec::interval(1.0, 256)).unwrap();
    let f = Field::from_fn(g, |x| (PI * x[0]).cos());
    assert!((f.grad_norm_sq() / (PI * PI / 2.0) - 1.0).abs() < 1e-3);
}
