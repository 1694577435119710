use std::f64::consts::PI;
use std::sync::Arc;

use motisim::solver::{self, helmholtz_solve, NoObserver, RunSettings};
use motisim::{DomainSpec, Field, Grid, Motility, SimState};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dense_laplacian(grid: &Grid) -> DMatrix<f64> {
    let n = grid.len();
    let mut c = DMatrix::<f64>::zeros(n, n);
    for f in grid.faces() {
        c[(f.a, f.a)] += f.conductance;
        c[(f.b, f.b)] += f.conductance;
        c[(f.a, f.b)] -= f.conductance;
        c[(f.b, f.a)] -= f.conductance;
    }
    let w_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, grid.weights().iter().map(|w| 1.0 / w)));
    -(w_inv * c)
}

/// One step written directly in terms of `L = -W^{-1} C` and dense LU.
fn dense_step(grid: &Grid, u: &[f64], v: &[f64], tau: f64, dt: f64, m: &Motility) -> (Vec<f64>, Vec<f64>) {
    let n = grid.len();
    let l = dense_laplacian(grid);
    let eye = DMatrix::<f64>::identity(n, n);
    let gamma = DMatrix::from_diagonal(&DVector::from_iterator(n, v.iter().map(|s| m.gamma(*s).unwrap())));
    let u_new = (&eye - dt * &l * gamma).lu().solve(&DVector::from_column_slice(u)).unwrap();
    let v_rhs = DVector::from_column_slice(v) * (tau / dt) + &u_new;
    let v_new = ((tau / dt + 1.0) * &eye - &l).lu().solve(&v_rhs).unwrap();
    (u_new.iter().copied().collect(), v_new.iter().copied().collect())
}

fn bump(grid: &Arc<Grid>) -> (Field, Field) {
    let u = Field::from_fn(grid.clone(), |x| 1.0 + 0.5 * (-8.0 * x.iter().map(|c| c * c).sum::<f64>()).exp());
    let v = Field::from_fn(grid.clone(), |x| 0.3 + 0.2 * x[0]);
    (u, v)
}

#[test]
fn step_matches_dense_oracle_on_disk_and_rectangle() {
    for spec in [DomainSpec::disk(1.0, 24), DomainSpec::rectangle(1.5, 1.0, 12, 8)] {
        let grid = Grid::build(spec).unwrap();
        let (u, v) = bump(&grid);
        for (m, tau, dt) in [(Motility::exp_decay(), 1.0, 0.01), (Motility::gaussian(), 0.5, 0.2)] {
            let state = SimState::new(u.clone(), v.clone(), tau).unwrap();
            let next = solver::step(&state, &m, dt).unwrap();
            let (uo, vo) = dense_step(&grid, u.values(), v.values(), tau, dt, &m);
            let du = next.u.values().iter().zip(&uo).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let dv = next.v.values().iter().zip(&vo).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(du < 1e-11 && dv < 1e-11, "du={du} dv={dv}");
        }
    }
}

#[test]
fn mass_is_conserved_over_a_thousand_steps() {
    for spec in [DomainSpec::interval(2.0, 64), DomainSpec::disk(1.0, 64), DomainSpec::rectangle(1.0, 1.0, 16, 16)] {
        let grid = Grid::build(spec).unwrap();
        let (u, v) = bump(&grid);
        let mut state = SimState::new(u, v, 1.0).unwrap();
        let m0 = state.mass();
        let m = Motility::exp_decay();
        for _ in 0..1000 {
            state = solver::step(&state, &m, 0.01).unwrap();
        }
        assert!(((state.mass() - m0) / m0).abs() <= 1e-12);
        assert!(state.u.min() > 0.0);
    }
}

#[test]
fn constant_state_is_a_fixed_point() {
    let grid = Grid::build(DomainSpec::disk(1.0, 32)).unwrap();
    let state = SimState::new(Field::constant(grid.clone(), 2.0), Field::constant(grid, 2.0), 1.0).unwrap();
    let next = solver::step(&state, &Motility::power(1.0).unwrap(), 0.5).unwrap();
    assert!(next.u.distance_sup(&state.u) < 1e-13);
    assert!(next.v.distance_sup(&state.v) < 1e-13);
}

#[test]
fn helmholtz_of_cosine() {
    let errors: Vec<f64> = [64, 128, 256]
        .iter()
        .map(|&n| {
            let grid = Grid::build(DomainSpec::interval(1.0, n)).unwrap();
            let f = Field::from_fn(grid.clone(), |x| (PI * x[0]).cos());
            let exact = f.map(|c| c / (1.0 + PI * PI));
            helmholtz_solve(&f).unwrap().distance_sup(&exact)
        })
        .collect();
    assert!(errors[2] < 1e-5);
    for w in errors.windows(2) {
        assert!((w[0] / w[1]).log2() >= 1.9, "{errors:?}");
    }
}

#[test]
fn first_order_in_time() {
    let grid = Grid::build(DomainSpec::interval(1.0, 32)).unwrap();
    let (u, v) = bump(&grid);
    let m = Motility::exp_decay();
    let t_end = 0.1;
    let solve = |steps: usize| {
        let mut s = SimState::new(u.clone(), v.clone(), 1.0).unwrap();
        for _ in 0..steps {
            s = solver::step(&s, &m, t_end / steps as f64).unwrap();
        }
        s.u
    };
    let reference = solve(2560);
    let errors: Vec<f64> = [10, 20, 40].iter().map(|&k| solve(k).distance_sup(&reference)).collect();
    for w in errors.windows(2) {
        assert!((w[0] / w[1]).log2() >= 0.9, "{errors:?}");
    }
}

#[test]
fn run_honours_cadence_and_end_time() {
    let grid = Grid::build(DomainSpec::interval(1.0, 32)).unwrap();
    let (u, v) = bump(&grid);
    let settings = RunSettings::new(0.01, 1.0).with_cadence(7);
    let out = solver::run(SimState::new(u, v, 1.0).unwrap(), &Motility::exp_decay(), &settings, &mut NoObserver).unwrap();
    assert_eq!(out.steps, 100);
    assert!(out.abort.is_none());
    assert!((out.final_state.t - 1.0).abs() < 1e-12);
    let steps: Vec<usize> = out.records.iter().map(|r| r.step).collect();
    assert_eq!(steps.first(), Some(&0));
    assert_eq!(steps.last(), Some(&100));
    assert!(steps.iter().all(|s| s % 7 == 0 || *s == 100));
    assert!(out.records.windows(2).all(|w| w[1].lyapunov_f <= w[0].lyapunov_f + 1e-12));
}

#[test]
fn ceiling_aborts_the_run() {
    let grid = Grid::build(DomainSpec::interval(1.0, 32)).unwrap();
    let (u, v) = bump(&grid);
    let settings = RunSettings::new(0.01, 1.0).with_ceiling(1.2);
    let out = solver::run(SimState::new(u, v, 1.0).unwrap(), &Motility::exp_decay(), &settings, &mut NoObserver).unwrap();
    assert!(out.abort.is_some());
    assert!(out.records.last().unwrap().abort.is_some());
}

fn state_strategy() -> impl Strategy<Value = (Arc<Grid>, Vec<f64>, Vec<f64>)> {
    prop_oneof![
        (8usize..40).prop_map(|n| DomainSpec::interval(1.0, n)),
        (8usize..40).prop_map(|n| DomainSpec::disk(1.0, n)),
        (8usize..12, 8usize..12).prop_map(|(a, b)| DomainSpec::rectangle(1.0, 0.7, a, b)),
    ]
    .prop_flat_map(|spec| {
        let grid = Grid::build(spec).unwrap();
        let n = grid.len();
        (Just(grid), prop::collection::vec(0.01f64..5.0, n), prop::collection::vec(0.0f64..3.0, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn helmholtz_obeys_maximum_principle((grid, f, _) in state_strategy()) {
        let f = Field::new(grid, f).unwrap();
        let w = helmholtz_solve(&f).unwrap();
        prop_assert!(w.min() >= f.min() - 1e-12 && w.max() <= f.max() + 1e-12);
        prop_assert!((w.integrate() - f.integrate()).abs() <= 1e-12 * f.integrate());
    }

    #[test]
    fn step_conserves_mass_and_positivity((grid, u, v) in state_strategy(), dt in 1e-3f64..10.0, tau in 0.1f64..5.0) {
        let state = SimState::new(Field::new(grid.clone(), u).unwrap(), Field::new(grid, v).unwrap(), tau).unwrap();
        let next = solver::step(&state, &Motility::exp_decay(), dt).unwrap();
        prop_assert!(((next.mass() - state.mass()) / state.mass()).abs() <= 1e-12);
        prop_assert!(next.u.min() > 0.0 && next.v.min() > 0.0);
        prop_assert!(next.w.distance_sup(&helmholtz_solve(&next.u).unwrap()) <= 1e-12 * next.u.max());
    }
}
