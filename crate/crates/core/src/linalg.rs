//! Solvers for the symmetric M-matrix systems `(diag(s) + alpha * C) x = b`
//! that every implicit update reduces to. `C` is the graph Laplacian of the
//! grid faces and `s > 0` the diagonal excess.

use crate::error::{Error, Result};
use crate::grid::{Grid, Topology};

/// Componentwise backward-error target of the iterative path: the residual
/// of every row must fall below this fraction of `|A||x| + |b|` in that row.
pub const CG_TOLERANCE: f64 = 1e-13;

/// Solves `(diag(excess) + alpha * C) x = rhs` on `grid`.
pub fn solve_mmatrix(grid: &Grid, excess: &[f64], alpha: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    debug_assert_eq!(excess.len(), grid.len());
    debug_assert_eq!(rhs.len(), grid.len());
    match grid.topology() {
        Topology::Chain => {
            let off: Vec<f64> = grid.faces().iter().map(|f| alpha * f.conductance).collect();
            solve_chain(excess, &off, rhs)
        }
        Topology::Lattice { .. } => solve_pcg(grid, excess, alpha, rhs),
    }
}

/// Tridiagonal elimination that never subtracts: the pivot of each reduced
/// row is carried as `excess + coupling`, where the reduced excess is a sum
/// of non-negative terms. This keeps componentwise relative accuracy even
/// when the couplings dwarf the excess by many orders of magnitude.
///
/// Row `i` reads `-off[i-1] x[i-1] + (excess[i] + off[i-1] + off[i]) x[i] - off[i] x[i+1] = rhs[i]`.
pub fn solve_chain(excess: &[f64], off: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = excess.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    debug_assert_eq!(off.len(), n - 1);
    let upper = |i: usize| if i + 1 < n { off[i] } else { 0.0 };

    let mut pivot = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut e = excess[0];
    pivot[0] = e + upper(0);
    y[0] = rhs[0];
    for i in 1..n {
        let l = off[i - 1];
        let ratio = l / pivot[i - 1];
        e = excess[i] + ratio * e;
        pivot[i] = e + upper(i);
        y[i] = rhs[i] + ratio * y[i - 1];
    }
    if pivot.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
        return Err(Error::LinearSolver { iterations: 0, residual: f64::NAN });
    }
    let mut x = vec![0.0; n];
    x[n - 1] = y[n - 1] / pivot[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (y[i] + off[i] * x[i + 1]) / pivot[i];
    }
    Ok(x)
}

fn solve_pcg(grid: &Grid, excess: &[f64], alpha: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = grid.len();
    let mut diag = excess.to_vec();
    for f in grid.faces() {
        diag[f.a] += alpha * f.conductance;
        diag[f.b] += alpha * f.conductance;
    }
    let apply = |x: &[f64], out: &mut [f64]| {
        grid.apply_graph_laplacian(x, alpha, out);
        out.iter_mut().zip(excess).zip(x).for_each(|((o, s), xi)| *o += s * xi);
    };
    // max_i |r_i| / ((|A||x|)_i + |b_i|)
    let backward_error = |x: &[f64], r: &[f64]| {
        let mut scale: Vec<f64> = diag.iter().zip(x).zip(rhs).map(|((d, x), b)| d * x.abs() + b.abs()).collect();
        for f in grid.faces() {
            scale[f.a] += alpha * f.conductance * x[f.b].abs();
            scale[f.b] += alpha * f.conductance * x[f.a].abs();
        }
        r.iter().zip(&scale).fold(0.0f64, |m, (r, s)| if *s > 0.0 { m.max(r.abs() / s) } else { m.max(r.abs()) })
    };

    let mut x: Vec<f64> = rhs.iter().zip(&diag).map(|(b, d)| b / d).collect();
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let max_iter = 20 * n + 1000;
    let mut ap = vec![0.0; n];
    let mut error = backward_error(&x, &r);
    for it in 0..max_iter {
        if error <= CG_TOLERANCE {
            // confirm against the true residual before accepting
            apply(&x, &mut ax);
            r.iter_mut().zip(rhs).zip(&ax).for_each(|((r, b), a)| *r = b - a);
            error = backward_error(&x, &r);
            if error <= CG_TOLERANCE {
                return Ok(x);
            }
        }
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            break;
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        if it % 50 == 49 {
            apply(&x, &mut ax);
            r.iter_mut().zip(rhs).zip(&ax).for_each(|((r, b), a)| *r = b - a);
        }
        error = backward_error(&x, &r);
        z.iter_mut().zip(&r).zip(&diag).for_each(|((z, r), d)| *z = r / d);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        if rz_new == 0.0 {
            break;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    apply(&x, &mut ax);
    r.iter_mut().zip(rhs).zip(&ax).for_each(|((r, b), a)| *r = b - a);
    let error = backward_error(&x, &r);
    if error <= CG_TOLERANCE {
        Ok(x)
    } else {
        Err(Error::LinearSolver { iterations: max_iter, residual: error })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;

    fn dense_chain(excess: &[f64], off: &[f64]) -> Vec<Vec<f64>> {
        let n = excess.len();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            a[i][i] = excess[i];
        }
        for (k, c) in off.iter().enumerate() {
            a[k][k] += c;
            a[k + 1][k + 1] += c;
            a[k][k + 1] -= c;
            a[k + 1][k] -= c;
        }
        a
    }

    #[test]
    fn chain_matches_matrix_product() {
        let excess = [1.0, 0.5, 2.0, 1e-3, 4.0, 0.25];
        let off = [3.0, 1e3, 0.1, 7.0, 2.0];
        let b = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0];
        let x = solve_chain(&excess, &off, &b).unwrap();
        let a = dense_chain(&excess, &off);
        for i in 0..6 {
            let ax: f64 = (0..6).map(|j| a[i][j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-11 * (1.0 + b[i].abs()), "row {i}");
        }
    }

    #[test]
    fn chain_keeps_relative_accuracy_with_huge_coupling() {
        // nearly singular: tiny excess, enormous coupling; solution of A x = excess is x = 1
        let n = 64;
        let excess: Vec<f64> = (0..n).map(|i| 1e-20 * (1.0 + i as f64)).collect();
        let off = vec![1e14; n - 1];
        let x = solve_chain(&excess, &off, &excess).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-12), "{:?}", &x[..4]);
    }

    #[test]
    fn pcg_agrees_with_identity_solution() {
        let g = crate::grid::Grid::build(DomainSpec::rectangle(1.0, 1.0, 10, 12)).unwrap();
        let excess: Vec<f64> = g.weights().iter().map(|w| w * 2.0).collect();
        // constant vector: C 1 = 0, so A 1 = excess
        let x = solve_mmatrix(&g, &excess, 5.0, &excess).unwrap();
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}
