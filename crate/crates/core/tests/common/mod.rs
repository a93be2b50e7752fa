//! Shared helpers for the integration suites: a brute-force reference
//! solver that enumerates candidate active sets with plain linear
//! algebra, independent of the library's solver, plus random problem
//! generators.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Raw problem matrices for `min 1/2 z'Pz + q'z, Az = b, Gz <= h`.
#[derive(Debug, Clone)]
pub struct RawQp {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone)]
pub enum OracleOutcome {
    Optimal { z: DVector<f64>, objective: f64 },
    Infeasible,
}

pub fn random_spd<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    m.transpose() * &m + DMatrix::identity(n, n) * 0.5
}

/// Random strictly convex problem built around an anchor point. The
/// anchor keeps the equalities consistent; inequalities get mixed
/// margins, and a quarter of the problems receive a contradictory pair
/// so infeasibility paths are exercised too.
pub fn random_qp<R: Rng>(rng: &mut R) -> RawQp {
    let n = rng.random_range(2..=5);
    let p = random_spd(n, rng);
    let q = DVector::from_fn(n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let anchor = DVector::from_fn(n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let n_eq = rng.random_range(0..=2.min(n - 1));
    let a = DMatrix::from_fn(n_eq, n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let b = &a * &anchor;
    let n_ineq = rng.random_range(2..=6);
    let mut g = DMatrix::from_fn(n_ineq, n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    let mut h = DVector::zeros(n_ineq);
    for i in 0..n_ineq {
        // Positive margins keep the anchor feasible; occasional negative
        // ones push the boundary past it.
        let margin = rng.random::<f64>() * 1.5 - 0.25;
        h[i] = (g.row(i) * &anchor)[0] + margin;
    }
    if n_ineq >= 4 && rng.random::<f64>() < 0.25 {
        // Contradictory pair: g z <= c and -g z <= -c - 1.
        let row = g.row(0).into_owned();
        let c = h[0];
        g.set_row(n_ineq - 1, &(-row));
        h[n_ineq - 1] = -c - 1.0;
    }
    RawQp { p, q, a, b, g, h }
}

fn kkt_solve(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = p.ncols();
    let k = c.nrows();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    kkt.view_mut((0, n), (n, k)).copy_from(&c.transpose());
    kkt.view_mut((n, 0), (k, n)).copy_from(c);
    let mut rhs = DVector::zeros(n + k);
    rhs.view_mut((0, 0), (n, 1)).copy_from(&(-q));
    rhs.view_mut((n, 0), (k, 1)).copy_from(d);
    let svd = kkt.clone().svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).ok()?;
    // A least-squares answer to an inconsistent system is not a KKT
    // point; verify the equations actually hold.
    let residual = (&kkt * &sol - &rhs).norm();
    if residual > 1e-7 * (1.0 + rhs.norm()) {
        return None;
    }
    let z = DVector::from(sol.rows(0, n));
    let mult = DVector::from(sol.rows(n, k));
    Some((z, mult))
}

/// Reference solution by enumerating every subset of inequalities as a
/// candidate active set and keeping the best KKT-consistent one. Sound
/// for strictly convex problems, where the optimum (if any) satisfies
/// the KKT conditions with some active subset.
pub fn enumerate_active_sets(qp: &RawQp, feas_tol: f64, dual_tol: f64) -> OracleOutcome {
    let n_eq = qp.a.nrows();
    let n_ineq = qp.g.nrows();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << n_ineq) {
        let rows: Vec<usize> = (0..n_ineq).filter(|i| mask & (1 << i) != 0).collect();
        let k = n_eq + rows.len();
        let mut c = DMatrix::zeros(k, qp.p.ncols());
        let mut d = DVector::zeros(k);
        c.view_mut((0, 0), (n_eq, qp.p.ncols())).copy_from(&qp.a);
        d.view_mut((0, 0), (n_eq, 1)).copy_from(&qp.b);
        for (j, &i) in rows.iter().enumerate() {
            c.set_row(n_eq + j, &qp.g.row(i));
            d[n_eq + j] = qp.h[i];
        }
        let Some((z, mult)) = kkt_solve(&qp.p, &qp.q, &c, &d) else {
            continue;
        };
        let primal_ok = (0..n_ineq).all(|i| (qp.g.row(i) * &z)[0] <= qp.h[i] + feas_tol);
        let dual_ok = (0..rows.len()).all(|j| mult[n_eq + j] >= -dual_tol);
        if primal_ok && dual_ok {
            let objective = 0.5 * (&z.transpose() * &qp.p * &z)[0] + qp.q.dot(&z);
            match &best {
                Some((_, obj)) if *obj <= objective => {}
                _ => best = Some((z, objective)),
            }
        }
    }
    match best {
        Some((z, objective)) => OracleOutcome::Optimal { z, objective },
        None => OracleOutcome::Infeasible,
    }
}
