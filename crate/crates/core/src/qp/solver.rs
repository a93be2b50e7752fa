//! Equality elimination plus a dual active-set iteration.
//!
//! The equalities are removed through an orthonormal null-space
//! parametrization, leaving `min 1/2 v' Pv v + qv' v  s.t.  Gv v <= hv`.
//! When `Pv` admits a Cholesky factorization the reduced problem is solved
//! by the dual active-set method of Goldfarb and Idnani: start at the
//! unconstrained minimum, repeatedly pick a violated constraint, and take
//! primal-dual steps that keep the iterate optimal for its active set
//! until the constraint becomes tight, dropping blocking constraints
//! along the way. Every iterate is dual feasible, so no phase-one search
//! is needed. A singular reduced Hessian yields an unbounded or
//! degenerate status instead.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use super::{kkt_residuals, QpError, QpSolution, QpStatus, QuadraticProgram};

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Relative tolerance for rank and singularity decisions.
    pub tol: f64,
    /// Absolute tolerance for constraint violation and activity.
    pub activity_tol: f64,
    /// Cap on constraint additions; 0 picks a size-based default.
    pub max_iterations: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            activity_tol: 1e-8,
            max_iterations: 0,
        }
    }
}

impl SolverOptions {
    fn iteration_cap(&self, num_vars: usize, num_ineq: usize) -> usize {
        if self.max_iterations > 0 {
            self.max_iterations
        } else {
            100 * (num_ineq + 1) + 10 * num_vars
        }
    }
}

/// Solves the quadratic program. Failure to satisfy the constraints or a
/// singular reduced Hessian is reported through the solution status, not
/// as an error; errors are reserved for malformed problems.
pub fn solve(qp: &QuadraticProgram, opts: &SolverOptions) -> Result<QpSolution, QpError> {
    let n = qp.num_vars();

    let (z_p, basis) = if qp.num_equalities() == 0 {
        (DVector::zeros(n), DMatrix::identity(n, n))
    } else {
        let param = super::null_space_parametrization(&qp.a_eq, &qp.b_eq, opts.tol);
        if param.residual > opts.tol.sqrt() * (1.0 + qp.b_eq.norm()) {
            return Ok(finish(qp, QpStatus::Infeasible, param.particular, None, 0));
        }
        (param.particular, param.basis)
    };

    let k = basis.ncols();
    if k == 0 {
        // The equalities pin the point down completely.
        return Ok(unique_point_solution(qp, z_p, opts));
    }

    let p_v = symmetrize(&basis.tr_mul(&(&qp.p * &basis)));
    let q_v = basis.tr_mul(&(&qp.p * &z_p + &qp.q));
    let (g_v, h_v) = if qp.num_inequalities() > 0 {
        (&qp.g * &basis, &qp.h - &qp.g * &z_p)
    } else {
        (DMatrix::zeros(0, k), DVector::zeros(0))
    };

    let Some(chol) = Cholesky::new(p_v.clone()) else {
        let status = classify_singular(&p_v, &q_v, &g_v, opts.tol);
        return Ok(finish(qp, status, z_p, None, 0));
    };

    let cap = opts.iteration_cap(k, g_v.nrows());
    let outcome = dual_active_set(&chol, &g_v, &h_v, &q_v, opts, cap);
    let z = &z_p + &basis * &outcome.v;
    Ok(finish(
        qp,
        outcome.status,
        z,
        Some((outcome.multipliers, outcome.active)),
        outcome.iterations,
    ))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

struct ActiveSetOutcome {
    status: QpStatus,
    v: DVector<f64>,
    /// Multiplier per inequality constraint, zero off the active set.
    multipliers: DVector<f64>,
    active: Vec<usize>,
    iterations: usize,
}

fn dual_active_set(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    g_v: &DMatrix<f64>,
    h_v: &DVector<f64>,
    q_v: &DVector<f64>,
    opts: &SolverOptions,
    cap: usize,
) -> ActiveSetOutcome {
    let num_ineq = g_v.nrows();
    let mut v = chol.solve(&(-q_v));
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0usize;

    // Row norms weight the pivoting rule so badly scaled rows do not
    // dominate the choice of entering constraint.
    let row_norms: Vec<f64> = (0..num_ineq)
        .map(|i| g_v.row(i).norm().max(f64::EPSILON))
        .collect();

    loop {
        // Pick the most violated constraint, scaled by row norm; ties go
        // to the smallest index. Active constraints are skipped.
        let mut entering = None;
        let mut worst = 0.0;
        for i in 0..num_ineq {
            if active.contains(&i) {
                continue;
            }
            let slack = g_v.row(i).transpose().dot(&v) - h_v[i];
            if slack <= opts.activity_tol {
                continue;
            }
            let scaled = slack / row_norms[i];
            if scaled > worst {
                worst = scaled;
                entering = Some(i);
            }
        }
        let Some(p) = entering else {
            return ActiveSetOutcome {
                status: QpStatus::Optimal,
                multipliers: scatter(&u, &active, num_ineq),
                v,
                active,
                iterations,
            };
        };
        if iterations >= cap {
            return ActiveSetOutcome {
                status: QpStatus::MaxIterations,
                multipliers: scatter(&u, &active, num_ineq),
                v,
                active,
                iterations,
            };
        }

        let c_p = g_v.row(p).transpose();
        let mut u_p = 0.0;
        loop {
            // Step directions from the active-set KKT system:
            // Pv z + Ca' r = c_p, Ca z = 0.
            let y = chol.solve(&c_p);
            let (z_dir, r) = if active.is_empty() {
                (y.clone(), DVector::zeros(0))
            } else {
                let c_a = gather_rows(g_v, &active);
                let mut pinv_ca_t = DMatrix::zeros(v.len(), active.len());
                for (j, &idx) in active.iter().enumerate() {
                    pinv_ca_t.set_column(j, &chol.solve(&g_v.row(idx).transpose()));
                }
                let m_mat = symmetrize(&(&c_a * &pinv_ca_t));
                let rhs = &c_a * &y;
                let r = solve_small_spd(&m_mat, &rhs);
                (&y - &pinv_ca_t * &r, r)
            };

            // Dual step limit: the first active multiplier driven to zero.
            let mut t1 = f64::INFINITY;
            let mut drop_pos = None;
            for (pos, (ui, ri)) in u.iter().zip(r.iter()).enumerate() {
                if *ri > 0.0 {
                    let step = ui / ri;
                    if step < t1 {
                        t1 = step;
                        drop_pos = Some(pos);
                    }
                }
            }

            // Primal step to make the entering constraint tight.
            let slack = (c_p.dot(&v) - h_v[p]).max(0.0);
            let rate = c_p.dot(&z_dir);
            let t2 = if z_dir.norm_squared() <= f64::EPSILON || rate <= 0.0 {
                f64::INFINITY
            } else {
                slack / rate
            };

            if !t1.is_finite() && !t2.is_finite() {
                // The entering constraint cannot be satisfied together
                // with the active set.
                return ActiveSetOutcome {
                    status: QpStatus::Infeasible,
                    multipliers: scatter(&u, &active, num_ineq),
                    v,
                    active,
                    iterations,
                };
            }

            let t = t1.min(t2);
            v -= &z_dir * t;
            for (ui, ri) in u.iter_mut().zip(r.iter()) {
                *ui -= t * ri;
            }
            u_p += t;

            if t2 <= t1 {
                active.push(p);
                u.push(u_p);
                iterations += 1;
                break;
            }
            let pos = drop_pos.expect("finite t1 implies a blocking index");
            active.remove(pos);
            u.remove(pos);
        }
    }
}

fn gather_rows(mat: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), mat.ncols());
    for (k, &i) in rows.iter().enumerate() {
        out.view_mut((k, 0), (1, mat.ncols())).copy_from(&mat.row(i));
    }
    out
}

fn scatter(u: &[f64], active: &[usize], num_ineq: usize) -> DVector<f64> {
    let mut out = DVector::zeros(num_ineq);
    for (&idx, &val) in active.iter().zip(u.iter()) {
        out[idx] = val.max(0.0);
    }
    out
}

/// Solves a small symmetric positive definite system, falling back to the
/// pseudoinverse when the Cholesky factorization fails marginally.
fn solve_small_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    match Cholesky::new(m.clone()) {
        Some(chol) => chol.solve(rhs),
        None => super::pseudoinverse(m, 1e-12) * rhs,
    }
}

/// Resolution when the equalities determine the point uniquely: check the
/// inequalities and recover equality multipliers from stationarity.
fn unique_point_solution(
    qp: &QuadraticProgram,
    z: DVector<f64>,
    opts: &SolverOptions,
) -> QpSolution {
    if qp.num_inequalities() > 0 {
        let slack = &qp.g * &z - &qp.h;
        if slack.iter().any(|s| *s > opts.activity_tol) {
            return finish(qp, QpStatus::Infeasible, z, None, 0);
        }
    }
    finish(qp, QpStatus::Optimal, z, Some((DVector::zeros(qp.num_inequalities()), Vec::new())), 0)
}

/// Certifies unboundedness along a null direction of the reduced Hessian,
/// or reports degeneracy when no such certificate exists.
fn classify_singular(
    p_v: &DMatrix<f64>,
    q_v: &DVector<f64>,
    g_v: &DMatrix<f64>,
    tol: f64,
) -> QpStatus {
    let eig = SymmetricEigen::new(p_v.clone());
    let scale = eig.eigenvalues.amax().max(1.0);
    for (j, ev) in eig.eigenvalues.iter().enumerate() {
        if ev.abs() > tol * scale {
            continue;
        }
        let d = eig.eigenvectors.column(j).into_owned();
        let slope = q_v.dot(&d);
        if slope.abs() <= tol {
            continue;
        }
        // Orient the direction downhill and check no inequality blocks it.
        let dir = if slope > 0.0 { -d } else { d };
        let blocked = (0..g_v.nrows())
            .any(|i| g_v.row(i).transpose().dot(&dir) > tol * scale);
        if !blocked {
            return QpStatus::Unbounded;
        }
    }
    QpStatus::Degenerate
}

/// Assembles the returned solution: maps multipliers to full-length
/// vectors, recovers the equality multipliers, and evaluates the KKT
/// residuals at the final point.
fn finish(
    qp: &QuadraticProgram,
    status: QpStatus,
    z: DVector<f64>,
    duals: Option<(DVector<f64>, Vec<usize>)>,
    iterations: usize,
) -> QpSolution {
    let (lambda, mut active) = match duals {
        Some((l, a)) => (l, a),
        None => (DVector::zeros(qp.num_inequalities()), Vec::new()),
    };
    active.sort_unstable();
    let nu = if qp.num_equalities() > 0 && status == QpStatus::Optimal {
        // Stationarity restricted to the range of A': least-squares
        // recovery of the equality multipliers.
        let mut grad = &qp.p * &z + &qp.q;
        if qp.num_inequalities() > 0 {
            grad += qp.g.tr_mul(&lambda);
        }
        let pinv_at = super::pseudoinverse(&qp.a_eq.transpose(), 1e-12);
        &pinv_at * (-grad)
    } else {
        DVector::zeros(qp.num_equalities())
    };
    let kkt = kkt_residuals(qp, &z, &nu, &lambda);
    let objective = qp.objective(&z);
    QpSolution {
        status,
        z,
        objective,
        eq_multipliers: nu,
        ineq_multipliers: lambda,
        active_set: active,
        iterations,
        kkt,
    }
}
