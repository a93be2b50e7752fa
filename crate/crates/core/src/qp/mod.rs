//! Dense convex quadratic programming.
//!
//! Problems take the form
//!
//! ```text
//!     minimize     1/2 z' P z + q' z
//!     subject to   A z  = b
//!                  G z <= h
//! ```
//!
//! with `P` symmetric positive semidefinite. The solver eliminates the
//! equality constraints through a null-space parametrization and runs a
//! dual active-set iteration on the reduced problem, which must be
//! strictly convex; otherwise an unbounded or degenerate status is
//! reported. Multipliers and Karush-Kuhn-Tucker residuals are recomputed
//! from the returned point so callers can audit any solution.

mod solver;

pub use solver::{solve, SolverOptions};

use std::fmt;

use nalgebra::{DMatrix, DVector};

#[derive(Debug)]
pub enum QpError {
    Dimension(String),
}

impl fmt::Display for QpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            QpError::Dimension(msg) => write!(f, "dimension error: {msg}"),
        }
    }
}

impl std::error::Error for QpError {}

/// A convex quadratic program in standard form.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = q.len();
        if n == 0 {
            return Err(QpError::Dimension("zero decision variables".into()));
        }
        if p.nrows() != n || p.ncols() != n {
            return Err(QpError::Dimension(format!(
                "P is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
        if a_eq.ncols() != n && a_eq.nrows() != 0 {
            return Err(QpError::Dimension(format!(
                "A has {} columns, expected {n}",
                a_eq.ncols()
            )));
        }
        if a_eq.nrows() != b_eq.len() {
            return Err(QpError::Dimension(format!(
                "A has {} rows but b has {} entries",
                a_eq.nrows(),
                b_eq.len()
            )));
        }
        if g.ncols() != n && g.nrows() != 0 {
            return Err(QpError::Dimension(format!(
                "G has {} columns, expected {n}",
                g.ncols()
            )));
        }
        if g.nrows() != h.len() {
            return Err(QpError::Dimension(format!(
                "G has {} rows but h has {} entries",
                g.nrows(),
                h.len()
            )));
        }
        Ok(Self {
            p,
            q,
            a_eq,
            b_eq,
            g,
            h,
        })
    }

    /// Problem without any constraints.
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Result<Self, QpError> {
        let n = q.len();
        QuadraticProgram::new(
            p,
            q,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_equalities(&self) -> usize {
        self.a_eq.nrows()
    }

    pub fn num_inequalities(&self) -> usize {
        self.g.nrows()
    }

    /// Objective value `1/2 z' P z + q' z`.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (&self.p * z).dot(z) + self.q.dot(z)
    }

    /// One-line shape and magnitude summary for diagnostics.
    pub fn dump_summary(&self) -> String {
        format!(
            "qp: n={} eq={} ineq={} |P|={:.3e} |q|={:.3e} |b|={:.3e} |h|={:.3e}",
            self.num_vars(),
            self.num_equalities(),
            self.num_inequalities(),
            self.p.norm(),
            self.q.norm(),
            self.b_eq.norm(),
            self.h.norm(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The reduced Hessian is singular and no unbounded direction was
    /// certified; the minimizer may not be unique.
    Degenerate,
    MaxIterations,
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::Unbounded => "unbounded",
            QpStatus::Degenerate => "degenerate",
            QpStatus::MaxIterations => "max-iterations",
        };
        write!(f, "{name}")
    }
}

/// Karush-Kuhn-Tucker residuals of a candidate primal-dual point,
/// recomputed directly from the problem data.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// `|| P z + q + A' nu + G' lambda ||_inf`
    pub stationarity: f64,
    /// `|| A z - b ||_inf`
    pub equality: f64,
    /// `max(0, max_i (G z - h)_i)`
    pub inequality: f64,
    /// `max(0, max_i -lambda_i)`
    pub dual: f64,
    /// `max_i | lambda_i (G z - h)_i |`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.equality)
            .max(self.inequality)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// Evaluates all KKT residuals at `(z, nu, lambda)`.
pub fn kkt_residuals(
    qp: &QuadraticProgram,
    z: &DVector<f64>,
    nu: &DVector<f64>,
    lambda: &DVector<f64>,
) -> KktResiduals {
    let mut grad = &qp.p * z + &qp.q;
    if qp.num_equalities() > 0 {
        grad += qp.a_eq.tr_mul(nu);
    }
    if qp.num_inequalities() > 0 {
        grad += qp.g.tr_mul(lambda);
    }
    let stationarity = grad.amax();
    let equality = if qp.num_equalities() > 0 {
        (&qp.a_eq * z - &qp.b_eq).amax()
    } else {
        0.0
    };
    let (inequality, dual, complementarity) = if qp.num_inequalities() > 0 {
        let slack = &qp.g * z - &qp.h;
        let ineq = slack.iter().cloned().fold(0.0, f64::max);
        let dual = lambda.iter().map(|l| -l).fold(0.0, f64::max);
        let comp = slack
            .iter()
            .zip(lambda.iter())
            .map(|(s, l)| (s * l).abs())
            .fold(0.0, f64::max);
        (ineq, dual, comp)
    } else {
        (0.0, 0.0, 0.0)
    };
    KktResiduals {
        stationarity,
        equality,
        inequality,
        dual,
        complementarity,
    }
}

/// Solver output. All fields are valid for `Optimal`; for failure
/// statuses `z` holds the last iterate and multipliers are zero.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub status: QpStatus,
    pub z: DVector<f64>,
    pub objective: f64,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    /// Indices of inequality constraints active at the solution.
    pub active_set: Vec<usize>,
    /// Number of constraint additions performed by the active-set loop.
    pub iterations: usize,
    pub kkt: KktResiduals,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Moore-Penrose pseudoinverse with singular values below
/// `tol * sigma_max` treated as zero.
pub fn pseudoinverse(mat: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let svd = mat.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = if max_sv == 0.0 { 0.0 } else { tol * max_sv };
    svd.pseudo_inverse(eps).expect("nonnegative tolerance")
}

/// Affine parametrization of the solution set of `A z = b`.
#[derive(Debug, Clone)]
pub struct AffineParametrization {
    /// Minimum-norm least-squares solution of `A z = b`.
    pub particular: DVector<f64>,
    /// Orthonormal basis of the null space of `A`, one column per
    /// direction; every solution is `particular + basis * v`.
    pub basis: DMatrix<f64>,
    pub rank: usize,
    /// `|| A particular - b ||`; nonzero beyond tolerance means the
    /// equalities are inconsistent.
    pub residual: f64,
}

/// Computes the null-space parametrization of `A z = b` via the singular
/// value decomposition. Works for inconsistent systems too; inspect
/// `residual` to detect them.
pub fn null_space_parametrization(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    tol: f64,
) -> AffineParametrization {
    let n = a.ncols();
    if a.nrows() == 0 {
        return AffineParametrization {
            particular: DVector::zeros(n),
            basis: DMatrix::identity(n, n),
            rank: 0,
            residual: 0.0,
        };
    }
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = if max_sv == 0.0 { 0.0 } else { tol * max_sv };
    let rank = svd.singular_values.iter().filter(|s| **s > eps).count();
    let particular = svd.solve(b, eps).expect("svd computed with u and v_t");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    // Rows of V' beyond the rank span the null space. V' holds only
    // min(nrows, ncols) rows, so directions past that are reconstructed by
    // completing the orthonormal set.
    let basis = if rank == n {
        DMatrix::zeros(n, 0)
    } else if v_t.nrows() == n {
        let mut basis = DMatrix::zeros(n, n - rank);
        for j in rank..n {
            basis.set_column(j - rank, &v_t.row(j).transpose());
        }
        basis
    } else {
        complete_null_basis(v_t, rank, n)
    };
    let residual = (a * &particular - b).norm();
    AffineParametrization {
        particular,
        basis,
        rank,
        residual,
    }
}

/// Builds an orthonormal null-space basis when the thin SVD does not carry
/// enough right singular vectors: the null space is the orthogonal
/// complement of the first `rank` rows of `v_t`.
fn complete_null_basis(v_t: &DMatrix<f64>, rank: usize, n: usize) -> DMatrix<f64> {
    let mut basis_cols: Vec<DVector<f64>> = Vec::with_capacity(n - rank);
    // Take rows of V' beyond the rank that the thin decomposition does carry.
    for j in rank..v_t.nrows() {
        basis_cols.push(v_t.row(j).transpose());
    }
    // Gram-Schmidt the coordinate directions against the range rows and the
    // columns gathered so far.
    let mut e = 0;
    while basis_cols.len() < n - rank && e < n {
        let mut cand = DVector::zeros(n);
        cand[e] = 1.0;
        for j in 0..v_t.nrows() {
            let row = v_t.row(j).transpose();
            let proj = cand.dot(&row);
            cand -= row * proj;
        }
        for col in &basis_cols {
            let proj = cand.dot(col);
            cand -= col * proj;
        }
        let norm = cand.norm();
        if norm > 1e-8 {
            basis_cols.push(cand / norm);
        }
        e += 1;
    }
    let mut basis = DMatrix::zeros(n, basis_cols.len());
    for (j, col) in basis_cols.iter().enumerate() {
        basis.set_column(j, col);
    }
    basis
}

/// Checks linear independence of the constraint gradients active at a
/// point: the equality rows stacked with the active inequality rows must
/// have full row rank.
pub fn check_licq(
    a_eq: &DMatrix<f64>,
    g: &DMatrix<f64>,
    active: &[usize],
    tol: f64,
) -> bool {
    let n = if a_eq.nrows() > 0 { a_eq.ncols() } else { g.ncols() };
    let rows = a_eq.nrows() + active.len();
    if rows == 0 {
        return true;
    }
    if rows > n {
        return false;
    }
    let mut stacked = DMatrix::zeros(rows, n);
    stacked
        .view_mut((0, 0), (a_eq.nrows(), n))
        .copy_from(a_eq);
    for (k, &i) in active.iter().enumerate() {
        stacked.view_mut((a_eq.nrows() + k, 0), (1, n)).copy_from(&g.row(i));
    }
    let sv = stacked.svd(false, false).singular_values;
    let max_sv = sv.iter().cloned().fold(0.0, f64::max);
    if max_sv == 0.0 {
        return false;
    }
    sv.iter().filter(|s| **s > tol * max_sv).count() == rows
}
