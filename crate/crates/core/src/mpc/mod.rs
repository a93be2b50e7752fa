//! Predictive control straight from measured trajectory data.
//!
//! Both schemes predict over a window of `n` past steps plus `L` future
//! steps by constraining the window to lie in the span of Hankel-matrix
//! columns built from one recorded trajectory. No state-space model is
//! identified at any point. The nominal scheme
//! ([`nominal::solve_nominal`]) assumes exact data and enforces the
//! prediction exactly; the robust scheme ([`robust::solve_robust`])
//! accepts noisy data, relaxes the output prediction with a slack
//! variable, and regularizes both the combination vector and the slack.

pub mod nominal;
pub mod robust;

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::qp::{KktResiduals, QpError, QpStatus};
use crate::signals::SignalError;

#[derive(Debug)]
pub enum MpcError {
    Signal(SignalError),
    Qp(QpError),
    InvalidConfig(String),
    /// The data input fails the hard excitation requirement: the input
    /// Hankel matrix of the prediction depth must have full row rank.
    DataNotExciting {
        order: usize,
        rank: usize,
        required: usize,
    },
    Dimension(String),
}

impl fmt::Display for MpcError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MpcError::Signal(e) => write!(f, "signal error: {e}"),
            MpcError::Qp(e) => write!(f, "qp error: {e}"),
            MpcError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            MpcError::DataNotExciting {
                order,
                rank,
                required,
            } => write!(
                f,
                "data input not sufficiently exciting: depth-{order} input Hankel matrix has rank {rank}, need {required}"
            ),
            MpcError::Dimension(msg) => write!(f, "dimension error: {msg}"),
        }
    }
}

impl std::error::Error for MpcError {}

impl From<SignalError> for MpcError {
    fn from(e: SignalError) -> Self {
        MpcError::Signal(e)
    }
}

impl From<QpError> for MpcError {
    fn from(e: QpError) -> Self {
        MpcError::Qp(e)
    }
}

/// Convex polytope `{ v : G v <= h }` used for input and output
/// constraint sets.
///
/// [`Polytope::box_bounds`] always yields a compact set. For general
/// half-space descriptions only a necessary compactness condition is
/// checked (full column rank of `G`); boundedness in every direction is
/// the caller's responsibility.
#[derive(Debug, Clone)]
pub struct Polytope {
    g: DMatrix<f64>,
    h: DVector<f64>,
}

impl Polytope {
    pub fn from_halfspaces(g: DMatrix<f64>, h: DVector<f64>) -> Result<Self, MpcError> {
        if g.nrows() != h.len() {
            return Err(MpcError::Dimension(format!(
                "G has {} rows but h has {} entries",
                g.nrows(),
                h.len()
            )));
        }
        if g.nrows() == 0 || g.ncols() == 0 {
            return Err(MpcError::InvalidConfig("empty constraint set".into()));
        }
        let sv = g.clone().svd(false, false).singular_values;
        let max_sv = sv.iter().cloned().fold(0.0, f64::max);
        let rank = sv.iter().filter(|s| **s > 1e-12 * max_sv).count();
        if rank < g.ncols() {
            return Err(MpcError::InvalidConfig(format!(
                "constraint matrix rank {rank} below dimension {}; the set is unbounded",
                g.ncols()
            )));
        }
        Ok(Self { g, h })
    }

    /// Axis-aligned box `lower <= v <= upper`.
    pub fn box_bounds(lower: &DVector<f64>, upper: &DVector<f64>) -> Result<Self, MpcError> {
        let d = lower.len();
        if upper.len() != d || d == 0 {
            return Err(MpcError::Dimension("bound dimensions differ or zero".into()));
        }
        for i in 0..d {
            if !lower[i].is_finite() || !upper[i].is_finite() || lower[i] > upper[i] {
                return Err(MpcError::InvalidConfig(format!(
                    "bounds [{}, {}] at coordinate {i} invalid",
                    lower[i], upper[i]
                )));
            }
        }
        let mut g = DMatrix::zeros(2 * d, d);
        let mut h = DVector::zeros(2 * d);
        for i in 0..d {
            g[(i, i)] = 1.0;
            h[i] = upper[i];
            g[(d + i, i)] = -1.0;
            h[d + i] = -lower[i];
        }
        Ok(Self { g, h })
    }

    /// Symmetric box `|v_i| <= bound`.
    pub fn symmetric_box(dim: usize, bound: f64) -> Result<Self, MpcError> {
        let b = DVector::from_element(dim, bound);
        Polytope::box_bounds(&(-b.clone()), &b)
    }

    pub fn dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn num_halfspaces(&self) -> usize {
        self.g.nrows()
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        (&self.g * v - &self.h).iter().all(|s| *s <= tol)
    }

    /// Whether zero lies strictly inside the set.
    pub fn contains_origin_interior(&self) -> bool {
        self.h.iter().all(|hi| *hi > 0.0)
    }
}

/// Stage cost weights: `Q` on outputs and `R` on inputs, both symmetric
/// positive definite.
#[derive(Debug, Clone)]
pub struct Weights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl Weights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, MpcError> {
        check_spd(&q, "Q")?;
        check_spd(&r, "R")?;
        Ok(Self { q, r })
    }

    pub fn identity(input_dim: usize, output_dim: usize) -> Self {
        Self {
            q: DMatrix::identity(output_dim, output_dim),
            r: DMatrix::identity(input_dim, input_dim),
        }
    }

    pub fn diagonal(q_diag: &[f64], r_diag: &[f64]) -> Result<Self, MpcError> {
        Weights::new(
            DMatrix::from_diagonal(&DVector::from_row_slice(q_diag)),
            DMatrix::from_diagonal(&DVector::from_row_slice(r_diag)),
        )
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn output_cost(&self, y: &DVector<f64>) -> f64 {
        (&self.q * y).dot(y)
    }

    pub fn input_cost(&self, u: &DVector<f64>) -> f64 {
        (&self.r * u).dot(u)
    }

    /// Smallest eigenvalue of `Q`, used in stability margins.
    pub fn q_min_eigenvalue(&self) -> f64 {
        nalgebra::SymmetricEigen::new(self.q.clone())
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_spd(mat: &DMatrix<f64>, name: &str) -> Result<(), MpcError> {
    if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
        return Err(MpcError::Dimension(format!(
            "{name} must be square and nonempty, got {}x{}",
            mat.nrows(),
            mat.ncols()
        )));
    }
    let asym = (mat - mat.transpose()).amax();
    if asym > 1e-12 * mat.amax().max(1.0) {
        return Err(MpcError::InvalidConfig(format!("{name} is not symmetric")));
    }
    if Cholesky::new(mat.clone()).is_none() {
        return Err(MpcError::InvalidConfig(format!(
            "{name} is not positive definite"
        )));
    }
    Ok(())
}

/// Index map for a stacked prediction-window vector: all inputs first,
/// then all outputs, each block in increasing time over `order` past
/// steps followed by `horizon` future steps.
#[derive(Debug, Clone, Copy)]
pub struct WindowLayout {
    pub input_dim: usize,
    pub output_dim: usize,
    pub horizon: usize,
    pub order: usize,
}

impl WindowLayout {
    pub fn steps(&self) -> usize {
        self.horizon + self.order
    }

    pub fn dim(&self) -> usize {
        (self.input_dim + self.output_dim) * self.steps()
    }

    /// Row offset of the input block at window step `j` (0 = oldest past
    /// step, `order` = first future step).
    pub fn input_offset(&self, j: usize) -> usize {
        debug_assert!(j < self.steps());
        j * self.input_dim
    }

    /// Row offset of the output block at window step `j`.
    pub fn output_offset(&self, j: usize) -> usize {
        debug_assert!(j < self.steps());
        self.input_dim * self.steps() + j * self.output_dim
    }

    /// Extracts the `horizon` future inputs from a stacked window vector.
    pub fn future_inputs(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        (self.order..self.steps())
            .map(|j| z.rows(self.input_offset(j), self.input_dim).into_owned())
            .collect()
    }

    /// Extracts the `horizon` future outputs from a stacked window vector.
    pub fn future_outputs(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        (self.order..self.steps())
            .map(|j| z.rows(self.output_offset(j), self.output_dim).into_owned())
            .collect()
    }
}

/// Result of one receding-horizon optimization.
#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub status: QpStatus,
    /// Planned inputs over the future horizon.
    pub inputs: Vec<DVector<f64>>,
    /// Predicted outputs over the future horizon.
    pub outputs: Vec<DVector<f64>>,
    /// Hankel-column combination vector realizing the prediction.
    pub alpha: DVector<f64>,
    /// Output slack over the whole window (robust scheme only).
    pub slack: Option<DVector<f64>>,
    /// Optimal objective value of the underlying program.
    pub cost: f64,
    pub kkt: KktResiduals,
    pub active_set: Vec<usize>,
    pub iterations: usize,
}

impl MpcSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    pub fn first_input(&self) -> &DVector<f64> {
        &self.inputs[0]
    }

    /// Sum of stage costs over the future horizon, excluding any
    /// regularization terms.
    pub fn tracking_cost(&self, weights: &Weights) -> f64 {
        self.inputs
            .iter()
            .map(|u| weights.input_cost(u))
            .chain(self.outputs.iter().map(|y| weights.output_cost(y)))
            .sum()
    }
}
