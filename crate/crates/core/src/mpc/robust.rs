//! Receding-horizon control from noisy data.
//!
//! The prediction reuses the Hankel-span idea but must cope with output
//! measurements corrupted by bounded noise, both in the recorded data and
//! in the initialization window. A slack variable absorbs the mismatch
//! between the noisy output Hankel combination and the predicted outputs,
//! and two regularizers keep the combination vector and the slack small:
//! the combination weight grows with the noise bound while the slack
//! weight grows as the noise bound shrinks. With a zero noise bound the
//! scheme reduces to the exact one and is delegated to it.

use nalgebra::{DMatrix, DVector};

use crate::qp::{self, QuadraticProgram, SolverOptions};
use crate::signals::{
    build_hankel, is_persistently_exciting, ExtendedState, PeReport, TrajectoryData,
    DEFAULT_RANK_TOL,
};

use super::nominal::{self, NominalMpcConfig};
use super::{MpcError, MpcSolution, Polytope, Weights, WindowLayout};

#[derive(Debug, Clone)]
pub struct RobustMpcConfig {
    /// Future prediction steps `L`, at least twice the order.
    pub horizon: usize,
    /// Upper bound `n` on the system order.
    pub order: usize,
    pub weights: Weights,
    /// Input constraint set; must contain zero in its interior. Outputs
    /// are unconstrained by design.
    pub input_constraints: Polytope,
    /// Noise bound the measurements are assumed to respect.
    pub noise_bound: f64,
    /// Combination-vector regularization strength.
    pub lambda_alpha: f64,
    /// Slack regularization strength.
    pub lambda_sigma: f64,
    /// Noise-bound exponent on the combination regularizer.
    pub beta_alpha: f64,
    /// Noise-bound exponent on the slack regularizer.
    pub beta_sigma: f64,
    pub rank_tol: f64,
    pub solver: SolverOptions,
    pub strict_excitation: bool,
}

impl RobustMpcConfig {
    pub fn new(
        horizon: usize,
        order: usize,
        weights: Weights,
        input_constraints: Polytope,
        noise_bound: f64,
    ) -> Result<Self, MpcError> {
        let cfg = Self {
            horizon,
            order,
            weights,
            input_constraints,
            noise_bound,
            lambda_alpha: 1.0,
            lambda_sigma: 1.0,
            beta_alpha: 0.5,
            beta_sigma: 0.5,
            rank_tol: DEFAULT_RANK_TOL,
            solver: SolverOptions::default(),
            strict_excitation: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), MpcError> {
        if self.order == 0 {
            return Err(MpcError::InvalidConfig("order must be at least 1".into()));
        }
        if self.horizon < 2 * self.order {
            return Err(MpcError::InvalidConfig(format!(
                "horizon {} must be at least twice the order {}",
                self.horizon, self.order
            )));
        }
        if !self.noise_bound.is_finite() || self.noise_bound < 0.0 {
            return Err(MpcError::InvalidConfig("noise bound must be nonnegative".into()));
        }
        if self.lambda_alpha <= 0.0 || self.lambda_sigma <= 0.0 {
            return Err(MpcError::InvalidConfig(
                "regularization strengths must be positive".into(),
            ));
        }
        if self.beta_alpha < 0.0 || self.beta_sigma < 0.0 {
            return Err(MpcError::InvalidConfig("exponents must be nonnegative".into()));
        }
        if self.beta_alpha + self.beta_sigma >= 2.0 {
            return Err(MpcError::InvalidConfig(format!(
                "exponent sum {} must stay below 2",
                self.beta_alpha + self.beta_sigma
            )));
        }
        if !self.input_constraints.contains_origin_interior() {
            return Err(MpcError::InvalidConfig(
                "input constraint set must contain zero in its interior".into(),
            ));
        }
        Ok(())
    }

    /// Effective combination regularizer `lambda_alpha * bound^beta_alpha`.
    pub fn alpha_weight(&self) -> f64 {
        self.lambda_alpha * self.noise_bound.powf(self.beta_alpha)
    }

    /// Effective slack regularizer `lambda_sigma / bound^beta_sigma`.
    pub fn slack_weight(&self) -> f64 {
        self.lambda_sigma / self.noise_bound.powf(self.beta_sigma)
    }
}

/// The assembled program. Decision variables are the combination vector
/// followed by the predicted output window; planned inputs and the slack
/// are linear images of them.
#[derive(Debug, Clone)]
pub struct RobustAssembly {
    pub qp: QuadraticProgram,
    pub layout: WindowLayout,
    /// Input Hankel matrix of the prediction depth.
    pub h_u: DMatrix<f64>,
    /// Noisy output Hankel matrix of the prediction depth.
    pub h_y: DMatrix<f64>,
    pub num_alpha: usize,
    pub excitation: PeReport,
}

impl RobustAssembly {
    pub fn split(&self, z: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            z.rows(0, self.num_alpha).into_owned(),
            z.rows(self.num_alpha, self.layout.output_dim * self.layout.steps())
                .into_owned(),
        )
    }

    pub fn stack(&self, alpha: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.qp.num_vars());
        z.view_mut((0, 0), (alpha.len(), 1)).copy_from(alpha);
        z.view_mut((alpha.len(), 0), (y.len(), 1)).copy_from(y);
        z
    }

    /// Input window realized by a combination vector.
    pub fn input_window(&self, alpha: &DVector<f64>) -> DVector<f64> {
        &self.h_u * alpha
    }

    /// Slack implied by a combination vector and output window.
    pub fn slack(&self, alpha: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.h_y * alpha - y
    }

    /// Full objective value of a candidate point.
    pub fn objective(&self, alpha: &DVector<f64>, y: &DVector<f64>) -> f64 {
        self.qp.objective(&self.stack(alpha, y))
    }

    /// Whether a candidate point satisfies all constraints.
    pub fn is_feasible(&self, alpha: &DVector<f64>, y: &DVector<f64>, tol: f64) -> bool {
        let z = self.stack(alpha, y);
        let eq = (&self.qp.a_eq * &z - &self.qp.b_eq).amax();
        let ineq = if self.qp.num_inequalities() > 0 {
            (&self.qp.g * &z - &self.qp.h).iter().cloned().fold(0.0, f64::max)
        } else {
            0.0
        };
        eq <= tol && ineq <= tol
    }

    /// Smallest eigenvalue of the objective Hessian on the equality null
    /// space; see the matching accessor on the exact-data assembly.
    pub fn reduced_hessian_min_eigenvalue(&self) -> f64 {
        nominal::reduced_min_eigenvalue(&self.qp)
    }
}

/// Builds the program for noisy data. Requires a strictly positive noise
/// bound; a zero bound is handled by [`solve_robust`] through delegation.
pub fn assemble_robust(
    data: &TrajectoryData,
    init: &ExtendedState,
    cfg: &RobustMpcConfig,
) -> Result<RobustAssembly, MpcError> {
    cfg.validate()?;
    if cfg.noise_bound <= 0.0 {
        return Err(MpcError::InvalidConfig(
            "assembly requires a positive noise bound".into(),
        ));
    }
    let m = data.input_dim();
    let p = data.output_dim();
    if init.input_dim() != m || init.output_dim() != p {
        return Err(MpcError::Dimension(
            "initial window dimensions differ from data".into(),
        ));
    }
    if init.order_bound() != cfg.order {
        return Err(MpcError::Dimension(format!(
            "initial window spans {} steps, configuration expects {}",
            init.order_bound(),
            cfg.order
        )));
    }
    if cfg.input_constraints.dim() != m {
        return Err(MpcError::Dimension("input constraint dimension".into()));
    }
    if cfg.weights.r().nrows() != m || cfg.weights.q().nrows() != p {
        return Err(MpcError::Dimension("weight dimensions differ from data".into()));
    }

    let layout = WindowLayout {
        input_dim: m,
        output_dim: p,
        horizon: cfg.horizon,
        order: cfg.order,
    };
    let depth = layout.steps();

    let input_pe = is_persistently_exciting(data.inputs(), depth, cfg.rank_tol)?;
    if !input_pe.satisfied {
        return Err(MpcError::DataNotExciting {
            order: depth,
            rank: input_pe.rank,
            required: input_pe.required_rank,
        });
    }
    let excitation = is_persistently_exciting(data.inputs(), depth + cfg.order, cfg.rank_tol)?;
    if cfg.strict_excitation && !excitation.satisfied {
        return Err(MpcError::DataNotExciting {
            order: depth + cfg.order,
            rank: excitation.rank,
            required: excitation.required_rank,
        });
    }

    let h_u = build_hankel(data.inputs(), depth)?.entries().clone();
    let h_y = build_hankel(data.outputs(), depth)?.entries().clone();
    let num_alpha = h_u.ncols();
    let ny = p * depth;
    let dim = num_alpha + ny;
    let mu = cfg.slack_weight();
    let alpha_reg = cfg.alpha_weight();

    // Future input rows of the input Hankel matrix, weighted by R.
    let h_u_future = h_u.rows(m * cfg.order, m * cfg.horizon).into_owned();
    let mut r_bar = DMatrix::zeros(m * cfg.horizon, m * cfg.horizon);
    for k in 0..cfg.horizon {
        r_bar
            .view_mut((k * m, k * m), (m, m))
            .copy_from(cfg.weights.r());
    }

    let mut p_mat = DMatrix::zeros(dim, dim);
    {
        let mut aa = h_u_future.tr_mul(&(&r_bar * &h_u_future));
        aa += h_y.tr_mul(&h_y) * mu;
        for i in 0..num_alpha {
            aa[(i, i)] += alpha_reg;
        }
        p_mat
            .view_mut((0, 0), (num_alpha, num_alpha))
            .copy_from(&(aa * 2.0));
    }
    {
        let mut yy = DMatrix::identity(ny, ny) * mu;
        for j in cfg.order..depth {
            yy.view_mut((j * p, j * p), (p, p))
                .copy_from(&(cfg.weights.q() + DMatrix::identity(p, p) * mu));
        }
        p_mat.view_mut((num_alpha, num_alpha), (ny, ny)).copy_from(&(yy * 2.0));
    }
    {
        let cross = h_y.transpose() * (-2.0 * mu);
        p_mat.view_mut((0, num_alpha), (num_alpha, ny)).copy_from(&cross);
        p_mat
            .view_mut((num_alpha, 0), (ny, num_alpha))
            .copy_from(&cross.transpose());
    }
    let p_mat = (&p_mat + p_mat.transpose()) * 0.5;
    let q_vec = DVector::zeros(dim);

    // Equalities: past inputs through the Hankel rows, past outputs on
    // the output variables directly, and both windows zero at the end.
    let eq_rows = 2 * (m + p) * cfg.order;
    let mut a_eq = DMatrix::zeros(eq_rows, dim);
    let mut b_eq = DVector::zeros(eq_rows);
    let mut row = 0;
    for j in 0..cfg.order {
        a_eq.view_mut((row, 0), (m, num_alpha))
            .copy_from(&h_u.rows(j * m, m));
        b_eq.view_mut((row, 0), (m, 1))
            .copy_from(&init.u_past().rows(j * m, m));
        row += m;
    }
    for j in 0..cfg.order {
        for i in 0..p {
            a_eq[(row + i, num_alpha + j * p + i)] = 1.0;
        }
        b_eq.view_mut((row, 0), (p, 1))
            .copy_from(&init.y_past().rows(j * p, p));
        row += p;
    }
    for j in depth - cfg.order..depth {
        a_eq.view_mut((row, 0), (m, num_alpha))
            .copy_from(&h_u.rows(j * m, m));
        row += m;
        for i in 0..p {
            a_eq[(row + i, num_alpha + j * p + i)] = 1.0;
        }
        row += p;
    }
    debug_assert_eq!(row, eq_rows);

    // Inequalities: the input set applied at every future step.
    let rows_per_step = cfg.input_constraints.num_halfspaces();
    let mut g_mat = DMatrix::zeros(rows_per_step * cfg.horizon, dim);
    let mut h_vec = DVector::zeros(rows_per_step * cfg.horizon);
    for (k, j) in (cfg.order..depth).enumerate() {
        let block = cfg.input_constraints.g() * h_u.rows(j * m, m);
        g_mat
            .view_mut((k * rows_per_step, 0), (rows_per_step, num_alpha))
            .copy_from(&block);
        h_vec
            .view_mut((k * rows_per_step, 0), (rows_per_step, 1))
            .copy_from(cfg.input_constraints.h());
    }

    let qp = QuadraticProgram::new(p_mat, q_vec, a_eq, b_eq, g_mat, h_vec)?;
    Ok(RobustAssembly {
        qp,
        layout,
        h_u,
        h_y,
        num_alpha,
        excitation,
    })
}

/// Assembles and solves the noisy-data problem. A zero noise bound falls
/// back to the exact scheme with the same constraints and a zero slack.
pub fn solve_robust(
    data: &TrajectoryData,
    init: &ExtendedState,
    cfg: &RobustMpcConfig,
) -> Result<MpcSolution, MpcError> {
    cfg.validate()?;
    if cfg.noise_bound == 0.0 {
        let nominal_cfg = NominalMpcConfig {
            horizon: cfg.horizon,
            order: cfg.order,
            weights: cfg.weights.clone(),
            input_constraints: Some(cfg.input_constraints.clone()),
            output_constraints: None,
            rank_tol: cfg.rank_tol,
            solver: cfg.solver,
            strict_excitation: cfg.strict_excitation,
        };
        let mut sol = nominal::solve_nominal(data, init, &nominal_cfg)?;
        let p = data.output_dim();
        sol.slack = Some(DVector::zeros(p * (cfg.horizon + cfg.order)));
        return Ok(sol);
    }

    let assembly = assemble_robust(data, init, cfg)?;
    let sol = qp::solve(&assembly.qp, &cfg.solver)?;
    let (alpha, y) = assembly.split(&sol.z);
    let slack = assembly.slack(&alpha, &y);
    let u_window = assembly.input_window(&alpha);

    let m = assembly.layout.input_dim;
    let p = assembly.layout.output_dim;
    let inputs = (assembly.layout.order..assembly.layout.steps())
        .map(|j| u_window.rows(j * m, m).into_owned())
        .collect();
    let outputs = (assembly.layout.order..assembly.layout.steps())
        .map(|j| y.rows(j * p, p).into_owned())
        .collect();
    Ok(MpcSolution {
        status: sol.status,
        inputs,
        outputs,
        alpha,
        slack: Some(slack),
        cost: sol.objective,
        kkt: sol.kkt,
        active_set: sol.active_set,
        iterations: sol.iterations,
    })
}
