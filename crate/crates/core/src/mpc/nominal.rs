//! Receding-horizon control from exact data with terminal equality
//! constraints.
//!
//! The prediction window of `order + horizon` steps is parametrized by
//! the range of the stacked input-output Hankel matrix of the recorded
//! trajectory. The first `order` steps are pinned to the most recent
//! measurements, the final `order` future steps are forced to zero, and
//! the remaining freedom minimizes the quadratic stage cost subject to
//! the input and output constraint sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::qp::{self, QuadraticProgram, SolverOptions};
use crate::signals::{
    build_hankel, is_persistently_exciting, stack_vertical, ExtendedState, PeReport,
    TrajectoryData, DEFAULT_RANK_TOL,
};

use super::{MpcError, MpcSolution, Polytope, Weights, WindowLayout};

#[derive(Debug, Clone)]
pub struct NominalMpcConfig {
    /// Future prediction steps `L`.
    pub horizon: usize,
    /// Upper bound `n` on the system order; also the length of the
    /// initialization and terminal windows.
    pub order: usize,
    pub weights: Weights,
    pub input_constraints: Option<Polytope>,
    pub output_constraints: Option<Polytope>,
    /// Relative tolerance for rank decisions on the Hankel matrix.
    pub rank_tol: f64,
    pub solver: SolverOptions,
    /// Escalates a failed excitation check of order `horizon + 2 * order`
    /// from a recorded diagnostic to a hard error.
    pub strict_excitation: bool,
}

impl NominalMpcConfig {
    pub fn new(horizon: usize, order: usize, weights: Weights) -> Result<Self, MpcError> {
        if order == 0 {
            return Err(MpcError::InvalidConfig("order must be at least 1".into()));
        }
        if horizon < order {
            return Err(MpcError::InvalidConfig(format!(
                "horizon {horizon} shorter than order {order}; the terminal window does not fit"
            )));
        }
        Ok(Self {
            horizon,
            order,
            weights,
            input_constraints: None,
            output_constraints: None,
            rank_tol: DEFAULT_RANK_TOL,
            solver: SolverOptions::default(),
            strict_excitation: false,
        })
    }

    pub fn with_input_constraints(mut self, set: Polytope) -> Self {
        self.input_constraints = Some(set);
        self
    }

    pub fn with_output_constraints(mut self, set: Polytope) -> Self {
        self.output_constraints = Some(set);
        self
    }
}

/// The assembled optimization problem plus everything needed to map a
/// reduced solution back to trajectories.
#[derive(Debug, Clone)]
pub struct NominalAssembly {
    pub qp: QuadraticProgram,
    pub layout: WindowLayout,
    /// Orthonormal basis of the Hankel range; the window vector is
    /// `range_basis * c` for the reduced variable `c`.
    pub range_basis: DMatrix<f64>,
    /// Maps the reduced variable to the minimum-norm combination vector.
    pub alpha_map: DMatrix<f64>,
    /// Numerical rank of the stacked Hankel matrix.
    pub rank: usize,
    /// Excitation diagnostic at order `horizon + 2 * order`.
    pub excitation: PeReport,
}

impl NominalAssembly {
    /// Smallest eigenvalue of the objective Hessian restricted to the
    /// null space of the equality constraints. Positive means the
    /// optimizer is unique.
    pub fn reduced_hessian_min_eigenvalue(&self) -> f64 {
        reduced_min_eigenvalue(&self.qp)
    }
}

pub(crate) fn reduced_min_eigenvalue(qp: &QuadraticProgram) -> f64 {
    let param = qp::null_space_parametrization(&qp.a_eq, &qp.b_eq, DEFAULT_RANK_TOL);
    if param.basis.ncols() == 0 {
        return f64::INFINITY;
    }
    let reduced = param.basis.tr_mul(&(&qp.p * &param.basis));
    let sym = (&reduced + reduced.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        / 2.0
}

/// Builds the quadratic program for the given data, initial window, and
/// configuration without solving it.
pub fn assemble_nominal(
    data: &TrajectoryData,
    init: &ExtendedState,
    cfg: &NominalMpcConfig,
) -> Result<NominalAssembly, MpcError> {
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
    if let Some(set) = &cfg.input_constraints {
        if set.dim() != m {
            return Err(MpcError::Dimension("input constraint dimension".into()));
        }
    }
    if let Some(set) = &cfg.output_constraints {
        if set.dim() != p {
            return Err(MpcError::Dimension("output constraint dimension".into()));
        }
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

    let h_u = build_hankel(data.inputs(), depth)?;
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

    let h_y = build_hankel(data.outputs(), depth)?;
    let stacked = stack_vertical(h_u.entries(), h_y.entries());

    // Orthonormal range parametrization from the singular value
    // decomposition: window = U_r c, alpha = V_r S^-1 c recovers the
    // minimum-norm combination vector.
    let svd = stacked.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank = svd
        .singular_values
        .iter()
        .filter(|s| **s > cfg.rank_tol * max_sv)
        .count();
    if rank == 0 {
        return Err(MpcError::InvalidConfig("data trajectory is zero".into()));
    }
    let u_full = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let range_basis = u_full.columns(0, rank).into_owned();
    let mut alpha_map = DMatrix::zeros(stacked.ncols(), rank);
    for j in 0..rank {
        let col = v_t.row(j).transpose() / svd.singular_values[j];
        alpha_map.set_column(j, &col);
    }

    // Objective: stage costs over the future steps only.
    let mut w = DMatrix::zeros(layout.dim(), layout.dim());
    for j in cfg.order..depth {
        w.view_mut((layout.input_offset(j), layout.input_offset(j)), (m, m))
            .copy_from(cfg.weights.r());
        w.view_mut((layout.output_offset(j), layout.output_offset(j)), (p, p))
            .copy_from(cfg.weights.q());
    }
    let p_mat = {
        let pu = range_basis.tr_mul(&(&w * &range_basis)) * 2.0;
        (&pu + pu.transpose()) * 0.5
    };
    let q_vec = DVector::zeros(rank);

    // Equalities: initialization window and terminal window.
    let eq_rows = 2 * (m + p) * cfg.order;
    let mut a_eq = DMatrix::zeros(eq_rows, rank);
    let mut b_eq = DVector::zeros(eq_rows);
    let mut row = 0;
    for j in 0..cfg.order {
        a_eq.view_mut((row, 0), (m, rank))
            .copy_from(&range_basis.rows(layout.input_offset(j), m));
        b_eq.view_mut((row, 0), (m, 1))
            .copy_from(&init.u_past().rows(j * m, m));
        row += m;
    }
    for j in 0..cfg.order {
        a_eq.view_mut((row, 0), (p, rank))
            .copy_from(&range_basis.rows(layout.output_offset(j), p));
        b_eq.view_mut((row, 0), (p, 1))
            .copy_from(&init.y_past().rows(j * p, p));
        row += p;
    }
    for j in depth - cfg.order..depth {
        a_eq.view_mut((row, 0), (m, rank))
            .copy_from(&range_basis.rows(layout.input_offset(j), m));
        row += m;
        a_eq.view_mut((row, 0), (p, rank))
            .copy_from(&range_basis.rows(layout.output_offset(j), p));
        row += p;
    }
    debug_assert_eq!(row, eq_rows);

    // Inequalities: constraint sets on every future step.
    let ineq_rows = cfg
        .input_constraints
        .as_ref()
        .map_or(0, |s| s.num_halfspaces() * cfg.horizon)
        + cfg
            .output_constraints
            .as_ref()
            .map_or(0, |s| s.num_halfspaces() * cfg.horizon);
    let mut g_mat = DMatrix::zeros(ineq_rows, rank);
    let mut h_vec = DVector::zeros(ineq_rows);
    let mut row = 0;
    if let Some(set) = &cfg.input_constraints {
        for j in cfg.order..depth {
            let block = set.g() * range_basis.rows(layout.input_offset(j), m);
            g_mat
                .view_mut((row, 0), (set.num_halfspaces(), rank))
                .copy_from(&block);
            h_vec
                .view_mut((row, 0), (set.num_halfspaces(), 1))
                .copy_from(set.h());
            row += set.num_halfspaces();
        }
    }
    if let Some(set) = &cfg.output_constraints {
        for j in cfg.order..depth {
            let block = set.g() * range_basis.rows(layout.output_offset(j), p);
            g_mat
                .view_mut((row, 0), (set.num_halfspaces(), rank))
                .copy_from(&block);
            h_vec
                .view_mut((row, 0), (set.num_halfspaces(), 1))
                .copy_from(set.h());
            row += set.num_halfspaces();
        }
    }
    debug_assert_eq!(row, ineq_rows);

    let qp = QuadraticProgram::new(p_mat, q_vec, a_eq, b_eq, g_mat, h_vec)?;
    Ok(NominalAssembly {
        qp,
        layout,
        range_basis,
        alpha_map,
        rank,
        excitation,
    })
}

/// Assembles and solves the receding-horizon problem. Infeasibility and
/// other solver verdicts are reported through the solution status.
pub fn solve_nominal(
    data: &TrajectoryData,
    init: &ExtendedState,
    cfg: &NominalMpcConfig,
) -> Result<MpcSolution, MpcError> {
    let assembly = assemble_nominal(data, init, cfg)?;
    let sol = qp::solve(&assembly.qp, &cfg.solver)?;
    let window = &assembly.range_basis * &sol.z;
    let alpha = &assembly.alpha_map * &sol.z;
    Ok(MpcSolution {
        status: sol.status,
        inputs: assembly.layout.future_inputs(&window),
        outputs: assembly.layout.future_outputs(&window),
        alpha,
        slack: None,
        cost: sol.objective,
        kkt: sol.kkt,
        active_set: sol.active_set,
        iterations: sol.iterations,
    })
}
