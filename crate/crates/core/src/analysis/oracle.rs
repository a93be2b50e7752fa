//! Reference computations that use model knowledge the controllers do
//! not have: a state-space predictive controller with the same cost and
//! constraints, and an explicit feasible point for the noise-tolerant
//! program assembled from a known optimum plus true states.

use nalgebra::{DMatrix, DVector};

use crate::analysis::{flatten, AnalysisError};
use crate::mpc::nominal::{solve_nominal, NominalMpcConfig};
use crate::mpc::robust::{assemble_robust, solve_robust, RobustMpcConfig};
use crate::mpc::MpcError;
use crate::plant::StateSpaceModel;
use crate::qp::{self, KktResiduals, QpStatus, QuadraticProgram};
use crate::signals::{build_hankel, ExtendedState, TrajectoryData, DEFAULT_RANK_TOL};

/// Solution of the model-based predictive problem, with the internal
/// state trajectory exposed.
#[derive(Debug, Clone)]
pub struct ModelBasedSolution {
    pub status: QpStatus,
    /// States over the whole window, one more entry than steps.
    pub states: Vec<DVector<f64>>,
    /// Inputs over the future steps.
    pub inputs: Vec<DVector<f64>>,
    /// Outputs over the future steps.
    pub outputs: Vec<DVector<f64>>,
    pub cost: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

/// Solves the same predictive problem as the data-driven controller but
/// over explicit state, input, and output variables of a known model.
/// The past window enters as equality constraints, so it must be
/// realizable by the model; with exact data the data-driven optimum
/// matches this one.
pub fn model_based_oracle(
    model: &StateSpaceModel,
    init: &ExtendedState,
    cfg: &NominalMpcConfig,
) -> Result<ModelBasedSolution, AnalysisError> {
    let nx = model.state_dim();
    let m = model.input_dim();
    let p = model.output_dim();
    if init.input_dim() != m || init.output_dim() != p {
        return Err(AnalysisError::InvalidInput(
            "window dimensions differ from the model".into(),
        ));
    }
    if init.order_bound() != cfg.order {
        return Err(AnalysisError::InvalidInput(
            "window depth differs from the configured order".into(),
        ));
    }
    let order = cfg.order;
    let steps = cfg.horizon + order;
    let x_off = |k: usize| k * nx;
    let u_off = |k: usize| nx * (steps + 1) + k * m;
    let y_off = |k: usize| nx * (steps + 1) + m * steps + k * p;
    let dim = nx * (steps + 1) + (m + p) * steps;

    let mut p_mat = DMatrix::zeros(dim, dim);
    for k in order..steps {
        p_mat
            .view_mut((u_off(k), u_off(k)), (m, m))
            .copy_from(&(cfg.weights.r() * 2.0));
        p_mat
            .view_mut((y_off(k), y_off(k)), (p, p))
            .copy_from(&(cfg.weights.q() * 2.0));
    }
    let q_vec = DVector::zeros(dim);

    let eq_rows = (nx + p) * steps + 2 * (m + p) * order;
    let mut a_eq = DMatrix::zeros(eq_rows, dim);
    let mut b_eq = DVector::zeros(eq_rows);
    let mut row = 0;
    for k in 0..steps {
        // x_{k+1} = A x_k + B u_k
        a_eq.view_mut((row, x_off(k)), (nx, nx))
            .copy_from(&(-model.a()));
        a_eq.view_mut((row, u_off(k)), (nx, m))
            .copy_from(&(-model.b()));
        a_eq.view_mut((row, x_off(k + 1)), (nx, nx))
            .copy_from(&DMatrix::identity(nx, nx));
        row += nx;
        // y_k = C x_k + D u_k
        a_eq.view_mut((row, x_off(k)), (p, nx))
            .copy_from(&(-model.c()));
        a_eq.view_mut((row, u_off(k)), (p, m))
            .copy_from(&(-model.d()));
        a_eq.view_mut((row, y_off(k)), (p, p))
            .copy_from(&DMatrix::identity(p, p));
        row += p;
    }
    for k in 0..order {
        a_eq.view_mut((row, u_off(k)), (m, m))
            .copy_from(&DMatrix::identity(m, m));
        b_eq.view_mut((row, 0), (m, 1))
            .copy_from(&init.u_past().rows(k * m, m));
        row += m;
    }
    for k in 0..order {
        a_eq.view_mut((row, y_off(k)), (p, p))
            .copy_from(&DMatrix::identity(p, p));
        b_eq.view_mut((row, 0), (p, 1))
            .copy_from(&init.y_past().rows(k * p, p));
        row += p;
    }
    for k in steps - order..steps {
        a_eq.view_mut((row, u_off(k)), (m, m))
            .copy_from(&DMatrix::identity(m, m));
        row += m;
        a_eq.view_mut((row, y_off(k)), (p, p))
            .copy_from(&DMatrix::identity(p, p));
        row += p;
    }
    debug_assert_eq!(row, eq_rows);

    let ineq_rows = cfg
        .input_constraints
        .as_ref()
        .map_or(0, |s| s.num_halfspaces() * cfg.horizon)
        + cfg
            .output_constraints
            .as_ref()
            .map_or(0, |s| s.num_halfspaces() * cfg.horizon);
    let mut g_mat = DMatrix::zeros(ineq_rows, dim);
    let mut h_vec = DVector::zeros(ineq_rows);
    let mut row = 0;
    if let Some(set) = &cfg.input_constraints {
        for k in order..steps {
            g_mat
                .view_mut((row, u_off(k)), (set.num_halfspaces(), m))
                .copy_from(set.g());
            h_vec
                .view_mut((row, 0), (set.num_halfspaces(), 1))
                .copy_from(set.h());
            row += set.num_halfspaces();
        }
    }
    if let Some(set) = &cfg.output_constraints {
        for k in order..steps {
            g_mat
                .view_mut((row, y_off(k)), (set.num_halfspaces(), p))
                .copy_from(set.g());
            h_vec
                .view_mut((row, 0), (set.num_halfspaces(), 1))
                .copy_from(set.h());
            row += set.num_halfspaces();
        }
    }
    debug_assert_eq!(row, ineq_rows);

    let qp = QuadraticProgram::new(p_mat, q_vec, a_eq, b_eq, g_mat, h_vec)
        .map_err(MpcError::from)?;
    let sol = qp::solve(&qp, &cfg.solver).map_err(MpcError::from)?;
    let states = (0..=steps)
        .map(|k| DVector::from(sol.z.rows(x_off(k), nx)))
        .collect();
    let inputs = (order..steps)
        .map(|k| DVector::from(sol.z.rows(u_off(k), m)))
        .collect();
    let outputs = (order..steps)
        .map(|k| DVector::from(sol.z.rows(y_off(k), p)))
        .collect();
    Ok(ModelBasedSolution {
        status: sol.status,
        states,
        inputs,
        outputs,
        cost: sol.objective,
        kkt: sol.kkt,
        iterations: sol.iterations,
    })
}

/// What came out of assembling and scoring the explicit candidate.
#[derive(Debug, Clone)]
pub struct CandidateReport {
    /// Rank of the input-and-state data matrix.
    pub rank: usize,
    /// Full row rank it needs for the construction to go through.
    pub required_rank: usize,
    pub rank_ok: bool,
    /// How well the fitted combination reproduces the target inputs and
    /// start state; near zero when the rank condition holds.
    pub reproduction_error: f64,
    pub alpha_norm: f64,
    pub sigma_norm: f64,
    /// Whether the candidate satisfies the noise-tolerant program's
    /// constraints to the given tolerance.
    pub feasible: bool,
    pub candidate_objective: f64,
    pub robust_objective: f64,
    pub robust_status: QpStatus,
    pub nominal_objective: f64,
}

/// Builds an explicit feasible point for the noise-tolerant program:
/// take the exact-data optimum, pick a data combination that reproduces
/// its input window together with the true state at the window start,
/// and keep the measured and planned outputs as the output variable.
/// Its objective upper-bounds the solved optimum and approaches the
/// exact-data cost as the noise level shrinks.
///
/// `data_states` are the true states underlying the data samples;
/// `window_start_state` is the true state where the online window began.
#[allow(clippy::too_many_arguments)]
pub fn candidate_construction(
    clean_data: &TrajectoryData,
    noisy_data: &TrajectoryData,
    data_states: &[DVector<f64>],
    clean_init: &ExtendedState,
    noisy_init: &ExtendedState,
    window_start_state: &DVector<f64>,
    cfg: &RobustMpcConfig,
    tol: f64,
) -> Result<CandidateReport, AnalysisError> {
    let m = noisy_data.input_dim();
    let steps = cfg.horizon + cfg.order;
    let nx = window_start_state.len();
    let cols = noisy_data
        .len()
        .checked_sub(steps.saturating_sub(1))
        .filter(|&c| c > 0)
        .ok_or_else(|| AnalysisError::InvalidInput("data shorter than the window".into()))?;
    if data_states.len() < cols {
        return Err(AnalysisError::InvalidInput(format!(
            "need {cols} data states, got {}",
            data_states.len()
        )));
    }
    if data_states.iter().any(|x| x.len() != nx) {
        return Err(AnalysisError::InvalidInput(
            "data state dimension differs from the start state".into(),
        ));
    }

    // Exact-data baseline from the clean window.
    let nominal_cfg = NominalMpcConfig::new(cfg.horizon, cfg.order, cfg.weights.clone())?
        .with_input_constraints(cfg.input_constraints.clone());
    let nominal = solve_nominal(clean_data, clean_init, &nominal_cfg)?;
    if nominal.status != QpStatus::Optimal {
        return Err(AnalysisError::InvalidInput(format!(
            "exact-data baseline ended {}",
            nominal.status
        )));
    }

    // Candidate windows: measured past, planned future.
    let mut u_hat = DVector::zeros(m * steps);
    u_hat
        .rows_mut(0, m * cfg.order)
        .copy_from(noisy_init.u_past());
    u_hat
        .rows_mut(m * cfg.order, m * cfg.horizon)
        .copy_from(&flatten(&nominal.inputs));
    let p_dim = noisy_data.output_dim();
    let mut y_hat = DVector::zeros(p_dim * steps);
    y_hat
        .rows_mut(0, p_dim * cfg.order)
        .copy_from(noisy_init.y_past());
    y_hat
        .rows_mut(p_dim * cfg.order, p_dim * cfg.horizon)
        .copy_from(&flatten(&nominal.outputs));

    // Data matrix pairing input windows with their start states.
    let h_u = build_hankel(noisy_data.inputs(), steps)?;
    let mut h_ux = DMatrix::zeros(m * steps + nx, cols);
    h_ux.view_mut((0, 0), (m * steps, cols))
        .copy_from(h_u.entries());
    for (j, x) in data_states.iter().take(cols).enumerate() {
        h_ux.view_mut((m * steps, j), (nx, 1)).copy_from(x);
    }
    let required_rank = m * steps + nx;
    let svd = h_ux.clone().svd(false, false);
    let sigma_max = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > DEFAULT_RANK_TOL * sigma_max)
        .count();
    let rank_ok = rank == required_rank;

    let mut rhs = DVector::zeros(m * steps + nx);
    rhs.rows_mut(0, m * steps).copy_from(&u_hat);
    rhs.rows_mut(m * steps, nx).copy_from(window_start_state);
    let alpha = qp::pseudoinverse(&h_ux, DEFAULT_RANK_TOL) * &rhs;
    let reproduction_error = (&h_ux * &alpha - &rhs).norm();

    let assembly = assemble_robust(noisy_data, noisy_init, cfg)?;
    let sigma = assembly.slack(&alpha, &y_hat);
    let candidate_objective = assembly.objective(&alpha, &y_hat);
    let feasible = assembly.is_feasible(&alpha, &y_hat, tol);

    let robust = solve_robust(noisy_data, noisy_init, cfg)?;

    Ok(CandidateReport {
        rank,
        required_rank,
        rank_ok,
        reproduction_error,
        alpha_norm: alpha.norm(),
        sigma_norm: sigma.norm(),
        feasible,
        candidate_objective,
        robust_objective: robust.cost,
        robust_status: robust.status,
        nominal_objective: nominal.cost,
    })
}
