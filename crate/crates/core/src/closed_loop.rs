//! Closed-loop simulation: a plant in feedback with either data-driven
//! controller, with optional measurement noise and input disturbances.
//!
//! Time starts at zero; the controller needs a filled history window, so
//! the loop first drives the plant open loop for `order` warmup steps
//! (zero inputs unless configured otherwise). Controllers may be re-run
//! every step or every `multi_step` steps with the intermediate plan
//! entries applied in sequence.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::mpc::nominal::{solve_nominal, NominalMpcConfig};
use crate::mpc::robust::{solve_robust, RobustMpcConfig};
use crate::mpc::{MpcError, MpcSolution, Weights};
use crate::plant::{NoiseKind, NoiseSpec, PlantError, StateSpaceModel};
use crate::qp::QpStatus;
use crate::signals::{ExtendedState, SignalError, TrajectoryData};

#[derive(Debug)]
pub enum ClosedLoopError {
    Mpc(MpcError),
    Plant(PlantError),
    Signal(SignalError),
    InvalidConfig(String),
    Io(String),
}

impl fmt::Display for ClosedLoopError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClosedLoopError::Mpc(e) => write!(f, "controller error: {e}"),
            ClosedLoopError::Plant(e) => write!(f, "plant error: {e}"),
            ClosedLoopError::Signal(e) => write!(f, "signal error: {e}"),
            ClosedLoopError::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            ClosedLoopError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for ClosedLoopError {}

impl From<MpcError> for ClosedLoopError {
    fn from(e: MpcError) -> Self {
        ClosedLoopError::Mpc(e)
    }
}

impl From<PlantError> for ClosedLoopError {
    fn from(e: PlantError) -> Self {
        ClosedLoopError::Plant(e)
    }
}

impl From<SignalError> for ClosedLoopError {
    fn from(e: SignalError) -> Self {
        ClosedLoopError::Signal(e)
    }
}

/// Which optimization runs inside the loop.
#[derive(Debug, Clone)]
pub enum ControllerConfig {
    Nominal(NominalMpcConfig),
    Robust(RobustMpcConfig),
}

impl ControllerConfig {
    pub fn order(&self) -> usize {
        match self {
            ControllerConfig::Nominal(c) => c.order,
            ControllerConfig::Robust(c) => c.order,
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            ControllerConfig::Nominal(c) => c.horizon,
            ControllerConfig::Robust(c) => c.horizon,
        }
    }

    pub fn weights(&self) -> &Weights {
        match self {
            ControllerConfig::Nominal(c) => &c.weights,
            ControllerConfig::Robust(c) => &c.weights,
        }
    }

    pub fn kind(&self) -> ControllerKind {
        match self {
            ControllerConfig::Nominal(_) => ControllerKind::Nominal,
            ControllerConfig::Robust(_) => ControllerKind::Robust,
        }
    }

    fn solve(
        &self,
        data: &TrajectoryData,
        init: &ExtendedState,
    ) -> Result<MpcSolution, MpcError> {
        match self {
            ControllerConfig::Nominal(c) => solve_nominal(data, init, c),
            ControllerConfig::Robust(c) => solve_robust(data, init, c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Nominal,
    Robust,
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerKind::Nominal => write!(f, "nominal"),
            ControllerKind::Robust => write!(f, "robust"),
        }
    }
}

/// Additive input disturbance, bounded in Euclidean norm per step.
#[derive(Debug, Clone)]
pub enum DisturbanceSpec {
    Random {
        bound: f64,
        kind: NoiseKind,
        seed: u64,
    },
    Sequence {
        bound: f64,
        values: Vec<DVector<f64>>,
    },
}

impl DisturbanceSpec {
    pub fn bound(&self) -> f64 {
        match self {
            DisturbanceSpec::Random { bound, .. } => *bound,
            DisturbanceSpec::Sequence { bound, .. } => *bound,
        }
    }

    fn validate(&self, input_dim: usize, steps: usize) -> Result<(), ClosedLoopError> {
        if self.bound() < 0.0 {
            return Err(ClosedLoopError::InvalidConfig(
                "disturbance bound must be nonnegative".into(),
            ));
        }
        if let DisturbanceSpec::Sequence { bound, values } = self {
            if values.len() < steps {
                return Err(ClosedLoopError::InvalidConfig(format!(
                    "disturbance sequence has {} entries for {steps} steps",
                    values.len()
                )));
            }
            for (t, d) in values.iter().enumerate() {
                if d.len() != input_dim {
                    return Err(ClosedLoopError::InvalidConfig(format!(
                        "disturbance at step {t} has dimension {}",
                        d.len()
                    )));
                }
                if d.norm() > *bound + 1e-12 {
                    return Err(ClosedLoopError::InvalidConfig(format!(
                        "disturbance at step {t} exceeds the bound {bound}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoopConfig {
    /// Number of closed-loop steps to record.
    pub steps: usize,
    /// Solve cadence: 1 re-solves every step, `order` applies whole
    /// plan prefixes between solves.
    pub multi_step: usize,
    /// Plant state at the start of the warmup phase.
    pub initial_state: DVector<f64>,
    /// Inputs driven during the `order` warmup steps; zeros by default.
    pub warmup_inputs: Option<Vec<DVector<f64>>>,
    /// Measurement noise applied to every output the controller sees.
    pub measurement_noise: Option<NoiseSpec>,
    /// Seed for the online measurement-noise stream.
    pub noise_seed: u64,
    /// Additive disturbance on the applied inputs.
    pub disturbance: Option<DisturbanceSpec>,
}

impl ClosedLoopConfig {
    pub fn new(steps: usize, initial_state: DVector<f64>) -> Self {
        Self {
            steps,
            multi_step: 1,
            initial_state,
            warmup_inputs: None,
            measurement_noise: None,
            noise_seed: 0,
            disturbance: None,
        }
    }
}

/// One recorded closed-loop step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub t: usize,
    /// Input planned by the controller for this step.
    pub planned_input: DVector<f64>,
    /// Input actually applied (plan plus disturbance).
    pub applied_input: DVector<f64>,
    pub true_output: DVector<f64>,
    pub measured_output: DVector<f64>,
    /// Optimal cost of the solve governing this step.
    pub cost: f64,
    /// Whether a fresh optimization ran at this step.
    pub solved: bool,
    pub status: QpStatus,
    /// Norm of the history window the governing solve started from.
    pub xi_norm: f64,
}

/// Full provenance-carrying record of one closed-loop run.
#[derive(Debug, Clone)]
pub struct ClosedLoopTrace {
    pub records: Vec<StepRecord>,
    /// True plant states at each recorded step.
    pub states: Vec<DVector<f64>>,
    pub feasible_throughout: bool,
    /// Step and status of the terminating failed solve, if any.
    pub failure: Option<(usize, QpStatus)>,
    pub scheme: ControllerKind,
    pub multi_step: usize,
    pub data_noise_bound: Option<f64>,
    pub measurement_noise_bound: Option<f64>,
    pub disturbance_bound: Option<f64>,
}

impl ClosedLoopTrace {
    /// Largest history-window norm over the final fifth of the records.
    pub fn tail_max_xi_norm(&self) -> f64 {
        let len = self.records.len();
        if len == 0 {
            return f64::NAN;
        }
        let tail_start = len - (len / 5).max(1);
        self.records[tail_start..]
            .iter()
            .map(|r| r.xi_norm)
            .fold(0.0, f64::max)
    }

    pub fn final_xi_norm(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.xi_norm)
    }

    pub fn summary(&self, weights: &Weights) -> TraceSummary {
        let total_stage_cost = self
            .records
            .iter()
            .map(|r| weights.input_cost(&r.applied_input) + weights.output_cost(&r.true_output))
            .sum();
        TraceSummary {
            steps_recorded: self.records.len(),
            feasible_throughout: self.feasible_throughout,
            final_xi_norm: self.final_xi_norm(),
            max_xi_norm: self.records.iter().map(|r| r.xi_norm).fold(0.0, f64::max),
            tail_max_xi_norm: self.tail_max_xi_norm(),
            total_stage_cost,
        }
    }

    /// Writes the trace as CSV. Vector quantities get one column per
    /// component. Rows depend only on the run, so repeated runs with the
    /// same seeds serialize byte-identically.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), ClosedLoopError> {
        let mut wtr = csv::Writer::from_writer(sink);
        let (m, p) = match self.records.first() {
            Some(r) => (r.planned_input.len(), r.true_output.len()),
            None => (0, 0),
        };
        let mut header = vec!["t".to_string()];
        for j in 0..m {
            header.push(format!("u_planned_{j}"));
        }
        for j in 0..m {
            header.push(format!("u_applied_{j}"));
        }
        for j in 0..p {
            header.push(format!("y_true_{j}"));
        }
        for j in 0..p {
            header.push(format!("y_measured_{j}"));
        }
        header.push("cost".into());
        header.push("solved".into());
        header.push("status".into());
        header.push("xi_norm".into());
        wtr.write_record(&header)
            .map_err(|e| ClosedLoopError::Io(e.to_string()))?;
        for r in &self.records {
            let mut rec = vec![r.t.to_string()];
            for v in r.planned_input.iter() {
                rec.push(format!("{v}"));
            }
            for v in r.applied_input.iter() {
                rec.push(format!("{v}"));
            }
            for v in r.true_output.iter() {
                rec.push(format!("{v}"));
            }
            for v in r.measured_output.iter() {
                rec.push(format!("{v}"));
            }
            rec.push(format!("{}", r.cost));
            rec.push(r.solved.to_string());
            rec.push(r.status.to_string());
            rec.push(format!("{}", r.xi_norm));
            wtr.write_record(&rec)
                .map_err(|e| ClosedLoopError::Io(e.to_string()))?;
        }
        wtr.flush().map_err(|e| ClosedLoopError::Io(e.to_string()))
    }
}

/// Aggregates of one run, serializable as flat key-value text.
#[derive(Debug, Clone)]
pub struct TraceSummary {
    pub steps_recorded: usize,
    pub feasible_throughout: bool,
    pub final_xi_norm: f64,
    pub max_xi_norm: f64,
    pub tail_max_xi_norm: f64,
    pub total_stage_cost: f64,
}

impl TraceSummary {
    pub fn to_kv(&self, map: &mut crate::textkv::KvMap, prefix: &str) {
        map.insert(format!("{prefix}.steps").as_str(), self.steps_recorded);
        map.insert(
            format!("{prefix}.feasible_throughout").as_str(),
            self.feasible_throughout,
        );
        map.insert(format!("{prefix}.final_xi_norm").as_str(), self.final_xi_norm);
        map.insert(format!("{prefix}.max_xi_norm").as_str(), self.max_xi_norm);
        map.insert(
            format!("{prefix}.tail_max_xi_norm").as_str(),
            self.tail_max_xi_norm,
        );
        map.insert(
            format!("{prefix}.total_stage_cost").as_str(),
            self.total_stage_cost,
        );
    }
}

/// Runs the plant in feedback with the controller for the configured
/// number of steps. A failed solve ends the run early with
/// `feasible_throughout` cleared; structural errors abort instead.
pub fn run_closed_loop(
    model: &StateSpaceModel,
    data: &TrajectoryData,
    controller: &ControllerConfig,
    cfg: &ClosedLoopConfig,
) -> Result<ClosedLoopTrace, ClosedLoopError> {
    let m = model.input_dim();
    let p = model.output_dim();
    let n = controller.order();
    if data.input_dim() != m || data.output_dim() != p {
        return Err(ClosedLoopError::InvalidConfig(
            "data dimensions differ from the plant".into(),
        ));
    }
    if cfg.steps == 0 {
        return Err(ClosedLoopError::InvalidConfig("steps must be positive".into()));
    }
    if cfg.multi_step == 0 || cfg.multi_step > controller.horizon() {
        return Err(ClosedLoopError::InvalidConfig(format!(
            "multi_step {} must lie in [1, horizon]",
            cfg.multi_step
        )));
    }
    if cfg.initial_state.len() != model.state_dim() {
        return Err(ClosedLoopError::InvalidConfig(
            "initial state dimension differs from the plant".into(),
        ));
    }
    if let Some(d) = &cfg.disturbance {
        d.validate(m, cfg.steps)?;
    }
    let warmup: Vec<DVector<f64>> = match &cfg.warmup_inputs {
        Some(w) => {
            if w.len() != n || w.iter().any(|u| u.len() != m) {
                return Err(ClosedLoopError::InvalidConfig(format!(
                    "warmup must provide {n} inputs of dimension {m}"
                )));
            }
            w.clone()
        }
        None => vec![DVector::zeros(m); n],
    };

    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
    let mut dist_rng = match &cfg.disturbance {
        Some(DisturbanceSpec::Random { seed, .. }) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let sample_noise = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        match &cfg.measurement_noise {
            Some(spec) => spec.sample(p, rng),
            None => DVector::zeros(p),
        }
    };

    // Warmup phase: fill the history window.
    let mut x = cfg.initial_state.clone();
    let mut u_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    for u in &warmup {
        let (y, x_next) = model.step(&x, u);
        u_hist.push(u.clone());
        y_hist.push(&y + sample_noise(&mut noise_rng));
        x = x_next;
    }

    let mut records = Vec::with_capacity(cfg.steps);
    let mut states = Vec::with_capacity(cfg.steps);
    let mut feasible_throughout = true;
    let mut failure = None;
    let mut plan: Option<MpcSolution> = None;

    for t in 0..cfg.steps {
        let phase = t % cfg.multi_step;
        let xi = ExtendedState::from_histories(&u_hist, &y_hist, n)?;
        if phase == 0 {
            let sol = controller.solve(data, &xi)?;
            if sol.status != QpStatus::Optimal {
                feasible_throughout = false;
                failure = Some((t, sol.status));
                break;
            }
            plan = Some(sol);
        }
        let sol = plan.as_ref().expect("plan set at phase zero");
        let planned = sol.inputs[phase].clone();
        let disturbance = match &cfg.disturbance {
            None => DVector::zeros(m),
            Some(DisturbanceSpec::Random { bound, kind, .. }) => {
                let spec = NoiseSpec {
                    bound: *bound,
                    kind: *kind,
                };
                spec.sample(m, dist_rng.as_mut().expect("rng for random disturbance"))
            }
            Some(DisturbanceSpec::Sequence { values, .. }) => values[t].clone(),
        };
        let applied = &planned + &disturbance;
        let (y_true, x_next) = model.step(&x, &applied);
        let measured = &y_true + sample_noise(&mut noise_rng);

        records.push(StepRecord {
            t,
            planned_input: planned,
            applied_input: applied.clone(),
            true_output: y_true,
            measured_output: measured.clone(),
            cost: sol.cost,
            solved: phase == 0,
            status: sol.status,
            xi_norm: xi.norm(),
        });
        states.push(x.clone());
        u_hist.push(applied);
        y_hist.push(measured);
        x = x_next;
    }

    Ok(ClosedLoopTrace {
        records,
        states,
        feasible_throughout,
        failure,
        scheme: controller.kind(),
        multi_step: cfg.multi_step,
        data_noise_bound: data.noise_bound(),
        measurement_noise_bound: cfg.measurement_noise.as_ref().map(|s| s.bound),
        disturbance_bound: cfg.disturbance.as_ref().map(|d| d.bound()),
    })
}
