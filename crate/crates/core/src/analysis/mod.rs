//! Experiment-level analyses on top of the controllers and the
//! closed-loop simulator: decay-rate fits, cost-decrease audits,
//! noise and disturbance sweeps, and reference constructions that
//! cross-check the optimizers against model knowledge.

pub mod oracle;
pub mod sweeps;

pub use oracle::{candidate_construction, model_based_oracle, CandidateReport, ModelBasedSolution};
pub use sweeps::{continuity_sweep, inherent_robustness_sweep, practical_stability_sweep, ContinuityReport};

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use rand::Rng;

use crate::closed_loop::{ClosedLoopError, ClosedLoopTrace, ControllerKind};
use crate::mpc::{MpcError, Weights};
use crate::plant::{NoiseSpec, PlantError};
use crate::signals::{ExtendedState, SignalError};

#[derive(Debug)]
pub enum AnalysisError {
    Mpc(MpcError),
    ClosedLoop(ClosedLoopError),
    Signal(SignalError),
    Plant(PlantError),
    InvalidInput(String),
    Io(String),
}

impl fmt::Display for AnalysisError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnalysisError::Mpc(e) => write!(f, "controller error: {e}"),
            AnalysisError::ClosedLoop(e) => write!(f, "closed-loop error: {e}"),
            AnalysisError::Signal(e) => write!(f, "signal error: {e}"),
            AnalysisError::Plant(e) => write!(f, "plant error: {e}"),
            AnalysisError::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            AnalysisError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for AnalysisError {}

impl From<MpcError> for AnalysisError {
    fn from(e: MpcError) -> Self {
        AnalysisError::Mpc(e)
    }
}

impl From<ClosedLoopError> for AnalysisError {
    fn from(e: ClosedLoopError) -> Self {
        AnalysisError::ClosedLoop(e)
    }
}

impl From<SignalError> for AnalysisError {
    fn from(e: SignalError) -> Self {
        AnalysisError::Signal(e)
    }
}

impl From<PlantError> for AnalysisError {
    fn from(e: PlantError) -> Self {
        AnalysisError::Plant(e)
    }
}

/// Tolerated deviation from monotonicity in sweep curves: each value may
/// undercut its successor by a relative `ripple` plus an absolute `atol`.
#[derive(Debug, Clone, Copy)]
pub struct MonotoneSpec {
    pub ripple: f64,
    pub atol: f64,
}

impl MonotoneSpec {
    pub fn ripple(ripple: f64) -> Self {
        Self { ripple, atol: 0.0 }
    }

    pub fn with_atol(mut self, atol: f64) -> Self {
        self.atol = atol;
        self
    }

    /// True when the sequence never drops by more than the tolerated
    /// ripple from one entry to the next.
    pub fn check_nondecreasing(&self, values: &[f64]) -> bool {
        values
            .windows(2)
            .all(|w| w[0] <= w[1] * (1.0 + self.ripple) + self.atol)
    }
}

/// One grid point of a sweep: the scalar samples collected across seeds.
/// Runs that failed (infeasible or truncated) contribute to `attempts`
/// but leave no sample.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub parameter: f64,
    pub attempts: usize,
    pub samples: Vec<f64>,
}

impl SweepPoint {
    pub fn mean(&self) -> f64 {
        if self.samples.is_empty() {
            f64::NAN
        } else {
            self.samples.iter().sum::<f64>() / self.samples.len() as f64
        }
    }

    pub fn max(&self) -> f64 {
        self.samples.iter().fold(f64::NAN, |a, &b| a.max(b))
    }

    pub fn all_feasible(&self) -> bool {
        self.samples.len() == self.attempts
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// Name of the swept parameter, used as the CSV column header.
    pub parameter_name: &'static str,
    pub points: Vec<SweepPoint>,
    pub all_feasible: bool,
    /// Whether the per-point means are nondecreasing along the grid,
    /// up to the configured ripple.
    pub monotone_mean: bool,
}

impl SweepReport {
    pub(crate) fn from_points(
        parameter_name: &'static str,
        points: Vec<SweepPoint>,
        monotone: &MonotoneSpec,
    ) -> Self {
        let all_feasible = points.iter().all(SweepPoint::all_feasible);
        let means: Vec<f64> = points.iter().map(SweepPoint::mean).collect();
        let monotone_mean = all_feasible && monotone.check_nondecreasing(&means);
        Self {
            parameter_name,
            points,
            all_feasible,
            monotone_mean,
        }
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(SweepPoint::mean).collect()
    }

    /// Long-format CSV: one row per collected sample.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), AnalysisError> {
        let mut wtr = csv::Writer::from_writer(sink);
        wtr.write_record([self.parameter_name, "sample", "value"])
            .map_err(|e| AnalysisError::Io(e.to_string()))?;
        for point in &self.points {
            for (i, v) in point.samples.iter().enumerate() {
                wtr.write_record([
                    format!("{}", point.parameter),
                    i.to_string(),
                    format!("{v}"),
                ])
                .map_err(|e| AnalysisError::Io(e.to_string()))?;
            }
        }
        wtr.flush().map_err(|e| AnalysisError::Io(e.to_string()))
    }

    /// Per-point aggregates: mean, max, and feasible fraction.
    pub fn write_summary_csv<W: Write>(&self, sink: W) -> Result<(), AnalysisError> {
        let mut wtr = csv::Writer::from_writer(sink);
        wtr.write_record([self.parameter_name, "mean", "max", "feasible_fraction"])
            .map_err(|e| AnalysisError::Io(e.to_string()))?;
        for point in &self.points {
            let frac = if point.attempts == 0 {
                f64::NAN
            } else {
                point.samples.len() as f64 / point.attempts as f64
            };
            wtr.write_record([
                format!("{}", point.parameter),
                format!("{}", point.mean()),
                format!("{}", point.max()),
                format!("{frac}"),
            ])
            .map_err(|e| AnalysisError::Io(e.to_string()))?;
        }
        wtr.flush().map_err(|e| AnalysisError::Io(e.to_string()))
    }

    pub fn to_kv(&self, map: &mut crate::textkv::KvMap, prefix: &str) {
        map.insert(format!("{prefix}.all_feasible").as_str(), self.all_feasible);
        map.insert(format!("{prefix}.monotone_mean").as_str(), self.monotone_mean);
        for point in &self.points {
            let key = format!("{prefix}.mean[{}]", point.parameter);
            map.insert(key.as_str(), point.mean());
        }
    }
}

/// Result of fitting `norm_t ~ c * rate^t` by least squares on the log.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit {
    /// Fitted per-step contraction factor.
    pub rate: f64,
    /// Fitted value at step zero.
    pub initial: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: f64,
    /// Number of points used.
    pub samples: usize,
}

/// Fits a geometric decay to the leading segment of a norm sequence.
/// Fitting stops at the first entry at or below `floor`, where rounding
/// noise takes over and the log model stops being meaningful.
pub fn fit_decay_rate(norms: &[f64], floor: f64) -> Result<DecayFit, AnalysisError> {
    if floor <= 0.0 {
        return Err(AnalysisError::InvalidInput("floor must be positive".into()));
    }
    let logs: Vec<f64> = norms
        .iter()
        .take_while(|&&v| v > floor)
        .map(|&v| v.ln())
        .collect();
    let k = logs.len();
    if k < 3 {
        return Err(AnalysisError::InvalidInput(format!(
            "only {k} samples above the floor; need at least 3"
        )));
    }
    let tbar = (k - 1) as f64 / 2.0;
    let ybar = logs.iter().sum::<f64>() / k as f64;
    let mut stt = 0.0;
    let mut sty = 0.0;
    for (t, &y) in logs.iter().enumerate() {
        let dt = t as f64 - tbar;
        stt += dt * dt;
        sty += dt * (y - ybar);
    }
    let slope = sty / stt;
    let intercept = ybar - slope * tbar;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (t, &y) in logs.iter().enumerate() {
        let fit = intercept + slope * t as f64;
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - ybar) * (y - ybar);
    }
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(DecayFit {
        rate: slope.exp(),
        initial: intercept.exp(),
        r_squared,
        samples: k,
    })
}

/// Per-step certificate margins from a noise-free run: the optimal cost
/// must fall by at least the incurred stage cost at every step, so each
/// margin should be nonpositive up to solver accuracy.
#[derive(Debug, Clone)]
pub struct CostDecreaseReport {
    pub margins: Vec<f64>,
    pub max_margin: f64,
}

pub fn cost_decrease_audit(
    trace: &ClosedLoopTrace,
    weights: &Weights,
) -> Result<CostDecreaseReport, AnalysisError> {
    if trace.scheme != ControllerKind::Nominal {
        return Err(AnalysisError::InvalidInput(
            "cost-decrease audit applies to the exact-data controller".into(),
        ));
    }
    if trace.multi_step != 1 {
        return Err(AnalysisError::InvalidInput(
            "cost-decrease audit needs a solve at every step".into(),
        ));
    }
    let clean = |b: Option<f64>| b.unwrap_or(0.0) == 0.0;
    if !clean(trace.data_noise_bound)
        || !clean(trace.measurement_noise_bound)
        || !clean(trace.disturbance_bound)
    {
        return Err(AnalysisError::InvalidInput(
            "cost-decrease audit needs a noise-free, undisturbed run".into(),
        ));
    }
    if !trace.feasible_throughout || trace.records.len() < 2 {
        return Err(AnalysisError::InvalidInput(
            "cost-decrease audit needs at least two feasible steps".into(),
        ));
    }
    let mut margins = Vec::with_capacity(trace.records.len() - 1);
    for pair in trace.records.windows(2) {
        let stage = weights.input_cost(&pair[0].applied_input)
            + weights.output_cost(&pair[0].true_output);
        margins.push(pair[1].cost - pair[0].cost + stage);
    }
    let max_margin = margins.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    Ok(CostDecreaseReport { margins, max_margin })
}

/// Returns a copy of the history window with measurement noise added to
/// its outputs, as a controller would see it online.
pub fn perturb_initial_outputs<R: Rng>(
    init: &ExtendedState,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<ExtendedState, AnalysisError> {
    let p = init.output_dim();
    let noisy: Vec<DVector<f64>> = init
        .output_window()
        .iter()
        .map(|y| y + spec.sample(p, rng))
        .collect();
    Ok(ExtendedState::from_histories(
        &init.input_window(),
        &noisy,
        init.order_bound(),
    )?)
}

pub(crate) fn flatten(steps: &[DVector<f64>]) -> DVector<f64> {
    let total = steps.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(total);
    let mut at = 0;
    for v in steps {
        out.rows_mut(at, v.len()).copy_from(v);
        at += v.len();
    }
    out
}
