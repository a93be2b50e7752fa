//! Discrete-time linear plant models: simulation, excitation, measurement
//! noise, data generation, and the example plants used by the experiments.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::signals::{SignalError, TrajectoryData, DEFAULT_RANK_TOL};
use crate::textkv::{KvMap, TextKvError};

#[derive(Debug)]
pub enum PlantError {
    Dimension(String),
    Signal(SignalError),
    Config(TextKvError),
}

impl fmt::Display for PlantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlantError::Dimension(msg) => write!(f, "dimension error: {msg}"),
            PlantError::Signal(e) => write!(f, "signal error: {e}"),
            PlantError::Config(e) => write!(f, "config error: {e}"),
        }
    }
}

impl std::error::Error for PlantError {}

impl From<SignalError> for PlantError {
    fn from(e: SignalError) -> Self {
        PlantError::Signal(e)
    }
}

impl From<TextKvError> for PlantError {
    fn from(e: TextKvError) -> Self {
        PlantError::Config(e)
    }
}

/// Discrete-time state-space model `x+ = Ax + Bu`, `y = Cx + Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpaceModel {
    /// Validates dimensional consistency only. Minimality is a separate
    /// check ([`StateSpaceModel::is_minimal`]); non-minimal models are
    /// legal to construct and simulate.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, PlantError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(PlantError::Dimension(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(PlantError::Dimension(format!(
                "B has {} rows, expected {n}",
                b.nrows()
            )));
        }
        if c.ncols() != n {
            return Err(PlantError::Dimension(format!(
                "C has {} columns, expected {n}",
                c.ncols()
            )));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(PlantError::Dimension(format!(
                "D must be {}x{}, got {}x{}",
                c.nrows(),
                b.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        if n == 0 || b.ncols() == 0 || c.nrows() == 0 {
            return Err(PlantError::Dimension(
                "state, input, and output dimensions must be positive".into(),
            ));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Output at the current state and input, then the successor state.
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let y = &self.c * x + &self.d * u;
        let x_next = &self.a * x + &self.b * u;
        (y, x_next)
    }

    /// Simulates the input sequence from `x0`. Returns all `N+1` visited
    /// states (including the final one) and the `N` outputs.
    #[allow(clippy::type_complexity)]
    pub fn simulate(
        &self,
        x0: &DVector<f64>,
        inputs: &[DVector<f64>],
    ) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>), PlantError> {
        if x0.len() != self.state_dim() {
            return Err(PlantError::Dimension(format!(
                "initial state has dimension {}, expected {}",
                x0.len(),
                self.state_dim()
            )));
        }
        let mut states = Vec::with_capacity(inputs.len() + 1);
        let mut outputs = Vec::with_capacity(inputs.len());
        let mut x = x0.clone();
        for (t, u) in inputs.iter().enumerate() {
            if u.len() != self.input_dim() {
                return Err(PlantError::Dimension(format!(
                    "input at step {t} has dimension {}, expected {}",
                    u.len(),
                    self.input_dim()
                )));
            }
            let (y, x_next) = self.step(&x, u);
            states.push(x);
            outputs.push(y);
            x = x_next;
        }
        states.push(x);
        Ok((states, outputs))
    }

    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut cols = self.b.clone();
        let mut power = self.b.clone();
        for _ in 1..n {
            power = &self.a * &power;
            let mut next = DMatrix::zeros(n, cols.ncols() + power.ncols());
            next.view_mut((0, 0), (n, cols.ncols())).copy_from(&cols);
            next.view_mut((0, cols.ncols()), (n, power.ncols()))
                .copy_from(&power);
            cols = next;
        }
        cols
    }

    pub fn observability_matrix(&self) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut rows = self.c.clone();
        let mut power = self.c.clone();
        for _ in 1..n {
            power = &power * &self.a;
            let mut next = DMatrix::zeros(rows.nrows() + power.nrows(), n);
            next.view_mut((0, 0), (rows.nrows(), n)).copy_from(&rows);
            next.view_mut((rows.nrows(), 0), (power.nrows(), n))
                .copy_from(&power);
            rows = next;
        }
        rows
    }

    /// Ranks of the controllability and observability matrices.
    pub fn structural_ranks(&self, tol: f64) -> (usize, usize) {
        (
            numerical_rank(&self.controllability_matrix(), tol),
            numerical_rank(&self.observability_matrix(), tol),
        )
    }

    /// Controllable and observable, i.e. the state dimension matches the
    /// system order.
    pub fn is_minimal(&self, tol: f64) -> bool {
        let n = self.state_dim();
        let (ctrb, obsv) = self.structural_ranks(tol);
        ctrb == n && obsv == n
    }

    pub fn spectral_radius(&self) -> f64 {
        self.a
            .complex_eigenvalues()
            .iter()
            .map(|ev| ev.norm())
            .fold(0.0, f64::max)
    }

    /// Writes the model under dotted keys `{prefix}.n`, `{prefix}.a`, ...
    /// Matrices are stored row-major.
    pub fn to_kv(&self, map: &mut KvMap, prefix: &str) {
        map.insert(format!("{prefix}.n").as_str(), self.state_dim());
        map.insert(format!("{prefix}.m").as_str(), self.input_dim());
        map.insert(format!("{prefix}.p").as_str(), self.output_dim());
        for (name, mat) in [("a", &self.a), ("b", &self.b), ("c", &self.c), ("d", &self.d)] {
            let row_major: Vec<f64> = (0..mat.nrows())
                .flat_map(|i| (0..mat.ncols()).map(move |j| (i, j)))
                .map(|(i, j)| mat[(i, j)])
                .collect();
            map.insert_f64_list(format!("{prefix}.{name}").as_str(), &row_major);
        }
    }

    pub fn from_kv(map: &KvMap, prefix: &str) -> Result<Self, PlantError> {
        let n = map.get_usize(&format!("{prefix}.n"))?;
        let m = map.get_usize(&format!("{prefix}.m"))?;
        let p = map.get_usize(&format!("{prefix}.p"))?;
        let read = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>, PlantError> {
            let key = format!("{prefix}.{name}");
            let vals = map.get_f64_list(&key)?;
            if vals.len() != rows * cols {
                return Err(PlantError::Dimension(format!(
                    "`{key}` has {} entries, expected {rows}x{cols}",
                    vals.len()
                )));
            }
            Ok(DMatrix::from_row_slice(rows, cols, &vals))
        };
        StateSpaceModel::new(
            read("a", n, n)?,
            read("b", n, m)?,
            read("c", p, n)?,
            read("d", p, m)?,
        )
    }

    /// Scalar example plant `x+ = 0.5 x + u`, `y = x`.
    pub fn scalar_default() -> Self {
        StateSpaceModel::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 0.0),
        )
        .unwrap()
    }

    /// Double-integrator example plant with position output.
    pub fn double_integrator() -> Self {
        StateSpaceModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::from_element(1, 1, 0.0),
        )
        .unwrap()
    }
}

fn numerical_rank(mat: &DMatrix<f64>, tol: f64) -> usize {
    let sv = mat.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        0
    } else {
        sv.iter().filter(|s| **s > tol * max).count()
    }
}

/// Measurement-noise description: per-step noise vectors with Euclidean
/// norm at most `bound`.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub bound: f64,
    pub kind: NoiseKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Uniform over the closed ball of radius `bound`.
    UniformBall,
    /// Gaussian with standard deviation `bound / 3` per component,
    /// resampled until the norm lies within the ball.
    TruncatedGaussian,
}

impl NoiseSpec {
    pub fn uniform(bound: f64) -> Self {
        Self {
            bound,
            kind: NoiseKind::UniformBall,
        }
    }

    pub fn truncated_gaussian(bound: f64) -> Self {
        Self {
            bound,
            kind: NoiseKind::TruncatedGaussian,
        }
    }

    /// Draws one noise vector of dimension `dim`.
    pub fn sample<R: Rng>(&self, dim: usize, rng: &mut R) -> DVector<f64> {
        if self.bound == 0.0 {
            return DVector::zeros(dim);
        }
        match self.kind {
            NoiseKind::UniformBall => {
                // Direction from a normalized Gaussian, radius from the
                // inverse CDF of the ball's radial distribution.
                let mut dir = DVector::from_fn(dim, |_, _| {
                    StandardNormal.sample(rng)
                });
                let norm = dir.norm();
                if norm == 0.0 {
                    return DVector::zeros(dim);
                }
                dir /= norm;
                let radius = self.bound * rng.random::<f64>().powf(1.0 / dim as f64);
                dir * radius
            }
            NoiseKind::TruncatedGaussian => {
                let sigma = self.bound / 3.0;
                loop {
                    let v = DVector::from_fn(dim, |_, _| {
                        let z: f64 = StandardNormal.sample(rng);
                        sigma * z
                    });
                    if v.norm() <= self.bound {
                        return v;
                    }
                }
            }
        }
    }
}

/// Uniform random excitation in `[-amplitude, amplitude]` per component.
/// Such inputs are persistently exciting of any feasible order with
/// probability one.
pub fn random_excitation<R: Rng>(
    m: usize,
    len: usize,
    amplitude: f64,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    (0..len)
        .map(|_| DVector::from_fn(m, |_, _| amplitude * (2.0 * rng.random::<f64>() - 1.0)))
        .collect()
}

/// Simulates `inputs` from `x0` and packages the result as a trajectory,
/// optionally corrupting the outputs with measurement noise. Noisy
/// trajectories carry their noise-free outputs alongside.
pub fn generate_trajectory<R: Rng>(
    model: &StateSpaceModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    noise: Option<(&NoiseSpec, &mut R)>,
) -> Result<TrajectoryData, PlantError> {
    let (_, outputs) = model.simulate(x0, inputs)?;
    match noise {
        None => Ok(TrajectoryData::new(inputs.to_vec(), outputs)?),
        Some((spec, rng)) => {
            let p = model.output_dim();
            let noisy: Vec<DVector<f64>> = outputs
                .iter()
                .map(|y| y + spec.sample(p, rng))
                .collect();
            Ok(TrajectoryData::new(inputs.to_vec(), noisy)?
                .with_clean_outputs(outputs, spec.bound)?)
        }
    }
}

/// Corrupts the outputs of a noise-free trajectory with fresh
/// measurement noise, keeping the originals as the clean reference.
/// Useful for comparing noise levels on identical excitation.
pub fn add_output_noise<R: Rng>(
    data: &TrajectoryData,
    spec: &NoiseSpec,
    rng: &mut R,
) -> Result<TrajectoryData, PlantError> {
    let p = data.output_dim();
    let clean: Vec<DVector<f64>> = data.outputs().to_vec();
    let noisy: Vec<DVector<f64>> = clean.iter().map(|y| y + spec.sample(p, rng)).collect();
    Ok(TrajectoryData::new(data.inputs().to_vec(), noisy)?
        .with_clean_outputs(clean, spec.bound)?)
}

/// Draws a random minimal (controllable and observable) model with the
/// given dimensions, with spectral radius scaled to at most `radius`.
pub fn random_minimal_system<R: Rng>(
    n: usize,
    m: usize,
    p: usize,
    radius: f64,
    rng: &mut R,
) -> StateSpaceModel {
    loop {
        let mut a = DMatrix::from_fn(n, n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let b = DMatrix::from_fn(n, m, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let c = DMatrix::from_fn(p, n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let d = DMatrix::zeros(p, m);
        let rho = a
            .complex_eigenvalues()
            .iter()
            .map(|ev| ev.norm())
            .fold(0.0, f64::max);
        if rho > radius {
            a *= radius / rho;
        }
        let model = StateSpaceModel::new(a, b, c, d).unwrap();
        if model.is_minimal(DEFAULT_RANK_TOL) {
            return model;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_inputs(values: &[f64]) -> Vec<DVector<f64>> {
        values.iter().map(|v| DVector::from_vec(vec![*v])).collect()
    }

    #[test]
    fn one_step_delay() {
        // x+ = u, y = x: the output reproduces the input one step late.
        let model = StateSpaceModel::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let u = scalar_inputs(&[3.0, 5.0, 7.0]);
        let x0 = DVector::from_vec(vec![1.0]);
        let (states, outputs) = model.simulate(&x0, &u).unwrap();
        assert_eq!(states.len(), 4);
        assert_eq!(outputs[0][0], 1.0);
        assert_eq!(outputs[1][0], 3.0);
        assert_eq!(outputs[2][0], 5.0);
        assert_eq!(states[3][0], 7.0);
    }

    #[test]
    fn free_decay() {
        let model = StateSpaceModel::scalar_default();
        let u = scalar_inputs(&[0.0; 5]);
        let x0 = DVector::from_vec(vec![1.0]);
        let (_, outputs) = model.simulate(&x0, &u).unwrap();
        for (t, y) in outputs.iter().enumerate() {
            assert_abs_diff_eq!(y[0], 0.5f64.powi(t as i32), epsilon = 1e-15);
        }
    }

    #[test]
    fn pure_feedthrough() {
        let model = StateSpaceModel::new(
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        let u = scalar_inputs(&[1.0, -4.0]);
        let (_, outputs) = model.simulate(&DVector::zeros(1), &u).unwrap();
        assert_eq!(outputs[0][0], 2.0);
        assert_eq!(outputs[1][0], -8.0);
    }

    #[test]
    fn response_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let model = random_minimal_system(3, 2, 2, 0.9, &mut rng);
        let u1 = random_excitation(2, 6, 1.0, &mut rng);
        let u2 = random_excitation(2, 6, 1.0, &mut rng);
        let x1 = DVector::from_fn(3, |_, _| rng.random::<f64>());
        let x2 = DVector::from_fn(3, |_, _| rng.random::<f64>());
        let (a, b) = (0.7, -1.3);
        let combo_u: Vec<DVector<f64>> =
            u1.iter().zip(&u2).map(|(p, q)| p * a + q * b).collect();
        let combo_x = &x1 * a + &x2 * b;
        let (_, y1) = model.simulate(&x1, &u1).unwrap();
        let (_, y2) = model.simulate(&x2, &u2).unwrap();
        let (_, y_combo) = model.simulate(&combo_x, &combo_u).unwrap();
        for t in 0..6 {
            let expect = &y1[t] * a + &y2[t] * b;
            assert_abs_diff_eq!((&y_combo[t] - expect).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn default_plants_are_minimal() {
        assert!(StateSpaceModel::scalar_default().is_minimal(DEFAULT_RANK_TOL));
        assert!(StateSpaceModel::double_integrator().is_minimal(DEFAULT_RANK_TOL));
    }

    #[test]
    fn unobservable_model_constructs_but_reports() {
        // C = 0 hides the state entirely.
        let model = StateSpaceModel::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let (ctrb, obsv) = model.structural_ranks(DEFAULT_RANK_TOL);
        assert_eq!(ctrb, 1);
        assert_eq!(obsv, 0);
        assert!(!model.is_minimal(DEFAULT_RANK_TOL));
    }

    #[test]
    fn dimension_validation() {
        assert!(StateSpaceModel::new(
            DMatrix::zeros(2, 3),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
        )
        .is_err());
        assert!(StateSpaceModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
        )
        .is_err());
    }

    #[test]
    fn noise_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for spec in [NoiseSpec::uniform(0.05), NoiseSpec::truncated_gaussian(0.05)] {
            for _ in 0..500 {
                let v = spec.sample(3, &mut rng);
                assert!(v.norm() <= 0.05 + 1e-15, "noise norm {} over bound", v.norm());
            }
        }
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let spec = NoiseSpec::uniform(0.1);
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            assert_eq!(spec.sample(2, &mut a), spec.sample(2, &mut b));
        }
    }

    #[test]
    fn generated_trajectory_keeps_clean_outputs() {
        let model = StateSpaceModel::double_integrator();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let inputs = random_excitation(1, 30, 1.0, &mut rng);
        let spec = NoiseSpec::uniform(0.02);
        let traj =
            generate_trajectory(&model, &DVector::zeros(2), &inputs, Some((&spec, &mut rng)))
                .unwrap();
        let clean = traj.clean_outputs().expect("clean outputs attached");
        assert_eq!(traj.noise_bound(), Some(0.02));
        for (noisy, exact) in traj.outputs().iter().zip(clean) {
            let diff = (noisy - exact).norm();
            assert!(diff <= 0.02 + 1e-15);
            assert!(diff > 0.0 || noisy == exact);
        }
    }

    #[test]
    fn kv_round_trip() {
        let model = StateSpaceModel::double_integrator();
        let mut map = KvMap::new();
        model.to_kv(&mut map, "plant");
        let back = StateSpaceModel::from_kv(&KvMap::parse(&map.render()).unwrap(), "plant").unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn random_systems_are_minimal_and_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            let model = random_minimal_system(4, 2, 1, 0.9, &mut rng);
            assert!(model.is_minimal(DEFAULT_RANK_TOL));
            assert!(model.spectral_radius() <= 0.9 + 1e-9);
        }
    }
}
