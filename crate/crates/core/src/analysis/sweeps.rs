//! Parameter sweeps over noise and disturbance levels. Each sweep reuses
//! the same random draws across grid points (scaled to the level under
//! test) so the curves vary only through the parameter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{flatten, perturb_initial_outputs, AnalysisError, MonotoneSpec, SweepPoint, SweepReport};
use crate::closed_loop::{run_closed_loop, ClosedLoopConfig, ControllerConfig, DisturbanceSpec};
use crate::mpc::nominal::{solve_nominal, NominalMpcConfig};
use crate::mpc::robust::{solve_robust, RobustMpcConfig};
use crate::mpc::MpcSolution;
use crate::plant::{add_output_noise, NoiseKind, NoiseSpec, StateSpaceModel};
use crate::seeds::derive_seed;
use crate::signals::{ExtendedState, TrajectoryData};

fn check_grid(grid: &[f64], seeds: &[u64]) -> Result<(), AnalysisError> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(AnalysisError::InvalidInput(
            "grid and seeds must be nonempty".into(),
        ));
    }
    if grid.iter().any(|&v| v <= 0.0) {
        return Err(AnalysisError::InvalidInput(
            "grid levels must be positive".into(),
        ));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::InvalidInput(
            "grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Open-loop continuity of the noise-tolerant controller: the distance
/// from its plan to the exact-data plan, as the noise level varies.
#[derive(Debug, Clone)]
pub struct ContinuityReport {
    /// Exact-data solution all deviations are measured against.
    pub baseline: MpcSolution,
    pub sweep: SweepReport,
}

/// For each noise level and seed, re-corrupts the data and the window
/// outputs at that level, solves the noise-tolerant problem with the
/// matching bound, and records the input-plan deviation from the
/// exact-data optimum.
pub fn continuity_sweep(
    clean_data: &TrajectoryData,
    clean_init: &ExtendedState,
    template: &RobustMpcConfig,
    noise_kind: NoiseKind,
    grid: &[f64],
    seeds: &[u64],
    monotone: &MonotoneSpec,
) -> Result<ContinuityReport, AnalysisError> {
    check_grid(grid, seeds)?;
    let nominal_cfg =
        NominalMpcConfig::new(template.horizon, template.order, template.weights.clone())?
            .with_input_constraints(template.input_constraints.clone());
    let baseline = solve_nominal(clean_data, clean_init, &nominal_cfg)?;
    if !baseline.is_optimal() {
        return Err(AnalysisError::InvalidInput(format!(
            "exact-data baseline ended {}",
            baseline.status
        )));
    }
    let baseline_plan = flatten(&baseline.inputs);

    let mut points = Vec::with_capacity(grid.len());
    for &level in grid {
        let spec = NoiseSpec {
            bound: level,
            kind: noise_kind,
        };
        let mut samples = Vec::new();
        for &seed in seeds {
            let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "offline-noise"));
            let noisy_data = add_output_noise(clean_data, &spec, &mut data_rng)?;
            let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "init-noise"));
            let noisy_init = perturb_initial_outputs(clean_init, &spec, &mut init_rng)?;
            let mut cfg = template.clone();
            cfg.noise_bound = level;
            let sol = solve_robust(&noisy_data, &noisy_init, &cfg)?;
            if sol.is_optimal() {
                samples.push((flatten(&sol.inputs) - &baseline_plan).norm());
            }
        }
        points.push(SweepPoint {
            parameter: level,
            attempts: seeds.len(),
            samples,
        });
    }
    Ok(ContinuityReport {
        baseline,
        sweep: SweepReport::from_points("noise_bound", points, monotone),
    })
}

/// Closed-loop effect of measurement noise on the noise-tolerant
/// controller: data and online measurements are corrupted at each level
/// and the tail of the history-window norm is recorded per run.
#[allow(clippy::too_many_arguments)]
pub fn practical_stability_sweep(
    model: &StateSpaceModel,
    clean_data: &TrajectoryData,
    template: &RobustMpcConfig,
    noise_kind: NoiseKind,
    base: &ClosedLoopConfig,
    grid: &[f64],
    seeds: &[u64],
    monotone: &MonotoneSpec,
) -> Result<SweepReport, AnalysisError> {
    check_grid(grid, seeds)?;
    let mut points = Vec::with_capacity(grid.len());
    for &level in grid {
        let spec = NoiseSpec {
            bound: level,
            kind: noise_kind,
        };
        let mut samples = Vec::new();
        for &seed in seeds {
            let mut data_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "offline-noise"));
            let noisy_data = add_output_noise(clean_data, &spec, &mut data_rng)?;
            let mut cfg = template.clone();
            cfg.noise_bound = level;
            let mut loop_cfg = base.clone();
            loop_cfg.measurement_noise = Some(spec.clone());
            loop_cfg.noise_seed = derive_seed(seed, "online-noise");
            let trace = run_closed_loop(
                model,
                &noisy_data,
                &ControllerConfig::Robust(cfg),
                &loop_cfg,
            )?;
            if trace.feasible_throughout {
                samples.push(trace.tail_max_xi_norm());
            }
        }
        points.push(SweepPoint {
            parameter: level,
            attempts: seeds.len(),
            samples,
        });
    }
    Ok(SweepReport::from_points("noise_bound", points, monotone))
}

/// Closed-loop effect of input disturbances on the exact-data
/// controller run at plan cadence `base.multi_step`: disturbances are
/// injected at each level and the tail of the history-window norm is
/// recorded per run.
#[allow(clippy::too_many_arguments)]
pub fn inherent_robustness_sweep(
    model: &StateSpaceModel,
    data: &TrajectoryData,
    controller: &NominalMpcConfig,
    noise_kind: NoiseKind,
    base: &ClosedLoopConfig,
    grid: &[f64],
    seeds: &[u64],
    monotone: &MonotoneSpec,
) -> Result<SweepReport, AnalysisError> {
    check_grid(grid, seeds)?;
    let mut points = Vec::with_capacity(grid.len());
    for &level in grid {
        let mut samples = Vec::new();
        for &seed in seeds {
            let mut loop_cfg = base.clone();
            loop_cfg.disturbance = Some(DisturbanceSpec::Random {
                bound: level,
                kind: noise_kind,
                seed: derive_seed(seed, "disturbance"),
            });
            let trace = run_closed_loop(
                model,
                data,
                &ControllerConfig::Nominal(controller.clone()),
                &loop_cfg,
            )?;
            if trace.feasible_throughout {
                samples.push(trace.tail_max_xi_norm());
            }
        }
        points.push(SweepPoint {
            parameter: level,
            attempts: seeds.len(),
            samples,
        });
    }
    Ok(SweepReport::from_points("disturbance_bound", points, monotone))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::{Polytope, Weights};
    use crate::plant::{generate_trajectory, random_excitation};
    use nalgebra::DVector;

    fn scalar_world() -> (StateSpaceModel, TrajectoryData, ExtendedState, RobustMpcConfig) {
        let model = StateSpaceModel::scalar_default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inputs = random_excitation(1, 60, 1.0, &mut rng);
        let data = generate_trajectory(
            &model,
            &DVector::zeros(1),
            &inputs,
            None::<(_, &mut ChaCha8Rng)>,
        )
        .unwrap();
        let w = [DVector::from_vec(vec![0.2])];
        let (_, outs) = model.simulate(&DVector::from_vec(vec![1.0]), &w).unwrap();
        let init = ExtendedState::from_histories(&w, &outs[..1], 1).unwrap();
        let cfg = RobustMpcConfig::new(
            4,
            1,
            Weights::identity(1, 1),
            Polytope::symmetric_box(1, 4.0).unwrap(),
            1e-3,
        )
        .unwrap();
        (model, data, init, cfg)
    }

    #[test]
    fn continuity_deviation_grows_with_noise() {
        let (_, data, init, cfg) = scalar_world();
        let report = continuity_sweep(
            &data,
            &init,
            &cfg,
            NoiseKind::UniformBall,
            &[1e-4, 1e-2],
            &[1, 2, 3],
            &MonotoneSpec::ripple(0.1),
        )
        .unwrap();
        assert!(report.sweep.all_feasible);
        let means = report.sweep.means();
        assert!(
            means[0] < means[1],
            "deviation should grow with noise: {means:?}"
        );
        assert!(report.sweep.monotone_mean);
    }

    #[test]
    fn stability_tail_grows_with_noise() {
        let (model, data, _, cfg) = scalar_world();
        let base = ClosedLoopConfig::new(24, DVector::from_vec(vec![1.0]));
        let report = practical_stability_sweep(
            &model,
            &data,
            &cfg,
            NoiseKind::UniformBall,
            &base,
            &[1e-4, 1e-2],
            &[5, 6],
            &MonotoneSpec::ripple(0.1),
        )
        .unwrap();
        assert!(report.all_feasible);
        let means = report.means();
        assert!(means[1] > means[0], "{means:?}");
        // Tails track the noise scale.
        assert!(means[0] < 1e-2, "{means:?}");
    }

    #[test]
    fn robustness_tail_grows_with_disturbance() {
        let (model, data, _, _) = scalar_world();
        let controller = NominalMpcConfig::new(4, 1, Weights::identity(1, 1))
            .unwrap()
            .with_input_constraints(Polytope::symmetric_box(1, 4.0).unwrap());
        let base = ClosedLoopConfig::new(24, DVector::from_vec(vec![1.0]));
        let report = inherent_robustness_sweep(
            &model,
            &data,
            &controller,
            NoiseKind::UniformBall,
            &base,
            &[1e-4, 1e-2],
            &[7, 8],
            &MonotoneSpec::ripple(0.1),
        )
        .unwrap();
        assert!(report.all_feasible);
        let means = report.means();
        assert!(means[1] > means[0], "{means:?}");
    }

    #[test]
    fn noise_free_baseline_sits_below_every_noisy_tail() {
        let (model, data, _, cfg) = scalar_world();
        let base = ClosedLoopConfig::new(24, DVector::from_vec(vec![1.0]));
        let report = practical_stability_sweep(
            &model,
            &data,
            &cfg,
            NoiseKind::UniformBall,
            &base,
            &[1e-4, 1e-3, 1e-2],
            &[5, 6],
            &MonotoneSpec::ripple(0.1),
        )
        .unwrap();
        let nominal = NominalMpcConfig::new(4, 1, Weights::identity(1, 1))
            .unwrap()
            .with_input_constraints(Polytope::symmetric_box(1, 4.0).unwrap());
        let trace =
            run_closed_loop(&model, &data, &ControllerConfig::Nominal(nominal), &base).unwrap();
        let baseline = trace.tail_max_xi_norm();
        assert!(baseline <= 1e-6, "noise-free tail {baseline}");
        for mean in report.means() {
            assert!(baseline < mean, "baseline {baseline} not below {mean}");
        }
    }

    #[test]
    fn heavy_disturbance_defeats_a_tight_input_budget() {
        let (model, data, _, _) = scalar_world();
        let controller = NominalMpcConfig::new(4, 1, Weights::identity(1, 1))
            .unwrap()
            .with_input_constraints(Polytope::symmetric_box(1, 0.3).unwrap());
        let mut base = ClosedLoopConfig::new(24, DVector::from_vec(vec![0.2]));
        base.disturbance = Some(DisturbanceSpec::Random {
            bound: 10.0,
            kind: NoiseKind::UniformBall,
            seed: 1,
        });
        let trace = run_closed_loop(
            &model,
            &data,
            &ControllerConfig::Nominal(controller),
            &base,
        )
        .unwrap();
        assert!(!trace.feasible_throughout, "threshold should be finite");
        assert!(trace.failure.is_some());
    }

    #[test]
    fn grids_are_validated() {
        let (_, data, init, cfg) = scalar_world();
        for bad in [vec![], vec![1e-2, 1e-4], vec![0.0, 1e-2]] {
            assert!(continuity_sweep(
                &data,
                &init,
                &cfg,
                NoiseKind::UniformBall,
                &bad,
                &[1],
                &MonotoneSpec::ripple(0.1),
            )
            .is_err());
        }
    }
}
