//! Subcommand implementations. Exit codes: 0 success, 1 failed verdict
//! or excitation check, 2 config or I/O error, 3 infeasible run.

use std::fs::File;
use std::process::ExitCode;

use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use ddmpc::analysis::{
    continuity_sweep, inherent_robustness_sweep, practical_stability_sweep, MonotoneSpec,
};
use ddmpc::closed_loop::run_closed_loop;
use ddmpc::plant::{generate_trajectory, random_excitation, NoiseSpec};
use ddmpc::signals::{is_persistently_exciting, membership_residual, ExtendedState, TrajectoryData, DEFAULT_RANK_TOL};
use ddmpc::textkv::KvMap;
use nalgebra::DVector;

use crate::config::{load, wrap, CliError, DefaultSchedule, Experiment};
use crate::{Cli, Command};

pub fn dispatch(cli: &Cli) -> Result<ExitCode, CliError> {
    let exp = load(cli)?;
    match cli.command {
        Command::GenerateData => generate_data(&exp),
        Command::Run => run(&exp),
        Command::Sweep => sweep(&exp),
        Command::VerifyLemma => verify_lemma(&exp),
    }
}

fn create(exp: &Experiment, name: &str) -> Result<File, CliError> {
    let path = exp.out_path(name);
    File::create(&path).map_err(|e| CliError(format!("cannot write {}: {e}", path.display())))
}

fn generate_data(exp: &Experiment) -> Result<ExitCode, CliError> {
    let model = exp.plant()?;
    let length = exp.kv.get_usize("data.length").map_err(wrap)?;
    let amplitude = exp.kv.get_f64_or("data.amplitude", 1.0).map_err(wrap)?;
    let x0 = exp.state_vector("data.x0", model.state_dim())?;
    let order = exp.horizon()? + 2 * exp.order()?;

    let mut excitation_rng = ChaCha8Rng::seed_from_u64(exp.stream_seed("excitation"));
    let inputs = random_excitation(model.input_dim(), length, amplitude, &mut excitation_rng);
    let data = if exp.kv.contains("data.eps_bar") {
        let eps = exp.kv.get_f64("data.eps_bar").map_err(wrap)?;
        if eps < 0.0 {
            return Err(CliError("data.eps_bar must be nonnegative".into()));
        }
        let spec = NoiseSpec {
            bound: eps,
            kind: exp.noise_kind("data.noise_kind")?,
        };
        let mut noise_rng = ChaCha8Rng::seed_from_u64(exp.stream_seed("offline-noise"));
        generate_trajectory(&model, &x0, &inputs, Some((&spec, &mut noise_rng))).map_err(wrap)?
    } else {
        generate_trajectory(&model, &x0, &inputs, None::<(_, &mut ChaCha8Rng)>).map_err(wrap)?
    };

    data.write_csv(create(exp, "data.csv")?).map_err(wrap)?;
    let pe = is_persistently_exciting(data.inputs(), order, DEFAULT_RANK_TOL).map_err(wrap)?;

    let mut report = KvMap::new();
    report.insert("pe.order", order);
    report.insert("pe.satisfied", pe.satisfied);
    report.insert("pe.rank", pe.rank);
    report.insert("pe.required_rank", pe.required_rank);
    report.insert("pe.min_singular_value", pe.min_singular_value);
    exp.write_text("pe_report.txt", &report.render())?;

    println!(
        "wrote {} ({length} samples)",
        exp.out_path("data.csv").display()
    );
    if pe.satisfied {
        println!(
            "input excitation of order {order} verified (min singular value {})",
            pe.min_singular_value
        );
        Ok(ExitCode::SUCCESS)
    } else {
        println!(
            "input excitation of order {order} FAILED: rank {} of {}",
            pe.rank, pe.required_rank
        );
        Ok(ExitCode::from(1))
    }
}

fn run(exp: &Experiment) -> Result<ExitCode, CliError> {
    let model = exp.plant()?;
    let data = exp.data()?;
    let controller = exp.controller(model.input_dim(), model.output_dim())?;
    let loop_cfg = exp.loop_config(&model, controller.order(), DefaultSchedule::OneStep)?;
    let trace = run_closed_loop(&model, &data, &controller, &loop_cfg).map_err(wrap)?;

    trace.write_csv(create(exp, "trace.csv")?).map_err(wrap)?;
    let summary = trace.summary(controller.weights());
    let mut kv = KvMap::new();
    kv.insert("run.scheme", trace.scheme);
    kv.insert("run.schedule_steps", trace.multi_step);
    summary.to_kv(&mut kv, "run");
    if let Some((step, status)) = trace.failure {
        kv.insert("run.failed_step", step);
        kv.insert("run.failed_status", status);
    }
    exp.write_text("summary.txt", &kv.render())?;

    println!("wrote {}", exp.out_path("trace.csv").display());
    if trace.feasible_throughout {
        println!(
            "{} steps feasible; final ||xi|| = {}",
            summary.steps_recorded, summary.final_xi_norm
        );
        Ok(ExitCode::SUCCESS)
    } else {
        let (step, status) = trace.failure.expect("failure recorded");
        println!("solve at step {step} ended {status}; run aborted");
        Ok(ExitCode::from(3))
    }
}

/// Initial history for open-loop analyses: the same zero-input warmup
/// the closed loop uses, started from `loop.x0`.
fn warmup_window(
    exp: &Experiment,
    model: &ddmpc::StateSpaceModel,
    order: usize,
) -> Result<ExtendedState, CliError> {
    let x0 = exp.state_vector("loop.x0", model.state_dim())?;
    let zeros = vec![DVector::zeros(model.input_dim()); order];
    let (_, outputs) = model.simulate(&x0, &zeros).map_err(wrap)?;
    ExtendedState::from_histories(&zeros, &outputs, order).map_err(wrap)
}

fn sweep(exp: &Experiment) -> Result<ExitCode, CliError> {
    let model = exp.plant()?;
    let data = exp.data()?;
    let grid = exp.kv.get_f64_list("sweep.grid").map_err(wrap)?;
    let seeds = exp.sweep_seeds()?;
    let monotone = MonotoneSpec::ripple(exp.kv.get_f64_or("sweep.ripple", 0.1).map_err(wrap)?)
        .with_atol(exp.kv.get_f64_or("sweep.atol", 0.0).map_err(wrap)?);
    let (m, p) = (model.input_dim(), model.output_dim());

    let parameter = exp.kv.get_str("sweep.parameter").map_err(wrap)?;
    let (label, report) = match parameter {
        "eps_bar" => {
            let template = exp.robust_config(m, p)?;
            let kind = exp.noise_kind("data.noise_kind")?;
            match exp.kv.get_str("sweep.metric").map_err(wrap)? {
                "continuity" => {
                    let init = warmup_window(exp, &model, template.order)?;
                    let report = continuity_sweep(
                        &data, &init, &template, kind, &grid, &seeds, &monotone,
                    )
                    .map_err(wrap)?;
                    ("continuity", report.sweep)
                }
                "practical-stability" => {
                    let base =
                        exp.loop_config(&model, template.order, DefaultSchedule::MultiStep)?;
                    let report = practical_stability_sweep(
                        &model, &data, &template, kind, &base, &grid, &seeds, &monotone,
                    )
                    .map_err(wrap)?;
                    ("practical-stability", report)
                }
                other => return Err(CliError(format!("unknown sweep.metric `{other}`"))),
            }
        }
        "d_bar" => {
            let controller = exp.nominal_config(m, p)?;
            let kind = exp.noise_kind("loop.d_kind")?;
            let base = exp.loop_config(&model, controller.order, DefaultSchedule::MultiStep)?;
            let report = inherent_robustness_sweep(
                &model, &data, &controller, kind, &base, &grid, &seeds, &monotone,
            )
            .map_err(wrap)?;
            ("inherent-robustness", report)
        }
        other => {
            return Err(CliError(format!(
                "unknown sweep.parameter `{other}` (expected eps_bar or d_bar)"
            )))
        }
    };

    report.write_csv(create(exp, "sweep.csv")?).map_err(wrap)?;
    report
        .write_summary_csv(create(exp, "sweep_summary.csv")?)
        .map_err(wrap)?;

    let floor_ok = match exp.kv.get_f64_or("sweep.floor", f64::INFINITY).map_err(wrap)? {
        f if f.is_finite() => report.points.first().is_some_and(|pt| pt.mean() <= f),
        _ => true,
    };
    let pass = report.all_feasible && report.monotone_mean && floor_ok;

    let mut kv = KvMap::new();
    kv.insert("verdict.metric", label);
    kv.insert("verdict.pass", pass);
    kv.insert("verdict.floor_ok", floor_ok);
    report.to_kv(&mut kv, "verdict");
    exp.write_text("verdict.txt", &kv.render())?;

    let means = report.means();
    println!(
        "{label} sweep over {}: {} levels, {} seeds per level",
        report.parameter_name,
        grid.len(),
        seeds.len()
    );
    for (point, mean) in report.points.iter().zip(&means) {
        println!("  {} = {}: mean {}", report.parameter_name, point.parameter, mean);
    }
    println!("verdict: {}", if pass { "PASS" } else { "FAIL" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn verify_lemma(exp: &Experiment) -> Result<ExitCode, CliError> {
    let data = exp.data()?;
    let path = exp.kv.get_str("lemma.candidate_file").map_err(wrap)?;
    let file = File::open(path)
        .map_err(|e| CliError(format!("cannot read candidate file {path}: {e}")))?;
    let candidate = TrajectoryData::read_csv(file).map_err(wrap)?;
    let order = if exp.kv.contains("lemma.order") {
        exp.kv.get_usize("lemma.order").map_err(wrap)?
    } else {
        exp.order()?
    };
    let tol = exp.kv.get_f64_or("lemma.tol", 1e-8).map_err(wrap)?;

    let report = membership_residual(&data, &candidate, order, DEFAULT_RANK_TOL).map_err(wrap)?;
    let member = report.residual <= tol;

    let mut kv = KvMap::new();
    kv.insert("lemma.window", candidate.len());
    kv.insert("lemma.order", order);
    kv.insert("lemma.residual", report.residual);
    kv.insert("lemma.member", member);
    kv.insert("lemma.pe_satisfied", report.pe_satisfied);
    kv.insert("lemma.pe_min_singular_value", report.pe_min_singular_value);
    exp.write_text("lemma_report.txt", &kv.render())?;

    println!(
        "residual {} over a window of {} steps: {} (tol {tol})",
        report.residual,
        candidate.len(),
        if member { "member" } else { "not a member" }
    );
    if !report.pe_satisfied {
        println!(
            "warning: data input not persistently exciting of order {}; the test is not exact",
            candidate.len() + order
        );
    }
    Ok(if member && report.pe_satisfied {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
