//! End-to-end tests of the `ddmpc` binary: exit codes, artifact files,
//! and determinism under fixed seeds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ddmpc"))
}

/// Fresh scratch directory per scenario so tests can run in parallel.
fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ddmpc-cli-{}-{tag}", std::process::id()));
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn run_with(config: &Path, args: &[&str]) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .expect("binary runs")
}

fn base_config(dir: &Path) -> String {
    format!(
        "seed = 7\nout = {}\nplant.preset = scalar\ndata.length = 60\n\
         data.file = {}\ncontroller.type = nominal\ncontroller.L = 8\ncontroller.n = 1\n\
         loop.steps = 20\nloop.x0 = 1.0\n",
        dir.join("out").display(),
        dir.join("out").join("data.csv").display()
    )
}

#[test]
fn generate_data_verifies_excitation_order() {
    let dir = scratch("gen");
    let cfg = dir.join("exp.conf");
    write(&cfg, &base_config(&dir));
    let out = run_with(&cfg, &["generate-data"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("order 10 verified"), "{stdout}");
    let report = fs::read_to_string(dir.join("out").join("pe_report.txt")).unwrap();
    assert!(report.contains("pe.order = 10"));
    assert!(report.contains("pe.satisfied = true"));
    let data = fs::read_to_string(dir.join("out").join("data.csv")).unwrap();
    assert_eq!(data.lines().count(), 61);
    assert!(data.starts_with("t,u_0,y_0"));
}

#[test]
fn generate_data_zero_noise_keeps_columns_identical() {
    let dir = scratch("gen-zero");
    let cfg = dir.join("exp.conf");
    write(&cfg, &format!("{}data.eps_bar = 0.0\n", base_config(&dir)));
    let out = run_with(&cfg, &["generate-data"]);
    assert_eq!(out.status.code(), Some(0));
    let data = fs::read_to_string(dir.join("out").join("data.csv")).unwrap();
    let mut lines = data.lines();
    assert_eq!(lines.next().unwrap(), "t,u_0,y_0,y_clean_0");
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[2], cols[3], "noisy and clean columns differ: {line}");
    }
}

#[test]
fn generate_data_reports_excitation_failure() {
    let dir = scratch("gen-short");
    let cfg = dir.join("exp.conf");
    // 12 samples cannot be exciting of order 10 (needs at least 19).
    write(
        &cfg,
        &base_config(&dir).replace("data.length = 60", "data.length = 12"),
    );
    let out = run_with(&cfg, &["generate-data"]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let report = fs::read_to_string(dir.join("out").join("pe_report.txt")).unwrap();
    assert!(report.contains("pe.satisfied = false"));
}

#[test]
fn missing_plant_file_exits_2_naming_path() {
    let dir = scratch("no-plant");
    let cfg = dir.join("exp.conf");
    write(
        &cfg,
        &base_config(&dir).replace(
            "plant.preset = scalar",
            "plant.file = /nonexistent/plant.conf",
        ),
    );
    let out = run_with(&cfg, &["generate-data"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("/nonexistent/plant.conf"), "{stderr}");
}

#[test]
fn plant_file_round_trips_through_run() {
    let dir = scratch("plant-file");
    let plant = dir.join("plant.conf");
    // Same scalar model written out long-hand.
    write(
        &plant,
        "plant.n = 1\nplant.m = 1\nplant.p = 1\nplant.a = 0.5\nplant.b = 1\nplant.c = 1\nplant.d = 0\n",
    );
    let cfg = dir.join("exp.conf");
    write(
        &cfg,
        &base_config(&dir).replace(
            "plant.preset = scalar",
            &format!("plant.file = {}", plant.display()),
        ),
    );
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    assert_eq!(run_with(&cfg, &["run"]).status.code(), Some(0));
}

#[test]
fn run_regulates_and_reports_final_norm() {
    let dir = scratch("run");
    let cfg = dir.join("exp.conf");
    write(&cfg, &base_config(&dir));
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    let out = run_with(&cfg, &["run"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let summary = fs::read_to_string(dir.join("out").join("summary.txt")).unwrap();
    assert!(summary.contains("run.feasible_throughout = true"));
    let final_norm: f64 = summary
        .lines()
        .find_map(|l| l.strip_prefix("run.final_xi_norm = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(final_norm < 1e-8, "final norm {final_norm}");
    let trace = fs::read_to_string(dir.join("out").join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 21);
}

#[test]
fn equilibrium_run_stays_at_zero() {
    let dir = scratch("equilibrium");
    let cfg = dir.join("exp.conf");
    write(&cfg, &base_config(&dir).replace("loop.x0 = 1.0", "loop.x0 = 0.0"));
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    assert_eq!(run_with(&cfg, &["run"]).status.code(), Some(0));
    let trace = fs::read_to_string(dir.join("out").join("trace.csv")).unwrap();
    for line in trace.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let u: f64 = cols[1].parse().unwrap();
        let y: f64 = cols[3].parse().unwrap();
        assert!(u.abs() < 1e-12 && y.abs() < 1e-12, "{line}");
    }
}

#[test]
fn robust_run_needs_eps_bar() {
    let dir = scratch("robust-schema");
    let cfg = dir.join("exp.conf");
    write(
        &cfg,
        &format!(
            "{}controller.u_min = -3.0\ncontroller.u_max = 3.0\n",
            base_config(&dir).replace("controller.type = nominal", "controller.type = robust")
        ),
    );
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    let out = run_with(&cfg, &["run"]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("eps_bar"), "{stderr}");
    // With the key supplied the same run goes through.
    write(
        &cfg,
        &format!(
            "{}controller.u_min = -3.0\ncontroller.u_max = 3.0\ncontroller.eps_bar = 1e-3\n",
            base_config(&dir).replace("controller.type = nominal", "controller.type = robust")
        ),
    );
    assert_eq!(run_with(&cfg, &["run"]).status.code(), Some(0));
}

#[test]
fn infeasible_run_exits_3_with_failing_step() {
    let dir = scratch("infeasible");
    let cfg = dir.join("exp.conf");
    // Input bound far too small to meet the terminal constraint from
    // x0 = 5 within a short horizon.
    write(
        &cfg,
        &format!(
            "{}controller.u_min = -0.0001\ncontroller.u_max = 0.0001\n",
            base_config(&dir)
                .replace("controller.L = 8", "controller.L = 3")
                .replace("loop.x0 = 1.0", "loop.x0 = 5.0")
        ),
    );
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    let out = run_with(&cfg, &["run"]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let summary = fs::read_to_string(dir.join("out").join("summary.txt")).unwrap();
    assert!(summary.contains("run.feasible_throughout = false"));
    assert!(summary.contains("run.failed_step = 0"));
    assert!(summary.contains("run.failed_status = infeasible"));
}

#[test]
fn disturbance_sweep_passes_and_writes_reports() {
    let dir = scratch("sweep-d");
    let cfg = dir.join("exp.conf");
    write(
        &cfg,
        &format!(
            "{}controller.u_min = -3.0\ncontroller.u_max = 3.0\n\
             sweep.parameter = d_bar\nsweep.grid = 1e-4 1e-2\nsweep.seeds = 2\n",
            base_config(&dir)
        ),
    );
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    let out = run_with(&cfg, &["sweep"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let verdict = fs::read_to_string(dir.join("out").join("verdict.txt")).unwrap();
    assert!(verdict.contains("verdict.metric = inherent-robustness"));
    assert!(verdict.contains("verdict.pass = true"));
    assert!(dir.join("out").join("sweep.csv").exists());
    assert!(dir.join("out").join("sweep_summary.csv").exists());
}

#[test]
fn eps_sweep_dispatches_on_metric() {
    let dir = scratch("sweep-eps");
    let cfg = dir.join("exp.conf");
    let robust = format!(
        "{}controller.u_min = -3.0\ncontroller.u_max = 3.0\ncontroller.eps_bar = 1e-3\n\
         sweep.parameter = eps_bar\nsweep.grid = 1e-4 1e-2\nsweep.seeds = 2\n",
        base_config(&dir).replace("controller.type = nominal", "controller.type = robust")
    );
    write(&cfg, &format!("{robust}sweep.metric = continuity\n"));
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    let out = run_with(&cfg, &["sweep"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let verdict = fs::read_to_string(dir.join("out").join("verdict.txt")).unwrap();
    assert!(verdict.contains("verdict.metric = continuity"));

    write(&cfg, &format!("{robust}sweep.metric = practical-stability\n"));
    let out = run_with(&cfg, &["sweep"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let verdict = fs::read_to_string(dir.join("out").join("verdict.txt")).unwrap();
    assert!(verdict.contains("verdict.metric = practical-stability"));
}

#[test]
fn single_point_grid_passes_trivially() {
    let dir = scratch("sweep-single");
    let cfg = dir.join("exp.conf");
    write(
        &cfg,
        &format!(
            "{}controller.u_min = -3.0\ncontroller.u_max = 3.0\n\
             sweep.parameter = d_bar\nsweep.grid = 1e-3\nsweep.seeds = 2\n",
            base_config(&dir)
        ),
    );
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    assert_eq!(run_with(&cfg, &["sweep"]).status.code(), Some(0));
}

#[test]
fn unknown_sweep_parameter_exits_2() {
    let dir = scratch("sweep-unknown");
    let cfg = dir.join("exp.conf");
    write(
        &cfg,
        &format!(
            "{}sweep.parameter = gamma\nsweep.grid = 1e-3\n",
            base_config(&dir)
        ),
    );
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    let out = run_with(&cfg, &["sweep"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("gamma"));
}

#[test]
fn verify_lemma_accepts_recorded_window_rejects_corrupted() {
    let dir = scratch("lemma");
    let cfg = dir.join("exp.conf");
    let candidate = dir.join("candidate.csv");
    write(
        &cfg,
        &format!(
            "{}lemma.candidate_file = {}\n",
            base_config(&dir),
            candidate.display()
        ),
    );
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    let data = fs::read_to_string(dir.join("out").join("data.csv")).unwrap();
    let window: Vec<&str> = data.lines().take(7).collect();
    write(&candidate, &format!("{}\n", window.join("\n")));
    assert_eq!(run_with(&cfg, &["verify-lemma"]).status.code(), Some(0));
    let report = fs::read_to_string(dir.join("out").join("lemma_report.txt")).unwrap();
    assert!(report.contains("lemma.member = true"));

    // Perturb one output entry; the window stops being a trajectory.
    let mut lines: Vec<String> = window.iter().map(|s| s.to_string()).collect();
    let mut cols: Vec<String> = lines[3].split(',').map(|s| s.to_string()).collect();
    let bumped: f64 = cols[2].parse::<f64>().unwrap() + 0.05;
    cols[2] = bumped.to_string();
    lines[3] = cols.join(",");
    write(&candidate, &format!("{}\n", lines.join("\n")));
    assert_eq!(run_with(&cfg, &["verify-lemma"]).status.code(), Some(1));
    let report = fs::read_to_string(dir.join("out").join("lemma_report.txt")).unwrap();
    assert!(report.contains("lemma.member = false"));
}

#[test]
fn reruns_are_byte_identical_and_seed_flag_overrides() {
    let dir = scratch("determinism");
    let cfg = dir.join("exp.conf");
    write(&cfg, &base_config(&dir));
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    let first = fs::read(dir.join("out").join("data.csv")).unwrap();
    assert_eq!(run_with(&cfg, &["generate-data"]).status.code(), Some(0));
    let second = fs::read(dir.join("out").join("data.csv")).unwrap();
    assert_eq!(first, second);

    assert_eq!(run_with(&cfg, &["run"]).status.code(), Some(0));
    let trace_a = fs::read(dir.join("out").join("trace.csv")).unwrap();
    assert_eq!(run_with(&cfg, &["run"]).status.code(), Some(0));
    let trace_b = fs::read(dir.join("out").join("trace.csv")).unwrap();
    assert_eq!(trace_a, trace_b);

    let out = bin()
        .args(["generate-data", "--seed", "8", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let reseeded = fs::read(dir.join("out").join("data.csv")).unwrap();
    assert_ne!(first, reseeded, "seed flag must change the excitation");
}

#[test]
fn missing_config_and_bad_syntax_exit_2() {
    let out = bin().arg("run").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("--config"));

    let dir = scratch("bad-syntax");
    let cfg = dir.join("exp.conf");
    write(&cfg, "no equals sign here\n");
    let out = run_with(&cfg, &["run"]);
    assert_eq!(out.status.code(), Some(2));
}
