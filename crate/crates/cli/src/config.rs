//! Config loading for the experiment driver. One flat key-value file
//! describes the plant, the controller, the loop, and the sweep; each
//! subcommand reads the sections it needs.

use std::fmt;
use std::fs;
use std::path::PathBuf;

use nalgebra::DVector;

use ddmpc::closed_loop::{ClosedLoopConfig, ControllerConfig, DisturbanceSpec};
use ddmpc::mpc::nominal::NominalMpcConfig;
use ddmpc::mpc::robust::RobustMpcConfig;
use ddmpc::mpc::{Polytope, Weights};
use ddmpc::plant::{NoiseKind, NoiseSpec, StateSpaceModel};
use ddmpc::seeds::derive_seed;
use ddmpc::signals::TrajectoryData;
use ddmpc::textkv::KvMap;

use crate::Cli;

/// Anything that should abort the command with a config or I/O error.
#[derive(Debug)]
pub struct CliError(pub String);

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for CliError {}

pub fn wrap<E: fmt::Display>(e: E) -> CliError {
    CliError(e.to_string())
}

/// Which plan cadence a command should assume when the config is silent.
#[derive(Clone, Copy)]
pub enum DefaultSchedule {
    OneStep,
    MultiStep,
}

pub struct Experiment {
    pub kv: KvMap,
    pub root_seed: u64,
    pub out_dir: PathBuf,
}

pub fn load(cli: &Cli) -> Result<Experiment, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError("--config <path> is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError(format!("cannot read config {}: {e}", path.display())))?;
    let kv = KvMap::parse(&text).map_err(wrap)?;
    let root_seed = match cli.seed {
        Some(s) => s,
        None => {
            if kv.contains("seed") {
                kv.get_u64("seed").map_err(wrap)?
            } else {
                0
            }
        }
    };
    let out_dir = match &cli.out {
        Some(dir) => dir.clone(),
        None => PathBuf::from(kv.get_str_opt("out").unwrap_or(".")),
    };
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError(format!("cannot create output directory {}: {e}", out_dir.display())))?;
    Ok(Experiment {
        kv,
        root_seed,
        out_dir,
    })
}

impl Experiment {
    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    pub fn stream_seed(&self, label: &str) -> u64 {
        derive_seed(self.root_seed, label)
    }

    pub fn plant(&self) -> Result<StateSpaceModel, CliError> {
        if let Some(path) = self.kv.get_str_opt("plant.file") {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError(format!("cannot read plant file {path}: {e}")))?;
            let map = KvMap::parse(&text).map_err(wrap)?;
            return StateSpaceModel::from_kv(&map, "plant").map_err(wrap);
        }
        match self.kv.get_str_opt("plant.preset") {
            Some("scalar") => Ok(StateSpaceModel::scalar_default()),
            Some("double-integrator") => Ok(StateSpaceModel::double_integrator()),
            Some(other) => Err(CliError(format!("unknown plant.preset `{other}`"))),
            None => Err(CliError("config needs plant.file or plant.preset".into())),
        }
    }

    /// Trajectory data referenced by `data.file`.
    pub fn data(&self) -> Result<TrajectoryData, CliError> {
        let path = self.kv.get_str("data.file").map_err(wrap)?;
        let file = fs::File::open(path)
            .map_err(|e| CliError(format!("cannot read data file {path}: {e}")))?;
        TrajectoryData::read_csv(file).map_err(wrap)
    }

    pub fn horizon(&self) -> Result<usize, CliError> {
        self.kv.get_usize("controller.L").map_err(wrap)
    }

    pub fn order(&self) -> Result<usize, CliError> {
        self.kv.get_usize("controller.n").map_err(wrap)
    }

    fn weights(&self, m: usize, p: usize) -> Result<Weights, CliError> {
        let q = if self.kv.contains("controller.q_diag") {
            self.kv.get_f64_list("controller.q_diag").map_err(wrap)?
        } else {
            vec![1.0; p]
        };
        let r = if self.kv.contains("controller.r_diag") {
            self.kv.get_f64_list("controller.r_diag").map_err(wrap)?
        } else {
            vec![1.0; m]
        };
        if q.len() != p || r.len() != m {
            return Err(CliError(format!(
                "weight lists need {p} output and {m} input entries"
            )));
        }
        Weights::diagonal(&q, &r).map_err(wrap)
    }

    fn bounds(&self, lo_key: &str, hi_key: &str, dim: usize) -> Result<Option<Polytope>, CliError> {
        if !self.kv.contains(lo_key) && !self.kv.contains(hi_key) {
            return Ok(None);
        }
        let lo = self.kv.get_f64_list(lo_key).map_err(wrap)?;
        let hi = self.kv.get_f64_list(hi_key).map_err(wrap)?;
        if lo.len() != dim || hi.len() != dim {
            return Err(CliError(format!(
                "{lo_key}/{hi_key} need {dim} entries each"
            )));
        }
        Polytope::box_bounds(&DVector::from_vec(lo), &DVector::from_vec(hi))
            .map(Some)
            .map_err(wrap)
    }

    pub fn nominal_config(&self, m: usize, p: usize) -> Result<NominalMpcConfig, CliError> {
        let mut cfg =
            NominalMpcConfig::new(self.horizon()?, self.order()?, self.weights(m, p)?)
                .map_err(wrap)?;
        if let Some(set) = self.bounds("controller.u_min", "controller.u_max", m)? {
            cfg = cfg.with_input_constraints(set);
        }
        if let Some(set) = self.bounds("controller.y_min", "controller.y_max", p)? {
            cfg = cfg.with_output_constraints(set);
        }
        Ok(cfg)
    }

    pub fn robust_config(&self, m: usize, p: usize) -> Result<RobustMpcConfig, CliError> {
        if !self.kv.contains("controller.eps_bar") {
            return Err(CliError(
                "controller.eps_bar is required for the robust controller".into(),
            ));
        }
        let eps = self.kv.get_f64("controller.eps_bar").map_err(wrap)?;
        let input_set = self
            .bounds("controller.u_min", "controller.u_max", m)?
            .ok_or_else(|| {
                CliError("robust controller needs controller.u_min and controller.u_max".into())
            })?;
        let mut cfg = RobustMpcConfig::new(
            self.horizon()?,
            self.order()?,
            self.weights(m, p)?,
            input_set,
            eps,
        )
        .map_err(wrap)?;
        cfg.lambda_alpha = self
            .kv
            .get_f64_or("controller.lambda_alpha", cfg.lambda_alpha)
            .map_err(wrap)?;
        cfg.lambda_sigma = self
            .kv
            .get_f64_or("controller.lambda_sigma", cfg.lambda_sigma)
            .map_err(wrap)?;
        cfg.beta_alpha = self
            .kv
            .get_f64_or("controller.beta_alpha", cfg.beta_alpha)
            .map_err(wrap)?;
        cfg.beta_sigma = self
            .kv
            .get_f64_or("controller.beta_sigma", cfg.beta_sigma)
            .map_err(wrap)?;
        cfg.validate().map_err(wrap)?;
        Ok(cfg)
    }

    pub fn controller(&self, m: usize, p: usize) -> Result<ControllerConfig, CliError> {
        match self.kv.get_str("controller.type").map_err(wrap)? {
            "nominal" => Ok(ControllerConfig::Nominal(self.nominal_config(m, p)?)),
            "robust" => Ok(ControllerConfig::Robust(self.robust_config(m, p)?)),
            other => Err(CliError(format!("unknown controller.type `{other}`"))),
        }
    }

    pub fn noise_kind(&self, key: &str) -> Result<NoiseKind, CliError> {
        match self.kv.get_str_opt(key).unwrap_or("uniform") {
            "uniform" => Ok(NoiseKind::UniformBall),
            "truncated-gaussian" => Ok(NoiseKind::TruncatedGaussian),
            other => Err(CliError(format!("unknown noise kind `{other}` in {key}"))),
        }
    }

    pub fn state_vector(&self, key: &str, dim: usize) -> Result<DVector<f64>, CliError> {
        if !self.kv.contains(key) {
            return Ok(DVector::zeros(dim));
        }
        let values = self.kv.get_f64_list(key).map_err(wrap)?;
        if values.len() != dim {
            return Err(CliError(format!("{key} needs {dim} entries")));
        }
        Ok(DVector::from_vec(values))
    }

    /// Closed-loop settings under `loop.*`. The measurement-noise and
    /// disturbance streams are split off the root seed.
    pub fn loop_config(
        &self,
        model: &StateSpaceModel,
        order: usize,
        default_schedule: DefaultSchedule,
    ) -> Result<ClosedLoopConfig, CliError> {
        let steps = self.kv.get_usize("loop.steps").map_err(wrap)?;
        let x0 = self.state_vector("loop.x0", model.state_dim())?;
        let mut cfg = ClosedLoopConfig::new(steps, x0);
        let schedule = self.kv.get_str_opt("loop.schedule").unwrap_or(match default_schedule {
            DefaultSchedule::OneStep => "one-step",
            DefaultSchedule::MultiStep => "n-step",
        });
        cfg.multi_step = match schedule {
            "one-step" => 1,
            "n-step" => order,
            other => return Err(CliError(format!("unknown loop.schedule `{other}`"))),
        };
        let noise_bound = self.kv.get_f64_or("loop.noise_bound", 0.0).map_err(wrap)?;
        if noise_bound < 0.0 {
            return Err(CliError("loop.noise_bound must be nonnegative".into()));
        }
        if noise_bound > 0.0 {
            cfg.measurement_noise = Some(NoiseSpec {
                bound: noise_bound,
                kind: self.noise_kind("loop.noise_kind")?,
            });
            cfg.noise_seed = self.stream_seed("online-noise");
        }
        let d_bar = self.kv.get_f64_or("loop.d_bar", 0.0).map_err(wrap)?;
        if d_bar < 0.0 {
            return Err(CliError("loop.d_bar must be nonnegative".into()));
        }
        if d_bar > 0.0 {
            cfg.disturbance = Some(DisturbanceSpec::Random {
                bound: d_bar,
                kind: self.noise_kind("loop.d_kind")?,
                seed: self.stream_seed("disturbance"),
            });
        }
        Ok(cfg)
    }

    /// Derived per-run seeds for sweeps, split from the root seed.
    pub fn sweep_seeds(&self) -> Result<Vec<u64>, CliError> {
        let count = self.kv.get_usize_or("sweep.seeds", 10).map_err(wrap)?;
        if count == 0 {
            return Err(CliError("sweep.seeds must be positive".into()));
        }
        Ok((0..count)
            .map(|i| derive_seed(self.root_seed, &format!("sweep-seed-{i}")))
            .collect())
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.out_path(name);
        fs::write(&path, text)
            .map_err(|e| CliError(format!("cannot write {}: {e}", path.display())))
    }
}
