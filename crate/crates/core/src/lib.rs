//! Data-driven model predictive control from measured trajectories.
//!
//! An LTI system is represented implicitly by one persistently exciting
//! input-output trajectory: every window of the behavior is a linear
//! combination of the columns of a block-Hankel matrix built from that
//! data. On top of this predictor the crate provides
//!
//! * [`signals`] — trajectory containers, Hankel matrices, persistence of
//!   excitation, and the trajectory-membership test,
//! * [`plant`] — ground-truth LTI simulation and noisy data generation,
//! * [`qp`] — a dense convex QP solver with KKT diagnostics,
//! * [`mpc`] — the nominal (terminal-equality) and robust (slack +
//!   regularized) predictive controllers,
//! * [`closed_loop`] — the receding-horizon simulation engine,
//! * [`analysis`] — experiment drivers checking stability and robustness
//!   properties of the closed loop.

pub mod analysis;
pub mod closed_loop;
pub mod mpc;
pub mod plant;
pub mod qp;
pub mod seeds;
pub mod signals;
pub mod textkv;

pub use plant::StateSpaceModel;
pub use signals::{ExtendedState, HankelMatrix, TrajectoryData};
