//! Learnable multi-step samplers for diffusion-style probability-flow ODEs.
//!
//! * [`schedule`] builds discretization grids.
//! * [`coeffs`] computes Adams-Bashforth coefficients.
//! * [`solver`] runs Euler, Adams-Bashforth and learned-weight samplers.
//! * [`toydiff`] provides an exact Gaussian-mixture denoiser.
//! * [`synthlab`] is the synthetic polynomial testbed.
//! * [`trainer`] distills solver coefficients from a high-step teacher.

pub mod coeffs;
pub mod schedule;
pub mod solver;
pub mod synthlab;
pub mod toydiff;
pub mod trainer;

pub use schedule::{build_schedule, ScheduleKind, TimeSchedule};
pub use solver::{DriftField, SolverParams};
