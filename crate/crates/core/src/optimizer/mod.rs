//! Gradient-based design of the surface state.

pub mod gradcheck;
pub mod gradients;
pub mod pgam;
pub mod trace;

pub use gradcheck::{gradient_check, GradientCheck};
pub use gradients::{evaluate_gradients, gradients, GradientBundle};
pub use pgam::{
    ao_baseline, multi_start, optimize_ms, pgam_run, pgam_step, surrogate_q, Blocks, MsOutcome, PgamConfig, RandomBlock,
};
pub use trace::{IterationRecord, OptimizationTrace, RestartTrace, Status};
