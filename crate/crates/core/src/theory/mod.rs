//! Numerical checks of the convex-case theory: the convergence bound for the
//! online algorithm and its empirical rate, recovery of a reweighting that
//! reproduces the minimax solution on convex problems, and a non-convex
//! example where no reweighting does.

mod convergence;
mod counterexample;
mod problem;
mod saddle;
mod suite;

pub use convergence::{
    convergence_study, run_online, ConvergenceConfig, ConvergenceReport, ConvergenceRow,
    HorizonSummary, OnlineRun,
};
pub use counterexample::{
    counterexample_losses, counterexample_sweep, SweepReport, WeightedMinimizer, LOSS1_BREAKPOINTS,
    LOSS2_BREAKPOINTS,
};
pub use problem::{
    convergence_bound, designed_step_sizes, BoundInputs, ConvexProblem, QuadraticGroup,
};
pub use saddle::{check_prop1, convergence_error, reference_saddle, Prop1Report, SaddlePoint};
pub use suite::{prop1_instances, run_suite, Assertion, SuiteConfig, SuiteItem, SuiteReport};
