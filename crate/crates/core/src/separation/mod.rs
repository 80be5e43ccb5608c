//! Losses, the stochastic L-BFGS driver and the separation algorithms.

mod algorithms;
mod lbfgs;
mod loss;
mod representation;
mod trace;

pub use algorithms::{
    bias_corrected_loss, delouis_separate, diffusive_separate, iteration_seed, vanilla_separate,
    vanilla_separate_from, LossKind, SeparationConfig, SIGMA_FLOOR,
};
pub use lbfgs::{Lbfgs, LbfgsConfig, StepOutcome};
pub use loss::{
    corrupted_statistics, mc_loss, mc_loss_eval, perturbative_loss, CorruptedStatistics, Draws, McEval,
};
pub use representation::{
    DiagonalLinear, PerturbativeModel, PointwiseSquare, QuadraticForm, Representation, WphRepresentation,
};
pub use trace::{Abort, SeparationTrace, TraceRecord, TRACE_HEADER};

#[cfg(test)]
mod tests;
