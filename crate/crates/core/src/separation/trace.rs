//! Per-iteration record of a separation run.

use std::io::Write;

use crate::error::Result;
use crate::fields::RealField;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub stage: usize,
    /// Loss at the start of the iteration, before the optimizer step.
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

/// Where a run stopped on a non-finite loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Abort {
    pub stage: usize,
    pub iteration: usize,
}

#[derive(Clone, Debug, Default)]
pub struct SeparationTrace {
    pub records: Vec<TraceRecord>,
    /// Iterate at the end of each completed stage.
    pub stage_outputs: Vec<RealField>,
    pub stage_wall_ms: Vec<f64>,
    /// Set when a non-finite loss stopped the run; the returned field is then
    /// the last finite iterate.
    pub abort: Option<Abort>,
    /// Line-search failures replaced by a plain gradient step.
    pub fallback_steps: usize,
}

pub const TRACE_HEADER: &str = "iteration,stage,loss,grad_norm,wall_ms";

impl SeparationTrace {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{:e},{:e},{:.3}",
                r.iteration, r.stage, r.loss, r.grad_norm, r.wall_ms
            )?;
        }
        Ok(())
    }
}
