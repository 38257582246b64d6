use serde::{Deserialize, Serialize};

use super::fidelity::FidelitySpec;
use crate::error::Result;
use crate::hyperband::Tick;
use crate::space::{HPoint, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalContext {
    pub seed: u64,
    /// Data-subset rotation index (the trial ordinal).
    pub rotation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub score: f64,
    /// Epochs actually run.
    pub epochs: u32,
    /// The run ended at a stop request.
    pub stopped: bool,
}

/// Receives `(tick, score)` reports and may ask the run to stop.
pub type Reporter<'a> = dyn FnMut(&Tick, f64) -> Control + 'a;

/// A tunable system the engine can evaluate. Scores are minimized.
pub trait ObjectiveHandle: Send + Sync {
    fn name(&self) -> &str;

    /// Evaluates `point` at `fidelity`, reporting intermediate scores. Must be
    /// deterministic in `(point, fidelity, ctx)` and must stop at the first
    /// prunable tick whose report returns [`Control::Stop`].
    fn evaluate(
        &self,
        point: &HPoint,
        fidelity: &FidelitySpec,
        ctx: &EvalContext,
        reporter: &mut Reporter<'_>,
    ) -> Result<Evaluation>;

    /// Epoch length the learning-rate schedule was designed for, if any.
    fn design_epochs(&self) -> Option<u32> {
        None
    }

    /// Search space a new thread over this objective starts from.
    fn default_space(&self) -> Option<SearchSpace> {
        None
    }
}
