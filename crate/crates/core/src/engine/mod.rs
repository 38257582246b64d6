//! Sprint lifecycle: threads, versioned spaces, priming, trial execution with
//! optional Hyperband pruning, and the event log everything replays from.

mod fidelity;
mod model;
mod naming;
mod objective;
mod runtime;
mod store;
mod subset;
mod three_phase;

pub use fidelity::{EarlyStop, FidelitySpec};
pub use model::{
    Incumbent, ObjectiveSpec, PrimingLink, PrimingMode, PrimingRequest, Provenance, PrunerSpec,
    QueuedPoint, SamplerSpec, Sprint, SprintId, SprintStatus, SprintSummary, ThreadId,
    ThreadRecord, TickScore, Trial, TrialStatus,
};
pub use naming::{sprint_name, InitCheckpoint, SprintName};
pub use objective::{Control, EvalContext, Evaluation, ObjectiveHandle, Reporter};
pub use runtime::{
    check_scheduler_compression, trial_span, Engine, EngineState, FailPoint, ObjectiveResolver,
    PruneOutcome, SprintRequest, MAX_FAILURE_RATE,
};
pub use store::{Event, EventBody, EventLog};
pub use subset::rotate_subset;
pub use three_phase::{run_three_phase, PhaseOutcome, PhaseReport, RankedTrial, ThreePhaseConfig};
