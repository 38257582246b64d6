//! Synthetic objectives and a toy multi-stage model for exercising the engine.

mod pipeline;
mod synthetic;

pub use pipeline::{
    generate_corpus, generate_corpus_with, toy_predict, Corpus, PipelineConfig, PipelineCounts,
    Split, SplitKind, ToyModel, ToyPipeline,
};
pub use synthetic::{
    grouped_multitask_space, multitask_space, optimum_point, tick_schedule, CurveParams, Landscape,
    SyntheticObjective, WARMUP_DIM,
};

use std::sync::Arc;

use crate::engine::{
    Control, EvalContext, Evaluation, FidelitySpec, ObjectiveHandle, ObjectiveSpec, Reporter,
};
use crate::error::{Error, Result};
use crate::hyperband::{resource_ticks, TickPhase};
use crate::losses::GroupingScheme;
use crate::space::{HPoint, SearchSpace};

/// Objective over the GLOBAL space whose score is `1 - relation F1` of the toy
/// pipeline on validation data, with model quality shrinking away from a
/// planted optimum.
#[derive(Debug)]
pub struct PipelineObjective {
    pub pipeline: ToyPipeline,
    /// Supplies the planted optimum and distance metric.
    pub geometry: SyntheticObjective,
}

impl PipelineObjective {
    pub fn new(seed: u64) -> Result<Self> {
        Self::grouped(GroupingScheme::Global, seed)
    }

    pub fn grouped(scheme: GroupingScheme, seed: u64) -> Result<Self> {
        Ok(PipelineObjective {
            pipeline: ToyPipeline::new(generate_corpus(seed, 60, 12)?, 0.0),
            geometry: SyntheticObjective::multitask_grouped(scheme, seed),
        })
    }

    pub fn search_space(&self) -> SearchSpace {
        self.geometry.search_space().clone()
    }
}

impl ObjectiveHandle for PipelineObjective {
    fn name(&self) -> &str {
        "toy_pipeline"
    }

    fn evaluate(
        &self,
        point: &HPoint,
        fidelity: &FidelitySpec,
        _ctx: &EvalContext,
        reporter: &mut Reporter<'_>,
    ) -> Result<Evaluation> {
        fidelity.validate()?;
        let dist = self.geometry.normalized_distance(point)?;
        let scale = (-3.0 * dist * dist).exp();
        let thresholds = self.pipeline.planted_thresholds();
        let ticks = resource_ticks(fidelity.max_epochs, 10, fidelity.calibration_epochs)?;
        let mut last = Evaluation {
            score: 1.0,
            epochs: 0,
            stopped: false,
        };
        for tick in &ticks {
            let epoch = tick.epoch.min(fidelity.max_epochs);
            let q = self.pipeline.quality_at(epoch) * scale;
            let mut score = 1.0
                - self
                    .pipeline
                    .predict_at(SplitKind::Val, q, &thresholds)
                    .relation
                    .f1();
            if tick.phase == TickPhase::Calibration {
                score -= 0.001 * (tick.epoch - fidelity.max_epochs) as f64;
            }
            last = Evaluation {
                score,
                epochs: tick.epoch,
                stopped: false,
            };
            if reporter(tick, score) == Control::Stop && tick.prunable {
                last.stopped = true;
                break;
            }
        }
        Ok(last)
    }

    fn default_space(&self) -> Option<SearchSpace> {
        Some(self.search_space())
    }
}

/// Objective kinds [`resolve_objective`] understands.
pub const OBJECTIVE_KINDS: [&str; 4] = [
    "multitask_sim",
    "quadratic_bowl",
    "branin_like",
    "toy_pipeline",
];

/// Builds a testbed objective from its spec; `quadratic_bowl` has four
/// dimensions. The grouping only affects `multitask_sim` and `toy_pipeline`.
pub fn resolve_objective(spec: &ObjectiveSpec) -> Result<Arc<dyn ObjectiveHandle>> {
    let scheme: GroupingScheme = match &spec.grouping {
        Some(g) => g.parse()?,
        None => GroupingScheme::Global,
    };
    Ok(match spec.kind.as_str() {
        "multitask_sim" => Arc::new(SyntheticObjective::multitask_grouped(scheme, spec.seed)),
        "quadratic_bowl" => Arc::new(SyntheticObjective::quadratic_bowl(4, spec.seed)),
        "branin_like" => Arc::new(SyntheticObjective::branin_like(spec.seed)),
        "toy_pipeline" => Arc::new(PipelineObjective::grouped(scheme, spec.seed)?),
        other => return Err(Error::not_found("objective", other)),
    })
}
