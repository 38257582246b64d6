use serde::{Deserialize, Serialize};

use super::fidelity::{EarlyStop, FidelitySpec};
use super::model::{
    Incumbent, PrimingMode, PrimingRequest, PrunerSpec, SamplerSpec, SprintId, SprintStatus,
    ThreadId,
};
use super::naming::InitCheckpoint;
use super::runtime::{Engine, SprintRequest};
use crate::error::{Error, Result};
use crate::gp::GpConfig;
use crate::space::{MarginPolicy, Value};
use crate::tpe::TpeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreePhaseConfig {
    pub model_type: String,
    pub variant: String,
    pub grouping: String,
    pub seed: u64,
    pub worker_limit: usize,
    pub phase1: GpConfig,
    pub phase1_fidelity: FidelitySpec,
    pub prune_k: usize,
    pub margins: MarginPolicy,
    /// Integer dimension frozen in the first phase and reopened in the second.
    pub warmup_dim: String,
    pub warmup_freeze: i64,
    pub warmup_range: (f64, f64),
    pub phase2: GpConfig,
    pub phase2_fidelity: FidelitySpec,
    pub phase3_trials: usize,
    pub phase3_tpe: TpeConfig,
    pub phase3_fidelity: FidelitySpec,
    pub eta: u64,
    pub cold_prime_top: usize,
}

impl Default for ThreePhaseConfig {
    fn default() -> Self {
        ThreePhaseConfig {
            model_type: "JointMRC".into(),
            variant: "Bert-MTW".into(),
            grouping: "GLOBAL".into(),
            seed: 0,
            worker_limit: 1,
            phase1: GpConfig::new(120, 60),
            phase1_fidelity: FidelitySpec::new(6, 3, 1),
            prune_k: 10,
            margins: MarginPolicy::default(),
            warmup_dim: "lr_warmup".into(),
            warmup_freeze: 7,
            warmup_range: (6.0, 8.0),
            phase2: GpConfig::new(90, 30),
            phase2_fidelity: FidelitySpec::new(6, 3, 25)
                .with_scheduler(true)
                .with_early_stop(EarlyStop::EndOfWarmup),
            phase3_trials: 9,
            phase3_tpe: TpeConfig {
                n_startup: 3,
                ..TpeConfig::default()
            },
            phase3_fidelity: FidelitySpec::new(1, 1, 25)
                .with_scheduler(true)
                .with_calibration(7),
            eta: 3,
            cold_prime_top: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTrial {
    pub trial: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub phase: u8,
    pub sprint: SprintId,
    pub name: String,
    pub space_version: u64,
    pub status: SprintStatus,
    pub incumbent: Option<Incumbent>,
    /// Best ten completed trials.
    pub ranking: Vec<RankedTrial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub thread: ThreadId,
    pub phases: Vec<PhaseOutcome>,
    pub degenerate: Vec<String>,
}

impl PhaseReport {
    pub fn final_incumbent(&self) -> Option<&Incumbent> {
        self.phases.last().and_then(|p| p.incumbent.as_ref())
    }
}

fn outcome(engine: &Engine, phase: u8, sprint: &str) -> Result<PhaseOutcome> {
    let s = engine.sprint(sprint)?;
    Ok(PhaseOutcome {
        phase,
        sprint: s.id.clone(),
        name: s.name.render()?,
        space_version: s.space_version,
        status: s.status.clone(),
        incumbent: s.incumbent(),
        ranking: s
            .ranking()
            .into_iter()
            .take(10)
            .map(|(t, score)| RankedTrial { trial: t.id, score })
            .collect(),
    })
}

/// Coarse GP exploration at low fidelity, top-k pruning, GP refinement with
/// the warmup dimension reopened, then TPE with Hyperband at full data
/// cold-primed from the refinement's best points.
pub fn run_three_phase(
    engine: &Engine,
    thread: &str,
    cfg: &ThreePhaseConfig,
) -> Result<PhaseReport> {
    let request =
        |suffix: &str, version: u64, sampler: SamplerSpec, fidelity: FidelitySpec, seed: u64| {
            SprintRequest {
                thread: thread.to_string(),
                model_type: cfg.model_type.clone(),
                variant: cfg.variant.clone(),
                grouping: cfg.grouping.clone(),
                suffix: suffix.to_string(),
                space_version: Some(version),
                sampler,
                pruner: PrunerSpec::None,
                fidelity,
                init_checkpoint: InitCheckpoint::default(),
                seed,
                priming: None,
            }
        };
    let finished = |sprint: &str| -> Result<()> {
        match engine.sprint(sprint)?.status {
            SprintStatus::Complete => Ok(()),
            SprintStatus::Failed { reason } => Err(Error::Objective(format!(
                "sprint {sprint} failed: {reason}"
            ))),
            other => Err(Error::Conflict(format!(
                "sprint {sprint} ended as {other:?}"
            ))),
        }
    };

    let base = engine.latest_space(thread)?;
    let has_warmup = base.dimension(&cfg.warmup_dim).is_some();
    let space1 = if has_warmup {
        let frozen = base.freeze(&cfg.warmup_dim, Value::Int(cfg.warmup_freeze))?;
        engine.commit_space(thread, frozen, None)?
    } else {
        base
    };
    let p1 = engine.create_sprint(&request(
        "explore",
        space1.version,
        SamplerSpec::Gp(cfg.phase1.clone()),
        cfg.phase1_fidelity,
        cfg.seed,
    ))?;
    engine.run_sprint(&p1.id, cfg.worker_limit)?;
    finished(&p1.id)?;

    let pruned = engine.prune_sprint(&p1.id, cfg.prune_k, &cfg.margins, &[])?;
    let space2 = if has_warmup {
        let (lo, hi) = cfg.warmup_range;
        let reopened = pruned.space.unfreeze(&cfg.warmup_dim, lo, hi)?;
        engine.commit_space(thread, reopened, Some(p1.id.clone()))?
    } else {
        pruned.space.clone()
    };
    let p2 = engine.create_sprint(&request(
        "refine",
        space2.version,
        SamplerSpec::Gp(cfg.phase2.clone()),
        cfg.phase2_fidelity,
        cfg.seed.wrapping_add(1),
    ))?;
    engine.run_sprint(&p2.id, cfg.worker_limit)?;
    finished(&p2.id)?;

    let mut req3 = request(
        "final",
        space2.version,
        SamplerSpec::Tpe {
            n_trials: cfg.phase3_trials,
            config: cfg.phase3_tpe.clone(),
        },
        cfg.phase3_fidelity,
        cfg.seed.wrapping_add(2),
    );
    req3.pruner = PrunerSpec::Hyperband {
        eta: cfg.eta,
        max_resource: None,
    };
    req3.priming = Some(PrimingRequest {
        mode: PrimingMode::Cold,
        source: p2.id.clone(),
        top_n: cfg.cold_prime_top,
        allow_init_mismatch: false,
    });
    let p3 = engine.create_sprint(&req3)?;
    engine.run_sprint(&p3.id, cfg.worker_limit)?;
    finished(&p3.id)?;

    Ok(PhaseReport {
        thread: thread.to_string(),
        phases: vec![
            outcome(engine, 1, &p1.id)?,
            outcome(engine, 2, &p2.id)?,
            outcome(engine, 3, &p3.id)?,
        ],
        degenerate: pruned.degenerate,
    })
}
