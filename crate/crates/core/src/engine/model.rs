use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::fidelity::FidelitySpec;
use super::naming::{InitCheckpoint, SprintName};
use crate::error::{Error, Result};
use crate::gp::{AcquisitionKind, GpConfig};
use crate::hyperband::{RungRecord, Tick};
use crate::space::HPoint;
use crate::tpe::TpeConfig;

pub type ThreadId = String;
pub type SprintId = String;

/// Names an objective the engine can resolve to a handle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: String,
    #[serde(default)]
    pub seed: u64,
    /// Parameter grouping label, e.g. `GLOBAL`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grouping: Option<String>,
}

impl ObjectiveSpec {
    pub fn new(kind: &str, seed: u64) -> Self {
        ObjectiveSpec {
            kind: kind.to_string(),
            seed,
            grouping: None,
        }
    }

    pub fn with_grouping(mut self, grouping: &str) -> Self {
        self.grouping = Some(grouping.to_string());
        self
    }
}

/// A lineage of sprints sharing one model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadRecord {
    pub id: ThreadId,
    pub name: String,
    pub model_config_id: String,
    pub objective: ObjectiveSpec,
    pub sprints: Vec<SprintId>,
    /// Committed space versions, ascending.
    pub space_versions: Vec<u64>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Pending,
    Running,
    Pruned,
    Failed,
    Complete,
}

impl TrialStatus {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            TrialStatus::Pruned | TrialStatus::Failed | TrialStatus::Complete
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Fresh { random: bool },
    WarmPrimed { sprint: SprintId, trial: u64 },
    ColdPrimed { sprint: SprintId, trial: u64 },
}

impl Provenance {
    /// Warm-primed trials are copied results and use none of the sprint budget.
    pub fn consumes_budget(&self) -> bool {
        !matches!(self, Provenance::WarmPrimed { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TickScore {
    #[serde(flatten)]
    pub tick: Tick,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: u64,
    pub point: HPoint,
    pub fidelity: FidelitySpec,
    pub status: TrialStatus,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisition: Option<AcquisitionKind>,
    pub seed: u64,
    pub rotation: u64,
    #[serde(default)]
    pub intermediate: Vec<TickScore>,
    #[serde(default)]
    pub rungs: Vec<RungRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bracket: Option<u32>,
    pub final_score: Option<f64>,
    #[serde(default)]
    pub epochs: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
}

impl Trial {
    /// Score usable as sampler history.
    pub fn history_score(&self) -> Option<f64> {
        match self.status {
            TrialStatus::Complete => self.final_score.filter(|s| s.is_finite()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerSpec {
    Gp(GpConfig),
    Tpe {
        n_trials: usize,
        #[serde(default)]
        config: TpeConfig,
    },
}

impl SamplerSpec {
    /// Number of budget-consuming trials the sprint runs.
    pub fn budget(&self) -> usize {
        match self {
            SamplerSpec::Gp(c) => c.n_calls,
            SamplerSpec::Tpe { n_trials, .. } => *n_trials,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SamplerSpec::Gp(c) => {
                if c.n_calls == 0 {
                    return Err(Error::InvalidArgument("n_calls must be >= 1".into()));
                }
                if c.n_random > c.n_calls {
                    return Err(Error::InvalidArgument("n_random exceeds n_calls".into()));
                }
                Ok(())
            }
            SamplerSpec::Tpe { n_trials, config } => {
                if *n_trials == 0 {
                    return Err(Error::InvalidArgument("n_trials must be >= 1".into()));
                }
                config.validate()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrunerSpec {
    #[default]
    None,
    Hyperband {
        eta: u64,
        /// Defaults to `max_epochs + calibration_epochs`.
        #[serde(default)]
        max_resource: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimingMode {
    Warm,
    Cold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimingRequest {
    pub mode: PrimingMode,
    pub source: SprintId,
    pub top_n: usize,
    /// Permit warm priming across differing init checkpoints.
    #[serde(default)]
    pub allow_init_mismatch: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimingLink {
    pub mode: PrimingMode,
    pub source: SprintId,
    pub requested: usize,
    pub imported: usize,
    /// Source trials dropped because they fall outside the target space.
    pub filtered: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuedPoint {
    pub point: HPoint,
    pub source_sprint: SprintId,
    pub source_trial: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SprintStatus {
    Pending,
    Running,
    Complete,
    Failed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub trial: u64,
    pub score: f64,
    pub point: HPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sprint {
    pub id: SprintId,
    pub thread: ThreadId,
    pub name: SprintName,
    pub model_config_id: String,
    pub space_version: u64,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub pruner: PrunerSpec,
    pub fidelity: FidelitySpec,
    pub init_checkpoint: InitCheckpoint,
    pub seed: u64,
    pub status: SprintStatus,
    #[serde(default)]
    pub trials: Vec<Trial>,
    #[serde(default)]
    pub priming: Vec<PrimingLink>,
    #[serde(default)]
    pub queue: Vec<QueuedPoint>,
    pub created_at: DateTime<Utc>,
}

impl Sprint {
    /// Best completed trial; ties go to the earlier trial.
    pub fn incumbent(&self) -> Option<Incumbent> {
        self.trials
            .iter()
            .filter_map(|t| t.history_score().map(|s| (t, s)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.id.cmp(&b.0.id)))
            .map(|(t, s)| Incumbent {
                trial: t.id,
                score: s,
                point: t.point.clone(),
            })
    }

    /// Completed trials ranked best first.
    pub fn ranking(&self) -> Vec<(&Trial, f64)> {
        let mut ranked: Vec<(&Trial, f64)> = self
            .trials
            .iter()
            .filter_map(|t| t.history_score().map(|s| (t, s)))
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.id.cmp(&b.0.id)));
        ranked
    }

    pub fn budget_used(&self) -> usize {
        self.trials
            .iter()
            .filter(|t| t.provenance.consumes_budget())
            .count()
    }

    /// Copy with wall-clock timestamps cleared, for comparing seeded runs.
    pub fn canonical(&self) -> Sprint {
        let mut s = self.clone();
        s.created_at = DateTime::<Utc>::UNIX_EPOCH;
        for t in &mut s.trials {
            t.started_at = None;
            t.finished_at = None;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprintSummary {
    pub sprint: SprintId,
    pub status: SprintStatus,
    pub n_trials: usize,
    pub n_complete: usize,
    pub n_pruned: usize,
    pub n_failed: usize,
    pub incumbent: Option<Incumbent>,
}

impl SprintSummary {
    pub fn of(sprint: &Sprint) -> Self {
        let count = |st: TrialStatus| sprint.trials.iter().filter(|t| t.status == st).count();
        SprintSummary {
            sprint: sprint.id.clone(),
            status: sprint.status.clone(),
            n_trials: sprint.trials.len(),
            n_complete: count(TrialStatus::Complete),
            n_pruned: count(TrialStatus::Pruned),
            n_failed: count(TrialStatus::Failed),
            incumbent: sprint.incumbent(),
        }
    }
}
