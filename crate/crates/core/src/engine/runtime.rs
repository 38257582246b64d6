use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::fidelity::{EarlyStop, FidelitySpec};
use super::model::{
    Incumbent, ObjectiveSpec, PrimingLink, PrimingMode, PrimingRequest, Provenance, PrunerSpec,
    QueuedPoint, SamplerSpec, Sprint, SprintId, SprintStatus, SprintSummary, ThreadId,
    ThreadRecord, TickScore, Trial, TrialStatus,
};
use super::naming::{InitCheckpoint, SprintName};
use super::objective::{Control, EvalContext, ObjectiveHandle};
use super::store::{Event, EventBody, EventLog};
use crate::error::{Error, PrimingViolation, Result};
use crate::gp::gp_suggest;
use crate::hyperband::{
    bracket_schedule, derive_config, should_prune, HyperbandConfig, RungRecord, Tick,
};
use crate::seed::mix_seed;
use crate::space::{HPoint, MarginPolicy, SearchSpace, Value};
use crate::tpe::tpe_suggest;

pub type ObjectiveResolver =
    dyn Fn(&ObjectiveSpec) -> Result<Arc<dyn ObjectiveHandle>> + Send + Sync;

/// Failure rate above which a finished sprint is marked failed.
pub const MAX_FAILURE_RATE: f64 = 0.5;

/// Test hook: abort a sprint run at a fixed point without writing further events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailPoint {
    BeforeSprintSummary,
}

/// Everything the event log describes. Built only by applying events, live or
/// on replay.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    pub threads: BTreeMap<ThreadId, ThreadRecord>,
    /// Thread ids in creation order.
    pub thread_order: Vec<ThreadId>,
    pub spaces: BTreeMap<ThreadId, BTreeMap<u64, SearchSpace>>,
    pub sprints: BTreeMap<SprintId, Sprint>,
    pub seq: u64,
}

impl EngineState {
    fn sprint_mut(&mut self, id: &str) -> Result<&mut Sprint> {
        self.sprints
            .get_mut(id)
            .ok_or_else(|| Error::not_found("sprint", id))
    }

    fn trial_mut(&mut self, sprint: &str, trial: u64) -> Result<&mut Trial> {
        self.sprint_mut(sprint)?
            .trials
            .iter_mut()
            .find(|t| t.id == trial)
            .ok_or_else(|| Error::not_found("trial", trial))
    }

    pub fn sprint(&self, id: &str) -> Result<&Sprint> {
        self.sprints
            .get(id)
            .ok_or_else(|| Error::not_found("sprint", id))
    }

    pub fn thread(&self, id: &str) -> Result<&ThreadRecord> {
        self.threads
            .get(id)
            .ok_or_else(|| Error::not_found("thread", id))
    }

    pub fn space(&self, thread: &str, version: u64) -> Result<&SearchSpace> {
        self.spaces
            .get(thread)
            .and_then(|m| m.get(&version))
            .ok_or_else(|| Error::not_found("space version", format!("{thread}/v{version}")))
    }

    pub fn apply(&mut self, event: &Event) -> Result<()> {
        self.seq = self.seq.max(event.seq);
        match &event.body {
            EventBody::ThreadCreated { thread } => {
                self.thread_order.push(thread.id.clone());
                self.threads.insert(thread.id.clone(), thread.clone());
            }
            EventBody::SpaceCommitted { space, .. } => {
                let thread = self
                    .threads
                    .get_mut(&event.thread)
                    .ok_or_else(|| Error::not_found("thread", &event.thread))?;
                thread.space_versions.push(space.version);
                self.spaces
                    .entry(event.thread.clone())
                    .or_default()
                    .insert(space.version, space.clone());
            }
            EventBody::SprintCreated { sprint } => {
                let thread = self
                    .threads
                    .get_mut(&sprint.thread)
                    .ok_or_else(|| Error::not_found("thread", &sprint.thread))?;
                thread.sprints.push(sprint.id.clone());
                self.sprints.insert(sprint.id.clone(), sprint.clone());
            }
            EventBody::TrialPrimed { sprint, trial } => {
                self.sprint_mut(sprint)?.trials.push(trial.clone());
            }
            EventBody::PrimingLinked {
                sprint,
                link,
                queued,
            } => {
                let s = self.sprint_mut(sprint)?;
                s.priming.push(link.clone());
                s.queue.extend(queued.iter().cloned());
            }
            EventBody::TrialStarted { sprint, trial } => {
                let s = self.sprint_mut(sprint)?;
                if let Provenance::ColdPrimed {
                    sprint: src,
                    trial: src_trial,
                } = &trial.provenance
                {
                    if let Some(i) = s
                        .queue
                        .iter()
                        .position(|q| &q.source_sprint == src && q.source_trial == *src_trial)
                    {
                        s.queue.remove(i);
                    }
                }
                let mut t = trial.clone();
                t.started_at = Some(event.ts);
                let at = s.trials.partition_point(|x| x.id < t.id);
                s.trials.insert(at, t);
            }
            EventBody::Tick {
                sprint,
                trial,
                report,
                rungs,
            } => {
                let t = self.trial_mut(sprint, *trial)?;
                t.intermediate.push(*report);
                t.rungs.extend(rungs.iter().cloned());
            }
            EventBody::TrialFinished {
                sprint,
                trial,
                status,
                final_score,
                epochs,
                error,
            } => {
                let t = self.trial_mut(sprint, *trial)?;
                t.status = *status;
                t.final_score = *final_score;
                t.epochs = *epochs;
                t.error = error.clone();
                t.finished_at = Some(event.ts);
            }
            EventBody::SprintStatus { sprint, status } => {
                self.sprint_mut(sprint)?.status = status.clone();
            }
            EventBody::SprintSummary { .. } => {}
        }
        Ok(())
    }
}

/// Request to open a sprint on a thread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SprintRequest {
    pub thread: ThreadId,
    pub model_type: String,
    pub variant: String,
    pub grouping: String,
    #[serde(default)]
    pub suffix: String,
    /// Defaults to the thread's latest space version.
    #[serde(default)]
    pub space_version: Option<u64>,
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub pruner: PrunerSpec,
    pub fidelity: FidelitySpec,
    #[serde(default)]
    pub init_checkpoint: InitCheckpoint,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub priming: Option<PrimingRequest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub space: SearchSpace,
    pub degenerate: Vec<String>,
}

/// Sprint lifecycle manager over an append-only event log.
pub struct Engine {
    state: RwLock<EngineState>,
    log: Mutex<EventLog>,
    resolver: Box<ObjectiveResolver>,
    fail_point: Mutex<Option<FailPoint>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("root", &self.lock_log().root())
            .finish()
    }
}

fn no_resolver(spec: &ObjectiveSpec) -> Result<Arc<dyn ObjectiveHandle>> {
    Err(Error::not_found("objective", &spec.kind))
}

impl Engine {
    pub fn in_memory() -> Self {
        Engine::from_log(EventLog::in_memory(), EngineState::default())
    }

    /// Opens a store directory and rebuilds state by replaying its logs.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let log = EventLog::open(root)?;
        let mut state = EngineState::default();
        for event in log.read_all()? {
            state.apply(&event)?;
        }
        Ok(Engine::from_log(log, state))
    }

    fn from_log(log: EventLog, state: EngineState) -> Self {
        Engine {
            state: RwLock::new(state),
            log: Mutex::new(log),
            resolver: Box::new(no_resolver),
            fail_point: Mutex::new(None),
        }
    }

    pub fn with_resolver<F>(mut self, resolver: F) -> Self
    where
        F: Fn(&ObjectiveSpec) -> Result<Arc<dyn ObjectiveHandle>> + Send + Sync + 'static,
    {
        self.resolver = Box::new(resolver);
        self
    }

    pub fn set_fail_point(&self, point: Option<FailPoint>) {
        *self.fail_point.lock().unwrap_or_else(|e| e.into_inner()) = point;
    }

    fn lock_log(&self) -> MutexGuard<'_, EventLog> {
        self.log.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn read(&self) -> RwLockReadGuard<'_, EngineState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, EngineState> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Validates against current state and appends the produced events
    /// atomically with respect to other writers.
    fn emit<T, F>(&self, build: F) -> Result<T>
    where
        F: FnOnce(&EngineState) -> Result<(Vec<(ThreadId, EventBody)>, T)>,
    {
        let mut log = self.lock_log();
        let (bodies, out) = build(&self.read())?;
        for (thread, body) in bodies {
            let event = Event {
                seq: self.read().seq + 1,
                ts: Utc::now(),
                thread,
                body,
            };
            log.append(&event)?;
            self.write().apply(&event)?;
        }
        Ok(out)
    }

    pub fn snapshot(&self) -> EngineState {
        self.read().clone()
    }

    pub fn threads(&self) -> Vec<ThreadRecord> {
        let st = self.read();
        st.thread_order
            .iter()
            .filter_map(|id| st.threads.get(id).cloned())
            .collect()
    }

    pub fn thread(&self, id: &str) -> Result<ThreadRecord> {
        self.read().thread(id).cloned()
    }

    pub fn sprints_of(&self, thread: &str) -> Result<Vec<Sprint>> {
        let st = self.read();
        let t = st.thread(thread)?;
        Ok(t.sprints
            .iter()
            .filter_map(|id| st.sprints.get(id).cloned())
            .collect())
    }

    pub fn sprint(&self, id: &str) -> Result<Sprint> {
        self.read().sprint(id).cloned()
    }

    pub fn space(&self, thread: &str, version: u64) -> Result<SearchSpace> {
        self.read().space(thread, version).cloned()
    }

    pub fn latest_space(&self, thread: &str) -> Result<SearchSpace> {
        let st = self.read();
        let t = st.thread(thread)?;
        let v = *t
            .space_versions
            .last()
            .ok_or_else(|| Error::not_found("space", thread))?;
        st.space(thread, v).cloned()
    }

    pub fn objective(&self, thread: &str) -> Result<Arc<dyn ObjectiveHandle>> {
        let spec = self.read().thread(thread)?.objective.clone();
        (self.resolver)(&spec)
    }

    /// Creates a thread; its first space is `space` or the objective's default.
    pub fn create_thread(
        &self,
        name: &str,
        model_config_id: &str,
        objective: ObjectiveSpec,
        space: Option<SearchSpace>,
    ) -> Result<ThreadRecord> {
        let mut space = match space {
            Some(s) => s,
            None => (self.resolver)(&objective)?
                .default_space()
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "objective {} has no default space",
                        objective.kind
                    ))
                })?,
        };
        space.validate()?;
        space.version = 1;
        space.parent = None;
        self.emit(|st| {
            let id = format!("t{}", st.threads.len() + 1);
            let thread = ThreadRecord {
                id: id.clone(),
                name: name.to_string(),
                model_config_id: model_config_id.to_string(),
                objective,
                sprints: Vec::new(),
                space_versions: Vec::new(),
                created_at: Utc::now(),
            };
            let bodies = vec![
                (id.clone(), EventBody::ThreadCreated { thread }),
                (
                    id.clone(),
                    EventBody::SpaceCommitted {
                        space,
                        source_sprint: None,
                    },
                ),
            ];
            Ok((bodies, id))
        })
        .and_then(|id| self.thread(&id))
    }

    /// Commits `space` as the thread's next version and returns it as stored.
    pub fn commit_space(
        &self,
        thread: &str,
        mut space: SearchSpace,
        source_sprint: Option<SprintId>,
    ) -> Result<SearchSpace> {
        space.validate()?;
        let thread_id = thread.to_string();
        let version = self.emit(|st| {
            let t = st.thread(thread)?;
            let next = t.space_versions.iter().max().copied().unwrap_or(0) + 1;
            if space.parent.is_none() {
                space.parent = t.space_versions.last().copied();
            }
            space.version = next;
            Ok((
                vec![(
                    thread_id,
                    EventBody::SpaceCommitted {
                        space,
                        source_sprint,
                    },
                )],
                next,
            ))
        })?;
        let space = self.space(thread, version)?;
        self.lock_log()
            .write_snapshot(thread, &format!("space-v{version}"), &space)?;
        Ok(space)
    }

    /// Shrinks the sprint's space to the top-`k` hull and applies `freezes` in
    /// the same new version.
    pub fn prune_sprint(
        &self,
        sprint_id: &str,
        k: usize,
        margins: &MarginPolicy,
        freezes: &[(String, Value)],
    ) -> Result<PruneOutcome> {
        let sprint = self.sprint(sprint_id)?;
        if sprint.status == SprintStatus::Running {
            return Err(Error::Conflict(format!("sprint {sprint_id} is running")));
        }
        let base = self.space(&sprint.thread, sprint.space_version)?;
        let ranked = sprint.ranking();
        let scored: Vec<(&HPoint, f64)> = ranked.iter().map(|(t, s)| (&t.point, *s)).collect();
        let pruned = base.prune_to_top_k(&scored, k, margins)?;
        let mut space = pruned.space;
        if !freezes.is_empty() {
            let mut frozen = space.freeze_many(freezes)?;
            frozen.version = space.version;
            frozen.parent = space.parent;
            let mut audit = space.audit;
            audit.append(&mut frozen.audit);
            frozen.audit = audit;
            space = frozen;
        }
        let space = self.commit_space(&sprint.thread, space, Some(sprint.id.clone()))?;
        Ok(PruneOutcome {
            space,
            degenerate: pruned.degenerate,
        })
    }

    /// Opens a sprint, applying any priming request atomically with creation.
    pub fn create_sprint(&self, req: &SprintRequest) -> Result<Sprint> {
        req.sampler.validate()?;
        req.fidelity.validate()?;
        let objective = self.objective(&req.thread)?;
        check_scheduler_compression(&req.fidelity, objective.design_epochs())?;
        if let PrunerSpec::Hyperband { eta, max_resource } = req.pruner {
            derive_config(
                max_resource.unwrap_or(default_max_resource(&req.fidelity)),
                eta,
            )?;
        }
        let id = self.emit(|st| {
            let thread = st.thread(&req.thread)?;
            let version = match req.space_version {
                Some(v) => v,
                None => *thread
                    .space_versions
                    .last()
                    .ok_or_else(|| Error::not_found("space", &req.thread))?,
            };
            let space = st.space(&req.thread, version)?;
            let mut name = SprintName::new(
                &req.model_type,
                &req.variant,
                &req.grouping,
                &req.fidelity,
                req.init_checkpoint,
            )
            .with_suffix(&req.suffix);
            let same = |s: &&Sprint| {
                let mut n = s.name.clone();
                n.version = name.version;
                n == name
            };
            let taken = thread
                .sprints
                .iter()
                .filter_map(|id| st.sprints.get(id))
                .filter(same)
                .map(|s| s.name.version)
                .max()
                .unwrap_or(0);
            name.version = taken + 1;
            name.validate()?;
            let sprint = Sprint {
                id: format!("s{}", st.sprints.len() + 1),
                thread: req.thread.clone(),
                name,
                model_config_id: thread.model_config_id.clone(),
                space_version: version,
                sampler: req.sampler.clone(),
                pruner: req.pruner,
                fidelity: req.fidelity,
                init_checkpoint: req.init_checkpoint,
                seed: req.seed,
                status: SprintStatus::Pending,
                trials: Vec::new(),
                priming: Vec::new(),
                queue: Vec::new(),
                created_at: Utc::now(),
            };
            let mut bodies = Vec::new();
            if let Some(p) = &req.priming {
                bodies = plan_priming(st, &sprint, space, p)?;
            }
            let id = sprint.id.clone();
            bodies.insert(0, (req.thread.clone(), EventBody::SprintCreated { sprint }));
            Ok((bodies, id))
        })?;
        self.sprint(&id)
    }

    /// Primes a pending sprint from another sprint of the same thread.
    pub fn prime(&self, target: &str, req: &PrimingRequest) -> Result<PrimingLink> {
        self.emit(|st| {
            let sprint = st.sprint(target)?;
            if sprint.status != SprintStatus::Pending {
                return Err(Error::Conflict(format!(
                    "sprint {target} has already started"
                )));
            }
            let space = st.space(&sprint.thread, sprint.space_version)?;
            let bodies = plan_priming(st, sprint, space, req)?;
            let link = bodies
                .iter()
                .find_map(|(_, b)| match b {
                    EventBody::PrimingLinked { link, .. } => Some(link.clone()),
                    _ => None,
                })
                .expect("priming plan links the source");
            Ok((bodies, link))
        })
    }

    /// Runs a pending sprint to completion with up to `worker_limit`
    /// concurrent trials. Only proposals independent of pending results
    /// (random prefix, cold-primed points) run concurrently.
    pub fn run_sprint(&self, sprint_id: &str, worker_limit: usize) -> Result<SprintSummary> {
        self.start_sprint(sprint_id)?;
        self.continue_sprint(sprint_id, worker_limit)
    }

    /// Marks a pending sprint running. Fails with a conflict if it is not
    /// pending or another sprint of its thread is running.
    pub fn start_sprint(&self, sprint_id: &str) -> Result<()> {
        let thread = self.sprint(sprint_id)?.thread;
        self.objective(&thread)?;
        self.emit(|st| {
            let sprint = st.sprint(sprint_id)?;
            match &sprint.status {
                SprintStatus::Pending => {}
                SprintStatus::Running => {
                    return Err(Error::Conflict(format!("sprint {sprint_id} is running")))
                }
                _ => {
                    return Err(Error::Conflict(format!(
                        "sprint {sprint_id} has already run"
                    )))
                }
            }
            let t = st.thread(&thread)?;
            if let Some(other) = t.sprints.iter().find(|id| {
                st.sprints
                    .get(*id)
                    .is_some_and(|s| s.status == SprintStatus::Running)
            }) {
                return Err(Error::Conflict(format!(
                    "sprint {other} is already running on thread {thread}"
                )));
            }
            let body = EventBody::SprintStatus {
                sprint: sprint_id.to_string(),
                status: SprintStatus::Running,
            };
            Ok((vec![(thread.clone(), body)], ()))
        })
    }

    /// Executes the remaining budget of a started sprint and closes it.
    pub fn continue_sprint(&self, sprint_id: &str, worker_limit: usize) -> Result<SprintSummary> {
        let sprint = self.sprint(sprint_id)?;
        if sprint.status != SprintStatus::Running {
            return Err(Error::Conflict(format!(
                "sprint {sprint_id} has not been started"
            )));
        }
        let thread = sprint.thread;
        let outcome = self
            .objective(&thread)
            .and_then(|objective| self.drive(sprint_id, objective.as_ref(), worker_limit.max(1)));
        if *self.fail_point.lock().unwrap_or_else(|e| e.into_inner())
            == Some(FailPoint::BeforeSprintSummary)
        {
            return Err(Error::Conflict("run aborted at fail point".into()));
        }
        let sprint = self.sprint(sprint_id)?;
        let status = match &outcome {
            Err(e) => SprintStatus::Failed {
                reason: e.to_string(),
            },
            Ok(()) => {
                let used = sprint
                    .trials
                    .iter()
                    .filter(|t| t.provenance.consumes_budget());
                let (n, failed) = used.fold((0usize, 0usize), |(n, f), t| {
                    (n + 1, f + usize::from(t.status == TrialStatus::Failed))
                });
                if n > 0 && failed as f64 / n as f64 > MAX_FAILURE_RATE {
                    SprintStatus::Failed {
                        reason: format!("{failed} of {n} trials failed"),
                    }
                } else {
                    SprintStatus::Complete
                }
            }
        };
        let mut summary = SprintSummary::of(&sprint);
        summary.status = status.clone();
        self.emit(|_| {
            let bodies = vec![
                (
                    thread.clone(),
                    EventBody::SprintSummary {
                        summary: summary.clone(),
                    },
                ),
                (
                    thread.clone(),
                    EventBody::SprintStatus {
                        sprint: sprint_id.to_string(),
                        status,
                    },
                ),
            ];
            Ok((bodies, ()))
        })?;
        let sprint = self.sprint(sprint_id)?;
        self.lock_log()
            .write_snapshot(&thread, &format!("sprint-{sprint_id}"), &sprint)?;
        outcome.map(|()| summary)
    }

    fn drive(
        &self,
        sprint_id: &str,
        objective: &dyn ObjectiveHandle,
        worker_limit: usize,
    ) -> Result<()> {
        let sprint = self.sprint(sprint_id)?;
        let space = self.space(&sprint.thread, sprint.space_version)?;
        let hyperband = match sprint.pruner {
            PrunerSpec::None => None,
            PrunerSpec::Hyperband { eta, max_resource } => Some(derive_config(
                max_resource.unwrap_or(default_max_resource(&sprint.fidelity)),
                eta,
            )?),
        };
        loop {
            let sprint = self.sprint(sprint_id)?;
            if sprint.budget_used() >= sprint.sampler.budget() {
                return Ok(());
            }
            let batch = propose_batch(&sprint, &space, worker_limit)?;
            if batch.len() == 1 {
                let trial = batch.into_iter().next().expect("one trial");
                self.execute_trial(&sprint, trial, objective, hyperband.as_ref())?;
            } else {
                let (sprint, hyperband) = (&sprint, hyperband.as_ref());
                std::thread::scope(|scope| {
                    let handles: Vec<_> = batch
                        .into_iter()
                        .map(|trial| {
                            scope.spawn(move || {
                                self.execute_trial(sprint, trial, objective, hyperband)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| {
                            h.join()
                                .unwrap_or_else(|_| Err(Error::Objective("worker panicked".into())))
                        })
                        .collect::<Result<Vec<()>>>()
                })?;
            }
        }
    }

    fn execute_trial(
        &self,
        sprint: &Sprint,
        mut trial: Trial,
        objective: &dyn ObjectiveHandle,
        hyperband: Option<&HyperbandConfig>,
    ) -> Result<()> {
        let sid = sprint.id.clone();
        let thread = sprint.thread.clone();
        let id = trial.id;
        let mut rung_resources: Vec<u64> = Vec::new();
        if let Some(cfg) = hyperband {
            let s = (id % (cfg.s_max as u64 + 1)) as u32;
            trial.bracket = Some(s);
            let rungs = bracket_schedule(cfg, s)?.rungs;
            rung_resources = rungs[..rungs.len() - 1]
                .iter()
                .map(|r| r.resource.ceil() as u64)
                .collect();
        }
        let (point, fidelity) = (trial.point.clone(), trial.fidelity);
        let ctx = EvalContext {
            seed: trial.seed,
            rotation: trial.rotation,
        };
        let bracket = trial.bracket;
        self.emit(|_| {
            Ok((
                vec![(
                    thread.clone(),
                    EventBody::TrialStarted {
                        sprint: sid.clone(),
                        trial,
                    },
                )],
                (),
            ))
        })?;

        let mut next_rung = 0usize;
        let mut bad_score = false;
        let mut log_error: Option<Error> = None;
        let eta = hyperband.map(|c| c.eta).unwrap_or(3);
        let mut reporter = |tick: &Tick, score: f64| -> Control {
            if !score.is_finite() {
                bad_score = true;
                return Control::Stop;
            }
            let mut rungs = Vec::new();
            if tick.prunable {
                while next_rung < rung_resources.len()
                    && rung_resources[next_rung] <= tick.epoch as u64
                {
                    rungs.push(RungRecord {
                        trial: id,
                        resource: rung_resources[next_rung],
                        score,
                    });
                    next_rung += 1;
                }
            }
            let decision = self.emit(|st| {
                let mut prune = false;
                if !rungs.is_empty() {
                    let peers_sprint = st.sprint(&sid)?;
                    for rec in &rungs {
                        let mut peers: Vec<RungRecord> = peers_sprint
                            .trials
                            .iter()
                            .filter(|t| t.id != id && t.bracket == bracket)
                            .flat_map(|t| {
                                t.rungs
                                    .iter()
                                    .filter(|r| r.resource == rec.resource)
                                    .cloned()
                            })
                            .collect();
                        peers.push(rec.clone());
                        if should_prune(&peers, score, eta) {
                            prune = true;
                            break;
                        }
                    }
                }
                let body = EventBody::Tick {
                    sprint: sid.clone(),
                    trial: id,
                    report: TickScore { tick: *tick, score },
                    rungs: rungs.clone(),
                };
                Ok((vec![(thread.clone(), body)], prune))
            });
            match decision {
                Ok(true) => Control::Stop,
                Ok(false) => Control::Continue,
                Err(e) => {
                    log_error = Some(e);
                    Control::Stop
                }
            }
        };
        let result = catch_unwind(AssertUnwindSafe(|| {
            objective.evaluate(&point, &fidelity, &ctx, &mut reporter)
        }))
        .unwrap_or_else(|_| Err(Error::Objective("objective panicked".into())));
        if let Some(e) = log_error {
            return Err(e);
        }
        let last_score = || {
            self.read()
                .sprint(&sid)
                .ok()
                .and_then(|s| s.trials.iter().find(|t| t.id == id))
                .and_then(|t| t.intermediate.last().map(|r| r.score))
        };
        let (status, final_score, epochs, error) = match result {
            Err(e) => (TrialStatus::Failed, None, 0, Some(e.to_string())),
            Ok(_) if bad_score => (
                TrialStatus::Failed,
                None,
                0,
                Some("non-finite score reported".into()),
            ),
            Ok(ev) if !ev.score.is_finite() => (
                TrialStatus::Failed,
                None,
                ev.epochs,
                Some("non-finite score".into()),
            ),
            Ok(ev) if ev.stopped => (
                TrialStatus::Pruned,
                last_score().or(Some(ev.score)),
                ev.epochs,
                None,
            ),
            Ok(ev) => (TrialStatus::Complete, Some(ev.score), ev.epochs, None),
        };
        if let Some(e) = &error {
            log::warn!("trial {id} of sprint {sid} failed: {e}");
        }
        self.emit(|_| {
            let body = EventBody::TrialFinished {
                sprint: sid.clone(),
                trial: id,
                status,
                final_score,
                epochs,
                error,
            };
            Ok((vec![(thread.clone(), body)], ()))
        })
    }

    /// Incumbent of a finished sprint.
    pub fn incumbent(&self, sprint_id: &str) -> Result<Option<Incumbent>> {
        Ok(self.sprint(sprint_id)?.incumbent())
    }
}

fn default_max_resource(fidelity: &FidelitySpec) -> u64 {
    fidelity.max_epochs as u64 + fidelity.calibration_epochs as u64
}

/// Refuses a shortened epoch budget under a learning-rate schedule designed
/// for longer runs unless the trial stops early instead.
pub fn check_scheduler_compression(
    fidelity: &FidelitySpec,
    design_epochs: Option<u32>,
) -> Result<()> {
    if let Some(design) = design_epochs {
        if fidelity.scheduler_enabled
            && fidelity.max_epochs < design
            && fidelity.early_stop == EarlyStop::None
        {
            return Err(Error::InvalidArgument(format!(
                "scheduler designed for {design} epochs would be compressed into {}; use early stopping instead",
                fidelity.max_epochs
            )));
        }
    }
    Ok(())
}

fn plan_priming(
    st: &EngineState,
    target: &Sprint,
    space: &SearchSpace,
    req: &PrimingRequest,
) -> Result<Vec<(ThreadId, EventBody)>> {
    if req.top_n == 0 {
        return Err(Error::InvalidArgument("top_n must be >= 1".into()));
    }
    let source = st.sprint(&req.source)?;
    if source.thread != target.thread {
        return Err(Error::priming(
            PrimingViolation::ThreadIsolation,
            format!(
                "sprint {} belongs to thread {}, not {}",
                source.id, source.thread, target.thread
            ),
        ));
    }
    if source.model_config_id != target.model_config_id {
        return Err(Error::priming(
            PrimingViolation::ModelConfigMismatch,
            "priming requires the same model configuration",
        ));
    }
    if source.status == SprintStatus::Running {
        return Err(Error::Conflict(format!(
            "source sprint {} is running",
            source.id
        )));
    }
    if req.mode == PrimingMode::Warm {
        if source.fidelity != target.fidelity {
            return Err(Error::priming(
                PrimingViolation::FidelityMismatch,
                format!(
                    "warm priming requires identical fidelity ({} vs {})",
                    source.fidelity, target.fidelity
                ),
            ));
        }
        if source.init_checkpoint != target.init_checkpoint && !req.allow_init_mismatch {
            return Err(Error::priming(
                PrimingViolation::InitMismatch,
                format!(
                    "warm priming requires the same init checkpoint ({} vs {})",
                    source.init_checkpoint, target.init_checkpoint
                ),
            ));
        }
    }
    let top: Vec<(&Trial, f64)> = source.ranking().into_iter().take(req.top_n).collect();
    let (kept, dropped): (Vec<_>, Vec<_>) =
        top.into_iter().partition(|(t, _)| space.contains(&t.point));
    let filtered: Vec<u64> = dropped.iter().map(|(t, _)| t.id).collect();
    if !filtered.is_empty() {
        log::warn!(
            "{} primed point(s) from sprint {} fall outside the target space",
            filtered.len(),
            source.id
        );
    }
    let thread = target.thread.clone();
    let mut bodies = Vec::new();
    let mut queued = Vec::new();
    let base = target.trials.len() as u64;
    for (i, (t, score)) in kept.iter().enumerate() {
        match req.mode {
            PrimingMode::Warm => {
                let trial = Trial {
                    id: base + i as u64,
                    point: t.point.clone(),
                    fidelity: target.fidelity,
                    status: TrialStatus::Complete,
                    provenance: Provenance::WarmPrimed {
                        sprint: source.id.clone(),
                        trial: t.id,
                    },
                    acquisition: None,
                    seed: t.seed,
                    rotation: t.rotation,
                    intermediate: t.intermediate.clone(),
                    rungs: Vec::new(),
                    bracket: None,
                    final_score: Some(*score),
                    epochs: t.epochs,
                    error: None,
                    started_at: t.started_at,
                    finished_at: t.finished_at,
                };
                bodies.push((
                    thread.clone(),
                    EventBody::TrialPrimed {
                        sprint: target.id.clone(),
                        trial,
                    },
                ));
            }
            PrimingMode::Cold => queued.push(QueuedPoint {
                point: t.point.clone(),
                source_sprint: source.id.clone(),
                source_trial: t.id,
            }),
        }
    }
    let link = PrimingLink {
        mode: req.mode,
        source: source.id.clone(),
        requested: req.top_n,
        imported: kept.len(),
        filtered,
    };
    bodies.push((
        thread,
        EventBody::PrimingLinked {
            sprint: target.id.clone(),
            link,
            queued,
        },
    ));
    Ok(bodies)
}

fn history(sprint: &Sprint) -> Vec<(HPoint, f64)> {
    sprint
        .trials
        .iter()
        .filter_map(|t| t.history_score().map(|s| (t.point.clone(), s)))
        .collect()
}

/// Next proposals. The first may depend on history; later ones only if they
/// are independent of it.
fn propose_batch(sprint: &Sprint, space: &SearchSpace, worker_limit: usize) -> Result<Vec<Trial>> {
    let budget = sprint.sampler.budget();
    let mut used = sprint.budget_used();
    let mut next_id = sprint.trials.len() as u64;
    let hist = history(sprint);
    let mut queue = sprint.queue.iter();
    let mut out = Vec::new();
    while out.len() < worker_limit && used < budget {
        let ordinal = used;
        let seed = mix_seed(sprint.seed, ordinal as u64);
        let (point, provenance, acquisition) = if let Some(q) = queue.next() {
            (
                q.point.clone(),
                Provenance::ColdPrimed {
                    sprint: q.source_sprint.clone(),
                    trial: q.source_trial,
                },
                None,
            )
        } else {
            let random = match &sprint.sampler {
                SamplerSpec::Gp(c) => ordinal < c.n_random || hist.is_empty(),
                SamplerSpec::Tpe { config, .. } => hist.len() < config.n_startup.max(2),
            };
            if !random && !out.is_empty() {
                break;
            }
            match &sprint.sampler {
                SamplerSpec::Gp(c) => {
                    let s = gp_suggest(c, space, &hist, ordinal, seed)?;
                    let random = s.acquisition.is_none();
                    (s.point, Provenance::Fresh { random }, s.acquisition)
                }
                SamplerSpec::Tpe { config, .. } => (
                    tpe_suggest(&hist, space, config, seed)?,
                    Provenance::Fresh { random },
                    None,
                ),
            }
        };
        out.push(Trial {
            id: next_id,
            point,
            fidelity: sprint.fidelity,
            status: TrialStatus::Running,
            provenance,
            acquisition,
            seed: mix_seed(sprint.seed, 0x7472_6961_6c00 + next_id),
            rotation: next_id,
            intermediate: Vec::new(),
            rungs: Vec::new(),
            bracket: None,
            final_score: None,
            epochs: 0,
            error: None,
            started_at: None,
            finished_at: None,
        });
        next_id += 1;
        used += 1;
    }
    Ok(out)
}

/// Wall-clock span of a sprint's trials, if any ran.
pub fn trial_span(sprint: &Sprint) -> Option<(DateTime<Utc>, DateTime<Utc>)> {
    let start = sprint.trials.iter().filter_map(|t| t.started_at).min()?;
    let end = sprint.trials.iter().filter_map(|t| t.finished_at).max()?;
    Some((start, end))
}
