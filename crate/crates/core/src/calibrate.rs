//! Threshold calibration: micro-F, SCut, permutation hill-climbing and the
//! fit/calibrate/test loop.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Micro F-beta from pooled counts; zero when `tp == 0`.
pub fn micro_f_beta(tp: u64, fp: u64, fn_: u64, beta: f64) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (b2 * p + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn f_beta(&self, beta: f64) -> f64 {
        micro_f_beta(self.tp, self.fp, self.fn_, beta)
    }

    pub fn f1(&self) -> f64 {
        self.f_beta(1.0)
    }

    pub fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub mention: f64,
    pub coref: f64,
    pub relation: Vec<f64>,
}

impl ThresholdSet {
    pub fn uniform(value: f64, n_classes: usize) -> Self {
        ThresholdSet {
            mention: value,
            coref: value,
            relation: vec![value; n_classes],
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if self.relation.len() != n_classes {
            return Err(Error::DimensionMismatch {
                expected: n_classes,
                got: self.relation.len(),
            });
        }
        let all = [self.mention, self.coref]
            .into_iter()
            .chain(self.relation.iter().copied());
        for v in all {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "threshold {v} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Relation vector moved by `offset`, clipped to `[0, 1]`.
    pub fn shifted_relation(&self, offset: f64) -> Vec<f64> {
        self.relation
            .iter()
            .map(|t| (t + offset).clamp(0.0, 1.0))
            .collect()
    }
}

/// One binary decision: `(probability, gold)`.
pub type Scored = (f64, bool);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub prob: f64,
    pub gold: bool,
    pub class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScutResult {
    pub threshold: f64,
    /// F-beta at the unguarded cut.
    pub f_beta: f64,
    /// Whether the low bound replaced the optimal cut.
    pub guarded: bool,
}

/// Cut maximizing F-beta under the rule `p > cut`, over `0`, `1` and the
/// midpoints between consecutive distinct probabilities. Ties pick the
/// smallest cut. With no positive instances the cut is `1.0`.
pub fn scut(instances: &[Scored], beta: f64, low_bound: f64) -> ScutResult {
    let positives = instances.iter().filter(|(_, g)| *g).count() as u64;
    if positives == 0 {
        return ScutResult {
            threshold: 1.0f64.max(low_bound),
            f_beta: 0.0,
            guarded: false,
        };
    }
    let mut sorted: Vec<Scored> = instances.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // predicted = everything strictly above the cut
    let above_zero = sorted.iter().filter(|(p, _)| *p > 0.0);
    let mut tp = above_zero.clone().filter(|(_, g)| *g).count() as u64;
    let mut fp = above_zero.count() as u64 - tp;
    let mut best = (0.0, micro_f_beta(tp, fp, positives - tp, beta));

    let mut i = sorted
        .iter()
        .position(|(p, _)| *p > 0.0)
        .unwrap_or(sorted.len());
    while i < sorted.len() {
        let v = sorted[i].0;
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == v {
            if sorted[j].1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            j += 1;
        }
        let cut = if j < sorted.len() {
            0.5 * (v + sorted[j].0)
        } else {
            1.0
        };
        let f = micro_f_beta(tp, fp, positives - tp, beta);
        if f > best.1 {
            best = (cut, f);
        }
        i = j;
    }
    ScutResult {
        threshold: best.0.max(low_bound),
        f_beta: best.1,
        guarded: best.0 < low_bound,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassThresholds {
    pub thresholds: Vec<f64>,
    /// Classes without any instance; their entry is the low bound.
    pub empty_classes: Vec<usize>,
}

pub fn scut_per_class(
    instances: &[ScoredInstance],
    n_classes: usize,
    beta: f64,
    low_bound: f64,
) -> Result<PerClassThresholds> {
    let mut by_class: Vec<Vec<Scored>> = vec![Vec::new(); n_classes];
    for inst in instances {
        let slot = by_class.get_mut(inst.class).ok_or_else(|| {
            Error::InvalidArgument(format!("class id {} outside 0..{n_classes}", inst.class))
        })?;
        slot.push((inst.prob, inst.gold));
    }
    let mut thresholds = Vec::with_capacity(n_classes);
    let mut empty_classes = Vec::new();
    for (c, inst) in by_class.iter().enumerate() {
        if inst.is_empty() {
            warn!("relation class {c} has no instances; using low bound {low_bound}");
            empty_classes.push(c);
            thresholds.push(low_bound);
        } else {
            thresholds.push(scut(inst, beta, low_bound).threshold);
        }
    }
    Ok(PerClassThresholds {
        thresholds,
        empty_classes,
    })
}

/// `{base, base - delta, base + delta}` clipped to `[0, 1]`, deduplicated, base first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub base: f64,
    pub delta: f64,
    pub values: Vec<f64>,
}

impl CandidateSet {
    pub fn new(base: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument("delta must be > 0".into()));
        }
        let base = base.clamp(0.0, 1.0);
        let mut values = vec![base];
        for v in [base - delta, base + delta] {
            let v = v.clamp(0.0, 1.0);
            if !values.contains(&v) {
                values.push(v);
            }
        }
        Ok(CandidateSet {
            base,
            delta,
            values,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Fixed(f64),
    Triplet(CandidateSet),
}

impl Component {
    fn values(&self) -> Vec<f64> {
        match self {
            Component::Fixed(v) => vec![*v],
            Component::Triplet(c) => c.values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RelationComponent {
    Fixed(Vec<f64>),
    /// The whole vector shifted by `0`, `-delta`, `+delta`.
    Shifted {
        base: Vec<f64>,
        delta: f64,
    },
}

/// One evaluated combination, with the relation shift that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Permutation {
    pub thresholds: ThresholdSet,
    pub relation_shift: f64,
}

/// Cartesian product of the components. The first entry is the all-base combination.
pub fn permutations(
    z_m: &Component,
    z_c: &Component,
    z_r: &RelationComponent,
) -> Result<Vec<Permutation>> {
    let any_triplet = matches!(z_m, Component::Triplet(_))
        || matches!(z_c, Component::Triplet(_))
        || matches!(z_r, RelationComponent::Shifted { .. });
    if !any_triplet {
        return Err(Error::InvalidArgument(
            "at least one component must be a candidate set".into(),
        ));
    }
    let rel: Vec<(Vec<f64>, f64)> = match z_r {
        RelationComponent::Fixed(v) => vec![(v.clone(), 0.0)],
        RelationComponent::Shifted { base, delta } => {
            if !(*delta > 0.0) {
                return Err(Error::InvalidArgument("delta must be > 0".into()));
            }
            let mut out: Vec<(Vec<f64>, f64)> = Vec::with_capacity(3);
            for shift in [0.0, -delta, *delta] {
                let v: Vec<f64> = base.iter().map(|t| (t + shift).clamp(0.0, 1.0)).collect();
                if !out.iter().any(|(o, _)| *o == v) {
                    out.push((v, shift));
                }
            }
            out
        }
    };
    let mut perms = Vec::new();
    for m in z_m.values() {
        for c in z_c.values() {
            for (r, shift) in &rel {
                perms.push(Permutation {
                    thresholds: ThresholdSet {
                        mention: m,
                        coref: c,
                        relation: r.clone(),
                    },
                    relation_shift: *shift,
                });
            }
        }
    }
    Ok(perms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Mention,
    Coref,
    Relation,
}

/// Permutations around `base` with triplets on `axes` and every other component fixed.
pub fn permutations_around(
    base: &ThresholdSet,
    axes: &[Axis],
    delta: f64,
) -> Result<Vec<Permutation>> {
    let comp = |axis: Axis, v: f64| -> Result<Component> {
        Ok(if axes.contains(&axis) {
            Component::Triplet(CandidateSet::new(v, delta)?)
        } else {
            Component::Fixed(v)
        })
    };
    let rel = if axes.contains(&Axis::Relation) {
        RelationComponent::Shifted {
            base: base.relation.clone(),
            delta,
        }
    } else {
        RelationComponent::Fixed(base.relation.clone())
    };
    permutations(
        &comp(Axis::Mention, base.mention)?,
        &comp(Axis::Coref, base.coref)?,
        &rel,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPolicy {
    /// First epoch with coref/relation hill-climbing during fitting.
    pub start_epoch: u32,
    /// First epoch whose mention threshold is set by SCut.
    pub mention_start_epoch: u32,
    /// Axis groups cycled over fitting epochs from `start_epoch`.
    pub fit_rotation: Vec<Vec<Axis>>,
    /// Axis groups cycled over calibration iterations.
    pub calib_rotation: Vec<Vec<Axis>>,
    pub fit_delta: f64,
    pub calib_delta: f64,
    pub max_calib_iters: u32,
    pub patience: u32,
    pub low_bound: f64,
    pub beta: f64,
    /// Starting coref threshold.
    pub initial_coref: f64,
}

impl Default for CalibrationPolicy {
    fn default() -> Self {
        CalibrationPolicy {
            start_epoch: 11,
            mention_start_epoch: 1,
            fit_rotation: vec![
                vec![Axis::Coref],
                vec![Axis::Relation],
                vec![Axis::Coref, Axis::Relation],
            ],
            calib_rotation: vec![vec![Axis::Mention, Axis::Coref, Axis::Relation]],
            fit_delta: 0.05,
            calib_delta: 0.025,
            max_calib_iters: 7,
            patience: 1,
            low_bound: 0.05,
            beta: 1.0,
            initial_coref: 0.5,
        }
    }
}

impl CalibrationPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.fit_delta > 0.0 && self.calib_delta > 0.0) {
            return Err(Error::InvalidArgument("deltas must be > 0".into()));
        }
        if self.start_epoch < 1 || self.mention_start_epoch < 1 {
            return Err(Error::InvalidArgument("start epochs must be >= 1".into()));
        }
        if self.fit_rotation.is_empty() || self.calib_rotation.is_empty() {
            return Err(Error::InvalidArgument("rotations must be non-empty".into()));
        }
        if self
            .fit_rotation
            .iter()
            .chain(&self.calib_rotation)
            .any(|g| g.is_empty())
        {
            return Err(Error::InvalidArgument(
                "rotation groups must be non-empty".into(),
            ));
        }
        if !(self.beta > 0.0) || !(0.0..=1.0).contains(&self.low_bound) {
            return Err(Error::InvalidArgument("bad beta or low bound".into()));
        }
        Ok(())
    }

    pub fn fit_axes(&self, epoch: u32) -> Option<&[Axis]> {
        if epoch < self.start_epoch {
            return None;
        }
        let i = (epoch - self.start_epoch) as usize % self.fit_rotation.len();
        Some(&self.fit_rotation[i])
    }

    pub fn calib_axes(&self, iteration: u32) -> &[Axis] {
        &self.calib_rotation[iteration as usize % self.calib_rotation.len()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimbStep {
    pub iteration: u32,
    pub evaluated: usize,
    pub argmax_score: f64,
    pub improved: bool,
    /// Best score after this iteration.
    pub best_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClimbResult {
    pub best: ThresholdSet,
    pub best_score: f64,
    /// Sum of adopted relation shifts.
    pub relation_offset: f64,
    pub iterations: u32,
    pub steps: Vec<ClimbStep>,
    pub error: Option<String>,
}

/// Iterative hill-climbing. `evaluate` scores a whole permutation list in one
/// validation pass. The starting set is scored in the first pass.
pub fn hill_climb<F>(
    mut evaluate: F,
    start: &ThresholdSet,
    policy: &CalibrationPolicy,
) -> ClimbResult
where
    F: FnMut(&[ThresholdSet]) -> Result<Vec<f64>>,
{
    let mut best = start.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut offset = 0.0;
    let mut steps = Vec::new();
    let mut stale = 0;
    let mut error = None;
    let mut iterations = 0;
    for j in 0..policy.max_calib_iters {
        let perms = match permutations_around(&best, policy.calib_axes(j), policy.calib_delta) {
            Ok(p) => p,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        let sets: Vec<ThresholdSet> = perms.iter().map(|p| p.thresholds.clone()).collect();
        let scores = match evaluate(&sets) {
            Ok(s) if s.len() == sets.len() => s,
            Ok(s) => {
                error = Some(format!(
                    "evaluator returned {} scores for {} sets",
                    s.len(),
                    sets.len()
                ));
                break;
            }
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        iterations = j + 1;
        if j == 0 {
            best_score = scores[0];
        }
        let (arg, top) = argmax(&scores);
        let improved = top > best_score;
        if improved {
            best = sets[arg].clone();
            best_score = top;
            offset += perms[arg].relation_shift;
            stale = 0;
        } else {
            stale += 1;
        }
        steps.push(ClimbStep {
            iteration: j + 1,
            evaluated: sets.len(),
            argmax_score: top,
            improved,
            best_score,
        });
        if stale >= policy.patience {
            break;
        }
    }
    ClimbResult {
        best,
        best_score,
        relation_offset: offset,
        iterations,
        steps,
        error,
    }
}

/// First index of the maximum.
fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > best.1 {
            best = (i, *v);
        }
    }
    best
}

/// Predictions produced by one training epoch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpochPredictions {
    pub mention: Vec<Scored>,
    pub coref: Vec<Scored>,
    pub relation: Vec<ScoredInstance>,
}

/// The contract a model implements to be fine-tuned with threshold calibration.
pub trait CalibratableModel {
    fn n_classes(&self) -> usize;
    /// Train one epoch and return its predictions.
    fn train_epoch(&mut self, epoch: u32) -> Result<EpochPredictions>;
    /// Relation F-beta on validation for every threshold set, in one pass.
    fn validate(&mut self, sets: &[ThresholdSet], beta: f64) -> Result<Vec<f64>>;
    fn test(&mut self, thresholds: &ThresholdSet, beta: f64) -> Result<f64>;
    fn save_checkpoint(&mut self) -> Result<()>;
    fn restore_checkpoint(&mut self) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub axes: Vec<Axis>,
    pub evaluated: usize,
    pub thresholds: ThresholdSet,
    pub relation_offset: f64,
    pub val_score: f64,
    pub checkpointed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<u32>,
    pub fit_thresholds: Option<ThresholdSet>,
    pub fit_score: Option<f64>,
    pub calibration: Option<ClimbResult>,
    pub thresholds: Option<ThresholdSet>,
    /// Relation base vector (per-class SCut) of the best epoch.
    pub relation_base: Option<Vec<f64>>,
    /// Offset of the final relation vector from `relation_base`.
    pub relation_offset: f64,
    pub val_score: Option<f64>,
    pub test_score: Option<f64>,
    pub error: Option<String>,
}

/// Fine-tuning with threshold calibration: `epochs` training epochs with
/// per-epoch SCut and rotated hill-climbing, checkpoint replacement on
/// validation improvement, then calibration on the restored checkpoint and a
/// final test.
pub fn fit_with_calibration<M: CalibratableModel>(
    model: &mut M,
    epochs: u32,
    policy: &CalibrationPolicy,
) -> FitReport {
    let mut report = FitReport {
        epochs: Vec::new(),
        best_epoch: None,
        fit_thresholds: None,
        fit_score: None,
        calibration: None,
        thresholds: None,
        relation_base: None,
        relation_offset: 0.0,
        val_score: None,
        test_score: None,
        error: None,
    };
    if let Err(e) = run_fit(model, epochs, policy, &mut report) {
        report.error = Some(e.to_string());
    }
    report
}

fn run_fit<M: CalibratableModel>(
    model: &mut M,
    epochs: u32,
    policy: &CalibrationPolicy,
    report: &mut FitReport,
) -> Result<()> {
    policy.validate()?;
    let n_classes = model.n_classes();
    let beta = policy.beta;
    let mut mention = 0.5;
    let mut coref = policy.initial_coref;
    let mut offset = 0.0;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_base: Vec<f64> = vec![policy.low_bound; n_classes];

    for epoch in 1..=epochs {
        let preds = model.train_epoch(epoch)?;
        if epoch >= policy.mention_start_epoch {
            mention = scut(&preds.mention, beta, policy.low_bound).threshold;
        }
        let base_vec =
            scut_per_class(&preds.relation, n_classes, beta, policy.low_bound)?.thresholds;
        let current = ThresholdSet {
            mention,
            coref,
            relation: base_vec
                .iter()
                .map(|t| (t + offset).clamp(0.0, 1.0))
                .collect(),
        };
        let axes: Vec<Axis> = policy
            .fit_axes(epoch)
            .map(<[Axis]>::to_vec)
            .unwrap_or_default();
        let perms = if axes.is_empty() {
            vec![Permutation {
                thresholds: current.clone(),
                relation_shift: 0.0,
            }]
        } else {
            permutations_around(&current, &axes, policy.fit_delta)?
        };
        let sets: Vec<ThresholdSet> = perms.iter().map(|p| p.thresholds.clone()).collect();
        let scores = model.validate(&sets, beta)?;
        if scores.len() != sets.len() {
            return Err(Error::InvalidArgument(
                "validation returned the wrong number of scores".into(),
            ));
        }
        let (arg, top) = argmax(&scores);
        let chosen = sets[arg].clone();
        mention = chosen.mention;
        coref = chosen.coref;
        offset += perms[arg].relation_shift;

        let checkpointed = top > best_score;
        if checkpointed {
            best_score = top;
            best_base = base_vec.clone();
            model.save_checkpoint()?;
            report.best_epoch = Some(epoch);
            report.fit_thresholds = Some(chosen.clone());
            report.fit_score = Some(top);
            report.relation_offset = offset;
        }
        report.epochs.push(EpochRecord {
            epoch,
            axes,
            evaluated: sets.len(),
            thresholds: chosen,
            relation_offset: offset,
            val_score: top,
            checkpointed,
        });
    }

    let start = report
        .fit_thresholds
        .clone()
        .ok_or_else(|| Error::InvalidArgument("no training epochs ran".into()))?;
    model.restore_checkpoint()?;
    report.relation_base = Some(best_base);
    let climb = hill_climb(|sets| model.validate(sets, beta), &start, policy);
    let climb_error = climb.error.clone();
    report.relation_offset += climb.relation_offset;
    report.thresholds = Some(climb.best.clone());
    report.val_score = Some(climb.best_score);
    let final_thresholds = climb.best.clone();
    report.calibration = Some(climb);
    if let Some(e) = climb_error {
        return Err(Error::InvalidArgument(format!("calibration aborted: {e}")));
    }
    report.test_score = Some(model.test(&final_thresholds, beta)?);
    Ok(())
}
