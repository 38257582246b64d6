use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{Control, EvalContext, Evaluation, FidelitySpec, ObjectiveHandle, Reporter};
use crate::error::{Error, Result};
use crate::hyperband::{resource_ticks, Tick, TickPhase};
use crate::losses::{grouping_dimensions, GroupingScheme, MODULE_GROUPS};
use crate::seed::{mix_seed, signed_unit};
use crate::space::{Dimension, HPoint, SearchSpace, Value};

pub const WARMUP_DIM: &str = "lr_warmup";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Landscape {
    QuadraticBowl,
    BraninLike,
    MultitaskSim,
}

impl std::str::FromStr for Landscape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic_bowl" => Ok(Landscape::QuadraticBowl),
            "branin_like" => Ok(Landscape::BraninLike),
            "multitask_sim" => Ok(Landscape::MultitaskSim),
            other => Err(Error::InvalidArgument(format!("unknown landscape {other}"))),
        }
    }
}

/// Learning-curve shape: `score(e) = s_inf + transient * exp(-e_eff / tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    pub floor: f64,
    pub curvature: f64,
    pub transient: f64,
    /// Time constant at the planted learning rate.
    pub tau: f64,
    /// How strongly the learning rate speeds up early progress.
    pub lr_speed: f64,
    pub warmup_optimum: f64,
    pub warmup_penalty: f64,
    /// Total improvement from calibration epochs.
    pub calibration_gain: f64,
    /// Epoch length the scheduler is designed for.
    pub design_epochs: u32,
    pub train_stride: u32,
}

impl Default for CurveParams {
    fn default() -> Self {
        CurveParams {
            floor: 0.2,
            curvature: 2.0,
            transient: 0.8,
            tau: 4.0,
            lr_speed: 0.15,
            warmup_optimum: 7.0,
            warmup_penalty: 0.02,
            calibration_gain: 0.01,
            design_epochs: 25,
            train_stride: 10,
        }
    }
}

/// Synthetic objective with a planted optimum. Distances and landscapes are
/// measured in unit coordinates of `reference` over the optimum's dimensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticObjective {
    pub landscape: Landscape,
    pub reference: SearchSpace,
    pub optimum: HPoint,
    pub noise_sd: f64,
    /// Half-width of the per-subset score offsets at partial-data fidelities.
    pub subset_amplitude: f64,
    pub curve: CurveParams,
    pub seed: u64,
    name: String,
}

/// Initial space of the multitask simulation: the GLOBAL grouping plus a
/// warmup-epoch integer dimension.
pub fn multitask_space() -> SearchSpace {
    grouped_multitask_space(GroupingScheme::Global)
}

/// [`multitask_space`] for any parameter grouping.
pub fn grouped_multitask_space(scheme: GroupingScheme) -> SearchSpace {
    let mut dims = grouping_dimensions(scheme);
    dims.push(Dimension::integer(WARMUP_DIM, 2, 12).expect("valid range"));
    SearchSpace::new("multitask_sim", dims).expect("valid space")
}

const MULTITASK_OPTIMUM: [(&str, f64); 6] = [
    ("lr", 0.55),
    ("wd", 0.4),
    ("w_mention", 0.6),
    ("w_coref", 0.35),
    ("w_entity", 0.45),
    ("w_relation", 0.7),
];

impl SyntheticObjective {
    /// `optimum_unit` gives the planted optimum in unit coordinates of `reference`.
    pub fn new(
        landscape: Landscape,
        reference: SearchSpace,
        optimum_unit: &[(&str, f64)],
        seed: u64,
    ) -> Result<Self> {
        let mut optimum = HPoint::new();
        for (name, u) in optimum_unit {
            let d = reference
                .dimension(name)
                .ok_or_else(|| Error::UnknownDimension(name.to_string()))?;
            let v = d
                .from_unit(*u)
                .ok_or_else(|| Error::invalid_dim(name, "optimum needs a numeric dimension"))?;
            optimum.values.insert(name.to_string(), v);
        }
        if landscape == Landscape::BraninLike && optimum.values.len() < 2 {
            return Err(Error::InvalidArgument(
                "branin_like needs two dimensions".into(),
            ));
        }
        Ok(SyntheticObjective {
            landscape,
            reference,
            optimum,
            noise_sd: 0.0,
            subset_amplitude: 0.001,
            curve: CurveParams::default(),
            seed,
            name: format!("{landscape:?}"),
        })
    }

    pub fn multitask_sim(seed: u64) -> Self {
        Self::new(
            Landscape::MultitaskSim,
            multitask_space(),
            &MULTITASK_OPTIMUM,
            seed,
        )
        .expect("planted optimum in space")
    }

    /// Multitask simulation over a grouped space. Under LR0-L2 each module
    /// group has its own planted learning rate and weight decay.
    pub fn multitask_grouped(scheme: GroupingScheme, seed: u64) -> Self {
        match scheme {
            GroupingScheme::Global => Self::multitask_sim(seed),
            GroupingScheme::Lr0L2 => {
                let names: Vec<(String, f64)> = MODULE_GROUPS
                    .iter()
                    .enumerate()
                    .flat_map(|(i, g)| {
                        let shift = 0.04 * (i as f64 - 2.0);
                        [
                            (format!("lr_{g}"), 0.55 + shift),
                            (format!("wd_{g}"), 0.4 - shift),
                        ]
                    })
                    .collect();
                let optimum: Vec<(&str, f64)> =
                    names.iter().map(|(n, u)| (n.as_str(), *u)).collect();
                Self::new(
                    Landscape::MultitaskSim,
                    grouped_multitask_space(scheme),
                    &optimum,
                    seed,
                )
                .expect("planted optimum in space")
            }
        }
    }

    /// Bowl over a unit box of `dims` uniform dimensions `x0..`, optimum at 0.3.
    pub fn quadratic_bowl(dims: usize, seed: u64) -> Self {
        let names: Vec<String> = (0..dims).map(|i| format!("x{i}")).collect();
        let space = SearchSpace::new(
            "quadratic_bowl",
            names
                .iter()
                .map(|n| Dimension::uniform(n, 0.0, 1.0).expect("valid"))
                .collect(),
        )
        .expect("valid space");
        let opt: Vec<(&str, f64)> = names.iter().map(|n| (n.as_str(), 0.3)).collect();
        Self::new(Landscape::QuadraticBowl, space, &opt, seed).expect("valid optimum")
    }

    /// Branin on `x0, x1` over the usual domain, optimum planted at `(pi, 2.275)`.
    pub fn branin_like(seed: u64) -> Self {
        let space = SearchSpace::new(
            "branin_like",
            vec![
                Dimension::uniform("x0", -5.0, 10.0).expect("valid"),
                Dimension::uniform("x1", 0.0, 15.0).expect("valid"),
            ],
        )
        .expect("valid space");
        let u0 = (std::f64::consts::PI + 5.0) / 15.0;
        let u1 = 2.275 / 15.0;
        Self::new(
            Landscape::BraninLike,
            space,
            &[("x0", u0), ("x1", u1)],
            seed,
        )
        .expect("valid optimum")
    }

    pub fn search_space(&self) -> &SearchSpace {
        &self.reference
    }

    fn unit(&self, point: &HPoint, name: &str) -> Result<f64> {
        let d = self
            .reference
            .dimension(name)
            .ok_or_else(|| Error::UnknownDimension(name.to_string()))?;
        let v = point
            .get(name)
            .ok_or_else(|| Error::UnknownDimension(name.to_string()))?;
        d.to_unit(v)
            .ok_or_else(|| Error::invalid_dim(name, "non-numeric value"))
    }

    /// Euclidean distance to the planted optimum in reference unit coordinates.
    pub fn normalized_distance(&self, point: &HPoint) -> Result<f64> {
        let mut s = 0.0;
        for (name, v) in &self.optimum.values {
            let d = self
                .reference
                .dimension(name)
                .expect("optimum dims are in the reference");
            let u_opt = d.to_unit(v).expect("numeric");
            let u = self.unit(point, name)?;
            s += (u - u_opt).powi(2);
        }
        Ok(s.sqrt())
    }

    /// Asymptotic (fully trained) score.
    pub fn asymptote(&self, point: &HPoint) -> Result<f64> {
        let c = &self.curve;
        let mut sq = 0.0;
        for (name, v) in &self.optimum.values {
            let d = self
                .reference
                .dimension(name)
                .expect("optimum dims are in the reference");
            let du = self.unit(point, name)? - d.to_unit(v).expect("numeric");
            sq += du * du;
        }
        Ok(match self.landscape {
            Landscape::QuadraticBowl | Landscape::MultitaskSim => c.floor + c.curvature * sq,
            Landscape::BraninLike => {
                let x0 = point
                    .real("x0")
                    .ok_or_else(|| Error::UnknownDimension("x0".into()))?;
                let x1 = point
                    .real("x1")
                    .ok_or_else(|| Error::UnknownDimension("x1".into()))?;
                c.floor + branin(x0, x1) - BRANIN_MIN + c.curvature * sq
            }
        })
    }

    fn lr_unit_offset(&self, point: &HPoint) -> Result<f64> {
        match self.optimum.get("lr") {
            Some(opt) => {
                let d = self.reference.dimension("lr").expect("lr in reference");
                Ok(self.unit(point, "lr")? - d.to_unit(opt).expect("numeric"))
            }
            None => Ok(0.0),
        }
    }

    fn warmup(&self, point: &HPoint) -> Option<f64> {
        self.reference.dimension(WARMUP_DIM)?;
        point.real(WARMUP_DIM)
    }

    /// Constant offset added at a partial-data fidelity for one rotation.
    pub fn subset_offset(&self, fidelity: &FidelitySpec, rotation: u64) -> f64 {
        if fidelity.is_full_data() {
            return 0.0;
        }
        let k = fidelity.train_denominator as u64;
        let stream = mix_seed(
            self.seed,
            ((k << 32) | fidelity.val_denominator as u64) ^ 0x5ab5e7,
        );
        self.subset_amplitude * signed_unit(stream, rotation % k.max(1))
    }

    /// Noise-free score after `epoch` epochs of training.
    pub fn curve_value(&self, point: &HPoint, fidelity: &FidelitySpec, epoch: u32) -> Result<f64> {
        let c = &self.curve;
        let s_inf = self.asymptote(point)?;
        let tau = c.tau * (-c.lr_speed * self.lr_unit_offset(point)?).exp();
        let e = epoch as f64;
        let (e_eff, penalty) = match (fidelity.scheduler_enabled, self.warmup(point)) {
            (true, Some(w)) if w > 0.0 => {
                let eff = if e <= w {
                    e * e / (2.0 * w)
                } else {
                    e - w / 2.0
                };
                let pen = c.warmup_penalty * ((w - c.warmup_optimum) / 5.0).powi(2);
                (eff, pen)
            }
            _ => (e, 0.0),
        };
        Ok(s_inf + c.transient * (-e_eff / tau).exp() + penalty)
    }

    /// Epochs trained before stopping (warmup end when requested).
    pub fn training_epochs(&self, point: &HPoint, fidelity: &FidelitySpec) -> u32 {
        match (
            fidelity.early_stop,
            fidelity.scheduler_enabled,
            self.warmup(point),
        ) {
            (crate::engine::EarlyStop::EndOfWarmup, true, Some(w)) => {
                (w.round() as u32).clamp(1, fidelity.max_epochs)
            }
            _ => fidelity.max_epochs,
        }
    }
}

const BRANIN_MIN: f64 = 0.397_887_357_729_738_1;

fn branin(x1: f64, x2: f64) -> f64 {
    use std::f64::consts::PI;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

impl ObjectiveHandle for SyntheticObjective {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(
        &self,
        point: &HPoint,
        fidelity: &FidelitySpec,
        ctx: &EvalContext,
        reporter: &mut Reporter<'_>,
    ) -> Result<Evaluation> {
        fidelity.validate()?;
        let epochs = self.training_epochs(point, fidelity);
        let offset = self.subset_offset(fidelity, ctx.rotation);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(ctx.seed, 0x0b5e));
        let mut noisy = |v: f64| -> f64 {
            if self.noise_sd > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + self.noise_sd * z
            } else {
                v
            }
        };
        let calibration = if epochs == fidelity.max_epochs {
            fidelity.calibration_epochs
        } else {
            0
        };
        let ticks = resource_ticks(epochs, self.curve.train_stride, calibration)?;
        let mut last = f64::NAN;
        let mut last_epoch = 0;
        let trained = self.curve_value(point, fidelity, epochs)? + offset;
        for tick in &ticks {
            let score = match tick.phase {
                TickPhase::Train | TickPhase::Validation => {
                    self.curve_value(point, fidelity, tick.epoch)? + offset
                }
                TickPhase::Calibration => {
                    let c = (tick.epoch - epochs) as f64;
                    let total = calibration.max(1) as f64;
                    trained
                        - self.curve.calibration_gain * (1.0 - 0.5f64.powf(c))
                            / (1.0 - 0.5f64.powf(total))
                }
            };
            let score = noisy(score);
            last = score;
            last_epoch = tick.epoch;
            if reporter(tick, score) == Control::Stop && tick.prunable {
                return Ok(Evaluation {
                    score,
                    epochs: tick.epoch,
                    stopped: true,
                });
            }
        }
        Ok(Evaluation {
            score: last,
            epochs: last_epoch,
            stopped: false,
        })
    }

    fn design_epochs(&self) -> Option<u32> {
        match self.landscape {
            Landscape::MultitaskSim => Some(self.curve.design_epochs),
            _ => None,
        }
    }

    fn default_space(&self) -> Option<SearchSpace> {
        Some(self.reference.clone())
    }
}

/// Ticks the objective would report for a fidelity, for callers that need the schedule.
pub fn tick_schedule(
    obj: &SyntheticObjective,
    point: &HPoint,
    fidelity: &FidelitySpec,
) -> Result<Vec<Tick>> {
    let epochs = obj.training_epochs(point, fidelity);
    let calibration = if epochs == fidelity.max_epochs {
        fidelity.calibration_epochs
    } else {
        0
    };
    resource_ticks(epochs, obj.curve.train_stride, calibration)
}

/// Planted optimum as a point of `space`, filling other dimensions from `fill`.
pub fn optimum_point(obj: &SyntheticObjective, fill: &[(&str, Value)]) -> HPoint {
    let mut p = obj.optimum.clone();
    for (k, v) in fill {
        p.values.insert(k.to_string(), v.clone());
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::EarlyStop;

    fn run(
        obj: &SyntheticObjective,
        p: &HPoint,
        f: &FidelitySpec,
        rotation: u64,
    ) -> (f64, Vec<(u32, f64)>) {
        let mut seen = Vec::new();
        let ev = obj
            .evaluate(
                p,
                f,
                &EvalContext { seed: 1, rotation },
                &mut |t: &Tick, s| {
                    seen.push((t.epoch, s));
                    Control::Continue
                },
            )
            .unwrap();
        (ev.score, seen)
    }

    fn opt_point(obj: &SyntheticObjective) -> HPoint {
        optimum_point(obj, &[(WARMUP_DIM, Value::Int(7))])
    }

    #[test]
    fn optimum_beats_far_points() {
        let obj = SyntheticObjective::multitask_sim(3);
        let f = FidelitySpec::new(1, 1, 25);
        let best = run(&obj, &opt_point(&obj), &f, 0).0;
        let space = obj.search_space().clone();
        for seed in 0..300 {
            let mut p = space.sample_uniform(seed).unwrap();
            p.values.insert(WARMUP_DIM.into(), Value::Int(7));
            if obj.normalized_distance(&p).unwrap() >= 0.1 {
                assert!(run(&obj, &p, &f, 0).0 > best);
            }
        }
    }

    #[test]
    fn rotation_offsets_are_exact() {
        let obj = SyntheticObjective::multitask_sim(3);
        let f = FidelitySpec::new(6, 3, 1);
        let p = opt_point(&obj);
        let (a, b) = (run(&obj, &p, &f, 0).0, run(&obj, &p, &f, 1).0);
        let expect = obj.subset_offset(&f, 0) - obj.subset_offset(&f, 1);
        assert!(((a - b) - expect).abs() < 1e-12);
        assert_ne!(a, b);
        assert_eq!(run(&obj, &p, &f, 7).0, run(&obj, &p, &f, 1).0);
    }

    #[test]
    fn scheduler_changes_trajectory() {
        let obj = SyntheticObjective::multitask_sim(3);
        let p = opt_point(&obj);
        let off = FidelitySpec::new(1, 1, 25);
        let on = off.with_scheduler(true);
        let (_, a) = run(&obj, &p, &off, 0);
        let (_, b) = run(&obj, &p, &on, 0);
        assert_ne!(a, b);
        // closed form at epoch 3 with warmup 7: e_eff = 9/14
        let s_inf = obj.asymptote(&p).unwrap();
        let expect = s_inf + 0.8 * (-(9.0 / 14.0) / 4.0f64).exp();
        let got = b.iter().find(|(e, _)| *e == 3).unwrap().1;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn early_stop_at_warmup_end() {
        let obj = SyntheticObjective::multitask_sim(3);
        let p = opt_point(&obj);
        let f = FidelitySpec::new(6, 3, 25)
            .with_scheduler(true)
            .with_early_stop(EarlyStop::EndOfWarmup);
        let (_, ticks) = run(&obj, &p, &f, 0);
        assert_eq!(ticks.last().unwrap().0, 7);
    }

    #[test]
    fn early_stopped_ranking_disagrees_on_warmup() {
        let obj = SyntheticObjective::multitask_sim(3);
        let with = |w: i64| opt_point(&obj).with(WARMUP_DIM, Value::Int(w));
        let short = FidelitySpec::new(1, 1, 25)
            .with_scheduler(true)
            .with_early_stop(EarlyStop::EndOfWarmup);
        let full = FidelitySpec::new(1, 1, 25).with_scheduler(true);
        let score = |p: &HPoint, f: &FidelitySpec| run(&obj, p, f, 0).0;
        assert!(score(&with(8), &short) < score(&with(7), &short));
        assert!(score(&with(7), &full) < score(&with(8), &full));
    }

    #[test]
    fn stop_request_honored_at_prunable_tick() {
        let obj = SyntheticObjective::multitask_sim(3);
        let p = opt_point(&obj);
        let f = FidelitySpec::new(1, 1, 25);
        let ev = obj
            .evaluate(
                &p,
                &f,
                &EvalContext {
                    seed: 0,
                    rotation: 0,
                },
                &mut |_t: &Tick, _s| Control::Stop,
            )
            .unwrap();
        assert!(ev.stopped);
        assert_eq!(ev.epochs, 10);
    }

    #[test]
    fn other_landscapes_have_planted_minimum() {
        let bowl = SyntheticObjective::quadratic_bowl(3, 0);
        assert!((bowl.asymptote(&bowl.optimum).unwrap() - bowl.curve.floor).abs() < 1e-15);
        let br = SyntheticObjective::branin_like(0);
        let at = br.asymptote(&br.optimum).unwrap();
        assert!((at - br.curve.floor).abs() < 1e-6, "{at}");
        for seed in 0..500 {
            let p = br.search_space().sample_uniform(seed).unwrap();
            if br.normalized_distance(&p).unwrap() >= 0.1 {
                assert!(br.asymptote(&p).unwrap() > at);
            }
        }
    }
}
