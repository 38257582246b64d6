//! End-to-end acceptance suite. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use sprintopt::calibrate::{
    fit_with_calibration, hill_climb, permutations_around, scut, Axis, CalibratableModel,
    CalibrationPolicy, ThresholdSet,
};
use sprintopt::engine::{
    run_three_phase, Engine, FailPoint, FidelitySpec, InitCheckpoint, ObjectiveHandle,
    ObjectiveSpec, PrimingMode, PrimingRequest, Provenance, PrunerSpec, SamplerSpec, SprintRequest,
    SprintSummary, ThreePhaseConfig,
};
use sprintopt::error::{Error, PrimingViolation};
use sprintopt::gp::{acquire, AcquisitionChoice, GpModel, KernelSpec, Smoothness};
use sprintopt::hyperband::derive_config;
use sprintopt::losses::{
    asl_grad, asl_loss, binary_cross_entropy, focal_loss, uncertainty_weighted_loss, AslParams,
    TaskLossBundle,
};
use sprintopt::space::{
    AuditEntry, Dimension, DimensionKind, HPoint, MarginPolicy, Rule, SearchSpace, Value,
};
use sprintopt::testbed::{generate_corpus, resolve_objective, SyntheticObjective, ToyModel};
use sprintopt::tpe::{
    fit_parzen, n_good, split_trials, tpe_suggest_detailed, BandwidthRule, TpeConfig,
};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Check {
    ensure!(elapsed < limit, "took {:.2?}, limit {:.0?}", elapsed, limit);
    Ok(format!("{elapsed:.2?}"))
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

// ---------------------------------------------------------------- hyperband

fn hyperband_arithmetic() -> Check {
    let t = Instant::now();
    let c = derive_config(32, 3).map_err(|e| e.to_string())?;
    ensure!(
        c.s_max == 3 && c.budget == 128,
        "R=32 eta=3 gave s_max={} B={}",
        c.s_max,
        c.budget
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let r: u64 = if rng.random_bool(0.5) {
            rng.random_range(1..=1000)
        } else {
            rng.random_range(1..=u32::MAX as u64)
        };
        let eta: u64 = rng.random_range(2..=10);
        let c = derive_config(r, eta).map_err(|e| e.to_string())?;
        // largest s with eta^s <= R
        let mut s = 0u32;
        while (eta as u128).pow(s + 1) <= r as u128 {
            s += 1;
        }
        ensure!(c.s_max == s, "R={r} eta={eta}: s_max {} vs {s}", c.s_max);
        ensure!(
            c.budget == (s as u64 + 1) * r,
            "R={r} eta={eta}: B {}",
            c.budget
        );
    }
    Ok(format!(
        "s_max=3 B=128; 10000 random pairs; {}",
        within(t.elapsed(), Duration::from_secs(1))?
    ))
}

// ---------------------------------------------------------------- pruning

fn pruning_rules() -> Check {
    let t = Instant::now();
    let space = SearchSpace::new(
        "table",
        vec![
            Dimension::log_uniform("lr", 1e-6, 1e-3).unwrap(),
            Dimension::log_uniform("wd", 1e-5, 1e-1).unwrap(),
            Dimension::uniform("w_a", 0.0, 2.0).unwrap(),
            Dimension::uniform("w_b", 0.0, 2.0).unwrap(),
            Dimension::integer("warmup", 2, 12).unwrap(),
            Dimension::categorical("opt", &["adam", "adamw", "sgd", "lamb", "rmsprop"]).unwrap(),
        ],
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(120);
    let mut table: Vec<(HPoint, f64)> = Vec::new();
    for i in 0..120u64 {
        // scores are a permutation of 0..120; trials scoring below 10 are the top ten
        let score = ((i * 37) % 120) as f64;
        let top = score < 10.0;
        let (lr, wd, wa, wb, warm) = if top {
            (
                10f64.powf(rng.random_range(-5.0..-4.0)),
                10f64.powf(rng.random_range(-3.5..-2.5)),
                rng.random_range(0.4..1.2),
                rng.random_range(0.9..1.6),
                rng.random_range(5..=8),
            )
        } else {
            (
                10f64.powf(rng.random_range(-6.0..-3.0)),
                10f64.powf(rng.random_range(-5.0..-1.0)),
                rng.random_range(0.0..2.0),
                rng.random_range(0.0..2.0),
                rng.random_range(2..=12),
            )
        };
        let opt = if top {
            ["adamw", "lamb"][rng.random_range(0..2)]
        } else {
            ["adam", "adamw", "sgd", "lamb", "rmsprop"][rng.random_range(0..5)]
        };
        let p = HPoint::new()
            .with("lr", Value::Real(lr))
            .with("wd", Value::Real(wd))
            .with("w_a", Value::Real(wa))
            .with("w_b", Value::Real(wb))
            .with("warmup", Value::Int(warm))
            .with("opt", Value::Cat(opt.into()));
        table.push((p, score));
    }

    let top: Vec<&HPoint> = table
        .iter()
        .filter(|(_, s)| *s < 10.0)
        .map(|(p, _)| p)
        .collect();
    ensure!(
        top.len() == 10,
        "fabricated table has {} top trials",
        top.len()
    );
    let hull = |name: &str| {
        let v: Vec<f64> = top
            .iter()
            .map(|p| p.get(name).unwrap().as_f64().unwrap())
            .collect();
        (
            v.iter().copied().fold(f64::INFINITY, f64::min),
            v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let mut dims = Vec::new();
    let mut audit = Vec::new();
    for d in &space.dimensions {
        match d.kind {
            DimensionKind::Categorical => {
                let seen: BTreeSet<&str> = top
                    .iter()
                    .map(|p| p.get(&d.name).unwrap().as_category().unwrap())
                    .collect();
                let kept: Vec<String> = d
                    .categories
                    .iter()
                    .filter(|c| seen.contains(c.as_str()))
                    .cloned()
                    .collect();
                dims.push(Dimension::categorical(&d.name, &kept).unwrap());
                audit.push(AuditEntry {
                    dimension: d.name.clone(),
                    rule: Rule::TopKCategories { k: 10, kept },
                });
            }
            kind => {
                let (a, b) = hull(&d.name);
                let (lo, hi, margin) = match kind {
                    DimensionKind::LogUniform => (a / 1.5, b * 1.5, 1.5),
                    DimensionKind::Uniform => (a - 0.01, b + 0.01, 0.01),
                    _ => (a - 1.0, b + 1.0, 1.0),
                };
                let mut nd = d.clone();
                nd.low = Some(lo);
                nd.high = Some(hi);
                dims.push(nd);
                audit.push(AuditEntry {
                    dimension: d.name.clone(),
                    rule: Rule::TopK {
                        k: 10,
                        hull_low: a,
                        hull_high: b,
                        margin,
                        low: lo,
                        high: hi,
                    },
                });
            }
        }
    }
    let expected = SearchSpace {
        name: "table".into(),
        version: 2,
        parent: Some(1),
        dimensions: dims,
        audit,
    };

    let scored: Vec<(&HPoint, f64)> = table.iter().map(|(p, s)| (p, *s)).collect();
    let pruned = space
        .prune_to_top_k(&scored, 10, &MarginPolicy::default())
        .map_err(|e| e.to_string())?;
    let got = pruned.space.to_json().unwrap();
    let want = expected.to_json().unwrap();
    ensure!(
        got == want,
        "serialized spaces differ:\n got  {got}\n want {want}"
    );
    ensure!(
        pruned.degenerate.is_empty(),
        "unexpected degenerate dims {:?}",
        pruned.degenerate
    );
    Ok(format!(
        "6 dims bit-exact; {}",
        within(t.elapsed(), Duration::from_secs(1))?
    ))
}

// ---------------------------------------------------------------- permutations

fn permutation_counts() -> Check {
    let base = ThresholdSet::uniform(0.5, 96);
    let all = [Axis::Mention, Axis::Coref, Axis::Relation];
    let mut groups: Vec<Vec<Axis>> = Vec::new();
    for mask in 1u32..8 {
        groups.push(
            all.iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, a)| *a)
                .collect(),
        );
    }
    for axes in &groups {
        let want = 3usize.pow(axes.len() as u32);
        let perms = permutations_around(&base, axes, 0.025).map_err(|e| e.to_string())?;
        ensure!(
            perms.len() == want,
            "{axes:?}: {} permutations",
            perms.len()
        );

        let policy = CalibrationPolicy {
            calib_rotation: vec![axes.clone()],
            max_calib_iters: 7,
            ..Default::default()
        };
        let mut calls = 0u32;
        let mut sizes = Vec::new();
        // a peak away from the start keeps the climb moving for several passes
        let r = hill_climb(
            |sets| {
                calls += 1;
                sizes.push(sets.len());
                Ok(sets
                    .iter()
                    .map(|s| {
                        -((s.mention - 0.6).powi(2)
                            + (s.coref - 0.4).powi(2)
                            + (s.relation[0] - 0.55).powi(2))
                    })
                    .collect())
            },
            &base,
            &policy,
        );
        ensure!(
            calls == r.iterations,
            "{axes:?}: {calls} validation passes for {} iterations",
            r.iterations
        );
        ensure!(
            r.iterations >= 2,
            "{axes:?}: climb stopped after {} iterations",
            r.iterations
        );
        ensure!(
            sizes.iter().all(|n| *n == want),
            "{axes:?}: pass sizes {sizes:?}"
        );
    }

    let mut model = ToyModel::new(generate_corpus(3, 40, 96).unwrap());
    let report = fit_with_calibration(&mut model, 25, &CalibrationPolicy::default());
    ensure!(report.error.is_none(), "fit failed: {:?}", report.error);
    let iters = report.calibration.as_ref().unwrap().iterations as u64;
    ensure!(
        model.validations() == 25 + iters,
        "{} validation passes for 25 epochs + {iters} calibration iterations",
        model.validations()
    );
    let evaluated: Vec<usize> = report.epochs.iter().map(|e| e.evaluated).collect();
    ensure!(
        evaluated[..10].iter().all(|n| *n == 1),
        "epochs 1-10 evaluated {:?}",
        &evaluated[..10]
    );
    ensure!(
        evaluated[10..].iter().all(|n| [3, 9].contains(n)),
        "fit epochs evaluated {:?}",
        &evaluated[10..]
    );
    Ok(format!(
        "3/9/27 over {} axis groups; one pass per iteration",
        groups.len()
    ))
}

// ---------------------------------------------------------------- scut

fn f_beta(tp: usize, fp: usize, fn_: usize, beta: f64) -> f64 {
    let b2 = beta * beta;
    let tp = tp as f64;
    if tp == 0.0 {
        return 0.0;
    }
    (1.0 + b2) * tp / ((1.0 + b2) * tp + b2 * fn_ as f64 + fp as f64)
}

fn scut_scan(inst: &[(f64, bool)], beta: f64) -> f64 {
    let mut vals: Vec<f64> = inst.iter().map(|i| i.0).collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    let mut cuts = vec![0.0, 1.0];
    cuts.extend(vals.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    cuts.iter()
        .map(|&c| {
            let tp = inst.iter().filter(|(p, g)| *p > c && *g).count();
            let fp = inst.iter().filter(|(p, g)| *p > c && !*g).count();
            let fn_ = inst.iter().filter(|(p, g)| *p <= c && *g).count();
            f_beta(tp, fp, fn_, beta)
        })
        .fold(0.0, f64::max)
}

fn scut_oracle() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut guarded = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=200);
        let coarse = rng.random_bool(0.3);
        let pos_rate = rng.random_range(0.02..0.6);
        let inst: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let g = rng.random_bool(pos_rate);
                let p: f64 = if g {
                    rng.random_range(0.2..1.0)
                } else {
                    rng.random_range(0.0..0.8)
                };
                (if coarse { (p * 20.0).round() / 20.0 } else { p }, g)
            })
            .collect();
        let beta = [0.5, 1.0, 2.0][case % 3];
        let low = rng.random_range(0.0..0.4);
        let r = scut(&inst, beta, low);
        let want = scut_scan(&inst, beta);
        ensure!(
            (r.f_beta - want).abs() < 1e-12,
            "case {case}: F {} vs scan {want}",
            r.f_beta
        );
        ensure!(
            r.threshold >= low,
            "case {case}: cut {} below bound {low}",
            r.threshold
        );
        guarded += r.guarded as usize;
    }
    Ok(format!(
        "1000 sets, {guarded} guarded; {}",
        within(t.elapsed(), Duration::from_secs(10))?
    ))
}

// ---------------------------------------------------------------- gp

fn matern52(a: &[f64], b: &[f64], ls: &[f64], var: f64) -> f64 {
    let r = a
        .iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum::<f64>()
        .sqrt();
    let s = 5f64.sqrt() * r;
    var * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

struct Posterior {
    x: Vec<Vec<f64>>,
    alpha: Vec<f64>,
    gram: Vec<Vec<f64>>,
    ls: Vec<f64>,
    var: f64,
    mean: f64,
    scale: f64,
}

impl Posterior {
    fn new(x: &[Vec<f64>], y: &[f64], ls: &[f64], var: f64, diag: f64) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let scale = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let ys: Vec<f64> = y.iter().map(|v| (v - mean) / scale).collect();
        let gram: Vec<Vec<f64>> = x
            .iter()
            .enumerate()
            .map(|(i, a)| {
                x.iter()
                    .enumerate()
                    .map(|(j, b)| matern52(a, b, ls, var) + if i == j { diag } else { 0.0 })
                    .collect()
            })
            .collect();
        let alpha = solve(gram.clone(), ys);
        Posterior {
            x: x.to_vec(),
            alpha,
            gram,
            ls: ls.to_vec(),
            var,
            mean,
            scale,
        }
    }

    /// Standardized mean and standard deviation.
    fn at(&self, q: &[f64]) -> (f64, f64) {
        let k: Vec<f64> = self
            .x
            .iter()
            .map(|a| matern52(q, a, &self.ls, self.var))
            .collect();
        let m = k.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        let v = solve(self.gram.clone(), k.clone());
        let var = self.var - k.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        (m, var.max(0.0).sqrt())
    }
}

fn gp_correctness() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(3..=if d == 1 { 6 } else { 12 });
        let mut x: Vec<Vec<f64>> = Vec::new();
        while x.len() < n {
            let p: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let far = x.iter().all(|q| {
                p.iter()
                    .zip(q)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
                    > 0.08
            });
            if far {
                x.push(p);
            }
        }
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let kernel =
            KernelSpec::isotropic(Smoothness::FiveHalves, d, rng.random_range(0.1..0.4), 1.0)
                .unwrap();
        let model = GpModel::fit(&x, &y, kernel, 0.0).map_err(|e| e.to_string())?;
        for (p, want) in x.iter().zip(&y) {
            let (m, _) = model.predict(p).unwrap();
            worst = worst.max((m - want).abs());
        }
    }
    ensure!(worst < 1e-6, "interpolation error {worst:e}");

    let normal = std_normal();
    let grid: Vec<Vec<f64>> = (0..=400).map(|i| vec![i as f64 / 400.0]).collect();
    let choices = [
        AcquisitionChoice::pi(0.01),
        AcquisitionChoice::ei(0.01),
        AcquisitionChoice::lcb(1.96),
    ];
    for m in 0..100 {
        let n = rng.random_range(2..=8);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>()]).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|p| (7.0 * p[0]).sin() + rng.random_range(-0.3..0.3))
            .collect();
        let ls = rng.random_range(0.05..0.5);
        let sv = rng.random_range(0.5..2.0);
        let noise = 1e-6;
        let model = GpModel::fit(
            &x,
            &y,
            KernelSpec::isotropic(Smoothness::FiveHalves, 1, ls, sv).unwrap(),
            noise,
        )
        .map_err(|e| e.to_string())?;
        let post = Posterior::new(&x, &y, &[ls], sv, noise + model.jitter());
        let best = y.iter().copied().fold(f64::INFINITY, f64::min);
        let best_std = (best - post.mean) / post.scale;
        let stats: Vec<(f64, f64)> = grid.iter().map(|g| post.at(g)).collect();
        for choice in &choices {
            let values: Vec<f64> = stats
                .iter()
                .map(|&(mu, sd)| match choice.kind {
                    sprintopt::gp::AcquisitionKind::Lcb => -(mu - choice.parameter * sd),
                    sprintopt::gp::AcquisitionKind::Pi => {
                        let imp = best_std - choice.parameter - mu;
                        if sd > 0.0 {
                            normal.cdf(imp / sd)
                        } else {
                            (imp > 0.0) as u8 as f64
                        }
                    }
                    sprintopt::gp::AcquisitionKind::Ei => {
                        let imp = best_std - choice.parameter - mu;
                        if sd > 0.0 {
                            imp * normal.cdf(imp / sd) + sd * normal.pdf(imp / sd)
                        } else {
                            imp.max(0.0)
                        }
                    }
                })
                .collect();
            let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (idx, _) = acquire(&model, best, choice, &grid).map_err(|e| e.to_string())?;
            let tol = 1e-9 * top.abs().max(1e-3);
            ensure!(
                values[idx] >= top - tol,
                "model {m} {:?}: argmax {idx} scores {} vs oracle max {top}",
                choice.kind,
                values[idx]
            );
        }
    }
    Ok(format!(
        "interp err {worst:.1e}; PI/EI/LCB argmax on 100 models; {}",
        within(t.elapsed(), Duration::from_secs(30))?
    ))
}

// ---------------------------------------------------------------- tpe

fn simpson(f: impl Fn(f64) -> f64, n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Prior-augmented Parzen estimator with nearest-neighbour bandwidths, on [0, 1].
fn parzen_oracle(centers: &[f64], u: f64) -> f64 {
    let normal = std_normal();
    let n = centers.len();
    let floor = 1.0 / (1.0 + n as f64);
    let mut sum = 1.0;
    for (i, c) in centers.iter().enumerate() {
        let nn = centers
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, o)| (o - c).abs())
            .fold(f64::INFINITY, f64::min);
        let h = if nn.is_finite() {
            nn.max(floor)
        } else {
            1.0_f64.max(floor)
        };
        let mass = normal.cdf((1.0 - c) / h) - normal.cdf(-c / h);
        sum += normal.pdf((u - c) / h) / (h * mass);
    }
    sum / (n as f64 + 1.0)
}

fn tpe_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dims = [
        Dimension::uniform("x", -2.0, 3.0).unwrap(),
        Dimension::log_uniform("x", 1e-5, 1e-1).unwrap(),
    ];
    let mut worst = 0.0f64;
    for case in 0..60 {
        let dim = &dims[case % 2];
        let n = rng.random_range(0..25);
        let values: Vec<Value> = (0..n).map(|_| dim.sample(&mut rng)).collect();
        let density =
            fit_parzen(&values, dim, BandwidthRule::NearestNeighbor).map_err(|e| e.to_string())?;
        let mass = simpson(|u| density.pdf(u), 40_000);
        worst = worst.max((mass - 1.0).abs());
    }
    let cat = Dimension::categorical("c", &["a", "b", "c", "d"]).unwrap();
    let cat_values: Vec<Value> = ["a", "a", "c"]
        .iter()
        .map(|c| Value::Cat(c.to_string()))
        .collect();
    let pmf = fit_parzen(&cat_values, &cat, BandwidthRule::NearestNeighbor).unwrap();
    let total: f64 = (0..4).map(|i| pmf.pmf(i)).sum();
    worst = worst.max((total - 1.0).abs());
    ensure!(worst < 1e-6, "normalization error {worst:e}");

    for case in 0..40 {
        let dim = dims[case % 2].clone();
        let space = SearchSpace::new("one", vec![dim.clone()]).unwrap();
        let n = rng.random_range(10..40);
        let history: Vec<(HPoint, f64)> = (0..n)
            .map(|_| {
                let v = dim.sample(&mut rng);
                let u = dim.to_unit(&v).unwrap();
                (
                    HPoint::new().with("x", v),
                    (u - 0.3).powi(2) + rng.random_range(0.0..0.01),
                )
            })
            .collect();
        let config = TpeConfig::default();
        let s = tpe_suggest_detailed(&history, &space, &config, case as u64)
            .map_err(|e| e.to_string())?;
        ensure!(s.choices.len() == 1, "case {case}: no model-based choice");
        let choice = &s.choices[0];

        let scores: Vec<f64> = history.iter().map(|(_, sc)| *sc).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let n_below = ((config.gamma * n as f64).ceil() as usize).max(1);
        let units: Vec<f64> = order
            .iter()
            .map(|&i| {
                dim.to_unit(history[i].0.get("x").unwrap())
                    .unwrap()
                    .clamp(0.0, 1.0)
            })
            .collect();
        let (good, bad) = units.split_at(n_below);
        let ratio: Vec<f64> = choice
            .candidates
            .iter()
            .map(|&u| parzen_oracle(good, u).ln() - parzen_oracle(bad, u).ln())
            .collect();
        let top = ratio.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ensure!(
            ratio[choice.chosen] >= top - 1e-9,
            "case {case}: chosen ratio {} vs candidate max {top}",
            ratio[choice.chosen]
        );
        let chosen_u = dim.to_unit(s.point.get("x").unwrap()).unwrap();
        ensure!(
            (chosen_u - choice.candidates[choice.chosen]).abs() < 1e-9,
            "case {case}: suggestion is not the chosen candidate"
        );
    }

    for (p, q) in [(1u64, 10u64), (1, 4), (1, 2)] {
        let gamma = p as f64 / q as f64;
        for n in 2..=100u64 {
            let want = (p * n).div_ceil(q).max(1) as usize;
            ensure!(
                n_good(n as usize, gamma) == want,
                "n={n} gamma={gamma}: {} vs {want}",
                n_good(n as usize, gamma)
            );
            let (g, b) = split_trials(&vec![0.0; n as usize], gamma).map_err(|e| e.to_string())?;
            ensure!(
                g.len() == want && b.len() == n as usize - want,
                "split n={n} gamma={gamma}"
            );
        }
    }
    Ok(format!(
        "normalization err {worst:.1e}; 40 suggestions at candidate max; split sizes n=2..100"
    ))
}

// ---------------------------------------------------------------- three phase

fn unit_distance(obj: &SyntheticObjective, point: &HPoint) -> f64 {
    obj.optimum
        .values
        .iter()
        .map(|(name, opt)| {
            let d = obj.reference.dimension(name).unwrap();
            let (lo, hi) = (d.low.unwrap(), d.high.unwrap());
            let unit = |v: f64| match d.kind {
                DimensionKind::LogUniform => (v.ln() - lo.ln()) / (hi.ln() - lo.ln()),
                _ => (v - lo) / (hi - lo),
            };
            (unit(point.get(name).unwrap().as_f64().unwrap()) - unit(opt.as_f64().unwrap())).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

fn three_phase() -> Check {
    let t = Instant::now();
    let mut hits = 0;
    let mut details = Vec::new();
    for seed in 0..10u64 {
        let engine = Engine::in_memory().with_resolver(resolve_objective);
        let thread = engine
            .create_thread(
                "accept",
                "multitask",
                ObjectiveSpec::new("multitask_sim", seed),
                None,
            )
            .map_err(|e| e.to_string())?;
        let cfg = ThreePhaseConfig {
            seed,
            ..Default::default()
        };
        let report =
            run_three_phase(&engine, &thread.id, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let obj = SyntheticObjective::multitask_sim(seed);
        ensure!(
            obj.optimum.values.len() == 6,
            "planted optimum has {} dims",
            obj.optimum.values.len()
        );
        let last = report
            .final_incumbent()
            .ok_or(format!("seed {seed}: no final incumbent"))?;
        let first = report.phases[0]
            .incumbent
            .as_ref()
            .ok_or(format!("seed {seed}: no phase-1 incumbent"))?;
        let dist = unit_distance(&obj, &last.point);
        ensure!(
            last.score <= first.score,
            "seed {seed}: phase 3 {} worse than phase 1 {}",
            last.score,
            first.score
        );
        hits += (dist <= 0.05) as usize;
        details.push(format!("{dist:.3}"));
    }
    ensure!(
        hits >= 8,
        "{hits}/10 seeds within 0.05 (distances {})",
        details.join(" ")
    );
    Ok(format!(
        "{hits}/10 within 0.05 [{}]; {}",
        details.join(" "),
        within(t.elapsed(), Duration::from_secs(300))?
    ))
}

// ---------------------------------------------------------------- calibration

fn lattice(anchor: f64, step: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (-40..=40)
        .map(|i| anchor + i as f64 * step)
        .filter(|x| (0.0..=1.0).contains(x))
        .collect();
    v.extend([0.0, 1.0]);
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn calibration() -> Check {
    let t = Instant::now();
    let policy = CalibrationPolicy::default();
    let delta = policy.calib_delta;
    let mut margins = Vec::new();
    for seed in 0..5u64 {
        let mut model = ToyModel::new(generate_corpus(seed, 200, 96).unwrap());
        let report = fit_with_calibration(&mut model, 25, &policy);
        ensure!(report.error.is_none(), "seed {seed}: {:?}", report.error);
        let climb = report.calibration.as_ref().unwrap();
        let steps: Vec<f64> = climb.steps.iter().map(|s| s.best_score).collect();
        ensure!(
            steps.windows(2).all(|w| w[1] >= w[0]),
            "seed {seed}: best-score trace {steps:?}"
        );

        let test = report.test_score.unwrap();
        let baseline = model
            .test(&ThresholdSet::uniform(0.5, 96), policy.beta)
            .unwrap();
        ensure!(
            test >= baseline,
            "seed {seed}: test F1 {test} below 0.5-threshold F1 {baseline}"
        );

        // exhaustive grid on the calibration lattice: mention x coref x common relation offset
        let start = report.fit_thresholds.clone().unwrap();
        let mut sets = Vec::new();
        let mut keys = Vec::new();
        for m in lattice(start.mention, delta) {
            for c in lattice(start.coref, delta) {
                for o in (-16..=16).map(|i| i as f64 * delta) {
                    let relation = start
                        .relation
                        .iter()
                        .map(|r| (r + o).clamp(0.0, 1.0))
                        .collect();
                    sets.push(ThresholdSet {
                        mention: m,
                        coref: c,
                        relation,
                    });
                    keys.push((m, c, o));
                }
            }
        }
        let scores = model.validate(&sets, policy.beta).unwrap();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let fin = report.thresholds.as_ref().unwrap();
        let dist = keys
            .iter()
            .zip(&scores)
            .filter(|(_, s)| **s >= best)
            .map(|(k, _)| {
                (k.0 - fin.mention)
                    .abs()
                    .max((k.1 - fin.coref).abs())
                    .max((k.2 - climb.relation_offset).abs())
            })
            .fold(f64::INFINITY, f64::min);
        ensure!(
            dist <= delta + 1e-9,
            "seed {seed}: calibrated thresholds {dist:.3} from the grid optimum"
        );
        margins.push(format!("{:+.3}", test - baseline));
    }
    Ok(format!(
        "5 seeds; test F1 over 0.5 baseline [{}]; {}",
        margins.join(" "),
        within(t.elapsed(), Duration::from_secs(60))?
    ))
}

// ---------------------------------------------------------------- losses

fn loss_identities() -> Check {
    let mut worst_chain = 0.0f64;
    let mut worst_grad = 0.0f64;
    for i in 1..=99 {
        let p = i as f64 / 100.0;
        for y in [true, false] {
            let bce = if y { -p.ln() } else { -(1.0 - p).ln() };
            for gamma in [0.0, 0.5, 1.0, 2.0, 4.0] {
                let asl = asl_loss(
                    p,
                    y,
                    &AslParams {
                        shift: 0.0,
                        gamma_pos: gamma,
                        gamma_neg: gamma,
                    },
                );
                let focal = focal_loss(p, y, gamma);
                let pt = if y { p } else { 1.0 - p };
                worst_chain = worst_chain
                    .max((asl - focal).abs())
                    .max((focal - (1.0 - pt).powf(gamma) * bce).abs());
            }
            worst_chain = worst_chain
                .max((focal_loss(p, y, 0.0) - bce).abs())
                .max((binary_cross_entropy(p, y) - bce).abs());

            for params in [
                AslParams::default(),
                AslParams {
                    shift: 0.05,
                    gamma_pos: 0.0,
                    gamma_neg: 4.0,
                },
            ] {
                if !y && (p - params.shift).abs() < 1e-3 {
                    continue;
                }
                let h = 1e-6;
                let fd = (asl_loss(p + h, y, &params) - asl_loss(p - h, y, &params)) / (2.0 * h);
                let g = asl_grad(p, y, &params);
                worst_grad = worst_grad.max((g - fd).abs() / fd.abs().max(1e-8));
            }
        }
    }
    ensure!(worst_chain < 1e-10, "reduction chain error {worst_chain:e}");
    ensure!(worst_grad < 1e-5, "gradient relative error {worst_grad:e}");

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let losses = [0; 4].map(|_| rng.random_range(0.0..5.0));
        let s = [0; 4].map(|_| rng.random_range(-3.0..3.0));
        let (_, w) = uncertainty_weighted_loss(&TaskLossBundle::new(losses, s)).unwrap();
        ensure!(
            (w.iter().sum::<f64>() - 1.0).abs() < 1e-12,
            "weights sum {}",
            w.iter().sum::<f64>()
        );
        let c = rng.random_range(-3.0..3.0);
        let (_, w) = uncertainty_weighted_loss(&TaskLossBundle::new(losses, [c; 4])).unwrap();
        ensure!(
            w.iter().all(|v| (v - 0.25).abs() < 1e-12),
            "symmetric weights {w:?}"
        );
    }
    Ok(format!(
        "chain err {worst_chain:.1e}; grad rel err {worst_grad:.1e}; weights ok"
    ))
}

// ---------------------------------------------------------------- engine

fn request(thread: &str, n: usize, fidelity: FidelitySpec, seed: u64) -> SprintRequest {
    SprintRequest {
        thread: thread.to_string(),
        model_type: "JointMRC".into(),
        variant: "Bert-MTW".into(),
        grouping: "GLOBAL".into(),
        suffix: String::new(),
        space_version: None,
        sampler: SamplerSpec::Tpe {
            n_trials: n,
            config: TpeConfig {
                n_startup: 3,
                ..Default::default()
            },
        },
        pruner: PrunerSpec::None,
        fidelity,
        init_checkpoint: InitCheckpoint::default(),
        seed,
        priming: None,
    }
}

fn prime(mode: PrimingMode, source: &str, top_n: usize) -> Option<PrimingRequest> {
    Some(PrimingRequest {
        mode,
        source: source.to_string(),
        top_n,
        allow_init_mismatch: false,
    })
}

fn violation(r: Result<impl std::fmt::Debug, Error>) -> Option<PrimingViolation> {
    match r {
        Err(Error::Priming { violation, .. }) => Some(violation),
        _ => None,
    }
}

fn priming_legality() -> Check {
    // observation noise makes every score depend on the trial seed
    let engine = Engine::in_memory().with_resolver(|spec: &ObjectiveSpec| {
        let mut obj = SyntheticObjective::multitask_sim(spec.seed);
        obj.noise_sd = 0.01;
        Ok(Arc::new(obj) as Arc<dyn ObjectiveHandle>)
    });
    let thread = engine
        .create_thread("a", "cfg", ObjectiveSpec::new("multitask_sim", 2), None)
        .unwrap();
    let other = engine
        .create_thread("b", "cfg", ObjectiveSpec::new("multitask_sim", 2), None)
        .unwrap();
    let low = FidelitySpec::new(6, 3, 25);
    let src = engine
        .create_sprint(&request(&thread.id, 6, low, 1))
        .unwrap();
    engine.run_sprint(&src.id, 1).unwrap();
    let src = engine.sprint(&src.id).unwrap();

    let mut warm = request(&thread.id, 3, FidelitySpec::new(1, 1, 25), 2);
    warm.priming = prime(PrimingMode::Warm, &src.id, 3);
    let got = violation(engine.create_sprint(&warm));
    ensure!(
        got == Some(PrimingViolation::FidelityMismatch),
        "warm prime across fidelities gave {got:?}"
    );
    ensure!(
        engine.sprints_of(&thread.id).unwrap().len() == 1,
        "rejected sprint was created"
    );

    for mode in [PrimingMode::Warm, PrimingMode::Cold] {
        let mut cross = request(&other.id, 3, low, 3);
        cross.priming = prime(mode, &src.id, 2);
        let got = violation(engine.create_sprint(&cross));
        ensure!(
            got == Some(PrimingViolation::ThreadIsolation),
            "{mode:?} cross-thread prime gave {got:?}"
        );
    }

    let mut cold = request(&thread.id, 3, low, 99);
    cold.priming = prime(PrimingMode::Cold, &src.id, 3);
    let target = engine.create_sprint(&cold).map_err(|e| e.to_string())?;
    engine.run_sprint(&target.id, 1).unwrap();
    let target = engine.sprint(&target.id).unwrap();
    let ranked = src.ranking();
    let mut recomputed = 0;
    for (trial, (orig, score)) in target.trials.iter().zip(&ranked) {
        ensure!(
            trial.point == orig.point,
            "cold-primed point differs from source"
        );
        ensure!(
            matches!(trial.provenance, Provenance::ColdPrimed { .. }),
            "provenance {:?}",
            trial.provenance
        );
        ensure!(trial.seed != orig.seed, "cold prime reused the source seed");
        recomputed += (trial.final_score != Some(*score)) as usize;
    }
    ensure!(
        recomputed == ranked.len().min(3),
        "only {recomputed} cold-primed scores were recomputed"
    );
    Ok(format!(
        "fidelity and thread violations rejected; {recomputed}/3 cold scores recomputed"
    ))
}

fn crash_replay() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let (live, live_sprints) = {
        let engine = Engine::open(dir.path())
            .unwrap()
            .with_resolver(resolve_objective);
        let thread = engine
            .create_thread("crash", "cfg", ObjectiveSpec::new("multitask_sim", 8), None)
            .unwrap();
        let first = engine
            .create_sprint(&request(&thread.id, 5, FidelitySpec::new(2, 1, 10), 1))
            .unwrap();
        engine.run_sprint(&first.id, 1).unwrap();
        let mut req = request(&thread.id, 4, FidelitySpec::new(2, 1, 10), 2);
        req.priming = prime(PrimingMode::Cold, &first.id, 2);
        let second = engine.create_sprint(&req).unwrap();
        engine.set_fail_point(Some(FailPoint::BeforeSprintSummary));
        ensure!(
            engine.run_sprint(&second.id, 1).is_err(),
            "fail point did not trigger"
        );
        let sprints: Vec<String> = engine
            .sprints_of(&thread.id)
            .unwrap()
            .iter()
            .map(|s| serde_json::to_string(&(s, SprintSummary::of(s))).unwrap())
            .collect();
        (engine.snapshot(), sprints)
    };
    let replayed = Engine::open(dir.path()).map_err(|e| e.to_string())?;
    let sprints: Vec<String> = replayed
        .sprints_of("t1")
        .unwrap()
        .iter()
        .map(|s| serde_json::to_string(&(s, SprintSummary::of(s))).unwrap())
        .collect();
    ensure!(sprints == live_sprints, "sprint views differ after replay");
    let a = serde_json::to_string(&replayed.snapshot()).unwrap();
    let b = serde_json::to_string(&live).unwrap();
    ensure!(a == b, "engine snapshots differ after replay");
    Ok(format!(
        "{} sprints and thread state identical after replay",
        sprints.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("hyperband arithmetic", hyperband_arithmetic),
        ("pruning rules", pruning_rules),
        ("permutation counts", permutation_counts),
        ("scut oracle", scut_oracle),
        ("gp correctness", gp_correctness),
        ("tpe correctness", tpe_correctness),
        ("three-phase end to end", three_phase),
        ("calibration end to end", calibration),
        ("loss identities", loss_identities),
        ("priming legality", priming_legality),
        ("crash replay", crash_replay),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
