//! Sequential GP optimization with hedged acquisition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::acquisition::{acquire, AcquisitionChoice, AcquisitionKind};
use super::kernel::Smoothness;
use super::model::{GpModel, NoiseModel};
use crate::error::Result;
use crate::seed::mix_seed;
use crate::space::{Encoder, HPoint, SearchSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub n_calls: usize,
    pub n_random: usize,
    #[serde(default)]
    pub smoothness: Smoothness,
    #[serde(default = "defaults::restarts")]
    pub restarts: usize,
    #[serde(default = "defaults::n_candidates")]
    pub n_candidates: usize,
    #[serde(default = "defaults::n_local")]
    pub n_local: usize,
    #[serde(default = "defaults::local_sigma")]
    pub local_sigma: f64,
    #[serde(default = "defaults::xi")]
    pub xi: f64,
    #[serde(default = "defaults::kappa")]
    pub kappa: f64,
    /// Fixed observation noise (standardized units); `None` fits it.
    #[serde(default)]
    pub noise: Option<f64>,
}

mod defaults {
    pub fn restarts() -> usize {
        5
    }
    pub fn n_candidates() -> usize {
        1000
    }
    pub fn n_local() -> usize {
        10
    }
    pub fn local_sigma() -> f64 {
        0.05
    }
    pub fn xi() -> f64 {
        0.01
    }
    pub fn kappa() -> f64 {
        1.96
    }
}

impl GpConfig {
    pub fn new(n_calls: usize, n_random: usize) -> Self {
        GpConfig {
            n_calls,
            n_random,
            smoothness: Smoothness::FiveHalves,
            restarts: defaults::restarts(),
            n_candidates: defaults::n_candidates(),
            n_local: defaults::n_local(),
            local_sigma: defaults::local_sigma(),
            xi: defaults::xi(),
            kappa: defaults::kappa(),
            noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpSuggestion {
    pub point: HPoint,
    /// `None` for random-prefix suggestions.
    pub acquisition: Option<AcquisitionKind>,
}

/// Next point to evaluate given the completed history. Pure in `(history, ordinal, seed)`.
pub fn gp_suggest(
    config: &GpConfig,
    space: &SearchSpace,
    history: &[(HPoint, f64)],
    ordinal: usize,
    seed: u64,
) -> Result<GpSuggestion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Encoder::new(space);
    let usable: Vec<&(HPoint, f64)> = history
        .iter()
        .filter(|(p, s)| s.is_finite() && space.contains(p))
        .collect();
    if ordinal < config.n_random || usable.is_empty() || encoder.width() == 0 {
        return Ok(GpSuggestion {
            point: space.sample_with(&mut rng)?,
            acquisition: None,
        });
    }

    let xs: Vec<Vec<f64>> = usable
        .iter()
        .map(|(p, _)| encoder.encode(p))
        .collect::<Result<_>>()?;
    let ys: Vec<f64> = usable.iter().map(|(_, s)| *s).collect();
    let noise = match config.noise {
        Some(v) => NoiseModel::Fixed(v),
        None => NoiseModel::Fitted,
    };
    let model = GpModel::fit_optimized(
        &xs,
        &ys,
        config.smoothness,
        noise,
        config.restarts,
        &mut rng,
    )?;

    let choice = match rng.random_range(0..3) {
        0 => AcquisitionChoice::pi(config.xi),
        1 => AcquisitionChoice::ei(config.xi),
        _ => AcquisitionChoice::lcb(config.kappa),
    };

    let mut candidates = Vec::with_capacity(config.n_candidates + config.n_local);
    for _ in 0..config.n_candidates {
        candidates.push(encoder.encode(&space.sample_with(&mut rng)?)?);
    }
    let mut order: Vec<usize> = (0..ys.len()).collect();
    order.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
    let jitter = Normal::new(0.0, config.local_sigma).expect("positive sigma");
    for &i in order.iter().take(config.n_local) {
        let moved: Vec<f64> = xs[i]
            .iter()
            .map(|c| (c + jitter.sample(&mut rng)).clamp(0.0, 1.0))
            .collect();
        candidates.push(encoder.snap(&moved));
    }
    let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let (idx, _) = acquire(&model, best, &choice, &candidates)?;
    Ok(GpSuggestion {
        point: encoder.decode(&candidates[idx]),
        acquisition: Some(choice.kind),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpTrial {
    pub point: HPoint,
    pub score: Option<f64>,
    pub acquisition: Option<AcquisitionKind>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpMinimizeResult {
    pub trials: Vec<GpTrial>,
    pub best_point: Option<HPoint>,
    pub best_score: Option<f64>,
}

/// Minimize `objective` over `space`: `n_random` uniform draws, then one GP
/// refit and hedged acquisition step per call. Failed evaluations are recorded
/// and left out of the surrogate.
pub fn gp_minimize<F>(
    mut objective: F,
    space: &SearchSpace,
    config: &GpConfig,
    seed: u64,
) -> Result<GpMinimizeResult>
where
    F: FnMut(&HPoint) -> Result<f64>,
{
    let mut history: Vec<(HPoint, f64)> = Vec::new();
    let mut trials = Vec::with_capacity(config.n_calls);
    for i in 0..config.n_calls {
        let s = gp_suggest(config, space, &history, i, mix_seed(seed, i as u64))?;
        match objective(&s.point) {
            Ok(score) if score.is_finite() => {
                history.push((s.point.clone(), score));
                trials.push(GpTrial {
                    point: s.point,
                    score: Some(score),
                    acquisition: s.acquisition,
                    error: None,
                });
            }
            Ok(score) => trials.push(GpTrial {
                point: s.point,
                score: None,
                acquisition: s.acquisition,
                error: Some(format!("non-finite score {score}")),
            }),
            Err(e) => trials.push(GpTrial {
                point: s.point,
                score: None,
                acquisition: s.acquisition,
                error: Some(e.to_string()),
            }),
        }
    }
    let best = history.iter().min_by(|a, b| a.1.total_cmp(&b.1));
    Ok(GpMinimizeResult {
        best_point: best.map(|b| b.0.clone()),
        best_score: best.map(|b| b.1),
        trials,
    })
}
