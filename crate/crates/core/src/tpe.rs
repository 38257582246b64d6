//! Tree-structured Parzen Estimator.
//!
//! Completed trials are split into a good set (the lowest `gamma` quantile of
//! scores) and a bad set. Each dimension gets two independent Parzen densities,
//! `l` over good values and `g` over bad values; candidates are drawn from `l`
//! and the one maximizing `log l - log g` is kept.
//!
//! Numeric densities live on the unit interval of the dimension (log dims in
//! log space): a uniform prior component plus one truncated Gaussian per value,
//! all equally weighted.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::normal_cdf;
use crate::space::{Dimension, DimensionKind, HPoint, SearchSpace, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// `max(nearest-neighbour distance, 1 / (1 + n))` in unit coordinates.
    #[default]
    NearestNeighbor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    pub gamma: f64,
    pub n_candidates: usize,
    pub n_startup: usize,
    #[serde(default)]
    pub bandwidth_rule: BandwidthRule,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig {
            gamma: 0.25,
            n_candidates: 24,
            n_startup: 10,
            bandwidth_rule: BandwidthRule::NearestNeighbor,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidArgument("gamma must lie in (0, 1)".into()));
        }
        if self.n_candidates == 0 {
            return Err(Error::InvalidArgument("n_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

/// Number of good trials out of `n`.
pub fn n_good(n: usize, gamma: f64) -> usize {
    ((gamma * n as f64).ceil() as usize).max(1)
}

/// Indices of the good and bad trials. Lower scores are better; equal scores
/// keep input order, so earlier trials win ties.
pub fn split_trials(scores: &[f64], gamma: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    if scores.len() < 2 {
        return Err(Error::InsufficientHistory);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let bad = order.split_off(n_good(scores.len(), gamma));
    Ok((order, bad))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParzenDensity {
    Numeric {
        centers: Vec<f64>,
        bandwidths: Vec<f64>,
    },
    Categorical {
        probs: Vec<f64>,
    },
}

fn truncated_normal_pdf(u: f64, c: f64, h: f64) -> f64 {
    let z = (u - c) / h;
    let mass = normal_cdf((1.0 - c) / h) - normal_cdf(-c / h);
    (-0.5 * z * z).exp() / (h * (2.0 * std::f64::consts::PI).sqrt() * mass)
}

impl ParzenDensity {
    fn numeric(unit_values: &[f64], rule: BandwidthRule) -> Self {
        let n = unit_values.len();
        let floor = 1.0 / (1.0 + n as f64);
        let bandwidths = match rule {
            BandwidthRule::NearestNeighbor => unit_values
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let nearest = unit_values
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, o)| (o - c).abs())
                        .fold(f64::INFINITY, f64::min);
                    let nearest = if nearest.is_finite() { nearest } else { 1.0 };
                    nearest.max(floor)
                })
                .collect(),
        };
        ParzenDensity::Numeric {
            centers: unit_values.to_vec(),
            bandwidths,
        }
    }

    /// Density at `u` in unit coordinates (numeric only).
    pub fn pdf(&self, u: f64) -> f64 {
        match self {
            ParzenDensity::Numeric {
                centers,
                bandwidths,
            } => {
                if !(0.0..=1.0).contains(&u) {
                    return 0.0;
                }
                let sum: f64 = centers
                    .iter()
                    .zip(bandwidths)
                    .map(|(c, h)| truncated_normal_pdf(u, *c, *h))
                    .sum();
                (1.0 + sum) / (centers.len() as f64 + 1.0)
            }
            ParzenDensity::Categorical { .. } => panic!("pdf on categorical density"),
        }
    }

    /// Probability of category index `i` (categorical only).
    pub fn pmf(&self, i: usize) -> f64 {
        match self {
            ParzenDensity::Categorical { probs } => probs.get(i).copied().unwrap_or(0.0),
            ParzenDensity::Numeric { .. } => panic!("pmf on numeric density"),
        }
    }

    /// Log density (numeric: at a unit coordinate; categorical: at an index).
    pub fn log_density(&self, x: f64) -> f64 {
        match self {
            ParzenDensity::Numeric { .. } => self.pdf(x).ln(),
            ParzenDensity::Categorical { .. } => self.pmf(x as usize).ln(),
        }
    }

    /// Draw a unit coordinate or category index.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ParzenDensity::Numeric {
                centers,
                bandwidths,
            } => {
                let k = rng.random_range(0..=centers.len());
                if k == centers.len() {
                    return rng.random_range(0.0..=1.0);
                }
                let normal = Normal::new(centers[k], bandwidths[k]).expect("positive bandwidth");
                for _ in 0..1000 {
                    let x = normal.sample(rng);
                    if (0.0..=1.0).contains(&x) {
                        return x;
                    }
                }
                centers[k].clamp(0.0, 1.0)
            }
            ParzenDensity::Categorical { probs } => {
                let mut t = rng.random_range(0.0..1.0);
                for (i, p) in probs.iter().enumerate() {
                    if t < *p {
                        return i as f64;
                    }
                    t -= p;
                }
                (probs.len() - 1) as f64
            }
        }
    }
}

/// Fit a Parzen density to observed values of one dimension. An empty value
/// list yields the uniform prior alone.
pub fn fit_parzen(
    values: &[Value],
    dimension: &Dimension,
    rule: BandwidthRule,
) -> Result<ParzenDensity> {
    if dimension.kind == DimensionKind::Categorical {
        let mut counts = vec![1.0; dimension.categories.len()];
        for v in values {
            let c = v
                .as_category()
                .ok_or_else(|| Error::invalid_dim(&dimension.name, "expected a category"))?;
            let i = dimension
                .categories
                .iter()
                .position(|x| x == c)
                .ok_or_else(|| {
                    Error::invalid_dim(&dimension.name, format!("unknown category `{c}`"))
                })?;
            counts[i] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        return Ok(ParzenDensity::Categorical {
            probs: counts.into_iter().map(|c| c / total).collect(),
        });
    }
    let units: Vec<f64> = values
        .iter()
        .map(|v| {
            dimension
                .to_unit(v)
                .map(|u| u.clamp(0.0, 1.0))
                .ok_or_else(|| Error::invalid_dim(&dimension.name, "expected a number"))
        })
        .collect::<Result<_>>()?;
    Ok(ParzenDensity::numeric(&units, rule))
}

/// Per-dimension record of how a suggestion was chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionChoice {
    pub name: String,
    pub good: ParzenDensity,
    pub bad: ParzenDensity,
    /// Candidates as unit coordinates (numeric) or category indices.
    pub candidates: Vec<f64>,
    pub scores: Vec<f64>,
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpeSuggestion {
    pub point: HPoint,
    /// Empty when the suggestion came from the uniform startup phase.
    pub choices: Vec<DimensionChoice>,
}

/// Suggest the next point from completed `(point, score)` history.
pub fn tpe_suggest(
    history: &[(HPoint, f64)],
    space: &SearchSpace,
    config: &TpeConfig,
    seed: u64,
) -> Result<HPoint> {
    Ok(tpe_suggest_detailed(history, space, config, seed)?.point)
}

pub fn tpe_suggest_detailed(
    history: &[(HPoint, f64)],
    space: &SearchSpace,
    config: &TpeConfig,
    seed: u64,
) -> Result<TpeSuggestion> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let usable: Vec<&(HPoint, f64)> = history
        .iter()
        .filter(|(p, s)| s.is_finite() && space.contains(p))
        .collect();
    if usable.len() < config.n_startup.max(2) {
        return Ok(TpeSuggestion {
            point: space.sample_with(&mut rng)?,
            choices: Vec::new(),
        });
    }
    let scores: Vec<f64> = usable.iter().map(|(_, s)| *s).collect();
    let (good_idx, bad_idx) = split_trials(&scores, config.gamma)?;

    let mut point = HPoint::new();
    let mut choices = Vec::new();
    for dim in &space.dimensions {
        if let Some(v) = &dim.frozen {
            point.values.insert(dim.name.clone(), v.clone());
            continue;
        }
        let collect = |idx: &[usize]| -> Vec<Value> {
            idx.iter()
                .map(|&i| {
                    usable[i]
                        .0
                        .get(&dim.name)
                        .cloned()
                        .expect("contained point")
                })
                .collect()
        };
        let good = fit_parzen(&collect(&good_idx), dim, config.bandwidth_rule)?;
        let bad = fit_parzen(&collect(&bad_idx), dim, config.bandwidth_rule)?;
        let candidates: Vec<f64> = (0..config.n_candidates)
            .map(|_| good.sample(&mut rng))
            .collect();
        let scores: Vec<f64> = candidates
            .iter()
            .map(|&x| good.log_density(x) - bad.log_density(x))
            .collect();
        let mut chosen = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[chosen] {
                chosen = i;
            }
        }
        let value = if dim.kind == DimensionKind::Categorical {
            Value::Cat(dim.categories[candidates[chosen] as usize].clone())
        } else {
            dim.from_unit(candidates[chosen]).expect("numeric")
        };
        point.values.insert(dim.name.clone(), value);
        choices.push(DimensionChoice {
            name: dim.name.clone(),
            good,
            bad,
            candidates,
            scores,
            chosen,
        });
    }
    Ok(TpeSuggestion { point, choices })
}
