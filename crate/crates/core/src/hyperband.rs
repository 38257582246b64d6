//! Hyperband bracket arithmetic and asynchronous successive-halving prune decisions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperbandConfig {
    /// Maximum resource per trial (epochs).
    pub max_resource: u64,
    /// Downsampling rate.
    pub eta: u64,
    pub s_max: u32,
    /// Total budget `(s_max + 1) * R`.
    pub budget: u64,
}

/// `s_max = floor(log_eta R)` and `B = (s_max + 1) R`, computed in integers.
pub fn derive_config(max_resource: u64, eta: u64) -> Result<HyperbandConfig> {
    if max_resource < 1 {
        return Err(Error::InvalidArgument("R must be >= 1".into()));
    }
    if eta < 2 {
        return Err(Error::InvalidArgument("eta must be >= 2".into()));
    }
    let mut s_max = 0u32;
    let mut power = eta;
    while power <= max_resource {
        s_max += 1;
        power = match power.checked_mul(eta) {
            Some(p) => p,
            None => break,
        };
    }
    Ok(HyperbandConfig {
        max_resource,
        eta,
        s_max,
        budget: (s_max as u64 + 1) * max_resource,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub n_configs: u64,
    /// `R * eta^(i - s)`; fractional when `R` is not a power of `eta`.
    pub resource: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: u32,
    pub rungs: Vec<Rung>,
}

/// Classical Hyperband bracket `s`: `n = ceil((B/R) eta^s / (s+1))` configs at
/// resource `R eta^-s`, each rung keeping `floor(n eta^-i)` at `r eta^i`.
pub fn bracket_schedule(config: &HyperbandConfig, s: u32) -> Result<Bracket> {
    if s > config.s_max {
        return Err(Error::InvalidArgument(format!(
            "bracket {s} outside 0..={}",
            config.s_max
        )));
    }
    let eta = config.eta;
    let eta_s = eta.pow(s);
    let brackets = config.s_max as u64 + 1;
    let n = (brackets * eta_s).div_ceil(s as u64 + 1);
    let r = config.max_resource as f64 / eta_s as f64;
    let rungs = (0..=s)
        .map(|i| Rung {
            n_configs: n / eta.pow(i),
            resource: r * eta.pow(i) as f64,
        })
        .collect();
    Ok(Bracket { s, rungs })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungRecord {
    pub trial: u64,
    pub resource: u64,
    pub score: f64,
}

/// Keep count at a rung holding `n` reported scores.
pub fn keep_count(n: usize, eta: u64) -> usize {
    (n / eta as usize).max(1)
}

/// Whether a trial that just reported `score` at a rung should stop.
///
/// `rung` holds every record at that rung, including this trial's. The trial
/// is pruned iff its score is strictly worse (greater) than the
/// `max(1, floor(n / eta))`-th best score. A lone arrival always survives.
pub fn should_prune(rung: &[RungRecord], score: f64, eta: u64) -> bool {
    if rung.len() <= 1 {
        return false;
    }
    let mut scores: Vec<f64> = rung.iter().map(|r| r.score).collect();
    scores.sort_by(f64::total_cmp);
    let boundary = scores[keep_count(scores.len(), eta) - 1];
    score > boundary
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TickPhase {
    Train,
    Validation,
    Calibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tick {
    pub epoch: u32,
    pub prunable: bool,
    pub phase: TickPhase,
}

/// Reporting schedule: a prunable training checkpoint every `train_stride`
/// epochs, a non-prunable validation report every epoch, then non-prunable
/// calibration epochs after training.
pub fn resource_ticks(
    max_epochs: u32,
    train_stride: u32,
    calibration_epochs: u32,
) -> Result<Vec<Tick>> {
    if train_stride == 0 {
        return Err(Error::InvalidArgument("train_stride must be >= 1".into()));
    }
    let mut ticks = Vec::new();
    for epoch in 1..=max_epochs {
        if epoch % train_stride == 0 {
            ticks.push(Tick {
                epoch,
                prunable: true,
                phase: TickPhase::Train,
            });
        }
        ticks.push(Tick {
            epoch,
            prunable: false,
            phase: TickPhase::Validation,
        });
    }
    for c in 1..=calibration_epochs {
        ticks.push(Tick {
            epoch: max_epochs + c,
            prunable: false,
            phase: TickPhase::Calibration,
        });
    }
    Ok(ticks)
}
