//! Loss and encoding primitives used by the testbed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::Dimension;

const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AslParams {
    /// Probability shift applied to negatives.
    pub shift: f64,
    pub gamma_pos: f64,
    pub gamma_neg: f64,
}

impl Default for AslParams {
    fn default() -> Self {
        AslParams {
            shift: 0.01,
            gamma_pos: 1.0,
            gamma_neg: 2.0,
        }
    }
}

impl AslParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.shift.is_finite()
            && (0.0..1.0).contains(&self.shift)
            && self.gamma_pos.is_finite()
            && self.gamma_pos >= 0.0
            && self.gamma_neg.is_finite()
            && self.gamma_neg >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "invalid ASL parameters {self:?}"
            )))
        }
    }
}

/// Asymmetric loss for one binary prediction.
pub fn asl_loss(p: f64, y: bool, params: &AslParams) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    if y {
        (1.0 - p).powf(params.gamma_pos) * -p.ln()
    } else {
        let pm = (p - params.shift).max(0.0);
        if pm == 0.0 {
            return 0.0;
        }
        pm.powf(params.gamma_neg) * -(1.0 - pm).ln()
    }
}

/// Analytic `d asl_loss / d p` inside the clamp region.
pub fn asl_grad(p: f64, y: bool, params: &AslParams) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    if y {
        let g = params.gamma_pos;
        let q = 1.0 - p;
        let lead = if g == 0.0 {
            0.0
        } else {
            g * q.powf(g - 1.0) * p.ln()
        };
        lead - q.powf(g) / p
    } else {
        let pm = p - params.shift;
        if pm <= 0.0 {
            return 0.0;
        }
        let g = params.gamma_neg;
        let lead = if g == 0.0 {
            0.0
        } else {
            -g * pm.powf(g - 1.0) * (1.0 - pm).ln()
        };
        lead + pm.powf(g) / (1.0 - pm)
    }
}

/// Symmetric focal loss.
pub fn focal_loss(p: f64, y: bool, gamma: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    let pt = if y { p } else { 1.0 - p };
    (1.0 - pt).powf(gamma) * -pt.ln()
}

pub fn binary_cross_entropy(p: f64, y: bool) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

pub const TASKS: [&str; 4] = ["mention", "coref", "entity", "relation"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLossBundle {
    pub losses: [f64; 4],
    /// Per-task log-variance `s_t`.
    pub log_vars: [f64; 4],
    pub entropy_weight: f64,
}

impl TaskLossBundle {
    pub fn new(losses: [f64; 4], log_vars: [f64; 4]) -> Self {
        TaskLossBundle {
            losses,
            log_vars,
            entropy_weight: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument(
                "task losses must be finite and >= 0".into(),
            ));
        }
        if self.log_vars.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(
                "log variances must be finite".into(),
            ));
        }
        if !(self.entropy_weight >= 0.0) {
            return Err(Error::InvalidArgument("entropy weight must be >= 0".into()));
        }
        Ok(())
    }
}

/// `sum_t exp(-s_t) L_t + s_t`, plus `lambda` times the Shannon entropy of the
/// normalized weights `softmax(-s)`. Returns the total and those weights.
pub fn uncertainty_weighted_loss(bundle: &TaskLossBundle) -> Result<(f64, [f64; 4])> {
    bundle.validate()?;
    let m = bundle
        .log_vars
        .iter()
        .map(|s| -s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w = [0.0; 4];
    for (wt, s) in w.iter_mut().zip(&bundle.log_vars) {
        *wt = (-s - m).exp();
    }
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    let entropy: f64 = -w
        .iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>();
    let total: f64 = bundle
        .losses
        .iter()
        .zip(&bundle.log_vars)
        .map(|(l, s)| (-s).exp() * l + s)
        .sum::<f64>()
        + bundle.entropy_weight * entropy;
    Ok((total, w))
}

/// `log2(1 + d) / log2(1 + scale_max)`.
pub fn log_linear_encode(distance: i64, scale_max: i64) -> Result<f64> {
    if distance < 0 {
        return Err(Error::InvalidArgument("distance must be >= 0".into()));
    }
    if scale_max < 1 {
        return Err(Error::InvalidArgument("scale_max must be >= 1".into()));
    }
    Ok((1.0 + distance as f64).log2() / (1.0 + scale_max as f64).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupingScheme {
    #[serde(rename = "GLOBAL")]
    Global,
    #[serde(rename = "LR0-L2", alias = "LR0_L2")]
    Lr0L2,
}

impl GroupingScheme {
    pub fn label(self) -> &'static str {
        match self {
            GroupingScheme::Global => "GLOBAL",
            GroupingScheme::Lr0L2 => "LR0-L2",
        }
    }
}

impl std::str::FromStr for GroupingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "GLOBAL" => Ok(GroupingScheme::Global),
            "LR0-L2" | "LR0_L2" => Ok(GroupingScheme::Lr0L2),
            other => Err(Error::InvalidArgument(format!("unknown grouping {other}"))),
        }
    }
}

pub const MODULE_GROUPS: [&str; 5] = ["shared", "mention", "coref", "entity", "relation"];

pub const LR_RANGE: (f64, f64) = (1e-6, 1e-3);
pub const WD_RANGE: (f64, f64) = (1e-5, 1e-1);
pub const TASK_WEIGHT_RANGE: (f64, f64) = (0.1, 2.0);

/// Search dimensions for a parameter-grouping scheme.
pub fn grouping_dimensions(scheme: GroupingScheme) -> Vec<Dimension> {
    let lr =
        |name: &str| Dimension::log_uniform(name, LR_RANGE.0, LR_RANGE.1).expect("valid range");
    let wd =
        |name: &str| Dimension::log_uniform(name, WD_RANGE.0, WD_RANGE.1).expect("valid range");
    match scheme {
        GroupingScheme::Global => {
            let mut dims = vec![lr("lr"), wd("wd")];
            for t in TASKS {
                dims.push(
                    Dimension::uniform(&format!("w_{t}"), TASK_WEIGHT_RANGE.0, TASK_WEIGHT_RANGE.1)
                        .expect("valid range"),
                );
            }
            dims
        }
        GroupingScheme::Lr0L2 => {
            let mut dims: Vec<Dimension> = MODULE_GROUPS
                .iter()
                .map(|g| lr(&format!("lr_{g}")))
                .collect();
            dims.extend(MODULE_GROUPS.iter().map(|g| wd(&format!("wd_{g}"))));
            dims
        }
    }
}
