//! Acquisition functions for minimization. Larger acquisition values are better.

use serde::{Deserialize, Serialize};

use super::model::GpModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionKind {
    Pi,
    Ei,
    Lcb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionChoice {
    pub kind: AcquisitionKind,
    /// ξ for PI/EI, κ for LCB.
    pub parameter: f64,
}

impl AcquisitionChoice {
    pub fn pi(xi: f64) -> Self {
        AcquisitionChoice {
            kind: AcquisitionKind::Pi,
            parameter: xi,
        }
    }

    pub fn ei(xi: f64) -> Self {
        AcquisitionChoice {
            kind: AcquisitionKind::Ei,
            parameter: xi,
        }
    }

    pub fn lcb(kappa: f64) -> Self {
        AcquisitionChoice {
            kind: AcquisitionKind::Lcb,
            parameter: kappa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            AcquisitionKind::Lcb => self.parameter > 0.0,
            _ => self.parameter >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "bad acquisition parameter {}",
                self.parameter
            )))
        }
    }

    /// Acquisition value from a posterior mean and standard deviation.
    pub fn value(&self, mean: f64, sd: f64, best: f64) -> f64 {
        match self.kind {
            AcquisitionKind::Lcb => -(mean - self.parameter * sd),
            AcquisitionKind::Pi => {
                let improvement = best - self.parameter - mean;
                if sd > 0.0 {
                    normal_cdf(improvement / sd)
                } else if improvement > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            AcquisitionKind::Ei => {
                let improvement = best - self.parameter - mean;
                if sd > 0.0 {
                    let z = improvement / sd;
                    improvement * normal_cdf(z) + sd * normal_pdf(z)
                } else {
                    improvement.max(0.0)
                }
            }
        }
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Acquisition values of every candidate, computed in standardized score units.
pub fn acquisition_values(
    model: &GpModel,
    best_score: f64,
    choice: &AcquisitionChoice,
    candidates: &[Vec<f64>],
) -> Result<Vec<f64>> {
    choice.validate()?;
    let best = model.standardize(best_score);
    candidates
        .iter()
        .map(|c| {
            if c.len() != model.dims() {
                return Err(Error::DimensionMismatch {
                    expected: model.dims(),
                    got: c.len(),
                });
            }
            let (m, v) = model.predict_standardized(c);
            Ok(choice.value(m, v.sqrt(), best))
        })
        .collect()
}

/// Index and value of the candidate maximizing the acquisition; ties go to the
/// lowest index.
pub fn acquire(
    model: &GpModel,
    best_score: f64,
    choice: &AcquisitionChoice,
    candidates: &[Vec<f64>],
) -> Result<(usize, f64)> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates".into()));
    }
    let values = acquisition_values(model, best_score, choice, candidates)?;
    let mut best = (0, values[0]);
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > best.1 {
            best = (i, *v);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::kernel::{KernelSpec, Smoothness};

    #[test]
    fn lcb_prefers_lower_mean_at_equal_sd() {
        let c = AcquisitionChoice::lcb(1.0);
        assert!(c.value(1.0, 0.5, 0.0) > c.value(2.0, 0.5, 0.0));
    }

    #[test]
    fn ei_zero_at_noiseless_incumbent() {
        let k = KernelSpec::isotropic(Smoothness::FiveHalves, 1, 0.2, 1.0).unwrap();
        let m = GpModel::fit(&[vec![0.2], vec![0.8]], &[1.0, 3.0], k, 0.0).unwrap();
        let v = acquisition_values(&m, 1.0, &AcquisitionChoice::ei(0.0), &[vec![0.2]]).unwrap();
        assert!(v[0].abs() < 1e-6, "{}", v[0]);
    }

    #[test]
    fn zero_sd_limits() {
        let pi = AcquisitionChoice::pi(0.0);
        assert_eq!(pi.value(0.5, 0.0, 1.0), 1.0);
        assert_eq!(pi.value(1.5, 0.0, 1.0), 0.0);
        let ei = AcquisitionChoice::ei(0.0);
        assert_eq!(ei.value(1.5, 0.0, 1.0), 0.0);
        assert_eq!(ei.value(0.25, 0.0, 1.0), 0.75);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let k = KernelSpec::isotropic(Smoothness::FiveHalves, 1, 0.2, 1.0).unwrap();
        let m = GpModel::fit(&[vec![0.5]], &[1.0], k, 0.0).unwrap();
        let (i, _) = acquire(
            &m,
            1.0,
            &AcquisitionChoice::lcb(1.0),
            &[vec![0.1], vec![0.9]],
        )
        .unwrap();
        assert_eq!(i, 0);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-12);
    }
}
