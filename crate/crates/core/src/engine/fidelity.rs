use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStop {
    #[default]
    None,
    EndOfWarmup,
}

/// Evaluation cost level: `1/k_T` of training data, `1/k_V` of validation data,
/// and an epoch cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FidelitySpec {
    pub train_denominator: u32,
    pub val_denominator: u32,
    pub max_epochs: u32,
    #[serde(default)]
    pub scheduler_enabled: bool,
    #[serde(default)]
    pub early_stop: EarlyStop,
    #[serde(default)]
    pub calibration_epochs: u32,
}

impl FidelitySpec {
    pub fn new(train_denominator: u32, val_denominator: u32, max_epochs: u32) -> Self {
        FidelitySpec {
            train_denominator,
            val_denominator,
            max_epochs,
            scheduler_enabled: false,
            early_stop: EarlyStop::None,
            calibration_epochs: 0,
        }
    }

    pub fn with_scheduler(mut self, enabled: bool) -> Self {
        self.scheduler_enabled = enabled;
        self
    }

    pub fn with_early_stop(mut self, early_stop: EarlyStop) -> Self {
        self.early_stop = early_stop;
        self
    }

    pub fn with_calibration(mut self, epochs: u32) -> Self {
        self.calibration_epochs = epochs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_denominator < 1 || self.val_denominator < 1 {
            return Err(Error::InvalidArgument(
                "subset denominators must be >= 1".into(),
            ));
        }
        if self.max_epochs < 1 {
            return Err(Error::InvalidArgument("max_epochs must be >= 1".into()));
        }
        Ok(())
    }

    /// `T{k_T}_V{k_V}_M{max_epochs}`.
    pub fn designation(&self) -> String {
        format!(
            "T{}_V{}_M{}",
            self.train_denominator, self.val_denominator, self.max_epochs
        )
    }

    pub fn is_full_data(&self) -> bool {
        self.train_denominator == 1 && self.val_denominator == 1
    }
}

impl fmt::Display for FidelitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.designation())
    }
}

/// Parses `T6_V3_M25` (all other settings default).
impl FromStr for FidelitySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad fidelity designation `{s}`"));
        let parts: Vec<&str> = s.split('_').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let num = |p: &str, prefix: char| -> Result<u32> {
            p.strip_prefix(prefix)
                .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|d| d.parse().ok())
                .ok_or_else(bad)
        };
        let spec = FidelitySpec::new(
            num(parts[0], 'T')?,
            num(parts[1], 'V')?,
            num(parts[2], 'M')?,
        );
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn designation_round_trip() {
        let f = FidelitySpec::new(6, 3, 25);
        assert_eq!(f.designation(), "T6_V3_M25");
        assert_eq!("T6_V3_M25".parse::<FidelitySpec>().unwrap(), f);
        for bad in ["T6_V3", "T0_V1_M1", "X6_V3_M25", "T6_V3_M", "T+6_V3_M1"] {
            assert!(bad.parse::<FidelitySpec>().is_err(), "{bad}");
        }
    }
}
