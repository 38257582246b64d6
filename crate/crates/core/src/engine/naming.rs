use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::fidelity::FidelitySpec;
use crate::error::{Error, Result};

/// Checkpoint a sprint's trials start from: `(epoch, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InitCheckpoint {
    pub epoch: u32,
    pub step: u32,
}

impl fmt::Display for InitCheckpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E{}_S{}", self.epoch, self.step)
    }
}

impl FromStr for InitCheckpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad checkpoint designation `{s}`"));
        let (e, st) = s.split_once('_').ok_or_else(bad)?;
        let num = |p: &str, prefix: char| -> Result<u32> {
            p.strip_prefix(prefix)
                .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|d| d.parse().ok())
                .ok_or_else(bad)
        };
        Ok(InitCheckpoint {
            epoch: num(e, 'E')?,
            step: num(st, 'S')?,
        })
    }
}

/// Structured sprint name: `Model.Variant.Grouping.T6_V3_M25.E0_S0.[suffix-]vN`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SprintName {
    pub model_type: String,
    pub variant: String,
    pub grouping: String,
    /// Fidelity designation, `T{k_T}_V{k_V}_M{E}`.
    pub fidelity: String,
    pub init: InitCheckpoint,
    #[serde(default)]
    pub suffix: String,
    pub version: u32,
}

impl SprintName {
    pub fn new(
        model_type: &str,
        variant: &str,
        grouping: &str,
        fidelity: &FidelitySpec,
        init: InitCheckpoint,
    ) -> Self {
        SprintName {
            model_type: model_type.to_string(),
            variant: variant.to_string(),
            grouping: grouping.to_string(),
            fidelity: fidelity.designation(),
            init,
            suffix: String::new(),
            version: 1,
        }
    }

    pub fn with_suffix(mut self, suffix: &str) -> Self {
        self.suffix = suffix.to_string();
        self
    }

    pub fn with_version(mut self, version: u32) -> Self {
        self.version = version;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (label, part) in [
            ("model type", &self.model_type),
            ("variant", &self.variant),
            ("grouping", &self.grouping),
            ("suffix", &self.suffix),
        ] {
            if part.contains('.') {
                return Err(Error::InvalidArgument(format!(
                    "{label} `{part}` contains '.'"
                )));
            }
            if label != "suffix" && part.is_empty() {
                return Err(Error::InvalidArgument(format!("{label} is empty")));
            }
        }
        self.fidelity.parse::<FidelitySpec>()?;
        Ok(())
    }

    pub fn render(&self) -> Result<String> {
        self.validate()?;
        let tail = if self.suffix.is_empty() {
            format!("v{}", self.version)
        } else {
            format!("{}-v{}", self.suffix, self.version)
        };
        Ok(format!(
            "{}.{}.{}.{}.{}.{}",
            self.model_type, self.variant, self.grouping, self.fidelity, self.init, tail
        ))
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad sprint name `{s}`"));
        let parts: Vec<&str> = s.split('.').collect();
        if parts.len() != 6 {
            return Err(bad());
        }
        let (suffix, version) = match parts[5].rsplit_once("-v") {
            Some((suffix, v)) => (suffix, v),
            None => ("", parts[5].strip_prefix('v').ok_or_else(bad)?),
        };
        if version.is_empty() || !version.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let name = SprintName {
            model_type: parts[0].to_string(),
            variant: parts[1].to_string(),
            grouping: parts[2].to_string(),
            fidelity: parts[3].to_string(),
            init: parts[4].parse()?,
            suffix: suffix.to_string(),
            version: version.parse().map_err(|_| bad())?,
        };
        name.validate()?;
        Ok(name)
    }
}

/// Renders the six name parts; fails if any contains the `.` delimiter.
pub fn sprint_name(name: &SprintName) -> Result<String> {
    name.render()
}
