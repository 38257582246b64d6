//! Hyperparameter search spaces.
//!
//! A [`SearchSpace`] is an ordered list of named [`Dimension`]s. Spaces are
//! immutable values: pruning, widening, freezing and unfreezing all return a
//! new space whose `version` is one higher and whose `parent` points at the
//! version it was derived from. Each edit leaves an [`AuditEntry`] per touched
//! dimension so a reviewer can see which rule produced every range.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single coordinate value of a hyperparameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Cat(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Int(v) => Some(v as f64),
            Value::Real(v) => Some(v),
            Value::Cat(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            Value::Cat(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v}"),
            Value::Cat(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionKind {
    LogUniform,
    Uniform,
    Integer,
    Categorical,
}

impl DimensionKind {
    pub fn is_numeric(self) -> bool {
        !matches!(self, DimensionKind::Categorical)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub kind: DimensionKind,
    pub low: Option<f64>,
    pub high: Option<f64>,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub frozen: Option<Value>,
}

impl Dimension {
    fn numeric(name: &str, kind: DimensionKind, low: f64, high: f64) -> Result<Self> {
        let dim = Dimension {
            name: name.to_string(),
            kind,
            low: Some(low),
            high: Some(high),
            categories: Vec::new(),
            frozen: None,
        };
        dim.validate()?;
        Ok(dim)
    }

    pub fn log_uniform(name: &str, low: f64, high: f64) -> Result<Self> {
        Self::numeric(name, DimensionKind::LogUniform, low, high)
    }

    pub fn uniform(name: &str, low: f64, high: f64) -> Result<Self> {
        Self::numeric(name, DimensionKind::Uniform, low, high)
    }

    pub fn integer(name: &str, low: i64, high: i64) -> Result<Self> {
        Self::numeric(name, DimensionKind::Integer, low as f64, high as f64)
    }

    pub fn categorical<S: AsRef<str>>(name: &str, categories: &[S]) -> Result<Self> {
        let dim = Dimension {
            name: name.to_string(),
            kind: DimensionKind::Categorical,
            low: None,
            high: None,
            categories: categories.iter().map(|c| c.as_ref().to_string()).collect(),
            frozen: None,
        };
        dim.validate()?;
        Ok(dim)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen.is_some()
    }

    /// Numeric bounds, `None` for categorical dimensions.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match (self.low, self.high) {
            (Some(lo), Some(hi)) if self.kind.is_numeric() => Some((lo, hi)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid_dim(&self.name, "empty name"));
        }
        match self.kind {
            DimensionKind::Categorical => {
                if self.categories.is_empty() {
                    return Err(Error::invalid_dim(&self.name, "no categories"));
                }
                for (i, c) in self.categories.iter().enumerate() {
                    if self.categories[..i].contains(c) {
                        return Err(Error::invalid_dim(
                            &self.name,
                            format!("duplicate category `{c}`"),
                        ));
                    }
                }
            }
            kind => {
                let (lo, hi) = self
                    .bounds()
                    .ok_or_else(|| Error::invalid_dim(&self.name, "missing bounds"))?;
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::invalid_dim(&self.name, "non-finite bounds"));
                }
                if lo > hi || (lo == hi && self.frozen.is_none()) {
                    return Err(Error::invalid_dim(&self.name, "low must be < high"));
                }
                if kind == DimensionKind::LogUniform && lo <= 0.0 {
                    return Err(Error::invalid_dim(
                        &self.name,
                        "log-uniform low must be > 0",
                    ));
                }
                if kind == DimensionKind::Integer && (lo.fract() != 0.0 || hi.fract() != 0.0) {
                    return Err(Error::invalid_dim(
                        &self.name,
                        "integer bounds must be integral",
                    ));
                }
            }
        }
        if let Some(v) = &self.frozen {
            if !self.value_in_range(v) {
                return Err(Error::invalid_dim(
                    &self.name,
                    format!("frozen value {v} outside range"),
                ));
            }
        }
        Ok(())
    }

    /// Range/category membership ignoring the frozen value.
    fn value_in_range(&self, value: &Value) -> bool {
        match self.kind {
            DimensionKind::Categorical => value
                .as_category()
                .is_some_and(|c| self.categories.iter().any(|x| x == c)),
            DimensionKind::Integer => {
                let Some(v) = value.as_f64() else {
                    return false;
                };
                let (lo, hi) = self.bounds().expect("validated numeric");
                v.fract() == 0.0 && v >= lo && v <= hi
            }
            _ => {
                let Some(v) = value.as_f64() else {
                    return false;
                };
                let (lo, hi) = self.bounds().expect("validated numeric");
                v >= lo && v <= hi
            }
        }
    }

    pub fn contains(&self, value: &Value) -> bool {
        match &self.frozen {
            Some(f) => values_equal(f, value),
            None => self.value_in_range(value),
        }
    }

    /// Coerce a value to this dimension's canonical representation
    /// (integers as `Int`, continuous as `Real`).
    pub fn canonical(&self, value: &Value) -> Option<Value> {
        match self.kind {
            DimensionKind::Categorical => value.as_category().map(|c| Value::Cat(c.to_string())),
            DimensionKind::Integer => value
                .as_f64()
                .filter(|v| v.fract() == 0.0)
                .map(|v| Value::Int(v as i64)),
            _ => value.as_f64().map(Value::Real),
        }
    }

    /// Map a numeric value to `[0, 1]` over the current range (log dims in log space).
    pub fn to_unit(&self, value: &Value) -> Option<f64> {
        let (lo, hi) = self.bounds()?;
        let v = value.as_f64()?;
        let u = match self.kind {
            DimensionKind::LogUniform => (v.ln() - lo.ln()) / (hi.ln() - lo.ln()),
            _ => (v - lo) / (hi - lo),
        };
        Some(if u.is_finite() { u } else { 0.0 })
    }

    /// Inverse of [`Dimension::to_unit`]; integers are rounded to the lattice.
    pub fn from_unit(&self, u: f64) -> Option<Value> {
        let (lo, hi) = self.bounds()?;
        let u = u.clamp(0.0, 1.0);
        Some(match self.kind {
            DimensionKind::LogUniform => {
                Value::Real((lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi))
            }
            DimensionKind::Integer => Value::Int((lo + u * (hi - lo)).round() as i64),
            _ => Value::Real((lo + u * (hi - lo)).clamp(lo, hi)),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        if let Some(v) = &self.frozen {
            return v.clone();
        }
        match self.kind {
            DimensionKind::Categorical => {
                let i = rng.random_range(0..self.categories.len());
                Value::Cat(self.categories[i].clone())
            }
            DimensionKind::Integer => {
                let (lo, hi) = self.bounds().expect("validated numeric");
                Value::Int(rng.random_range(lo as i64..=hi as i64))
            }
            DimensionKind::LogUniform => {
                let (lo, hi) = self.bounds().expect("validated numeric");
                let x: f64 = rng.random_range(lo.ln()..=hi.ln());
                Value::Real(x.exp().clamp(lo, hi))
            }
            DimensionKind::Uniform => {
                let (lo, hi) = self.bounds().expect("validated numeric");
                Value::Real(rng.random_range(lo..=hi))
            }
        }
    }
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Cat(x), Value::Cat(y)) => x == y,
        (Value::Cat(_), _) | (_, Value::Cat(_)) => false,
        _ => a.as_f64() == b.as_f64(),
    }
}

/// A hyperparameter assignment: dimension name to value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HPoint {
    pub values: BTreeMap<String, Value>,
}

impl HPoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: Value) -> Self {
        self.values.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.get(name)
    }

    pub fn real(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(Value::as_f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Low,
    High,
}

/// Margins added around the top-k hull when pruning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginPolicy {
    /// Multiplicative factor for log-uniform dims: `[a / f, b * f]`.
    pub log_factor: f64,
    /// Additive constant for uniform dims: `[a - d, b + d]`.
    pub uniform_delta: f64,
    /// Additive lattice steps for integer dims.
    pub integer_delta: i64,
}

impl Default for MarginPolicy {
    fn default() -> Self {
        MarginPolicy {
            log_factor: 1.5,
            uniform_delta: 0.01,
            integer_delta: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Rule {
    TopK {
        k: usize,
        hull_low: f64,
        hull_high: f64,
        margin: f64,
        low: f64,
        high: f64,
    },
    TopKCategories {
        k: usize,
        kept: Vec<String>,
    },
    DegenerateRange {
        k: usize,
        value: f64,
    },
    Widen {
        side: Side,
        amount: f64,
    },
    Freeze {
        value: Value,
    },
    Unfreeze {
        low: f64,
        high: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub dimension: String,
    #[serde(flatten)]
    pub rule: Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub name: String,
    pub version: u64,
    pub parent: Option<u64>,
    pub dimensions: Vec<Dimension>,
    /// Rules applied by the edit that produced this version.
    #[serde(default)]
    pub audit: Vec<AuditEntry>,
}

/// Result of [`SearchSpace::prune_to_top_k`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pruned {
    pub space: SearchSpace,
    /// Dimensions whose top-k values collapsed to a single point; left as-is.
    pub degenerate: Vec<String>,
}

impl SearchSpace {
    pub fn new(name: &str, dimensions: Vec<Dimension>) -> Result<Self> {
        let space = SearchSpace {
            name: name.to_string(),
            version: 1,
            parent: None,
            dimensions,
            audit: Vec::new(),
        };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.dimensions.iter().enumerate() {
            if self.dimensions[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::DuplicateDimension(d.name.clone()));
            }
            d.validate()?;
        }
        Ok(())
    }

    pub fn dimension(&self, name: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.dimensions
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDimension(name.to_string()))
    }

    pub fn active(&self) -> impl Iterator<Item = &Dimension> {
        self.dimensions.iter().filter(|d| !d.is_frozen())
    }

    pub fn n_active(&self) -> usize {
        self.active().count()
    }

    /// Starts a new version derived from this one.
    fn derive(&self) -> SearchSpace {
        SearchSpace {
            name: self.name.clone(),
            version: self.version + 1,
            parent: Some(self.version),
            dimensions: self.dimensions.clone(),
            audit: Vec::new(),
        }
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<HPoint> {
        if self.dimensions.is_empty() {
            return Err(Error::NoActiveDimensions);
        }
        let mut point = HPoint::new();
        for d in &self.dimensions {
            point.values.insert(d.name.clone(), d.sample(rng));
        }
        Ok(point)
    }

    /// Uniform sample (log dims uniform in log space); deterministic in `seed`.
    pub fn sample_uniform(&self, seed: u64) -> Result<HPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng)
    }

    /// True iff `point` names exactly this space's dimensions and every value
    /// lies in its dimension's current range (or equals the frozen value).
    pub fn contains(&self, point: &HPoint) -> bool {
        point.values.len() == self.dimensions.len()
            && self
                .dimensions
                .iter()
                .all(|d| point.get(&d.name).is_some_and(|v| d.contains(v)))
    }

    /// Shrink every active dimension to the hull of the `k` best points plus a margin.
    ///
    /// Lower scores are better. Non-finite scores are ignored. Ranges never grow
    /// beyond the current bounds.
    pub fn prune_to_top_k(
        &self,
        scored: &[(&HPoint, f64)],
        k: usize,
        margins: &MarginPolicy,
    ) -> Result<Pruned> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let mut ranked: Vec<(&HPoint, f64)> = scored
            .iter()
            .copied()
            .filter(|(_, s)| s.is_finite())
            .collect();
        if ranked.len() < k {
            return Err(Error::InsufficientTrials {
                needed: k,
                available: ranked.len(),
            });
        }
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
        let top = &ranked[..k];

        let mut next = self.derive();
        let mut degenerate = Vec::new();
        for dim in next.dimensions.iter_mut().filter(|d| !d.is_frozen()) {
            let values: Vec<&Value> = top
                .iter()
                .map(|(p, _)| {
                    p.get(&dim.name)
                        .ok_or_else(|| Error::invalid_dim(&dim.name, "missing from a top-k point"))
                })
                .collect::<Result<_>>()?;

            if dim.kind == DimensionKind::Categorical {
                let kept: Vec<String> = dim
                    .categories
                    .iter()
                    .filter(|c| values.iter().any(|v| v.as_category() == Some(c.as_str())))
                    .cloned()
                    .collect();
                if kept.is_empty() {
                    return Err(Error::invalid_dim(
                        &dim.name,
                        "no top-k value among categories",
                    ));
                }
                dim.categories = kept.clone();
                next.audit.push(AuditEntry {
                    dimension: dim.name.clone(),
                    rule: Rule::TopKCategories { k, kept },
                });
                continue;
            }

            let nums: Vec<f64> = values
                .iter()
                .map(|v| {
                    v.as_f64()
                        .ok_or_else(|| Error::invalid_dim(&dim.name, "non-numeric value"))
                })
                .collect::<Result<_>>()?;
            let a = nums.iter().copied().fold(f64::INFINITY, f64::min);
            let b = nums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if a == b {
                degenerate.push(dim.name.clone());
                next.audit.push(AuditEntry {
                    dimension: dim.name.clone(),
                    rule: Rule::DegenerateRange { k, value: a },
                });
                continue;
            }
            let (lo0, hi0) = dim.bounds().expect("numeric");
            let (lo, hi, margin) = match dim.kind {
                DimensionKind::LogUniform => (
                    a / margins.log_factor,
                    b * margins.log_factor,
                    margins.log_factor,
                ),
                DimensionKind::Uniform => (
                    a - margins.uniform_delta,
                    b + margins.uniform_delta,
                    margins.uniform_delta,
                ),
                DimensionKind::Integer => {
                    let d = margins.integer_delta as f64;
                    (a - d, b + d, d)
                }
                DimensionKind::Categorical => unreachable!(),
            };
            let (lo, hi) = (lo.max(lo0), hi.min(hi0));
            dim.low = Some(lo);
            dim.high = Some(hi);
            next.audit.push(AuditEntry {
                dimension: dim.name.clone(),
                rule: Rule::TopK {
                    k,
                    hull_low: a,
                    hull_high: b,
                    margin,
                    low: lo,
                    high: hi,
                },
            });
        }
        next.validate()?;
        Ok(Pruned {
            space: next,
            degenerate,
        })
    }

    /// Move one bound outward: multiplicatively for log-uniform dims,
    /// additively for uniform and integer dims.
    pub fn widen_dimension(&self, name: &str, side: Side, amount: f64) -> Result<SearchSpace> {
        let idx = self.index_of(name)?;
        let dim = &self.dimensions[idx];
        if dim.is_frozen() {
            return Err(Error::FrozenDimension(name.to_string()));
        }
        let (lo, hi) = match dim.kind {
            DimensionKind::Categorical => return Err(Error::CategoricalWiden(name.to_string())),
            _ => dim.bounds().expect("numeric"),
        };
        let (lo, hi) = match dim.kind {
            DimensionKind::LogUniform => {
                if !(amount > 1.0) {
                    return Err(Error::InvalidArgument(
                        "log widening factor must be > 1".into(),
                    ));
                }
                match side {
                    Side::Low => (lo / amount, hi),
                    Side::High => (lo, hi * amount),
                }
            }
            kind => {
                if !(amount > 0.0) || (kind == DimensionKind::Integer && amount.fract() != 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "invalid widening delta {amount}"
                    )));
                }
                match side {
                    Side::Low => (lo - amount, hi),
                    Side::High => (lo, hi + amount),
                }
            }
        };
        let mut next = self.derive();
        next.dimensions[idx].low = Some(lo);
        next.dimensions[idx].high = Some(hi);
        next.audit.push(AuditEntry {
            dimension: name.to_string(),
            rule: Rule::Widen { side, amount },
        });
        next.validate()?;
        Ok(next)
    }

    pub fn freeze(&self, name: &str, value: Value) -> Result<SearchSpace> {
        self.freeze_many(&[(name.to_string(), value)])
    }

    /// Freeze several dimensions in one edit (one version bump).
    pub fn freeze_many(&self, freezes: &[(String, Value)]) -> Result<SearchSpace> {
        let mut next = self.derive();
        for (name, value) in freezes {
            let idx = next.index_of(name)?;
            let dim = &mut next.dimensions[idx];
            let value = dim
                .canonical(value)
                .ok_or_else(|| Error::invalid_dim(name, format!("value {value} has wrong type")))?;
            if !dim.value_in_range(&value) {
                return Err(Error::invalid_dim(
                    name,
                    format!("frozen value {value} outside range"),
                ));
            }
            dim.frozen = Some(value.clone());
            next.audit.push(AuditEntry {
                dimension: name.clone(),
                rule: Rule::Freeze { value },
            });
        }
        Ok(next)
    }

    /// Reactivate a frozen numeric dimension over `[low, high]`.
    pub fn unfreeze(&self, name: &str, low: f64, high: f64) -> Result<SearchSpace> {
        let idx = self.index_of(name)?;
        let mut next = self.derive();
        let dim = &mut next.dimensions[idx];
        if !dim.kind.is_numeric() {
            return Err(Error::invalid_dim(
                name,
                "only numeric dimensions can be re-ranged",
            ));
        }
        dim.frozen = None;
        dim.low = Some(low);
        dim.high = Some(high);
        next.audit.push(AuditEntry {
            dimension: name.to_string(),
            rule: Rule::Unfreeze { low, high },
        });
        next.validate()?;
        Ok(next)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let space: SearchSpace = serde_json::from_str(s)?;
        space.validate()?;
        Ok(space)
    }
}

enum Segment {
    Numeric { dim: usize },
    OneHot { dim: usize, width: usize },
}

/// Maps points of a space to unit-cube coordinate vectors over the active
/// dimensions: numeric dims to `[0, 1]` (log dims through the log), categorical
/// dims one-hot.
pub struct Encoder<'a> {
    space: &'a SearchSpace,
    segments: Vec<Segment>,
    width: usize,
}

impl<'a> Encoder<'a> {
    pub fn new(space: &'a SearchSpace) -> Self {
        let mut segments = Vec::new();
        let mut width = 0;
        for (i, d) in space.dimensions.iter().enumerate() {
            if d.is_frozen() {
                continue;
            }
            if d.kind == DimensionKind::Categorical {
                segments.push(Segment::OneHot {
                    dim: i,
                    width: d.categories.len(),
                });
                width += d.categories.len();
            } else {
                segments.push(Segment::Numeric { dim: i });
                width += 1;
            }
        }
        Encoder {
            space,
            segments,
            width,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn encode(&self, point: &HPoint) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.width);
        for seg in &self.segments {
            match *seg {
                Segment::Numeric { dim } => {
                    let d = &self.space.dimensions[dim];
                    let v = point
                        .get(&d.name)
                        .ok_or_else(|| Error::UnknownDimension(d.name.clone()))?;
                    let u = d
                        .to_unit(v)
                        .ok_or_else(|| Error::invalid_dim(&d.name, "non-numeric value"))?;
                    out.push(u.clamp(0.0, 1.0));
                }
                Segment::OneHot { dim, width } => {
                    let d = &self.space.dimensions[dim];
                    let v = point
                        .get(&d.name)
                        .ok_or_else(|| Error::UnknownDimension(d.name.clone()))?;
                    let hot = d
                        .categories
                        .iter()
                        .position(|c| Some(c.as_str()) == v.as_category());
                    out.extend((0..width).map(|j| if Some(j) == hot { 1.0 } else { 0.0 }));
                }
            }
        }
        Ok(out)
    }

    pub fn decode(&self, coords: &[f64]) -> HPoint {
        let mut point = HPoint::new();
        for d in &self.space.dimensions {
            if let Some(v) = &d.frozen {
                point.values.insert(d.name.clone(), v.clone());
            }
        }
        let mut at = 0;
        for seg in &self.segments {
            match *seg {
                Segment::Numeric { dim } => {
                    let d = &self.space.dimensions[dim];
                    point
                        .values
                        .insert(d.name.clone(), d.from_unit(coords[at]).expect("numeric"));
                    at += 1;
                }
                Segment::OneHot { dim, width } => {
                    let d = &self.space.dimensions[dim];
                    let block = &coords[at..at + width];
                    let best = (0..width)
                        .max_by(|&a, &b| block[a].total_cmp(&block[b]).then(b.cmp(&a)))
                        .unwrap_or(0);
                    point
                        .values
                        .insert(d.name.clone(), Value::Cat(d.categories[best].clone()));
                    at += width;
                }
            }
        }
        point
    }

    /// Round-trip through a point so integer and categorical coordinates sit on
    /// their lattice.
    pub fn snap(&self, coords: &[f64]) -> Vec<f64> {
        self.encode(&self.decode(coords))
            .expect("decoded point is encodable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr_space() -> SearchSpace {
        SearchSpace::new(
            "s",
            vec![
                Dimension::log_uniform("lr", 1e-6, 1e-2).unwrap(),
                Dimension::uniform("w", 0.0, 1.0).unwrap(),
                Dimension::integer("n", 1, 10).unwrap(),
                Dimension::categorical("opt", &["A", "B", "C"]).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn uniform_sample_in_range() {
        let space =
            SearchSpace::new("u", vec![Dimension::uniform("x", 0.0, 1.0).unwrap()]).unwrap();
        for seed in 0..200 {
            let v = space.sample_uniform(seed).unwrap().real("x").unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn frozen_dimension_always_sampled_to_value() {
        let space = lr_space().freeze("n", Value::Int(3)).unwrap();
        for seed in 0..50 {
            assert_eq!(
                space.sample_uniform(seed).unwrap().get("n"),
                Some(&Value::Int(3))
            );
        }
    }

    #[test]
    fn log_uniform_decade_fraction() {
        let space =
            SearchSpace::new("l", vec![Dimension::log_uniform("lr", 1e-5, 1e-1).unwrap()]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| {
                let v = space.sample_with(&mut rng).unwrap().real("lr").unwrap();
                (1e-5..=1e-4).contains(&v)
            })
            .count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.25).abs() <= 0.02, "fraction {frac}");
    }

    #[test]
    fn empty_space_errors() {
        let space = SearchSpace {
            name: "e".into(),
            version: 1,
            parent: None,
            dimensions: vec![],
            audit: vec![],
        };
        assert!(matches!(
            space.sample_uniform(0),
            Err(Error::NoActiveDimensions)
        ));
    }

    #[test]
    fn widen_examples() {
        let space = SearchSpace::new(
            "w",
            vec![
                Dimension::log_uniform("lr", 1e-5, 1e-3).unwrap(),
                Dimension::uniform("x", 0.0, 1.0).unwrap(),
                Dimension::categorical("c", &["a", "b"]).unwrap(),
            ],
        )
        .unwrap();
        let w = space.widen_dimension("lr", Side::High, 10.0).unwrap();
        let (lo, hi) = w.dimension("lr").unwrap().bounds().unwrap();
        assert_eq!(lo, 1e-5);
        assert!((hi - 1e-2).abs() < 1e-15);
        assert_eq!(w.version, 2);
        assert_eq!(w.parent, Some(1));

        let w = space.widen_dimension("x", Side::Low, 0.1).unwrap();
        assert_eq!(w.dimension("x").unwrap().bounds(), Some((-0.1, 1.0)));

        assert!(matches!(
            space.widen_dimension("c", Side::High, 1.0),
            Err(Error::CategoricalWiden(_))
        ));
        let frozen = space.freeze("x", Value::Real(0.5)).unwrap();
        assert!(matches!(
            frozen.widen_dimension("x", Side::Low, 0.1),
            Err(Error::FrozenDimension(_))
        ));
    }

    #[test]
    fn contains_examples() {
        let space = SearchSpace::new(
            "c",
            vec![
                Dimension::log_uniform("lr", 1e-5, 6e-5).unwrap(),
                Dimension::categorical("c", &["A", "C"]).unwrap(),
            ],
        )
        .unwrap();
        let p = HPoint::new()
            .with("lr", Value::Real(2e-5))
            .with("c", Value::Cat("A".into()));
        assert!(space.contains(&p));
        let b = p.clone().with("c", Value::Cat("B".into()));
        assert!(!space.contains(&b));
        let mut missing = p.clone();
        missing.values.remove("c");
        assert!(!space.contains(&missing));
        let extra = p.with("z", Value::Int(1));
        assert!(!space.contains(&extra));
    }

    #[test]
    fn prune_margins_and_categories() {
        let space = SearchSpace::new(
            "p",
            vec![
                Dimension::log_uniform("lr", 1e-6, 1e-2).unwrap(),
                Dimension::uniform("w", 0.0, 1.0).unwrap(),
                Dimension::categorical("c", &["A", "B", "C"]).unwrap(),
            ],
        )
        .unwrap();
        let mut pts = Vec::new();
        for i in 0..10 {
            let lr = 1e-5 + 3e-5 * i as f64 / 9.0;
            let w = 0.4 + 0.3 * i as f64 / 9.0;
            let c = if i % 2 == 0 { "A" } else { "C" };
            pts.push(
                HPoint::new()
                    .with("lr", Value::Real(lr))
                    .with("w", Value::Real(w))
                    .with("c", Value::Cat(c.into())),
            );
        }
        pts.push(
            HPoint::new()
                .with("lr", Value::Real(1e-3))
                .with("w", Value::Real(0.9))
                .with("c", Value::Cat("B".into())),
        );
        let scored: Vec<(&HPoint, f64)> =
            pts.iter().enumerate().map(|(i, p)| (p, i as f64)).collect();
        let pruned = space
            .prune_to_top_k(&scored, 10, &MarginPolicy::default())
            .unwrap();
        let s = pruned.space;
        let (lo, hi) = s.dimension("lr").unwrap().bounds().unwrap();
        assert_eq!(lo, 1e-5 / 1.5);
        assert_eq!(hi, 4e-5 * 1.5);
        let (lo, hi) = s.dimension("w").unwrap().bounds().unwrap();
        assert_eq!(lo, 0.4 - 0.01);
        assert_eq!(hi, (0.4 + 0.3) + 0.01);
        assert_eq!(s.dimension("c").unwrap().categories, vec!["A", "C"]);
        assert_eq!(s.parent, Some(1));
        assert_eq!(s.audit.len(), 3);
        assert!(!s.contains(&pts[10]));
    }

    #[test]
    fn prune_clips_integer_and_flags_degenerate() {
        let space = SearchSpace::new(
            "i",
            vec![
                Dimension::integer("n", 1, 10).unwrap(),
                Dimension::uniform("x", 0.0, 1.0).unwrap(),
            ],
        )
        .unwrap();
        let pts: Vec<HPoint> = (0..3)
            .map(|i| {
                HPoint::new()
                    .with("n", Value::Int(1 + i))
                    .with("x", Value::Real(0.5))
            })
            .collect();
        let scored: Vec<(&HPoint, f64)> = pts.iter().map(|p| (p, 0.0)).collect();
        let pruned = space
            .prune_to_top_k(&scored, 3, &MarginPolicy::default())
            .unwrap();
        assert_eq!(
            pruned.space.dimension("n").unwrap().bounds(),
            Some((1.0, 4.0))
        );
        assert_eq!(pruned.degenerate, vec!["x".to_string()]);
        assert_eq!(
            pruned.space.dimension("x").unwrap().bounds(),
            Some((0.0, 1.0))
        );
        assert!(matches!(
            space.prune_to_top_k(&scored, 4, &MarginPolicy::default()),
            Err(Error::InsufficientTrials { .. })
        ));
    }

    #[test]
    fn json_round_trip_preserves_order_and_bounds() {
        let space = lr_space()
            .freeze("opt", Value::Cat("B".into()))
            .unwrap()
            .widen_dimension("w", Side::High, 0.1234567890123)
            .unwrap();
        let text = space.to_json().unwrap();
        let back = SearchSpace::from_json(&text).unwrap();
        assert_eq!(back, space);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn encoder_round_trip() {
        let space = lr_space();
        let enc = Encoder::new(&space);
        assert_eq!(enc.width(), 6);
        let p = space.sample_uniform(3).unwrap();
        let coords = enc.encode(&p).unwrap();
        let back = enc.decode(&coords);
        assert_eq!(back.get("n"), p.get("n"));
        assert_eq!(back.get("opt"), p.get("opt"));
        assert!((back.real("lr").unwrap() / p.real("lr").unwrap() - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn sampled_points_are_contained(seed in any::<u64>()) {
                let space = lr_space();
                let p = space.sample_uniform(seed).unwrap();
                prop_assert!(space.contains(&p));
            }

            #[test]
            fn prune_hull_within_range_within_widened_original(
                vals in proptest::collection::vec((1e-6f64..1e-2, 0.0f64..1.0, 0.0f64..100.0), 10..40)
            ) {
                let space = SearchSpace::new("q", vec![
                    Dimension::log_uniform("lr", 1e-6, 1e-2).unwrap(),
                    Dimension::uniform("w", 0.0, 1.0).unwrap(),
                ]).unwrap();
                let pts: Vec<HPoint> = vals.iter().map(|(lr, w, _)| HPoint::new()
                    .with("lr", Value::Real(*lr)).with("w", Value::Real(*w))).collect();
                let scored: Vec<(&HPoint, f64)> = pts.iter().zip(vals.iter()).map(|(p, v)| (p, v.2)).collect();
                let pruned = space.prune_to_top_k(&scored, 10, &MarginPolicy::default()).unwrap();
                let mut order: Vec<usize> = (0..vals.len()).collect();
                order.sort_by(|&a, &b| vals[a].2.total_cmp(&vals[b].2));
                let top: Vec<usize> = order[..10].to_vec();
                for (name, pick) in [("lr", 0usize), ("w", 1)] {
                    let get = |i: usize| if pick == 0 { vals[i].0 } else { vals[i].1 };
                    let a = top.iter().map(|&i| get(i)).fold(f64::INFINITY, f64::min);
                    let b = top.iter().map(|&i| get(i)).fold(f64::NEG_INFINITY, f64::max);
                    let (lo, hi) = pruned.space.dimension(name).unwrap().bounds().unwrap();
                    let (lo0, hi0) = space.dimension(name).unwrap().bounds().unwrap();
                    prop_assert!(lo <= a && hi >= b);
                    prop_assert!(lo >= lo0 && hi <= hi0);
                    // second prune on the same data keeps the hull inside the first range
                    let again = pruned.space.prune_to_top_k(&scored, 10, &MarginPolicy::default()).unwrap();
                    let (lo2, hi2) = again.space.dimension(name).unwrap().bounds().unwrap();
                    prop_assert!(lo2 >= lo && hi2 <= hi);
                }
            }
        }
    }
}
