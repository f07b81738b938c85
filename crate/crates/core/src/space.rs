//! Conditional hyperparameter spaces: definitions, sampling, neighborhoods
//! and the fixed-width numeric encoding used by the surrogate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Encoded value of a parameter that is not active.
pub const INACTIVE: f64 = -1.0;

/// Step width of numeric neighbors, in normalized units.
pub const NEIGHBOR_SIGMA: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Domain {
    Float { lo: f64, hi: f64, log: bool },
    Int { lo: i64, hi: i64, log: bool },
    Categorical { choices: Vec<String> },
}

impl Domain {
    pub fn is_numeric(&self) -> bool {
        !matches!(self, Domain::Categorical { .. })
    }

    /// Position of `value` in `[0, 1]`, or `None` if it is outside the domain.
    pub fn normalize(&self, value: &Value) -> Option<f64> {
        match (self, value) {
            (Domain::Float { lo, hi, log }, Value::Float(v)) => unit(*v, *lo, *hi, *log),
            (Domain::Int { lo, hi, log }, Value::Int(v)) => unit(*v as f64, *lo as f64, *hi as f64, *log),
            (Domain::Categorical { choices }, Value::Cat(c)) => {
                let i = choices.iter().position(|x| x == c)?;
                Some(if choices.len() == 1 { 0.0 } else { i as f64 / (choices.len() - 1) as f64 })
            }
            _ => None,
        }
    }

    /// Inverse of [`Domain::normalize`]; `u` is clamped to `[0, 1]`.
    pub fn denormalize(&self, u: f64) -> Value {
        let u = if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
        match self {
            Domain::Float { lo, hi, log } => Value::Float(from_unit(u, *lo, *hi, *log).clamp(*lo, *hi)),
            Domain::Int { lo, hi, log } => {
                let v = from_unit(u, *lo as f64, *hi as f64, *log).round() as i64;
                Value::Int(v.clamp(*lo, *hi))
            }
            Domain::Categorical { choices } => {
                let i = (u * (choices.len() - 1) as f64).round() as usize;
                Value::Cat(choices[i.min(choices.len() - 1)].clone())
            }
        }
    }

    pub fn contains(&self, value: &Value) -> bool {
        self.normalize(value).is_some_and(|u| (0.0..=1.0).contains(&u))
    }

    /// Uniform draw (log-uniform on log domains).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Value {
        match self {
            Domain::Categorical { choices } => Value::Cat(choices[rng.random_range(0..choices.len())].clone()),
            Domain::Int { lo, hi, log: false } => Value::Int(rng.random_range(*lo..=*hi)),
            Domain::Int { lo, hi, log: true } => {
                // Log-uniform over the integers: widen each end by half a unit.
                let (a, b) = ((*lo as f64 - 0.5).max(0.5).ln(), (*hi as f64 + 0.5).ln());
                let v = rng.random_range(a..b).exp().round() as i64;
                Value::Int(v.clamp(*lo, *hi))
            }
            _ => self.denormalize(rng.random::<f64>()),
        }
    }

    fn default_value(&self) -> Value {
        match self {
            Domain::Categorical { choices } => Value::Cat(choices[0].clone()),
            _ => self.denormalize(0.5),
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        let bad = match self {
            Domain::Float { lo, hi, log } => !(lo < hi) || !lo.is_finite() || !hi.is_finite() || (*log && *lo <= 0.0),
            Domain::Int { lo, hi, log } => lo >= hi || (*log && *lo <= 0),
            Domain::Categorical { choices } => {
                choices.is_empty() || choices.iter().collect::<BTreeSet<_>>().len() != choices.len()
            }
        };
        if bad {
            return Err(Error::InvalidConfig(format!("parameter `{name}` has an invalid domain")));
        }
        Ok(())
    }
}

fn unit(v: f64, lo: f64, hi: f64, log: bool) -> Option<f64> {
    if !v.is_finite() || v < lo || v > hi {
        return None;
    }
    Some(if log {
        (v.ln() - lo.ln()) / (hi.ln() - lo.ln())
    } else {
        (v - lo) / (hi - lo)
    })
}

fn from_unit(u: f64, lo: f64, hi: f64, log: bool) -> f64 {
    if log {
        (lo.ln() + u * (hi.ln() - lo.ln())).exp()
    } else {
        lo + u * (hi - lo)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Float(f64),
    Cat(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Float(v) => Some(*v),
            Value::Cat(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
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
            Value::Float(v) => write!(f, "{v}"),
            Value::Cat(c) => f.write_str(c),
        }
    }
}

/// Active only while the categorical `parent` takes `value`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub parent: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParam {
    pub name: String,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

impl HyperParam {
    pub fn float(name: &str, lo: f64, hi: f64, log: bool) -> Self {
        Self::new(name, Domain::Float { lo, hi, log })
    }

    pub fn int(name: &str, lo: i64, hi: i64, log: bool) -> Self {
        Self::new(name, Domain::Int { lo, hi, log })
    }

    pub fn categorical(name: &str, choices: &[&str]) -> Self {
        Self::new(
            name,
            Domain::Categorical {
                choices: choices.iter().map(|c| c.to_string()).collect(),
            },
        )
    }

    fn new(name: &str, domain: Domain) -> Self {
        Self {
            name: name.to_string(),
            domain,
            condition: None,
        }
    }

    pub fn when(mut self, parent: &str, value: &str) -> Self {
        self.condition = Some(Condition {
            parent: parent.to_string(),
            value: value.to_string(),
        });
        self
    }
}

/// Exactly the active parameters of a space, with their values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(BTreeMap<String, Value>);

impl Configuration {
    pub fn new(assignments: BTreeMap<String, Value>) -> Self {
        Self(assignments)
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }

    pub fn get_str(&self, name: &str) -> Option<&str> {
        self.0.get(name).and_then(Value::as_str)
    }

    pub fn get_f64(&self, name: &str) -> Option<f64> {
        self.0.get(name).and_then(Value::as_f64)
    }

    pub fn assignments(&self) -> &BTreeMap<String, Value> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> BTreeSet<&str> {
        self.0.keys().map(String::as_str).collect()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

/// An ordered set of parameters in which every parent precedes its children.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigSpace {
    params: Vec<HyperParam>,
}

impl ConfigSpace {
    pub fn new(params: Vec<HyperParam>) -> Result<Self> {
        let mut seen: BTreeMap<&str, &Domain> = BTreeMap::new();
        for p in &params {
            p.domain.check(&p.name)?;
            if let Some(c) = &p.condition {
                let Some(parent) = seen.get(c.parent.as_str()) else {
                    return Err(Error::InvalidConfig(format!(
                        "parameter `{}` depends on `{}`, which is not defined before it",
                        p.name, c.parent
                    )));
                };
                match parent {
                    Domain::Categorical { choices } if choices.contains(&c.value) => {}
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "condition of `{}` names a value `{}` that `{}` cannot take",
                            p.name, c.value, c.parent
                        )))
                    }
                }
            }
            if seen.insert(&p.name, &p.domain).is_some() {
                return Err(Error::InvalidConfig(format!("parameter `{}` is defined twice", p.name)));
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[HyperParam] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&HyperParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Width of [`ConfigSpace::encode`] output.
    pub fn dims(&self) -> usize {
        self.params.len()
    }

    fn is_active(p: &HyperParam, assigned: &BTreeMap<String, Value>) -> bool {
        match &p.condition {
            None => true,
            Some(c) => assigned.get(&c.parent).and_then(Value::as_str) == Some(c.value.as_str()),
        }
    }

    /// Walks the space in order, keeping assigned active values, filling
    /// missing active ones with `fill`, and dropping inactive ones.
    fn complete(&self, mut partial: BTreeMap<String, Value>, mut fill: impl FnMut(&HyperParam) -> Value) -> Configuration {
        let mut out = BTreeMap::new();
        for p in &self.params {
            if !Self::is_active(p, &out) {
                continue;
            }
            let v = partial.remove(&p.name).unwrap_or_else(|| fill(p));
            out.insert(p.name.clone(), v);
        }
        Configuration(out)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        self.complete(BTreeMap::new(), |p| p.domain.sample(rng))
    }

    /// Mid-range numerics and first categorical choices, with `fixed`
    /// values (typically selectors) taking precedence.
    pub fn default_with(&self, fixed: &[(&str, &str)]) -> Result<Configuration> {
        let partial = fixed
            .iter()
            .map(|(k, v)| (k.to_string(), Value::Cat(v.to_string())))
            .collect();
        let config = self.complete(partial, |p| p.domain.default_value());
        self.validate(&config)?;
        for (k, v) in fixed {
            if config.get_str(k) != Some(v) {
                return Err(Error::InvalidConfig(format!("`{k}={v}` is not reachable")));
            }
        }
        Ok(config)
    }

    /// Checks the active set and every value's domain.
    pub fn validate(&self, config: &Configuration) -> Result<()> {
        for name in config.0.keys() {
            if self.param(name).is_none() {
                return Err(Error::InvalidConfig(format!("unknown parameter `{name}`")));
            }
        }
        let mut walked = BTreeMap::new();
        for p in &self.params {
            let active = Self::is_active(p, &walked);
            match (active, config.0.get(&p.name)) {
                (true, Some(v)) if p.domain.contains(v) => {
                    walked.insert(p.name.clone(), v.clone());
                }
                (true, Some(v)) => {
                    return Err(Error::InvalidConfig(format!("value {v} is outside the domain of `{}`", p.name)))
                }
                (true, None) => return Err(Error::InvalidConfig(format!("active parameter `{}` is unset", p.name))),
                (false, Some(_)) => {
                    return Err(Error::InvalidConfig(format!("inactive parameter `{}` is set", p.name)))
                }
                (false, None) => {}
            }
        }
        Ok(())
    }

    /// Normalized coordinates, one per parameter, [`INACTIVE`] where unset.
    pub fn encode(&self, config: &Configuration) -> Result<Vec<f64>> {
        let mut out = vec![INACTIVE; self.params.len()];
        for (name, value) in &config.0 {
            let i = self
                .index_of(name)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter `{name}`")))?;
            out[i] = self.params[i]
                .domain
                .normalize(value)
                .ok_or_else(|| Error::InvalidConfig(format!("value {value} is outside the domain of `{name}`")))?;
        }
        Ok(out)
    }

    pub fn decode(&self, encoded: &[f64]) -> Result<Configuration> {
        if encoded.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                left: encoded.len(),
                right: self.params.len(),
            });
        }
        let mut out = BTreeMap::new();
        for (p, &u) in self.params.iter().zip(encoded) {
            if Self::is_active(p, &out) {
                if u < 0.0 {
                    return Err(Error::InvalidConfig(format!("active parameter `{}` is encoded as inactive", p.name)));
                }
                out.insert(p.name.clone(), p.domain.denormalize(u));
            }
        }
        Ok(Configuration(out))
    }

    /// `k` configurations, each differing from `config` in one active
    /// parameter. Changing a selector resamples the children it activates.
    pub fn neighbors<R: Rng + ?Sized>(&self, config: &Configuration, k: usize, rng: &mut R) -> Vec<Configuration> {
        let movable: Vec<&HyperParam> = self
            .params
            .iter()
            .filter(|p| config.0.contains_key(&p.name))
            .filter(|p| !matches!(&p.domain, Domain::Categorical { choices } if choices.len() < 2))
            .collect();
        if movable.is_empty() {
            return Vec::new();
        }
        let step = Normal::new(0.0, NEIGHBOR_SIGMA).expect("valid sigma");
        (0..k)
            .map(|_| {
                let p = movable[rng.random_range(0..movable.len())];
                let current = &config.0[&p.name];
                let next = match &p.domain {
                    Domain::Categorical { choices } => {
                        let others: Vec<&String> = choices.iter().filter(|c| Some(c.as_str()) != current.as_str()).collect();
                        Value::Cat(others[rng.random_range(0..others.len())].clone())
                    }
                    domain => {
                        let u = domain.normalize(current).unwrap_or(0.5);
                        let mut v = current.clone();
                        // Clipping and integer rounding can land back on the current value.
                        for _ in 0..16 {
                            let s = step.sample(rng);
                            v = domain.denormalize(u + s);
                            if &v == current {
                                v = domain.denormalize(u - s);
                            }
                            if &v != current {
                                break;
                            }
                        }
                        v
                    }
                };
                let mut partial = config.0.clone();
                partial.insert(p.name.clone(), next);
                self.complete(partial, |q| q.domain.sample(rng))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("space serializes")
    }

    /// Hex digest identifying this exact space definition.
    pub fn version(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        hex::encode(&digest[..8])
    }
}
