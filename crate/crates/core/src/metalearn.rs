//! Warm-start priors from earlier optimization runs.
//!
//! Datasets are compared by the mean DTW distance between the normalized
//! tails of their series. The configurations of the closest datasets are
//! pooled, weighted by relative distance, and turned into independent
//! per-parameter densities.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::series::PanelDataset;
use crate::space::{ConfigSpace, Configuration, Domain, Value};

/// Dynamic time warping with absolute-difference cost and no window.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("dtw needs two non-empty sequences".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for &x in a {
        cur[0] = f64::INFINITY;
        for j in 1..=m {
            let best = prev[j - 1].min(prev[j]).min(cur[j - 1]);
            cur[j] = (x - b[j - 1]).abs() + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

/// Z-normalized last `h` observed values of every series channel. Constant
/// tails normalize to zeros.
pub fn normalized_tails(dataset: &PanelDataset, h: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for s in dataset.series() {
        for d in 0..s.dim() {
            let observed: Vec<f64> = s.channel(d).into_iter().flatten().collect();
            if observed.is_empty() {
                continue;
            }
            out.push(z_normalize(&observed[observed.len().saturating_sub(h)..]));
        }
    }
    out
}

fn z_normalize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd <= 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// Mean DTW distance over all cross pairs of tails.
pub fn tails_distance(e: &[Vec<f64>], f: &[Vec<f64>]) -> Result<f64> {
    if e.is_empty() || f.is_empty() {
        return Err(Error::InvalidArgument("dataset distance needs observed series on both sides".into()));
    }
    let mut total = 0.0;
    for a in e {
        for b in f {
            total += dtw(a, b)?;
        }
    }
    Ok(total / (e.len() * f.len()) as f64)
}

pub fn dataset_distance(e: &PanelDataset, f: &PanelDataset, h: usize) -> Result<f64> {
    tails_distance(&normalized_tails(e, h), &normalized_tails(f, h))
}

/// Relative-distance weights: the closest gets 1, the farthest 0. Equal
/// distances (including a single one) all get 1.
pub fn distance_weights(distances: &[f64]) -> Vec<f64> {
    let lo = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![1.0; distances.len()];
    }
    distances.iter().map(|d| 1.0 - (d - lo) / (hi - lo)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbConfig {
    pub assignments: Configuration,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KbEntry {
    pub name: String,
    /// Normalized series tails.
    pub tails: Vec<Vec<f64>>,
    /// Best configurations, lowest loss first.
    pub configs: Vec<KbConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub space_version: String,
    pub entries: Vec<KbEntry>,
}

fn rank_configs(configs: &mut Vec<KbConfig>, n_c: usize) {
    let mut unique: Vec<KbConfig> = Vec::with_capacity(configs.len());
    for c in configs.drain(..) {
        match unique.iter_mut().find(|u| u.assignments == c.assignments) {
            Some(u) => u.loss = u.loss.min(c.loss),
            None => unique.push(c),
        }
    }
    unique.sort_by(|a, b| a.loss.total_cmp(&b.loss));
    unique.truncate(n_c);
    *configs = unique;
}

impl KnowledgeBase {
    pub fn new(space: &ConfigSpace) -> Self {
        Self {
            space_version: space.version(),
            entries: Vec::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn check_version(&self, space: &ConfigSpace) -> Result<()> {
        if self.space_version != space.version() {
            return Err(Error::VersionMismatch {
                expected: space.version(),
                found: self.space_version.clone(),
            });
        }
        Ok(())
    }

    /// Adds an entry, merging with an existing one of the same name: the
    /// configuration sets are united, de-duplicated and cut to the best `n_c`.
    pub fn add(&mut self, mut entry: KbEntry, n_c: usize) {
        match self.entries.iter_mut().find(|e| e.name == entry.name) {
            Some(existing) => {
                existing.configs.append(&mut entry.configs);
                rank_configs(&mut existing.configs, n_c);
                if existing.tails.is_empty() {
                    existing.tails = entry.tails;
                }
            }
            None => {
                rank_configs(&mut entry.configs, n_c);
                self.entries.push(entry);
                self.entries.sort_by(|a, b| a.name.cmp(&b.name));
            }
        }
    }

    pub fn merge(&mut self, other: KnowledgeBase, n_c: usize) -> Result<()> {
        if other.space_version != self.space_version {
            return Err(Error::VersionMismatch {
                expected: self.space_version.clone(),
                found: other.space_version,
            });
        }
        for e in other.entries {
            self.add(e, n_c);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorOptions {
    /// Number of closest datasets whose configurations are pooled.
    pub n_d: usize,
    /// Tail length compared by DTW.
    pub h: usize,
    /// Lower bound of the KDE bandwidth, in normalized units.
    pub min_bandwidth: f64,
    /// Pseudo-count added to every categorical choice.
    pub epsilon: f64,
}

impl Default for PriorOptions {
    fn default() -> Self {
        Self {
            n_d: 5,
            h: 200,
            min_bandwidth: 0.01,
            epsilon: 0.1,
        }
    }
}

/// Weighted Gaussian KDE on the normalized coordinate `[0, 1]`, each kernel
/// truncated to the interval and renormalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub centers: Vec<f64>,
    /// Sum to one.
    pub weights: Vec<f64>,
    pub bandwidth: f64,
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl Kde {
    /// `None` when no sample carries positive weight.
    pub fn fit(samples: &[(f64, f64)], min_bandwidth: f64) -> Option<Self> {
        let kept: Vec<(f64, f64)> = samples.iter().copied().filter(|(_, w)| *w > 0.0).collect();
        let total: f64 = kept.iter().map(|(_, w)| w).sum();
        if kept.is_empty() || !(total > 0.0) {
            return None;
        }
        let weights: Vec<f64> = kept.iter().map(|(_, w)| w / total).collect();
        let centers: Vec<f64> = kept.iter().map(|(c, _)| *c).collect();
        let mean: f64 = centers.iter().zip(&weights).map(|(c, w)| c * w).sum();
        let var: f64 = centers.iter().zip(&weights).map(|(c, w)| w * (c - mean).powi(2)).sum();
        let n_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let bandwidth = (1.06 * var.sqrt() * n_eff.powf(-0.2)).max(min_bandwidth);
        Some(Self {
            centers,
            weights,
            bandwidth,
        })
    }

    pub fn density(&self, u: f64) -> f64 {
        if !(0.0..=1.0).contains(&u) {
            return 0.0;
        }
        let h = self.bandwidth;
        self.centers
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| {
                let mass = std_normal_cdf((1.0 - c) / h) - std_normal_cdf(-c / h);
                let z = (u - c) / h;
                w * (-0.5 * z * z).exp() / (h * (2.0 * std::f64::consts::PI).sqrt() * mass)
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let mut pick = rng.random::<f64>();
        let mut idx = self.centers.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if pick < *w {
                idx = i;
                break;
            }
            pick -= w;
        }
        let kernel = Normal::new(self.centers[idx], self.bandwidth).expect("positive bandwidth");
        for _ in 0..1000 {
            let u = kernel.sample(rng);
            if (0.0..=1.0).contains(&u) {
                return u;
            }
        }
        self.centers[idx].clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamPrior {
    Numeric(Kde),
    /// Masses aligned with the domain's choices.
    Categorical(Vec<f64>),
}

/// Independent per-parameter densities over a configuration space.
/// Numeric densities are taken with respect to the normalized coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorModel {
    space: ConfigSpace,
    params: BTreeMap<String, ParamPrior>,
}

impl PriorModel {
    /// Fits densities to weighted configurations. Each parameter only sees
    /// the configurations in which it is active.
    pub fn fit(space: &ConfigSpace, configs: &[(Configuration, f64)], options: &PriorOptions) -> Self {
        let mut params = BTreeMap::new();
        for p in space.params() {
            let seen: Vec<(&Value, f64)> = configs
                .iter()
                .filter_map(|(c, w)| c.get(&p.name).map(|v| (v, *w)))
                .collect();
            if seen.is_empty() {
                continue;
            }
            match &p.domain {
                Domain::Categorical { choices } => {
                    let mut counts = vec![0.0; choices.len()];
                    for (v, w) in &seen {
                        if let Some(i) = choices.iter().position(|c| Some(c.as_str()) == v.as_str()) {
                            counts[i] += w;
                        }
                    }
                    let total: f64 = counts.iter().sum();
                    let denom = total + choices.len() as f64 * options.epsilon;
                    let masses = counts.iter().map(|c| (c + options.epsilon) / denom).collect();
                    params.insert(p.name.clone(), ParamPrior::Categorical(masses));
                }
                domain => {
                    let samples: Vec<(f64, f64)> = seen
                        .iter()
                        .filter_map(|(v, w)| domain.normalize(v).map(|u| (u, *w)))
                        .collect();
                    if let Some(kde) = Kde::fit(&samples, options.min_bandwidth) {
                        params.insert(p.name.clone(), ParamPrior::Numeric(kde));
                    }
                }
            }
        }
        Self {
            space: space.clone(),
            params,
        }
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn param(&self, name: &str) -> Option<&ParamPrior> {
        self.params.get(name)
    }

    /// Density of one parameter value; uniform for parameters the prior
    /// never observed.
    pub fn param_density(&self, name: &str, value: &Value) -> f64 {
        let Some(p) = self.space.param(name) else {
            return 0.0;
        };
        let Some(u) = p.domain.normalize(value) else {
            return 0.0;
        };
        match (&p.domain, self.params.get(name)) {
            (Domain::Categorical { choices }, None) => 1.0 / choices.len() as f64,
            (_, None) => 1.0,
            (Domain::Categorical { choices }, Some(ParamPrior::Categorical(m))) => choices
                .iter()
                .position(|c| Some(c.as_str()) == value.as_str())
                .map_or(0.0, |i| m[i]),
            (_, Some(ParamPrior::Numeric(kde))) => kde.density(u),
            _ => 0.0,
        }
    }

    /// Product of the densities of all assigned parameters.
    pub fn density(&self, config: &Configuration) -> f64 {
        config
            .assignments()
            .iter()
            .map(|(k, v)| self.param_density(k, v))
            .product()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let mut out: BTreeMap<String, Value> = BTreeMap::new();
        for p in self.space.params() {
            let active = p
                .condition
                .as_ref()
                .is_none_or(|c| out.get(&c.parent).and_then(Value::as_str) == Some(c.value.as_str()));
            if !active {
                continue;
            }
            let v = match (&p.domain, self.params.get(&p.name)) {
                (Domain::Categorical { choices }, Some(ParamPrior::Categorical(m))) => {
                    let mut pick = rng.random::<f64>() * m.iter().sum::<f64>();
                    let mut idx = choices.len() - 1;
                    for (i, w) in m.iter().enumerate() {
                        if pick < *w {
                            idx = i;
                            break;
                        }
                        pick -= w;
                    }
                    Value::Cat(choices[idx].clone())
                }
                (domain, Some(ParamPrior::Numeric(kde))) => domain.denormalize(kde.sample(rng)),
                (domain, _) => domain.sample(rng),
            };
            out.insert(p.name.clone(), v);
        }
        Configuration::new(out)
    }
}

/// Distance and weight of a knowledge-base entry selected for a prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceWeight {
    pub name: String,
    pub distance: f64,
    pub weight: f64,
}

/// Distances from `dataset` to every entry except `exclude`, closest
/// first (ties by name), cut to the `n_d` closest and weighted.
pub fn nearest_sources(
    kb: &KnowledgeBase,
    dataset: &PanelDataset,
    exclude: Option<&str>,
    options: &PriorOptions,
) -> Result<Vec<SourceWeight>> {
    let tails = normalized_tails(dataset, options.h);
    let mut scored = Vec::new();
    for e in &kb.entries {
        if Some(e.name.as_str()) == exclude || e.tails.is_empty() {
            continue;
        }
        let theirs: Vec<Vec<f64>> = e
            .tails
            .iter()
            .filter(|t| !t.is_empty())
            .map(|t| z_normalize(&t[t.len().saturating_sub(options.h)..]))
            .collect();
        scored.push((e.name.clone(), tails_distance(&tails, &theirs)?));
    }
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(options.n_d.max(1));
    let weights = distance_weights(&scored.iter().map(|s| s.1).collect::<Vec<_>>());
    Ok(scored
        .into_iter()
        .zip(weights)
        .map(|((name, distance), weight)| SourceWeight { name, distance, weight })
        .collect())
}

/// Builds the warm-start prior for `dataset`. `exclude` names an entry to
/// leave out (the dataset itself, for leave-one-out evaluation). Returns
/// `None` when no usable entry remains.
pub fn build_prior(
    kb: &KnowledgeBase,
    space: &ConfigSpace,
    dataset: &PanelDataset,
    exclude: Option<&str>,
    options: &PriorOptions,
) -> Result<Option<(PriorModel, Vec<SourceWeight>)>> {
    kb.check_version(space)?;
    let sources = nearest_sources(kb, dataset, exclude, options)?;
    let mut pooled = Vec::new();
    for s in &sources {
        let entry = kb.entries.iter().find(|e| e.name == s.name).expect("source comes from kb");
        for c in &entry.configs {
            space.validate(&c.assignments)?;
            pooled.push((c.assignments.clone(), s.weight));
        }
    }
    if pooled.is_empty() {
        return Ok(None);
    }
    Ok(Some((PriorModel::fit(space, &pooled, options), sources)))
}
