//! Random-forest surrogate, expected improvement and the prior-weighted
//! acquisition used to propose configurations.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::deadline::Deadline;
use crate::error::Result;
use crate::forecasters::tree::{Forest, TreeOptions};
use crate::metalearn::PriorModel;
use crate::space::{ConfigSpace, Configuration};

pub const SURROGATE_TREES: usize = 32;
pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const DEFAULT_BETA: f64 = 10.0;

/// One evaluated configuration as seen by the optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub config: Configuration,
    pub budget: f64,
    /// Observed loss, or the failure penalty.
    pub loss: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialHistory {
    pub points: Vec<HistoryPoint>,
}

impl TrialHistory {
    pub fn push(&mut self, point: HistoryPoint) {
        self.points.push(point);
    }

    /// Completed trials, failed ones included.
    pub fn n(&self) -> usize {
        self.points.len()
    }

    /// Highest budget among successful trials.
    pub fn top_budget(&self) -> Option<f64> {
        self.points.iter().filter(|p| p.ok).map(|p| p.budget).reduce(f64::max)
    }

    /// Best successful loss at the highest budget evaluated so far.
    pub fn incumbent(&self) -> Option<f64> {
        let b = self.top_budget()?;
        self.points
            .iter()
            .filter(|p| p.ok && p.budget == b)
            .map(|p| p.loss)
            .reduce(f64::min)
    }

    pub fn contains(&self, config: &Configuration) -> bool {
        self.points.iter().any(|p| &p.config == config)
    }

    /// Up to `k` distinct successful configurations, lowest loss first.
    pub fn best_configs(&self, k: usize) -> Vec<&Configuration> {
        let mut ok: Vec<&HistoryPoint> = self.points.iter().filter(|p| p.ok).collect();
        ok.sort_by(|a, b| a.loss.total_cmp(&b.loss));
        let mut out: Vec<&Configuration> = Vec::new();
        for p in ok {
            if out.len() == k {
                break;
            }
            if !out.contains(&&p.config) {
                out.push(&p.config);
            }
        }
        out
    }
}

/// Forest over encoded configuration plus budget.
#[derive(Clone, Debug, PartialEq)]
pub struct Surrogate {
    forest: Forest,
}

impl Surrogate {
    /// Fits on `(input, loss)` rows. Fewer than two successful trials
    /// yield `None`; callers then sample instead.
    pub fn fit(inputs: &[Vec<f64>], losses: &[f64], n_successful: usize, seed: u64) -> Result<Option<Self>> {
        if n_successful < 2 || inputs.is_empty() {
            return Ok(None);
        }
        let dims = inputs[0].len();
        let options = TreeOptions {
            max_features: Some(dims.div_ceil(3).max(1)),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forest = Forest::fit(inputs, losses, SURROGATE_TREES, &options, &mut rng, &Deadline::none())?;
        Ok(Some(Self { forest }))
    }

    pub fn fit_history(space: &ConfigSpace, history: &TrialHistory, seed: u64) -> Result<Option<Self>> {
        let inputs = history
            .points
            .iter()
            .map(|p| surrogate_input(space, &p.config, p.budget))
            .collect::<Result<Vec<_>>>()?;
        let losses: Vec<f64> = history.points.iter().map(|p| p.loss).collect();
        let ok = history.points.iter().filter(|p| p.ok).count();
        Self::fit(&inputs, &losses, ok, seed)
    }

    /// Mean and variance (with floor).
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (mean, var) = self.forest.predict_with_variance(x);
        (mean, var + VARIANCE_FLOOR)
    }
}

pub fn surrogate_input(space: &ConfigSpace, config: &Configuration, budget: f64) -> Result<Vec<f64>> {
    let mut x = space.encode(config)?;
    x.push(budget);
    Ok(x)
}

/// Closed-form `E[max(f_min - Y, 0)]` for `Y ~ N(mu, sigma^2)`.
pub fn expected_improvement(mu: f64, sigma: f64, f_min: f64) -> f64 {
    let gap = f_min - mu;
    if !(sigma > 0.0) {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    let cdf = 0.5 * erfc(-z / SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
    (gap * cdf + sigma * pdf).max(0.0)
}

/// `pi^(beta / n)`, zero when the density is zero.
pub fn prior_factor(density: f64, beta: f64, n: usize) -> f64 {
    if !(density > 0.0) {
        return 0.0;
    }
    density.powf(beta / n.max(1) as f64)
}

/// Expected improvement scaled by the decaying prior factor. `density` is
/// `None` when no prior is in use.
pub fn prior_weighted_acquisition(ei: f64, density: Option<f64>, beta: f64, n: usize) -> f64 {
    match density {
        None => ei,
        Some(d) => ei * prior_factor(d, beta, n),
    }
}

/// Index of the largest score; the earliest wins ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalOptions {
    pub random_candidates: usize,
    pub chains: usize,
    pub chain_length: usize,
    pub beta: f64,
}

impl Default for ProposalOptions {
    fn default() -> Self {
        Self {
            random_candidates: 500,
            chains: 10,
            chain_length: 20,
            beta: DEFAULT_BETA,
        }
    }
}

/// Everything `propose` needs besides the random source.
pub struct Proposer<'a> {
    pub space: &'a ConfigSpace,
    pub surrogate: Option<&'a Surrogate>,
    pub history: &'a TrialHistory,
    pub prior: Option<&'a PriorModel>,
    /// Configurations already scheduled but not yet evaluated.
    pub pending: &'a [Configuration],
    pub options: ProposalOptions,
}

impl Proposer<'_> {
    fn fallback<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        match self.prior {
            Some(p) => p.sample(rng),
            None => self.space.sample(rng),
        }
    }

    fn acquisition(&self, surrogate: &Surrogate, config: &Configuration, budget: f64, f_min: f64) -> f64 {
        let Ok(x) = surrogate_input(self.space, config, budget) else {
            return 0.0;
        };
        let (mu, var) = surrogate.predict(&x);
        let ei = expected_improvement(mu, var.sqrt(), f_min);
        let density = self.prior.map(|p| p.density(config));
        prior_weighted_acquisition(ei, density, self.options.beta, self.history.n())
    }

    /// Maximizes the acquisition over random candidates (half drawn from
    /// the prior when one is set) and local-search chains started at the
    /// best configurations so far. Already evaluated configurations are
    /// skipped. Without a surrogate, samples from the prior or uniformly.
    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R) -> Configuration {
        let (Some(surrogate), Some(f_min), Some(budget)) =
            (self.surrogate, self.history.incumbent(), self.history.top_budget())
        else {
            return self.fallback(rng);
        };
        let mut pool: Vec<Configuration> = Vec::new();
        let mut scores: Vec<f64> = Vec::new();
        for i in 0..self.options.random_candidates {
            let c = match self.prior {
                Some(p) if i % 2 == 0 => p.sample(rng),
                _ => self.space.sample(rng),
            };
            scores.push(self.acquisition(surrogate, &c, budget, f_min));
            pool.push(c);
        }
        for start in self.history.best_configs(self.options.chains) {
            let mut current = start.clone();
            let mut current_score = self.acquisition(surrogate, &current, budget, f_min);
            for _ in 0..self.options.chain_length {
                let Some(next) = self.space.neighbors(&current, 1, rng).pop() else {
                    break;
                };
                let score = self.acquisition(surrogate, &next, budget, f_min);
                pool.push(next.clone());
                scores.push(score);
                if score >= current_score {
                    current = next;
                    current_score = score;
                }
            }
        }
        for (c, s) in pool.iter().zip(scores.iter_mut()) {
            if self.history.contains(c) || self.pending.contains(c) {
                *s = f64::NEG_INFINITY;
            }
        }
        match argmax(&scores) {
            Some(i) if scores[i] > f64::NEG_INFINITY => pool.swap_remove(i),
            _ => self.fallback(rng),
        }
    }
}
