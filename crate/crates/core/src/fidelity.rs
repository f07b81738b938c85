//! Reverse expanding windows as a cheap-evaluation budget, and the
//! successive-halving schedule that spends it.
//!
//! A budget `b` keeps only the most recent part of each training series.
//! Series no longer than `l_min` are always used in full.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::PanelDataset;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    pub b_min: f64,
    pub b_max: f64,
    pub eta: usize,
    pub l_min: usize,
}

impl Default for BudgetSpec {
    fn default() -> Self {
        Self {
            b_min: 1.0 / 9.0,
            b_max: 1.0,
            eta: 3,
            l_min: 500,
        }
    }
}

impl BudgetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_min > 0.0 && self.b_min < self.b_max && self.b_max <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "budgets must satisfy 0 < b_min < b_max <= 1, got {} and {}",
                self.b_min, self.b_max
            )));
        }
        if self.eta < 2 {
            return Err(Error::InvalidConfig("halving rate must be at least 2".into()));
        }
        if self.l_min == 0 {
            return Err(Error::InvalidConfig("minimum window length must be positive".into()));
        }
        Ok(())
    }

    /// Index of the last rung, `floor(log_eta(b_max / b_min))`.
    pub fn max_rung(&self) -> usize {
        let ratio = self.b_max / self.b_min;
        let mut s = 0;
        let mut reach = 1.0;
        // Integer powers avoid log rounding at exact ratios like 9 = 3^2.
        while reach * self.eta as f64 <= ratio * (1.0 + 1e-12) {
            reach *= self.eta as f64;
            s += 1;
        }
        s
    }
}

/// Observations kept for a series of length `t` under budget `b`.
pub fn window_length(b: f64, t: usize, l_min: usize) -> usize {
    if t <= l_min {
        return t;
    }
    let want = (b * t as f64).ceil() as usize;
    want.max(l_min).min(t)
}

/// Keeps the last `window_length` observations (and past features) of
/// every series. Future features are untouched.
pub fn truncate(dataset: &PanelDataset, b: f64, l_min: usize) -> PanelDataset {
    dataset.map_series(|s| {
        let keep = window_length(b, s.len(), l_min);
        s.slice(s.len() - keep, s.len())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub budget: f64,
    pub survivors: usize,
}

/// Budgets and survivor counts of one successive-halving bracket.
pub fn sh_schedule(spec: &BudgetSpec, n_initial: usize) -> Result<Vec<Rung>> {
    spec.validate()?;
    if n_initial == 0 {
        return Err(Error::InvalidArgument("a bracket needs at least one configuration".into()));
    }
    let mut rungs = Vec::new();
    let mut scale = 1.0;
    let mut divisor = 1usize;
    for j in 0..=spec.max_rung() {
        let budget = if j == spec.max_rung() {
            spec.b_max
        } else {
            (spec.b_min * scale).min(spec.b_max)
        };
        rungs.push(Rung {
            budget,
            survivors: (n_initial / divisor).max(1),
        });
        scale *= spec.eta as f64;
        divisor = divisor.saturating_mul(spec.eta);
    }
    Ok(rungs)
}

/// Indices of the `k` lowest losses, ties and failures resolved by
/// evaluation order (the slice order).
pub fn promote(losses: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));
    order.truncate(k);
    order
}
