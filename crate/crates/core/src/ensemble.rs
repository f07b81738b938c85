//! Greedy forward ensemble selection with replacement, and the persisted
//! ensemble of refitted pipelines.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{panel_loss, LossKind};
use crate::pipeline::FittedPipeline;
use crate::series::{Forecast, TemporalSplit};
use crate::space::Configuration;

pub const DEFAULT_ENSEMBLE_SIZE: usize = 10;

/// An evaluated candidate: its id and its validation forecasts.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub id: usize,
    pub forecasts: Vec<Forecast>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// `(candidate id, multiplicity)`, ordered by id.
    pub members: Vec<(usize, usize)>,
    pub loss: f64,
    /// Candidate ids in the order they were added.
    pub trace: Vec<usize>,
}

/// Weighted elementwise mean; all inputs must share a shape.
pub fn average_forecasts(parts: &[(&[Forecast], usize)]) -> Result<Vec<Forecast>> {
    let Some(((first, _), rest)) = parts.split_first() else {
        return Err(Error::InvalidArgument("nothing to average".into()));
    };
    let mut sum: Vec<Forecast> = first.to_vec();
    for fc in sum.iter_mut().flatten().flatten() {
        *fc *= parts[0].1 as f64;
    }
    for (fc, w) in rest {
        if fc.len() != sum.len() {
            return Err(Error::LengthMismatch { left: fc.len(), right: sum.len() });
        }
        add_scaled(&mut sum, fc, *w as f64)?;
    }
    let total: usize = parts.iter().map(|(_, w)| w).sum();
    for v in sum.iter_mut().flatten().flatten() {
        *v /= total as f64;
    }
    Ok(sum)
}

fn add_scaled(acc: &mut [Forecast], other: &[Forecast], w: f64) -> Result<()> {
    for (a, b) in acc.iter_mut().zip(other) {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch { left: b.len(), right: a.len() });
        }
        for (ra, rb) in a.iter_mut().zip(b) {
            for (x, y) in ra.iter_mut().zip(rb) {
                *x += w * y;
            }
        }
    }
    Ok(())
}

/// Starts from the best single candidate and adds, with replacement, the
/// candidate that most lowers the loss of the averaged forecast, up to `k`
/// members. Stops once no addition helps. Ties go to the smaller id.
pub fn ensemble_select(pool: &[Candidate], split: &TemporalSplit, k: usize, kind: LossKind) -> Result<Selection> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("ensemble selection needs at least one candidate".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("ensemble size must be at least 1".into()));
    }
    let mut order: Vec<&Candidate> = pool.iter().collect();
    order.sort_by_key(|c| c.id);

    let mut sum: Option<Vec<Forecast>> = None;
    let mut trace: Vec<usize> = Vec::new();
    let mut current = f64::INFINITY;
    while trace.len() < k {
        let size = trace.len() as f64 + 1.0;
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in order.iter().enumerate() {
            let mut trial = c.forecasts.clone();
            if let Some(s) = &sum {
                add_scaled(&mut trial, s, 1.0)?;
            }
            for v in trial.iter_mut().flatten().flatten() {
                *v /= size;
            }
            let loss = panel_loss(kind, split, &trial)?.value;
            if best.is_none_or(|(b, _)| loss < b) {
                best = Some((loss, i));
            }
        }
        let (loss, i) = best.expect("pool is non-empty");
        if !(loss < current) {
            break;
        }
        current = loss;
        match &mut sum {
            Some(s) => add_scaled(s, &order[i].forecasts, 1.0)?,
            None => sum = Some(order[i].forecasts.clone()),
        }
        trace.push(order[i].id);
    }
    if trace.is_empty() {
        return Err(Error::Numerical("no candidate has a finite validation loss".into()));
    }
    let mut members: Vec<(usize, usize)> = Vec::new();
    for id in &trace {
        match members.iter_mut().find(|(m, _)| m == id) {
            Some((_, n)) => *n += 1,
            None => members.push((*id, 1)),
        }
    }
    members.sort();
    Ok(Selection {
        members,
        loss: current,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub trial: usize,
    pub multiplicity: usize,
    pub config: Configuration,
    pub validation_loss: f64,
    pub pipeline: FittedPipeline,
}

/// Selected pipelines refitted on all available data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub dataset: String,
    pub space_version: String,
    pub metric: LossKind,
    pub horizon: usize,
    pub series_ids: Vec<String>,
    pub validation_loss: f64,
    pub members: Vec<EnsembleMember>,
}

impl EnsembleModel {
    /// Multiplicity-weighted mean of the member forecasts. Members that
    /// fail are dropped with a warning.
    pub fn forecast(&self, horizon: usize) -> Result<Vec<Forecast>> {
        let mut parts: Vec<(Vec<Forecast>, usize)> = Vec::new();
        for m in &self.members {
            match m.pipeline.predict(horizon) {
                Ok(fc) => parts.push((fc, m.multiplicity)),
                Err(e) => log::warn!("dropping ensemble member from trial {}: {e}", m.trial),
            }
        }
        if parts.is_empty() {
            return Err(Error::Numerical("every ensemble member failed to forecast".into()));
        }
        let refs: Vec<(&[Forecast], usize)> = parts.iter().map(|(f, w)| (f.as_slice(), *w)).collect();
        average_forecasts(&refs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?)
    }
}
