//! Naive baselines and the exponential-smoothing family.
//!
//! Smoothing parameters left unspecified are fitted by bounded Nelder-Mead
//! on the in-sample one-step-ahead squared error.

use serde::{Deserialize, Serialize};

use super::optim::{nelder_mead, NelderMeadOptions};
use crate::deadline::Deadline;
use crate::error::{Error, Result};

const PARAM_BOUNDS: (f64, f64) = (1e-4, 1.0 - 1e-4);
const DAMPING_BOUNDS: (f64, f64) = (0.8, 0.98);

fn need(values: &[f64], required: usize) -> Result<()> {
    if values.len() < required {
        return Err(Error::InsufficientLength {
            series_id: String::new(),
            length: values.len(),
            required,
        });
    }
    Ok(())
}

fn check_unit(name: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(0.0..=1.0).contains(&x) => Err(Error::InvalidArgument(format!(
            "smoothing parameter {name}={x} is outside [0, 1]"
        ))),
        _ => Ok(()),
    }
}

/// Fitted state of a univariate statistical model, enough to extrapolate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SmoothingState {
    /// Repeats the last `season.len()` values.
    Seasonal { season: Vec<f64> },
    Drift { last: f64, slope: f64 },
    Level { level: f64 },
    Trend { level: f64, trend: f64, phi: f64 },
    /// `season[k]` is the seasonal component for the k-th future step (mod period).
    HoltWinters { level: f64, trend: f64, season: Vec<f64> },
}

impl SmoothingState {
    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        match self {
            SmoothingState::Seasonal { season } => (0..horizon).map(|h| season[h % season.len()]).collect(),
            SmoothingState::Drift { last, slope } => (1..=horizon).map(|h| last + slope * h as f64).collect(),
            SmoothingState::Level { level } => vec![*level; horizon],
            SmoothingState::Trend { level, trend, phi } => {
                let mut damp = 0.0;
                let mut pow = 1.0;
                (0..horizon)
                    .map(|_| {
                        pow *= phi;
                        damp += pow;
                        level + damp * trend
                    })
                    .collect()
            }
            SmoothingState::HoltWinters { level, trend, season } => (0..horizon)
                .map(|h| level + (h + 1) as f64 * trend + season[h % season.len()])
                .collect(),
        }
    }
}

pub fn fit_naive(values: &[f64]) -> Result<SmoothingState> {
    need(values, 1)?;
    Ok(SmoothingState::Seasonal {
        season: vec![values[values.len() - 1]],
    })
}

pub fn fit_seasonal_naive(values: &[f64], period: usize) -> Result<SmoothingState> {
    if period == 0 {
        return Err(Error::InvalidArgument("seasonal period must be at least 1".into()));
    }
    need(values, period)?;
    Ok(SmoothingState::Seasonal {
        season: values[values.len() - period..].to_vec(),
    })
}

/// Extrapolates the line through the first and last observation.
pub fn fit_drift(values: &[f64]) -> Result<SmoothingState> {
    need(values, 2)?;
    let n = values.len();
    Ok(SmoothingState::Drift {
        last: values[n - 1],
        slope: (values[n - 1] - values[0]) / (n - 1) as f64,
    })
}

fn ses_run(values: &[f64], alpha: f64) -> (f64, f64) {
    let mut level = values[0];
    let mut sse = 0.0;
    for &y in &values[1..] {
        let e = y - level;
        sse += e * e;
        level = alpha * y + (1.0 - alpha) * level;
    }
    (level, sse)
}

/// Simple exponential smoothing, level initialized at the first observation.
pub fn fit_ses(values: &[f64], alpha: Option<f64>, deadline: &Deadline) -> Result<SmoothingState> {
    need(values, 1)?;
    check_unit("alpha", alpha)?;
    let alpha = match alpha {
        Some(a) => a,
        None if values.len() < 3 => 0.5,
        None => {
            nelder_mead(
                |p| ses_run(values, p[0]).1,
                &[0.5],
                &[PARAM_BOUNDS],
                NelderMeadOptions::default(),
                deadline,
            )?
            .0[0]
        }
    };
    Ok(SmoothingState::Level {
        level: ses_run(values, alpha).0,
    })
}

fn holt_run(values: &[f64], alpha: f64, beta: f64, phi: f64) -> (f64, f64, f64) {
    // Zero initial trend: with beta = 0 the recursion is exactly SES.
    let mut level = values[0];
    let mut trend = 0.0;
    let mut sse = 0.0;
    for &y in &values[1..] {
        let pred = level + phi * trend;
        let e = y - pred;
        sse += e * e;
        let new_level = alpha * y + (1.0 - alpha) * pred;
        trend = beta * (new_level - level) + (1.0 - beta) * phi * trend;
        level = new_level;
    }
    (level, trend, sse)
}

/// Holt's linear trend method, optionally damped.
pub fn fit_holt(
    values: &[f64],
    alpha: Option<f64>,
    beta: Option<f64>,
    damped: bool,
    deadline: &Deadline,
) -> Result<SmoothingState> {
    need(values, 2)?;
    check_unit("alpha", alpha)?;
    check_unit("beta", beta)?;
    let mut start = Vec::new();
    let mut bounds = Vec::new();
    if alpha.is_none() {
        start.push(0.5);
        bounds.push(PARAM_BOUNDS);
    }
    if beta.is_none() {
        start.push(0.1);
        bounds.push(PARAM_BOUNDS);
    }
    if damped {
        start.push(0.9);
        bounds.push(DAMPING_BOUNDS);
    }
    let unpack = |p: &[f64]| {
        let mut it = p.iter().copied();
        let a = alpha.unwrap_or_else(|| it.next().unwrap_or(0.5));
        let b = beta.unwrap_or_else(|| it.next().unwrap_or(0.1));
        let phi = if damped { it.next().unwrap_or(0.9) } else { 1.0 };
        (a, b, phi)
    };
    let params = if start.is_empty() || values.len() < 4 {
        start.clone()
    } else {
        nelder_mead(
            |p| {
                let (a, b, phi) = unpack(p);
                holt_run(values, a, b, phi).2
            },
            &start,
            &bounds,
            NelderMeadOptions::default(),
            deadline,
        )?
        .0
    };
    let (a, b, phi) = unpack(&params);
    let (level, trend, _) = holt_run(values, a, b, phi);
    Ok(SmoothingState::Trend { level, trend, phi })
}

struct HwInit {
    level: f64,
    trend: f64,
    season: Vec<f64>,
}

/// Level and trend at the end of the first season, from the first two seasons.
fn hw_init(values: &[f64], m: usize) -> HwInit {
    let mean1 = values[..m].iter().sum::<f64>() / m as f64;
    let mean2 = values[m..2 * m].iter().sum::<f64>() / m as f64;
    let trend = (mean2 - mean1) / m as f64;
    // mean1 sits at the centre of the first season.
    let intercept = mean1 - trend * (m as f64 - 1.0) / 2.0;
    let season = (0..m).map(|j| values[j] - intercept - trend * j as f64).collect();
    HwInit {
        level: intercept + trend * (m as f64 - 1.0),
        trend,
        season,
    }
}

fn hw_run(values: &[f64], m: usize, alpha: f64, beta: f64, gamma: f64) -> (HwInit, f64) {
    let HwInit {
        mut level,
        mut trend,
        mut season,
    } = hw_init(values, m);
    let mut sse = 0.0;
    for (t, &y) in values.iter().enumerate().skip(m) {
        let (old_level, old_trend) = (level, trend);
        let s = season[t % m];
        let e = y - (old_level + old_trend + s);
        sse += e * e;
        level = alpha * (y - s) + (1.0 - alpha) * (old_level + old_trend);
        trend = beta * (level - old_level) + (1.0 - beta) * old_trend;
        season[t % m] = gamma * (y - old_level - old_trend) + (1.0 - gamma) * s;
    }
    // Rotate so that index 0 is the season of the first forecast step.
    let n = values.len();
    let rotated = (0..m).map(|k| season[(n + k) % m]).collect();
    (
        HwInit {
            level,
            trend,
            season: rotated,
        },
        sse,
    )
}

/// Additive Holt-Winters. Needs at least two full seasons.
pub fn fit_holt_winters(
    values: &[f64],
    period: usize,
    alpha: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    deadline: &Deadline,
) -> Result<SmoothingState> {
    if period < 2 {
        return Err(Error::InvalidArgument("Holt-Winters needs a seasonal period of at least 2".into()));
    }
    need(values, 2 * period)?;
    for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
        check_unit(name, v)?;
    }
    let fixed = [alpha, beta, gamma];
    let free: Vec<usize> = (0..3).filter(|&i| fixed[i].is_none()).collect();
    let defaults = [0.5, 0.1, 0.1];
    let unpack = |p: &[f64]| {
        let mut out = [0.0; 3];
        let mut it = p.iter().copied();
        for i in 0..3 {
            out[i] = fixed[i].unwrap_or_else(|| it.next().unwrap_or(defaults[i]));
        }
        out
    };
    let params = if free.is_empty() {
        Vec::new()
    } else {
        let start: Vec<f64> = free.iter().map(|&i| defaults[i]).collect();
        nelder_mead(
            |p| {
                let [a, b, g] = unpack(p);
                hw_run(values, period, a, b, g).1
            },
            &start,
            &vec![PARAM_BOUNDS; free.len()],
            NelderMeadOptions::default(),
            deadline,
        )?
        .0
    };
    let [a, b, g] = unpack(&params);
    let (state, _) = hw_run(values, period, a, b, g);
    Ok(SmoothingState::HoltWinters {
        level: state.level,
        trend: state.trend,
        season: state.season,
    })
}
