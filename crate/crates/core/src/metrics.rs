//! Forecast accuracy measures used as the validation loss.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{Forecast, Observation, TemporalSplit};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mase,
    Smape,
    Rmse,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mase => "mase",
            LossKind::Smape => "smape",
            LossKind::Rmse => "rmse",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mase" => Ok(LossKind::Mase),
            "smape" => Ok(LossKind::Smape),
            "rmse" => Ok(LossKind::Rmse),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

fn check_lengths(actual: &[f64], forecast: &[f64]) -> Result<()> {
    if actual.len() != forecast.len() {
        return Err(Error::LengthMismatch {
            left: actual.len(),
            right: forecast.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one value".into()));
    }
    Ok(())
}

/// Mean absolute error of the lag-`m` seasonal naive forecast over `insample`.
pub fn seasonal_naive_scale(insample: &[f64], m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("seasonal period must be at least 1".into()));
    }
    if insample.len() <= m {
        return Err(Error::InsufficientLength {
            series_id: "insample".into(),
            length: insample.len(),
            required: m + 1,
        });
    }
    let n = insample.len() - m;
    let sum: f64 = insample.windows(m + 1).map(|w| (w[m] - w[0]).abs()).sum();
    Ok(sum / n as f64)
}

/// Mean absolute scaled error with the seasonal-naive in-sample scale.
pub fn mase(actual: &[f64], forecast: &[f64], insample: &[f64], m: usize) -> Result<f64> {
    check_lengths(actual, forecast)?;
    let scale = seasonal_naive_scale(insample, m)?;
    if scale == 0.0 {
        return Err(Error::UndefinedScale);
    }
    let mae = actual
        .iter()
        .zip(forecast)
        .map(|(a, f)| (a - f).abs())
        .sum::<f64>()
        / actual.len() as f64;
    Ok(mae / scale)
}

/// Symmetric MAPE in `[0, 2]`. A step where both values are zero contributes 0.
pub fn smape(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_lengths(actual, forecast)?;
    let sum: f64 = actual
        .iter()
        .zip(forecast)
        .map(|(a, f)| {
            let denom = a.abs() + f.abs();
            if denom == 0.0 {
                0.0
            } else {
                2.0 * (a - f).abs() / denom
            }
        })
        .sum();
    Ok(sum / actual.len() as f64)
}

pub fn rmse(actual: &[f64], forecast: &[f64]) -> Result<f64> {
    check_lengths(actual, forecast)?;
    let sse: f64 = actual.iter().zip(forecast).map(|(a, f)| (a - f).powi(2)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

/// Loss of one univariate channel. Steps with a missing actual are skipped;
/// the MASE scale only uses pairs where both observations are present.
pub fn channel_loss(
    kind: LossKind,
    actual: &[Observation],
    forecast: &[f64],
    insample: &[Observation],
    m: usize,
) -> Result<f64> {
    if actual.len() != forecast.len() {
        return Err(Error::LengthMismatch {
            left: actual.len(),
            right: forecast.len(),
        });
    }
    let (a, f): (Vec<f64>, Vec<f64>) = actual
        .iter()
        .zip(forecast)
        .filter_map(|(a, f)| a.map(|a| (a, *f)))
        .unzip();
    if a.is_empty() {
        return Err(Error::MissingValues("every validation value is missing".into()));
    }
    match kind {
        LossKind::Mase => {
            if m == 0 {
                return Err(Error::InvalidArgument("seasonal period must be at least 1".into()));
            }
            let diffs: Vec<f64> = (m..insample.len())
                .filter_map(|t| Some((insample[t]? - insample[t - m]?).abs()))
                .collect();
            if diffs.is_empty() {
                return Err(Error::InsufficientLength {
                    series_id: "insample".into(),
                    length: insample.len(),
                    required: m + 1,
                });
            }
            let scale = diffs.iter().sum::<f64>() / diffs.len() as f64;
            if scale == 0.0 {
                return Err(Error::UndefinedScale);
            }
            let mae = a.iter().zip(&f).map(|(a, f)| (a - f).abs()).sum::<f64>() / a.len() as f64;
            Ok(mae / scale)
        }
        LossKind::Smape => smape(&a, &f),
        LossKind::Rmse => rmse(&a, &f),
    }
}

/// Aggregated loss over a panel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PanelLoss {
    pub value: f64,
    /// Channels whose loss was undefined and left out of the mean.
    pub skipped: usize,
}

/// Unweighted mean over series and target dimensions of the per-channel loss
/// of `forecasts` against the validation part of `split`.
///
/// Channels with an undefined MASE scale (or no observed validation values)
/// are skipped; an error is returned only when every channel is skipped.
pub fn panel_loss(kind: LossKind, split: &TemporalSplit, forecasts: &[Forecast]) -> Result<PanelLoss> {
    let train = split.train();
    if forecasts.len() != train.len() {
        return Err(Error::LengthMismatch {
            left: forecasts.len(),
            right: train.len(),
        });
    }
    let m = train.seasonal_period();
    let h = split.validation_horizon();
    let mut total = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut last_err = None;
    for (i, (series, forecast)) in train.series().iter().zip(forecasts).enumerate() {
        if forecast.len() != h {
            return Err(Error::LengthMismatch {
                left: forecast.len(),
                right: h,
            });
        }
        let actual = split.validation_targets(i);
        for d in 0..series.dim() {
            let insample = series.channel(d);
            let act: Vec<Observation> = actual.iter().map(|v| v[d]).collect();
            let fc: Vec<f64> = forecast.iter().map(|v| v[d]).collect();
            match channel_loss(kind, &act, &fc, &insample, m) {
                Ok(v) => {
                    total += v;
                    used += 1;
                }
                Err(e @ (Error::UndefinedScale | Error::MissingValues(_) | Error::InsufficientLength { .. })) => {
                    skipped += 1;
                    last_err = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
    }
    if used == 0 {
        return Err(last_err.unwrap_or(Error::UndefinedScale));
    }
    Ok(PanelLoss {
        value: total / used as f64,
        skipped,
    })
}
