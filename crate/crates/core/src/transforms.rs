//! Preprocessing operators used inside pipeline templates.
//!
//! Every transform is fitted on training data only and keeps whatever state
//! it needs to map forecasts back to the original scale.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{
    FeatureKind, FeatureValue, Forecast, Observation, PanelDataset, TemporalSplit, TimeSeriesRecord,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeStrategy {
    ForwardFill,
    Mean,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleStrategy {
    Standard,
    MinMax,
    None,
}

/// A value-level preprocessing step. Window reduction, which changes the
/// shape of the data, is handled by [`WindowReducer`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Imputer(ImputeStrategy),
    Scaler(ScaleStrategy),
    /// Removes a polynomial trend in the time index; degree 0 or 1.
    Detrender(u8),
    /// Removes additive seasonal indices with the given period.
    Deseasonalizer(usize),
    OrdinalEncoder,
}

/// Per-channel inversion state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum ChannelState {
    Identity,
    Affine { center: f64, scale: f64 },
    Trend { intercept: f64, slope: f64, n_train: usize },
    Seasonal { indices: Vec<f64>, n_train: usize },
}

/// A transform together with the statistics learned during fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedTransform {
    transform: Transform,
    /// `[series][dimension]`.
    channels: Vec<Vec<ChannelState>>,
    /// Category code tables for the ordinal encoder, keyed by schema index.
    codes: BTreeMap<usize, BTreeMap<String, usize>>,
}

/// Code assigned to categories not seen during fitting (and to missing values).
pub const UNKNOWN_CATEGORY: f64 = -1.0;

impl FittedTransform {
    pub fn transform(&self) -> Transform {
        self.transform
    }

    /// Maps forecasts made in the transformed space back to the original scale.
    /// `forecasts[i]` belongs to series `i` and starts right after its training data.
    pub fn inverse_forecasts(&self, forecasts: &mut [Forecast]) -> Result<()> {
        if forecasts.len() != self.channels.len() {
            return Err(Error::LengthMismatch {
                left: forecasts.len(),
                right: self.channels.len(),
            });
        }
        for (fc, states) in forecasts.iter_mut().zip(&self.channels) {
            for (step, row) in fc.iter_mut().enumerate() {
                for (v, state) in row.iter_mut().zip(states) {
                    *v = invert_value(state, *v, None, step);
                }
            }
        }
        Ok(())
    }

    /// Inverts a full transformed training channel (test helper and diagnostics).
    pub fn inverse_channel(&self, series: usize, dim: usize, values: &[f64]) -> Vec<f64> {
        let state = &self.channels[series][dim];
        values
            .iter()
            .enumerate()
            .map(|(t, v)| invert_value(state, *v, Some(t), 0))
            .collect()
    }

    /// Applies the fitted encoding to a feature row of future-known values.
    fn encode_future(&self, dataset_schema_future: &[usize], row: &[FeatureValue]) -> Vec<FeatureValue> {
        row.iter()
            .zip(dataset_schema_future)
            .map(|(v, idx)| self.encode_value(*idx, v))
            .collect()
    }

    fn encode_value(&self, schema_idx: usize, value: &FeatureValue) -> FeatureValue {
        match (self.codes.get(&schema_idx), value) {
            (Some(table), FeatureValue::Categorical(c)) => FeatureValue::Numeric(Some(
                c.as_ref()
                    .and_then(|c| table.get(c))
                    .map(|&code| code as f64)
                    .unwrap_or(UNKNOWN_CATEGORY),
            )),
            _ => value.clone(),
        }
    }
}

/// Time index of a value: `Some(t)` inside training data, otherwise forecast step.
fn invert_value(state: &ChannelState, v: f64, train_index: Option<usize>, step: usize) -> f64 {
    match state {
        ChannelState::Identity => v,
        ChannelState::Affine { center, scale } => v * scale + center,
        ChannelState::Trend {
            intercept,
            slope,
            n_train,
        } => {
            let t = train_index.unwrap_or(n_train + step) as f64;
            v + intercept + slope * t
        }
        ChannelState::Seasonal { indices, n_train } => {
            let t = train_index.unwrap_or(n_train + step);
            v + indices[t % indices.len()]
        }
    }
}

fn present(values: &[Observation]) -> impl Iterator<Item = f64> + '_ {
    values.iter().flatten().copied()
}

fn impute_channel(series_id: &str, values: &[Observation], strategy: ImputeStrategy) -> Result<Vec<Observation>> {
    if !values.iter().any(Option::is_none) {
        return Ok(values.to_vec());
    }
    let first = values.iter().flatten().next().copied();
    let all_missing = || Error::MissingValues(format!("series `{series_id}` has no observed values to impute from"));
    Ok(match strategy {
        ImputeStrategy::Zero => values.iter().map(|v| Some(v.unwrap_or(0.0))).collect(),
        ImputeStrategy::Mean => {
            let n = present(values).count();
            if n == 0 {
                return Err(all_missing());
            }
            let mean = present(values).sum::<f64>() / n as f64;
            values.iter().map(|v| Some(v.unwrap_or(mean))).collect()
        }
        ImputeStrategy::ForwardFill => {
            // Leading gaps take the first observed value.
            let mut last = first.ok_or_else(all_missing)?;
            values
                .iter()
                .map(|v| {
                    if let Some(x) = v {
                        last = *x;
                    }
                    Some(last)
                })
                .collect()
        }
    })
}

fn impute_features(rows: &[Vec<FeatureValue>], strategy: ImputeStrategy) -> Vec<Vec<FeatureValue>> {
    if rows.is_empty() {
        return Vec::new();
    }
    let width = rows[0].len();
    let mut out = rows.to_vec();
    for j in 0..width {
        let col: Vec<Observation> = match rows[0][j] {
            FeatureValue::Numeric(_) => rows
                .iter()
                .map(|r| match r[j] {
                    FeatureValue::Numeric(v) => v,
                    _ => None,
                })
                .collect(),
            FeatureValue::Categorical(_) => continue,
        };
        // A feature column without any observation is left to the reducer (zeros).
        let filled = impute_channel("", &col, strategy).unwrap_or_else(|_| vec![Some(0.0); col.len()]);
        for (row, v) in out.iter_mut().zip(filled) {
            row[j] = FeatureValue::Numeric(v);
        }
    }
    out
}

fn fit_affine(values: &[Observation], strategy: ScaleStrategy) -> ChannelState {
    let n = present(values).count();
    if n == 0 || strategy == ScaleStrategy::None {
        return ChannelState::Identity;
    }
    match strategy {
        ScaleStrategy::Standard => {
            let mean = present(values).sum::<f64>() / n as f64;
            let var = present(values).map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            ChannelState::Affine {
                center: mean,
                scale: if std > 0.0 { std } else { 1.0 },
            }
        }
        ScaleStrategy::MinMax => {
            let lo = present(values).fold(f64::INFINITY, f64::min);
            let hi = present(values).fold(f64::NEG_INFINITY, f64::max);
            let range = hi - lo;
            ChannelState::Affine {
                center: lo,
                scale: if range > 0.0 { range } else { 1.0 },
            }
        }
        ScaleStrategy::None => ChannelState::Identity,
    }
}

fn fit_trend(values: &[Observation], degree: u8) -> ChannelState {
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .filter_map(|(t, v)| v.map(|v| (t as f64, v)))
        .collect();
    if pts.is_empty() {
        return ChannelState::Identity;
    }
    let n = pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let (intercept, slope) = if degree == 0 || pts.len() < 2 {
        (my, 0.0)
    } else {
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        (my - slope * mx, slope)
    };
    ChannelState::Trend {
        intercept,
        slope,
        n_train: values.len(),
    }
}

fn fit_seasonal(series_id: &str, values: &[Observation], period: usize) -> Result<ChannelState> {
    if period <= 1 {
        return Ok(ChannelState::Identity);
    }
    if values.len() < period {
        return Err(Error::InsufficientLength {
            series_id: series_id.to_string(),
            length: values.len(),
            required: period,
        });
    }
    let mut sums = vec![0.0; period];
    let mut counts = vec![0usize; period];
    for (t, v) in values.iter().enumerate() {
        if let Some(v) = v {
            sums[t % period] += v;
            counts[t % period] += 1;
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    let known: Vec<f64> = means.iter().copied().filter(|m| m.is_finite()).collect();
    if known.is_empty() {
        return Ok(ChannelState::Identity);
    }
    let grand = known.iter().sum::<f64>() / known.len() as f64;
    let indices = means
        .iter()
        .map(|m| if m.is_finite() { m - grand } else { 0.0 })
        .collect();
    Ok(ChannelState::Seasonal {
        indices,
        n_train: values.len(),
    })
}

fn apply_state(state: &ChannelState, values: &[Observation]) -> Vec<Observation> {
    values
        .iter()
        .enumerate()
        .map(|(t, v)| {
            v.map(|v| match state {
                ChannelState::Identity => v,
                ChannelState::Affine { center, scale } => (v - center) / scale,
                ChannelState::Trend { intercept, slope, .. } => v - intercept - slope * t as f64,
                ChannelState::Seasonal { indices, .. } => v - indices[t % indices.len()],
            })
        })
        .collect()
}

fn rebuild(record: &TimeSeriesRecord, channels: &[Vec<Observation>]) -> TimeSeriesRecord {
    let targets = (0..record.len())
        .map(|t| channels.iter().map(|c| c[t]).collect())
        .collect();
    record.replace_targets(targets)
}

/// Fits `transform` on every series of `train` and applies it.
pub fn fit_transform_dataset(transform: Transform, train: &PanelDataset) -> Result<(PanelDataset, FittedTransform)> {
    let mut channels_state = Vec::with_capacity(train.len());
    let mut codes = BTreeMap::new();
    let mut out_series = Vec::with_capacity(train.len());

    if transform == Transform::OrdinalEncoder {
        for (idx, spec) in train.schema().iter().enumerate() {
            if spec.kind != FeatureKind::Categorical {
                continue;
            }
            let mut seen = std::collections::BTreeSet::new();
            for s in train.series() {
                for row in s.past_features().unwrap_or(&[]) {
                    if let FeatureValue::Categorical(Some(c)) = &row[idx] {
                        seen.insert(c.clone());
                    }
                }
            }
            codes.insert(idx, seen.into_iter().enumerate().map(|(i, c)| (c, i)).collect());
        }
    }

    for s in train.series() {
        let channels: Vec<Vec<Observation>> = (0..s.dim()).map(|d| s.channel(d)).collect();
        let (states, new_channels): (Vec<ChannelState>, Vec<Vec<Observation>>) = match transform {
            Transform::Imputer(strategy) => {
                let imputed = channels
                    .iter()
                    .map(|c| impute_channel(s.series_id(), c, strategy))
                    .collect::<Result<Vec<_>>>()?;
                (vec![ChannelState::Identity; channels.len()], imputed)
            }
            Transform::Scaler(strategy) => fit_apply(&channels, |c| Ok(fit_affine(c, strategy)))?,
            Transform::Detrender(degree) => {
                if degree > 1 {
                    return Err(Error::InvalidArgument(format!("detrender degree {degree} is not supported")));
                }
                fit_apply(&channels, |c| Ok(fit_trend(c, degree)))?
            }
            Transform::Deseasonalizer(period) => {
                fit_apply(&channels, |c| fit_seasonal(s.series_id(), c, period))?
            }
            Transform::OrdinalEncoder => (vec![ChannelState::Identity; channels.len()], channels.clone()),
        };
        let mut record = rebuild(s, &new_channels);
        match transform {
            Transform::Imputer(strategy) => {
                let past = s.past_features().map(|rows| impute_features(rows, strategy));
                let future = s.future_features().map(|rows| impute_features(rows, strategy));
                if let Some(past) = past {
                    record = record.with_past_features(past)?;
                }
                if future.is_some() {
                    record.set_future(s.future_timestamps().to_vec(), future);
                }
            }
            Transform::OrdinalEncoder if !codes.is_empty() => {
                let fitted = FittedTransform {
                    transform,
                    channels: Vec::new(),
                    codes: codes.clone(),
                };
                if let Some(rows) = s.past_features() {
                    let encoded = rows
                        .iter()
                        .map(|row| row.iter().enumerate().map(|(j, v)| fitted.encode_value(j, v)).collect())
                        .collect();
                    record = record.with_past_features(encoded)?;
                }
                if let Some(rows) = s.future_features() {
                    let future_idx = train.future_known_indices();
                    let encoded = rows.iter().map(|row| fitted.encode_future(&future_idx, row)).collect();
                    record.set_future(s.future_timestamps().to_vec(), Some(encoded));
                }
            }
            _ => {}
        }
        channels_state.push(states);
        out_series.push(record);
    }

    let mut schema = train.schema().to_vec();
    for idx in codes.keys() {
        schema[*idx].kind = FeatureKind::Numeric;
    }
    let dataset = PanelDataset::new(
        train.name(),
        out_series,
        train.horizon(),
        train.seasonal_period(),
        schema,
    )?;
    Ok((
        dataset,
        FittedTransform {
            transform,
            channels: channels_state,
            codes,
        },
    ))
}

fn fit_apply(
    channels: &[Vec<Observation>],
    mut fit: impl FnMut(&[Observation]) -> Result<ChannelState>,
) -> Result<(Vec<ChannelState>, Vec<Vec<Observation>>)> {
    let mut states = Vec::with_capacity(channels.len());
    let mut out = Vec::with_capacity(channels.len());
    for c in channels {
        let state = fit(c)?;
        out.push(apply_state(&state, c));
        states.push(state);
    }
    Ok((states, out))
}

/// Fits `transform` on the training part of `split`. Validation targets are
/// never read.
pub fn fit_transform(transform: Transform, split: &TemporalSplit) -> Result<(PanelDataset, FittedTransform)> {
    fit_transform_dataset(transform, split.train())
}

/// Tabular view of a series: lag windows (plus exogenous values) and targets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DesignMatrix {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl DesignMatrix {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn extend(&mut self, other: DesignMatrix) {
        self.rows.extend(other.rows);
        self.targets.extend(other.targets);
    }
}

/// Lag-window reduction of a complete univariate sequence. Row `t` holds
/// `values[t-w..t]` followed by `exog[t]`, with target `values[t]`.
pub fn reduce_values(values: &[f64], exog: Option<&[Vec<f64>]>, window: usize) -> Result<DesignMatrix> {
    if window == 0 {
        return Err(Error::InvalidArgument("window length must be at least 1".into()));
    }
    if values.len() <= window {
        return Err(Error::InsufficientLength {
            series_id: String::new(),
            length: values.len(),
            required: window + 1,
        });
    }
    let mut m = DesignMatrix::default();
    for t in window..values.len() {
        let mut row = values[t - window..t].to_vec();
        if let Some(x) = exog {
            row.extend_from_slice(&x[t]);
        }
        m.rows.push(row);
        m.targets.push(values[t]);
    }
    Ok(m)
}

/// Numeric future-known feature values of a record, `[t][feature]`, with
/// missing values and unencoded categoricals dropped to zero / skipped.
pub(crate) fn exogenous_rows(dataset: &PanelDataset, rows: &[Vec<FeatureValue>], future: bool) -> Vec<Vec<f64>> {
    let idx = dataset.future_known_indices();
    let numeric: Vec<usize> = if future {
        idx.iter()
            .enumerate()
            .filter(|(_, &i)| dataset.schema()[i].kind == FeatureKind::Numeric)
            .map(|(pos, _)| pos)
            .collect()
    } else {
        idx.iter()
            .copied()
            .filter(|&i| dataset.schema()[i].kind == FeatureKind::Numeric)
            .collect()
    };
    rows.iter()
        .map(|row| {
            numeric
                .iter()
                .map(|&j| match &row[j] {
                    FeatureValue::Numeric(Some(v)) => *v,
                    _ => 0.0,
                })
                .collect()
        })
        .collect()
}

/// Window reduction of a record. Every target dimension contributes its own
/// rows; numeric future-known features are appended as exogenous columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowReducer {
    pub window: usize,
}

impl WindowReducer {
    pub fn reduce(&self, dataset: &PanelDataset, record: &TimeSeriesRecord) -> Result<DesignMatrix> {
        if record.len() <= self.window {
            return Err(Error::InsufficientLength {
                series_id: record.series_id().to_string(),
                length: record.len(),
                required: self.window + 1,
            });
        }
        let exog = record.past_features().map(|rows| exogenous_rows(dataset, rows, false));
        let exog = exog.filter(|rows| rows.first().is_some_and(|r| !r.is_empty()));
        let mut out = DesignMatrix::default();
        for d in 0..record.dim() {
            let values = complete_channel(record, d)?;
            out.extend(reduce_values(&values, exog.as_deref(), self.window)?);
        }
        Ok(out)
    }
}

/// Reduces a single-dataset record; see [`WindowReducer`].
pub fn window_reduce(dataset: &PanelDataset, record: &TimeSeriesRecord, window: usize) -> Result<DesignMatrix> {
    WindowReducer { window }.reduce(dataset, record)
}

/// A channel without missing markers, or an error naming the series.
pub(crate) fn complete_channel(record: &TimeSeriesRecord, dim: usize) -> Result<Vec<f64>> {
    record
        .channel(dim)
        .into_iter()
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| Error::MissingValues(format!("series `{}` contains missing values", record.series_id())))
}
