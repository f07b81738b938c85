//! Time series data model, dataset ingestion and temporal splitting.
//!
//! A [`PanelDataset`] holds one or more [`TimeSeriesRecord`]s that share a
//! feature schema, a forecast horizon and a seasonal period. Missing target
//! observations are kept as explicit `None` markers; only pipeline imputers
//! remove them.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single target observation. `None` is the missing marker.
pub type Observation = Option<f64>;

/// Point forecast of one series, indexed `[step][dimension]`.
pub type Forecast = Vec<Vec<f64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

/// Name and role of one exogenous feature column.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    /// Values are known for the forecast horizon as well as the past.
    pub future_known: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureValue {
    Numeric(Option<f64>),
    Categorical(Option<String>),
}

impl FeatureValue {
    pub fn is_missing(&self) -> bool {
        match self {
            FeatureValue::Numeric(v) => v.is_none(),
            FeatureValue::Categorical(v) => v.is_none(),
        }
    }

    fn kind(&self) -> FeatureKind {
        match self {
            FeatureValue::Numeric(_) => FeatureKind::Numeric,
            FeatureValue::Categorical(_) => FeatureKind::Categorical,
        }
    }
}

/// One (possibly multivariate) series with optional exogenous features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    series_id: String,
    timestamps: Vec<String>,
    targets: Vec<Vec<Observation>>,
    past_features: Option<Vec<Vec<FeatureValue>>>,
    future_timestamps: Vec<String>,
    future_features: Option<Vec<Vec<FeatureValue>>>,
}

impl TimeSeriesRecord {
    /// Builds a record from target vectors indexed `[t][dimension]`.
    /// Timestamps default to the integer index `0..T`.
    pub fn new(series_id: impl Into<String>, targets: Vec<Vec<Observation>>) -> Result<Self> {
        let series_id = series_id.into();
        if targets.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "series `{series_id}` has no observations"
            )));
        }
        let dim = targets[0].len();
        if dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "series `{series_id}` has zero-dimensional targets"
            )));
        }
        if let Some(t) = targets.iter().position(|v| v.len() != dim) {
            return Err(Error::InvalidArgument(format!(
                "series `{series_id}`: target at index {t} has dimension {} instead of {dim}",
                targets[t].len()
            )));
        }
        let timestamps = (0..targets.len()).map(|t| t.to_string()).collect();
        Ok(Self {
            series_id,
            timestamps,
            targets,
            past_features: None,
            future_timestamps: Vec::new(),
            future_features: None,
        })
    }

    /// Univariate convenience constructor. NaN values become missing markers.
    pub fn univariate(series_id: impl Into<String>, values: &[f64]) -> Result<Self> {
        let targets = values
            .iter()
            .map(|v| vec![if v.is_nan() { None } else { Some(*v) }])
            .collect();
        Self::new(series_id, targets)
    }

    /// Univariate constructor with explicit missing markers.
    pub fn from_observations(series_id: impl Into<String>, values: &[Observation]) -> Result<Self> {
        Self::new(series_id, values.iter().map(|v| vec![*v]).collect())
    }

    pub fn with_timestamps(mut self, timestamps: Vec<String>) -> Result<Self> {
        if timestamps.len() != self.targets.len() {
            return Err(Error::LengthMismatch {
                left: timestamps.len(),
                right: self.targets.len(),
            });
        }
        self.timestamps = timestamps;
        Ok(self)
    }

    pub fn with_past_features(mut self, features: Vec<Vec<FeatureValue>>) -> Result<Self> {
        if features.len() != self.targets.len() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: self.targets.len(),
            });
        }
        self.past_features = Some(features);
        Ok(self)
    }

    /// Attaches future-known feature values for the forecast horizon.
    pub fn with_future_features(
        mut self,
        timestamps: Vec<String>,
        features: Vec<Vec<FeatureValue>>,
    ) -> Result<Self> {
        if timestamps.len() != features.len() {
            return Err(Error::LengthMismatch {
                left: timestamps.len(),
                right: features.len(),
            });
        }
        self.future_timestamps = timestamps;
        self.future_features = Some(features);
        Ok(self)
    }

    pub fn series_id(&self) -> &str {
        &self.series_id
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.targets[0].len()
    }

    pub fn timestamps(&self) -> &[String] {
        &self.timestamps
    }

    pub fn targets(&self) -> &[Vec<Observation>] {
        &self.targets
    }

    pub fn past_features(&self) -> Option<&[Vec<FeatureValue>]> {
        self.past_features.as_deref()
    }

    pub fn future_timestamps(&self) -> &[String] {
        &self.future_timestamps
    }

    pub fn future_features(&self) -> Option<&[Vec<FeatureValue>]> {
        self.future_features.as_deref()
    }

    /// Observations of target dimension `dim` in time order.
    pub fn channel(&self, dim: usize) -> Vec<Observation> {
        self.targets.iter().map(|v| v[dim]).collect()
    }

    pub fn has_missing(&self) -> bool {
        self.targets.iter().flatten().any(Option::is_none)
    }

    /// Keeps observations `start..end` (targets, timestamps and past features).
    /// Future features are untouched.
    pub(crate) fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            series_id: self.series_id.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            targets: self.targets[start..end].to_vec(),
            past_features: self.past_features.as_ref().map(|f| f[start..end].to_vec()),
            future_timestamps: self.future_timestamps.clone(),
            future_features: self.future_features.clone(),
        }
    }

    /// Replaces the target matrix, keeping everything else. Lengths must match.
    pub(crate) fn replace_targets(&self, targets: Vec<Vec<Observation>>) -> Self {
        debug_assert_eq!(targets.len(), self.targets.len());
        Self {
            targets,
            ..self.clone()
        }
    }

    pub(crate) fn set_future(&mut self, timestamps: Vec<String>, features: Option<Vec<Vec<FeatureValue>>>) {
        self.future_timestamps = timestamps;
        self.future_features = features;
    }

    /// Appends the observations of `other` (same id, same dimension).
    pub(crate) fn concat(&self, other: &TimeSeriesRecord) -> Self {
        let mut out = self.clone();
        out.timestamps.extend(other.timestamps.iter().cloned());
        out.targets.extend(other.targets.iter().cloned());
        out.past_features = match (&self.past_features, &other.past_features) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            _ => None,
        };
        out.future_timestamps = other.future_timestamps.clone();
        out.future_features = other.future_features.clone();
        out
    }
}

/// A named collection of series sharing horizon, seasonal period and schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    name: String,
    series: Vec<TimeSeriesRecord>,
    horizon: usize,
    seasonal_period: usize,
    schema: Vec<FeatureSpec>,
}

impl PanelDataset {
    pub fn new(
        name: impl Into<String>,
        series: Vec<TimeSeriesRecord>,
        horizon: usize,
        seasonal_period: usize,
        schema: Vec<FeatureSpec>,
    ) -> Result<Self> {
        let name = name.into();
        if series.is_empty() {
            return Err(Error::InvalidArgument(format!("dataset `{name}` has no series")));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if seasonal_period == 0 {
            return Err(Error::InvalidArgument("seasonal period must be at least 1".into()));
        }
        let dim = series[0].dim();
        let n_future = schema.iter().filter(|f| f.future_known).count();
        let mut seen = BTreeSet::new();
        for s in &series {
            if !seen.insert(s.series_id.as_str()) {
                return Err(Error::Schema(format!("duplicate series id `{}`", s.series_id)));
            }
            if s.dim() != dim {
                return Err(Error::Schema(format!(
                    "series `{}` has target dimension {} but dataset dimension is {dim}",
                    s.series_id,
                    s.dim()
                )));
            }
            match (&s.past_features, schema.is_empty()) {
                (None, false) => {
                    return Err(Error::Schema(format!(
                        "series `{}` lacks feature values required by the schema",
                        s.series_id
                    )))
                }
                (Some(rows), _) => check_feature_rows(&s.series_id, rows, schema.iter())?,
                (None, true) => {}
            }
            if let Some(rows) = &s.future_features {
                if rows.len() != horizon {
                    return Err(Error::Schema(format!(
                        "series `{}` has {} future feature rows, horizon is {horizon}",
                        s.series_id,
                        rows.len()
                    )));
                }
                if n_future == 0 {
                    return Err(Error::Schema(format!(
                        "series `{}` carries future features but none are declared",
                        s.series_id
                    )));
                }
                check_feature_rows(&s.series_id, rows, schema.iter().filter(|f| f.future_known))?;
            }
        }
        Ok(Self {
            name,
            series,
            horizon,
            seasonal_period,
            schema,
        })
    }

    /// Single univariate series without features.
    pub fn univariate(
        name: impl Into<String>,
        values: &[f64],
        horizon: usize,
        seasonal_period: usize,
    ) -> Result<Self> {
        let name = name.into();
        let record = TimeSeriesRecord::univariate(name.clone(), values)?;
        Self::new(name, vec![record], horizon, seasonal_period, Vec::new())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn series(&self) -> &[TimeSeriesRecord] {
        &self.series
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn seasonal_period(&self) -> usize {
        self.seasonal_period
    }

    pub fn schema(&self) -> &[FeatureSpec] {
        &self.schema
    }

    pub fn dim(&self) -> usize {
        self.series[0].dim()
    }

    /// Indices into the schema of the future-known features.
    pub fn future_known_indices(&self) -> Vec<usize> {
        self.schema
            .iter()
            .enumerate()
            .filter(|(_, f)| f.future_known)
            .map(|(i, _)| i)
            .collect()
    }

    /// Total number of target observations over all series.
    pub fn observation_count(&self) -> usize {
        self.series.iter().map(TimeSeriesRecord::len).sum()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub(crate) fn map_series(&self, f: impl FnMut(&TimeSeriesRecord) -> TimeSeriesRecord) -> Self {
        Self {
            series: self.series.iter().map(f).collect(),
            ..self.clone()
        }
    }
}

fn check_feature_rows<'a>(
    series_id: &str,
    rows: &[Vec<FeatureValue>],
    specs: impl Iterator<Item = &'a FeatureSpec> + Clone,
) -> Result<()> {
    let width = specs.clone().count();
    for row in rows {
        if row.len() != width {
            return Err(Error::Schema(format!(
                "series `{series_id}` has a feature row of width {}, expected {width}",
                row.len()
            )));
        }
        for (value, spec) in row.iter().zip(specs.clone()) {
            if value.kind() != spec.kind {
                return Err(Error::Schema(format!(
                    "series `{series_id}`: feature `{}` has the wrong kind",
                    spec.name
                )));
            }
        }
    }
    Ok(())
}

/// Train part of a dataset plus the held-out final observations of every series.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalSplit {
    train: PanelDataset,
    validation: Vec<TimeSeriesRecord>,
    validation_horizon: usize,
    original_horizon: usize,
}

impl TemporalSplit {
    /// Training data. Its future features, when present, cover the validation window.
    pub fn train(&self) -> &PanelDataset {
        &self.train
    }

    pub fn validation_horizon(&self) -> usize {
        self.validation_horizon
    }

    /// Held-out targets of series `i`, indexed `[step][dimension]`.
    pub fn validation_targets(&self, i: usize) -> &[Vec<Observation>] {
        self.validation[i].targets()
    }

    pub fn validation_records(&self) -> &[TimeSeriesRecord] {
        &self.validation
    }

    /// Concatenates train and validation back into the original dataset.
    pub fn reconstruct(&self) -> Result<PanelDataset> {
        let series = self
            .train
            .series
            .iter()
            .zip(&self.validation)
            .map(|(t, v)| t.concat(v))
            .collect();
        PanelDataset::new(
            self.train.name.clone(),
            series,
            self.original_horizon,
            self.train.seasonal_period,
            self.train.schema.clone(),
        )
    }
}

/// Splits off the final `horizon` observations of every series as validation data.
pub fn temporal_holdout(dataset: &PanelDataset, horizon: usize) -> Result<TemporalSplit> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("holdout horizon must be at least 1".into()));
    }
    if let Some(short) = dataset.series.iter().find(|s| s.len() <= horizon) {
        return Err(Error::InsufficientLength {
            series_id: short.series_id.clone(),
            length: short.len(),
            required: horizon + 1,
        });
    }
    let future_idx = dataset.future_known_indices();
    let mut train_series = Vec::with_capacity(dataset.len());
    let mut validation = Vec::with_capacity(dataset.len());
    for s in &dataset.series {
        let cut = s.len() - horizon;
        let mut train = s.slice(0, cut);
        let valid = s.slice(cut, s.len());
        let future = if future_idx.is_empty() {
            None
        } else {
            valid.past_features.as_ref().map(|rows| {
                rows.iter()
                    .map(|row| future_idx.iter().map(|&i| row[i].clone()).collect())
                    .collect()
            })
        };
        train.set_future(valid.timestamps.clone(), future);
        train_series.push(train);
        validation.push(valid);
    }
    let train = PanelDataset::new(
        dataset.name.clone(),
        train_series,
        horizon,
        dataset.seasonal_period,
        dataset.schema.clone(),
    )?;
    Ok(TemporalSplit {
        train,
        validation,
        validation_horizon: horizon,
        original_horizon: dataset.horizon,
    })
}

/// The last `min(h, T)` target vectors of a series, in original order.
pub fn tail(series: &TimeSeriesRecord, h: usize) -> &[Vec<Observation>] {
    let start = series.len().saturating_sub(h);
    &series.targets[start..]
}

/// Dataset metadata sidecar.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub horizon: usize,
    pub seasonal_period: usize,
    #[serde(default)]
    pub future_known_features: Vec<String>,
    #[serde(default)]
    pub categorical_features: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stamp {
    Index(i64),
    Time(NaiveDateTime),
}

fn parse_stamp(raw: &str) -> Option<Stamp> {
    let raw = raw.trim();
    if let Ok(i) = raw.parse::<i64>() {
        return Some(Stamp::Index(i));
    }
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return d.and_hms_opt(0, 0, 0).map(Stamp::Time);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(Stamp::Time(t));
        }
    }
    // Accept a trailing `Z` or fractional seconds.
    let trimmed = raw.trim_end_matches('Z');
    NaiveDateTime::parse_from_str(trimmed, "%Y-%m-%dT%H:%M:%S%.f")
        .ok()
        .map(Stamp::Time)
}

/// Step between consecutive stamps, either in index units / seconds or in
/// calendar months (same day-of-month and time of day).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Step {
    Units(i64),
    Months(i64),
}

fn step_between(a: Stamp, b: Stamp) -> Option<(Step, Option<Step>)> {
    match (a, b) {
        (Stamp::Index(x), Stamp::Index(y)) => Some((Step::Units(y - x), None)),
        (Stamp::Time(x), Stamp::Time(y)) => {
            let secs = (y - x).num_seconds();
            let months = if x.day() == y.day() && x.time() == y.time() {
                Some(Step::Months(
                    (y.year() as i64 - x.year() as i64) * 12 + y.month() as i64 - x.month() as i64,
                ))
            } else {
                None
            };
            Some((Step::Units(secs), months))
        }
        _ => None,
    }
}

fn is_positive(step: Step) -> bool {
    match step {
        Step::Units(s) | Step::Months(s) => s > 0,
    }
}

/// Validates that `stamps` are strictly increasing on an equally spaced grid.
/// Returns the offending position on failure.
fn check_grid(stamps: &[Stamp]) -> std::result::Result<(), (usize, String)> {
    if stamps.len() < 2 {
        return Ok(());
    }
    let mut units = true;
    let mut months = true;
    let mut first: Option<(Step, Option<Step>)> = None;
    for (i, pair) in stamps.windows(2).enumerate() {
        let (u, m) = step_between(pair[0], pair[1])
            .ok_or_else(|| (i + 1, "timestamps mix integer and calendar formats".to_string()))?;
        let positive = is_positive(u);
        if !positive {
            return Err((i + 1, "timestamps are not strictly increasing".into()));
        }
        match first {
            None => {
                months = m.is_some();
                first = Some((u, m));
            }
            Some((u0, m0)) => {
                units &= u == u0;
                months &= m.is_some() && m == m0;
            }
        }
        if !units && !months {
            return Err((i + 1, "timestamps are not equally spaced".into()));
        }
    }
    Ok(())
}

fn parse_error(row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        message: message.into(),
    }
}

fn csv_error(err: csv::Error) -> Error {
    let row = err.position().map(|p| p.line() as usize).unwrap_or(0);
    parse_error(row, err.to_string())
}

struct RawRow {
    line: usize,
    stamp_raw: String,
    stamp: Stamp,
    target: Observation,
    features: Vec<FeatureValue>,
}

/// Loads a long-format CSV (`series_id,timestamp,target[,features...]`) with
/// its JSON metadata.
///
/// When the metadata declares future-known features, the final `horizon`
/// rows of every series are forecast-period rows: their target cells must
/// be empty and their feature values become the series' future features.
pub fn load_dataset(csv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<PanelDataset> {
    let meta: DatasetMeta = serde_json::from_reader(BufReader::new(File::open(meta_path.as_ref())?))
        .map_err(|e| Error::Schema(format!("invalid metadata: {e}")))?;
    let name = csv_path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let file = File::open(csv_path.as_ref())?;
    read_dataset(BufReader::new(file), &meta, name)
}

/// Parses a long-format CSV from any reader. See [`load_dataset`].
pub fn read_dataset(reader: impl std::io::Read, meta: &DatasetMeta, name: String) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "series_id" || cols[1] != "timestamp" || cols[2] != "target" {
        return Err(Error::Schema(
            "header must start with `series_id,timestamp,target`".into(),
        ));
    }
    let feature_names: Vec<String> = cols[3..].iter().map(|s| s.to_string()).collect();
    for declared in meta.future_known_features.iter().chain(&meta.categorical_features) {
        if !feature_names.contains(declared) {
            return Err(Error::Schema(format!(
                "metadata names feature `{declared}` which is not a CSV column"
            )));
        }
    }
    let schema: Vec<FeatureSpec> = feature_names
        .iter()
        .map(|n| FeatureSpec {
            name: n.clone(),
            kind: if meta.categorical_features.contains(n) {
                FeatureKind::Categorical
            } else {
                FeatureKind::Numeric
            },
            future_known: meta.future_known_features.contains(n),
        })
        .collect();

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<RawRow>> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = record[0].trim().to_string();
        if id.is_empty() {
            return Err(parse_error(line, "empty series_id"));
        }
        let stamp_raw = record[1].trim().to_string();
        let stamp = parse_stamp(&stamp_raw)
            .ok_or_else(|| parse_error(line, format!("unparsable timestamp `{stamp_raw}`")))?;
        let target_cell = record[2].trim();
        let target = if target_cell.is_empty() {
            None
        } else {
            let v: f64 = target_cell
                .parse()
                .map_err(|_| parse_error(line, format!("non-numeric target `{target_cell}`")))?;
            if !v.is_finite() {
                return Err(parse_error(line, format!("non-finite target `{target_cell}`")));
            }
            Some(v)
        };
        let mut features = Vec::with_capacity(schema.len());
        for (j, spec) in schema.iter().enumerate() {
            let cell = record[3 + j].trim();
            features.push(match spec.kind {
                FeatureKind::Categorical => {
                    FeatureValue::Categorical((!cell.is_empty()).then(|| cell.to_string()))
                }
                FeatureKind::Numeric if cell.is_empty() => FeatureValue::Numeric(None),
                FeatureKind::Numeric => FeatureValue::Numeric(Some(cell.parse().map_err(|_| {
                    parse_error(line, format!("non-numeric value `{cell}` in column `{}`", spec.name))
                })?)),
            });
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push(RawRow {
            line,
            stamp_raw,
            stamp,
            target,
            features,
        });
    }
    if order.is_empty() {
        return Err(Error::Schema("CSV contains no data rows".into()));
    }

    let has_future = schema.iter().any(|f| f.future_known);
    let future_idx: Vec<usize> = schema
        .iter()
        .enumerate()
        .filter(|(_, f)| f.future_known)
        .map(|(i, _)| i)
        .collect();
    let mut series = Vec::with_capacity(order.len());
    for id in order {
        let rows = rows.remove(&id).unwrap_or_default();
        let stamps: Vec<Stamp> = rows.iter().map(|r| r.stamp).collect();
        if let Err((pos, message)) = check_grid(&stamps) {
            return Err(Error::Ordering {
                series_id: id,
                row: rows[pos].line,
                message,
            });
        }
        let n_future = if has_future { meta.horizon } else { 0 };
        if rows.len() <= n_future {
            return Err(Error::Schema(format!(
                "series `{id}` has {} rows but {n_future} forecast-period rows are required",
                rows.len()
            )));
        }
        let cut = rows.len() - n_future;
        if let Some(r) = rows[cut..].iter().find(|r| r.target.is_some()) {
            return Err(parse_error(
                r.line,
                "forecast-period rows must leave the target empty",
            ));
        }
        let (past, future) = rows.split_at(cut);
        let targets = past.iter().map(|r| vec![r.target]).collect();
        let mut record = TimeSeriesRecord::new(id, targets)?
            .with_timestamps(past.iter().map(|r| r.stamp_raw.clone()).collect())?;
        if !schema.is_empty() {
            record = record.with_past_features(past.iter().map(|r| r.features.clone()).collect())?;
        }
        if has_future {
            record = record.with_future_features(
                future.iter().map(|r| r.stamp_raw.clone()).collect(),
                future
                    .iter()
                    .map(|r| future_idx.iter().map(|&i| r.features[i].clone()).collect())
                    .collect(),
            )?;
        }
        series.push(record);
    }
    PanelDataset::new(name, series, meta.horizon, meta.seasonal_period, schema)
}

/// Metadata describing `dataset`, as [`load_dataset`] expects it.
pub fn dataset_meta(dataset: &PanelDataset) -> DatasetMeta {
    DatasetMeta {
        horizon: dataset.horizon,
        seasonal_period: dataset.seasonal_period,
        future_known_features: dataset
            .schema
            .iter()
            .filter(|f| f.future_known)
            .map(|f| f.name.clone())
            .collect(),
        categorical_features: dataset
            .schema
            .iter()
            .filter(|f| f.kind == FeatureKind::Categorical)
            .map(|f| f.name.clone())
            .collect(),
    }
}

fn feature_cell(v: &FeatureValue) -> String {
    match v {
        FeatureValue::Numeric(Some(x)) => x.to_string(),
        FeatureValue::Categorical(Some(s)) => s.clone(),
        _ => String::new(),
    }
}

/// Writes `dataset` as a long-format CSV plus metadata JSON.
/// Only univariate targets can be written.
pub fn write_dataset(
    dataset: &PanelDataset,
    csv_path: impl AsRef<Path>,
    meta_path: impl AsRef<Path>,
) -> Result<()> {
    if dataset.dim() != 1 {
        return Err(Error::Schema(
            "the long CSV format stores a single target column".into(),
        ));
    }
    let has_future = dataset.schema.iter().any(|f| f.future_known);
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(csv_path.as_ref())?));
    let mut header = vec!["series_id".to_string(), "timestamp".into(), "target".into()];
    header.extend(dataset.schema.iter().map(|f| f.name.clone()));
    wtr.write_record(&header)?;
    for s in &dataset.series {
        for t in 0..s.len() {
            let mut row = vec![
                s.series_id.clone(),
                s.timestamps[t].clone(),
                s.targets[t][0].map(|v| v.to_string()).unwrap_or_default(),
            ];
            if let Some(f) = &s.past_features {
                row.extend(f[t].iter().map(feature_cell));
            }
            wtr.write_record(&row)?;
        }
        if has_future {
            let future = s.future_features.as_ref().ok_or_else(|| {
                Error::Schema(format!("series `{}` lacks future feature values", s.series_id))
            })?;
            for (h, values) in future.iter().enumerate() {
                let mut row = vec![s.series_id.clone(), s.future_timestamps[h].clone(), String::new()];
                let mut it = values.iter();
                for spec in &dataset.schema {
                    row.push(if spec.future_known {
                        it.next().map(feature_cell).unwrap_or_default()
                    } else {
                        String::new()
                    });
                }
                wtr.write_record(&row)?;
            }
        }
    }
    wtr.flush()?;
    let mut meta_file = BufWriter::new(File::create(meta_path.as_ref())?);
    serde_json::to_writer_pretty(&mut meta_file, &dataset_meta(dataset))?;
    meta_file.flush()?;
    Ok(())
}
