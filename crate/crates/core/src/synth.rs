//! Seeded synthetic datasets: trend plus seasonality, autoregressive
//! processes and families of related panels.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{write_dataset, PanelDataset, TimeSeriesRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    TrendSeason,
    ArProcess,
    PanelFamily,
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::TrendSeason => "trend_season",
            SynthKind::ArProcess => "ar_process",
            SynthKind::PanelFamily => "panel_family",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "trend_season" => Ok(SynthKind::TrendSeason),
            "ar_process" => Ok(SynthKind::ArProcess),
            "panel_family" => Ok(SynthKind::PanelFamily),
            other => Err(Error::InvalidArgument(format!("unknown synthetic kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub length: usize,
    pub period: usize,
    pub horizon: usize,
    pub series: usize,
    pub level: f64,
    pub slope: f64,
    pub amplitude: f64,
    /// Noise standard deviation as a fraction of the amplitude.
    pub noise: f64,
    /// AR coefficients, one or two of them.
    pub phi: Vec<f64>,
    pub datasets: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            length: 300,
            period: 12,
            horizon: 12,
            series: 1,
            level: 50.0,
            slope: 0.1,
            amplitude: 10.0,
            noise: 0.1,
            phi: vec![0.6, 0.2],
            datasets: 6,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.length <= self.horizon || self.horizon == 0 || self.period == 0 || self.series == 0 {
            return Err(Error::InvalidArgument(
                "length must exceed the horizon; horizon, period and series count must be positive".into(),
            ));
        }
        if !(self.noise >= 0.0) || !self.amplitude.is_finite() {
            return Err(Error::InvalidArgument("noise must be nonnegative and the amplitude finite".into()));
        }
        if self.phi.is_empty() || self.phi.len() > 2 {
            return Err(Error::InvalidArgument("AR processes take one or two coefficients".into()));
        }
        if self.datasets == 0 {
            return Err(Error::InvalidArgument("a family needs at least one dataset".into()));
        }
        Ok(())
    }
}

fn noise(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("nonnegative standard deviation")
}

fn trend_season_values(p: &SynthParams, amplitude: f64, phase: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let eps = noise(p.noise * amplitude.abs());
    (0..p.length)
        .map(|t| {
            let t = t as f64;
            p.level + p.slope * t + amplitude * (2.0 * PI * t / p.period as f64 + phase).sin() + eps.sample(rng)
        })
        .collect()
}

fn panel(name: String, rows: Vec<Vec<f64>>, p: &SynthParams) -> Result<PanelDataset> {
    let multi = rows.len() > 1;
    let records = rows
        .iter()
        .enumerate()
        .map(|(i, v)| TimeSeriesRecord::univariate(if multi { format!("{name}_{i}") } else { name.clone() }, v))
        .collect::<Result<Vec<_>>>()?;
    PanelDataset::new(name, records, p.horizon, p.period, Vec::new())
}

/// `level + slope·t + amplitude·sin(2πt/period + phase) + noise`. The first
/// series has phase 0; further series draw theirs at random.
pub fn trend_season(name: &str, p: &SynthParams, seed: u64) -> Result<PanelDataset> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..p.series)
        .map(|i| {
            let phase = if i == 0 { 0.0 } else { rng.random_range(0.0..2.0 * PI) };
            trend_season_values(p, p.amplitude, phase, &mut rng)
        })
        .collect();
    panel(name.to_string(), rows, p)
}

/// Stationary AR(1) or AR(2) around `level` with unit-scale innovations
/// of size `noise·amplitude`, after a burn-in of 100 steps.
pub fn ar_process(name: &str, p: &SynthParams, seed: u64) -> Result<PanelDataset> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = (p.noise * p.amplitude).abs().max(f64::MIN_POSITIVE);
    let eps = noise(sd);
    let phi1 = p.phi[0];
    let phi2 = p.phi.get(1).copied().unwrap_or(0.0);
    let rows = (0..p.series)
        .map(|_| {
            let (mut x1, mut x2) = (0.0, 0.0);
            let mut out = Vec::with_capacity(p.length);
            for t in 0..p.length + 100 {
                let x = phi1 * x1 + phi2 * x2 + eps.sample(&mut rng);
                x2 = x1;
                x1 = x;
                if t >= 100 {
                    out.push(p.level + x);
                }
            }
            out
        })
        .collect();
    panel(name.to_string(), rows, p)
}

/// `datasets` related trend-season panels. Members share the period and
/// the seasonal phase of each series; only the amplitude and the noise
/// draws differ.
pub fn panel_family(prefix: &str, p: &SynthParams, seed: u64) -> Result<Vec<PanelDataset>> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..p.series).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    (0..p.datasets)
        .map(|k| {
            let amplitude = p.amplitude * rng.random_range(0.5..1.5);
            let rows = phases
                .iter()
                .map(|&phase| trend_season_values(p, amplitude, phase, &mut rng))
                .collect();
            panel(format!("{prefix}_{k}"), rows, p)
        })
        .collect()
}

pub fn generate(kind: SynthKind, p: &SynthParams, seed: u64) -> Result<Vec<PanelDataset>> {
    let name = format!("{kind}_{seed}");
    match kind {
        SynthKind::TrendSeason => Ok(vec![trend_season(&name, p, seed)?]),
        SynthKind::ArProcess => Ok(vec![ar_process(&name, p, seed)?]),
        SynthKind::PanelFamily => panel_family(&name, p, seed),
    }
}

/// Writes each dataset as `<name>.csv` plus `<name>.json` metadata and
/// returns the written pairs.
pub fn write_all(datasets: &[PanelDataset], dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, PathBuf)>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    datasets
        .iter()
        .map(|d| {
            let csv = dir.join(format!("{}.csv", d.name()));
            let meta = dir.join(format!("{}.json", d.name()));
            write_dataset(d, &csv, &meta)?;
            Ok((csv, meta))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(d: &PanelDataset) -> Vec<f64> {
        d.series()[0].channel(0).into_iter().flatten().collect()
    }

    #[test]
    fn noiseless_trend_season_is_exact() {
        let p = SynthParams { noise: 0.0, length: 48, ..Default::default() };
        let v = values(&trend_season("t", &p, 3).unwrap());
        assert_eq!(v[0], 50.0);
        assert!((v[3] - (50.0 + 0.3 + 10.0)).abs() < 1e-12);
    }

    #[test]
    fn seeded_and_distinct() {
        let p = SynthParams::default();
        for kind in [SynthKind::TrendSeason, SynthKind::ArProcess, SynthKind::PanelFamily] {
            assert_eq!(generate(kind, &p, 4).unwrap(), generate(kind, &p, 4).unwrap());
            assert_ne!(generate(kind, &p, 4).unwrap(), generate(kind, &p, 5).unwrap());
        }
    }

    #[test]
    fn family_shape() {
        let p = SynthParams { datasets: 5, series: 3, ..Default::default() };
        let fam = panel_family("f", &p, 0).unwrap();
        assert_eq!(fam.len(), 5);
        let mut names: Vec<&str> = fam.iter().map(|d| d.name()).collect();
        names.dedup();
        assert_eq!(names.len(), 5);
        assert!(fam.iter().all(|d| d.seasonal_period() == 12 && d.len() == 3));
    }

    #[test]
    fn ar_is_stationary_around_level() {
        let p = SynthParams { length: 5000, ..Default::default() };
        let v = values(&ar_process("a", &p, 1).unwrap());
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 50.0).abs() < 0.5, "{mean}");
    }

    #[test]
    fn bad_params() {
        assert!(trend_season("x", &SynthParams { length: 5, horizon: 12, ..Default::default() }, 0).is_err());
        assert!(ar_process("x", &SynthParams { phi: vec![], ..Default::default() }, 0).is_err());
        assert!("walk".parse::<SynthKind>().is_err());
    }
}
