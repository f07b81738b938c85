//! The model zoo filling a pipeline's final step.
//!
//! Statistical models are fitted per series and target dimension.
//! Reduction models (ridge, bagged trees, MLP) are fitted jointly on the
//! lag windows of every series and forecast recursively.

pub mod linear;
pub mod mlp;
pub mod optim;
pub mod smoothing;
pub mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::deadline::Deadline;
use crate::error::{Error, Result};
use crate::series::{Forecast, PanelDataset};
use crate::transforms::{complete_channel, exogenous_rows, DesignMatrix, WindowReducer};

use self::linear::{ArModel, LinearModel};
use self::mlp::{Mlp, MlpParams};
use self::smoothing::SmoothingState;
use self::tree::{Forest, TreeOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Forecaster {
    Naive,
    SeasonalNaive {
        period: usize,
    },
    Drift,
    /// Unset smoothing parameters are fitted.
    Ses {
        alpha: Option<f64>,
    },
    Holt {
        alpha: Option<f64>,
        beta: Option<f64>,
        damped: bool,
    },
    HoltWinters {
        alpha: Option<f64>,
        beta: Option<f64>,
        gamma: Option<f64>,
        period: usize,
    },
    Ar {
        order: usize,
    },
    Ridge {
        lambda: f64,
    },
    BaggedTrees {
        n_trees: usize,
        max_depth: usize,
    },
    Mlp(MlpParams),
}

impl Forecaster {
    /// Whether the model is fitted on lag windows rather than per series.
    pub fn is_reduction(&self) -> bool {
        matches!(self, Forecaster::Ridge { .. } | Forecaster::BaggedTrees { .. } | Forecaster::Mlp(_))
    }

    fn fit_univariate(&self, values: &[f64], deadline: &Deadline) -> Result<UnivariateFit> {
        Ok(match self {
            Forecaster::Naive => UnivariateFit::Smoothing(smoothing::fit_naive(values)?),
            Forecaster::SeasonalNaive { period } => {
                UnivariateFit::Smoothing(smoothing::fit_seasonal_naive(values, *period)?)
            }
            Forecaster::Drift => UnivariateFit::Smoothing(smoothing::fit_drift(values)?),
            Forecaster::Ses { alpha } => UnivariateFit::Smoothing(smoothing::fit_ses(values, *alpha, deadline)?),
            Forecaster::Holt { alpha, beta, damped } => {
                UnivariateFit::Smoothing(smoothing::fit_holt(values, *alpha, *beta, *damped, deadline)?)
            }
            Forecaster::HoltWinters {
                alpha,
                beta,
                gamma,
                period,
            } => UnivariateFit::Smoothing(smoothing::fit_holt_winters(values, *period, *alpha, *beta, *gamma, deadline)?),
            Forecaster::Ar { order } => UnivariateFit::Ar(linear::fit_ar(values, *order)?),
            _ => unreachable!("reduction models are not fitted per series"),
        })
    }

    fn fit_regressor(&self, data: &DesignMatrix, seed: u64, deadline: &Deadline) -> Result<Regressor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match self {
            Forecaster::Ridge { lambda } => Regressor::Linear(linear::fit_ridge(data, *lambda)?),
            Forecaster::BaggedTrees { n_trees, max_depth } => {
                let options = TreeOptions {
                    max_depth: Some(*max_depth),
                    ..Default::default()
                };
                Regressor::Forest(Forest::fit(&data.rows, &data.targets, *n_trees, &options, &mut rng, deadline)?)
            }
            Forecaster::Mlp(params) => Regressor::Mlp(mlp::fit_mlp(data, params, &mut rng, deadline)?),
            _ => unreachable!("statistical models are not fitted on design matrices"),
        })
    }

    /// Fits the model on every series of `train`. Reduction models require
    /// `reducer`; `seed` drives bootstrap sampling and network initialization.
    pub fn fit(
        &self,
        train: &PanelDataset,
        reducer: Option<WindowReducer>,
        seed: u64,
        deadline: &Deadline,
    ) -> Result<FittedForecaster> {
        if !self.is_reduction() {
            let mut per_series = Vec::with_capacity(train.len());
            for s in train.series() {
                let mut dims = Vec::with_capacity(s.dim());
                for d in 0..s.dim() {
                    deadline.check()?;
                    let values = complete_channel(s, d)?;
                    dims.push(self.fit_univariate(&values, deadline).map_err(|e| name_series(e, s.series_id()))?);
                }
                per_series.push(dims);
            }
            return Ok(FittedForecaster::PerSeries(per_series));
        }

        let reducer = reducer.ok_or_else(|| Error::InvalidArgument("reduction models need a window reducer".into()))?;
        let mut data = DesignMatrix::default();
        let mut histories = Vec::with_capacity(train.len());
        let mut future_exog = Vec::with_capacity(train.len());
        for s in train.series() {
            deadline.check()?;
            data.extend(reducer.reduce(train, s).map_err(|e| name_series(e, s.series_id()))?);
            let mut dims = Vec::with_capacity(s.dim());
            for d in 0..s.dim() {
                let values = complete_channel(s, d)?;
                dims.push(values[values.len() - reducer.window..].to_vec());
            }
            histories.push(dims);
            let uses_exog = s
                .past_features()
                .is_some_and(|rows| !rows.is_empty() && !exogenous_rows(train, &rows[..1], false)[0].is_empty());
            future_exog.push(if uses_exog {
                Some(exogenous_rows(train, s.future_features().unwrap_or(&[]), true))
            } else {
                None
            });
        }
        let model = self.fit_regressor(&data, seed, deadline)?;
        Ok(FittedForecaster::Reduction(ReductionFit {
            window: reducer.window,
            model,
            histories,
            future_exog,
        }))
    }
}

fn name_series(err: Error, series_id: &str) -> Error {
    match err {
        Error::InsufficientLength { length, required, .. } => Error::InsufficientLength {
            series_id: series_id.to_string(),
            length,
            required,
        },
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum UnivariateFit {
    Smoothing(SmoothingState),
    Ar(ArModel),
}

impl UnivariateFit {
    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        match self {
            UnivariateFit::Smoothing(s) => s.forecast(horizon),
            UnivariateFit::Ar(ar) => ar.forecast(horizon),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Regressor {
    Linear(LinearModel),
    Forest(Forest),
    Mlp(Mlp),
}

impl Regressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Regressor::Linear(m) => m.predict(x),
            Regressor::Forest(f) => f.predict(x),
            Regressor::Mlp(n) => n.predict(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionFit {
    window: usize,
    model: Regressor,
    /// Last `window` values, `[series][dimension]`.
    histories: Vec<Vec<Vec<f64>>>,
    /// Exogenous values for the forecast steps, when the model uses them.
    future_exog: Vec<Option<Vec<Vec<f64>>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FittedForecaster {
    /// `[series][dimension]`.
    PerSeries(Vec<Vec<UnivariateFit>>),
    Reduction(ReductionFit),
}

impl FittedForecaster {
    /// Forecasts `horizon` steps for every series. Non-finite output is a
    /// numerical failure.
    pub fn predict(&self, horizon: usize) -> Result<Vec<Forecast>> {
        let out: Vec<Forecast> = match self {
            FittedForecaster::PerSeries(series) => series
                .iter()
                .map(|dims| {
                    let paths: Vec<Vec<f64>> = dims.iter().map(|f| f.forecast(horizon)).collect();
                    (0..horizon).map(|h| paths.iter().map(|p| p[h]).collect()).collect()
                })
                .collect(),
            FittedForecaster::Reduction(fit) => {
                let mut out = Vec::with_capacity(fit.histories.len());
                for (dims, exog) in fit.histories.iter().zip(&fit.future_exog) {
                    if let Some(rows) = exog {
                        if rows.len() < horizon {
                            return Err(Error::InvalidArgument(format!(
                                "model needs future feature values for {horizon} steps, {} available",
                                rows.len()
                            )));
                        }
                    }
                    let mut paths = Vec::with_capacity(dims.len());
                    for hist in dims {
                        let mut window = hist.clone();
                        let mut path = Vec::with_capacity(horizon);
                        for h in 0..horizon {
                            let mut row = window[window.len() - fit.window..].to_vec();
                            if let Some(rows) = exog {
                                row.extend_from_slice(&rows[h]);
                            }
                            let y = fit.model.predict(&row);
                            window.push(y);
                            path.push(y);
                        }
                        paths.push(path);
                    }
                    out.push((0..horizon).map(|h| paths.iter().map(|p| p[h]).collect()).collect());
                }
                out
            }
        };
        if out.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("forecast contains non-finite values".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::TimeSeriesRecord;
    use proptest::prelude::*;

    fn panel(series: &[Vec<f64>]) -> PanelDataset {
        let records = series
            .iter()
            .enumerate()
            .map(|(i, v)| TimeSeriesRecord::univariate(format!("s{i}"), v).unwrap())
            .collect();
        PanelDataset::new("p", records, 2, 1, vec![]).unwrap()
    }

    fn fc(f: &Forecaster, data: &PanelDataset, h: usize) -> Vec<Forecast> {
        f.fit(data, Some(WindowReducer { window: 3 }), 11, &Deadline::none())
            .unwrap()
            .predict(h)
            .unwrap()
    }

    #[test]
    fn panel_level_examples() {
        let d = panel(&[vec![1.0, 2.0, 3.0]]);
        assert_eq!(fc(&Forecaster::Naive, &d, 2), vec![vec![vec![3.0], vec![3.0]]]);
        let d = panel(&[vec![0.0, 1.0, 2.0]]);
        assert_eq!(fc(&Forecaster::Drift, &d, 3), vec![vec![vec![3.0], vec![4.0], vec![5.0]]]);
        let d = panel(&[vec![1.0, 2.0, 3.0, 4.0]]);
        assert_eq!(
            fc(&Forecaster::SeasonalNaive { period: 2 }, &d, 2),
            vec![vec![vec![3.0], vec![4.0]]]
        );
    }

    #[test]
    fn reduction_generalizes_over_panel() {
        let a: Vec<f64> = (0..30).map(|t| t as f64).collect();
        let b: Vec<f64> = (0..30).map(|t| 100.0 + 2.0 * t as f64).collect();
        let out = fc(&Forecaster::Ridge { lambda: 0.0 }, &panel(&[a, b]), 2);
        // Two different linear recursions, one shared linear model: y_t = 2y_{t-1} - y_{t-2}.
        assert!((out[0][0][0] - 30.0).abs() < 1e-6, "{out:?}");
        assert!((out[1][1][0] - 162.0).abs() < 1e-6, "{out:?}");
    }

    #[test]
    fn reduction_requires_reducer() {
        let d = panel(&[vec![1.0, 2.0, 3.0, 4.0, 5.0]]);
        assert!(Forecaster::Ridge { lambda: 1.0 }.fit(&d, None, 0, &Deadline::none()).is_err());
    }

    #[test]
    fn missing_values_are_rejected() {
        let r = TimeSeriesRecord::from_observations("a", &[Some(1.0), None, Some(3.0)]).unwrap();
        let d = PanelDataset::new("p", vec![r], 1, 1, vec![]).unwrap();
        assert!(matches!(
            Forecaster::Naive.fit(&d, None, 0, &Deadline::none()),
            Err(Error::MissingValues(_))
        ));
    }

    #[test]
    fn short_series_error_names_series() {
        let d = panel(&[vec![1.0; 20], vec![1.0; 5]]);
        let err = Forecaster::HoltWinters {
            alpha: None,
            beta: None,
            gamma: None,
            period: 4,
        }
        .fit(&d, None, 0, &Deadline::none())
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientLength { ref series_id, .. } if series_id == "s1"), "{err:?}");
    }

    fn all_models() -> Vec<Forecaster> {
        vec![
            Forecaster::Naive,
            Forecaster::SeasonalNaive { period: 2 },
            Forecaster::Drift,
            Forecaster::Ses { alpha: None },
            Forecaster::Holt { alpha: None, beta: None, damped: true },
            Forecaster::HoltWinters { alpha: None, beta: None, gamma: None, period: 3 },
            Forecaster::Ar { order: 2 },
            Forecaster::Ridge { lambda: 0.1 },
            Forecaster::BaggedTrees { n_trees: 4, max_depth: 4 },
            Forecaster::Mlp(MlpParams { hidden: vec![4], learning_rate: 0.01, epochs: 5, batch_size: 4 }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn fits_are_seed_deterministic(v in proptest::collection::vec(-10.0f64..10.0, 12..40)) {
            let d = panel(&[v]);
            for f in all_models() {
                let a = fc(&f, &d, 4);
                let b = fc(&f, &d, 4);
                prop_assert_eq!(a, b, "{:?}", f);
            }
        }
    }
}
