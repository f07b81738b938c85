//! The three pipeline templates (statistical, ML, DNN), their joint search
//! space, and materialization of configurations into fitted pipelines.

use serde::{Deserialize, Serialize};

use crate::deadline::Deadline;
use crate::error::{Error, Result};
use crate::forecasters::mlp::MlpParams;
use crate::forecasters::{FittedForecaster, Forecaster};
use crate::series::{Forecast, PanelDataset};
use crate::space::{ConfigSpace, Configuration, HyperParam};
use crate::transforms::{fit_transform_dataset, FittedTransform, ImputeStrategy, ScaleStrategy, Transform, WindowReducer};

pub const TEMPLATE: &str = "template";
pub const TEMPLATES: [&str; 3] = ["statistical", "ml", "dnn"];

/// The joint space over all templates, rooted at [`TEMPLATE`].
pub fn template_space() -> ConfigSpace {
    let stat = |p: HyperParam| p.when(TEMPLATE, "statistical");
    let ml = |p: HyperParam| p.when(TEMPLATE, "ml");
    let dnn = |p: HyperParam| p.when(TEMPLATE, "dnn");
    let impute = ["forward_fill", "mean", "zero"];
    ConfigSpace::new(vec![
        HyperParam::categorical(TEMPLATE, &TEMPLATES),
        stat(HyperParam::categorical("stat:impute", &["on", "off"])),
        HyperParam::categorical("stat:impute_strategy", &impute).when("stat:impute", "on"),
        stat(HyperParam::categorical("stat:detrend", &["off", "on"])),
        HyperParam::categorical("stat:detrend_degree", &["constant", "linear"]).when("stat:detrend", "on"),
        stat(HyperParam::categorical("stat:deseasonalize", &["off", "on"])),
        stat(HyperParam::categorical(
            "stat:forecaster",
            &["ses", "holt", "holt_winters", "ar", "naive", "seasonal_naive", "drift"],
        )),
        HyperParam::categorical("stat:holt_damped", &["off", "on"]).when("stat:forecaster", "holt"),
        HyperParam::int("stat:ar_order", 1, 12, false).when("stat:forecaster", "ar"),
        ml(HyperParam::categorical("ml:impute_strategy", &impute)),
        ml(HyperParam::categorical("ml:encode", &["on", "off"])),
        ml(HyperParam::categorical("ml:scale", &["standard", "minmax", "none"])),
        ml(HyperParam::int("ml:window", 1, 48, false)),
        ml(HyperParam::categorical("ml:regressor", &["ridge", "bagged_trees"])),
        HyperParam::float("ml:ridge_alpha", 1e-6, 10.0, true).when("ml:regressor", "ridge"),
        HyperParam::int("ml:trees_n", 5, 50, false).when("ml:regressor", "bagged_trees"),
        HyperParam::int("ml:trees_depth", 2, 12, false).when("ml:regressor", "bagged_trees"),
        dnn(HyperParam::categorical("dnn:impute_strategy", &impute)),
        dnn(HyperParam::categorical("dnn:scale", &["standard", "minmax"])),
        dnn(HyperParam::int("dnn:window", 1, 48, false)),
        dnn(HyperParam::int("dnn:hidden_units", 4, 64, true)),
        dnn(HyperParam::int("dnn:hidden_layers", 1, 3, false)),
        dnn(HyperParam::float("dnn:learning_rate", 1e-4, 1e-1, true)),
        dnn(HyperParam::int("dnn:epochs", 10, 200, true)),
        dnn(HyperParam::int("dnn:batch_size", 8, 128, true)),
    ])
    .expect("template space is well formed")
}

/// Default configuration of each template, in template order.
pub fn template_defaults(space: &ConfigSpace) -> Vec<Configuration> {
    TEMPLATES
        .iter()
        .map(|t| space.default_with(&[(TEMPLATE, t)]).expect("templates are reachable"))
        .collect()
}

/// Faults injected into a pipeline for robustness testing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Forecasts are replaced by NaN.
    NanForecast,
    /// The first transform fails to fit.
    TransformError,
    /// Fitting never finishes on its own and only stops at the deadline.
    Hang,
}

/// A materialized configuration: preprocessing steps and a forecaster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub transforms: Vec<Transform>,
    pub reducer: Option<WindowReducer>,
    pub forecaster: Forecaster,
}

fn impute_strategy(name: &str) -> Result<ImputeStrategy> {
    match name {
        "forward_fill" => Ok(ImputeStrategy::ForwardFill),
        "mean" => Ok(ImputeStrategy::Mean),
        "zero" => Ok(ImputeStrategy::Zero),
        other => Err(Error::InvalidConfig(format!("unknown imputation strategy `{other}`"))),
    }
}

fn scale_strategy(name: &str) -> Result<ScaleStrategy> {
    match name {
        "standard" => Ok(ScaleStrategy::Standard),
        "minmax" => Ok(ScaleStrategy::MinMax),
        "none" => Ok(ScaleStrategy::None),
        other => Err(Error::InvalidConfig(format!("unknown scaling `{other}`"))),
    }
}

fn get_str<'a>(c: &'a Configuration, name: &str) -> Result<&'a str> {
    c.get_str(name)
        .ok_or_else(|| Error::InvalidConfig(format!("missing parameter `{name}`")))
}

fn get_num(c: &Configuration, name: &str) -> Result<f64> {
    c.get_f64(name)
        .ok_or_else(|| Error::InvalidConfig(format!("missing parameter `{name}`")))
}

impl Pipeline {
    /// Builds the pipeline described by a template-space configuration.
    /// `period` is the dataset's seasonal period.
    pub fn from_config(config: &Configuration, period: usize) -> Result<Self> {
        let mut transforms = Vec::new();
        match get_str(config, TEMPLATE)? {
            "statistical" => {
                if get_str(config, "stat:impute")? == "on" {
                    transforms.push(Transform::Imputer(impute_strategy(get_str(config, "stat:impute_strategy")?)?));
                }
                if get_str(config, "stat:detrend")? == "on" {
                    let degree = u8::from(get_str(config, "stat:detrend_degree")? == "linear");
                    transforms.push(Transform::Detrender(degree));
                }
                if get_str(config, "stat:deseasonalize")? == "on" {
                    transforms.push(Transform::Deseasonalizer(period));
                }
                let forecaster = match get_str(config, "stat:forecaster")? {
                    "ses" => Forecaster::Ses { alpha: None },
                    "holt" => Forecaster::Holt {
                        alpha: None,
                        beta: None,
                        damped: get_str(config, "stat:holt_damped")? == "on",
                    },
                    "holt_winters" => Forecaster::HoltWinters {
                        alpha: None,
                        beta: None,
                        gamma: None,
                        period,
                    },
                    "ar" => Forecaster::Ar {
                        order: get_num(config, "stat:ar_order")? as usize,
                    },
                    "naive" => Forecaster::Naive,
                    "seasonal_naive" => Forecaster::SeasonalNaive { period },
                    "drift" => Forecaster::Drift,
                    other => return Err(Error::InvalidConfig(format!("unknown forecaster `{other}`"))),
                };
                Ok(Self {
                    transforms,
                    reducer: None,
                    forecaster,
                })
            }
            "ml" => {
                transforms.push(Transform::Imputer(impute_strategy(get_str(config, "ml:impute_strategy")?)?));
                if get_str(config, "ml:encode")? == "on" {
                    transforms.push(Transform::OrdinalEncoder);
                }
                transforms.push(Transform::Scaler(scale_strategy(get_str(config, "ml:scale")?)?));
                let forecaster = match get_str(config, "ml:regressor")? {
                    "ridge" => Forecaster::Ridge {
                        lambda: get_num(config, "ml:ridge_alpha")?,
                    },
                    "bagged_trees" => Forecaster::BaggedTrees {
                        n_trees: get_num(config, "ml:trees_n")? as usize,
                        max_depth: get_num(config, "ml:trees_depth")? as usize,
                    },
                    other => return Err(Error::InvalidConfig(format!("unknown regressor `{other}`"))),
                };
                Ok(Self {
                    transforms,
                    reducer: Some(WindowReducer {
                        window: get_num(config, "ml:window")? as usize,
                    }),
                    forecaster,
                })
            }
            "dnn" => {
                transforms.push(Transform::Imputer(impute_strategy(get_str(config, "dnn:impute_strategy")?)?));
                transforms.push(Transform::Scaler(scale_strategy(get_str(config, "dnn:scale")?)?));
                let units = get_num(config, "dnn:hidden_units")? as usize;
                let layers = get_num(config, "dnn:hidden_layers")? as usize;
                Ok(Self {
                    transforms,
                    reducer: Some(WindowReducer {
                        window: get_num(config, "dnn:window")? as usize,
                    }),
                    forecaster: Forecaster::Mlp(MlpParams {
                        hidden: vec![units; layers],
                        learning_rate: get_num(config, "dnn:learning_rate")?,
                        epochs: get_num(config, "dnn:epochs")? as usize,
                        batch_size: get_num(config, "dnn:batch_size")? as usize,
                    }),
                })
            }
            other => Err(Error::InvalidConfig(format!("unknown template `{other}`"))),
        }
    }

    pub fn fit(&self, train: &PanelDataset, seed: u64, deadline: &Deadline) -> Result<FittedPipeline> {
        self.fit_with_fault(train, seed, deadline, None)
    }

    /// [`Pipeline::fit`] with an optional injected fault.
    pub fn fit_with_fault(
        &self,
        train: &PanelDataset,
        seed: u64,
        deadline: &Deadline,
        fault: Option<Fault>,
    ) -> Result<FittedPipeline> {
        if fault == Some(Fault::TransformError) {
            return Err(Error::InjectedFault("transform failed to fit".into()));
        }
        if fault == Some(Fault::Hang) {
            if deadline.instant().is_none() {
                return Err(Error::InjectedFault("hang requested without a deadline".into()));
            }
            loop {
                deadline.check()?;
                std::thread::sleep(std::time::Duration::from_millis(5));
            }
        }
        let mut data = train.clone();
        let mut fitted_transforms = Vec::with_capacity(self.transforms.len());
        for t in &self.transforms {
            deadline.check()?;
            let (next, fitted) = fit_transform_dataset(*t, &data)?;
            data = next;
            fitted_transforms.push(fitted);
        }
        let forecaster = self.forecaster.fit(&data, self.reducer, seed, deadline)?;
        Ok(FittedPipeline {
            transforms: fitted_transforms,
            forecaster,
            nan_output: fault == Some(Fault::NanForecast),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    transforms: Vec<FittedTransform>,
    forecaster: FittedForecaster,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    nan_output: bool,
}

impl FittedPipeline {
    /// Forecasts on the original scale, one entry per training series.
    pub fn predict(&self, horizon: usize) -> Result<Vec<Forecast>> {
        let mut out = self.forecaster.predict(horizon)?;
        for t in self.transforms.iter().rev() {
            t.inverse_forecasts(&mut out)?;
        }
        if self.nan_output {
            for v in out.iter_mut().flatten().flatten() {
                *v = f64::NAN;
            }
        }
        if out.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("forecast contains non-finite values".into()));
        }
        Ok(out)
    }
}
