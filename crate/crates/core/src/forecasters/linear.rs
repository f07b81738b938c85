//! Least-squares models: autoregression on a single series and ridge
//! regression on reduced (tabular) data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::DesignMatrix;

/// Solves the symmetric positive (semi)definite system `a x = b`.
/// A singular system is retried once with a small diagonal load.
pub(crate) fn solve_normal_equations(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(&b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let n = a.nrows().max(1);
    let load = 1e-8 * (a.trace().abs() / n as f64).max(1e-12);
    let loaded = a + DMatrix::identity(n, n) * load;
    loaded
        .cholesky()
        .map(|c| c.solve(&b))
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numerical("singular least-squares system".into()))
}

/// Linear model `intercept + coef . x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Ridge regression with an unpenalized intercept. `lambda = 0` is ordinary
/// least squares.
pub fn fit_ridge(data: &DesignMatrix, lambda: f64) -> Result<LinearModel> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("ridge penalty {lambda} must be nonnegative")));
    }
    let n = data.len();
    if n == 0 {
        return Err(Error::InvalidArgument("ridge regression needs at least one row".into()));
    }
    let p = data.n_features();
    let x_mean: Vec<f64> = (0..p)
        .map(|j| data.rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let y_mean = data.targets.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, p, |i, j| data.rows[i][j] - x_mean[j]);
    let yc = DVector::from_iterator(n, data.targets.iter().map(|y| y - y_mean));
    let gram = xc.transpose() * &xc + DMatrix::identity(p, p) * lambda;
    let rhs = xc.transpose() * yc;
    let beta = solve_normal_equations(gram, rhs)?;
    let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
    Ok(LinearModel {
        intercept,
        coef: beta.iter().copied().collect(),
    })
}

/// Fitted AR(p): `coef[k]` multiplies `y_{t-1-k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub model: LinearModel,
    pub history: Vec<f64>,
}

impl ArModel {
    pub fn order(&self) -> usize {
        self.model.coef.len()
    }

    /// Recursive multi-step forecast.
    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        let mut hist = self.history.clone();
        let p = self.order();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let lags: Vec<f64> = (0..p).map(|k| hist[hist.len() - 1 - k]).collect();
            let y = self.model.predict(&lags);
            hist.push(y);
            out.push(y);
        }
        out
    }
}

/// Least-squares AR(p) with intercept. Needs `T >= 2p + 1`.
pub fn fit_ar(values: &[f64], order: usize) -> Result<ArModel> {
    if order == 0 {
        return Err(Error::InvalidArgument("AR order must be at least 1".into()));
    }
    if values.len() < 2 * order + 1 {
        return Err(Error::InsufficientLength {
            series_id: String::new(),
            length: values.len(),
            required: 2 * order + 1,
        });
    }
    let mut data = DesignMatrix::default();
    for t in order..values.len() {
        data.rows.push((0..order).map(|k| values[t - 1 - k]).collect());
        data.targets.push(values[t]);
    }
    let model = fit_ridge(&data, 0.0)?;
    Ok(ArModel {
        model,
        history: values[values.len() - order..].to_vec(),
    })
}
