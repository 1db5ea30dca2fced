//! Regression oracles for outcome and variance models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A fitted prediction function.
pub trait FittedRegression: Send + Sync {
    fn predict(&self, x: &[f64]) -> f64;
}

/// Maps training data to a prediction function. Implementations must be
/// deterministic given their inputs.
pub trait RegressionOracle: Send + Sync {
    fn fit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<Box<dyn FittedRegression>>;
}

fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

struct Constant(f64);

impl FittedRegression for Constant {
    fn predict(&self, _x: &[f64]) -> f64 {
        self.0
    }
}

/// Always predicts exactly zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroRegression;

impl RegressionOracle for ZeroRegression {
    fn fit(&self, _x: &[Vec<f64>], _y: &[f64]) -> Result<Box<dyn FittedRegression>> {
        Ok(Box::new(Constant(0.0)))
    }
}

/// Predicts the training mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantMean;

impl RegressionOracle for ConstantMean {
    fn fit(&self, _x: &[Vec<f64>], y: &[f64]) -> Result<Box<dyn FittedRegression>> {
        if y.is_empty() {
            return Err(Error::Invalid("no training data".into()));
        }
        Ok(Box::new(Constant(mean(y))))
    }
}

/// Mean response of the `k` nearest training points (Euclidean distance,
/// ties by training order).
#[derive(Debug, Clone, Copy)]
pub struct KnnMean {
    pub k: usize,
}

struct KnnFit {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    k: usize,
}

impl FittedRegression for KnnFit {
    fn predict(&self, q: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = self
            .x
            .iter()
            .enumerate()
            .map(|(i, x)| (sq_dist(x, q), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let k = self.k.min(d.len());
        d[..k].iter().map(|(_, i)| self.y[*i]).sum::<f64>() / k as f64
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

impl RegressionOracle for KnnMean {
    fn fit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<Box<dyn FittedRegression>> {
        if y.is_empty() || self.k == 0 {
            return Err(Error::Invalid("knn needs k >= 1 and training data".into()));
        }
        Ok(Box::new(KnnFit {
            x: x.to_vec(),
            y: y.to_vec(),
            k: self.k,
        }))
    }
}

/// Ridge regression on standardized covariates with the penalty chosen by
/// k-fold cross-validation over a fixed grid. The intercept is unpenalized.
#[derive(Debug, Clone)]
pub struct RidgeCv {
    pub penalties: Vec<f64>,
    pub folds: usize,
}

impl Default for RidgeCv {
    fn default() -> Self {
        Self {
            penalties: (-3..=3).map(|e| 10f64.powi(e)).collect(),
            folds: 5,
        }
    }
}

struct Linear {
    intercept: f64,
    center: Vec<f64>,
    scale: Vec<f64>,
    beta: Vec<f64>,
}

impl FittedRegression for Linear {
    fn predict(&self, x: &[f64]) -> f64 {
        self.intercept
            + x.iter()
                .zip(&self.center)
                .zip(self.scale.iter().zip(&self.beta))
                .map(|((v, c), (s, b))| b * (v - c) / s)
                .sum::<f64>()
    }
}

fn ridge_fixed(x: &[Vec<f64>], y: &[f64], penalty: f64) -> Result<Linear> {
    let n = y.len();
    let p = x.first().map_or(0, Vec::len);
    let nf = n as f64;
    let center: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / nf).collect();
    let scale: Vec<f64> = (0..p)
        .map(|j| {
            let v = x.iter().map(|r| (r[j] - center[j]).powi(2)).sum::<f64>() / nf;
            if v > 0.0 { v.sqrt() } else { 1.0 }
        })
        .collect();
    let ybar = mean(y);
    let z = DMatrix::from_fn(n, p, |i, j| (x[i][j] - center[j]) / scale[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
    let a = z.transpose() * &z / nf + DMatrix::identity(p, p) * penalty;
    let b = z.transpose() * yc / nf;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Invalid("ridge system is not positive definite".into()))?;
    let beta = chol.solve(&b);
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("ridge produced non-finite coefficients".into()));
    }
    Ok(Linear {
        intercept: ybar,
        center,
        scale,
        beta: beta.iter().copied().collect(),
    })
}

impl RegressionOracle for RidgeCv {
    fn fit(&self, x: &[Vec<f64>], y: &[f64]) -> Result<Box<dyn FittedRegression>> {
        let n = y.len();
        if n < 3 || x.len() != n {
            return Err(Error::Invalid(format!("ridge needs at least 3 points, got {n}")));
        }
        if self.penalties.is_empty() || self.penalties.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Invalid("ridge penalties must be positive".into()));
        }
        let k = self.folds.clamp(2, n);
        let mut best = (f64::INFINITY, self.penalties[0]);
        for &lambda in &self.penalties {
            let mut sse = 0.0;
            for f in 0..k {
                let (mut tx, mut ty, mut vx, mut vy) = (vec![], vec![], vec![], vec![]);
                for i in 0..n {
                    if i % k == f {
                        vx.push(x[i].clone());
                        vy.push(y[i]);
                    } else {
                        tx.push(x[i].clone());
                        ty.push(y[i]);
                    }
                }
                let m = ridge_fixed(&tx, &ty, lambda)?;
                sse += vx
                    .iter()
                    .zip(&vy)
                    .map(|(xi, yi)| (m.predict(xi) - yi).powi(2))
                    .sum::<f64>();
            }
            if sse < best.0 {
                best = (sse, lambda);
            }
        }
        Ok(Box::new(ridge_fixed(x, y, best.1)?))
    }
}
