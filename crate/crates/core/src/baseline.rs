//! L1-regularized logistic regression trained by proximal gradient descent.
//!
//! Features are standardized to zero mean and unit variance before fitting;
//! the returned weights and bias are mapped back to the original scale.

use serde::{Deserialize, Serialize};

use crate::boosting::{log_loss, sign_label};
use crate::data::Dataset;
use crate::error::{GbfsError, Result};

pub const DEFAULT_MAX_ITERS: usize = 5000;
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: f64, lambda: f64) -> Result<Self> {
        let model = LinearModel {
            weights,
            bias,
            lambda,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(GbfsError::InvalidModel("linear model has no weights".into()));
        }
        if let Some(f) = self.weights.iter().position(|w| !w.is_finite()) {
            return Err(GbfsError::InvalidModel(format!("weight {f} is not finite")));
        }
        if !self.bias.is_finite() {
            return Err(GbfsError::InvalidModel("bias is not finite".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(GbfsError::InvalidModel(format!(
                "lambda {} is not a non-negative number",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    /// Indices of non-zero weights.
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len())
            .filter(|&f| self.weights[f] != 0.0)
            .collect()
    }

    /// `wᵀx + b`.
    pub fn margin(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(GbfsError::DimensionMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias)
    }

    pub fn margins(&self, ds: &Dataset) -> Result<Vec<f64>> {
        if ds.n_features() != self.weights.len() {
            return Err(GbfsError::DimensionMismatch {
                expected: self.weights.len(),
                found: ds.n_features(),
            });
        }
        let mut margins = vec![self.bias; ds.n_samples()];
        for (f, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (m, v) in margins.iter_mut().zip(ds.column(f)) {
                *m += w * v;
            }
        }
        Ok(margins)
    }

    pub fn error_rate(&self, ds: &Dataset) -> Result<f64> {
        let margins = self.margins(ds)?;
        Ok(crate::boosting::error_rate_from_margins(ds.labels(), &margins))
    }
}

/// `sign(v)·max(|v| − t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(GbfsError::InvalidArgument(format!(
            "threshold must be non-negative, got {t}"
        )));
    }
    Ok(shrink(v, t))
}

fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `±1` by the sign of the linear score, zero mapped to `+1`.
pub fn l1lr_predict(model: &LinearModel, x: &[f64]) -> Result<f64> {
    Ok(sign_label(model.margin(x)?))
}

fn linear_margins(ds: &Dataset, w: &[f64], b: f64) -> Vec<f64> {
    let mut margins = vec![b; ds.n_samples()];
    for (f, &wf) in w.iter().enumerate() {
        if wf == 0.0 {
            continue;
        }
        for (m, v) in margins.iter_mut().zip(ds.column(f)) {
            *m += wf * v;
        }
    }
    margins
}

fn check_params(ds: &Dataset, w: &[f64]) -> Result<()> {
    if w.len() != ds.n_features() {
        return Err(GbfsError::DimensionMismatch {
            expected: ds.n_features(),
            found: w.len(),
        });
    }
    Ok(())
}

/// `Σ_i log(1 + exp(−y_i(wᵀx_i + b)))`.
pub fn smooth_loss(ds: &Dataset, w: &[f64], b: f64) -> Result<f64> {
    check_params(ds, w)?;
    Ok(log_loss(ds.labels(), &linear_margins(ds, w, b)))
}

/// Gradient of [`smooth_loss`] with respect to `w` and `b`.
pub fn smooth_gradient(ds: &Dataset, w: &[f64], b: f64) -> Result<(Vec<f64>, f64)> {
    check_params(ds, w)?;
    Ok(gradient_at(ds, &linear_margins(ds, w, b)))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn gradient_at(ds: &Dataset, margins: &[f64]) -> (Vec<f64>, f64) {
    // d/dm log(1 + exp(−y·m)) = −y·σ(−y·m)
    let r: Vec<f64> = ds
        .labels()
        .iter()
        .zip(margins)
        .map(|(&y, &m)| -y * sigmoid(-y * m))
        .collect();
    let gw = (0..ds.n_features())
        .map(|f| ds.column(f).iter().zip(&r).map(|(x, r)| x * r).sum())
        .collect();
    (gw, r.iter().sum())
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(ds: &Dataset) -> Self {
        let n = ds.n_samples() as f64;
        let mut mean = Vec::with_capacity(ds.n_features());
        let mut scale = Vec::with_capacity(ds.n_features());
        for f in 0..ds.n_features() {
            let col = ds.column(f);
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            scale.push(var.sqrt());
        }
        Standardizer { mean, scale }
    }

    /// Constant columns map to all zeros.
    fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        let columns = (0..ds.n_features())
            .map(|f| {
                let (m, s) = (self.mean[f], self.scale[f]);
                ds.column(f)
                    .iter()
                    .map(|v| if s > 0.0 { (v - m) / s } else { 0.0 })
                    .collect()
            })
            .collect();
        Dataset::new(columns, ds.labels().to_vec(), None)
    }

    fn to_original(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let mut bias = b;
        let weights = w
            .iter()
            .enumerate()
            .map(|(f, &wz)| {
                if wz == 0.0 || self.scale[f] == 0.0 {
                    return 0.0;
                }
                let wf = wz / self.scale[f];
                bias -= wf * self.mean[f];
                wf
            })
            .collect();
        (weights, bias)
    }
}

/// Smallest `λ` at which the fitted weights are all zero:
/// `max_f |Σ_i y_i z_if| / 2` over the standardized features `z`.
pub fn lambda_max(ds: &Dataset) -> Result<f64> {
    let z = Standardizer::fit(ds).transform(ds)?;
    Ok(lambda_max_standardized(&z))
}

fn lambda_max_standardized(z: &Dataset) -> f64 {
    (0..z.n_features())
        .map(|f| {
            z.column(f)
                .iter()
                .zip(z.labels())
                .map(|(v, y)| v * y)
                .sum::<f64>()
                .abs()
                / 2.0
        })
        .fold(0.0, f64::max)
}

/// `k` values spaced geometrically from `λ_max` down to `λ_max·ratio`.
pub fn lambda_grid(ds: &Dataset, k: usize, ratio: f64) -> Result<Vec<f64>> {
    if k == 0 || !(ratio > 0.0 && ratio < 1.0) {
        return Err(GbfsError::InvalidArgument(format!(
            "lambda grid needs k >= 1 and ratio in (0, 1), got k = {k}, ratio = {ratio}"
        )));
    }
    let top = lambda_max(ds)?;
    if k == 1 {
        return Ok(vec![top]);
    }
    Ok((0..k)
        .map(|i| top * ratio.powf(i as f64 / (k - 1) as f64))
        .collect())
}

fn intercept_only(labels: &[f64]) -> f64 {
    let pos = labels.iter().filter(|&&y| y > 0.0).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos > 0.0 && neg > 0.0 {
        (pos / neg).ln()
    } else {
        // No finite optimum exists for a single class.
        ((pos + 0.5) / (neg + 0.5)).ln()
    }
}

fn l1(w: &[f64]) -> f64 {
    w.iter().map(|x| x.abs()).sum()
}

/// Minimizes `Σ_i log(1 + exp(−y_i(wᵀz_i + b))) + λ·|w|₁` over standardized
/// features `z`. Stops when an accepted step lowers the objective by less
/// than `tol` or after `max_iters` steps.
pub fn l1lr_train(ds: &Dataset, lambda: f64, max_iters: usize, tol: f64) -> Result<LinearModel> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(GbfsError::InvalidArgument(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    if !(tol >= 0.0) {
        return Err(GbfsError::InvalidArgument(format!(
            "tolerance must be non-negative, got {tol}"
        )));
    }
    let d = ds.n_features();
    let standardizer = Standardizer::fit(ds);
    let z = standardizer.transform(ds)?;

    if lambda >= lambda_max_standardized(&z) {
        return LinearModel::new(vec![0.0; d], intercept_only(ds.labels()), lambda);
    }

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut margins = linear_margins(&z, &w, b);
    let mut smooth = log_loss(z.labels(), &margins);
    let mut objective = smooth;
    let mut step = 1.0 / z.n_samples() as f64;

    for iteration in 1..=max_iters {
        let (gw, gb) = gradient_at(&z, &margins);
        // Backtrack until the quadratic upper bound holds at the candidate.
        let (nw, nb, nm, ns) = loop {
            let nw: Vec<f64> = w
                .iter()
                .zip(&gw)
                .map(|(wi, gi)| shrink(wi - step * gi, step * lambda))
                .collect();
            let nb = b - step * gb;
            let nm = linear_margins(&z, &nw, nb);
            let ns = log_loss(z.labels(), &nm);
            if !ns.is_finite() {
                return Err(GbfsError::NonFiniteObjective { iteration });
            }
            let mut lin = (nb - b) * gb;
            let mut sq = (nb - b).powi(2);
            for f in 0..d {
                let delta = nw[f] - w[f];
                lin += delta * gw[f];
                sq += delta * delta;
            }
            if ns <= smooth + lin + sq / (2.0 * step) || step < 1e-20 {
                break (nw, nb, nm, ns);
            }
            step *= 0.5;
        };
        let next = ns + lambda * l1(&nw);
        if !next.is_finite() {
            return Err(GbfsError::NonFiniteObjective { iteration });
        }
        let decrease = objective - next;
        if decrease < 0.0 {
            // Round-off at the optimum; keep the better point.
            break;
        }
        w = nw;
        b = nb;
        margins = nm;
        smooth = ns;
        objective = next;
        if decrease < tol {
            break;
        }
        step *= 1.5;
    }

    let (weights, bias) = standardizer.to_original(&w, b);
    LinearModel::new(weights, bias, lambda)
}
