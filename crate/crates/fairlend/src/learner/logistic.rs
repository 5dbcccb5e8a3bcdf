//! L2-penalized logistic regression via Newton's method.
//!
//! Serves as a convex, closed-form-checkable baseline for the tree
//! ensemble. Categorical features are one-hot expanded (one indicator per
//! level), missing values contribute zero to every expanded column, and the
//! intercept is unpenalized. `loss_and_grad` is public so the analytic
//! gradient can be validated against finite differences.

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnType, Dataset};

use super::{resolve_features, sigmoid, LearnerError};

const MAX_NEWTON_ITERS: usize = 100;
const GRAD_TOL: f64 = 1e-8;

/// One expanded design-matrix column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogisticFeature {
    Numeric {
        name: String,
    },
    /// Indicator that column `name` equals `level`.
    Level {
        name: String,
        level: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticModel {
    pub features: Vec<LogisticFeature>,
    #[serde(with = "crate::learner::hexfloat::vec")]
    pub weights: Vec<f64>,
    #[serde(with = "crate::learner::hexfloat::scalar")]
    pub intercept: f64,
    #[serde(with = "crate::learner::hexfloat::scalar")]
    pub l2: f64,
    pub seed: u64,
}

/// Expands dataset columns into the dense design matrix (row-major) and the
/// expanded feature descriptors.
pub fn design_matrix(
    data: &Dataset,
    features: &[String],
) -> Result<(Vec<Vec<f64>>, Vec<LogisticFeature>), LearnerError> {
    let cols = resolve_features(data, features)?;
    let mut expanded = Vec::new();
    for &col in &cols {
        let spec = data.schema().column(col);
        match &spec.ty {
            ColumnType::Numeric => expanded.push(LogisticFeature::Numeric {
                name: spec.name.clone(),
            }),
            ColumnType::Categorical(levels) => {
                for level in levels {
                    expanded.push(LogisticFeature::Level {
                        name: spec.name.clone(),
                        level: level.clone(),
                    });
                }
            }
        }
    }
    let mut x = vec![vec![0.0; expanded.len()]; data.n_rows()];
    let mut j = 0;
    for &col in &cols {
        let spec = data.schema().column(col);
        match &spec.ty {
            ColumnType::Numeric => {
                let values = data.numeric(col).unwrap();
                for (row, xr) in x.iter_mut().enumerate() {
                    if !data.is_missing(col, row) {
                        xr[j] = values[row];
                    }
                }
                j += 1;
            }
            ColumnType::Categorical(levels) => {
                let values = data.categorical(col).unwrap();
                for (row, xr) in x.iter_mut().enumerate() {
                    if !data.is_missing(col, row) {
                        xr[j + values[row] as usize] = 1.0;
                    }
                }
                j += levels.len();
            }
        }
    }
    Ok((x, expanded))
}

/// Mean penalized log-loss and its gradient with respect to
/// `[intercept, weights...]`. The penalty is `l2/2 * ||w||^2 / n`, so loss
/// and gradient stay on a per-row scale.
pub fn loss_and_grad(
    x: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
    intercept: f64,
    l2: f64,
) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let d = weights.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for (xr, &yr) in x.iter().zip(y) {
        let z = intercept + xr.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>();
        let softplus = if z > 0.0 {
            z + (-z).exp().ln_1p()
        } else {
            z.exp().ln_1p()
        };
        loss += softplus - yr * z;
        let resid = sigmoid(z) - yr;
        grad[0] += resid;
        for (gj, &xj) in grad[1..].iter_mut().zip(xr) {
            *gj += resid * xj;
        }
    }
    loss /= n;
    for g in grad.iter_mut() {
        *g /= n;
    }
    for (gj, &wj) in grad[1..].iter_mut().zip(weights) {
        *gj += l2 * wj / n;
    }
    loss += l2 * weights.iter().map(|w| w * w).sum::<f64>() / (2.0 * n);
    (loss, grad)
}

/// Solves S x = b for symmetric positive-definite S via Cholesky.
fn solve_spd(mut s: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let d = b.len();
    // in-place lower-triangular factorization
    for i in 0..d {
        for j in 0..=i {
            let dot: f64 = s[i][..j].iter().zip(&s[j][..j]).map(|(a, b)| a * b).sum();
            let sum = s[i][j] - dot;
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                s[i][j] = sum.sqrt();
            } else {
                s[i][j] = sum / s[j][j];
            }
        }
    }
    for i in 0..d {
        for k in 0..i {
            b[i] -= s[i][k] * b[k];
        }
        b[i] /= s[i][i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            b[i] -= s[k][i] * b[k];
        }
        b[i] /= s[i][i];
    }
    Some(b)
}

/// Trains the logistic baseline to gradient infinity-norm <= 1e-8.
/// Deterministic: weights start at zero and every step is a Newton solve
/// with halving on loss increase. Columns are standardized internally so
/// the solve is well conditioned at any feature scale (the l2 penalty
/// therefore applies in standardized coordinates); the stored weights are
/// mapped back to raw units. The seed is recorded for provenance only.
pub fn train_logistic(
    data: &Dataset,
    features: &[String],
    l2: f64,
    seed: u64,
) -> Result<LogisticModel, LearnerError> {
    if l2.is_nan() || l2 < 0.0 {
        return Err(LearnerError::InvalidParams("l2 must be >= 0".to_string()));
    }
    let (mut x, expanded) = design_matrix(data, features)?;
    let (labels, _) = super::labels_and_base_rate(data)?;
    let n = x.len();
    let d = expanded.len();

    // standardize in place; constant columns get scale 1 and stay at zero
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let m: f64 = x.iter().map(|r| r[j]).sum::<f64>() / nf;
        let var: f64 = x.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / nf;
        mean[j] = m;
        if var > 0.0 {
            scale[j] = var.sqrt();
        }
    }
    for row in x.iter_mut() {
        for j in 0..d {
            row[j] = (row[j] - mean[j]) / scale[j];
        }
    }
    let unscale = |weights: &[f64], intercept: f64| {
        let raw_w: Vec<f64> = weights.iter().zip(&scale).map(|(w, s)| w / s).collect();
        let raw_b = intercept - raw_w.iter().zip(&mean).map(|(w, m)| w * m).sum::<f64>();
        (raw_w, raw_b)
    };

    let mut weights = vec![0.0; d];
    let mut intercept = 0.0;
    let (mut loss, mut grad) = loss_and_grad(&x, &labels, &weights, intercept, l2);

    for _ in 0..MAX_NEWTON_ITERS {
        if grad.iter().all(|g| g.abs() <= GRAD_TOL) {
            let (weights, intercept) = unscale(&weights, intercept);
            return Ok(LogisticModel {
                features: expanded,
                weights,
                intercept,
                l2,
                seed,
            });
        }
        // Hessian of the mean loss: [X 1]^T W [X 1] / n + (l2/n) I on weights,
        // with a small ridge on the full diagonal for numeric safety.
        let mut hess = vec![vec![0.0; d + 1]; d + 1];
        for (xr, _) in x.iter().zip(&labels) {
            let z = intercept + xr.iter().zip(&weights).map(|(a, w)| a * w).sum::<f64>();
            let p = sigmoid(z);
            let w = p * (1.0 - p);
            hess[0][0] += w;
            for j in 0..d {
                hess[0][j + 1] += w * xr[j];
                for k in 0..=j {
                    hess[j + 1][k + 1] += w * xr[j] * xr[k];
                }
            }
        }
        // mirror the lower triangle; an iterator form would need to borrow
        // two rows at once
        #[allow(clippy::needless_range_loop)]
        for j in 0..=d {
            for k in 0..j {
                hess[k][j] = hess[j][k];
            }
        }
        for (j, row) in hess.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v /= nf;
            }
            if j > 0 {
                row[j] += l2 / nf;
            }
            row[j] += 1e-10;
        }

        let step = solve_spd(hess, grad.clone()).ok_or(LearnerError::NonConvergence {
            iterations: MAX_NEWTON_ITERS,
        })?;

        // backtracking keeps Newton stable when far from the optimum
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial_intercept = intercept - scale * step[0];
            let trial_weights: Vec<f64> = weights
                .iter()
                .zip(&step[1..])
                .map(|(w, s)| w - scale * s)
                .collect();
            let (trial_loss, trial_grad) =
                loss_and_grad(&x, &labels, &trial_weights, trial_intercept, l2);
            if trial_loss <= loss + 1e-15 {
                intercept = trial_intercept;
                weights = trial_weights;
                loss = trial_loss;
                grad = trial_grad;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if grad.iter().all(|g| g.abs() <= GRAD_TOL) {
        let (weights, intercept) = unscale(&weights, intercept);
        return Ok(LogisticModel {
            features: expanded,
            weights,
            intercept,
            l2,
            seed,
        });
    }
    Err(LearnerError::NonConvergence {
        iterations: MAX_NEWTON_ITERS,
    })
}

impl LogisticModel {
    /// Probabilities for every dataset row, matching expanded features to
    /// columns by name and levels by string.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>, LearnerError> {
        // resolve each expanded feature once
        enum Bind {
            Num(usize),
            Ind {
                col: usize,
                level: u32,
            },
            /// level string absent from this schema: indicator always 0
            Zero,
        }
        let schema = data.schema();
        let binds: Vec<Bind> = self
            .features
            .iter()
            .map(|f| {
                let (name, level) = match f {
                    LogisticFeature::Numeric { name } => (name, None),
                    LogisticFeature::Level { name, level } => (name, Some(level)),
                };
                let col = schema.column_index(name).ok_or_else(|| {
                    LearnerError::FeatureMismatch(format!("column {name:?} not in data"))
                })?;
                match (level, &schema.column(col).ty) {
                    (None, ColumnType::Numeric) => Ok(Bind::Num(col)),
                    (Some(level), ColumnType::Categorical(levels)) => {
                        Ok(match levels.iter().position(|l| l == level) {
                            Some(i) => Bind::Ind {
                                col,
                                level: i as u32,
                            },
                            None => Bind::Zero,
                        })
                    }
                    _ => Err(LearnerError::FeatureMismatch(format!(
                        "column {name:?} type differs between model and data"
                    ))),
                }
            })
            .collect::<Result<_, _>>()?;

        let out = (0..data.n_rows())
            .map(|row| {
                let mut z = self.intercept;
                for (bind, &w) in binds.iter().zip(&self.weights) {
                    let x = match bind {
                        Bind::Num(col) => {
                            if data.is_missing(*col, row) {
                                0.0
                            } else {
                                data.numeric(*col).unwrap()[row]
                            }
                        }
                        Bind::Ind { col, level } => {
                            let hit = !data.is_missing(*col, row)
                                && data.categorical(*col).unwrap()[row] == *level;
                            if hit {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Bind::Zero => 0.0,
                    };
                    z += w * x;
                }
                sigmoid(z)
            })
            .collect();
        Ok(out)
    }
}
