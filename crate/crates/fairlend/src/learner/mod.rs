//! Deterministic, seeded gradient-boosted decision trees for binary
//! classification, plus a logistic-regression baseline used as a
//! cross-check oracle.
//!
//! The GBDT is histogram-based with leaf-wise growth: numeric features are
//! quantile-binned once per training run, categorical features use one bin
//! per level, and every boosting round fits a tree to second-order log-loss
//! gradients. Missing values are never imputed; each split learns a default
//! direction for them. Training is bit-reproducible for a fixed
//! (data, features, params) triple at any thread count: histograms are
//! accumulated per feature in ascending row order, features are reduced in
//! schema order, and all tie-breaks are explicit.

mod binning;
mod logistic;
mod tree;

pub use binning::{FeatureKind, FeatureMeta};
pub use logistic::{design_matrix, loss_and_grad, train_logistic, LogisticFeature, LogisticModel};
pub use tree::{Node, SplitCondition, Tree};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnRole, ColumnType, Dataset, Schema, Value, OTHER_LEVEL};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("target column has a single class; need both 0 and 1")]
    SingleClassTarget,
    #[error("feature list is empty")]
    EmptyFeatureSet,
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("optimizer did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("model serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl LearnerError {
    pub fn kind(&self) -> &'static str {
        match self {
            LearnerError::SingleClassTarget => "SingleClassTarget",
            LearnerError::EmptyFeatureSet => "EmptyFeatureSet",
            LearnerError::FeatureMismatch(_) => "FeatureMismatch",
            LearnerError::InvalidParams(_) => "InvalidParams",
            LearnerError::NonConvergence { .. } => "NonConvergence",
            LearnerError::Serde(_) => "SerdeError",
            LearnerError::Io(_) => "IoError",
        }
    }
}

/// Lossless f64 <-> JSON string codecs. Model files must round-trip
/// bit-exactly, so every float is written as the 16-digit hex encoding of
/// its IEEE-754 bits rather than a decimal.
pub mod hexfloat {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn encode(v: f64) -> String {
        format!("{:016x}", v.to_bits())
    }

    pub fn decode(s: &str) -> Result<f64, String> {
        if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(format!("expected 16 hex digits, got {s:?}"));
        }
        u64::from_str_radix(s, 16)
            .map(f64::from_bits)
            .map_err(|e| e.to_string())
    }

    pub mod scalar {
        use super::*;

        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            s.serialize_str(&encode(*v))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            let s = String::deserialize(d)?;
            decode(&s).map_err(serde::de::Error::custom)
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|x| encode(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            let strings = Vec::<String>::deserialize(d)?;
            strings
                .iter()
                .map(|s| decode(s).map_err(serde::de::Error::custom))
                .collect()
        }
    }
}

/// Gradient boosting hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtParams {
    pub num_trees: usize,
    #[serde(with = "crate::learner::hexfloat::scalar")]
    pub learning_rate: f64,
    pub max_leaves: usize,
    pub min_samples_leaf: usize,
    pub max_bins: usize,
    #[serde(with = "crate::learner::hexfloat::scalar")]
    pub l2_leaf_penalty: f64,
    pub seed: u64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            num_trees: 200,
            learning_rate: 0.1,
            max_leaves: 31,
            min_samples_leaf: 20,
            max_bins: 255,
            l2_leaf_penalty: 1.0,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<(), LearnerError> {
        let bad = |msg: &str| Err(LearnerError::InvalidParams(msg.to_string()));
        if self.num_trees == 0 {
            return bad("num_trees must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.max_leaves == 0 {
            return bad("max_leaves must be >= 1");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be >= 1");
        }
        if !(2..=256).contains(&self.max_bins) {
            return bad("max_bins must lie in 2..=256");
        }
        if self.l2_leaf_penalty.is_nan() || self.l2_leaf_penalty < 0.0 {
            return bad("l2_leaf_penalty must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMetadata {
    pub seed: u64,
    /// Pipeline mode the model was trained under, when applicable.
    pub mode: Option<String>,
    /// Training log-loss after each boosting round.
    #[serde(with = "crate::learner::hexfloat::vec")]
    pub train_log_loss: Vec<f64>,
}

/// A trained gradient-boosted tree ensemble.
///
/// Scores are `base_score` plus the sum of tree outputs; probabilities are
/// the logistic of that, clamped so the result is strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedModel {
    pub params: GbdtParams,
    #[serde(with = "crate::learner::hexfloat::scalar")]
    pub base_score: f64,
    pub features: Vec<FeatureMeta>,
    pub trees: Vec<Tree>,
    pub metadata: ModelMetadata,
}

/// Logistic(x), strictly inside (0, 1): inputs are clamped to +-36, beyond
/// which f64 rounding would reach exactly 0 or 1.
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-36.0, 36.0);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Resolution of one model feature against a dataset column.
enum ColBind {
    Numeric(usize),
    /// `map[dataset level] = model level`; unseen names map to "other".
    Categorical {
        col: usize,
        map: Vec<u32>,
    },
}

impl TrainedModel {
    /// Probability of Y=1 for one row. `values` follow the model's feature
    /// order; `Value::Cat` carries the model's own level index.
    pub fn predict_proba(&self, values: &[Value]) -> Result<f64, LearnerError> {
        if values.len() != self.features.len() {
            return Err(LearnerError::FeatureMismatch(format!(
                "expected {} feature values, got {}",
                self.features.len(),
                values.len()
            )));
        }
        let mut score = self.base_score;
        for tree in &self.trees {
            score += tree.output(|f| values[f]);
        }
        Ok(sigmoid(score))
    }

    /// Probabilities for every dataset row. Model features are matched to
    /// dataset columns by name; categorical levels are matched by level
    /// string with unseen levels mapped to the model's "other" level.
    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>, LearnerError> {
        let binds = self.bind(data.schema())?;
        let out = (0..data.n_rows())
            .map(|row| {
                let mut score = self.base_score;
                for tree in &self.trees {
                    score += tree.output(|f| lookup(data, &binds[f], row));
                }
                sigmoid(score)
            })
            .collect();
        Ok(out)
    }

    fn bind(&self, schema: &Schema) -> Result<Vec<ColBind>, LearnerError> {
        self.features
            .iter()
            .map(|feat| {
                let col = schema.column_index(&feat.name).ok_or_else(|| {
                    LearnerError::FeatureMismatch(format!("column {:?} not in data", feat.name))
                })?;
                match (&feat.kind, &schema.column(col).ty) {
                    (FeatureKind::Numeric { .. }, ColumnType::Numeric) => Ok(ColBind::Numeric(col)),
                    (FeatureKind::Categorical { levels }, ColumnType::Categorical(data_levels)) => {
                        let other =
                            levels
                                .iter()
                                .position(|l| l == OTHER_LEVEL)
                                .ok_or_else(|| {
                                    LearnerError::FeatureMismatch(format!(
                                        "model feature {:?} lacks an {OTHER_LEVEL:?} level",
                                        feat.name
                                    ))
                                })? as u32;
                        let map = data_levels
                            .iter()
                            .map(|dl| {
                                levels
                                    .iter()
                                    .position(|l| l == dl)
                                    .map(|i| i as u32)
                                    .unwrap_or(other)
                            })
                            .collect();
                        Ok(ColBind::Categorical { col, map })
                    }
                    _ => Err(LearnerError::FeatureMismatch(format!(
                        "column {:?} type differs between model and data",
                        feat.name
                    ))),
                }
            })
            .collect()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self, LearnerError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LearnerError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LearnerError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn lookup(data: &Dataset, bind: &ColBind, row: usize) -> Value {
    match bind {
        ColBind::Numeric(col) => {
            if data.is_missing(*col, row) {
                Value::Missing
            } else {
                Value::Num(data.numeric(*col).unwrap()[row])
            }
        }
        ColBind::Categorical { col, map } => {
            if data.is_missing(*col, row) {
                Value::Missing
            } else {
                Value::Cat(map[data.categorical(*col).unwrap()[row] as usize])
            }
        }
    }
}

/// Anything that can score a dataset into per-row default probabilities.
pub trait Scorer: Send + Sync {
    fn score_dataset(&self, data: &Dataset) -> Result<Vec<f64>, LearnerError>;
}

impl Scorer for TrainedModel {
    fn score_dataset(&self, data: &Dataset) -> Result<Vec<f64>, LearnerError> {
        self.predict_dataset(data)
    }
}

impl Scorer for LogisticModel {
    fn score_dataset(&self, data: &Dataset) -> Result<Vec<f64>, LearnerError> {
        self.predict_dataset(data)
    }
}

/// Either trained model kind behind one serialized representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum AnyModel {
    Gbdt(TrainedModel),
    Logistic(LogisticModel),
}

impl Scorer for AnyModel {
    fn score_dataset(&self, data: &Dataset) -> Result<Vec<f64>, LearnerError> {
        match self {
            AnyModel::Gbdt(m) => m.predict_dataset(data),
            AnyModel::Logistic(m) => m.predict_dataset(data),
        }
    }
}

/// Resolves feature names against the schema for training. Rejects the
/// target and columns the causal roles forbid a model from seeing.
fn resolve_features(data: &Dataset, features: &[String]) -> Result<Vec<usize>, LearnerError> {
    if features.is_empty() {
        return Err(LearnerError::EmptyFeatureSet);
    }
    let schema = data.schema();
    features
        .iter()
        .map(|name| {
            let col = schema
                .column_index(name)
                .ok_or_else(|| LearnerError::FeatureMismatch(format!("unknown column {name:?}")))?;
            match schema.column(col).role {
                ColumnRole::Target => Err(LearnerError::FeatureMismatch(format!(
                    "column {name:?} is the target"
                ))),
                ColumnRole::Excluded => Err(LearnerError::FeatureMismatch(format!(
                    "column {name:?} has role excluded"
                ))),
                _ => Ok(col),
            }
        })
        .collect()
}

/// Labels as f64 plus the base rate; errors when one class is absent.
fn labels_and_base_rate(data: &Dataset) -> Result<(Vec<f64>, f64), LearnerError> {
    let labels: Vec<f64> = data.labels().iter().map(|&y| y as f64).collect();
    let pos: f64 = labels.iter().sum();
    if pos == 0.0 || pos == labels.len() as f64 {
        return Err(LearnerError::SingleClassTarget);
    }
    let base_rate = pos / labels.len() as f64;
    Ok((labels, base_rate))
}

fn log_loss(scores: &[f64], labels: &[f64]) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            // log(1 + e^s) - y*s, computed stably for either sign of s
            let softplus = if s > 0.0 {
                s + (-s).exp().ln_1p()
            } else {
                s.exp().ln_1p()
            };
            softplus - y * s
        })
        .sum::<f64>()
        / n
}

/// Trains a gradient-boosted tree ensemble. Deterministic for a fixed
/// (data, features, params) triple at any thread count.
pub fn train(
    data: &Dataset,
    features: &[String],
    params: &GbdtParams,
) -> Result<TrainedModel, LearnerError> {
    params.validate()?;
    let cols = resolve_features(data, features)?;
    let (labels, base_rate) = labels_and_base_rate(data)?;
    let binned = binning::build(data, &cols, params.max_bins)?;

    let base_score = (base_rate / (1.0 - base_rate)).ln();
    let n = data.n_rows();
    let mut scores = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.num_trees);
    let mut train_log_loss = Vec::with_capacity(params.num_trees);
    let mut prev_loss = log_loss(&scores, &labels);

    for _ in 0..params.num_trees {
        for i in 0..n {
            let p = sigmoid(scores[i]);
            grad[i] = p - labels[i];
            hess[i] = p * (1.0 - p);
        }
        let (tree, assignments) = tree::grow(&binned, &grad, &hess, params);
        for (value, rows) in &assignments {
            for &r in rows {
                scores[r as usize] += value;
            }
        }
        let loss = log_loss(&scores, &labels);
        assert!(
            loss <= prev_loss * (1.0 + 1e-12) + 1e-12,
            "training log-loss increased: {prev_loss} -> {loss}"
        );
        prev_loss = loss;
        train_log_loss.push(loss);
        trees.push(tree);
    }

    Ok(TrainedModel {
        params: params.clone(),
        base_score,
        features: binned.features,
        trees,
        metadata: ModelMetadata {
            seed: params.seed,
            mode: None,
            train_log_loss,
        },
    })
}
