//! Ranking metrics, the multi-seed experiment harness, and the
//! discrimination comparison across model modes.
//!
//! AUC is computed by midrank Mann-Whitney and cross-checked against an
//! O(n^2) pair-counting oracle; both routes build the identical exact
//! integer numerator, so they agree bit for bit, not just within
//! tolerance. Significance between modes is a two-sided paired t-test
//! matched by seed, with a sign-flip permutation test as an independent
//! check.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dataset::{self, ColumnRole, Dataset, DatasetError};
use crate::learner::{GbdtParams, LearnerError};
use crate::pipeline::{decide, train_pipeline, DecisionPolicy, ModelMode, PipelineError};
use crate::scm::{sample, ScmError, ScmSpec};
use crate::screening::{screen_proxies, GroupSpec, ScreeningError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need both classes present{}", level_suffix(.level))]
    SingleClass { level: Option<String> },
    #[error("paired inputs differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least two paired samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("unknown level {level:?} in column {column:?}")]
    UnknownLevel { column: String, level: String },
    #[error("unknown or non-categorical group column {0:?}")]
    BadGroupColumn(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Screening(#[from] ScreeningError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("serialization failed: {0}")]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn level_suffix(level: &Option<String>) -> String {
    match level {
        Some(l) => format!(" in group level {l:?}"),
        None => String::new(),
    }
}

impl EvalError {
    pub fn kind(&self) -> &'static str {
        match self {
            EvalError::SingleClass { .. } => "SingleClass",
            EvalError::LengthMismatch { .. } => "LengthMismatch",
            EvalError::TooFewSamples(_) => "TooFewSamples",
            EvalError::InvalidConfig(_) => "InvalidConfig",
            EvalError::UnknownLevel { .. } => "UnknownLevel",
            EvalError::BadGroupColumn(_) => "BadGroupColumn",
            EvalError::Dataset(e) => e.kind(),
            EvalError::Scm(e) => e.kind(),
            EvalError::Screening(e) => e.kind(),
            EvalError::Learner(e) => e.kind(),
            EvalError::Pipeline(e) => e.kind(),
            EvalError::Serde(_) => "SerdeError",
            EvalError::Io(_) => "IoError",
        }
    }
}

/// Exact doubled Mann-Whitney numerator: 2*wins + ties over all
/// positive/negative pairs, via midranks in O(n log n). Stays an exact
/// integer, so the fast path and the pair-counting oracle divide the same
/// two numbers. Scores are ordered by `total_cmp`.
fn mann_whitney_num2(scores: &[f64], labels: &[u8]) -> Result<(u64, u64, u64), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l != 0).count() as u64;
    let n_neg = n as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass { level: None });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Doubled rank sum of positives; midrank of a tie block spanning
    // 1-based ranks lo..=hi is (lo + hi) / 2, so its double is lo + hi.
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[idx[j]].total_cmp(&scores[idx[i]]) == std::cmp::Ordering::Equal {
            j += 1;
        }
        let mid2 = (i + 1 + j) as u64;
        let pos_in_block = idx[i..j].iter().filter(|&&t| labels[t] != 0).count() as u64;
        rank_sum2 += mid2 * pos_in_block;
        i = j;
    }
    Ok((rank_sum2 - n_pos * (n_pos + 1), n_pos, n_neg))
}

/// Area under the ROC curve: the probability a random positive outscores a
/// random negative, ties counted half. Errors when a class is absent.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    let (num2, n_pos, n_neg) = mann_whitney_num2(scores, labels)?;
    Ok(num2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// O(n^2) pair-counting oracle for [`auc`]: walks every positive/negative
/// pair explicitly. Exactly equal to `auc` on any input.
pub fn pair_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            left: scores.len(),
            right: labels.len(),
        });
    }
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l != 0)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::SingleClass { level: None });
    }
    let mut num2: u64 = 0;
    for &p in &pos {
        for &q in &neg {
            match p.total_cmp(&q) {
                std::cmp::Ordering::Greater => num2 += 2,
                std::cmp::Ordering::Equal => num2 += 1,
                std::cmp::Ordering::Less => {}
            }
        }
    }
    Ok(num2 as f64 / (2.0 * pos.len() as f64 * neg.len() as f64))
}

/// [`auc`] restricted to rows whose group equals `level`.
pub fn group_auc(
    scores: &[f64],
    labels: &[u8],
    groups: &[u32],
    level: u32,
) -> Result<f64, EvalError> {
    if scores.len() != labels.len() || scores.len() != groups.len() {
        return Err(EvalError::LengthMismatch {
            left: scores.len(),
            right: groups.len(),
        });
    }
    let mut s = Vec::new();
    let mut l = Vec::new();
    for i in 0..scores.len() {
        if groups[i] == level {
            s.push(scores[i]);
            l.push(labels[i]);
        }
    }
    auc(&s, &l).map_err(|e| match e {
        EvalError::SingleClass { .. } => EvalError::SingleClass {
            level: Some(level.to_string()),
        },
        other => other,
    })
}

/// Two-sided paired t-test matched by position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    /// Absent when the differences have zero variance.
    pub t_statistic: Option<f64>,
    pub p_value: f64,
    pub mean_difference: f64,
    /// Zero-variance differences: p is 1 for identical inputs and 0 for a
    /// constant nonzero shift, neither from the t distribution.
    pub degenerate: bool,
}

pub fn significance(a: &[f64], b: &[f64]) -> Result<Significance, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Ok(Significance {
            t_statistic: None,
            p_value: if mean == 0.0 { 1.0 } else { 0.0 },
            mean_difference: mean,
            degenerate: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df >= 1");
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(Significance {
        t_statistic: Some(t),
        p_value: p,
        mean_difference: mean,
        degenerate: false,
    })
}

/// Sign-flip permutation test on paired differences; the independent check
/// on [`significance`]. Add-one smoothed: p = (hits + 1) / (resamples + 1).
pub fn permutation_significance(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let observed = (d.iter().sum::<f64>() / n as f64).abs();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..resamples {
        let m: f64 = d
            .iter()
            .map(|&x| if rng.random::<bool>() { x } else { -x })
            .sum::<f64>()
            / n as f64;
        if m.abs() >= observed {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (resamples + 1) as f64)
}

/// Where the experiment's rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    /// A fresh draw from the generator for every seed.
    Scm { spec: ScmSpec, n_rows: usize },
    /// A fixed prepared table; only the split varies with the seed.
    Csv { schema: PathBuf, data: PathBuf },
}

/// Boosting hyperparameters, one set per mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeParams {
    pub awareness: GbdtParams,
    pub unawareness: GbdtParams,
    pub counterfactual: GbdtParams,
}

impl Default for ModeParams {
    fn default() -> Self {
        ModeParams::uniform(GbdtParams::default())
    }
}

impl ModeParams {
    pub fn uniform(params: GbdtParams) -> Self {
        ModeParams {
            awareness: params.clone(),
            unawareness: params.clone(),
            counterfactual: params,
        }
    }

    pub fn for_mode(&self, mode: ModelMode) -> &GbdtParams {
        match mode {
            ModelMode::Awareness => &self.awareness,
            ModelMode::Unawareness => &self.unawareness,
            ModelMode::Counterfactual => &self.counterfactual,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (0..30).collect()
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_cv_folds() -> usize {
    5
}

fn default_screen_threshold() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: DataSource,
    #[serde(default)]
    pub params: ModeParams,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// In-training k-fold cross-validation diagnostic; 0 disables it.
    /// Reported AUCs always come from the held-out split either way.
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    pub group_column: String,
    pub protected_level: String,
    pub reference_level: String,
    /// Levels whose per-group metrics are reported; empty means the
    /// protected and reference levels.
    #[serde(default)]
    pub report_levels: Vec<String>,
    #[serde(default = "default_screen_threshold")]
    pub screen_threshold: f64,
    #[serde(default)]
    pub policy: DecisionPolicy,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |msg: String| Err(EvalError::InvalidConfig(msg));
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".to_string());
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return bad("seeds must be distinct".to_string());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            ));
        }
        if self.cv_folds == 1 {
            return bad("cv_folds must be 0 (disabled) or at least 2".to_string());
        }
        if let DataSource::Scm { n_rows, .. } = &self.source {
            if *n_rows < 10 {
                return bad(format!("n_rows {n_rows} is too small to split"));
            }
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// The group levels that get per-level metrics.
    fn effective_report_levels(&self) -> Vec<String> {
        if !self.report_levels.is_empty() {
            return self.report_levels.clone();
        }
        let mut levels = vec![self.protected_level.clone()];
        if self.reference_level != self.protected_level {
            levels.push(self.reference_level.clone());
        }
        levels
    }
}

/// One mode's metrics for one seed. AUCs and approval rates come from the
/// held-out test rows; `cv_auc` is the in-training cross-validation mean,
/// present only when the config enables folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeOutcome {
    pub auc: f64,
    pub group_auc: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cv_auc: Option<f64>,
    pub approval_rate: f64,
    pub group_approval_rate: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub modes: BTreeMap<ModelMode, ModeOutcome>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStat {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for one seed.
    pub sd: f64,
}

fn aggregate(values: &[f64]) -> AggregateStat {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n < 2 {
        0.0
    } else {
        (values.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    AggregateStat { mean, sd }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub auc: AggregateStat,
    pub group_auc: BTreeMap<String, AggregateStat>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cv_auc: Option<AggregateStat>,
}

/// Matched-seed comparison of two modes; positive mean difference means
/// the first mode scored higher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSignificance {
    pub modes: (ModelMode, ModelMode),
    pub overall: Significance,
    pub per_level: BTreeMap<String, Significance>,
}

/// Per-mode discrimination metrics, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDiscrimination {
    pub mode: ModelMode,
    pub overall_auc: f64,
    pub approval_rate: BTreeMap<String, f64>,
    /// Protected approval rate over reference approval rate; absent when
    /// the reference rate is zero.
    pub adverse_impact_ratio: Option<f64>,
    /// Reference-level AUC minus the level's AUC; positive means the model
    /// ranks that level worse than the reference group.
    pub auc_gap: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Declaration {
    pub better: ModelMode,
    pub than: ModelMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationReport {
    pub threshold: f64,
    pub protected_level: String,
    pub reference_level: String,
    pub modes: Vec<ModeDiscrimination>,
    /// Pairs where the first mode's adverse-impact ratio is strictly
    /// closer to 1 and its overall AUC is no worse.
    pub less_discriminatory: Vec<Declaration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Sorted by seed; the source table every aggregate derives from.
    pub seeds: Vec<SeedRecord>,
    pub aggregates: BTreeMap<ModelMode, ModeAggregate>,
    pub significance: Vec<PairwiseSignificance>,
    pub discrimination: DiscriminationReport,
}

/// Builds the averaged discrimination table and the "less discriminatory
/// than" declarations from the per-seed records.
pub fn discrimination_report(
    seeds: &[SeedRecord],
    protected_level: &str,
    reference_level: &str,
    policy: &DecisionPolicy,
) -> DiscriminationReport {
    let mut modes = Vec::new();
    for mode in ModelMode::ALL {
        let outcomes: Vec<&ModeOutcome> = seeds.iter().filter_map(|s| s.modes.get(&mode)).collect();
        if outcomes.is_empty() {
            continue;
        }
        let overall_auc = aggregate(&outcomes.iter().map(|o| o.auc).collect::<Vec<_>>()).mean;
        let mut approval_rate = BTreeMap::new();
        let mut auc_gap = BTreeMap::new();
        let levels: BTreeSet<&String> = outcomes
            .iter()
            .flat_map(|o| o.group_approval_rate.keys())
            .collect();
        for level in levels {
            let rates: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| o.group_approval_rate.get(level))
                .copied()
                .collect();
            approval_rate.insert(level.clone(), aggregate(&rates).mean);
        }
        let auc_levels: BTreeSet<&String> =
            outcomes.iter().flat_map(|o| o.group_auc.keys()).collect();
        let reference_auc = auc_levels.contains(&reference_level.to_string()).then(|| {
            let vals: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| o.group_auc.get(reference_level))
                .copied()
                .collect();
            aggregate(&vals).mean
        });
        for level in auc_levels {
            let vals: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| o.group_auc.get(level))
                .copied()
                .collect();
            if let Some(ref_auc) = reference_auc {
                auc_gap.insert(level.clone(), ref_auc - aggregate(&vals).mean);
            }
        }
        let adverse_impact_ratio = match (
            approval_rate.get(protected_level),
            approval_rate.get(reference_level),
        ) {
            (Some(&p), Some(&r)) if r > 0.0 => Some(p / r),
            (Some(&p), Some(&r)) if r == 0.0 && p == 0.0 => Some(1.0),
            _ => None,
        };
        modes.push(ModeDiscrimination {
            mode,
            overall_auc,
            approval_rate,
            adverse_impact_ratio,
            auc_gap,
        });
    }

    let mut less_discriminatory = Vec::new();
    for m in &modes {
        for m2 in &modes {
            if m.mode == m2.mode {
                continue;
            }
            let (Some(air), Some(air2)) = (m.adverse_impact_ratio, m2.adverse_impact_ratio) else {
                continue;
            };
            if (air - 1.0).abs() < (air2 - 1.0).abs() && m.overall_auc >= m2.overall_auc {
                less_discriminatory.push(Declaration {
                    better: m.mode,
                    than: m2.mode,
                });
            }
        }
    }

    DiscriminationReport {
        threshold: policy.threshold,
        protected_level: protected_level.to_string(),
        reference_level: reference_level.to_string(),
        modes,
        less_discriminatory,
    }
}

/// Resolves the report levels to categorical level indices.
fn resolve_levels(
    data: &Dataset,
    column: &str,
    names: &[String],
) -> Result<(usize, Vec<(String, u32)>), EvalError> {
    let col = data
        .schema()
        .column_index(column)
        .ok_or_else(|| EvalError::BadGroupColumn(column.to_string()))?;
    let spec = &data.schema().columns()[col];
    let levels = spec
        .ty
        .levels()
        .ok_or_else(|| EvalError::BadGroupColumn(column.to_string()))?;
    let mut resolved = Vec::new();
    for name in names {
        let idx = levels
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| EvalError::UnknownLevel {
                column: column.to_string(),
                level: name.clone(),
            })?;
        resolved.push((name.clone(), idx as u32));
    }
    Ok((col, resolved))
}

struct SeedContext<'a> {
    config: &'a ExperimentConfig,
    levels: &'a [String],
    base: Option<&'a Dataset>,
}

fn run_seed(ctx: &SeedContext, seed: u64) -> Result<SeedRecord, EvalError> {
    let config = ctx.config;
    let sampled;
    let data: &Dataset = match ctx.base {
        Some(d) => d,
        None => {
            let DataSource::Scm { spec, n_rows } = &config.source else {
                unreachable!()
            };
            sampled = sample(spec, *n_rows, seed)?;
            &sampled.data
        }
    };
    let (train, test) = dataset::split(data, config.test_fraction, seed)?;
    let group = GroupSpec::new(&config.group_column, &config.protected_level);
    let screening = screen_proxies(&train, &group, config.screen_threshold)?;

    let labels = test.labels();
    let (gcol, level_ids) = resolve_levels(&test, &config.group_column, ctx.levels)?;
    let raw_groups = test.categorical(gcol).expect("group column is categorical");
    let missing = test.missing_mask(gcol);
    // Missing group values match no reported level.
    let groups: Vec<u32> = raw_groups
        .iter()
        .zip(missing)
        .map(|(&g, &miss)| if miss { u32::MAX } else { g })
        .collect();

    let folds = if config.cv_folds >= 2 {
        Some(dataset::kfold(&train, config.cv_folds, seed)?)
    } else {
        None
    };

    let mut modes = BTreeMap::new();
    for mode in ModelMode::ALL {
        let params = config.params.for_mode(mode);
        let model = train_pipeline(&train, mode, params, Some(&screening))?;
        let scores = model.score_dataset(&test, &config.policy)?;

        let overall = auc(&scores, &labels)?;
        let mut per_group = BTreeMap::new();
        for (name, id) in &level_ids {
            let value = group_auc(&scores, &labels, &groups, *id).map_err(|e| match e {
                EvalError::SingleClass { .. } => EvalError::SingleClass {
                    level: Some(name.clone()),
                },
                other => other,
            })?;
            per_group.insert(name.clone(), value);
        }

        let approvals: Vec<bool> = scores.iter().map(|&s| decide(s, &config.policy)).collect();
        let approval_rate =
            approvals.iter().filter(|&&a| a).count() as f64 / approvals.len() as f64;
        let mut group_approval_rate = BTreeMap::new();
        for (name, id) in &level_ids {
            let mut rows = 0usize;
            let mut approved = 0usize;
            for (i, &g) in groups.iter().enumerate() {
                if g == *id {
                    rows += 1;
                    approved += usize::from(approvals[i]);
                }
            }
            if rows > 0 {
                group_approval_rate.insert(name.clone(), approved as f64 / rows as f64);
            }
        }

        // In-training diagnostic: refit on k-1 folds, score the held fold.
        // The proxy screen from the full training split is reused; folds
        // only re-estimate the learner, not the feature policy.
        let cv_auc = match &folds {
            None => None,
            Some(folds) => {
                let mut fold_aucs = Vec::with_capacity(folds.len());
                for (fit_idx, val_idx) in folds {
                    let fit = train.select_rows(fit_idx)?;
                    let val = train.select_rows(val_idx)?;
                    let fold_model = train_pipeline(&fit, mode, params, Some(&screening))?;
                    let val_scores = fold_model.score_dataset(&val, &config.policy)?;
                    fold_aucs.push(auc(&val_scores, &val.labels())?);
                }
                Some(fold_aucs.iter().sum::<f64>() / fold_aucs.len() as f64)
            }
        };

        modes.insert(
            mode,
            ModeOutcome {
                auc: overall,
                group_auc: per_group,
                cv_auc,
                approval_rate,
                group_approval_rate,
            },
        );
    }
    Ok(SeedRecord { seed, modes })
}

/// Runs the full protocol: per seed, split, screen the training rows,
/// train all three modes, and score the held-out rows; then aggregate,
/// test significance pairwise, and build the discrimination comparison.
/// Deterministic for a given config at any thread count.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult, EvalError> {
    config.validate()?;
    let base: Option<Dataset> = match &config.source {
        DataSource::Csv { schema, data } => {
            let schema: crate::dataset::Schema =
                serde_json::from_str(&std::fs::read_to_string(schema)?)?;
            Some(dataset::load_csv(data, &schema)?)
        }
        DataSource::Scm { .. } => None,
    };
    let levels = config.effective_report_levels();
    // Validate the group column and levels up front on a cheap draw.
    {
        let probe;
        let data = match &base {
            Some(d) => d,
            None => {
                let DataSource::Scm { spec, .. } = &config.source else {
                    unreachable!()
                };
                probe = sample(spec, 2, 0)?;
                &probe.data
            }
        };
        let mut check = levels.clone();
        for extra in [&config.protected_level, &config.reference_level] {
            if !check.contains(extra) {
                check.push(extra.clone());
            }
        }
        resolve_levels(data, &config.group_column, &check)?;
        let gcol = data
            .schema()
            .column_index(&config.group_column)
            .expect("resolved");
        if data.schema().columns()[gcol].role != ColumnRole::Protected {
            return Err(EvalError::BadGroupColumn(format!(
                "{} does not have the protected role",
                config.group_column
            )));
        }
    }

    let ctx = SeedContext {
        config,
        levels: &levels,
        base: base.as_ref(),
    };
    let mut seeds: Vec<SeedRecord> = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(&ctx, seed))
        .collect::<Result<_, _>>()?;
    seeds.sort_by_key(|r| r.seed);

    let mut aggregates = BTreeMap::new();
    for mode in ModelMode::ALL {
        let outcomes: Vec<&ModeOutcome> = seeds.iter().map(|s| &s.modes[&mode]).collect();
        let auc = aggregate(&outcomes.iter().map(|o| o.auc).collect::<Vec<_>>());
        let mut group_auc = BTreeMap::new();
        for level in &levels {
            let vals: Vec<f64> = outcomes
                .iter()
                .filter_map(|o| o.group_auc.get(level))
                .copied()
                .collect();
            if !vals.is_empty() {
                group_auc.insert(level.clone(), aggregate(&vals));
            }
        }
        let cv: Vec<f64> = outcomes.iter().filter_map(|o| o.cv_auc).collect();
        let cv_auc = (cv.len() == outcomes.len()).then(|| aggregate(&cv));
        aggregates.insert(
            mode,
            ModeAggregate {
                auc,
                group_auc,
                cv_auc,
            },
        );
    }

    // Matched-seed tests need at least two seeds; a single-seed run just
    // leaves the list empty.
    let pairs: &[(ModelMode, ModelMode)] = if seeds.len() < 2 {
        &[]
    } else {
        &[
            (ModelMode::Awareness, ModelMode::Unawareness),
            (ModelMode::Awareness, ModelMode::Counterfactual),
            (ModelMode::Counterfactual, ModelMode::Unawareness),
        ]
    };
    let mut sig = Vec::new();
    for &(m1, m2) in pairs {
        let a: Vec<f64> = seeds.iter().map(|s| s.modes[&m1].auc).collect();
        let b: Vec<f64> = seeds.iter().map(|s| s.modes[&m2].auc).collect();
        let overall = significance(&a, &b)?;
        let mut per_level = BTreeMap::new();
        for level in &levels {
            let a: Vec<f64> = seeds
                .iter()
                .filter_map(|s| s.modes[&m1].group_auc.get(level))
                .copied()
                .collect();
            let b: Vec<f64> = seeds
                .iter()
                .filter_map(|s| s.modes[&m2].group_auc.get(level))
                .copied()
                .collect();
            if a.len() == seeds.len() && b.len() == seeds.len() {
                per_level.insert(level.clone(), significance(&a, &b)?);
            }
        }
        sig.push(PairwiseSignificance {
            modes: (m1, m2),
            overall,
            per_level,
        });
    }

    let discrimination = discrimination_report(
        &seeds,
        &config.protected_level,
        &config.reference_level,
        &config.policy,
    );

    Ok(ExperimentResult {
        config: config.clone(),
        seeds,
        aggregates,
        significance: sig,
        discrimination,
    })
}

impl ExperimentResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serialization cannot fail")
    }

    pub fn from_json(json: &str) -> Result<Self, EvalError> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Largest absolute difference between stored aggregates and a fresh
    /// recomputation from the per-seed table.
    pub fn aggregate_drift(&self) -> f64 {
        let mut drift: f64 = 0.0;
        for (mode, agg) in &self.aggregates {
            let outcomes: Vec<&ModeOutcome> = self
                .seeds
                .iter()
                .filter_map(|s| s.modes.get(mode))
                .collect();
            let fresh = aggregate(&outcomes.iter().map(|o| o.auc).collect::<Vec<_>>());
            drift = drift.max((fresh.mean - agg.auc.mean).abs());
            drift = drift.max((fresh.sd - agg.auc.sd).abs());
            for (level, stat) in &agg.group_auc {
                let vals: Vec<f64> = outcomes
                    .iter()
                    .filter_map(|o| o.group_auc.get(level))
                    .copied()
                    .collect();
                let fresh = aggregate(&vals);
                drift = drift.max((fresh.mean - stat.mean).abs());
                drift = drift.max((fresh.sd - stat.sd).abs());
            }
        }
        drift
    }

    /// Plain-text table: overall and per-level mean AUC for each mode,
    /// with significance and discrimination footers.
    pub fn render_table(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let modes = ModelMode::ALL;
        let n = self.seeds.len();
        writeln!(out, "AUC, held-out test, mean (sd) over {n} seed(s)").unwrap();
        write!(out, "{:<12}", "group").unwrap();
        for mode in modes {
            write!(out, "  {:>22}", mode.name()).unwrap();
        }
        out.push('\n');
        let cell = |stat: &AggregateStat| format!("{:.4} ({:.4})", stat.mean, stat.sd);
        write!(out, "{:<12}", "overall").unwrap();
        for mode in modes {
            write!(out, "  {:>22}", cell(&self.aggregates[&mode].auc)).unwrap();
        }
        out.push('\n');
        for level in self.aggregates[&modes[0]].group_auc.keys() {
            write!(out, "{:<12}", level).unwrap();
            for mode in modes {
                let text = self.aggregates[&mode]
                    .group_auc
                    .get(level)
                    .map(&cell)
                    .unwrap_or_else(|| "-".to_string());
                write!(out, "  {:>22}", text).unwrap();
            }
            out.push('\n');
        }
        if self.aggregates.values().all(|a| a.cv_auc.is_some()) {
            writeln!(
                out,
                "\nAUC, {}-fold in-training cross-validation mean",
                self.config.cv_folds
            )
            .unwrap();
            write!(out, "{:<12}", "overall").unwrap();
            for mode in modes {
                let stat = self.aggregates[&mode].cv_auc.as_ref().unwrap();
                write!(out, "  {:>22}", cell(stat)).unwrap();
            }
            out.push('\n');
        }
        writeln!(out, "\nPaired t-tests on overall AUC").unwrap();
        for s in &self.significance {
            writeln!(
                out,
                "  {} vs {}: mean diff {:+.5}, p = {:.5}{}",
                s.modes.0.name(),
                s.modes.1.name(),
                s.overall.mean_difference,
                s.overall.p_value,
                if s.overall.degenerate {
                    " (degenerate variance)"
                } else {
                    ""
                }
            )
            .unwrap();
        }
        writeln!(
            out,
            "\nApproval rates at threshold {} (adverse-impact ratio {} / {})",
            self.discrimination.threshold,
            self.discrimination.protected_level,
            self.discrimination.reference_level
        )
        .unwrap();
        for m in &self.discrimination.modes {
            let air = m
                .adverse_impact_ratio
                .map(|r| format!("{r:.4}"))
                .unwrap_or_else(|| "n/a".to_string());
            let rates: Vec<String> = m
                .approval_rate
                .iter()
                .map(|(level, rate)| format!("{level}: {rate:.4}"))
                .collect();
            writeln!(
                out,
                "  {:<15} {}  AIR {}",
                m.mode.name(),
                rates.join("  "),
                air
            )
            .unwrap();
        }
        for d in &self.discrimination.less_discriminatory {
            writeln!(
                out,
                "  {} is less discriminatory than {}",
                d.better.name(),
                d.than.name()
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking_scores_one() {
        assert_eq!(auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert_eq!(pair_auc(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
    }

    #[test]
    fn all_ties_score_half() {
        assert_eq!(auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(pair_auc(&[0.4; 6], &[1, 0, 1, 0, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn interleaved_ranking_scores_three_quarters() {
        let scores = [0.2, 0.4, 0.6, 0.8];
        let labels = [0, 1, 0, 1];
        assert_eq!(auc(&scores, &labels).unwrap(), 0.75);
        assert_eq!(pair_auc(&scores, &labels).unwrap(), 0.75);
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert_eq!(auc(&[0.1, 0.2], &[1, 1]).unwrap_err().kind(), "SingleClass");
        assert_eq!(auc(&[0.1, 0.2], &[0, 0]).unwrap_err().kind(), "SingleClass");
        assert_eq!(auc(&[0.1], &[0, 1]).unwrap_err().kind(), "LengthMismatch");
        assert_eq!(
            pair_auc(&[0.1, 0.2], &[1, 1]).unwrap_err().kind(),
            "SingleClass"
        );
    }

    fn random_instance(rng: &mut ChaCha12Rng, n: usize, distinct: usize) -> (Vec<f64>, Vec<u8>) {
        // Few distinct score values force heavy ties.
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(0..distinct) as f64) / distinct as f64)
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
        labels[0] = 1;
        labels[1] = 0;
        (scores, labels)
    }

    #[test]
    fn fast_auc_equals_pair_counting_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.random_range(2..200);
            let distinct = rng.random_range(1..8);
            let (scores, labels) = random_instance(&mut rng, n, distinct);
            let fast = auc(&scores, &labels).unwrap();
            let slow = pair_auc(&scores, &labels).unwrap();
            assert_eq!(fast.to_bits(), slow.to_bits(), "n={n} distinct={distinct}");
        }
    }

    #[test]
    fn auc_is_invariant_under_increasing_transforms() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let (scores, labels) = random_instance(&mut rng, 300, 10);
        let base = auc(&scores, &labels).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() - 7.0).collect();
        assert_eq!(auc(&transformed, &labels).unwrap(), base);
    }

    #[test]
    fn label_flip_complements_auc_without_ties() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let scores: Vec<f64> = (0..101)
            .map(|i| i as f64 + rng.random::<f64>() * 0.5)
            .collect();
        let labels: Vec<u8> = (0..101).map(|_| u8::from(rng.random::<bool>())).collect();
        let flipped: Vec<u8> = labels.iter().map(|&l| 1 - l).collect();
        let a = auc(&scores, &labels).unwrap();
        let b = auc(&scores, &flipped).unwrap();
        assert!((a + b - 1.0).abs() < 1e-15, "a={a} b={b}");
    }

    #[test]
    fn group_auc_restricts_to_the_level() {
        let scores = [0.9, 0.1, 0.8, 0.3, 0.7, 0.2];
        let labels = [1, 0, 0, 1, 1, 0];
        let groups = [0, 0, 1, 1, 1, 1];
        // Single-level data equals the overall statistic.
        let all = [0u32; 6];
        assert_eq!(
            group_auc(&scores, &labels, &all, 0).unwrap(),
            auc(&scores, &labels).unwrap()
        );
        // Restriction matches the oracle on the filtered rows.
        let expect = pair_auc(&[0.8, 0.3, 0.7, 0.2], &[0, 1, 1, 0]).unwrap();
        assert_eq!(group_auc(&scores, &labels, &groups, 1).unwrap(), expect);
        // A level holding one class only is an error naming the level.
        let pos_only = [1, 1, 0, 1, 1, 0];
        let err = group_auc(&scores, &pos_only, &groups, 0).unwrap_err();
        match err {
            EvalError::SingleClass { level } => assert_eq!(level.as_deref(), Some("0")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn group_partition_brackets_the_pooled_statistic() {
        // The pooled within-group pair statistic is a weighted mediant of
        // the per-group AUCs, so it lies between their extremes.
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        for _ in 0..50 {
            let n = rng.random_range(20..200);
            let (scores, _) = random_instance(&mut rng, n, 6);
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
            let groups: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let mut per_group = Vec::new();
            let mut num2_total = 0.0;
            let mut den_total = 0.0;
            for g in 0..3u32 {
                let s: Vec<f64> = (0..n)
                    .filter(|&i| groups[i] == g)
                    .map(|i| scores[i])
                    .collect();
                let l: Vec<u8> = (0..n)
                    .filter(|&i| groups[i] == g)
                    .map(|i| labels[i])
                    .collect();
                let np = l.iter().filter(|&&x| x != 0).count() as f64;
                let nn = l.len() as f64 - np;
                if np == 0.0 || nn == 0.0 {
                    continue;
                }
                let a = pair_auc(&s, &l).unwrap();
                per_group.push(a);
                num2_total += a * 2.0 * np * nn;
                den_total += 2.0 * np * nn;
            }
            if per_group.len() < 2 {
                continue;
            }
            let pooled = num2_total / den_total;
            let min = per_group.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = per_group.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(min <= pooled + 1e-12 && pooled <= max + 1e-12);
        }
    }

    #[test]
    fn identical_samples_are_not_significant() {
        let a = [0.7, 0.71, 0.72, 0.73];
        let s = significance(&a, &a).unwrap();
        assert_eq!(s.p_value, 1.0);
        assert!(s.degenerate);
        assert_eq!(s.mean_difference, 0.0);
    }

    #[test]
    fn constant_shift_is_degenerate_certainty() {
        let a = [0.7, 0.71, 0.72, 0.73];
        let b: Vec<f64> = a.iter().map(|x| x - 0.01).collect();
        let s = significance(&a, &b).unwrap();
        assert_eq!(s.p_value, 0.0);
        assert!(s.degenerate);
        assert!(s.t_statistic.is_none());
        assert!((s.mean_difference - 0.01).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch_and_tiny_inputs_are_rejected() {
        assert_eq!(
            significance(&[1.0], &[1.0, 2.0]).unwrap_err().kind(),
            "LengthMismatch"
        );
        assert_eq!(
            significance(&[1.0], &[1.0]).unwrap_err().kind(),
            "TooFewSamples"
        );
        assert_eq!(
            permutation_significance(&[1.0], &[1.0, 2.0], 10, 0)
                .unwrap_err()
                .kind(),
            "LengthMismatch"
        );
    }

    #[test]
    fn one_sigma_effect_over_thirty_seeds_is_significant() {
        // Paired gaussian fixture with a one-sigma effect; the t-test and
        // the sign-flip permutation oracle must agree it is significant.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let noise = rand_distr::StandardNormal;
        let b: Vec<f64> = (0..30)
            .map(|_| 0.7 + 0.01 * rng.sample::<f64, _>(noise))
            .collect();
        let a: Vec<f64> = b.iter().map(|x| x + 0.01).collect();
        let t = significance(&a, &b).unwrap();
        let p_perm = permutation_significance(&a, &b, 100_000, 12).unwrap();
        assert!(t.p_value < 0.05, "t p = {}", t.p_value);
        assert!(p_perm < 0.05, "perm p = {p_perm}");
    }

    #[test]
    fn t_test_tracks_the_permutation_oracle_at_moderate_effects() {
        // A weak effect lands p in the interesting range; both methods
        // should land close together there.
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let noise = rand_distr::StandardNormal;
        for effect in [0.2, 0.35, 0.5] {
            let b: Vec<f64> = (0..30).map(|_| rng.sample::<f64, _>(noise)).collect();
            let a: Vec<f64> = b.iter().map(|x| x + effect).collect::<Vec<_>>();
            let a: Vec<f64> = a
                .iter()
                .map(|x| x + 0.8 * rng.sample::<f64, _>(noise))
                .collect();
            let t = significance(&a, &b).unwrap();
            let p_perm = permutation_significance(&a, &b, 100_000, 14).unwrap();
            assert!(
                (t.p_value - p_perm).abs() < 0.02,
                "effect {effect}: t {} vs perm {p_perm}",
                t.p_value
            );
        }
    }

    fn outcome(auc: f64, prot_rate: f64, ref_rate: f64) -> ModeOutcome {
        ModeOutcome {
            auc,
            group_auc: BTreeMap::from([("1".to_string(), auc - 0.05), ("0".to_string(), auc)]),
            cv_auc: None,
            approval_rate: (prot_rate + ref_rate) / 2.0,
            group_approval_rate: BTreeMap::from([
                ("1".to_string(), prot_rate),
                ("0".to_string(), ref_rate),
            ]),
        }
    }

    #[test]
    fn identical_modes_yield_no_declaration() {
        let modes = BTreeMap::from([
            (ModelMode::Awareness, outcome(0.8, 0.3, 0.5)),
            (ModelMode::Unawareness, outcome(0.8, 0.3, 0.5)),
            (ModelMode::Counterfactual, outcome(0.8, 0.3, 0.5)),
        ]);
        let seeds = vec![SeedRecord { seed: 0, modes }];
        let report = discrimination_report(&seeds, "1", "0", &DecisionPolicy::default());
        assert!(report.less_discriminatory.is_empty());
        let airs: Vec<Option<f64>> = report
            .modes
            .iter()
            .map(|m| m.adverse_impact_ratio)
            .collect();
        assert_eq!(airs, vec![Some(0.6); 3]);
    }

    #[test]
    fn full_approval_means_unit_ratios() {
        let modes = BTreeMap::from([
            (ModelMode::Awareness, outcome(0.8, 1.0, 1.0)),
            (ModelMode::Unawareness, outcome(0.75, 1.0, 1.0)),
        ]);
        let seeds = vec![SeedRecord { seed: 0, modes }];
        let policy = DecisionPolicy {
            threshold: 1.0,
            ..DecisionPolicy::default()
        };
        let report = discrimination_report(&seeds, "1", "0", &policy);
        for m in &report.modes {
            assert_eq!(m.adverse_impact_ratio, Some(1.0));
            assert!(m.approval_rate.values().all(|&r| r == 1.0));
        }
        assert!(report.less_discriminatory.is_empty());
    }

    #[test]
    fn fairer_equally_accurate_mode_is_declared() {
        // Counterfactual: ratio 0.9, same AUC as unawareness's 0.7 ratio.
        let modes = BTreeMap::from([
            (ModelMode::Awareness, outcome(0.85, 0.30, 0.50)),
            (ModelMode::Unawareness, outcome(0.80, 0.35, 0.50)),
            (ModelMode::Counterfactual, outcome(0.84, 0.45, 0.50)),
        ]);
        let seeds = vec![SeedRecord { seed: 0, modes }];
        let report = discrimination_report(&seeds, "1", "0", &DecisionPolicy::default());
        assert!(report.less_discriminatory.contains(&Declaration {
            better: ModelMode::Counterfactual,
            than: ModelMode::Unawareness
        }));
        // Awareness has the best AUC but the worst ratio: never declared.
        assert!(!report
            .less_discriminatory
            .iter()
            .any(|d| d.better == ModelMode::Awareness));
        // Unawareness is less accurate than counterfactual and has a worse
        // ratio, so it cannot be declared against counterfactual.
        assert!(!report.less_discriminatory.contains(&Declaration {
            better: ModelMode::Unawareness,
            than: ModelMode::Counterfactual
        }));
    }

    fn small_config() -> ExperimentConfig {
        let mut spec = ScmSpec::default();
        spec.w_coeffs.beta_a = -1.0;
        ExperimentConfig {
            source: DataSource::Scm { spec, n_rows: 1500 },
            params: ModeParams::uniform(GbdtParams {
                num_trees: 25,
                max_leaves: 8,
                min_samples_leaf: 10,
                ..GbdtParams::default()
            }),
            seeds: vec![3, 1, 2],
            test_fraction: 0.2,
            cv_folds: 0,
            group_column: "a".to_string(),
            protected_level: "1".to_string(),
            reference_level: "0".to_string(),
            report_levels: Vec::new(),
            screen_threshold: 0.05,
            policy: DecisionPolicy::default(),
        }
    }

    #[test]
    fn config_validation_catches_bad_inputs() {
        let mut c = small_config();
        c.seeds = vec![];
        assert_eq!(c.validate().unwrap_err().kind(), "InvalidConfig");
        c.seeds = vec![1, 1];
        assert_eq!(c.validate().unwrap_err().kind(), "InvalidConfig");
        c.seeds = vec![1];
        c.test_fraction = 1.0;
        assert_eq!(c.validate().unwrap_err().kind(), "InvalidConfig");
        c.test_fraction = 0.2;
        c.cv_folds = 1;
        assert_eq!(c.validate().unwrap_err().kind(), "InvalidConfig");
        c.cv_folds = 0;
        assert!(c.validate().is_ok());

        let mut c = small_config();
        c.group_column = "zip".to_string();
        assert_eq!(run_experiment(&c).unwrap_err().kind(), "BadGroupColumn");
        let mut c = small_config();
        c.protected_level = "9".to_string();
        assert_eq!(run_experiment(&c).unwrap_err().kind(), "UnknownLevel");
    }

    #[test]
    fn experiment_is_deterministic_and_aggregates_recompute() {
        let config = small_config();
        let r1 = run_experiment(&config).unwrap();
        let r2 = run_experiment(&config).unwrap();
        assert_eq!(
            r1.to_json(),
            r2.to_json(),
            "same config must give identical bytes"
        );

        assert_eq!(
            r1.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert!(r1.aggregate_drift() <= 1e-12);
        for record in &r1.seeds {
            for outcome in record.modes.values() {
                assert!(
                    outcome.auc > 0.5 && outcome.auc <= 1.0,
                    "auc {}",
                    outcome.auc
                );
                assert!(outcome.group_auc.len() == 2);
            }
        }
        assert_eq!(r1.significance.len(), 3);

        let restored = ExperimentResult::from_json(&r1.to_json()).unwrap();
        assert_eq!(restored, r1);
        let table = r1.render_table();
        assert!(
            table.contains("overall") && table.contains("counterfactual"),
            "{table}"
        );
    }

    #[test]
    fn cross_validation_is_reported_alongside_held_out() {
        let mut config = small_config();
        config.seeds = vec![5];
        config.cv_folds = 3;
        let r = run_experiment(&config).unwrap();
        for record in &r.seeds {
            for outcome in record.modes.values() {
                let cv = outcome.cv_auc.expect("cv enabled");
                assert!(cv > 0.5 && cv <= 1.0, "cv auc {cv}");
            }
        }
        assert!(r.aggregates.values().all(|a| a.cv_auc.is_some()));
        let table = r.render_table();
        assert!(table.contains("cross-validation"), "{table}");
    }

    #[test]
    fn csv_source_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ScmSpec::default();
        let s = sample(&spec, 1200, 4).unwrap();
        let schema_path = dir.path().join("schema.json");
        let data_path = dir.path().join("rows.csv");
        std::fs::write(
            &schema_path,
            serde_json::to_string(s.data.schema()).unwrap(),
        )
        .unwrap();
        dataset::write_csv(&s.data, &data_path).unwrap();

        let mut config = small_config();
        config.source = DataSource::Csv {
            schema: schema_path,
            data: data_path,
        };
        config.seeds = vec![1, 2];
        let r = run_experiment(&config).unwrap();
        assert_eq!(r.seeds.len(), 2);
        // Fixed table: the two seeds differ only in the split, yet AUCs
        // still differ because the test rows differ.
        let a1 = r.seeds[0].modes[&ModelMode::Awareness].auc;
        let a2 = r.seeds[1].modes[&ModelMode::Awareness].auc;
        assert_ne!(a1, a2);
    }
}
