//! Proxy screening and positivity diagnostics.
//!
//! Alternative data earns its predictive power partly by proxying the
//! protected attribute; features whose correlation with a protected group
//! exceeds a threshold are flagged for removal before training. Separately,
//! [`overlap_test`] checks that every feature value has support in every
//! protected group, since a value seen in only one group makes causal
//! adjustment impossible for it. Traditional features measure
//! creditworthiness directly and are exempt from both checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnRole, Dataset, DatasetError};

/// Numeric features are cut into this many equal-count bins for the
/// positivity check.
pub const OVERLAP_NUMERIC_BINS: usize = 10;

#[derive(Debug, Error)]
pub enum ScreeningError {
    #[error("unknown feature: {0}")]
    UnknownFeature(String),
    #[error("unknown level {level:?} in column {column:?}")]
    UnknownLevel { column: String, level: String },
    #[error("column {0:?} is not categorical")]
    NotCategorical(String),
    #[error("screening threshold must be positive and finite, got {0}")]
    InvalidThreshold(f64),
    #[error("positivity floor must be at least 1")]
    InvalidFloor,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl ScreeningError {
    pub fn kind(&self) -> &'static str {
        match self {
            ScreeningError::UnknownFeature(_) => "UnknownFeature",
            ScreeningError::UnknownLevel { .. } => "UnknownLevel",
            ScreeningError::NotCategorical(_) => "NotCategorical",
            ScreeningError::InvalidThreshold(_) => "InvalidThreshold",
            ScreeningError::InvalidFloor => "InvalidFloor",
            ScreeningError::Dataset(e) => e.kind(),
        }
    }
}

/// The protected group correlations are measured against: one level of one
/// categorical column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub column: String,
    pub level: String,
}

impl GroupSpec {
    pub fn new(column: impl Into<String>, level: impl Into<String>) -> Self {
        GroupSpec {
            column: column.into(),
            level: level.into(),
        }
    }
}

/// One screened feature: its correlation with the group indicator and the
/// resulting decision. `r` is None when undefined (zero variance on the
/// rows where both sides are present); undefined features are never
/// dropped. For categorical features `level` names the level whose
/// indicator attains the largest |r|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    pub feature: String,
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub level: Option<String>,
    pub dropped: bool,
}

/// Result of [`screen_proxies`]: every Alternative feature's correlation
/// with the protected group, and the drop set |r| > threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub group: GroupSpec,
    pub threshold: f64,
    pub features: Vec<FeatureCorrelation>,
    /// Feature names with |r| > threshold, in schema order.
    pub dropped: Vec<String>,
}

/// One undersupported cell: this feature value has fewer than `floor` rows
/// in this protected group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositivityViolation {
    pub feature: String,
    pub value: String,
    pub group: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub floor: usize,
    pub violations: Vec<PositivityViolation>,
}

impl PositivityReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Group indicator per row: None where the group column is missing.
fn group_indicator(data: &Dataset, group: &GroupSpec) -> Result<Vec<Option<bool>>, ScreeningError> {
    let col = data
        .schema()
        .column_index(&group.column)
        .ok_or_else(|| ScreeningError::UnknownFeature(group.column.clone()))?;
    let levels = data
        .schema()
        .column(col)
        .ty
        .levels()
        .ok_or_else(|| ScreeningError::NotCategorical(group.column.clone()))?;
    let target = levels
        .iter()
        .position(|l| l == &group.level)
        .ok_or_else(|| ScreeningError::UnknownLevel {
            column: group.column.clone(),
            level: group.level.clone(),
        })? as u32;
    let values = data.categorical(col).expect("categorical by levels check");
    let missing = data.missing_mask(col);
    Ok(values
        .iter()
        .zip(missing)
        .map(|(&v, &miss)| if miss { None } else { Some(v == target) })
        .collect())
}

/// Pearson correlation over (indicator, value) pairs; None if either side
/// has zero variance or fewer than two pairs exist.
fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len();
    if n < 2 {
        return None;
    }
    let mean_g = pairs.iter().map(|p| p.0).sum::<f64>() / n as f64;
    let mean_x = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let (mut sgg, mut sxx, mut sgx) = (0.0, 0.0, 0.0);
    for &(g, x) in pairs {
        let dg = g - mean_g;
        let dx = x - mean_x;
        sgg += dg * dg;
        sxx += dx * dx;
        sgx += dg * dx;
    }
    if sgg == 0.0 || sxx == 0.0 {
        return None;
    }
    Some(sgx / (sgg * sxx).sqrt())
}

/// Pearson correlation of two binary indicators from their 2x2 contingency
/// table (the phi coefficient; identical to [`pearson`] on 0/1 pairs but
/// exact in the numerator).
fn phi(n11: u64, n10: u64, n01: u64, n00: u64) -> Option<f64> {
    let (n11, n10, n01, n00) = (n11 as f64, n10 as f64, n01 as f64, n00 as f64);
    let denom = (n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00);
    if denom == 0.0 {
        return None;
    }
    Some((n11 * n00 - n10 * n01) / denom.sqrt())
}

/// Correlation of one feature with the group indicator, plus the witness
/// level for categorical features.
fn feature_correlation(
    data: &Dataset,
    col: usize,
    indicator: &[Option<bool>],
) -> (Option<f64>, Option<String>) {
    let missing = data.missing_mask(col);
    if let Some(values) = data.numeric(col) {
        let pairs: Vec<(f64, f64)> = indicator
            .iter()
            .zip(values)
            .zip(missing)
            .filter_map(|((g, &x), &miss)| match (g, miss) {
                (Some(g), false) => Some((f64::from(*g), x)),
                _ => None,
            })
            .collect();
        return (pearson(&pairs), None);
    }

    let levels = data.schema().column(col).ty.levels().expect("categorical");
    let values = data.categorical(col).expect("categorical");
    // counts[level][g][x]: x = indicator of "row has this level"
    let mut counts = vec![[[0u64; 2]; 2]; levels.len()];
    for ((g, &v), &miss) in indicator.iter().zip(values).zip(missing) {
        let Some(g) = g else { continue };
        if miss {
            continue;
        }
        let g = usize::from(*g);
        for (l, c) in counts.iter_mut().enumerate() {
            c[g][usize::from(l == v as usize)] += 1;
        }
    }
    let mut best: Option<(f64, usize)> = None;
    for (l, c) in counts.iter().enumerate() {
        let Some(r) = phi(c[1][1], c[1][0], c[0][1], c[0][0]) else {
            continue;
        };
        if best.is_none_or(|(b, _)| r.abs() > b.abs()) {
            best = Some((r, l));
        }
    }
    match best {
        Some((r, l)) => (Some(r), Some(levels[l].clone())),
        None => (None, None),
    }
}

/// Pearson correlation between a feature and the protected-group
/// indicator; rows where either side is missing are excluded pairwise.
/// Categorical features report the largest-|r| level indicator. None means
/// undefined (zero variance).
pub fn correlation_with_group(
    data: &Dataset,
    feature: &str,
    group: &GroupSpec,
) -> Result<Option<f64>, ScreeningError> {
    let col = data
        .schema()
        .column_index(feature)
        .ok_or_else(|| ScreeningError::UnknownFeature(feature.to_string()))?;
    let indicator = group_indicator(data, group)?;
    Ok(feature_correlation(data, col, &indicator).0)
}

/// Applies the correlation rule to every Alternative-role feature and
/// marks |r| > threshold for removal. Traditional features are exempt:
/// they measure creditworthiness itself rather than proxying the
/// protected attribute.
pub fn screen_proxies(
    data: &Dataset,
    group: &GroupSpec,
    threshold: f64,
) -> Result<ScreeningReport, ScreeningError> {
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(ScreeningError::InvalidThreshold(threshold));
    }
    let indicator = group_indicator(data, group)?;
    let cols: Vec<usize> = (0..data.schema().len())
        .filter(|&c| data.schema().column(c).role == ColumnRole::Alternative)
        .collect();
    let features: Vec<FeatureCorrelation> = cols
        .par_iter()
        .map(|&col| {
            let (r, level) = feature_correlation(data, col, &indicator);
            FeatureCorrelation {
                feature: data.schema().column(col).name.clone(),
                r,
                level,
                dropped: r.is_some_and(|r| r.abs() > threshold),
            }
        })
        .collect();
    let dropped = features
        .iter()
        .filter(|f| f.dropped)
        .map(|f| f.feature.clone())
        .collect();
    Ok(ScreeningReport {
        group: group.clone(),
        threshold,
        features,
        dropped,
    })
}

/// Distinct observed values of a feature, as (label, per-row value index);
/// numeric features are decile-binned first. Missing rows get None.
fn observed_values(data: &Dataset, col: usize) -> (Vec<String>, Vec<Option<usize>>) {
    let missing = data.missing_mask(col);
    if let Some(levels) = data.schema().column(col).ty.levels() {
        let values = data.categorical(col).expect("categorical");
        let mut seen = vec![false; levels.len()];
        let idx: Vec<Option<usize>> = values
            .iter()
            .zip(missing)
            .map(|(&v, &miss)| {
                if miss {
                    None
                } else {
                    seen[v as usize] = true;
                    Some(v as usize)
                }
            })
            .collect();
        // Compact to observed levels only, keeping level order.
        let mut remap = vec![usize::MAX; levels.len()];
        let mut labels = Vec::new();
        for (l, &s) in seen.iter().enumerate() {
            if s {
                remap[l] = labels.len();
                labels.push(levels[l].clone());
            }
        }
        return (
            labels,
            idx.into_iter().map(|v| v.map(|v| remap[v])).collect(),
        );
    }

    let values = data.numeric(col).expect("numeric");
    let mut present: Vec<f64> = values
        .iter()
        .zip(missing)
        .filter_map(|(&v, &miss)| (!miss).then_some(v))
        .collect();
    if present.is_empty() {
        return (Vec::new(), vec![None; values.len()]);
    }
    present.sort_by(f64::total_cmp);
    let n = present.len();
    let mut cuts = Vec::new();
    for k in 1..OVERLAP_NUMERIC_BINS {
        let c = present[k * n / OVERLAP_NUMERIC_BINS];
        if cuts.last().is_none_or(|&last| c > last) {
            cuts.push(c);
        }
    }
    let labels = (0..=cuts.len())
        .map(|b| format!("decile {}", b + 1))
        .collect();
    let idx = values
        .iter()
        .zip(missing)
        .map(|(&v, &miss)| (!miss).then(|| cuts.partition_point(|&c| c < v)))
        .collect();
    (labels, idx)
}

/// Counts every (feature value, protected group) cell over Alternative
/// features and reports cells below the floor. A value seen only in one
/// group cannot be causally adjusted for the others; the remediation is
/// [`mask_values`], which merges offending values into the catch-all
/// level.
pub fn overlap_test(
    data: &Dataset,
    protected: &str,
    floor: usize,
) -> Result<PositivityReport, ScreeningError> {
    if floor == 0 {
        return Err(ScreeningError::InvalidFloor);
    }
    let p_col = data
        .schema()
        .column_index(protected)
        .ok_or_else(|| ScreeningError::UnknownFeature(protected.to_string()))?;
    let p_levels = data
        .schema()
        .column(p_col)
        .ty
        .levels()
        .ok_or_else(|| ScreeningError::NotCategorical(protected.to_string()))?
        .to_vec();
    let p_values = data.categorical(p_col).expect("categorical");
    let p_missing = data.missing_mask(p_col);

    // Only groups that occur in the data take part in the check.
    let mut group_rows = vec![0usize; p_levels.len()];
    for (&v, &miss) in p_values.iter().zip(p_missing) {
        if !miss {
            group_rows[v as usize] += 1;
        }
    }
    let groups: Vec<usize> = (0..p_levels.len()).filter(|&g| group_rows[g] > 0).collect();

    let mut violations = Vec::new();
    for col in 0..data.schema().len() {
        if data.schema().column(col).role != ColumnRole::Alternative {
            continue;
        }
        let feature = &data.schema().column(col).name;
        let (labels, idx) = observed_values(data, col);
        let mut counts = vec![vec![0usize; p_levels.len()]; labels.len()];
        for ((v, &p), &p_miss) in idx.iter().zip(p_values).zip(p_missing) {
            if let (Some(v), false) = (v, p_miss) {
                counts[*v][p as usize] += 1;
            }
        }
        for (v, label) in labels.iter().enumerate() {
            for &g in &groups {
                if counts[v][g] < floor {
                    violations.push(PositivityViolation {
                        feature: feature.clone(),
                        value: label.clone(),
                        group: p_levels[g].clone(),
                        count: counts[v][g],
                    });
                }
            }
        }
    }
    Ok(PositivityReport { floor, violations })
}

/// Replaces the named values of a categorical feature with the catch-all
/// level, merging their rows into it.
pub fn mask_values(
    data: &Dataset,
    feature: &str,
    values: &[String],
) -> Result<Dataset, ScreeningError> {
    let col = data
        .schema()
        .column_index(feature)
        .ok_or_else(|| ScreeningError::UnknownFeature(feature.to_string()))?;
    let levels = data
        .schema()
        .column(col)
        .ty
        .levels()
        .ok_or_else(|| ScreeningError::NotCategorical(feature.to_string()))?;
    let mut indices = Vec::with_capacity(values.len());
    for v in values {
        let idx =
            levels
                .iter()
                .position(|l| l == v)
                .ok_or_else(|| ScreeningError::UnknownLevel {
                    column: feature.to_string(),
                    level: v.clone(),
                })?;
        indices.push(idx as u32);
    }
    let other = data
        .schema()
        .other_index(col)
        .expect("categorical columns have a catch-all");
    Ok(data.mask_levels(col, &indices, other)?)
}
