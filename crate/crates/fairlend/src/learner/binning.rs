//! Feature discretization for histogram tree growth.
//!
//! Numeric features get at most `max_bins` quantile bins computed from the
//! training values; the stored edges make binning rank-based, so any
//! monotone transform of a feature that preserves value ranks preserves the
//! binned matrix. Categorical features use one bin per schema level.

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnType, Dataset};

use super::LearnerError;

/// How one model feature maps raw values to histogram bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Ascending edges; value v lands in bin `#{edges < v}`, so bin(v) <= b
    /// exactly when v <= edges[b].
    Numeric {
        #[serde(with = "crate::learner::hexfloat::vec")]
        edges: Vec<f64>,
    },
    /// The bin is the level index.
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMeta {
    pub name: String,
    pub kind: FeatureKind,
}

impl FeatureMeta {
    pub fn n_bins(&self) -> usize {
        match &self.kind {
            FeatureKind::Numeric { edges } => edges.len() + 1,
            FeatureKind::Categorical { levels } => levels.len(),
        }
    }
}

/// Column-major binned view of the training features.
pub(super) struct BinnedMatrix {
    pub n_rows: usize,
    pub features: Vec<FeatureMeta>,
    /// `bins[feature][row]`, meaningless where missing.
    pub bins: Vec<Vec<u16>>,
    pub missing: Vec<Vec<bool>>,
}

pub(super) fn build(
    data: &Dataset,
    cols: &[usize],
    max_bins: usize,
) -> Result<BinnedMatrix, LearnerError> {
    let n = data.n_rows();
    let mut features = Vec::with_capacity(cols.len());
    let mut bins = Vec::with_capacity(cols.len());
    let mut missing = Vec::with_capacity(cols.len());

    for &col in cols {
        let spec = data.schema().column(col);
        let mask = data.missing_mask(col).to_vec();
        match &spec.ty {
            ColumnType::Numeric => {
                let values = data.numeric(col).expect("numeric by schema");
                let present: Vec<f64> = values
                    .iter()
                    .zip(&mask)
                    .filter(|(_, &m)| !m)
                    .map(|(&v, _)| v)
                    .collect();
                let edges = numeric_edges(&present, max_bins);
                let binned: Vec<u16> = values
                    .iter()
                    .zip(&mask)
                    .map(|(&v, &m)| if m { 0 } else { bin_of(&edges, v) })
                    .collect();
                features.push(FeatureMeta {
                    name: spec.name.clone(),
                    kind: FeatureKind::Numeric { edges },
                });
                bins.push(binned);
            }
            ColumnType::Categorical(levels) => {
                if levels.len() > u16::MAX as usize {
                    return Err(LearnerError::InvalidParams(format!(
                        "column {:?} has {} levels; at most {} supported",
                        spec.name,
                        levels.len(),
                        u16::MAX
                    )));
                }
                let binned: Vec<u16> = data
                    .categorical(col)
                    .expect("categorical by schema")
                    .iter()
                    .map(|&v| v as u16)
                    .collect();
                features.push(FeatureMeta {
                    name: spec.name.clone(),
                    kind: FeatureKind::Categorical {
                        levels: levels.to_vec(),
                    },
                });
                bins.push(binned);
            }
        }
        missing.push(mask);
    }

    Ok(BinnedMatrix {
        n_rows: n,
        features,
        bins,
        missing,
    })
}

/// Bin index of `v` given ascending edges.
pub(super) fn bin_of(edges: &[f64], v: f64) -> u16 {
    edges.partition_point(|&e| e < v) as u16
}

/// Quantile bin edges. With at most `max_bins` distinct values every
/// distinct value gets its own bin; otherwise cuts sit at equally spaced
/// ranks. Edges are midpoints of adjacent values, deduplicated to stay
/// strictly increasing.
fn numeric_edges(present: &[f64], max_bins: usize) -> Vec<f64> {
    if present.is_empty() {
        return Vec::new();
    }
    let mut sorted = present.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let candidates: Vec<f64> = if distinct.len() <= max_bins {
        distinct.windows(2).map(|w| midpoint(w[0], w[1])).collect()
    } else {
        (1..max_bins)
            .map(|t| {
                let idx = t * sorted.len() / max_bins;
                midpoint(sorted[idx - 1], sorted[idx])
            })
            .collect()
    };
    let mut edges: Vec<f64> = Vec::with_capacity(candidates.len());
    for e in candidates {
        if edges.last().is_none_or(|&last| e > last) {
            edges.push(e);
        }
    }
    edges
}

fn midpoint(a: f64, b: f64) -> f64 {
    a + (b - a) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_distinct_values_get_own_bins() {
        let edges = numeric_edges(&[1.0, 2.0, 2.0, 5.0], 255);
        assert_eq!(edges, vec![1.5, 3.5]);
        assert_eq!(bin_of(&edges, 1.0), 0);
        assert_eq!(bin_of(&edges, 1.5), 0);
        assert_eq!(bin_of(&edges, 2.0), 1);
        assert_eq!(bin_of(&edges, 5.0), 2);
    }

    #[test]
    fn many_values_quantile_binned() {
        let values: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let edges = numeric_edges(&values, 10);
        assert_eq!(edges.len(), 9);
        // equal-frequency: about 100 values per bin
        let counts: Vec<usize> = (0..10)
            .map(|b| values.iter().filter(|&&v| bin_of(&edges, v) == b).count())
            .collect();
        assert!(counts.iter().all(|&c| c == 100), "{counts:?}");
    }

    #[test]
    fn skewed_duplicates_dedupe_edges() {
        let mut values = vec![0.0; 500];
        values.extend((0..10).map(|i| i as f64 + 1.0));
        let edges = numeric_edges(&values, 8);
        for w in edges.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert_eq!(bin_of(&edges, 0.0), 0);
    }

    #[test]
    fn rank_preserving_transform_preserves_bins() {
        let values: Vec<f64> = (0..200).map(|i| (i as f64).sin() * 10.0).collect();
        let transformed: Vec<f64> = values.iter().map(|v| v.exp()).collect();
        let e1 = numeric_edges(&values, 16);
        let e2 = numeric_edges(&transformed, 16);
        for (&v, &t) in values.iter().zip(&transformed) {
            assert_eq!(bin_of(&e1, v), bin_of(&e2, t));
        }
    }
}
