//! Leaf-wise tree growth over binned features with second-order gradients.
//!
//! Split gain follows the usual second-order formulation: for a node with
//! gradient sum G and hessian sum H split into (GL, HL) and (GR, HR),
//!
//!   gain = 1/2 * (GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l))
//!
//! with l the leaf penalty. The leaf with the best pending gain is split
//! first until `max_leaves` is reached or no candidate has positive gain.
//! Determinism: rows are accumulated in ascending order per feature,
//! candidate features are compared in feature order with strict-greater
//! replacement, numeric thresholds and categorical prefixes are scanned
//! ascending, and heap ties break toward the older leaf.

use std::collections::{BTreeMap, BinaryHeap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Value;

use super::binning::{BinnedMatrix, FeatureKind};
use super::GbdtParams;

/// Largest magnitude a single leaf may contribute before the learning rate
/// is applied; bounds Newton overshoot on near-pure leaves.
const MAX_LEAF_STEP: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCondition {
    /// Goes left when value <= threshold (equivalently bin <= bin_threshold).
    Numeric {
        bin: u16,
        #[serde(with = "crate::learner::hexfloat::scalar")]
        threshold: f64,
    },
    /// Goes left when the level index is in `left_levels` (kept sorted).
    Categorical { left_levels: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: u32,
        condition: SplitCondition,
        missing_left: bool,
        left: u32,
        right: u32,
    },
    Leaf {
        #[serde(with = "crate::learner::hexfloat::scalar")]
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Tree output for a row presented as a feature-indexed value lookup.
    pub fn output(&self, value_of: impl Fn(usize) -> Value) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    condition,
                    missing_left,
                    left,
                    right,
                } => {
                    let go_left = match value_of(*feature as usize) {
                        Value::Missing => *missing_left,
                        Value::Num(v) => match condition {
                            SplitCondition::Numeric { threshold, .. } => v <= *threshold,
                            SplitCondition::Categorical { .. } => {
                                unreachable!("numeric value on categorical split")
                            }
                        },
                        Value::Cat(level) => match condition {
                            SplitCondition::Categorical { left_levels } => {
                                left_levels.binary_search(&level).is_ok()
                            }
                            SplitCondition::Numeric { .. } => {
                                unreachable!("categorical value on numeric split")
                            }
                        },
                    };
                    idx = if go_left {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

#[derive(Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    n: u32,
}

impl Stats {
    fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
        self.n += 1;
    }

    fn merge(&mut self, other: Stats) {
        self.g += other.g;
        self.h += other.h;
        self.n += other.n;
    }
}

fn leaf_objective(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

fn leaf_value(g: f64, h: f64, params: &GbdtParams) -> f64 {
    let raw = (-g / (h + params.l2_leaf_penalty)).clamp(-MAX_LEAF_STEP, MAX_LEAF_STEP);
    raw * params.learning_rate
}

/// Best split of one feature at one node, all stats in node-local sums.
struct FeatureSplit {
    gain: f64,
    condition: SplitCondition,
    missing_left: bool,
}

/// Pending split of a leaf, ordered by gain with ties going to the leaf
/// created earlier.
struct Candidate {
    gain: f64,
    node: u32,
    feature: u32,
    condition: SplitCondition,
    missing_left: bool,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.gain == other.gain && self.node == other.node
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Grows one tree. Returns it along with `(leaf value, rows)` per leaf so
/// the caller can update scores without re-traversing.
pub(super) fn grow(
    binned: &BinnedMatrix,
    grad: &[f64],
    hess: &[f64],
    params: &GbdtParams,
) -> (Tree, Vec<(f64, Vec<u32>)>) {
    let all_rows: Vec<u32> = (0..binned.n_rows as u32).collect();
    let root_stats = node_stats(&all_rows, grad, hess);

    let mut nodes = vec![Node::Leaf {
        value: leaf_value(root_stats.g, root_stats.h, params),
    }];
    let mut rows_of: BTreeMap<u32, (Vec<u32>, Stats)> = BTreeMap::new();
    rows_of.insert(0, (all_rows, root_stats));

    let mut heap: BinaryHeap<Candidate> = BinaryHeap::new();
    let mut n_leaves = 1usize;

    if params.max_leaves > 1 {
        let (rows, stats) = &rows_of[&0];
        if let Some(c) = best_split(binned, grad, hess, rows, *stats, params, 0) {
            heap.push(c);
        }
    }

    while n_leaves < params.max_leaves {
        let Some(cand) = heap.pop() else { break };
        let (rows, _) = rows_of
            .remove(&cand.node)
            .expect("candidate node is a live leaf");

        let mut left_rows = Vec::new();
        let mut right_rows = Vec::new();
        let fbins = &binned.bins[cand.feature as usize];
        let fmiss = &binned.missing[cand.feature as usize];
        for &r in &rows {
            let go_left = if fmiss[r as usize] {
                cand.missing_left
            } else {
                match &cand.condition {
                    SplitCondition::Numeric { bin, .. } => fbins[r as usize] <= *bin,
                    SplitCondition::Categorical { left_levels } => left_levels
                        .binary_search(&(fbins[r as usize] as u32))
                        .is_ok(),
                }
            };
            if go_left {
                left_rows.push(r);
            } else {
                right_rows.push(r);
            }
        }

        let left_stats = node_stats(&left_rows, grad, hess);
        let right_stats = node_stats(&right_rows, grad, hess);
        let left_id = nodes.len() as u32;
        let right_id = left_id + 1;
        nodes.push(Node::Leaf {
            value: leaf_value(left_stats.g, left_stats.h, params),
        });
        nodes.push(Node::Leaf {
            value: leaf_value(right_stats.g, right_stats.h, params),
        });
        nodes[cand.node as usize] = Node::Split {
            feature: cand.feature,
            condition: cand.condition,
            missing_left: cand.missing_left,
            left: left_id,
            right: right_id,
        };
        n_leaves += 1;

        for (id, rows, stats) in [
            (left_id, left_rows, left_stats),
            (right_id, right_rows, right_stats),
        ] {
            if n_leaves < params.max_leaves {
                if let Some(c) = best_split(binned, grad, hess, &rows, stats, params, id) {
                    heap.push(c);
                }
            }
            rows_of.insert(id, (rows, stats));
        }
    }

    let assignments = rows_of
        .into_values()
        .map(|(rows, stats)| (leaf_value(stats.g, stats.h, params), rows))
        .collect();
    (Tree { nodes }, assignments)
}

fn node_stats(rows: &[u32], grad: &[f64], hess: &[f64]) -> Stats {
    let mut s = Stats::default();
    for &r in rows {
        s.add(grad[r as usize], hess[r as usize]);
    }
    s
}

/// Best split over all features at a node. Features are searched in
/// parallel but compared sequentially in feature order, so the result is
/// independent of thread count.
fn best_split(
    binned: &BinnedMatrix,
    grad: &[f64],
    hess: &[f64],
    rows: &[u32],
    stats: Stats,
    params: &GbdtParams,
    node: u32,
) -> Option<Candidate> {
    if rows.len() < 2 * params.min_samples_leaf {
        return None;
    }
    let per_feature: Vec<Option<FeatureSplit>> = (0..binned.features.len())
        .into_par_iter()
        .map(|f| best_feature_split(binned, f, grad, hess, rows, stats, params))
        .collect();

    let mut best: Option<(usize, FeatureSplit)> = None;
    for (f, split) in per_feature.into_iter().enumerate() {
        let Some(split) = split else { continue };
        if best.as_ref().is_none_or(|(_, b)| split.gain > b.gain) {
            best = Some((f, split));
        }
    }
    best.map(|(f, split)| Candidate {
        gain: split.gain,
        node,
        feature: f as u32,
        condition: split.condition,
        missing_left: split.missing_left,
    })
}

fn best_feature_split(
    binned: &BinnedMatrix,
    feature: usize,
    grad: &[f64],
    hess: &[f64],
    rows: &[u32],
    node: Stats,
    params: &GbdtParams,
) -> Option<FeatureSplit> {
    let n_bins = binned.features[feature].n_bins();
    let fbins = &binned.bins[feature];
    let fmiss = &binned.missing[feature];

    let mut hist = vec![Stats::default(); n_bins];
    let mut miss = Stats::default();
    for &r in rows {
        let r = r as usize;
        if fmiss[r] {
            miss.add(grad[r], hess[r]);
        } else {
            hist[fbins[r] as usize].add(grad[r], hess[r]);
        }
    }

    let lambda = params.l2_leaf_penalty;
    let parent_obj = leaf_objective(node.g, node.h, lambda);
    let msl = params.min_samples_leaf as u32;
    let mut best: Option<FeatureSplit> = None;

    let mut consider = |left: Stats, condition: &dyn Fn() -> SplitCondition, missing_left: bool| {
        let right_n = node.n - left.n;
        if left.n < msl || right_n < msl {
            return;
        }
        let right_g = node.g - left.g;
        let right_h = node.h - left.h;
        let gain = 0.5
            * (leaf_objective(left.g, left.h, lambda) + leaf_objective(right_g, right_h, lambda)
                - parent_obj);
        if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
            best = Some(FeatureSplit {
                gain,
                condition: condition(),
                missing_left,
            });
        }
    };

    match &binned.features[feature].kind {
        FeatureKind::Numeric { edges } => {
            let mut cum = Stats::default();
            for b in 0..n_bins.saturating_sub(1) {
                cum.merge(hist[b]);
                if cum.n == 0 {
                    continue;
                }
                let make = || SplitCondition::Numeric {
                    bin: b as u16,
                    threshold: edges[b],
                };
                consider(cum, &make, false);
                if miss.n > 0 {
                    let mut with_miss = cum;
                    with_miss.merge(miss);
                    consider(with_miss, &make, true);
                }
            }
        }
        FeatureKind::Categorical { .. } => {
            // One-vs-rest prefixes of levels ordered by gradient ratio.
            let mut order: Vec<usize> = (0..n_bins).filter(|&b| hist[b].n > 0).collect();
            order.sort_by(|&a, &b| {
                let ra = hist[a].g / (hist[a].h + lambda);
                let rb = hist[b].g / (hist[b].h + lambda);
                ra.total_cmp(&rb).then(a.cmp(&b))
            });
            let mut cum = Stats::default();
            let mut prefix: Vec<u32> = Vec::new();
            for i in 0..order.len().saturating_sub(1) {
                cum.merge(hist[order[i]]);
                prefix.push(order[i] as u32);
                let make = || {
                    let mut left_levels = prefix.clone();
                    left_levels.sort_unstable();
                    SplitCondition::Categorical { left_levels }
                };
                consider(cum, &make, false);
                if miss.n > 0 {
                    let mut with_miss = cum;
                    with_miss.merge(miss);
                    consider(with_miss, &make, true);
                }
            }
        }
    }
    best
}
