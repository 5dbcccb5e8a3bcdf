//! Synthetic credit data from a configurable structural causal model.
//!
//! The generating graph is fixed; only its parameters vary:
//!
//! ```text
//!   A -> Z -> W -> Y        A: protected attribute (binary)
//!   A ------> W             Z: demographic variable (categorical)
//!   A -> P                  W: latent creditworthiness (real)
//!   Z -> XZ_i  (k_Z obs)    P: pure proxy, influenced by A alone
//!   W -> XW_j  (k_W obs)    XZ/XW: noisy observations of Z and W
//! ```
//!
//! Y depends on A, Z, and P only through W; the spec carries no direct
//! A->Y, Z->Y, or P->Y parameter, so conditional independence of Y and A
//! given W holds by construction. [`sample`] draws rows ancestrally,
//! [`check_ci`] audits that independence on sampled data, and the
//! [`discrete`] submodule provides an exact enumeration oracle for
//! interventional queries.

mod discrete;

pub use discrete::{brute_force_query, DiscreteScm, Evidence, QueryMode};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnRole, ColumnSpec, ColumnType, Dataset, DatasetBuilder, DatasetError};
use crate::learner::sigmoid;

/// Protected/demographic/proxy/target column names in sampled datasets.
pub const A_COLUMN: &str = "a";
pub const P_COLUMN: &str = "p";
pub const Y_COLUMN: &str = "y";

/// A bin qualifies for the independence audit only when both protected
/// groups have at least this many rows in it.
pub const MIN_GROUP_ROWS_PER_BIN: usize = 500;

/// Default bin count for [`check_ci`]. Six equal-count bins keep several
/// thousand rows of each group per bin at typical audit sizes (200k rows,
/// 20% protected), so a three-sigma binomial bound on any per-bin rate
/// gap stays within 0.02.
pub const DEFAULT_CI_BINS: usize = 6;

const SAMPLE_BLOCK_ROWS: usize = 8192;

pub fn xz_name(i: usize) -> String {
    format!("xz{}", i + 1)
}

pub fn xw_name(i: usize) -> String {
    format!("xw{}", i + 1)
}

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("not discrete: {0}")]
    NotDiscrete(String),
    #[error("state space too large: {states} states exceed {max}")]
    StateSpaceTooLarge { states: u128, max: u128 },
    #[error("hidden ground-truth columns are required for this check")]
    NoHiddenColumns,
    #[error("evidence out of range: {0}")]
    BadEvidence(String),
    #[error("evidence has zero probability under the model")]
    ZeroMassEvidence,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl ScmError {
    pub fn kind(&self) -> &'static str {
        match self {
            ScmError::InvalidSpec(_) => "InvalidSpec",
            ScmError::NotDiscrete(_) => "NotDiscrete",
            ScmError::StateSpaceTooLarge { .. } => "StateSpaceTooLarge",
            ScmError::NoHiddenColumns => "NoHiddenColumns",
            ScmError::BadEvidence(_) => "BadEvidence",
            ScmError::ZeroMassEvidence => "ZeroMassEvidence",
            ScmError::Dataset(e) => e.kind(),
        }
    }
}

/// W = beta_z[Z] + beta_a * A + Normal(0, sigma_w).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WCoeffs {
    pub beta_z: Vec<f64>,
    pub beta_a: f64,
    pub sigma_w: f64,
}

/// Y ~ Bernoulli(logistic(gamma0 - gamma1 * W)); gamma1 >= 0 makes higher
/// creditworthiness mean lower default probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YLink {
    pub gamma0: f64,
    pub gamma1: f64,
}

/// Causal role the pure proxy P gets in sampled datasets. Alternative lets
/// proxy screening demonstrate catching it; Excluded removes it up front.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyRole {
    #[default]
    Alternative,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScmSpec {
    /// P(A = 1); group 1 is the protected group.
    pub a_prior: f64,
    /// Two rows (A = 0, A = 1), one probability per Z level.
    pub z_given_a: Vec<Vec<f64>>,
    pub w_coeffs: WCoeffs,
    /// Two rows (A = 0, A = 1), one probability per P level.
    pub p_given_a: Vec<Vec<f64>>,
    /// Noise scale of each traditional observation XW_j = W + noise.
    pub xw_noise: Vec<f64>,
    /// Per alternative observation, a row-stochastic misclassification
    /// matrix: xz_confusion[i][true z][observed].
    pub xz_confusion: Vec<Vec<Vec<f64>>>,
    pub y_link: YLink,
    pub p_role: ProxyRole,
}

impl Default for ScmSpec {
    fn default() -> Self {
        let confusion: Vec<Vec<f64>> = (0..4)
            .map(|z| (0..4).map(|o| if o == z { 0.85 } else { 0.05 }).collect())
            .collect();
        ScmSpec {
            a_prior: 0.2,
            z_given_a: vec![vec![0.4, 0.3, 0.2, 0.1], vec![0.1, 0.2, 0.3, 0.4]],
            w_coeffs: WCoeffs {
                beta_z: vec![0.0, 0.5, 1.0, 1.5],
                beta_a: -0.5,
                sigma_w: 1.0,
            },
            p_given_a: vec![vec![0.6, 0.3, 0.1], vec![0.1, 0.3, 0.6]],
            // Noisy enough that the alternative observations carry real
            // incremental ranking signal over the traditional ones; this
            // is what separates the three model modes at desk scale.
            xw_noise: vec![1.5, 2.0, 2.5],
            xz_confusion: vec![confusion.clone(), confusion],
            y_link: YLink {
                gamma0: -1.0,
                gamma1: 1.5,
            },
            p_role: ProxyRole::Alternative,
        }
    }
}

fn is_distribution(row: &[f64]) -> bool {
    !row.is_empty()
        && row.iter().all(|&p| (0.0..=1.0).contains(&p))
        && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12
}

impl ScmSpec {
    pub fn n_z_levels(&self) -> usize {
        self.z_given_a.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn n_p_levels(&self) -> usize {
        self.p_given_a.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), ScmError> {
        let bad = |msg: String| Err(ScmError::InvalidSpec(msg));
        if !(0.0..=1.0).contains(&self.a_prior) {
            return bad(format!("a_prior {} outside [0, 1]", self.a_prior));
        }
        let m = self.n_z_levels();
        if self.z_given_a.len() != 2 || m < 2 {
            return bad("z_given_a needs two rows with at least two levels".to_string());
        }
        for row in &self.z_given_a {
            if row.len() != m || !is_distribution(row) {
                return bad(format!("z_given_a row {row:?} is not a distribution"));
            }
        }
        if self.w_coeffs.beta_z.len() != m {
            return bad(format!(
                "beta_z has {} entries for {m} Z levels",
                self.w_coeffs.beta_z.len()
            ));
        }
        if self.w_coeffs.sigma_w.is_nan() || self.w_coeffs.sigma_w < 0.0 {
            return bad("sigma_w must be >= 0".to_string());
        }
        let p_levels = self.n_p_levels();
        if self.p_given_a.len() != 2 || p_levels == 0 {
            return bad("p_given_a needs two non-empty rows".to_string());
        }
        for row in &self.p_given_a {
            if row.len() != p_levels || !is_distribution(row) {
                return bad(format!("p_given_a row {row:?} is not a distribution"));
            }
        }
        if !self.xw_noise.iter().all(|&s| s >= 0.0) {
            return bad("xw_noise scales must be >= 0".to_string());
        }
        for (i, matrix) in self.xz_confusion.iter().enumerate() {
            if matrix.len() != m {
                return bad(format!("xz_confusion[{i}] must have one row per Z level"));
            }
            for row in matrix {
                if row.len() != m || !is_distribution(row) {
                    return bad(format!(
                        "xz_confusion[{i}] row {row:?} is not a distribution"
                    ));
                }
            }
        }
        if self.y_link.gamma1.is_nan() || self.y_link.gamma1 < 0.0 {
            return bad("gamma1 must be >= 0".to_string());
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialization cannot fail")
    }

    /// Schema of datasets produced by [`sample`].
    pub fn schema(&self) -> crate::dataset::Schema {
        build_schema(
            self.n_z_levels(),
            self.xz_confusion.len(),
            self.xw_noise.len(),
            self.n_p_levels(),
            self.p_role,
        )
    }
}

/// Ground-truth values that must never enter a feature set; carried beside
/// the dataset rather than inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenColumns {
    pub w: Vec<f64>,
    pub z: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmSample {
    pub data: Dataset,
    pub hidden: HiddenColumns,
}

/// One block of sampled rows in column form; also the merged result.
#[derive(Default)]
struct Block {
    a: Vec<u32>,
    z: Vec<u32>,
    w: Vec<f64>,
    p: Vec<u32>,
    xz: Vec<Vec<u32>>,
    xw: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Block {
    fn with_capacity(k_z: usize, k_w: usize, rows: usize) -> Self {
        Block {
            a: Vec::with_capacity(rows),
            z: Vec::with_capacity(rows),
            w: Vec::with_capacity(rows),
            p: Vec::with_capacity(rows),
            xz: vec![Vec::with_capacity(rows); k_z],
            xw: vec![Vec::with_capacity(rows); k_w],
            y: Vec::with_capacity(rows),
        }
    }
}

fn draw_categorical(rng: &mut ChaCha12Rng, dist: &[f64]) -> u32 {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        cum += p;
        if u < cum {
            return i as u32;
        }
    }
    (dist.len() - 1) as u32
}

/// Samples n rows in fixed-size blocks, each on its own PRNG substream
/// keyed by (seed, block index), then merges in block order. The output is
/// therefore identical at any thread count.
fn sample_blocks(
    k_z: usize,
    k_w: usize,
    n: usize,
    seed: u64,
    row: impl Fn(&mut ChaCha12Rng, &mut Block) + Sync,
) -> Block {
    let n_blocks = n.div_ceil(SAMPLE_BLOCK_ROWS);
    let blocks: Vec<Block> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let rows = SAMPLE_BLOCK_ROWS.min(n - b * SAMPLE_BLOCK_ROWS);
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut out = Block::with_capacity(k_z, k_w, rows);
            for _ in 0..rows {
                row(&mut rng, &mut out);
            }
            out
        })
        .collect();

    let mut merged = Block::with_capacity(k_z, k_w, n);
    for block in blocks {
        merged.a.extend(block.a);
        merged.z.extend(block.z);
        merged.w.extend(block.w);
        merged.p.extend(block.p);
        merged.y.extend(block.y);
        for (dst, src) in merged.xz.iter_mut().zip(block.xz) {
            dst.extend(src);
        }
        for (dst, src) in merged.xw.iter_mut().zip(block.xw) {
            dst.extend(src);
        }
    }
    merged
}

/// Builds the visible dataset plus hidden side columns out of sampled rows.
fn block_to_sample(schema: crate::dataset::Schema, block: Block) -> Result<ScmSample, ScmError> {
    let n = block.a.len();
    let mut builder = DatasetBuilder::new(schema)
        .categorical_column(A_COLUMN, block.a, vec![false; n])
        .categorical_column(P_COLUMN, block.p, vec![false; n])
        .numeric_column(Y_COLUMN, block.y, vec![false; n]);
    for (i, xz) in block.xz.into_iter().enumerate() {
        builder = builder.categorical_column(&xz_name(i), xz, vec![false; n]);
    }
    for (j, xw) in block.xw.into_iter().enumerate() {
        builder = builder.numeric_column(&xw_name(j), xw, vec![false; n]);
    }
    Ok(ScmSample {
        data: builder.build()?,
        hidden: HiddenColumns {
            w: block.w,
            z: block.z,
        },
    })
}

/// Column layout shared by the continuous and discrete samplers.
fn build_schema(
    m: usize,
    k_z: usize,
    k_w: usize,
    p_levels: usize,
    p_role: ProxyRole,
) -> crate::dataset::Schema {
    let level_names = |k: usize| (0..k).map(|i| i.to_string()).collect::<Vec<_>>();
    let mut columns = vec![ColumnSpec::new(
        A_COLUMN,
        ColumnType::Categorical(level_names(2)),
        ColumnRole::Protected,
    )];
    for i in 0..k_z {
        columns.push(ColumnSpec::new(
            xz_name(i),
            ColumnType::Categorical(level_names(m)),
            ColumnRole::Alternative,
        ));
    }
    for j in 0..k_w {
        columns.push(ColumnSpec::new(
            xw_name(j),
            ColumnType::Numeric,
            ColumnRole::Traditional,
        ));
    }
    columns.push(ColumnSpec::new(
        P_COLUMN,
        ColumnType::Categorical(level_names(p_levels)),
        match p_role {
            ProxyRole::Alternative => ColumnRole::Alternative,
            ProxyRole::Excluded => ColumnRole::Excluded,
        },
    ));
    columns.push(ColumnSpec::new(
        Y_COLUMN,
        ColumnType::Numeric,
        ColumnRole::Target,
    ));
    crate::dataset::Schema::new(columns).expect("generated schema is valid")
}

/// Draws n rows by ancestral sampling in the graph's topological order.
/// Deterministic per seed at any thread count.
pub fn sample(spec: &ScmSpec, n: usize, seed: u64) -> Result<ScmSample, ScmError> {
    spec.validate()?;
    let w_noise = (spec.w_coeffs.sigma_w > 0.0)
        .then(|| Normal::new(0.0, spec.w_coeffs.sigma_w).expect("validated sigma"));
    let xw_noise: Vec<Option<Normal<f64>>> = spec
        .xw_noise
        .iter()
        .map(|&s| (s > 0.0).then(|| Normal::new(0.0, s).expect("validated sigma")))
        .collect();

    let block = sample_blocks(
        spec.xz_confusion.len(),
        spec.xw_noise.len(),
        n,
        seed,
        |rng, out| {
            let a = u32::from(rng.random::<f64>() < spec.a_prior);
            let z = draw_categorical(rng, &spec.z_given_a[a as usize]);
            let mut w = spec.w_coeffs.beta_z[z as usize] + spec.w_coeffs.beta_a * a as f64;
            if let Some(noise) = &w_noise {
                w += noise.sample(rng);
            }
            let p = draw_categorical(rng, &spec.p_given_a[a as usize]);
            for (i, xz) in out.xz.iter_mut().enumerate() {
                xz.push(draw_categorical(rng, &spec.xz_confusion[i][z as usize]));
            }
            for (j, xw) in out.xw.iter_mut().enumerate() {
                let mut v = w;
                if let Some(noise) = &xw_noise[j] {
                    v += noise.sample(rng);
                }
                xw.push(v);
            }
            let p_default = sigmoid(spec.y_link.gamma0 - spec.y_link.gamma1 * w);
            let y = f64::from(rng.random::<f64>() < p_default);
            out.a.push(a);
            out.z.push(z);
            out.w.push(w);
            out.p.push(p);
            out.y.push(y);
        },
    );
    block_to_sample(spec.schema(), block)
}

/// Outcome of the conditional-independence audit of Y and A given W.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CiReport {
    /// Largest |P(Y=1 | A=1, bin) - P(Y=1 | A=0, bin)| over qualifying
    /// bins; None when no bin qualifies.
    pub max_gap: Option<f64>,
    pub qualifying_bins: usize,
    pub total_bins: usize,
}

/// Bins rows by hidden W (equal-count quantile bins) and reports the
/// largest per-bin default-rate gap between protected groups. Equal-count
/// bins keep every audited bin's group sizes large, so the max gap is
/// governed by binomial noise at those sizes rather than by which tail
/// bin happened to stay populated. Under the generating graph the gap
/// shrinks with sample size; a persistent gap indicates a direct effect
/// of A on Y.
pub fn check_ci(sample: &ScmSample, bins: usize) -> Result<CiReport, ScmError> {
    let a_col = sample
        .data
        .schema()
        .column_index(A_COLUMN)
        .ok_or(ScmError::NoHiddenColumns)?;
    let a = sample
        .data
        .categorical(a_col)
        .ok_or(ScmError::NoHiddenColumns)?;
    let y = sample.data.labels();
    check_ci_parts(a, &y, Some(&sample.hidden.w), bins)
}

/// Lower-level form of [`check_ci`]; `w: None` means the hidden column is
/// unavailable and is an error.
pub fn check_ci_parts(
    a: &[u32],
    y: &[u8],
    w: Option<&[f64]>,
    bins: usize,
) -> Result<CiReport, ScmError> {
    let w = w.ok_or(ScmError::NoHiddenColumns)?;
    if w.len() != a.len() || y.len() != a.len() {
        return Err(ScmError::NoHiddenColumns);
    }
    if bins < 2 {
        return Err(ScmError::InvalidSpec(format!(
            "bins must be >= 2, got {bins}"
        )));
    }
    let n = w.len();
    let mut sorted = w.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cuts = Vec::with_capacity(bins - 1);
    for k in 1..bins {
        let c = sorted[k * n / bins];
        if cuts.last().is_none_or(|&last| c > last) {
            cuts.push(c);
        }
    }
    let total_bins = cuts.len() + 1;

    // per bin: [a][y] counts
    let mut counts = vec![[[0usize; 2]; 2]; total_bins];
    for i in 0..n {
        let bin = cuts.partition_point(|&c| c < w[i]);
        counts[bin][a[i].min(1) as usize][y[i] as usize] += 1;
    }
    let mut max_gap: Option<f64> = None;
    let mut qualifying = 0;
    for bin_counts in &counts {
        let n0 = bin_counts[0][0] + bin_counts[0][1];
        let n1 = bin_counts[1][0] + bin_counts[1][1];
        if n0 < MIN_GROUP_ROWS_PER_BIN || n1 < MIN_GROUP_ROWS_PER_BIN {
            continue;
        }
        qualifying += 1;
        let rate0 = bin_counts[0][1] as f64 / n0 as f64;
        let rate1 = bin_counts[1][1] as f64 / n1 as f64;
        let gap = (rate1 - rate0).abs();
        if max_gap.is_none_or(|g| gap > g) {
            max_gap = Some(gap);
        }
    }
    Ok(CiReport {
        max_gap,
        qualifying_bins: qualifying,
        total_bins,
    })
}
