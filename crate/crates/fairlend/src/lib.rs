//! Causal debiasing pipeline for credit underwriting.
//!
//! The crate trains credit risk models on data whose columns carry causal
//! roles (protected attribute, traditional creditworthiness measures,
//! candidate alternative data) and removes the influence a protected
//! attribute exerts through proxies. It provides:
//!
//! - [`dataset`]: role-tagged tabular data, CSV I/O, deterministic splits.
//! - [`scm`]: a configurable structural causal model for synthetic credit
//!   data with ground truth, plus an exact enumeration oracle for
//!   interventional queries.
//! - [`screening`]: correlation-based proxy detection, overlap (positivity)
//!   testing, and value-level remediation.
//! - [`learner`]: a histogram gradient-boosted tree classifier and a
//!   logistic regression baseline, both deterministic per seed.
//! - [`pipeline`]: the three model modes (awareness, unawareness,
//!   counterfactual) behind one train/score interface, including the
//!   protected-attribute substitution at inference time.
//! - [`eval`]: AUC, group-wise discrimination reports, paired significance
//!   tests, and the multi-seed experiment runner.
//! - [`cli`]: the `fairlend` command line.

pub mod cli;
pub mod dataset;
pub mod eval;
pub mod learner;
pub mod pipeline;
pub mod scm;
pub mod screening;

pub use dataset::{
    kfold, load_csv, prepare_nsmo, split, write_csv, ColumnRole, ColumnSpec, ColumnType, Dataset,
    DatasetBuilder, DatasetError, Schema, Value, OTHER_LEVEL,
};
