//! Python bindings for the fairlend pipeline.
//!
//! Exposes the tabular container, the three model modes, proxy screening,
//! evaluation, and the seeded experiment runner. Reports and configs cross
//! the boundary as JSON strings in the same formats the CLI reads and
//! writes, so artifacts are interchangeable between the two.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyList;

use fairlend::dataset::{self, Dataset, Schema};
use fairlend::eval;
use fairlend::learner::{AnyModel, GbdtParams, LogisticFeature};
use fairlend::pipeline::{train_pipeline, DecisionPolicy, ModelMode, PipelineModel};
use fairlend::scm::{self, ScmSpec, DEFAULT_CI_BINS};
use fairlend::screening::{screen_proxies, GroupSpec, ScreeningReport};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_spec(spec_json: Option<&str>) -> PyResult<ScmSpec> {
    match spec_json {
        Some(json) => ScmSpec::from_json(json).map_err(value_err),
        None => Ok(ScmSpec::default()),
    }
}

fn parse_policy(policy_json: Option<&str>) -> PyResult<DecisionPolicy> {
    match policy_json {
        Some(json) => DecisionPolicy::from_json(json).map_err(value_err),
        None => Ok(DecisionPolicy::default()),
    }
}

/// A typed table: named columns with roles, numeric or categorical values,
/// and per-cell missingness.
#[pyclass]
struct Frame {
    data: Dataset,
}

#[pymethods]
impl Frame {
    /// Load a CSV against a schema JSON file.
    #[staticmethod]
    fn from_csv(schema_path: &str, data_path: &str) -> PyResult<Frame> {
        let schema = Schema::load(schema_path).map_err(value_err)?;
        let data = dataset::load_csv(data_path, &schema).map_err(value_err)?;
        Ok(Frame { data })
    }

    /// Prepare a raw mortgage survey export: derives the race and default
    /// columns and assigns roles.
    #[staticmethod]
    fn from_survey(path: &str) -> PyResult<Frame> {
        Ok(Frame {
            data: dataset::prepare_nsmo(path).map_err(value_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.data.n_rows()
    }

    fn column_names(&self) -> Vec<String> {
        self.data
            .schema()
            .columns()
            .iter()
            .map(|c| c.name.clone())
            .collect()
    }

    fn schema_json(&self) -> String {
        self.data.schema().to_json()
    }

    /// One column as a Python list; missing cells come back as None,
    /// categorical values as their level names.
    fn column<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyList>> {
        let col = self
            .data
            .schema()
            .column_index(name)
            .ok_or_else(|| value_err(format!("no column named {name}")))?;
        let missing = self.data.missing_mask(col);
        let out = PyList::empty(py);
        if let Some(values) = self.data.numeric(col) {
            for (v, miss) in values.iter().zip(missing) {
                if *miss {
                    out.append(py.None())?;
                } else {
                    out.append(*v)?;
                }
            }
        } else {
            let levels = self
                .data
                .schema()
                .column(col)
                .ty
                .levels()
                .expect("categorical");
            let values = self.data.categorical(col).expect("categorical");
            for (v, miss) in values.iter().zip(missing) {
                if *miss {
                    out.append(py.None())?;
                } else {
                    out.append(levels[*v as usize].as_str())?;
                }
            }
        }
        Ok(out)
    }

    /// Target column as 0/1 integers.
    fn labels(&self) -> Vec<u8> {
        self.data.labels()
    }

    /// Seeded shuffle split into (train, test).
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(Frame, Frame)> {
        let (train, test) = dataset::split(&self.data, test_fraction, seed).map_err(value_err)?;
        Ok((Frame { data: train }, Frame { data: test }))
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        dataset::write_csv(&self.data, path).map_err(value_err)
    }

    fn save_schema(&self, path: &str) -> PyResult<()> {
        self.data.schema().save(path).map_err(value_err)
    }
}

/// One trained scoring model with its inference rule baked in.
#[pyclass]
struct Model {
    inner: PipelineModel,
}

#[pymethods]
impl Model {
    /// Train a model on a frame.
    ///
    /// `mode` is "awareness", "unawareness", or "counterfactual";
    /// unawareness requires `screening_json`, the report produced by
    /// [`screen`]. `params_json` defaults to the standard boosting
    /// parameters.
    #[staticmethod]
    #[pyo3(signature = (frame, mode, params_json=None, screening_json=None))]
    fn train(
        frame: &Frame,
        mode: &str,
        params_json: Option<&str>,
        screening_json: Option<&str>,
    ) -> PyResult<Model> {
        let mode: ModelMode = mode.parse().map_err(value_err)?;
        let params: GbdtParams = match params_json {
            Some(json) => serde_json::from_str(json).map_err(value_err)?,
            None => GbdtParams::default(),
        };
        let screening: Option<ScreeningReport> = match screening_json {
            Some(json) => Some(serde_json::from_str(json).map_err(value_err)?),
            None => None,
        };
        let inner =
            train_pipeline(&frame.data, mode, &params, screening.as_ref()).map_err(value_err)?;
        Ok(Model { inner })
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.mode.name()
    }

    /// Source column names the model consumes, in schema order.
    fn features(&self) -> Vec<String> {
        match &self.inner.model {
            AnyModel::Gbdt(m) => m.feature_names(),
            AnyModel::Logistic(m) => {
                let mut names: Vec<String> = Vec::new();
                for f in &m.features {
                    let name = match f {
                        LogisticFeature::Numeric { name } => name,
                        LogisticFeature::Level { name, .. } => name,
                    };
                    if !names.contains(name) {
                        names.push(name.clone());
                    }
                }
                names
            }
        }
    }

    /// Per-row default probabilities under this model's inference rule.
    #[pyo3(signature = (frame, policy_json=None))]
    fn score(&self, frame: &Frame, policy_json: Option<&str>) -> PyResult<Vec<f64>> {
        let policy = parse_policy(policy_json)?;
        self.inner
            .score_dataset(&frame.data, &policy)
            .map_err(value_err)
    }

    /// Per-row approve/deny decisions under a policy.
    #[pyo3(signature = (frame, policy_json=None))]
    fn decide(&self, frame: &Frame, policy_json: Option<&str>) -> PyResult<Vec<bool>> {
        let policy = parse_policy(policy_json)?;
        let scores = self
            .inner
            .score_dataset(&frame.data, &policy)
            .map_err(value_err)?;
        Ok(scores
            .iter()
            .map(|&s| fairlend::pipeline::decide(s, &policy))
            .collect())
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Model> {
        Ok(Model {
            inner: PipelineModel::load(path).map_err(value_err)?,
        })
    }
}

/// The default synthetic generator spec as editable JSON.
#[pyfunction]
fn default_spec() -> String {
    ScmSpec::default().to_json()
}

/// Draw a seeded sample from the synthetic generator.
#[pyfunction]
#[pyo3(signature = (n, seed, spec_json=None))]
fn simulate(n: usize, seed: u64, spec_json: Option<&str>) -> PyResult<Frame> {
    let spec = parse_spec(spec_json)?;
    Ok(Frame {
        data: scm::sample(&spec, n, seed).map_err(value_err)?.data,
    })
}

/// Sample the generator and test whether outcomes depend on the protected
/// attribute beyond creditworthiness. Returns (max_gap, qualifying_bins,
/// total_bins); max_gap is None when no bin has enough of both groups.
#[pyfunction]
#[pyo3(signature = (n, seed, spec_json=None, bins=None))]
fn independence_audit(
    n: usize,
    seed: u64,
    spec_json: Option<&str>,
    bins: Option<usize>,
) -> PyResult<(Option<f64>, usize, usize)> {
    let spec = parse_spec(spec_json)?;
    let sample = scm::sample(&spec, n, seed).map_err(value_err)?;
    let report = scm::check_ci(&sample, bins.unwrap_or(DEFAULT_CI_BINS)).map_err(value_err)?;
    Ok((report.max_gap, report.qualifying_bins, report.total_bins))
}

/// Correlation-screen the alternative features against one protected group
/// level. Returns the screening report as JSON.
#[pyfunction]
#[pyo3(signature = (frame, group_column, group_level, threshold=0.05))]
fn screen(
    frame: &Frame,
    group_column: &str,
    group_level: &str,
    threshold: f64,
) -> PyResult<String> {
    let report = screen_proxies(
        &frame.data,
        &GroupSpec::new(group_column, group_level),
        threshold,
    )
    .map_err(value_err)?;
    serde_json::to_string_pretty(&report).map_err(value_err)
}

/// Area under the ROC curve with exact tie handling; labels are 0/1.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    eval::auc(&scores, &labels).map_err(value_err)
}

/// Paired two-sided t-test. Returns (t_statistic, p_value,
/// mean_difference); the statistic is None for degenerate inputs.
#[pyfunction]
fn significance(a: Vec<f64>, b: Vec<f64>) -> PyResult<(Option<f64>, f64, f64)> {
    let s = eval::significance(&a, &b).map_err(value_err)?;
    Ok((s.t_statistic, s.p_value, s.mean_difference))
}

/// Run the full multi-seed comparison described by an experiment config.
/// Returns the result as JSON; deterministic at any thread count.
#[pyfunction]
fn run_experiment(config_json: &str) -> PyResult<String> {
    let config = eval::ExperimentConfig::from_json(config_json).map_err(value_err)?;
    Ok(eval::run_experiment(&config).map_err(value_err)?.to_json())
}

/// Render an experiment result JSON as the human-readable table.
#[pyfunction]
fn render_report(result_json: &str) -> PyResult<String> {
    Ok(eval::ExperimentResult::from_json(result_json)
        .map_err(value_err)?
        .render_table())
}

#[pymodule]
fn fairlend_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Frame>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(default_spec, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(independence_audit, m)?)?;
    m.add_function(wrap_pyfunction!(screen, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(significance, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(render_report, m)?)?;
    Ok(())
}
