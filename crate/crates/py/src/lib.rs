//! Python bindings: cohorts, estimators, learners, attributions, radiomics
//! and the end-to-end pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use survkit_core::boosting::{fit_boosted as core_fit_boosted, BoostMode, BoostParams, BoostedModel};
use survkit_core::coxph::{fit_cox as core_fit_cox, CoxModel, CoxOptions, Ties};
use survkit_core::data::{
    generate_synthetic, load_cohort, save_cohort, zscore_normalize, Cohort, SurvivalData, SyntheticSpec,
};
use survkit_core::explain::exact_shapley;
use survkit_core::metrics;
use survkit_core::nonparametric::{self, StepFunction};
use survkit_core::pipeline::{self, PipelineConfig};
use survkit_core::radiomics::{self, RegionMask, VoxelGrid};
use survkit_core::rsf::{fit_rsf as core_fit_rsf, Forest, ForestParams};
use survkit_core::{RiskModel, SurvError};

fn py_err(e: SurvError) -> PyErr {
    match e {
        SurvError::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn survival_data(x: Vec<Vec<f64>>, time: Vec<f64>, event: Vec<bool>) -> PyResult<SurvivalData> {
    SurvivalData::from_rows(&x, time, event).map_err(py_err)
}

fn step(f: &StepFunction) -> (Vec<f64>, Vec<f64>) {
    (f.knots().to_vec(), f.values().to_vec())
}

/// `(phi, baseline, value)` for any risk model.
fn shapley(model: &dyn RiskModel, x: &[f64], background: &[f64]) -> PyResult<(Vec<f64>, f64, f64)> {
    let a = exact_shapley(model, x, background).map_err(py_err)?;
    Ok((a.phi, a.baseline, a.value))
}

#[pyclass(name = "Cohort", module = "survkit", from_py_object)]
#[derive(Clone)]
pub struct PyCohort {
    inner: Cohort,
}

#[pymethods]
impl PyCohort {
    #[staticmethod]
    fn from_csv(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_cohort(path, None).map_err(py_err)?,
        })
    }

    fn to_csv(&self, path: PathBuf) -> PyResult<()> {
        save_cohort(&self.inner, path).map_err(py_err)
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names.clone()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids()
    }

    fn times(&self) -> Vec<f64> {
        self.inner.times()
    }

    fn events(&self) -> Vec<bool> {
        self.inner.events()
    }

    /// Feature rows in subject order.
    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.records.iter().map(|r| r.features.clone()).collect()
    }

    /// Copy with every non-constant column standardized.
    fn zscore(&self) -> PyResult<Self> {
        Ok(Self {
            inner: zscore_normalize(&self.inner).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let events = self.inner.events().iter().filter(|&&e| e).count();
        format!(
            "Cohort(n={}, events={events}, features={})",
            self.inner.len(),
            self.inner.n_features()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (n, coefficients, weibull_shape=1.5, weibull_scale=10.0, censoring=0.3, nonlinear=false, seed=0))]
fn simulate(
    n: usize,
    coefficients: Vec<f64>,
    weibull_shape: f64,
    weibull_scale: f64,
    censoring: f64,
    nonlinear: bool,
    seed: u64,
) -> PyResult<(PyCohort, Vec<f64>)> {
    let spec = SyntheticSpec {
        n,
        true_coefficients: coefficients,
        weibull_shape,
        weibull_scale,
        censoring_rate_target: censoring,
        nonlinear,
        seed,
        feature_names: None,
    };
    let (cohort, eta) = generate_synthetic(&spec).map_err(py_err)?;
    Ok((PyCohort { inner: cohort }, eta))
}

#[pyfunction]
fn kaplan_meier(times: Vec<f64>, events: Vec<bool>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    Ok(step(&nonparametric::kaplan_meier(&times, &events).map_err(py_err)?))
}

#[pyfunction]
fn nelson_aalen(times: Vec<f64>, events: Vec<bool>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    Ok(step(&nonparametric::nelson_aalen(&times, &events).map_err(py_err)?))
}

/// `(chi_square, p_value)` of the two-sample log-rank test.
#[pyfunction]
fn log_rank(times_a: Vec<f64>, events_a: Vec<bool>, times_b: Vec<f64>, events_b: Vec<bool>) -> PyResult<(f64, f64)> {
    let r = nonparametric::log_rank((&times_a, &events_a), (&times_b, &events_b)).map_err(py_err)?;
    Ok((r.chi_square, r.p_value))
}

#[pyfunction]
fn c_index(times: Vec<f64>, events: Vec<bool>, scores: Vec<f64>) -> PyResult<f64> {
    Ok(metrics::c_index(&times, &events, &scores).map_err(py_err)?.c_index)
}

/// IPCW Brier score at `t` with censoring weights from the same sample.
#[pyfunction]
fn brier(t: f64, survival: Vec<f64>, times: Vec<f64>, events: Vec<bool>) -> PyResult<f64> {
    let g = metrics::censoring_survival(&times, &events).map_err(py_err)?;
    metrics::brier(t, &survival, &times, &events, &g).map_err(py_err)
}

#[pyclass(name = "CoxModel", module = "survkit", frozen)]
pub struct PyCoxModel {
    inner: CoxModel,
}

#[pymethods]
impl PyCoxModel {
    #[getter]
    fn coefficients(&self) -> Vec<f64> {
        self.inner.coefficients.clone()
    }

    #[getter]
    fn std_errors(&self) -> Vec<f64> {
        self.inner.std_errors()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    fn risk(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.linear_predictor(&x).map_err(py_err)
    }

    fn survival(&self, x: Vec<f64>, t: f64) -> PyResult<f64> {
        self.inner.survival(&x, t).map_err(py_err)
    }

    fn shapley(&self, x: Vec<f64>, background: Vec<f64>) -> PyResult<(Vec<f64>, f64, f64)> {
        shapley(&self.inner, &x, &background)
    }
}

#[pyfunction]
#[pyo3(signature = (x, time, event, ties="efron"))]
fn fit_cox(x: Vec<Vec<f64>>, time: Vec<f64>, event: Vec<bool>, ties: &str) -> PyResult<PyCoxModel> {
    let ties = match ties {
        "efron" => Ties::Efron,
        "breslow" => Ties::Breslow,
        other => return Err(PyValueError::new_err(format!("unknown ties method {other:?}"))),
    };
    let data = survival_data(x, time, event)?;
    let opts = CoxOptions {
        ties,
        ..Default::default()
    };
    Ok(PyCoxModel {
        inner: core_fit_cox(&data, &opts).map_err(py_err)?,
    })
}

#[pyclass(name = "BoostedModel", module = "survkit", frozen)]
pub struct PyBoostedModel {
    inner: BoostedModel,
}

#[pymethods]
impl PyBoostedModel {
    #[getter]
    fn loss_trace(&self) -> Vec<f64> {
        self.inner.training_loss_trace.clone()
    }

    #[getter]
    fn n_learners(&self) -> usize {
        self.inner.learners.len()
    }

    fn risk(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.predict_risk(&x).map_err(py_err)
    }

    fn shapley(&self, x: Vec<f64>, background: Vec<f64>) -> PyResult<(Vec<f64>, f64, f64)> {
        shapley(&self.inner, &x, &background)
    }
}

#[pyfunction]
#[pyo3(signature = (x, time, event, mode="xgboost", rounds=200, learning_rate=0.1, tree_depth=3, seed=0))]
#[allow(clippy::too_many_arguments)]
fn fit_boosted(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    time: Vec<f64>,
    event: Vec<bool>,
    mode: &str,
    rounds: usize,
    learning_rate: f64,
    tree_depth: usize,
    seed: u64,
) -> PyResult<PyBoostedModel> {
    let mode = match mode {
        "xgboost" => BoostMode::Xgboost,
        "gbm" => BoostMode::Gbm,
        "componentwise" => BoostMode::Componentwise,
        other => return Err(PyValueError::new_err(format!("unknown boosting mode {other:?}"))),
    };
    let data = survival_data(x, time, event)?;
    let params = BoostParams {
        mode,
        rounds,
        learning_rate,
        tree_depth,
        seed,
        ..Default::default()
    };
    let inner = py.detach(|| core_fit_boosted(&data, &params)).map_err(py_err)?;
    Ok(PyBoostedModel { inner })
}

#[pyclass(name = "Forest", module = "survkit", frozen)]
pub struct PyForest {
    inner: Forest,
}

#[pymethods]
impl PyForest {
    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.trees.len()
    }

    /// Ensemble cumulative hazard at the training horizon.
    fn risk(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.risk_score(&x).map_err(py_err)
    }

    /// Ensemble survival curve as `(knots, values)`.
    fn survival(&self, x: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
        Ok(step(&self.inner.predict_survival(&x).map_err(py_err)?))
    }

    fn shapley(&self, x: Vec<f64>, background: Vec<f64>) -> PyResult<(Vec<f64>, f64, f64)> {
        shapley(&self.inner, &x, &background)
    }
}

#[pyfunction]
#[pyo3(signature = (x, time, event, n_trees=500, min_node_events=3, seed=0))]
fn fit_rsf(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    time: Vec<f64>,
    event: Vec<bool>,
    n_trees: usize,
    min_node_events: usize,
    seed: u64,
) -> PyResult<PyForest> {
    let data = survival_data(x, time, event)?;
    let params = ForestParams {
        n_trees,
        min_node_events,
        seed,
        ..Default::default()
    };
    let inner = py.detach(|| core_fit_rsf(&data, &params)).map_err(py_err)?;
    Ok(PyForest { inner })
}

/// Radiomic features of a masked grid; `intensities` and `mask` are in
/// x-fastest order.
#[pyfunction]
#[pyo3(signature = (intensities, dims, mask=None, spacing=(1.0, 1.0, 1.0), levels=radiomics::DEFAULT_LEVELS))]
fn extract_features(
    intensities: Vec<f64>,
    dims: (usize, usize, usize),
    mask: Option<Vec<bool>>,
    spacing: (f64, f64, f64),
    levels: usize,
) -> PyResult<BTreeMap<String, f64>> {
    let dims = [dims.0, dims.1, dims.2];
    let grid = VoxelGrid::new(dims, [spacing.0, spacing.1, spacing.2], intensities).map_err(py_err)?;
    let mask = match mask {
        Some(m) => RegionMask::new(dims, m).map_err(py_err)?,
        None => RegionMask::full(dims),
    };
    radiomics::extract_features(&grid, &mask, levels).map_err(py_err)
}

/// Runs the pipeline described by a JSON config and returns the report as
/// JSON text; artifacts are written when `out_dir` is given.
#[pyfunction]
#[pyo3(signature = (config_path, out_dir=None, seed=None))]
fn run_pipeline(py: Python<'_>, config_path: PathBuf, out_dir: Option<PathBuf>, seed: Option<u64>) -> PyResult<String> {
    let mut cfg = PipelineConfig::load(&config_path).map_err(py_err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let base = config_path.parent().map(PathBuf::from).unwrap_or_default();
    py.detach(|| {
        let output = pipeline::run_pipeline(&cfg, &base)?;
        if let Some(dir) = &out_dir {
            std::fs::create_dir_all(dir)?;
            pipeline::write_artifacts(&output, dir)?;
        }
        Ok(output.report.to_json())
    })
    .map_err(py_err)
}

#[pymodule]
pub fn survkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyCohort>()?;
    m.add_class::<PyCoxModel>()?;
    m.add_class::<PyBoostedModel>()?;
    m.add_class::<PyForest>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(kaplan_meier, m)?)?;
    m.add_function(wrap_pyfunction!(nelson_aalen, m)?)?;
    m.add_function(wrap_pyfunction!(log_rank, m)?)?;
    m.add_function(wrap_pyfunction!(c_index, m)?)?;
    m.add_function(wrap_pyfunction!(brier, m)?)?;
    m.add_function(wrap_pyfunction!(fit_cox, m)?)?;
    m.add_function(wrap_pyfunction!(fit_boosted, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rsf, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
