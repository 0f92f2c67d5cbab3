//! Python bindings: `import gridmix`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use gridmix::carbon::{self, EmissionFactorTable};
use gridmix::clustering::{self, ClusterModel};
use gridmix::fixture::{Fixture, FixtureConfig};
use gridmix::ingest::{FuelClass, FuelMixRecord, FuelTaxonomy};
use gridmix::pipeline::{self, ConfigFile, PipelineConfig};
use gridmix::{preprocess, stats, Matrix};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(data: &[Vec<f64>]) -> PyResult<Matrix> {
    let cols = data.first().map(Vec::len).unwrap_or(0);
    if data.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(Matrix::from_rows(data))
}

/// A fitted clustering.
#[pyclass(name = "ClusterModel", module = "gridmix", frozen)]
struct PyClusterModel {
    inner: ClusterModel,
}

#[pymethods]
impl PyClusterModel {
    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.as_str()
    }
    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[getter]
    fn centroids(&self) -> Vec<Vec<f64>> {
        self.inner.centroids.clone()
    }
    #[getter]
    fn assignments(&self) -> Vec<usize> {
        self.inner.assignments.clone()
    }
    #[getter]
    fn sse(&self) -> f64 {
        self.inner.sse
    }
    #[getter]
    fn silhouette(&self) -> Option<f64> {
        self.inner.silhouette
    }
    #[getter]
    fn iterations_run(&self) -> usize {
        self.inner.iterations_run
    }
    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }
    #[getter]
    fn bandwidth(&self) -> Option<f64> {
        self.inner.bandwidth
    }
    #[getter]
    fn sse_history(&self) -> Vec<f64> {
        self.inner.sse_history.clone()
    }
    fn populations(&self) -> Vec<usize> {
        self.inner.populations()
    }
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }
    fn __repr__(&self) -> String {
        format!(
            "ClusterModel(method={}, k={}, sse={})",
            self.inner.method.as_str(),
            self.inner.k,
            self.inner.sse
        )
    }
}

fn wrap(m: ClusterModel) -> PyClusterModel {
    PyClusterModel { inner: m }
}

#[pyfunction]
#[pyo3(signature = (data, k, seed = 0, max_iter = 300, tol = 1e-6, n_init = 1))]
fn kmeans(
    data: Vec<Vec<f64>>,
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
    n_init: usize,
) -> PyResult<PyClusterModel> {
    let m = matrix(&data)?;
    let model = if n_init <= 1 {
        clustering::kmeans(&m, k, seed, max_iter, tol)
    } else {
        clustering::kmeans_best_of(&m, k, seed, n_init, max_iter, tol)
    };
    model.map(wrap).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (data, k, seed = 0, batch_size = 256, max_iter = 300))]
fn minibatch_kmeans(
    data: Vec<Vec<f64>>,
    k: usize,
    seed: u64,
    batch_size: usize,
    max_iter: usize,
) -> PyResult<PyClusterModel> {
    clustering::minibatch_kmeans(&matrix(&data)?, k, seed, batch_size, max_iter)
        .map(wrap)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (data, bandwidth = None, quantile = 0.3, seed = 0))]
fn mean_shift(
    data: Vec<Vec<f64>>,
    bandwidth: Option<f64>,
    quantile: f64,
    seed: u64,
) -> PyResult<PyClusterModel> {
    let m = matrix(&data)?;
    let bw = match bandwidth {
        Some(b) => b,
        None => clustering::estimate_bandwidth(&m, quantile).map_err(err)?,
    };
    clustering::mean_shift(&m, bw, seed).map(wrap).map_err(err)
}

#[pyfunction]
fn agglomerative(data: Vec<Vec<f64>>, k: usize) -> PyResult<PyClusterModel> {
    clustering::agglomerative(&matrix(&data)?, k)
        .map(wrap)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (data, quantile = 0.3))]
fn estimate_bandwidth(data: Vec<Vec<f64>>, quantile: f64) -> PyResult<f64> {
    clustering::estimate_bandwidth(&matrix(&data)?, quantile).map_err(err)
}

#[pyfunction]
fn silhouette(data: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    clustering::silhouette(&matrix(&data)?, &labels).map_err(err)
}

#[pyfunction]
fn sse(data: Vec<Vec<f64>>, centroids: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    clustering::sse(&matrix(&data)?, &matrix(&centroids)?, &labels).map_err(err)
}

/// Kneedle on an SSE curve for k = k_start, k_start + 1, ...
/// Returns `(chosen_k, difference_curve, monotone_violation)`.
#[pyfunction]
#[pyo3(signature = (sse, k_start = 1))]
fn knee_locate(sse: Vec<f64>, k_start: usize) -> PyResult<(usize, Vec<f64>, bool)> {
    let curve: Vec<(usize, f64)> = sse.into_iter().enumerate().map(|(i, s)| (k_start + i, s)).collect();
    let r = clustering::knee_locate(&curve).map_err(err)?;
    Ok((r.chosen_k, r.difference, r.monotone_violation))
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stats::pearson(&x, &y).map_err(err)
}

/// Pairwise Pearson r; `None` where a column is constant.
#[pyfunction]
fn correlation_matrix(names: Vec<String>, columns: Vec<Vec<f64>>) -> PyResult<Vec<Vec<Option<f64>>>> {
    if names.len() != columns.len() {
        return Err(PyValueError::new_err("one name per column"));
    }
    stats::correlation_matrix(&names, &columns)
        .map(|m| m.values)
        .map_err(err)
}

#[pyfunction]
fn log2_transform(values: Vec<f64>) -> PyResult<Vec<f64>> {
    preprocess::log2_transform(&values).map_err(err)
}

/// Column-wise min-max scaling. Returns `(scaled, mins, maxs)`.
#[pyfunction]
fn minmax_normalize(data: Vec<Vec<f64>>) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<f64>)> {
    let m = matrix(&data)?;
    let names: Vec<String> = (0..m.cols()).map(|j| format!("c{j}")).collect();
    let (scaled, params) = preprocess::minmax_normalize(&m, &names).map_err(err)?;
    Ok((
        scaled.to_rows(),
        params.columns.iter().map(|c| c.min).collect(),
        params.columns.iter().map(|c| c.max).collect(),
    ))
}

/// `carbon_rich` or `green_renewable` under the default taxonomy.
#[pyfunction]
fn classify_fuel(name: &str) -> PyResult<&'static str> {
    match FuelTaxonomy::default_taxonomy().classify(name).map_err(err)? {
        FuelClass::CarbonRich => Ok("carbon_rich"),
        FuelClass::GreenRenewable => Ok("green_renewable"),
    }
}

/// Default lifecycle factor in gCO2eq/kWh.
#[pyfunction]
fn emission_factor(fuel: &str) -> PyResult<f64> {
    EmissionFactorTable::default_table().factor(fuel).map_err(err)
}

/// Generation-weighted intensity (gCO2eq/kWh) of a `{fuel: MW}` mix.
#[pyfunction]
fn grid_carbon_intensity(generation: BTreeMap<String, f64>) -> PyResult<f64> {
    let record = FuelMixRecord {
        timestamp: Default::default(),
        generation,
    };
    carbon::grid_carbon_intensity(&record, &EmissionFactorTable::default_table()).map_err(err)
}

/// Writes the synthetic fixture year into `directory`.
#[pyfunction]
#[pyo3(signature = (directory, seed = None))]
fn write_fixture(directory: PathBuf, seed: Option<u64>) -> PyResult<()> {
    let mut cfg = FixtureConfig::default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Fixture::generate(cfg).write_to(&directory).map_err(err)
}

/// Runs one CLI stage. `config` is a JSON object with the same flat keys as
/// a config file; the manifest is returned as a JSON string.
#[pyfunction]
fn run_stage(stage: &str, config: &str) -> PyResult<String> {
    let file: ConfigFile = serde_json::from_str(config).map_err(err)?;
    let cfg = PipelineConfig::resolve(file).map_err(|e| PyValueError::new_err(e.to_json().to_string()))?;
    let manifest = pipeline::run_stage(stage, &cfg).map_err(|e| PyValueError::new_err(e.to_json().to_string()))?;
    Ok(manifest.to_string())
}

#[pymodule]
#[pyo3(name = "gridmix")]
fn gridmix_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", pipeline::TOOL_VERSION)?;
    m.add_class::<PyClusterModel>()?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(minibatch_kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(mean_shift, m)?)?;
    m.add_function(wrap_pyfunction!(agglomerative, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(silhouette, m)?)?;
    m.add_function(wrap_pyfunction!(sse, m)?)?;
    m.add_function(wrap_pyfunction!(knee_locate, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(log2_transform, m)?)?;
    m.add_function(wrap_pyfunction!(minmax_normalize, m)?)?;
    m.add_function(wrap_pyfunction!(classify_fuel, m)?)?;
    m.add_function(wrap_pyfunction!(emission_factor, m)?)?;
    m.add_function(wrap_pyfunction!(grid_carbon_intensity, m)?)?;
    m.add_function(wrap_pyfunction!(write_fixture, m)?)?;
    m.add_function(wrap_pyfunction!(run_stage, m)?)?;
    Ok(())
}
