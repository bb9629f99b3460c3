//! Python bindings for `mandala`.
//!
//! Matrices cross the boundary as lists of row lists. Structured results
//! (scalar reports, manifests, verification reports) come back as plain dicts
//! with the same keys as the JSON files the CLI writes.

use std::path::PathBuf;

use mandala::accumulation::{self, AccumulationImage};
use mandala::clustering::{self, Dissimilarity, SymmetrizeMode};
use mandala::distance::{self, DistanceKind, Variant};
use mandala::estimation::{self, GaussianPopulation, SampleSet};
use mandala::pipeline::{self, PipelineConfig};
use mandala::spd::SpdMatrix;
use mandala::{io, verify};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyValueError, PyRuntimeError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

fn err(e: mandala::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn square(values: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = values.len();
    if values.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err(format!("expected a square {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| values[i][j]))
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// A fitted Gaussian `N(mean, cov)`.
#[pyclass(name = "Population", module = "pymandala")]
#[derive(Clone)]
struct PyPopulation {
    inner: GaussianPopulation,
}

#[pymethods]
impl PyPopulation {
    /// Builds a population from an explicit mean and SPD covariance.
    #[new]
    #[pyo3(signature = (mean, cov, count=0))]
    fn new(mean: Vec<f64>, cov: Vec<Vec<f64>>, count: usize) -> PyResult<Self> {
        let n = mean.len();
        let cov = square(cov)?;
        if cov.nrows() != n {
            return Err(PyValueError::new_err("mean and covariance sizes differ"));
        }
        let flat: Vec<f64> = cov.transpose().iter().copied().collect();
        let cov = SpdMatrix::from_row_major(n, &flat).map_err(err)?;
        let inner = GaussianPopulation::new(DVector::from_vec(mean), cov, count).map_err(err)?;
        Ok(Self { inner })
    }

    /// Estimates mean and ridge-regularized covariance from sample rows.
    #[staticmethod]
    #[pyo3(signature = (samples, ridge=estimation::DEFAULT_RIDGE))]
    fn estimate(samples: Vec<Vec<f64>>, ridge: f64) -> PyResult<Self> {
        let set = SampleSet::from_rows(&samples).map_err(err)?;
        let inner = estimation::estimate_population(&set, ridge).map_err(err)?;
        Ok(Self { inner })
    }

    /// Reads a population written by `save` or `mandala estimate`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::load_population(&path).map_err(err)? })
    }

    /// Writes `<stem>.json` and `<stem>.f64`; returns the header path.
    fn save(&self, stem: PathBuf) -> PyResult<PathBuf> {
        io::save_population(&stem, &self.inner).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn count(&self) -> usize {
        self.inner.count
    }

    #[getter]
    fn ridge(&self) -> f64 {
        self.inner.ridge
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.iter().copied().collect()
    }

    #[getter]
    fn cov(&self) -> Vec<Vec<f64>> {
        rows(self.inner.cov.as_matrix())
    }

    fn __repr__(&self) -> String {
        format!("Population(dim={}, count={}, ridge={:e})", self.inner.dim(), self.inner.count, self.inner.ridge)
    }
}

/// A matrix-valued distance between two populations.
#[pyclass(name = "DistanceMatrix", module = "pymandala")]
struct PyDistanceMatrix {
    inner: distance::DistanceMatrix,
}

#[pymethods]
impl PyDistanceMatrix {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: io::load_distance_matrix(&path).map_err(err)? })
    }

    fn save(&self, stem: PathBuf) -> PyResult<PathBuf> {
        io::save_distance_matrix(&stem, &self.inner).map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant.as_str()
    }

    #[getter]
    fn s(&self) -> f64 {
        self.inner.s
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn trace(&self) -> f64 {
        self.inner.trace()
    }

    /// The matrix as a list of rows.
    fn to_list(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.matrix)
    }

    /// Accumulation vector Φ: row sum plus column sum for each index.
    fn accumulate(&self) -> Vec<f64> {
        accumulation::accumulate(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("DistanceMatrix(kind={}, dim={}, trace={})", self.inner.kind, self.inner.dim(), self.inner.trace())
    }
}

/// Builds the matrix-valued distance of `kind` between `p` and `q`.
#[pyfunction]
#[pyo3(signature = (p, q, kind="bhattacharyya", s=0.3, variant="corrected", pooled=true))]
fn distance_matrix(
    p: &PyPopulation,
    q: &PyPopulation,
    kind: &str,
    s: f64,
    variant: &str,
    pooled: bool,
) -> PyResult<PyDistanceMatrix> {
    let kind: DistanceKind = parse(kind)?;
    let variant: Variant = parse(variant)?;
    let inner = distance::distance_matrix(&p.inner, &q.inner, kind, s, variant, pooled).map_err(err)?;
    Ok(PyDistanceMatrix { inner })
}

/// All scalar distances from their closed forms, as a dict keyed dM, dB, dC, dKL, dH.
#[pyfunction]
#[pyo3(signature = (p, q, s=0.3, variant="corrected"))]
fn scalar_distances(py: Python<'_>, p: &PyPopulation, q: &PyPopulation, s: f64, variant: &str) -> PyResult<PyObject> {
    let report = distance::scalar_report(&p.inner, &q.inner, s, parse(variant)?).map_err(err)?;
    to_py(py, &report)
}

/// Hellinger distance from a Bhattacharyya distance.
#[pyfunction]
fn hellinger(db: f64) -> PyResult<f64> {
    distance::hellinger_scalar(db).map_err(err)
}

fn image(phi: Vec<f64>) -> PyResult<AccumulationImage> {
    let side = accumulation::side_of(phi.len())
        .ok_or_else(|| PyValueError::new_err(format!("length {} is not a perfect square", phi.len())))?;
    accumulation::devectorize(&phi, side).map_err(err)
}

/// Mean of Φ over the centered `window` square and over the rest of the image.
#[pyfunction]
#[pyo3(signature = (phi, window=16))]
fn window_means(phi: Vec<f64>, window: usize) -> PyResult<(f64, f64)> {
    accumulation::window_means(&image(phi)?, window).map_err(err)
}

/// Writes a viridis heatmap of Φ as a binary PPM.
#[pyfunction]
#[pyo3(signature = (phi, path, scale=8))]
fn render_heatmap(phi: Vec<f64>, path: PathBuf, scale: usize) -> PyResult<()> {
    accumulation::render_heatmap(&image(phi)?, &path, scale).map_err(err)
}

/// Result of complete-linkage clustering over `leaf_count` leaves.
#[pyclass(name = "Dendrogram", module = "pymandala")]
struct PyDendrogram {
    inner: clustering::Dendrogram,
}

#[pymethods]
impl PyDendrogram {
    #[getter]
    fn leaf_count(&self) -> usize {
        self.inner.leaf_count
    }

    /// Merges as `(a, b, distance, new_node)` tuples in merge order.
    #[getter]
    fn merges(&self) -> Vec<(usize, usize, f64, usize)> {
        self.inner.merges.iter().map(|m| (m.a, m.b, m.distance, m.new_node)).collect()
    }

    fn is_monotone(&self) -> bool {
        self.inner.is_monotone()
    }

    /// Flat labels with exactly `k` clusters.
    fn cut(&self, k: usize) -> PyResult<Vec<usize>> {
        Ok(clustering::cut(&self.inner, k).map_err(err)?.labels)
    }

    /// Flat labels after applying every merge at distance `<= threshold`.
    fn cut_at_threshold(&self, threshold: f64) -> Vec<usize> {
        clustering::cut_at_threshold(&self.inner, threshold).labels
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: clustering::Dendrogram::load(&path).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("Dendrogram(leaf_count={}, merges={})", self.inner.leaf_count, self.inner.merges.len())
    }
}

/// Complete-linkage clustering of a square matrix after symmetrizing it.
#[pyfunction]
#[pyo3(signature = (matrix, symmetrize="mean", accelerated=false))]
fn cluster(matrix: Vec<Vec<f64>>, symmetrize: &str, accelerated: bool) -> PyResult<PyDendrogram> {
    let mode: SymmetrizeMode = parse(symmetrize)?;
    let delta: Dissimilarity = clustering::symmetrize(&square(matrix)?, mode).map_err(err)?;
    let inner = if accelerated { clustering::agglomerate_fast(&delta) } else { clustering::agglomerate(&delta) };
    Ok(PyDendrogram { inner: inner.map_err(err)? })
}

/// Runs the full pipeline. `config` uses the same keys as the CLI's JSON
/// config; missing keys take their defaults. Returns the manifest as a dict.
#[pyfunction]
#[pyo3(signature = (config=None))]
fn run_pipeline(py: Python<'_>, config: Option<&Bound<'_, PyDict>>) -> PyResult<PyObject> {
    let cfg: PipelineConfig = match config {
        Some(d) => {
            let text: String = py.import("json")?.call_method1("dumps", (d,))?.extract()?;
            serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))?
        }
        None => PipelineConfig::default(),
    };
    let out = py.allow_threads(|| pipeline::run_pipeline(&cfg)).map_err(err)?;
    to_py(py, &out.manifest)
}

/// Runs the built-in numerical self-checks; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (level="fast", seed=7))]
fn self_check(py: Python<'_>, level: &str, seed: u64) -> PyResult<PyObject> {
    let level: verify::Level = parse(level)?;
    let report = py.allow_threads(|| verify::run(level, seed)).map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn pymandala(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPopulation>()?;
    m.add_class::<PyDistanceMatrix>()?;
    m.add_class::<PyDendrogram>()?;
    m.add_function(wrap_pyfunction!(distance_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(scalar_distances, m)?)?;
    m.add_function(wrap_pyfunction!(hellinger, m)?)?;
    m.add_function(wrap_pyfunction!(window_means, m)?)?;
    m.add_function(wrap_pyfunction!(render_heatmap, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(self_check, m)?)?;
    Ok(())
}
