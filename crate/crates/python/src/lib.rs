//! Python bindings: run the pipeline, inspect plans, register Python
//! extractors and reach a few of the statistics helpers.

use std::path::PathBuf;
use std::sync::Arc;

use onebm::collect::{CollectedType, SamplingPolicy};
use onebm::ingest::{load_database, CellValue};
use onebm::paths::{enumerate_paths, TraversalMode};
use onebm::pipeline::{self, PipelineConfig, PipelineError};
use onebm::selection;
use onebm::transform::{EntityData, Extractor, PluginRegistry, TransformConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::InvalidConfig(_) | PipelineError::NameCollision(_) => PyValueError::new_err(e.to_string()),
        e => runtime_err(e),
    }
}

fn cell_to_py(py: Python<'_>, v: &CellValue) -> PyResult<Py<PyAny>> {
    Ok(match v {
        CellValue::Null => py.None(),
        CellValue::Number(x) => x.into_pyobject(py)?.into_any().unbind(),
        CellValue::Category(s) | CellValue::Text(s) => s.as_ref().into_pyobject(py)?.into_any().unbind(),
        CellValue::Timestamp(t) => t.into_pyobject(py)?.into_any().unbind(),
    })
}

/// Feature matrix, one row per main-table entity.
#[pyclass(frozen, module = "onebm")]
struct FeatureMatrix(pipeline::FeatureMatrix);

#[pymethods]
impl FeatureMatrix {
    #[getter]
    fn key_name(&self) -> &str {
        &self.0.key_name
    }

    #[getter]
    fn entity_ids(&self) -> Vec<String> {
        self.0.entity_ids.clone()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.0.names().map(str::to_string).collect()
    }

    fn column(&self, name: &str) -> Option<Vec<Option<f64>>> {
        self.0.column(name).map(|c| c.values.clone())
    }

    /// `{name: values}` in column order.
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for c in &self.0.columns {
            d.set_item(&c.name, c.values.clone())?;
        }
        Ok(d)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(&path).map_err(runtime_err)?;
        self.0.write_csv(std::io::BufWriter::new(file)).map_err(runtime_err)
    }

    fn __len__(&self) -> usize {
        self.0.row_count()
    }

    fn __repr__(&self) -> String {
        format!("FeatureMatrix(rows={}, features={})", self.0.row_count(), self.0.width())
    }
}

#[pyclass(frozen, module = "onebm")]
struct SelectionReport(selection::SelectionReport);

#[pymethods]
impl SelectionReport {
    #[getter]
    fn kept(&self) -> Vec<String> {
        self.0.kept.clone()
    }

    /// `(feature, reason, statistic)` in removal order.
    #[getter]
    fn removed(&self) -> Vec<(String, String, Option<f64>)> {
        self.0.removed.iter().map(|r| (r.feature.clone(), r.reason.to_string(), r.statistic)).collect()
    }

    fn reason_of(&self, feature: &str) -> Option<String> {
        self.0.reason_of(feature).map(|r| r.to_string())
    }

    fn __repr__(&self) -> String {
        format!("SelectionReport(kept={}, removed={})", self.0.kept.len(), self.0.removed.len())
    }
}

/// Wraps a Python callable `f(values, times) -> list[float | None]`.
struct PyExtractor {
    func: Py<PyAny>,
    width: usize,
}

impl Extractor for PyExtractor {
    fn width(&self, _cfg: &TransformConfig) -> usize {
        self.width
    }

    fn extract(&self, data: &EntityData, _cfg: &TransformConfig) -> Vec<Option<f64>> {
        Python::attach(|py| {
            let call = || -> PyResult<Vec<Option<f64>>> {
                let values = data.values.iter().map(|v| cell_to_py(py, v)).collect::<PyResult<Vec<_>>>()?;
                self.func.call1(py, (values, data.times.clone()))?.extract(py)
            };
            call().unwrap_or_else(|e| {
                // An empty row fails the width check and surfaces as an error.
                e.print(py);
                Vec::new()
            })
        })
    }
}

/// Pipeline settings plus any registered Python extractors.
#[pyclass(module = "onebm")]
struct Pipeline {
    cfg: PipelineConfig,
    plugins: PluginRegistry,
}

#[pymethods]
impl Pipeline {
    #[new]
    #[pyo3(signature = (schema, data, out, *, max_depth=2, mode="forward-only", max_joined_size=None, seed=0, transform_config=None, report=false))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        schema: PathBuf,
        data: PathBuf,
        out: PathBuf,
        max_depth: usize,
        mode: &str,
        max_joined_size: Option<u64>,
        seed: u64,
        transform_config: Option<PathBuf>,
        report: bool,
    ) -> PyResult<Self> {
        let mut cfg = PipelineConfig::new(schema, data, out);
        cfg.max_depth = max_depth;
        cfg.mode = mode.parse::<TraversalMode>().map_err(PyValueError::new_err)?;
        cfg.policy = SamplingPolicy {
            max_joined_size: max_joined_size.unwrap_or(SamplingPolicy::default().max_joined_size),
            seed,
        };
        if let Some(path) = transform_config {
            cfg.transform_cfg = TransformConfig::from_json_file(&path).map_err(|e| PyValueError::new_err(e.to_string()))?;
        }
        cfg.emit_report = report;
        cfg.validate().map_err(pipeline_err)?;
        Ok(Self { cfg, plugins: PluginRegistry::new() })
    }

    /// Adds `func(values, times)` as an extractor of `width` features for
    /// paths whose collected type is `ctype` (e.g. `"number_multiset"`).
    fn register_plugin(&mut self, name: &str, ctype: &str, width: usize, func: Py<PyAny>) -> PyResult<()> {
        let ctype = ctype.parse::<CollectedType>().map_err(|e| PyValueError::new_err(e.to_string()))?;
        self.plugins
            .register(name, ctype, Arc::new(PyExtractor { func, width }))
            .map(|_| ())
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// Runs everything and writes the output files. Returns the selected
    /// matrix and the selection report.
    fn run(&self, py: Python<'_>) -> PyResult<(FeatureMatrix, SelectionReport)> {
        let mut cfg = self.cfg.clone();
        cfg.explain_only = false;
        let out = py.detach(|| pipeline::run_pipeline_with(&cfg, &self.plugins)).map_err(pipeline_err)?;
        match (out.matrix, out.report) {
            (Some(m), Some(r)) => Ok((FeatureMatrix(m), SelectionReport(r))),
            _ => Err(runtime_err("pipeline produced no matrix")),
        }
    }

    /// Feature matrix before selection; nothing is written.
    fn extract(&self, py: Python<'_>) -> PyResult<FeatureMatrix> {
        py.detach(|| {
            let db = load_database(&self.cfg.schema_path, &self.cfg.data_dir)?;
            Ok(pipeline::extract_features(&db, &self.cfg, &self.plugins)?.matrix)
        })
        .map(FeatureMatrix)
        .map_err(pipeline_err)
    }

    /// Path plan and per-path collection statistics.
    fn explain(&self, py: Python<'_>) -> PyResult<String> {
        py.detach(|| {
            let db = load_database(&self.cfg.schema_path, &self.cfg.data_dir)?;
            pipeline::explain(&db, &self.cfg)
        })
        .map_err(pipeline_err)
    }

    /// Joining paths that would be collected, one rendered route per entry.
    fn plan(&self) -> PyResult<Vec<String>> {
        let db = load_database(&self.cfg.schema_path, &self.cfg.data_dir).map_err(runtime_err)?;
        let plan = enumerate_paths(&db, self.cfg.max_depth, self.cfg.mode);
        Ok(plan.listing(&db).lines().map(str::to_string).collect())
    }

    #[getter]
    fn report_path(&self) -> PathBuf {
        self.cfg.report_path()
    }
}

#[pyfunction]
fn infer_column_type(values: Vec<String>) -> PyResult<String> {
    onebm::ingest::infer_column_type(&values).map(|t| t.to_string()).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pyfunction]
fn ks_statistic(a: Vec<f64>, b: Vec<f64>) -> f64 {
    selection::ks_statistic(&a, &b)
}

#[pyfunction]
fn chi_square_p_value(statistic: f64, df: usize) -> f64 {
    selection::chi_square_p_value(statistic, df)
}

#[pymodule(name = "onebm")]
fn onebm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Pipeline>()?;
    m.add_class::<FeatureMatrix>()?;
    m.add_class::<SelectionReport>()?;
    m.add_function(wrap_pyfunction!(infer_column_type, m)?)?;
    m.add_function(wrap_pyfunction!(ks_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(chi_square_p_value, m)?)?;
    Ok(())
}
