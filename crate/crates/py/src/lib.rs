//! Python bindings for the earlytom compression engine.
//!
//! Arrays cross the boundary as float32 numpy arrays; configs and reports
//! as plain dicts with the same keys as the TOML config and report.json.
//! Engine errors raise `InputError`, `ConfigError` or `EarlyTomIOError`
//! (all subclasses of `EarlyTomError`) with the engine's error name in
//! the `code` attribute.

use numpy::{PyArray1, PyArrayDyn, PyArrayMethods, PyUntypedArray, PyUntypedArrayMethods};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyTuple};

use earlytom::error::ERROR_CODES;
use earlytom::synth::{synth_video as engine_synth, SynthSpec};
use earlytom::{npy, AttentionScores, Error, ErrorKind, Execution, FeatureTensor};

create_exception!(earlytom, EarlyTomError, PyException, "Base class of engine errors.");
create_exception!(earlytom, InputError, EarlyTomError, "Malformed or inconsistent input data.");
create_exception!(earlytom, ConfigError, EarlyTomError, "Invalid configuration.");
create_exception!(earlytom, EarlyTomIOError, EarlyTomError, "Filesystem failure.");

/// Maps an engine error onto its exception class, with `code` set.
pub fn to_py_err(py: Python<'_>, e: Error) -> PyErr {
    let msg = e.to_string();
    let err = match e.kind() {
        ErrorKind::Input => InputError::new_err(msg),
        ErrorKind::Config => ConfigError::new_err(msg),
        ErrorKind::Io => EarlyTomIOError::new_err(msg),
    };
    if let Err(set) = err.value(py).setattr("code", e.code()) {
        return set;
    }
    err
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn py_to_json(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<String> {
    py.import("json")?.call_method1("dumps", (obj,))?.extract()
}

/// Copies a float32 array in C order, rejecting other dtypes with a typed error.
fn f32_array(py: Python<'_>, obj: &Bound<'_, PyAny>, what: &str) -> PyResult<(Vec<usize>, Vec<f32>)> {
    let untyped = obj
        .cast::<PyUntypedArray>()
        .map_err(|_| PyValueError::new_err(format!("{what} must be a numpy array")))?;
    let Ok(array) = untyped.cast::<PyArrayDyn<f32>>() else {
        let found = untyped.dtype().str()?.to_string();
        return Err(to_py_err(
            py,
            Error::UnsupportedDtype {
                found,
                hint: "convert with arr.astype(np.float32)",
            },
        ));
    };
    let readonly = array.readonly();
    let view = readonly.as_array();
    Ok((view.shape().to_vec(), view.iter().copied().collect()))
}

/// A validated run configuration.
#[pyclass(name = "RunConfig", module = "earlytom", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyRunConfig {
    inner: earlytom::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    /// Builds a config from a dict of config-file keys; missing keys take defaults.
    #[new]
    #[pyo3(signature = (mapping=None))]
    fn new(py: Python<'_>, mapping: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let inner = match mapping {
            Some(m) => earlytom::RunConfig::from_json_str(&py_to_json(py, m.as_any())?)
                .map_err(|e| to_py_err(py, e))?,
            None => earlytom::RunConfig::default(),
        };
        Ok(Self { inner })
    }

    /// Reads a TOML config file.
    #[staticmethod]
    fn from_file(py: Python<'_>, path: std::path::PathBuf) -> PyResult<Self> {
        let inner = earlytom::RunConfig::from_file(path).map_err(|e| to_py_err(py, e))?;
        Ok(Self { inner })
    }

    /// Every key with its resolved value.
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_to_py(py, &self.inner.to_json_string())
    }

    #[getter]
    fn retain_ratio(&self) -> f64 {
        self.inner.compression.retain_ratio
    }

    #[getter]
    fn merge_layers(&self) -> Vec<Option<usize>> {
        self.inner.compression.merge_passes.iter().map(|p| p.layer).collect()
    }

    fn __repr__(&self) -> String {
        format!("RunConfig({})", self.inner.to_json_string())
    }
}

fn resolve_config(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<earlytom::RunConfig> {
    match config {
        None => Ok(earlytom::RunConfig::default()),
        Some(c) if c.is_none() => Ok(earlytom::RunConfig::default()),
        Some(c) => {
            if let Ok(cfg) = c.cast::<PyRunConfig>() {
                return Ok(cfg.get().inner.clone());
            }
            let mapping = c
                .cast::<PyDict>()
                .map_err(|_| PyValueError::new_err("config must be a dict, RunConfig or None"))?;
            earlytom::RunConfig::from_json_str(&py_to_json(py, mapping.as_any())?).map_err(|e| to_py_err(py, e))
        }
    }
}

fn parse_schedule(schedule: &str) -> PyResult<Execution> {
    match schedule {
        "sequential" => Ok(Execution::Sequential),
        "concurrent" => Ok(Execution::Concurrent),
        other => Err(PyValueError::new_err(format!(
            "schedule must be 'sequential' or 'concurrent', got {other:?}"
        ))),
    }
}

/// Compresses one video.
///
/// `features` is float32 (frames, tokens, dim); `attention` is float32
/// (frames, tokens) or (frames, tokens, tokens). Returns
/// `(tokens, index, report)`: the kept rows (kept, dim), their
/// (frame, token) pairs as int64 (kept, 2), and the report dict.
#[pyfunction]
#[pyo3(signature = (features, attention, config=None, schedule="concurrent"))]
fn compress<'py>(
    py: Python<'py>,
    features: &Bound<'py, PyAny>,
    attention: &Bound<'py, PyAny>,
    config: Option<&Bound<'py, PyAny>>,
    schedule: &str,
) -> PyResult<Bound<'py, PyTuple>> {
    let cfg = resolve_config(py, config)?;
    let exec = parse_schedule(schedule)?;
    let (f_shape, f_data) = f32_array(py, features, "features")?;
    let (a_shape, a_data) = f32_array(py, attention, "attention")?;

    let result = py.detach(move || -> earlytom::Result<_> {
        let features = npy::features_from_npy(npy::NpyArray {
            shape: f_shape,
            data: f_data,
        })?;
        let attention = npy::attention_from_npy(npy::NpyArray {
            shape: a_shape,
            data: a_data,
        })?;
        let out = earlytom::run_compress(&cfg, &features, &attention, exec)?;
        let index: Vec<i64> = out
            .selection
            .index_pairs()
            .flat_map(|(f, t)| [f as i64, t as i64])
            .collect();
        let report = earlytom::pipeline::report_json(&out.report);
        Ok((out.selection.total_kept(), out.selection.dim, out.selection.tokens, index, report))
    });
    let (kept, dim, tokens, index, report) = result.map_err(|e| to_py_err(py, e))?;

    let tokens = PyArray1::from_vec(py, tokens).reshape([kept, dim])?;
    let index = PyArray1::from_vec(py, index).reshape([kept, 2])?;
    let report = json_to_py(py, &report)?;
    PyTuple::new(py, [tokens.into_any(), index.into_any(), report])
}

/// Generates a synthetic video from a spec dict (same keys as a synth spec
/// file); returns `(features, attention)` as float32 arrays.
#[pyfunction]
fn synth_video<'py>(py: Python<'py>, spec: &Bound<'py, PyDict>) -> PyResult<Bound<'py, PyTuple>> {
    let text = py_to_json(py, spec.as_any())?;
    let spec: SynthSpec = serde_json::from_str(&text)
        .map_err(|e| to_py_err(py, Error::InvalidSpec(e.to_string())))?;
    let (features, attention): (FeatureTensor, AttentionScores) =
        py.detach(|| engine_synth(&spec)).map_err(|e| to_py_err(py, e))?;
    let f_shape = [features.frames(), features.tokens_per_frame(), features.dim()];
    let a_shape = [attention.frames(), attention.tokens_per_frame()];
    let f = PyArray1::from_vec(py, features.into_data()).reshape(f_shape)?;
    let a = PyArray1::from_slice(py, attention.scores()).reshape(a_shape)?;
    PyTuple::new(py, [f.into_any(), a.into_any()])
}

/// Reads a float32 NPY file.
#[pyfunction]
fn load_npy<'py>(py: Python<'py>, path: std::path::PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let array = py
        .detach(|| npy::read_npy_file(path))
        .map_err(|e| to_py_err(py, e))?;
    Ok(PyArray1::from_vec(py, array.data).reshape(array.shape)?.into_any())
}

/// FLOPs of one transformer layer over `tokens` tokens, as an exact integer.
#[pyfunction]
fn layer_flops(tokens: u64, hidden: u64, ffn: u64) -> u128 {
    earlytom::flops::layer_flops_exact(tokens, hidden, ffn)
}

#[pymodule]
#[pyo3(name = "earlytom")]
pub fn earlytom_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("EarlyTomError", py.get_type::<EarlyTomError>())?;
    m.add("InputError", py.get_type::<InputError>())?;
    m.add("ConfigError", py.get_type::<ConfigError>())?;
    m.add("EarlyTomIOError", py.get_type::<EarlyTomIOError>())?;
    m.add("ERROR_CODES", ERROR_CODES.to_vec())?;
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(synth_video, m)?)?;
    m.add_function(wrap_pyfunction!(load_npy, m)?)?;
    m.add_function(wrap_pyfunction!(layer_flops, m)?)?;
    Ok(())
}
