use std::collections::BTreeSet;

use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

use earlytom::error::ERROR_CODES;
use earlytom::Error;
use earlytom_py::to_py_err;

fn with_module<F: for<'py> FnOnce(Python<'py>, Bound<'py, PyModule>)>(f: F) {
    Python::attach(|py| {
        let m = wrap_pymodule!(earlytom_py::earlytom_py)(py).into_bound(py);
        let m = m.cast_into::<PyModule>().unwrap();
        f(py, m)
    });
}

fn run(py: Python<'_>, m: &Bound<'_, PyModule>, code: &str) -> PyResult<()> {
    let globals = PyDict::new(py);
    globals.set_item("earlytom", m)?;
    globals.set_item("np", py.import("numpy")?)?;
    let code = std::ffi::CString::new(code).unwrap();
    py.run(&code, Some(&globals), None)
}

fn samples() -> Vec<Error> {
    vec![
        Error::ShapeMismatch { expected: "a".into(), found: "b".into() },
        Error::NonFiniteValue { index: 0 },
        Error::NegativeScore { index: 0 },
        Error::InvalidSegments("x".into()),
        Error::InvalidRatio(2.0),
        Error::BudgetExceedsFrame { k: 2, len: 1 },
        Error::CoverageGap("x".into()),
        Error::ScheduleMismatch { expected: 1, found: 2 },
        Error::EmptyHistogram,
        Error::InvalidSpec("x".into()),
        Error::InvalidConfig("x".into()),
        Error::ConfigConflict("x".into()),
        Error::UnknownPreset("x".into()),
        Error::UnsupportedDtype { found: "<f8".into(), hint: "h" },
        Error::UnsupportedShape("x".into()),
        Error::CorruptHeader("x".into()),
        Error::TruncatedData { expected: 4, found: 0 },
        Error::CorruptRun("x".into()),
        Error::Io(std::io::Error::other("x")),
    ]
}

#[test]
fn every_error_code_maps_to_a_typed_exception() {
    with_module(|py, m| {
        let base = m.getattr("EarlyTomError").unwrap();
        let mut seen = BTreeSet::new();
        for e in samples() {
            let (code, kind) = (e.code(), e.kind());
            let err = to_py_err(py, e);
            let value = err.value(py);
            assert!(value.is_instance(&base).unwrap(), "{code}");
            let class = match kind {
                earlytom::ErrorKind::Input => "InputError",
                earlytom::ErrorKind::Config => "ConfigError",
                earlytom::ErrorKind::Io => "EarlyTomIOError",
            };
            assert!(value.is_instance(&m.getattr(class).unwrap()).unwrap(), "{code}");
            assert_eq!(value.getattr("code").unwrap().extract::<String>().unwrap(), code);
            seen.insert(code);
        }
        assert_eq!(seen, ERROR_CODES.iter().copied().collect::<BTreeSet<_>>());
    });
}

#[test]
fn compress_returns_tokens_index_and_report() {
    with_module(|py, m| {
        run(
            py,
            &m,
            r#"
spec = {"seed": 3, "tokens_per_frame": 10, "dim": 4,
        "blocks": [{"frames": 5, "similarity": 0.95}, {"frames": 5, "similarity": 0.95}]}
f, a = earlytom.synth_video(spec)
assert f.shape == (10, 10, 4) and f.dtype == np.float32
tokens, index, report = earlytom.compress(f, a, {"retain_ratio": 0.2})
assert report["total_kept"] == 20 == tokens.shape[0] == index.shape[0]
assert index.dtype == np.int64
for row, (fr, t) in zip(tokens, index):
    assert row.shape == (4,)
seq = earlytom.compress(f, a, earlytom.RunConfig({"retain_ratio": 0.2}), schedule="sequential")
assert np.array_equal(seq[0], tokens) and np.array_equal(seq[1], index) and seq[2] == report
"#,
        )
        .unwrap();
    });
}

#[test]
fn dtype_and_config_errors_raise_typed_exceptions() {
    with_module(|py, m| {
        run(
            py,
            &m,
            r#"
f = np.zeros((2, 4, 3), dtype=np.float64)
a = np.ones((2, 4), dtype=np.float32)
try:
    earlytom.compress(f, a)
    raise AssertionError("float64 accepted")
except earlytom.InputError as e:
    assert e.code == "UnsupportedDtype" and "float32" in str(e)
try:
    earlytom.RunConfig({"retain_ratio": 0.0})
    raise AssertionError("bad ratio accepted")
except earlytom.ConfigError as e:
    assert e.code == "InvalidRatio"
cfg = earlytom.RunConfig({"merge_passes": [3, {"layer": 7, "tau_merge": 0.9}], "encoder_attention": "per_frame"})
assert earlytom.RunConfig(cfg.to_dict()) == cfg
assert cfg.to_dict()["merge_passes"][1] == {"layer": 7, "tau_merge": 0.9}
assert earlytom.layer_flops(729, 1152, 4304) == 12323342592
"#,
        )
        .unwrap();
    });
}
