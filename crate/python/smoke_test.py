"""Smoke test for the earlytom Python module.

Build and install first, e.g.

    maturin build --release -m crates/py/Cargo.toml
    pip install target/wheels/earlytom-*.whl
    python python/smoke_test.py
"""

import pathlib
import subprocess
import sys
import tempfile

import numpy as np

import earlytom

ROOT = pathlib.Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "crates" / "core" / "tests" / "fixtures"


def check_compress_budget():
    spec = {
        "seed": 7,
        "tokens_per_frame": 16,
        "dim": 8,
        "blocks": [{"frames": 6, "similarity": 0.95}, {"frames": 6, "similarity": 0.9}],
        "sink": {"columns": [0, 1], "factor": 5.0},
    }
    features, attention = earlytom.synth_video(spec)
    assert features.shape == (12, 16, 8) and features.dtype == np.float32
    assert attention.shape == (12, 16)

    tokens, index, report = earlytom.compress(features, attention, {"retain_ratio": 0.2})
    assert tokens.shape == (report["total_kept"], 8)
    assert index.shape == (report["total_kept"], 2)
    assert report["total_kept"] == round(0.2 * 12 * 16)
    for row, (f, t) in zip(tokens, index):
        assert row.shape == (8,)
        assert 0 <= t < 16
    seq = earlytom.compress(features, attention, {"retain_ratio": 0.2}, schedule="sequential")
    assert np.array_equal(seq[0], tokens) and seq[2] == report


def check_config_round_trip():
    cfg = earlytom.RunConfig({"retain_ratio": 0.15, "merge_passes": [4, {"layer": 9, "tau_seg": 0.7}]})
    again = earlytom.RunConfig(cfg.to_dict())
    assert again == cfg
    assert cfg.retain_ratio == 0.15 and cfg.merge_layers == [4, 9]
    assert earlytom.RunConfig() == earlytom.RunConfig({})


def check_errors():
    features = np.zeros((2, 4, 3), dtype=np.float32)
    attention = np.ones((2, 4), dtype=np.float32)
    cases = [
        (lambda: earlytom.compress(features.astype(np.float64), attention), earlytom.InputError, "UnsupportedDtype"),
        (lambda: earlytom.compress(features, attention[:1]), earlytom.InputError, "ShapeMismatch"),
        (lambda: earlytom.compress(features, -attention), earlytom.InputError, "NegativeScore"),
        (lambda: earlytom.compress(features, attention, {"retain_ratio": 2.0}), earlytom.ConfigError, "InvalidRatio"),
        (lambda: earlytom.RunConfig({"bogus": 1}), earlytom.ConfigError, "InvalidConfig"),
        (lambda: earlytom.load_npy("/nonexistent/file.npy"), earlytom.EarlyTomIOError, "Io"),
    ]
    for call, exc, code in cases:
        try:
            call()
        except exc as e:
            assert isinstance(e, earlytom.EarlyTomError)
            assert e.code == code, (e.code, code)
            assert e.code in earlytom.ERROR_CODES
        else:
            raise AssertionError(f"expected {exc.__name__}({code})")


def check_cli_parity():
    """Bindings output equals the CLI's files on the shipped fixtures, when the binary is built."""
    binary = ROOT / "target" / "debug" / "earlytom"
    if not binary.exists():
        print("  (CLI binary not built; skipping parity)")
        return
    for name in ["two_block", "sink_pattern", "mvbench_32", "matrix_attention"]:
        d = FIXTURES / name
        with tempfile.TemporaryDirectory() as out:
            subprocess.run(
                [str(binary), "compress", "--config", str(d / "config.toml"), "--features", str(d / "features.npy"),
                 "--attention", str(d / "attention.npy"), "--out", out],
                check=True, capture_output=True,
            )
            cli_tokens = earlytom.load_npy(pathlib.Path(out) / "tokens.npy")
            cli_index = np.loadtxt(pathlib.Path(out) / "tokens_index.csv", delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        tokens, index, _ = earlytom.compress(
            earlytom.load_npy(d / "features.npy"),
            earlytom.load_npy(d / "attention.npy"),
            earlytom.RunConfig.from_file(d / "config.toml"),
        )
        assert tokens.tobytes() == cli_tokens.tobytes(), name
        assert np.array_equal(index, cli_index), name


def main():
    for check in [check_compress_budget, check_config_round_trip, check_errors, check_cli_parity]:
        check()
        print(f"ok {check.__name__}")
    print(f"layer_flops(729, 1152, 4304) = {earlytom.layer_flops(729, 1152, 4304)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
