import json
import subprocess
import sys

import numpy as np
import pytest

from dsf.cli import FIXTURES, main
from dsf.core import load_tensor, save_tensor


def call(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out) if out.strip() else None


def test_run_packaged_fixture(capsys, tmp_path):
    y = tmp_path / "y.dsft"
    code, out = call(
        capsys, "run", "--weights", "fixture:linear", "--input", "fixture:linear_input.dsft", "--engine", "seq", "--out", str(y)
    )
    assert code == 0 and out["kind"] == "linear"
    expected = load_tensor(FIXTURES / "linear_expected.dsft")
    assert np.max(np.abs(load_tensor(y) - expected)) <= 1e-12


def test_unknown_kind_exit_2(capsys):
    code, out = call(capsys, "run", "--kind", "foo")
    assert code == 2 and out["error"] == "UnknownKind"


def test_kernel_cap_exit_3(capsys):
    code, out = call(capsys, "run", "--kind", "linear", "--engine", "kernel", "--L", "10000")
    assert code == 3 and out["error"] == "CapExceeded"


def test_softmax_has_no_system(capsys):
    code, out = call(capsys, "compare", "--kind", "softmax", "--engine", "scan")
    assert code == 2 and out["error"] == "PreconditionError"


def test_compare_s6_against_oracle(capsys):
    code, out = call(capsys, "compare", "--kind", "s6", "--against", "oracle", "--tol", "1e-9", "--seed", "0")
    assert code == 0 and out["passed"]


def test_compare_zero_tolerance_scan_vs_seq(capsys):
    code, out = call(capsys, "compare", "--kind", "linear", "--engine", "scan", "--against", "seq", "--tol", "0", "--L", "64")
    assert code == 1 and not out["passed"] and out["max_abs"] > 0


def test_compare_mismatched_files(capsys, tmp_path):
    save_tensor(tmp_path / "a.dsft", np.zeros((3, 2)))
    save_tensor(tmp_path / "b.dsft", np.zeros((3, 3)))
    code, out = call(capsys, "compare", "--a", str(tmp_path / "a.dsft"), "--b", str(tmp_path / "b.dsft"))
    assert code == 4 and out["error"] == "DimensionError"


def test_missing_file_exit_6(capsys, tmp_path):
    code, out = call(capsys, "compare", "--a", str(tmp_path / "x.dsft"), "--b", str(tmp_path / "y.dsft"))
    assert code == 6


def test_normalization_failure_exit_5(capsys, tmp_path):
    from dsf.core import save_bundle

    W = np.eye(2)
    save_bundle(
        tmp_path / "w",
        {"W_Q": W, "W_K": W, "W_V": W, "W_eta": np.full((1, 2), -1e4)},
        {"kind": "normalized-exp", "family": "attention", "scalars": {"heads": 1}},
    )
    save_tensor(tmp_path / "u.dsft", np.ones((3, 2)))
    code, out = call(capsys, "run", "--weights", str(tmp_path / "w"), "--input", str(tmp_path / "u.dsft"))
    assert code == 5 and out["error"] == "NormalizationError"


def test_taylor_study_csv(capsys, tmp_path):
    path = tmp_path / "t.csv"
    code, _ = call(capsys, "taylor-study", "--orders", "2,4,8", "--seed", "0", "--out", str(path))
    assert code == 0
    lines = path.read_text().splitlines()
    errs = [float(line.split(",")[2]) for line in lines[1:]]
    assert len(errs) == 3 and errs[0] > errs[1] > errs[2]


def test_mqar_matches_fixture(capsys, tmp_path):
    path = tmp_path / "m.dsft"
    code, out = call(capsys, "mqar", "--V", "8", "--K", "1", "--L", "4", "--seed", "0", "--out", str(path))
    assert code == 0 and out["tokens"] == [3, 4, 8, 3]
    assert path.read_bytes() == (FIXTURES / "mqar_V8_K1_L4_seed0.dsft").read_bytes()


def test_mqar_bad_config(capsys):
    code, out = call(capsys, "mqar", "--V", "7", "--K", "1", "--L", "4")
    assert code == 2 and out["error"] == "ConfigError"


def test_embed_cumsum_fixture(capsys, tmp_path):
    code, out = call(
        capsys, "embed", "--system", "fixture:cumsum", "--input", "fixture:cumsum_input.dsft", "--nbar", "3",
        "--out", str(tmp_path / "big"),
    )
    assert code == 0 and out["passed"] and out["N_bar"] == 3 and out["max_abs"] == 0


def test_embed_shrink_is_dimension_error(capsys):
    code, out = call(capsys, "embed", "--kind", "qlstm", "--nbar", "1")
    assert code == 4


def test_spectrum(capsys, tmp_path):
    code, out = call(capsys, "spectrum", "--kind", "rglru", "--out", str(tmp_path / "s.csv"))
    assert code == 0 and out["peak"] < 1
    assert (tmp_path / "s.csv").read_text().startswith("step,")


def test_weights_then_run(capsys, tmp_path):
    code, _ = call(
        capsys, "weights", "--kind", "s6", "--d", "4", "--n", "2", "--out", str(tmp_path / "w"),
        "--input-out", str(tmp_path / "u.dsft"),
    )
    assert code == 0
    code, out = call(
        capsys, "compare", "--weights", str(tmp_path / "w"), "--input", str(tmp_path / "u.dsft"), "--engine", "kernel"
    )
    assert code == 0 and out["passed"]


def test_bench_cli(capsys, tmp_path):
    code, out = call(capsys, "bench", "--kinds", "linear-scan", "--Ls", "16,32", "--d", "4", "--n", "2", "--repeats", "1")
    assert code == 0 and "linear-scan" in out["slopes"]


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["run", "--engine", "fft"])
    assert exc.value.code == 2


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "dsf", "run", "--kind", "nope"], capture_output=True, text=True, check=False
    )
    assert proc.returncode == 2
    assert json.loads(proc.stdout)["error"] == "UnknownKind"
