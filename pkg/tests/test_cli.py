import csv
import io
import json
import os
import subprocess
import sys

import pytest

from qfock import cli
from qfock.fockspace import QContext
from qfock.inequalities import sharpness_lower


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_verify_passes(capsys):
    code, out, _ = run(["verify", "--q", "0.5", "--d", "1", "--max-n", "3", "--trunc", "6"], capsys)
    assert code == 0
    table = rows(out)
    assert {r["identity"] for r in table} == set(cli.SUITE)
    assert all(float(r["residual"]) < 1e-10 and r["passed"] == "true" for r in table)


def test_verify_free_case_at_machine_precision(capsys):
    code, out, _ = run(["verify", "--q", "0", "--d", "1", "--max-n", "3", "--trunc", "6"], capsys)
    assert code == 0
    assert max(float(r["residual"]) for r in rows(out)) < 1e-14


def test_verify_failure_exit_code(capsys):
    code, _, _ = run(["verify", "--q", "0.5", "--d", "1", "--max-n", "2", "--trunc", "5", "--tol", "-1", "--only", "wick"], capsys)
    assert code == 1


@pytest.mark.parametrize(
    "argv",
    [
        ["verify", "--q", "1.0"],
        ["verify", "--q", "0.5", "--only", "nope"],
        ["verify", "--q", "0.5", "--trunc", "2", "--max-n", "4"],
        ["moments", "--q", "0.5"],
        ["moments", "--q", "0.5", "--pattern", "3,3"],
        ["moments", "--q", "0.5", "--word", "1* x"],
        ["moments", "--q", "0.5", "--word", " ".join(["1* 1"] * 9)],
        ["ultra", "--q", "0.5", "--t", "0.05"],
        ["ultra", "--q", "0.5", "--t", "1", "--degree-cut", "3"],
        ["haagerup", "--q", "0.5", "--trunc-ladder", "1"],
        ["constants", "--q", "-1"],
        ["bogus"],
    ],
)
def test_usage_errors(argv, capsys):
    code, out, _ = run(argv, capsys)
    assert code == 2
    assert out == ""


def test_moments_word(capsys):
    code, out, _ = run(["moments", "--q", "0.5", "--word", "1* 2* 1 2"], capsys)
    assert code == 0
    (r,) = rows(out)
    assert float(r["combinatorial"]) == pytest.approx(0.5) and float(r["trace"]) == pytest.approx(0.5)


def test_moments_pattern_and_odd(capsys):
    _, out, _ = run(["moments", "--q", "0", "--pattern", "2,2"], capsys)
    (r,) = rows(out)
    assert float(r["combinatorial"]) == 3 and r["satisfied"] == "true"
    _, out, _ = run(["moments", "--q", "0.5", "--word", "1"], capsys)
    assert float(rows(out)[0]["combinatorial"]) == 0


def test_ultra(capsys):
    code, out, _ = run(["ultra", "--q", "0.5", "--t", "1"], capsys)
    assert code == 0
    (r,) = rows(out)
    assert float(r["psi_norm_sq"]) == pytest.approx(1.1565176427496657, abs=1e-10)
    assert r["satisfied"] == "true"
    _, out, _ = run(["ultra", "--q", "0.5", "--t", ""], capsys)
    assert rows(out) == []


def test_haagerup_empty_range(capsys):
    code, out, _ = run(["haagerup", "--q", "0.3", "--n-min", "3", "--n-max", "2"], capsys)
    assert code == 0 and rows(out) == []


def test_haagerup_matches_sharpness(capsys):
    # ladder entries are offsets above n: truncations 4 and 6
    code, out, _ = run(["haagerup", "--q", "0.5", "--n-min", "2", "--n-max", "2", "--trunc-ladder", "2,4"], capsys)
    assert code == 0
    (r,) = rows(out)
    ref = sharpness_lower(QContext(0.5, 1, 6), 2, ladder=[4, 6])
    assert float(r["ratio"]) == pytest.approx(ref.observed["ratio"], rel=1e-9)
    assert float(r["lower_bound"]) <= float(r["ratio"]) <= float(r["upper_bound"])


def test_jsonl_format(capsys):
    _, out, _ = run(["constants", "--q", "0", "--format", "jsonl"], capsys)
    rec = json.loads(out)
    assert rec["c_q"] == 1.0 and rec["a_haagerup"] == pytest.approx((2 + 15**0.5) ** 0.5)


def test_out_dir_and_determinism(tmp_path, capsys):
    argv = ["haagerup", "--q", "0.3,-0.3", "--n-min", "1", "--n-max", "2", "--trunc-ladder", "2,4", "--out-dir", str(tmp_path)]
    _, first, _ = run(argv, capsys)
    files = sorted(os.listdir(tmp_path))
    assert len(files) == 2 and "manifest.json" in files
    table = next(f for f in files if f.endswith(".csv"))
    assert open(tmp_path / table, newline="").read() == first
    man = json.load(open(tmp_path / "manifest.json"))
    assert man["output"] == table and man["seed"] == [0] and "timestamp" in man
    _, second, _ = run(argv, capsys)
    assert first == second
    assert sorted(os.listdir(tmp_path)) == files


def test_output_dir_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("QFOCK_OUTPUT_DIR", str(tmp_path))
    run(["constants", "--q", "0.5"], capsys)
    assert any(f.startswith("constants-") for f in os.listdir(tmp_path))


def test_manifest_hash_ignores_timestamp():
    a = cli.manifest_for("x", {"q": 1}, "csv")
    b = dict(a, timestamp="1999-01-01T00:00:00Z")
    assert cli.manifest_hash(a) == cli.manifest_hash(b)
    assert cli.manifest_hash(a) != cli.manifest_hash(cli.manifest_for("x", {"q": 2}, "csv"))


def test_parallel_jobs_keep_order(capsys):
    argv = ["ultra", "--q", "0.3", "--t", "2,0.5,1"]
    _, serial, _ = run(argv, capsys)
    _, parallel, _ = run(argv + ["--jobs", "2"], capsys)
    assert serial == parallel
    assert [float(r["t"]) for r in rows(serial)] == [0.5, 1.0, 2.0]


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "qfock.cli", "moments", "--q", "0.5", "--word", "1* 1* 1 1"], capture_output=True, text=True)
    assert out.returncode == 0
    assert float(rows(out.stdout)[0]["combinatorial"]) == pytest.approx(1.5)
