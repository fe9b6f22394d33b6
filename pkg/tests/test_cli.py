import json
import math
import subprocess
import sys

import numpy as np
import pytest

from asyncbyz.cli import main, read_trace, summarize
from asyncbyz.config import load_config
from asyncbyz.engine import run

CONFIG = """\
seed: 1
trials: 3
metric_stride: 50
lambda: 0.25
problem: {kind: additive-noise-quadratic, dim: 4}
schedule: {m_honest: 3, m_byzantine: 1}
aggregator: {base: weighted-cwmed}
optimizer: {horizon: 400}
attack: {kind: sign-flip}
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(CONFIG)
    return path


def test_run_writes_outputs(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_file), "--out", str(out), "--plot"]) == 0
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == "trial,t,excess_loss,grad_error_sq,tau_max,honest_frac"
    assert len(lines) - 1 == 3 * 400 // 50
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["trials"] == 3
    assert set(manifest["outputs"]) == {"trace", "summary", "plot"}
    assert (out / "excess_loss.svg").read_text().lstrip().startswith("<?xml")
    assert "final_excess_mean" in capsys.readouterr().out


def test_rerun_is_identical(cfg_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(cfg_file), "--out", str(a)])
    main(["run", "--config", str(cfg_file), "--out", str(b)])
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["config_hash"] == mb["config_hash"]


def test_overrides_change_hash_not_experiment(cfg_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(cfg_file), "--out", str(a)])
    main(["run", "--config", str(cfg_file), "--out", str(b), "--seed", "9", "--trials", "2"])
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["config_hash"] != mb["config_hash"]
    assert ma["experiment_hash"] == mb["experiment_hash"]
    assert mb["trials"] == 2


def test_bad_lambda_exit_2(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(CONFIG.replace("lambda: 0.25", "lambda: 0.7"))
    proc = subprocess.run([sys.executable, "-m", "asyncbyz.cli", "run", "--config", str(path),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "lambda" in proc.stderr and "< 0.5" in proc.stderr and "line 4" in proc.stderr


def test_runtime_fault_exit_1(tmp_path):
    trace = tmp_path / "arrivals.csv"
    trace.write_text("".join(f"{t},0,0\n" for t in range(1, 11)))
    path = tmp_path / "fault.yaml"
    path.write_text(f"optimizer: {{horizon: 20}}\nschedule: {{kind: trace-file, trace_path: {trace}}}\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "o")]) == 1


def test_assert_level_flag(cfg_file, tmp_path):
    out = tmp_path / "dbg"
    main(["run", "--config", str(cfg_file), "--out", str(out), "--assert-level", "debug"])
    line = (out / "summary.csv").read_text().splitlines()[1].split(",")
    assert int(line[6]) > 0 and int(line[7]) == 0


# -- aggregate ------------------------------------------------------------------

def aggregate_output(tmp_path, capsys, text):
    path = tmp_path / "vecs.txt"
    path.write_text(text)
    code = main(["aggregate", str(path)])
    return code, capsys.readouterr()


def test_aggregate_ctma_hand_trace(tmp_path, capsys):
    code, out = aggregate_output(tmp_path, capsys,
                                 "1 3 0.3333333333333333 weighted-gm true\n1 0\n1 0.1\n1 100\n")
    assert code == 0
    assert float(out.out) == pytest.approx(0.05, abs=1e-12)


def test_aggregate_equal_weight_cwmed_is_median(tmp_path, capsys):
    code, out = aggregate_output(tmp_path, capsys,
                                 "2 5 0 weighted-cwmed false\n1 5 -1\n1 1 2\n1 4 0\n1 2 9\n1 3 7\n")
    assert code == 0
    assert [float(v) for v in out.out.split()] == [3.0, 2.0]


def test_aggregate_single_vector(tmp_path, capsys):
    code, out = aggregate_output(tmp_path, capsys, "3 1 0 weighted-mean 0\n2.5 0.1 -7 1e300\n")
    assert code == 0
    assert [float(v) for v in out.out.split()] == [0.1, -7.0, 1e300]


def test_aggregate_prints_17_digits(tmp_path, capsys):
    _, out = aggregate_output(tmp_path, capsys, "1 2 0 weighted-mean 0\n1 0\n2 1\n")
    assert out.out.strip() == "%.17g" % (2 / 3)


def test_aggregate_dimension_mismatch(tmp_path, capsys):
    code, out = aggregate_output(tmp_path, capsys, "2 2 0 weighted-mean 0\n1 1 2\n1 1\n")
    assert code == 2 and "coordinates" in out.err


# -- report ---------------------------------------------------------------------

def test_report_empty_list_exit_2(capsys):
    assert main(["report"]) == 2


def test_report_schema_mismatch(tmp_path):
    bad = tmp_path / "trace.csv"
    bad.write_text("trial,t,loss\n0,1,0.5\n")
    assert main(["report", str(bad), "--out", str(tmp_path)]) == 2


def test_report_round_trip_matches_engine(cfg_file, tmp_path):
    out = tmp_path / "r"
    main(["run", "--config", str(cfg_file), "--out", str(out)])
    (group,) = summarize([out / "trace.csv"])
    engine = run(load_config(cfg_file).simulation).summary()
    assert group["final"] == engine
    data = read_trace(out / "trace.csv")
    assert data["t"].max() == 400


def test_pooled_stderr_shrinks(cfg_file, tmp_path):
    # same experiment, duplicated: n trials become 2n identical-in-distribution values
    cfg_file.write_text(CONFIG.replace("trials: 3", "trials: 40").replace("horizon: 400", "horizon: 100"))
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(cfg_file), "--out", str(a)])
    main(["run", "--config", str(cfg_file), "--out", str(b)])
    single = summarize([a / "trace.csv"])[0]["final"]
    pooled = summarize([a / "trace.csv", b / "trace.csv"])
    assert len(pooled) == 1
    n = single[2]
    assert pooled[0]["final"][2] == 2 * n
    ratio = single[1] / pooled[0]["final"][1]
    # exact for duplicated samples with the n-1 estimator; -> sqrt(2) as n grows
    assert ratio == pytest.approx(math.sqrt((2 * n - 1) / (n - 1)), rel=1e-12)
    assert ratio == pytest.approx(math.sqrt(2), rel=0.02)


def test_report_over_lambda_sweep_is_monotone(tmp_path, capsys):
    cfg = tmp_path / "sweep.yaml"
    cfg.write_text("""\
trials: 10
metric_stride: 100
problem: {dim: 10}
schedule: {m_honest: 5, m_byzantine: 4}
aggregator: {base: weighted-cwmed}
optimizer: {horizon: 2000, eta_scale: 0.25}
attack: {kind: sign-flip}
sweep: {axis: lambda, values: [0.0, 0.2, 0.4]}
""")
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(cfg), "--out", str(out), "--plot"]) == 0
    assert (out / "sweep.svg").exists()
    capsys.readouterr()
    traces = [str(out / f"lambda={v}" / "trace.csv") for v in (0.0, 0.2, 0.4)]
    assert main(["report", *traces, "--out", str(tmp_path / "rep"), "--plot"]) == 0
    printed = capsys.readouterr().out.splitlines()[1:]
    finals = [float(line.split(",")[3]) for line in printed]
    assert len(finals) == 3 and finals[0] <= finals[1] <= finals[2]
    assert (tmp_path / "rep" / "excess_loss.svg").exists()
    assert (tmp_path / "rep" / "report.csv").read_text().startswith("experiment_hash,label,t,mean,stderr,n")


def test_plot_is_deterministic(cfg_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(cfg_file), "--out", str(a), "--plot"])
    main(["run", "--config", str(cfg_file), "--out", str(b), "--plot"])
    assert (a / "excess_loss.svg").read_bytes() == (b / "excess_loss.svg").read_bytes()


def test_console_entry_point_help():
    proc = subprocess.run([sys.executable, "-m", "asyncbyz.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for cmd in ("run", "aggregate", "sweep", "report"):
        assert cmd in proc.stdout


def test_trace_values_round_trip(cfg_file, tmp_path):
    out = tmp_path / "rt"
    main(["run", "--config", str(cfg_file), "--out", str(out)])
    res = run(load_config(cfg_file).simulation)
    data = read_trace(out / "trace.csv")
    np.testing.assert_array_equal(data["excess_loss"], [r.excess_loss for r in res.rows])
    np.testing.assert_array_equal(data["grad_error_sq"], [r.grad_error_sq for r in res.rows])
