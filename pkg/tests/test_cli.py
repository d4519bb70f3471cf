import json
import subprocess
import sys

import numpy as np
import pytest

from conic_splitter import cli
from conic_splitter.apps import normalize_instance
from conic_splitter.io import read_cone_program, write_cone_program
from conic_splitter.stuffing import NetworkInstance, NetworkShape, get_template, stuff

TIMING = set(cli.TIMING_COLUMNS)


@pytest.fixture
def single_user_file(tmp_path):
    # h = 1, sigma = 1, gamma = 1, ample budget: the minimum norm is 1
    inst = NetworkInstance(NetworkShape.uniform(1, 1, 1), [[1.0]], [100.0], [1.0], [1.0])
    path = tmp_path / "single.cone"
    write_cone_program(stuff(get_template(inst.shape, inst.field), inst), path)
    return path


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_optimal(single_user_file, capsys):
    code, out, _ = run(["solve", str(single_user_file)], capsys)
    assert code == 0
    data = json.loads(out)
    assert data["status"] == "Optimal"
    assert data["objective"] == pytest.approx(1.0, abs=1e-2)


def test_solve_infeasible_exit_code(tmp_path, capsys):
    inst = NetworkInstance(NetworkShape.uniform(1, 1, 1), [[1.0]], [0.5], [1.0], [1.0])
    path = tmp_path / "infeasible.cone"
    write_cone_program(stuff(get_template(inst.shape, inst.field), inst), path)
    code, out, _ = run(["solve", str(path)], capsys)
    assert code == 2
    assert json.loads(out)["status"] == "PrimalInfeasible"


def test_solve_iteration_limit(single_user_file, capsys):
    code, _, _ = run(["solve", str(single_user_file), "--max-iters", "25", "--no-equilibrate",
                      "--eps", "1e-12"], capsys)
    assert code == 4


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cone"
    bad.write_text("n: x\n")
    code, _, err = run(["solve", str(bad)], capsys)
    assert code == 1
    assert "line 1" in err
    code, _, _ = run(["solve", str(tmp_path / "missing.cone")], capsys)
    assert code == 1


@pytest.mark.parametrize("argv", [
    ["benchmark", "--trials", "0"],
    ["benchmark", "--shape", "0,1,1"],
    ["experiment", "nope"],
    ["experiment", "maxmin", "--tol", "-1"],
])
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    assert info.value.code == 1


def test_stuff_round_trip(tmp_path, capsys):
    out = tmp_path / "net.cone"
    assert cli.main(["stuff", "--shape", "3,2,2", "--seed", "4", "--out", str(out)]) == 0
    p = read_cone_program(out)
    assert p.n == 1 + 3 + 2 + 2 * 6 * 2
    code, text, _ = run(["solve", str(out)], capsys)
    assert code in (0, 2)


# a 200 m half-width keeps every link budget comfortable at moderate targets
def test_benchmark_all_optimal(capsys):
    code, out, _ = run(["benchmark", "--shape", "5,5,1", "--trials", "3", "--region", "200"], capsys)
    assert code == 0
    kind, rows = cli.read_table(out)
    assert kind == "benchmark"
    assert len(rows) == 3
    assert all(r["status"] == "Optimal" for r in rows)
    assert [int(r["seed"]) for r in rows] == [0, 1, 2]


def test_benchmark_deterministic(capsys):
    argv = ["benchmark", "--shape", "3,3,2", "--trials", "2", "--seed", "7"]
    _, a, _ = run(argv, capsys)
    _, b, _ = run(argv, capsys)
    strip = lambda rows: [{k: v for k, v in r.items() if k not in TIMING} for r in rows]
    assert strip(cli.read_table(a)[1]) == strip(cli.read_table(b)[1])


def test_benchmark_rebuild_costs_more(capsys):
    argv = ["benchmark", "--shape", "10,10,2", "--trials", "5"]
    _, cached, _ = run(argv, capsys)
    _, rebuilt, _ = run(argv + ["--rebuild"], capsys)
    med = lambda text: np.median([float(r["modeling_ms"]) for r in cli.read_table(text)[1]])
    assert med(rebuilt) > med(cached)


def test_benchmark_warm_start(capsys):
    code, out, _ = run(["benchmark", "--shape", "3,3,1", "--trials", "3", "--warm-start"], capsys)
    assert code == 0
    assert len(cli.read_table(out)[1]) == 3


def test_json_format(capsys):
    code, out, _ = run(["benchmark", "--shape", "2,2,1", "--trials", "2", "--format", "json"], capsys)
    data = json.loads(out)
    assert data["table"] == "benchmark" and data["version"] == cli.TABLE_VERSION
    assert data["columns"] == cli.COLUMNS["benchmark"]
    assert len(data["rows"]) == 2


def test_feasibility_sweep_small(capsys):
    code, out, _ = run(["experiment", "feasibility_sweep", "--shape", "3,3,1", "--trials", "4",
                        "--gamma-db", "0,10,20,40", "--region", "200"], capsys)
    assert code == 0
    rows = cli.read_table(out)[1]
    prob = [float(r["probability"]) for r in rows]
    assert prob[0] == 1.0
    assert all(a >= b for a, b in zip(prob, prob[1:]))
    assert prob[-1] == 0.0


def test_network_power_small(capsys):
    code, out, _ = run(["experiment", "network_power", "--shape", "3,2,1", "--trials", "2",
                        "--gamma-db", "0"], capsys)
    assert code == 0
    row = cli.read_table(out)[1][0]
    assert 0 < float(row["normalized_network_power"]) <= 1
    assert 1 <= float(row["active_raus"]) <= 3


def test_maxmin_small(capsys):
    code, out, _ = run(["experiment", "maxmin", "--shape", "4,3,1", "--trials", "1",
                        "--snr-db", "10"], capsys)
    assert code == 0
    rows = {r["scheme"]: float(r["gamma"]) for r in cli.read_table(out)[1]}
    assert set(rows) == {"optimal", "ZFBF", "RZF", "MRT"}
    for scheme in ("ZFBF", "RZF", "MRT"):
        assert rows["optimal"] >= rows[scheme] - 0.02


def test_threads_env(monkeypatch):
    args = cli.build_parser().parse_args(["benchmark"])
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert cli.make_config(args).workers == 3
    monkeypatch.setenv(cli.THREADS_ENV, "zero")
    with pytest.raises(ValueError):
        cli.make_config(args)


def test_workers_match_serial(capsys):
    argv = ["benchmark", "--shape", "2,2,1", "--trials", "2"]
    _, serial, _ = run(argv, capsys)
    _, pooled, _ = run(argv + ["--workers", "2"], capsys)
    strip = lambda rows: [{k: v for k, v in r.items() if k not in TIMING} for r in rows]
    assert strip(cli.read_table(serial)[1]) == strip(cli.read_table(pooled)[1])


def test_console_script(single_user_file):
    proc = subprocess.run([sys.executable, "-m", "conic_splitter.cli", "solve", str(single_user_file)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["status"] == "Optimal"
