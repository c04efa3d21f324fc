import json
import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import fast_spec
from insertbench.batch import dump_spec
from insertbench.cli import UNITS, main, metrics_for_files
from insertbench.core import WrenchSeries
from insertbench.decomp import load_sphere_set
from insertbench.metrics import FilterConfig, normalize_scoreboard, trial_metrics
from insertbench.sim import write_series_csv


def cli(*args, env=None, timeout=600):
    e = dict(os.environ)
    e.update(env or {})
    return subprocess.run([sys.executable, "-m", "insertbench.cli", *map(str, args)], capture_output=True, text=True, env=e, timeout=timeout)


@pytest.fixture
def spec_file(tmp_path):
    p = tmp_path / "spec.yaml"
    dump_spec(fast_spec(repetitions=4), p)
    return p


def test_help_documents_units(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    assert "N*m" in out and "in m" in out
    for sub in ("run", "worker", "policy", "metrics", "bench", "decompose"):
        assert sub in out
    assert "m" in UNITS


def test_run_twice_is_byte_identical(spec_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(spec_file), "--local-workers", "2", "--mode", "thread", "--out", str(a), "--no-plots"]) == 0
    assert main(["run", str(spec_file), "--local-workers", "1", "--mode", "thread", "--out", str(b), "--no-plots"]) == 0
    for name in ("report.json", "trials.csv", "histogram.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    report = json.loads((a / "report.json").read_text())
    assert report["n_trials"] == 4


def test_run_writes_figures(tmp_path):
    spec_file = tmp_path / "plots.yaml"
    dump_spec(fast_spec(repetitions=4, **{"output.plots": True}), spec_file)
    out = tmp_path / "o"
    assert main(["run", str(spec_file), "--local-workers", "1", "--mode", "thread", "--out", str(out), "--dump-series"]) == 0
    assert (out / "histogram.png").read_bytes()[:4] == b"\x89PNG"
    assert (out / "metrics.png").exists()
    assert len(list((out / "series").glob("*.csv"))) == 4


def test_run_rejects_bad_spec(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("scene:\n  peg:\n    radus: 0.01\n")
    assert main(["run", str(p), "--local-workers", "1"]) == 1
    assert "scene.peg.radus" in capsys.readouterr().err
    p.write_text("scene: [1, 2\n")
    assert main(["run", str(p)]) == 1
    assert main(["run", str(tmp_path / "missing.yaml")]) == 1


def test_policy_unknown_name_lists_available():
    r = cli("policy", "nope", "--bind", "127.0.0.1:0")
    assert r.returncode == 1
    assert "echo" in r.stderr and "scripted" in r.stderr


def test_worker_unreachable_exits_two():
    import socket

    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    r = cli("worker", "--retries", "1", env={"INSERTBENCH_COORDINATOR": f"127.0.0.1:{port}"})
    assert r.returncode == 2


def test_coordinator_only_with_external_worker(spec_file, tmp_path):
    import socket

    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    out = tmp_path / "co"
    coord = subprocess.Popen(
        [sys.executable, "-m", "insertbench.cli", "run", str(spec_file), "--coordinator-only", "--bind", f"127.0.0.1:{port}", "--out", str(out), "--no-plots", "--timeout", "300"],
        stderr=subprocess.PIPE,
        text=True,
    )
    try:
        w = cli("worker", "--coordinator", f"127.0.0.1:{port}", "--retries", "20")
        assert w.returncode == 0, w.stderr
        assert coord.wait(timeout=120) == 0
    finally:
        if coord.poll() is None:
            coord.kill()
    assert json.loads((out / "report.json").read_text())["n_trials"] == 4


def _write(tmp_path, name, fz, n=200, dt=1e-3):
    data = np.zeros((n, 6))
    data[:, 2] = fz
    s = WrenchSeries(data, dt, name)
    p = tmp_path / f"{name}.csv"
    write_series_csv(s, p)
    return p, s


def test_metrics_constant_force(tmp_path, capsys):
    p, _ = _write(tmp_path, "c", 2.0)
    assert main(["metrics", str(p), "--no-filter"]) == 0
    out = json.loads(capsys.readouterr().out)
    m = out["inputs"][str(p)]
    assert m["E_z"] == pytest.approx(4.0, rel=1e-12)
    assert m["S_z"] == 0.0 and m["E_xy"] == 0.0
    assert out["filter"]["enabled"] is False


def test_metrics_ranking_and_library_equivalence(tmp_path, capsys):
    rng = np.random.default_rng(4)
    paths = []
    for name, scale in (("low", 1.0), ("high", 3.0)):
        data = rng.normal(0, scale, (500, 6))
        s = WrenchSeries(data, 1e-3, name)
        p = tmp_path / f"{name}.csv"
        write_series_csv(s, p)
        paths.append(p)
    assert main(["metrics", *map(str, paths), "--filter-cutoff", "30"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["scoreboard"][str(paths[0])]["E_z"] == 1.0
    assert out["scoreboard"][str(paths[1])]["E_z"] < 1.0
    lib = metrics_for_files(paths, 30.0, 1e-3)
    assert json.loads(json.dumps(lib, sort_keys=True)) == out
    # and the library function matches direct metric calls
    from insertbench.sim import read_series_csv

    direct = trial_metrics(read_series_csv(paths[0]), FilterConfig(30.0))
    for k, v in direct.items():
        assert out["inputs"][str(paths[0])][k] == v


def test_metrics_malformed_csv(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t,fx,fy,fz,tx,ty,tz\n0,0,0,0,0,0,0\n0.001,0,0,x,0,0,0\n")
    r = cli("metrics", p)
    assert r.returncode == 1 and "line 3" in r.stderr


def test_bench_rows(tmp_path, capsys):
    p = tmp_path / "b.yaml"
    dump_spec(fast_spec(**{"scene.bench_sphere_counts": [500, 2000]}), p)
    assert main(["bench", str(p), "--steps", "300", "--repeats", "2"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "spheres,steps,elapsed_s,steps_per_s,mean_contacts"
    rows = [line.split(",") for line in lines[1:]]
    assert [int(r[0]) for r in rows] == [500, 2000]
    assert float(rows[1][4]) >= float(rows[0][4])
    assert main(["bench", str(p), "--steps", "0"]) == 1


def test_bench_timing_stable(tmp_path):
    from insertbench.batch.bench import run_bench

    spec = fast_spec(**{"scene.bench_sphere_counts": [2000]})
    rates = np.array([run_bench(spec, 1000, 3)[0].steps_per_s for _ in range(5)])
    # coefficient of variation across repeated runs
    assert rates.std() / rates.mean() < 0.25


def test_decompose(tmp_path):
    out = tmp_path / "peg.csv"
    assert main(["decompose", "--radius", "0.01", "--height", "0.04", "--count", "300", "--Ra", "1e-5", "--seed", "3", "--out", str(out)]) == 0
    s = load_sphere_set(out)
    assert len(s) == 300
    r = np.hypot(s.centers[:, 0], s.centers[:, 1])
    assert np.all(np.abs(r - 0.01) < 1e-4)
    out2 = tmp_path / "hole.csv"
    assert main(["decompose", "--radius", "0.0105", "--height", "0.04", "--count", "300", "--hole", "--out", str(out2)]) == 0
    assert len(load_sphere_set(out2)) == 300


@pytest.mark.slow
def test_multiprocess_policy_end_to_end(tmp_path):
    spec = fast_spec(
        repetitions=50,
        **{
            "controller.type": "policy",
            "topology.sim_workers": 4,
            "topology.policy_servers": 2,
            "topology.worker_mode": "process",
        },
    )
    p = tmp_path / "e2e.yaml"
    dump_spec(spec, p)
    out = tmp_path / "e2e"
    r = cli("run", p, "--out", out, "--no-plots", "--timeout", "900", timeout=1200)
    assert r.returncode == 0, r.stderr
    report = json.loads((out / "report.json").read_text())
    assert report["n_trials"] == 50
    assert len({row["task_id"] for row in report["trials"]}) == 50
