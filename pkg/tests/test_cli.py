import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from svdkifmm.bem import save_mesh
from svdkifmm.cli import main
from svdkifmm.geometry import cube_points, icosphere
from svdkifmm.report import RunReport


def write_points(path, x):
    with open(path, "w") as fh:
        fh.write(f"{len(x)}\n")
        for row in x:
            fh.write(" ".join(repr(float(c)) for c in row) + "\n")


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def sphere_off(tmp_path_factory):
    path = tmp_path_factory.mktemp("mesh") / "sphere.off"
    save_mesh(icosphere(3), path)
    return path


def test_eval_two_points(tmp_path):
    write_points(tmp_path / "x.txt", [[0, 0, 0], [1, 0, 0]])
    (tmp_path / "q.txt").write_text("1\n0\n")
    out = tmp_path / "p.txt"
    assert main(["eval", "--points", str(tmp_path / "x.txt"), "--densities",
                 str(tmp_path / "q.txt"), "--out", str(out)]) == 0
    pot = np.loadtxt(out)
    assert pot[0] == 0.0
    assert pot[1] == pytest.approx(1 / (4 * np.pi), rel=1e-6)


def test_eval_check_dense(tmp_path, capsys):
    x = cube_points(4096, seed=3)
    write_points(tmp_path / "x.txt", x)
    np.savetxt(tmp_path / "q.txt", np.random.default_rng(3).standard_normal(4096))
    rep = tmp_path / "r.json"
    assert main(["eval", "--points", str(tmp_path / "x.txt"), "--densities",
                 str(tmp_path / "q.txt"), "--out", str(tmp_path / "p.txt"), "--check-dense",
                 "--report", str(rep)]) == 0
    assert "relative L2 error vs direct sum" in capsys.readouterr().out
    report = RunReport.from_json(rep.read_text())
    assert report.n == 4096
    assert report.error <= 1e-3


def test_eval_missing_densities(tmp_path, capsys):
    write_points(tmp_path / "x.txt", [[0, 0, 0], [1, 0, 0]])
    out = tmp_path / "p.txt"
    code = main(["eval", "--points", str(tmp_path / "x.txt"), "--densities",
                 str(tmp_path / "nope.txt"), "--out", str(out)])
    assert code == 2
    assert not out.exists()
    assert "nope.txt" in capsys.readouterr().err


def test_eval_malformed_points(tmp_path):
    (tmp_path / "x.txt").write_text("2\n0 0 0\n1 0\n")
    (tmp_path / "q.txt").write_text("1\n0\n")
    assert main(["eval", "--points", str(tmp_path / "x.txt"), "--densities",
                 str(tmp_path / "q.txt"), "--out", str(tmp_path / "p.txt")]) == 2


def test_config_violation_exit_code(tmp_path):
    write_points(tmp_path / "x.txt", [[0, 0, 0], [1, 0, 0]])
    (tmp_path / "q.txt").write_text("1\n0\n")
    assert main(["eval", "--points", str(tmp_path / "x.txt"), "--densities",
                 str(tmp_path / "q.txt"), "--out", str(tmp_path / "p.txt"), "--d", "0.9"]) == 2


def test_solve_dirichlet_const(tmp_path, sphere_off):
    out, rep = tmp_path / "sol.csv", tmp_path / "rep.json"
    assert main(["solve", "--mesh", str(sphere_off), "--dirichlet-const", "1", "--out", str(out),
                 "--report", str(rep)]) == 0
    rows = read_csv(out)
    assert len(rows) == 1280
    q = np.array([float(r["q"]) for r in rows])
    assert abs(q.mean() - 1.0) <= 0.02
    data = json.loads(rep.read_text())
    assert data["extra"]["solver"]["converged"] is True


def test_solve_dense_baseline(tmp_path, sphere_off, capsys):
    rep = tmp_path / "rep.json"
    assert main(["solve", "--mesh", str(sphere_off), "--dirichlet-const", "1", "--out",
                 str(tmp_path / "sol.csv"), "--report", str(rep), "--dense-baseline"]) == 0
    assert "vs dense solve" in capsys.readouterr().out
    assert json.loads(rep.read_text())["error"] <= 1e-3


def test_solve_mixed_bc_file(tmp_path, sphere_off):
    mesh = icosphere(3)
    with open(tmp_path / "bc.csv", "w") as fh:
        fh.write("element_id,kind,value\n")
        for j, c in enumerate(mesh.centroids):
            fh.write(f"{j},{'d' if c[2] > 0 else 'n'},{1.0 if c[2] > 0 else 0.0}\n")
    out = tmp_path / "sol.csv"
    assert main(["solve", "--mesh", str(sphere_off), "--bc", str(tmp_path / "bc.csv"),
                 "--out", str(out), "--eps1", "1e-5"]) == 0
    rows = read_csv(out)
    u = np.array([float(r["u"]) for r in rows])
    # u = 1 everywhere is the harmonic solution with these data
    assert np.abs(u - 1).max() <= 2e-2


def test_solve_bad_bc_kind(tmp_path, sphere_off, capsys):
    (tmp_path / "bad.csv").write_text("element_id,kind,value\n0,d,1\n1,x,1\n")
    out = tmp_path / "sol.csv"
    assert main(["solve", "--mesh", str(sphere_off), "--bc", str(tmp_path / "bad.csv"),
                 "--out", str(out)]) == 2
    err = capsys.readouterr().err
    assert "bad.csv:3" in err and "'x'" in err
    assert not out.exists()


def test_solve_not_converged(tmp_path, sphere_off):
    rep = tmp_path / "rep.json"
    code = main(["solve", "--mesh", str(sphere_off), "--dirichlet-const", "1", "--out",
                 str(tmp_path / "sol.csv"), "--report", str(rep), "--max-iter", "2",
                 "--tol", "1e-12"])
    assert code == 3
    assert json.loads(rep.read_text())["extra"]["solver"]["iterations"] == 2


def test_compress_stats_eps2_zero(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["compress-stats", "--p", "6", "--eps1", "1e-3", "--c2", "0", "--out",
                 str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 316
    assert all(r["rank"] == r["compressed_dim"] for r in rows)
    assert all(int(r["original_dim"]) == 152 for r in rows)


def test_compress_stats_rank_decay(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["compress-stats", "--p", "6", "--eps1", "1e-4", "--out", str(out)]) == 0
    rows = read_csv(out)
    dist = np.array([max(abs(int(r[k])) for k in ("di", "dj", "dk")) for r in rows])
    rank = np.array([int(r["rank"]) for r in rows])
    assert set(dist) == {2, 3}
    assert rank[dist == 3].mean() <= rank[dist == 2].mean()
    assert all(0 <= float(r["spectral_error"]) < 1 for r in rows)


def test_compress_stats_paper_setting(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["compress-stats", "--p", "8", "--c1", "0.1", "--depth", "10", "--out",
                 str(out)]) == 0
    dims = {int(r["compressed_dim"]) for r in read_csv(out)}
    assert len(dims) == 1 and 70 <= dims.pop() <= 100


def test_compress_stats_config_errors(tmp_path):
    out = str(tmp_path / "c.csv")
    assert main(["compress-stats", "--eps1", "2", "--out", out]) == 2
    assert main(["compress-stats", "--c1", "0.1", "--out", out]) == 2
    assert main(["compress-stats", "--eps1", "1e-3", "--d", "0.8", "--out", out]) == 2


def test_bench_scaling(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--n-list", "1000,8000", "--geometry", "cube-points", "--repeat", "3",
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [int(r["N"]) for r in rows] == [1000, 8000]
    t = [float(r["T_mvm"]) for r in rows]
    assert t[1] / t[0] <= 12
    mem = [int(r["memory"]) for r in rows]
    assert mem[1] >= mem[0]
    assert all(r["error"] != "" for r in rows)


def test_bench_mesh_rows(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--n-list", "1280,5120", "--geometry", "icosphere-mesh", "--repeat", "1",
                 "--out", str(out)]) == 0
    rows = read_csv(out)
    assert [int(r["N"]) for r in rows] == [1280, 5120]
    assert int(rows[1]["memory"]) >= int(rows[0]["memory"])
    # the dense BEM oracle is skipped beyond its size guard
    assert rows[0]["error"] != "" and rows[1]["error"] == ""


def test_deterministic_with_seed(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"b{k}.csv"
        main(["bench", "--n-list", "2000", "--geometry", "sphere-points", "--seed", "7",
              "--repeat", "1", "--out", str(out)])
        outs.append(read_csv(out)[0])
    assert outs[0]["error"] == outs[1]["error"]
    assert outs[0]["memory"] == outs[1]["memory"]


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "svdkifmm", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0
    for cmd in ("eval", "solve", "compress-stats", "bench"):
        assert cmd in res.stdout
    res = subprocess.run([sys.executable, "-m", "svdkifmm", "frobnicate"], capture_output=True,
                         text=True)
    assert res.returncode == 2
