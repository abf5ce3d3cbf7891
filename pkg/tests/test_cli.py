import json
import os

import numpy as np
import pytest
from astropy.table import Table

from wrapgp.cli import EXIT_OK, EXIT_USAGE, build_parser, main
from wrapgp.dataset import Dataset
from wrapgp.lvm import LatentModel
from wrapgp.manifolds import project_check


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """generate-data and train once for all commands that read a model"""
    out = str(tmp_path_factory.mktemp("cli"))
    assert main(["generate-data", "--n-traj", "2", "--n-points", "12", "--seed", "1", "--output-dir", out]) == EXIT_OK
    assert main(["train", "--data", os.path.join(out, "dataset.json"), "--iterations", "20",
                 "--output-dir", out]) == EXIT_OK
    return out


def _manifest(out):
    with open(os.path.join(out, "manifest.json")) as f:
        return json.load(f)


def test_generate_and_train(workdir):
    dataset = Dataset.load(os.path.join(workdir, "dataset.json"))
    assert dataset.N == 24
    assert str(dataset.spec) == "R2xS2"
    model = LatentModel.load(os.path.join(workdir, "model.json"))
    assert model.trained
    assert model.run_config.iterations == 20
    trace = Table.read(os.path.join(workdir, "model_trace.csv"), format="ascii.csv")
    assert trace.colnames == ["iter", "log_posterior"]
    assert len(trace) == 21
    manifest = _manifest(workdir)
    assert "dataset.json" in manifest["artifacts"]
    assert manifest["runs"]["train"]["artifacts"] == ["model.json", "model_trace.csv"]
    assert manifest["runs"]["train"]["config_digest"] == model.run_config.digest()


def test_metric_grid(workdir):
    argv = ["metric-grid", "--model", os.path.join(workdir, "model.json"), "--resolution", "4",
            "--bounds", "-1", "1", "-1", "1", "--output-dir", workdir]
    assert main(argv) == EXIT_OK
    grid = Table.read(os.path.join(workdir, "metric_grid.csv"), format="ascii.csv")
    assert len(grid) == 16
    assert np.all(grid["magnification"] > 0)
    assert "metric_grid.json" in _manifest(workdir)["runs"]["metric-grid"]["artifacts"]
    # kde metric without a bandwidth
    assert main(argv + ["--metric", "kde"]) == EXIT_USAGE


@pytest.mark.parametrize("solver", ["straight", "graph", "spline"])
def test_geodesic(workdir, solver):
    out = f"geo_{solver}"
    argv = ["geodesic", "--model", os.path.join(workdir, "model.json"), "--start", "-0.5", "0", "--end", "0.5", "0",
            "--bounds", "-3", "3", "-3", "3", "--solver", solver, "--resolution", "8", "--n-quad", "20",
            "--n-control", "4", "--iterations", "5", "--out", out, "--output-dir", workdir]
    assert main(argv) == EXIT_OK
    with open(os.path.join(workdir, f"{out}.json")) as f:
        sidecar = json.load(f)
    assert sidecar["solver"] == solver
    assert sidecar["total_length"] > 0
    decoded = Table.read(os.path.join(workdir, f"{out}_decoded.csv"), format="ascii.csv")
    assert decoded.colnames == ["q1", "q2", "q3", "q4", "q5"]
    model = LatentModel.load(os.path.join(workdir, "model.json"))
    for row in np.array([decoded[c] for c in decoded.colnames]).T:
        assert project_check(row, model.spec, 1e-6)


def test_geodesic_wrong_start(workdir):
    argv = ["geodesic", "--model", os.path.join(workdir, "model.json"), "--start", "0", "0", "0",
            "--end", "1", "0", "--output-dir", workdir]
    assert main(argv) == EXIT_USAGE


def test_decode(workdir, tmp_path):
    latent = tmp_path / "latent.csv"
    latent.write_text("x1,x2\n0.0,0.0\n0.5,-0.5\n100.0,100.0\n")
    argv = ["decode", "--model", os.path.join(workdir, "model.json"), "--latent", str(latent), "--variance",
            "--output-dir", workdir]
    assert main(argv) == EXIT_OK
    t = Table.read(os.path.join(workdir, "decoded.csv"), format="ascii.csv")
    assert len(t) == 3
    assert t.colnames[-1] == "variance"
    assert t["variance"][2] > t["variance"][0]

    latent.write_text("x1\n0.0\n")
    assert main(argv) == EXIT_USAGE


def test_usage_errors(tmp_path):
    out = str(tmp_path)
    assert main(["train", "--data", str(tmp_path / "missing.json"), "--output-dir", out]) == EXIT_USAGE
    assert main(["train", "--output-dir", out]) == EXIT_USAGE
    assert main(["generate-data", "--kind", "Z_R2", "--output-dir", out]) == EXIT_USAGE
    assert main(["generate-data", "--n-points", "3", "--output-dir", out]) == EXIT_USAGE
    bad = tmp_path / "bad.toml"
    bad.write_text("[run\n")
    assert main(["generate-data", "--output-dir", out, "--n-traj", "1", "--n-points", "12"]) == EXIT_OK
    assert main(["train", "--data", os.path.join(out, "dataset.json"), "--config", str(bad),
                 "--output-dir", out]) == EXIT_USAGE
    # every trajectory held out
    assert main(["benchmark", "--n-traj", "2", "--n-points", "12", "--holdout", "2", "--no-kde",
                 "--output-dir", out]) == EXIT_USAGE
    # preset on another manifold
    assert main(["train", "--data", os.path.join(out, "dataset.json"), "--experiment", "r3s3",
                 "--output-dir", out]) == EXIT_USAGE


def test_parser():
    args = build_parser().parse_args(["train", "--data", "d.json", "--no-gpdm", "--task-rank", "0"])
    assert args.gpdm is False
    assert args.task_rank == 0
    assert args.wrapped is None
    args = build_parser().parse_args(["benchmark"])
    assert args.seeds == [0, 1, 2]
    assert args.solver == "auto"
    assert args.holdout == 1


@pytest.mark.slow
def test_benchmark_reproducible(tmp_path):
    user = tmp_path / "user.toml"
    user.write_text("[geodesic]\nresolution = 10\n")
    reports = []
    for name in ("a", "b"):
        out = str(tmp_path / name)
        argv = ["benchmark", "--n-traj", "3", "--n-points", "12", "--seeds", "0", "--iterations", "20", "--no-kde",
                "--holdout", "1", "--config", str(user), "--output-dir", out]
        assert main(argv) == EXIT_OK
        with open(os.path.join(out, "benchmark.json"), "rb") as f:
            reports.append(f.read())
        assert sorted(_manifest(out)["runs"]["benchmark"]["artifacts"]) == ["benchmark.json", "benchmark.md"]
    assert reports[0] == reports[1]
    report = json.loads(reports[0])
    assert [row["name"] for row in report["rows"]] == ["GPLVM", "pGPLVM", "WGPLVM", "Riemann2"]
    for row in report["rows"]:
        assert not row["failed"]
        # one geodesic per held-out demonstration
        assert row["n_geodesics"] == 1
        assert 0.0 <= row["on_manifold_fraction"] <= 1.0
    wrapped = [row for row in report["rows"] if row["name"] in ("WGPLVM", "Riemann2")]
    assert all(row["on_manifold_fraction"] == 1.0 for row in wrapped)
