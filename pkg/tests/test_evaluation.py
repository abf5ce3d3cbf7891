import json

import numpy as np
import pytest

from wrapgp.artifact import generate_synthetic
from wrapgp.evaluation import (
    BenchmarkReport,
    TrajectoryPair,
    Variant,
    benchmark,
    dtwd,
    latent_bounds,
    latent_endpoints,
    on_manifold_fraction,
)
from wrapgp.exceptions import ManifoldMismatchError, ModelStateError
from wrapgp.manifolds import ManifoldPoint, ManifoldSpec

S1 = ManifoldSpec.sphere(1)


def test_dtwd_ambient():
    pair = TrajectoryPair([[0.0, 0.0], [1.0, 0.0]], [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
    assert pair.distance_matrix().shape == (2, 3)
    assert dtwd(pair) == pytest.approx(1.0)
    # identical trajectories
    same = TrajectoryPair(np.eye(3), np.eye(3))
    assert dtwd(same) == 0.0


def test_dtwd_manifold():
    pair = TrajectoryPair([[1.0, 0.0]], [[0.0, 1.0]], "ManifoldGeodesic", spec=S1)
    assert pair.mode == "manifold"
    assert dtwd(pair) == pytest.approx(np.pi)
    points = [ManifoldPoint(S1, [1.0, 0.0]), ManifoldPoint(S1, [-1.0, 0.0])]
    pair = TrajectoryPair(points, points[:1], "manifold")
    assert pair.spec == S1
    # sum_j min_i = 0, sum_i min_j = 0 + pi
    assert dtwd(pair) == pytest.approx(np.pi)


def test_trajectory_pair_errors():
    with pytest.raises(ValueError):
        TrajectoryPair([[0.0]], [[1.0]], mode="chebyshev")
    with pytest.raises(ValueError):
        TrajectoryPair([], [[1.0]])
    with pytest.raises(ManifoldMismatchError):
        TrajectoryPair([[0.0, 0.0]], [[0.0, 0.0, 0.0]])
    with pytest.raises(ManifoldMismatchError):
        TrajectoryPair([[1.0, 0.0]], [[0.0, 1.0]], "manifold")
    with pytest.raises(ManifoldMismatchError):
        TrajectoryPair([ManifoldPoint(S1, [1.0, 0.0])], [[0.0, 1.0]], "manifold", spec=ManifoldSpec.euclidean(2))


def test_on_manifold_fraction():
    S2 = ManifoldSpec.sphere(2)
    assert on_manifold_fraction([[1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 0]], S2) == pytest.approx(2 / 3)
    assert on_manifold_fraction([[1.0 + 1e-8, 0, 0]], S2) == 1.0
    assert on_manifold_fraction([[1.0 + 1e-8, 0, 0]], S2, tol=1e-10) == 0.0
    with pytest.raises(ValueError):
        on_manifold_fraction(np.zeros((0, 3)), S2)


def test_variant_validation():
    with pytest.raises(ValueError):
        Variant("a", solver="newton")
    with pytest.raises(ValueError):
        Variant("a", metric="fisher")
    with pytest.raises(ValueError):
        Variant("a", metric="kde")
    v = Variant("a", solver="graph", metric="kde", kde_sigma=0.5)
    assert v.describe() == dict(name="a", solver="graph", metric="kde", kde_sigma=0.5, runs={})


def test_latent_bounds():
    np.testing.assert_allclose(latent_bounds([[0.0, 0.0], [1.0, 2.0]]), [[-0.1, 1.1], [-0.2, 2.2]])
    b = latent_bounds([[1.0, 1.0]], pad=0.5)
    assert np.all(b[:, 1] > b[:, 0])


def test_latent_endpoints(trained_model, tiny_dataset):
    ends = latent_endpoints(trained_model, tiny_dataset)
    assert len(ends) == tiny_dataset.n_trajectories
    for (start, end), t in zip(ends, tiny_dataset.trajectories()):
        np.testing.assert_array_equal(start, trained_model.X[t[0]])
        np.testing.assert_array_equal(end, trained_model.X[t[-1]])
    other = generate_synthetic("C_R2xSPD2", n_traj=1, n_points=10, seed=0)
    with pytest.raises(ManifoldMismatchError):
        latent_endpoints(trained_model, other)


def test_benchmark(trained_model, tiny_dataset, tmp_path):
    variants = [
        Variant("straight", {0: trained_model}),
        Variant("graph", {0: trained_model}, solver="graph"),
        Variant("spline-kde", {0: trained_model}, solver="spline", metric="kde", kde_sigma=0.5),
        Variant("broken", error="FactorizationError: singular"),
    ]
    settings = dict(resolution=8, n_quad=20, n_control=4, iterations=5)
    report = benchmark(tiny_dataset, variants, settings, seeds=[0])
    assert report.names == ["straight", "graph", "spline-kde", "broken"]
    for name in ("straight", "graph", "spline-kde"):
        row = report[name]
        assert not row["failed"]
        assert row["on_manifold_fraction"] == 1.0
        assert row["dtwd_std"] == 0.0
        assert row["dtwd_mean"] > 0
        assert row["dtwd_per_seed"] == [row["dtwd_mean"]]
        assert row["n_geodesics"] == tiny_dataset.n_trajectories
    assert report["broken"]["failed"]
    assert report["broken"]["error"].startswith("FactorizationError")
    with pytest.raises(KeyError):
        report["missing"]

    md = report.to_markdown()
    assert md.splitlines()[0] == "| metric | straight | graph | spline-kde | broken |"
    assert "failed" in md.splitlines()[2]

    again = benchmark(tiny_dataset, variants, settings, seeds=[0])
    assert again.to_dict() == report.to_dict()

    json_path, md_path = report.save(str(tmp_path / "report"))
    with open(json_path) as f:
        assert BenchmarkReport.from_dict(json.load(f)).to_dict() == report.to_dict()
    with open(md_path) as f:
        assert f.read() == md


def test_benchmark_errors(trained_model, tiny_dataset, small_model):
    with pytest.raises(ModelStateError):
        benchmark(tiny_dataset, [Variant("a", {0: trained_model})], seeds=[0, 1])
    with pytest.raises(ModelStateError):
        benchmark(tiny_dataset, [Variant("a", {0: small_model})], seeds=[0])
    with pytest.raises(ValueError):
        benchmark(tiny_dataset, [Variant("a", {0: trained_model})], seeds=[])
    with pytest.raises(ValueError):
        benchmark(tiny_dataset, [Variant("a", {0: trained_model})], dict(stepsize=1.0))
