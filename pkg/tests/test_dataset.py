import numpy as np
import pytest

from wrapgp.artifact import SYNTHETIC_KINDS, generate_synthetic, lowpass, resample_polyline
from wrapgp.dataset import Dataset, read_spd_csv, spd_from_timeseries
from wrapgp.exceptions import ManifoldDomainError, ManifoldMismatchError
from wrapgp.manifolds import ManifoldSpec, project_check


def test_dataset_validation():
    S2 = ManifoldSpec.sphere(2)
    with pytest.raises(ManifoldMismatchError):
        Dataset(S2, np.ones((3, 2)))
    with pytest.raises(ManifoldDomainError):
        Dataset(S2, [[1.0, 0, 0], [1.0, 1.0, 0]])
    with pytest.raises(ValueError):
        Dataset(S2, np.tile([1.0, 0, 0], (3, 1)), trajectory_ids=[0, 1, 0])
    d = Dataset(S2, np.tile([1.0, 0, 0], (4, 1)), trajectory_ids=[3, 3, 1, 1])
    assert d.n_trajectories == 2
    assert [t.tolist() for t in d.trajectories()] == [[0, 1], [2, 3]]


def test_dataset_json(tmp_path):
    d = generate_synthetic("C_R2xSPD2", n_traj=2, n_points=15, seed=3)
    path = d.save(str(tmp_path / "d.json"))
    d2 = Dataset.load(path)
    assert d2.spec == d.spec
    np.testing.assert_array_equal(d2.coords, d.coords)
    np.testing.assert_array_equal(d2.trajectory_ids, d.trajectory_ids)
    np.testing.assert_array_equal(d2.timestamps, d.timestamps)
    with pytest.raises(ValueError):
        Dataset.from_dict(dict(spec="S2"))


def test_thin_and_euclidean():
    d = generate_synthetic("J_R2xC_S2", n_traj=3, n_points=40, seed=0)
    t = d.thin(30)
    assert t.n_trajectories == 3
    assert t.N == 30
    for idx_full, idx_thin in zip(d.trajectories(), t.trajectories()):
        np.testing.assert_array_equal(t.coords[idx_thin[[0, -1]]], d.coords[idx_full[[0, -1]]])
    e = d.as_euclidean()
    assert e.spec.is_euclidean
    assert e.spec.ambient_dim == d.spec.ambient_dim


def test_split():
    d = generate_synthetic("J_R2xC_S2", n_traj=4, n_points=12, seed=0)
    train, held_out = d.split(1)
    assert train.n_trajectories == 3
    assert held_out.n_trajectories == 1
    np.testing.assert_array_equal(held_out.coords, d.coords[d.trajectories()[-1]])
    assert not set(map(tuple, held_out.coords)) & set(map(tuple, train.coords))
    both, same = d.split(0)
    assert both is d and same is d
    for n in (-1, 4):
        with pytest.raises(ValueError):
            d.split(n)


def test_read_spd_csv(tmp_path):
    path = tmp_path / "spd.csv"
    path.write_text("trajectory_id,a,b,c,d\n0,2.0,0.5,0.5,1.0\n0,1.0,0.0,0.0,1.0\n1,3.0,0.0,0.0,2.0\n")
    d = read_spd_csv(str(path))
    assert d.spec == ManifoldSpec.spd(2)
    assert d.n_trajectories == 2
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError):
        read_spd_csv(str(path))
    path.write_text("a,b,c,d\n1.0,0.0,0.0,-1.0\n")
    with pytest.raises(ManifoldDomainError):
        read_spd_csv(str(path))


def test_spd_from_timeseries(rng):
    series = [rng.normal(size=(100, 4)) for _ in range(5)]
    d = spd_from_timeseries(series, kind="correlation")
    assert d.spec == ManifoldSpec.spd(4)
    assert d.N == 5
    for row in d.coords:
        assert project_check(row, d.spec, 1e-9)
        np.testing.assert_allclose(np.diag(row.reshape(4, 4)), 1.0, atol=1e-12)


@pytest.mark.parametrize("kind", SYNTHETIC_KINDS)
def test_generate_synthetic(kind):
    d = generate_synthetic(kind, n_traj=3, n_points=20, seed=1)
    assert d.N == 60
    assert d.n_trajectories == 3
    assert all(project_check(row, d.spec, 1e-9) for row in d.coords)
    np.testing.assert_array_equal(d.coords, generate_synthetic(kind, n_traj=3, n_points=20, seed=1).coords)
    assert not np.array_equal(d.coords, generate_synthetic(kind, n_traj=3, n_points=20, seed=2).coords)


def test_generate_synthetic_errors():
    with pytest.raises(ValueError):
        generate_synthetic("Z_R2", n_traj=1)
    with pytest.raises(ValueError):
        generate_synthetic(n_points=5)
    with pytest.raises(ValueError):
        generate_synthetic(noise=-0.1)


def test_polyline_helpers():
    line = resample_polyline([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], 5)
    np.testing.assert_allclose(line, [[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1]])
    flat = np.ones((50, 2))
    np.testing.assert_allclose(lowpass(flat, width=5), flat)
