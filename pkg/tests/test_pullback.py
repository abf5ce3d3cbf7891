import numpy as np
import pytest

from wrapgp.dataset import Dataset
from wrapgp.exceptions import UnsupportedOperationError
from wrapgp.kernels import MultitaskKernel, SEKernel, TaskCovariance
from wrapgp.lvm import LatentModel
from wrapgp.manifolds import ManifoldSpec
from wrapgp.pullback import (
    KDEMetric,
    MetricField,
    ambient_metric,
    exp_jacobian,
    expected_pullback,
    floor_psd,
    jacobian_posterior,
    jacobian_posterior_dense,
    kde_metric,
    magnification,
    metric_grid,
    pullback_expectation,
    write_metric_grid,
)


def _euclidean_model(rng, lengthscale=0.8, variance=1.3):
    X = rng.normal(size=(15, 2))
    A = np.array([[1.0, 0.5], [-0.3, 2.0]])
    d = Dataset(ManifoldSpec.euclidean(2), 0.1 * X @ A)
    kernel = MultitaskKernel(SEKernel.from_values(lengthscale, variance), TaskCovariance.init(2, rng=rng, scale=0.5),
                             np.log(0.01))
    return LatentModel(d, 2, X=X, kernel=kernel)


def test_jacobian_posterior_matches_dense(small_model):
    xs = np.array([0.2, -0.4])
    post = jacobian_posterior(small_model, xs)
    assert post.mean.shape == (2, 2)
    mean, cov = jacobian_posterior_dense(small_model, xs)
    np.testing.assert_allclose(post.mean.reshape(-1, order="F"), mean, atol=1e-10)
    np.testing.assert_allclose(post.vec_covariance(), cov, atol=1e-10)


def test_jacobian_mean_is_mean_derivative(small_model):
    xs = np.array([0.3, 0.1])
    h = 1e-6
    fd = np.array([
        (small_model.predict_mean(xs + h * e)[0] - small_model.predict_mean(xs - h * e)[0]) / (2 * h)
        for e in np.eye(2)
    ])
    np.testing.assert_allclose(jacobian_posterior(small_model, xs).mean, fd, atol=1e-4)


def test_pullback_expectation_monte_carlo(small_model):
    post = jacobian_posterior(small_model, [0.2, -0.4])
    G_check = np.array([[2.0, 0.3], [0.3, 0.5]])
    J_T = post.sample(100000, rng=0)
    mc = np.mean(J_T @ G_check @ np.swapaxes(J_T, 1, 2), axis=0)
    exact = pullback_expectation(post.mean, post.row_cov, post.col_cov, G_check)
    assert np.linalg.norm(mc - exact) <= 0.01 * np.linalg.norm(exact)


def test_pullback_expectation_identity_task(rng):
    # k^f = I and G_check = I: E[J^T J] = mean mean^T + M row_cov
    mean = rng.normal(size=(2, 3))
    L = rng.normal(size=(2, 2))
    row_cov = L @ L.T
    G = pullback_expectation(mean, row_cov, np.eye(3), np.eye(3))
    np.testing.assert_allclose(G, mean @ mean.T + 3 * row_cov, rtol=1e-12)

    base = _euclidean_model(rng)
    kernel = MultitaskKernel(base.kernel.latent, TaskCovariance.identity(2), base.kernel.log_noise)
    model = LatentModel(base.dataset, 2, X=base.X, kernel=kernel)
    xs = np.array([0.3, -0.7])
    post = jacobian_posterior(model, xs)
    np.testing.assert_allclose(expected_pullback(model, xs), post.mean @ post.mean.T + 2 * post.row_cov,
                               rtol=1e-10, atol=1e-14)


def test_expected_pullback_psd(small_model, rng):
    for xs in rng.normal(scale=2, size=(20, 2)):
        G = expected_pullback(small_model, xs)
        np.testing.assert_allclose(G, G.T, atol=1e-14)
        assert np.linalg.eigvalsh(G)[0] > 0
        assert magnification(small_model, xs) == pytest.approx(np.sqrt(np.linalg.det(G)))


def test_far_field_magnification(rng):
    model = _euclidean_model(rng)
    kf = model.kernel.task.matrix
    expected = np.trace(kf) * 1.3 / 0.8**2
    assert magnification(model, [100.0, 100.0]) == pytest.approx(expected, rel=1e-10)
    G = expected_pullback(model, [100.0, 100.0])
    np.testing.assert_allclose(G, expected * np.eye(2), rtol=1e-10)
    # the metric is larger away from the data than at their centre
    assert magnification(model, model.X.mean(axis=0)) < expected


def test_euclidean_exp_jacobian(rng):
    model = _euclidean_model(rng)
    np.testing.assert_array_equal(exp_jacobian(model, [0.1, 0.2]), np.eye(2))
    np.testing.assert_array_equal(ambient_metric(model, [0.1, 0.2]), np.eye(2))


def test_exp_jacobian_methods(small_model):
    xs = np.array([0.4, -0.2])
    np.testing.assert_allclose(exp_jacobian(small_model, xs, method="autograd"),
                               exp_jacobian(small_model, xs, method="fd"), atol=1e-6)
    G_fd = expected_pullback(small_model, xs, method="fd")
    G_ad = expected_pullback(small_model, xs, method="autograd")
    np.testing.assert_allclose(G_ad, G_fd, rtol=1e-5, atol=1e-8)


def test_floor_psd():
    G = np.array([[1.0, 1.0], [1.0, 1.0]])
    F = floor_psd(G, 1e-3)
    assert np.linalg.eigvalsh(F)[0] == pytest.approx(1e-3, rel=1e-6)
    np.testing.assert_array_equal(floor_psd(np.eye(2)), np.eye(2))


def test_metric_field(small_model, rng):
    field = MetricField(small_model, max_cache=30)
    assert field.mode == "SphereRound"
    X = rng.normal(size=(20, 2))
    G = field(X)
    np.testing.assert_allclose(G[3], expected_pullback(small_model, X[3]), rtol=1e-10, atol=1e-14)
    np.testing.assert_array_equal(field(X[:5]), G[:5])
    field(rng.normal(size=(20, 2)))
    assert len(field._cache) <= 30
    np.testing.assert_allclose(field.magnification(X[:2]), [magnification(small_model, x) for x in X[:2]])


def test_kde_metric():
    X = np.zeros((1, 2))
    sigma = 0.5
    xs = np.array([0.3, 0.4])
    p = np.exp(-0.5 * 0.25 / sigma**2) / (2 * np.pi * sigma**2)
    eps = 1e-12 / (2 * np.pi * sigma**2)
    assert kde_metric(X, sigma, xs) == pytest.approx((p + eps) ** -1.0, rel=1e-12)
    with pytest.raises(ValueError):
        KDEMetric(X, 0.0)


def test_kde_metric_smooth():
    angles = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    X = 3 * np.column_stack((np.cos(angles), np.sin(angles)))
    metric = KDEMetric(X, 1.0)
    for x in ([0.0, 0.0], [3.0, 0.0], [1.0, 2.0]):
        x = np.asarray(x)
        lam0 = metric.lam(x)[0]
        for d in np.eye(2) * 0.01:
            assert abs(metric.lam(x + d)[0] - lam0) < 1e-2 * lam0
    assert metric.lam([[0.0, 0.0]])[0] > metric.lam([[3.0, 0.0]])[0]


def test_metric_grid(small_model, tmp_path):
    bounds = [[-1, 1], [-2, 2]]
    grid = metric_grid(small_model, bounds, resolution=5)
    assert grid.colnames == ["x1", "x2", "g11", "g12", "g22", "magnification"]
    assert len(grid) == 25
    # row-major, x1 slowest
    np.testing.assert_allclose(grid["x1"][:5], -1.0)
    np.testing.assert_allclose(grid["x2"][:5], np.linspace(-2, 2, 5))
    G = expected_pullback(small_model, [grid["x1"][7], grid["x2"][7]])
    assert grid["g12"][7] == pytest.approx(G[0, 1], rel=1e-10, abs=1e-14)

    parallel = metric_grid(MetricField(small_model), bounds, resolution=5, n_jobs=2)
    np.testing.assert_allclose(parallel["magnification"], grid["magnification"], rtol=1e-12)

    csv_path, json_path = write_metric_grid(str(tmp_path / "grid.csv"), grid, bounds, 5)
    assert csv_path.endswith("grid.csv") and json_path.endswith("grid.json")

    with pytest.raises(ValueError):
        metric_grid(small_model, [[1, -1], [0, 1]], resolution=5)


def test_metric_grid_needs_q2():
    S2 = ManifoldSpec.sphere(2)
    d = Dataset(S2, [[1.0, 0, 0], [0.0, 1.0, 0], [0.0, 0, 1.0]])
    model = LatentModel(d, 3, X=np.eye(3))
    with pytest.raises(UnsupportedOperationError):
        metric_grid(model, [[0, 1], [0, 1]], resolution=3)
