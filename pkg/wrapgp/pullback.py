"""
Expected pullback metric of a (wrapped) GPLVM.

The Jacobian of the tangent GP at x* is matrix normal,
J^T ~ MN(dK^T A k^f, d2K - dK^T (K^x)^-1 dK, k^f), with A = K^-1 V from the model
cache. The manifold metric is pulled back through the differential of Exp at the
posterior mean:

    G_check = J_Exp^T G_hat J_Exp
    E[G~]   = E[J^T] G_check E[J] + tr(G_check^T k^f) Sigma_r
"""

__all__ = [
    "JacobianPosterior",
    "MetricField",
    "KDEMetric",
    "jacobian_posterior",
    "jacobian_posterior_dense",
    "exp_jacobian",
    "ambient_metric",
    "expected_pullback",
    "pullback_expectation",
    "magnification",
    "metric_grid",
    "write_metric_grid",
    "kde_metric",
    "floor_psd",
]

import dataclasses
import os
from typing import Optional, Union

import joblib
import numpy as np
import numpy.typing as npt
from astropy.table import Table
from scipy import linalg

from .core import config
from .exceptions import UnsupportedOperationError
from .kernels import add_jitter, gram
from .lvm import LatentModel
from .manifolds import chart_metric, exp_coords, exp_jacobian_coords
from .utils import write_json, write_table_csv

PSD_FLOOR = config["pullback"]["psd_floor"]
FD_STEP = config["pullback"]["fd_step"]


@dataclasses.dataclass
class JacobianPosterior:
    """Matrix-normal posterior of the transposed tangent-GP Jacobian.

    mean: Q x M, row_cov: Q x Q, col_cov: M x M (= k^f)
    """

    mean: np.ndarray
    row_cov: np.ndarray
    col_cov: np.ndarray

    def vec_covariance(self) -> npt.NDArray:
        """Covariance of the column-stacked vec(J^T), k^f (x) row_cov."""
        return np.kron(self.col_cov, self.row_cov)

    def sample(self, n: int, rng: Union[None, int, np.random.Generator] = None) -> npt.NDArray:
        """n draws of J^T, shape (n, Q, M)."""
        rng = np.random.default_rng(rng)
        Lr = np.linalg.cholesky(self.row_cov + 1e-14 * np.eye(self.row_cov.shape[0]))
        Lc = np.linalg.cholesky(self.col_cov)
        Z = rng.standard_normal((n,) + self.mean.shape)
        return self.mean + Lr @ Z @ Lc.T


def floor_psd(G: npt.NDArray, floor: float = PSD_FLOOR) -> npt.NDArray:
    """Symmetrize and clamp eigenvalues at floor * trace / Q; works on stacks."""
    G = 0.5 * (G + np.swapaxes(G, -1, -2))
    Q = G.shape[-1]
    lo = floor * np.trace(G, axis1=-2, axis2=-1) / Q
    lo = np.maximum(lo, np.finfo(float).tiny)
    ev, U = np.linalg.eigh(G)
    if np.all(ev >= lo[..., None]):
        return G
    ev = np.maximum(ev, lo[..., None])
    G = (U * ev[..., None, :]) @ np.swapaxes(U, -1, -2)
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def pullback_expectation(mean: npt.NDArray, row_cov: npt.NDArray, col_cov: npt.NDArray,
                         G_check: npt.NDArray) -> npt.NDArray:
    """E[J^T G_check J] for J^T ~ MN(mean, row_cov, col_cov); works on stacks."""
    trace = np.einsum("...ij,ij->...", G_check, col_cov) if col_cov.ndim == 2 else np.einsum(
        "...ij,...ij->...", G_check, col_cov)
    return mean @ G_check @ np.swapaxes(mean, -1, -2) + trace[..., None, None] * row_cov


# ################################################ #
# batched evaluation                               #
# ################################################ #


def _jacobian_posterior_batch(model: LatentModel, Xs: npt.NDArray):
    c = model.cache
    N, Q = model.X.shape
    P = Xs.shape[0]
    se = model.kernel.latent
    ks = se(model.X, Xs)  # (N, P)
    dK = ks.T[:, :, None] * (model.X[None, :, :] - Xs[:, None, :]) / se.lengthscale**2  # (P, N, Q)
    mean = np.einsum("pnq,nm->pqm", dK, c["A"] @ c["kf"])
    sol = linalg.cho_solve(c["chol_x"], np.transpose(dK, (1, 0, 2)).reshape(N, P * Q)).reshape(N, P, Q)
    row = se.variance / se.lengthscale**2 * np.eye(Q) - np.einsum("pnq,npr->pqr", dK, sol)
    row = 0.5 * (row + np.swapaxes(row, -1, -2))
    return mean, row, c["kf"]


def _exp_jacobian_batch(model: LatentModel, F: npt.NDArray, method: str, step: float) -> npt.NDArray:
    if model.spec.is_euclidean:
        return np.broadcast_to(np.eye(model.M), F.shape[:-1] + (model.M, model.M)).copy()
    return exp_jacobian_coords(model.spec, model.basepoint.coords, F, method=method, step=step)


def _expected_pullback_batch(model: LatentModel, Xs: npt.NDArray, method: str = "fd",
                             step: float = FD_STEP, psd_floor: float = PSD_FLOOR) -> npt.NDArray:
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    mean, row, kf = _jacobian_posterior_batch(model, Xs)
    F = model.predict_mean(Xs)
    J_exp = _exp_jacobian_batch(model, F, method, step)
    G_hat = chart_metric(model.spec, exp_coords(model.spec, model.basepoint.coords, F))
    G_check = np.swapaxes(J_exp, -1, -2) @ G_hat @ J_exp
    return floor_psd(pullback_expectation(mean, row, kf, G_check), psd_floor)


# ################################################ #
# single-query operations                          #
# ################################################ #


def jacobian_posterior(model: LatentModel, xs: npt.ArrayLike) -> JacobianPosterior:
    """Matrix-normal posterior of J^T at `xs`."""
    mean, row, kf = _jacobian_posterior_batch(model, np.reshape(np.asarray(xs, dtype=float), (1, -1)))
    return JacobianPosterior(mean[0], row[0], kf.copy())


def jacobian_posterior_dense(model: LatentModel, xs: npt.ArrayLike) -> tuple[npt.NDArray, npt.NDArray]:
    """Vectorized Jacobian posterior assembled densely.

    Returns the mean and covariance of vec(J^T) (column-stacked, index m * Q + r).
    The mean conditions on the noisy Gram, the covariance on the jittered
    noise-free Gram, matching ``jacobian_posterior``.
    """
    xs = np.reshape(np.asarray(xs, dtype=float), -1)
    se = model.kernel.latent
    kf = model.kernel.task.matrix
    Kx = add_jitter(gram(se, model.X), model.jitter)
    ks = se(model.X, xs[None, :])[:, 0]
    dKx = ks[:, None] * (model.X - xs[None, :]) / se.lengthscale**2
    d2Kx = se.variance / se.lengthscale**2 * np.eye(model.Q)
    K_noisy = np.kron(kf, Kx) + np.diag(model.kernel.noise_vector(model.N))
    dK = np.kron(kf, dKx)
    mean = dK.T @ np.linalg.solve(K_noisy, model.V.T.reshape(-1))
    cov = np.kron(kf, d2Kx) - dK.T @ np.linalg.solve(np.kron(kf, Kx), dK)
    return mean, 0.5 * (cov + cov.T)


def exp_jacobian(model: LatentModel, xs: npt.ArrayLike, method: str = "fd",
                 step: float = FD_STEP) -> npt.NDArray:
    """J_Exp at the posterior mean f_E(xs), M x M in intrinsic coordinates."""
    F = model.predict_mean(np.reshape(xs, (1, -1)))
    return _exp_jacobian_batch(model, F, method, step)[0]


def ambient_metric(model: LatentModel, xs: npt.ArrayLike) -> npt.NDArray:
    """Riemannian metric at decode(model, xs) in the output chart of J_Exp."""
    return chart_metric(model.spec, model.decode_many(np.reshape(xs, (1, -1)))[0])


def expected_pullback(model: LatentModel, xs: npt.ArrayLike, method: str = "fd",
                      step: float = FD_STEP, psd_floor: float = PSD_FLOOR) -> npt.NDArray:
    """E[G~](xs), Q x Q, symmetrized and floored."""
    return _expected_pullback_batch(model, np.reshape(xs, (1, -1)), method, step, psd_floor)[0]


def magnification(model_or_metric, xs: npt.ArrayLike) -> float:
    """sqrt(det E[G~](xs)); accepts a LatentModel or any metric field."""
    if isinstance(model_or_metric, LatentModel):
        G = expected_pullback(model_or_metric, xs)
    else:
        G = model_or_metric(np.reshape(xs, (1, -1)))[0]
    return float(np.sqrt(np.linalg.det(G)))


# ################################################ #
# metric fields                                    #
# ################################################ #


class MetricField:
    """Expected pullback metric of a trained model as a batched callable.

    ``field(X)`` maps (P, Q) latent points to (P, Q, Q) metrics. Evaluations are
    memoized per query point, the memo is reset once it holds `max_cache` points.
    """

    def __init__(self, model: LatentModel, method: str = "fd", step: float = FD_STEP,
                 psd_floor: float = PSD_FLOOR, cache: bool = True,
                 max_cache: int = 20000):
        self.model = model
        self.method = method
        self.step = step
        self.psd_floor = psd_floor
        self.use_cache = cache
        self.max_cache = max_cache
        self._cache = {}

    def __repr__(self):
        return "<MetricField [{}] mode={} Q={}>".format(self.model.spec, self.mode, self.Q)

    @property
    def Q(self) -> int:
        return self.model.Q

    @property
    def mode(self) -> str:
        kinds = {c.kind for c in self.model.spec.factors}
        if len(self.model.spec.factors) > 1:
            return "Product"
        return {"euclidean": "Euclidean", "sphere": "SphereRound", "spd": "SPDAffineInvariant"}[kinds.pop()]

    def __call__(self, X: npt.ArrayLike) -> npt.NDArray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.use_cache:
            return _expected_pullback_batch(self.model, X, self.method, self.step, self.psd_floor)
        keys = [tuple(row) for row in X.tolist()]
        missing = [i for i, k in enumerate(keys) if k not in self._cache]
        if missing:
            if len(self._cache) + len(missing) > self.max_cache:
                self._cache = {}
                missing = list(range(len(keys)))
            G = _expected_pullback_batch(self.model, X[missing], self.method, self.step, self.psd_floor)
            for i, g in zip(missing, G):
                self._cache[keys[i]] = g
        return np.array([self._cache[k] for k in keys])

    def magnification(self, X: npt.ArrayLike) -> npt.NDArray:
        return np.sqrt(np.linalg.det(self(X)))

    def clear_cache(self) -> None:
        self._cache = {}


class KDEMetric:
    """Isotropic metric G(x) = lambda(x) I with lambda = (p(x) + eps)^(-2/Q).

    p is a Gaussian kernel density of the training latents with bandwidth sigma,
    eps = floor * max_n p(x_n).
    """

    def __init__(self, X_train: npt.ArrayLike, sigma: float, floor: float = config["kde"]["floor"]):
        if not sigma > 0:
            raise ValueError(f"@KDEMetric: sigma must be positive, got {sigma}")
        self.X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
        self.sigma = float(sigma)
        self.floor = float(floor)
        self.eps = self.floor * float(np.max(self.density(self.X_train)))

    def __repr__(self):
        return "<KDEMetric N={} Q={} sigma={}>".format(self.X_train.shape[0], self.Q, self.sigma)

    @property
    def Q(self) -> int:
        return self.X_train.shape[1]

    def density(self, X: npt.ArrayLike) -> npt.NDArray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        d2 = np.sum((X[:, None, :] - self.X_train[None, :, :]) ** 2, axis=-1)
        norm = (2 * np.pi) ** (self.Q / 2) * self.sigma**self.Q
        return np.sum(np.exp(-0.5 * d2 / self.sigma**2), axis=1) / norm

    def lam(self, X: npt.ArrayLike) -> npt.NDArray:
        return (self.density(X) + self.eps) ** (-2.0 / self.Q)

    def __call__(self, X: npt.ArrayLike) -> npt.NDArray:
        return self.lam(X)[:, None, None] * np.eye(self.Q)

    def magnification(self, X: npt.ArrayLike) -> npt.NDArray:
        return self.lam(X) ** (self.Q / 2)


def kde_metric(X_train: npt.ArrayLike, sigma: float, xs: npt.ArrayLike,
               floor: float = config["kde"]["floor"]) -> float:
    """lambda(xs) of the KDE baseline metric."""
    return float(KDEMetric(X_train, sigma, floor).lam(np.reshape(xs, (1, -1)))[0])


# ################################################ #
# grids                                            #
# ################################################ #


def _check_bounds(bounds: npt.ArrayLike) -> npt.NDArray:
    bounds = np.asarray(bounds, dtype=float).reshape(2, 2)
    if not np.all(np.isfinite(bounds)) or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError(f"@metric_grid: invalid bounds {bounds.tolist()}, need min < max")
    return bounds


def grid_points(bounds: npt.ArrayLike, resolution: int) -> npt.NDArray:
    """Row-major grid, x1 varies slowest; shape (resolution**2, 2)."""
    bounds = _check_bounds(bounds)
    if resolution < 2:
        raise ValueError(f"@grid_points: resolution must be >= 2, got {resolution}")
    x1 = np.linspace(bounds[0, 0], bounds[0, 1], resolution)
    x2 = np.linspace(bounds[1, 0], bounds[1, 1], resolution)
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    return np.column_stack((g1.reshape(-1), g2.reshape(-1)))


def _eval_chunk(metric, X: npt.NDArray) -> npt.NDArray:
    return metric(X)


def metric_grid(model_or_metric, bounds: npt.ArrayLike, resolution: int = config["geodesic"]["resolution"],
                n_jobs: int = 1, verbose: int = 0) -> Table:
    """Metric and magnification on a resolution x resolution latent grid.

    Parameters
    ----------
    model_or_metric:
        a LatentModel (its expected pullback is used) or a batched metric field
    bounds:
        [[x1min, x1max], [x2min, x2max]]
    resolution:
        points per axis
    n_jobs, verbose:
        joblib settings, the output does not depend on scheduling

    Returns
    -------
    Table with columns x1, x2, g11, g12, g22, magnification in row-major order
    """
    metric = MetricField(model_or_metric) if isinstance(model_or_metric, LatentModel) else model_or_metric
    Q = metric.Q
    if Q != 2:
        raise UnsupportedOperationError(f"@metric_grid: grid export needs Q = 2, got Q = {Q}")
    X = grid_points(bounds, resolution)
    chunks = np.array_split(X, resolution)
    results = joblib.Parallel(n_jobs=n_jobs, verbose=verbose)(
        joblib.delayed(_eval_chunk)(metric, chunk) for chunk in chunks
    )
    G = np.concatenate(results, axis=0)
    return Table(
        dict(
            x1=X[:, 0],
            x2=X[:, 1],
            g11=G[:, 0, 0],
            g12=G[:, 0, 1],
            g22=G[:, 1, 1],
            magnification=np.sqrt(np.linalg.det(G)),
        )
    )


def write_metric_grid(path: str, grid: Table, bounds: npt.ArrayLike, resolution: int,
                      extra: Optional[dict] = None) -> tuple[str, str]:
    """Write the grid CSV and a JSON sidecar with bounds and resolution."""
    csv_path = write_table_csv(path, grid)
    sidecar = dict(bounds=np.asarray(bounds, dtype=float).reshape(2, 2).tolist(), resolution=int(resolution),
                   columns=list(grid.colnames))
    if extra:
        sidecar.update(extra)
    json_path = write_json(os.path.splitext(csv_path)[0] + ".json", sidecar)
    return csv_path, json_path
