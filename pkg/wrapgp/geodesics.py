"""
Geodesics under a latent Riemannian metric.

A metric is any callable mapping (P, Q) latent points to (P, Q, Q) matrices,
e.g. ``pullback.MetricField`` or ``pullback.KDEMetric``.

- ``graph_geodesic``: shortest path on an 8-connected grid graph (Q = 2)
- ``spline_geodesic``: cubic spline with fixed endpoints minimizing the curve energy
- ``straight_line``: the Euclidean baseline
"""

__all__ = [
    "GeodesicCurve",
    "SplineParams",
    "graph_geodesic",
    "spline_geodesic",
    "straight_line",
    "curve_length",
    "curve_energy",
    "decode_curve",
    "constant_metric",
]

import dataclasses
import os
from typing import Callable, Optional

import numpy as np
import numpy.typing as npt
from astropy.table import Table
from scipy.interpolate import CubicSpline
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .core import config
from .exceptions import UnsupportedOperationError
from .manifolds import ManifoldPoint
from .optimize import AdamMinimizer
from .utils import write_json, write_table_csv

# relative tolerance of the shortest-path tie-break
TIE_RTOL = 1e-12


def constant_metric(G: npt.ArrayLike) -> Callable:
    """Batched metric returning the same matrix everywhere."""
    G = np.asarray(G, dtype=float)
    return lambda X: np.broadcast_to(G, (np.atleast_2d(X).shape[0],) + G.shape).copy()


def _segments(metric: Callable, samples: npt.NDArray) -> tuple[npt.NDArray, npt.NDArray]:
    """Increments and their squared lengths at the midpoints."""
    d = np.diff(samples, axis=0)
    mid = 0.5 * (samples[1:] + samples[:-1])
    G = metric(mid)
    sq = np.einsum("ti,tij,tj->t", d, G, d)
    return d, np.maximum(sq, 0.0)


def curve_length(metric: Callable, samples: npt.ArrayLike) -> float:
    """Midpoint-rule Riemannian length of a sampled curve."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[0] < 2:
        raise ValueError("@curve_length: need at least 2 samples")
    return float(np.sum(np.sqrt(_segments(metric, samples)[1])))


def curve_energy(metric: Callable, samples: npt.ArrayLike) -> float:
    """sum_t d_t^T G(mid_t) d_t / dt on the unit time interval."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    n_seg = samples.shape[0] - 1
    if n_seg < 1:
        return 0.0
    return float(np.sum(_segments(metric, samples)[1]) * n_seg)


@dataclasses.dataclass
class GeodesicCurve:
    """A sampled latent curve with its Riemannian segment lengths."""

    samples: np.ndarray
    lengths: np.ndarray
    energy: float
    solver: str = ""
    info: dict = dataclasses.field(default_factory=dict)

    @classmethod
    def from_samples(cls, metric: Optional[Callable], samples: npt.ArrayLike, solver: str = "",
                     info: Optional[dict] = None) -> "GeodesicCurve":
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        if samples.shape[0] < 2:
            return cls(samples, np.zeros(0), 0.0, solver, info or {})
        if metric is None:
            metric = constant_metric(np.eye(samples.shape[1]))
        sq = _segments(metric, samples)[1]
        return cls(samples, np.sqrt(sq), float(np.sum(sq) * (samples.shape[0] - 1)), solver, info or {})

    @property
    def total_length(self) -> float:
        return float(np.sum(self.lengths))

    @property
    def Q(self) -> int:
        return self.samples.shape[1]

    def to_table(self) -> Table:
        T = self.samples.shape[0]
        cols = dict(t=np.linspace(0, 1, T) if T > 1 else np.zeros(1))
        for q in range(self.Q):
            cols[f"x{q + 1}"] = self.samples[:, q]
        return Table(cols)

    def save(self, path: str, extra_config: Optional[dict] = None) -> tuple[str, str]:
        """CSV of (t, x1..xQ) and a JSON sidecar {total_length, energy, solver, config}."""
        csv_path = write_table_csv(path, self.to_table())
        sidecar = dict(
            total_length=self.total_length,
            energy=self.energy,
            solver=self.solver,
            config=dict(self.info, **(extra_config or {})),
        )
        json_path = write_json(os.path.splitext(csv_path)[0] + ".json", sidecar)
        return csv_path, json_path


@dataclasses.dataclass
class SplineParams:
    """Cubic spline through fixed endpoints and interior control points.

    The curve is linear in the control points: samples = basis @ [start, z_c..., end].
    """

    control_points: np.ndarray
    start: np.ndarray
    end: np.ndarray
    n_quad: int = config["geodesic"]["n_quad"]

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float)
        self.end = np.asarray(self.end, dtype=float)
        self.control_points = np.atleast_2d(np.asarray(self.control_points, dtype=float))
        self.basis = self.spline_basis(self.control_points.shape[0], self.n_quad)

    @staticmethod
    def spline_basis(n_control: int, n_quad: int) -> npt.NDArray:
        knots = np.linspace(0, 1, n_control + 2)
        t = np.linspace(0, 1, n_quad + 1)
        return CubicSpline(knots, np.eye(n_control + 2))(t)

    @classmethod
    def chord(cls, start: npt.ArrayLike, end: npt.ArrayLike, n_control: int = config["geodesic"]["n_control"],
              n_quad: int = config["geodesic"]["n_quad"]) -> "SplineParams":
        start = np.asarray(start, dtype=float)
        end = np.asarray(end, dtype=float)
        s = np.linspace(0, 1, n_control + 2)[1:-1, None]
        return cls(start + s * (end - start), start, end, n_quad)

    def nodes(self, control_points: Optional[npt.NDArray] = None) -> npt.NDArray:
        z = self.control_points if control_points is None else control_points
        return np.vstack((self.start, z, self.end))

    def samples(self, control_points: Optional[npt.NDArray] = None) -> npt.NDArray:
        out = self.basis @ self.nodes(control_points)
        # exact endpoints
        out[0], out[-1] = self.start, self.end
        return out


# ################################################ #
# graph geodesic                                   #
# ################################################ #


def graph_geodesic(metric: Callable, start: npt.ArrayLike, end: npt.ArrayLike, bounds: npt.ArrayLike,
                   resolution: int = config["geodesic"]["resolution"], verbose: bool = False) -> GeodesicCurve:
    """Shortest path on an 8-connected grid graph.

    Edge weights are sqrt(d^T G(mid) d). The path is found with Dijkstra from the
    start node and traced back from the end node, taking the smallest node index
    among tied predecessors. Start and end are snapped to the nearest nodes and the
    exact endpoints are added to the path.

    Parameters
    ----------
    metric:
        batched metric, (P, 2) --> (P, 2, 2)
    start, end:
        latent endpoints inside `bounds`
    bounds:
        [[x1min, x1max], [x2min, x2max]]
    resolution:
        nodes per axis
    """
    start = np.asarray(start, dtype=float).reshape(-1)
    end = np.asarray(end, dtype=float).reshape(-1)
    if start.shape[0] != 2 or end.shape[0] != 2:
        raise UnsupportedOperationError("@graph_geodesic: graph geodesics need Q = 2, use spline_geodesic")
    bounds = np.asarray(bounds, dtype=float).reshape(2, 2)
    if np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError(f"@graph_geodesic: invalid bounds {bounds.tolist()}")
    for p in (start, end):
        if np.any(p < bounds[:, 0]) or np.any(p > bounds[:, 1]):
            raise ValueError(f"@graph_geodesic: endpoint {p.tolist()} outside bounds {bounds.tolist()}")
    if np.array_equal(start, end):
        return GeodesicCurve(start[None, :].copy(), np.zeros(0), 0.0, "graph", dict(resolution=resolution))

    res = int(resolution)
    x1 = np.linspace(bounds[0, 0], bounds[0, 1], res)
    x2 = np.linspace(bounds[1, 0], bounds[1, 1], res)
    g1, g2 = np.meshgrid(x1, x2, indexing="ij")
    nodes = np.column_stack((g1.reshape(-1), g2.reshape(-1)))  # node id = i * res + j
    idx = np.arange(res * res).reshape(res, res)

    # half of the 8 neighbour offsets, the graph is undirected
    heads, tails = [], []
    for di, dj in ((0, 1), (1, 0), (1, 1), (1, -1)):
        i0, i1 = 0, res - di
        j0, j1 = max(0, -dj), res - max(0, dj)
        heads.append(idx[i0:i1, j0:j1].reshape(-1))
        tails.append(idx[i0 + di:i1 + di, j0 + dj:j1 + dj].reshape(-1))
    heads = np.hstack(heads)
    tails = np.hstack(tails)
    delta = nodes[tails] - nodes[heads]
    G = metric(0.5 * (nodes[tails] + nodes[heads]))
    w = np.sqrt(np.maximum(np.einsum("ei,eij,ej->e", delta, G, delta), 0.0))
    w = np.maximum(w, np.finfo(float).tiny)
    graph = csr_matrix(
        (np.hstack((w, w)), (np.hstack((heads, tails)), np.hstack((tails, heads)))), shape=(res * res, res * res)
    )
    if verbose:
        print(f"@graph_geodesic: {res}x{res} grid, {len(w)} edges")

    s = int(np.argmin(np.sum((nodes - start) ** 2, axis=1)))
    t = int(np.argmin(np.sum((nodes - end) ** 2, axis=1)))
    dist = dijkstra(graph, directed=False, indices=s)

    path = [t]
    v = t
    while v != s:
        row = slice(graph.indptr[v], graph.indptr[v + 1])
        nbrs, wts = graph.indices[row], graph.data[row]
        ok = np.abs(dist[nbrs] + wts - dist[v]) <= TIE_RTOL * max(1.0, dist[v])
        ok &= dist[nbrs] < dist[v]
        if not np.any(ok):
            ok = dist[nbrs] + wts == np.min(dist[nbrs] + wts)
        v = int(np.min(nbrs[ok]))
        path.append(v)
    path = path[::-1]

    samples = [start]
    for n in path:
        if not np.array_equal(nodes[n], samples[-1]):
            samples.append(nodes[n])
    if not np.array_equal(samples[-1], end):
        samples.append(end)
    samples = np.array(samples)
    curve = GeodesicCurve.from_samples(
        metric, samples, "graph", dict(resolution=res, bounds=bounds.tolist(), graph_length=float(dist[t]))
    )
    curve.samples[0], curve.samples[-1] = start, end
    return curve


# ################################################ #
# spline geodesic                                  #
# ################################################ #


def _metric_gradient(metric: Callable, X: npt.NDArray, step: float) -> npt.NDArray:
    """dG/dx_k by central differences, shape (P, Q, Q, Q) with k last."""
    P, Q = X.shape
    eye = np.eye(Q) * step
    plus = metric((X[:, None, :] + eye).reshape(-1, Q)).reshape(P, Q, Q, Q)
    minus = metric((X[:, None, :] - eye).reshape(-1, Q)).reshape(P, Q, Q, Q)
    # (P, k, i, j) --> (P, i, j, k)
    return np.moveaxis((plus - minus) / (2 * step), 1, -1)


def _energy_and_grad(metric: Callable, params: SplineParams, z_flat: npt.NDArray,
                     step: float, metric_grad: Optional[Callable]) -> tuple[float, npt.NDArray]:
    Q = params.start.shape[0]
    z = z_flat.reshape(-1, Q)
    gamma = params.basis @ params.nodes(z)
    n_seg = gamma.shape[0] - 1
    d = np.diff(gamma, axis=0)
    mid = 0.5 * (gamma[1:] + gamma[:-1])
    G = metric(mid)
    energy = float(np.einsum("ti,tij,tj->", d, G, d) * n_seg)
    dG = metric_grad(mid) if metric_grad is not None else _metric_gradient(metric, mid, step)
    g_d = 2 * n_seg * np.einsum("tij,tj->ti", G, d)
    g_mid = n_seg * np.einsum("ti,tijk,tj->tk", d, dG, d)
    g_gamma = np.zeros_like(gamma)
    g_gamma[1:] += g_d + 0.5 * g_mid
    g_gamma[:-1] += -g_d + 0.5 * g_mid
    g_nodes = params.basis.T @ g_gamma
    return energy, g_nodes[1:-1].reshape(-1)


def spline_geodesic(metric: Callable, start: npt.ArrayLike, end: npt.ArrayLike,
                    n_control: int = config["geodesic"]["n_control"],
                    n_quad: int = config["geodesic"]["n_quad"],
                    iterations: int = config["geodesic"]["iterations"],
                    lr: float = config["geodesic"]["learning_rate"],
                    fd_step: float = config["geodesic"]["fd_step"],
                    metric_grad: Optional[Callable] = None,
                    verbose=False) -> GeodesicCurve:
    """Cubic-spline curve with fixed endpoints minimizing the discrete energy.

    Parameters
    ----------
    metric:
        batched metric, (P, Q) --> (P, Q, Q)
    start, end:
        endpoints
    n_control:
        number of interior control points, initialized on the chord
    n_quad:
        number of quadrature segments
    iterations, lr:
        Adam settings
    fd_step:
        step of the finite-difference metric gradient
    metric_grad:
        optional exact gradient, (P, Q) --> (P, Q, Q, Q) with the derivative index last
    verbose:
        print progress

    Returns
    -------
    GeodesicCurve; never worse in energy than the chord initializer
    """
    start = np.asarray(start, dtype=float).reshape(-1)
    end = np.asarray(end, dtype=float).reshape(-1)
    assert start.shape == end.shape
    params = SplineParams.chord(start, end, n_control, n_quad)
    info = dict(n_control=n_control, n_quad=n_quad, iterations=iterations, lr=lr)
    if np.array_equal(start, end):
        return GeodesicCurve.from_samples(metric, params.samples(), "spline", dict(info, grad_norm=0.0))

    z0 = params.control_points.reshape(-1)
    energy0 = _energy_and_grad(metric, params, z0, fd_step, metric_grad)[0]
    minimizer = AdamMinimizer(
        lambda z: _energy_and_grad(metric, params, z, fd_step, metric_grad),
        z0, lr=lr, maxiter=iterations, jac=True, verbose=verbose, name="spline_geodesic",
    )
    res = minimizer.run()
    if res["fun_best"] < energy0:
        z_best = res["x_best"].reshape(-1, start.shape[0])
    else:
        z_best = params.control_points
    info.update(grad_norm=res["grad_norm"], initial_energy=energy0)
    return GeodesicCurve.from_samples(metric, params.samples(z_best), "spline", info)


def straight_line(start: npt.ArrayLike, end: npt.ArrayLike, n_samples: int = config["geodesic"]["n_quad"] + 1,
                  metric: Optional[Callable] = None) -> GeodesicCurve:
    """Euclidean geodesic: the chord interpolated at `n_samples` points."""
    start = np.asarray(start, dtype=float).reshape(-1)
    end = np.asarray(end, dtype=float).reshape(-1)
    s = np.linspace(0, 1, max(2, n_samples))[:, None]
    samples = start + s * (end - start)
    samples[0], samples[-1] = start, end
    return GeodesicCurve.from_samples(metric, samples, "straight", dict(n_samples=int(n_samples)))


def decode_curve(model, curve: GeodesicCurve) -> list[ManifoldPoint]:
    """Decode every sample of a latent curve through a trained model."""
    coords = model.decode_many(curve.samples)
    return [ManifoldPoint(model.spec, row, check=False) for row in coords]
