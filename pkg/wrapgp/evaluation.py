"""
Comparison of decoded geodesics with demonstrations.

- ``dtwd``: the bidirectional min-sum discrepancy
  sum_j min_i d(a_i, b_j) + sum_i min_j d(a_i, b_j)
- ``on_manifold_fraction``: share of decoded points that satisfy the manifold constraints
- ``benchmark``: geodesics between demonstration endpoints for a set of model variants
"""

__all__ = [
    "TrajectoryPair",
    "Variant",
    "BenchmarkReport",
    "dtwd",
    "on_manifold_fraction",
    "benchmark",
    "latent_endpoints",
    "latent_bounds",
]

import dataclasses
import os
from typing import Optional, Sequence, Union

import joblib
import numpy as np
import numpy.typing as npt
from scipy.spatial.distance import cdist
from sklearn.neighbors import NearestNeighbors

from .core import config
from .dataset import Dataset
from .exceptions import (
    ConsistencyError,
    FactorizationError,
    ManifoldMismatchError,
    ModelStateError,
    NonFiniteObjectiveError,
    UnsupportedOperationError,
)
from .geodesics import graph_geodesic, spline_geodesic, straight_line
from .lvm import LatentModel
from .manifolds import ManifoldPoint, ManifoldSpec, distance_coords, project_check
from .pullback import KDEMetric, MetricField
from .utils import atomic_write_text, digest, write_json

_MODE_ALIASES = {
    "ambient": "ambient",
    "AmbientEuclidean": "ambient",
    "manifold": "manifold",
    "ManifoldGeodesic": "manifold",
}
SOLVERS = ("straight", "graph", "spline")
METRICS = ("pullback", "kde")
# errors that mark a variant as failed instead of aborting the benchmark
VARIANT_ERRORS = (
    FactorizationError,
    NonFiniteObjectiveError,
    ConsistencyError,
    UnsupportedOperationError,
    MemoryError,
    np.linalg.LinAlgError,
)


def _as_array(points: Union[npt.ArrayLike, Sequence[ManifoldPoint]]) -> tuple[npt.NDArray, Optional[ManifoldSpec]]:
    if len(points) > 0 and isinstance(points[0], ManifoldPoint):
        specs = {p.spec for p in points}
        if len(specs) != 1:
            raise ManifoldMismatchError("@TrajectoryPair: points on different manifolds")
        return np.array([p.coords for p in points]), specs.pop()
    return np.atleast_2d(np.asarray(points, dtype=float)), None


class TrajectoryPair:
    """Two ordered point sequences and the distance used to compare them.

    Parameters
    ----------
    candidate, reference:
        (n, A) arrays of ambient vectors or lists of ManifoldPoint
    mode:
        "ambient" (Euclidean distance of the ambient vectors) or "manifold"
        (geodesic distance, products combined as sqrt of the sum of squares)
    spec:
        the manifold of the points, required in manifold mode for raw arrays
    """

    def __init__(self, candidate, reference, mode: str = "ambient", spec: Optional[ManifoldSpec] = None):
        if mode not in _MODE_ALIASES:
            raise ValueError(f"@TrajectoryPair: unknown distance mode '{mode}'")
        self.mode = _MODE_ALIASES[mode]
        if len(candidate) == 0 or len(reference) == 0:
            raise ValueError("@TrajectoryPair: empty trajectory")
        self.candidate, spec_c = _as_array(candidate)
        self.reference, spec_r = _as_array(reference)
        for s in (spec_c, spec_r):
            if s is None:
                continue
            if spec is None:
                spec = s
            elif s != spec:
                raise ManifoldMismatchError(f"@TrajectoryPair: points on {s}, pair declared on {spec}")
        self.spec = spec
        if self.candidate.shape[1] != self.reference.shape[1]:
            raise ManifoldMismatchError(
                f"@TrajectoryPair: {self.candidate.shape[1]} vs {self.reference.shape[1]} coordinates"
            )
        if self.mode == "manifold":
            if self.spec is None:
                raise ManifoldMismatchError("@TrajectoryPair: manifold mode needs a spec or ManifoldPoints")
            if self.candidate.shape[1] != self.spec.ambient_dim:
                raise ManifoldMismatchError(
                    f"@TrajectoryPair: {self.candidate.shape[1]} coordinates do not fit {self.spec}"
                )

    def __repr__(self):
        return "<TrajectoryPair mode={} {}x{}>".format(self.mode, len(self.candidate), len(self.reference))

    def distance_matrix(self) -> npt.NDArray:
        """D[i, j] = d(candidate_i, reference_j)."""
        if self.mode == "ambient":
            return cdist(self.candidate, self.reference)
        return distance_coords(self.spec, self.candidate[:, None, :], self.reference[None, :, :])


def dtwd(pair: TrajectoryPair) -> float:
    """sum_j min_i D[i, j] + sum_i min_j D[i, j]"""
    D = pair.distance_matrix()
    return float(np.sum(np.min(D, axis=0)) + np.sum(np.min(D, axis=1)))


def on_manifold_fraction(decoded: Union[npt.ArrayLike, Sequence[ManifoldPoint]], spec: ManifoldSpec,
                         tol: float = 1e-6) -> float:
    """Fraction of the ambient vectors in `decoded` that pass ``project_check``."""
    X, _ = _as_array(decoded)
    if X.shape[0] == 0:
        raise ValueError("@on_manifold_fraction: no points")
    return float(np.mean([project_check(x, spec, tol) for x in X]))


# ################################################ #
# benchmark                                        #
# ################################################ #


@dataclasses.dataclass
class Variant:
    """A model variant evaluated by ``benchmark``.

    models maps each seed to a trained LatentModel. `error` holds the message of a
    failed training run, such a variant is reported as failed.
    """

    name: str
    models: dict = dataclasses.field(default_factory=dict)
    solver: str = "straight"
    metric: str = "pullback"
    kde_sigma: Optional[float] = None
    error: Optional[str] = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"@Variant: unknown solver '{self.solver}', choose from {SOLVERS}")
        if self.metric not in METRICS:
            raise ValueError(f"@Variant: unknown metric '{self.metric}', choose from {METRICS}")
        if self.metric == "kde" and not (self.kde_sigma is not None and self.kde_sigma > 0):
            raise ValueError("@Variant: the kde metric needs a positive kde_sigma")

    def describe(self) -> dict:
        d = dict(name=self.name, solver=self.solver, metric=self.metric)
        if self.kde_sigma is not None:
            d["kde_sigma"] = self.kde_sigma
        d["runs"] = {
            str(seed): (m.run_config.digest() if m.run_config is not None else None)
            for seed, m in sorted(self.models.items())
        }
        return d


@dataclasses.dataclass
class BenchmarkReport:
    """Per-variant on-manifold fraction and DTWD statistics over seeds."""

    rows: list
    seeds: list
    config_digest: str

    def __post_init__(self):
        for row in self.rows:
            if row["failed"]:
                continue
            assert 0.0 <= row["on_manifold_fraction"] <= 1.0
            assert row["dtwd_std"] >= 0.0

    def __getitem__(self, name: str) -> dict:
        for row in self.rows:
            if row["name"] == name:
                return row
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [row["name"] for row in self.rows]

    def to_dict(self) -> dict:
        return dict(rows=self.rows, seeds=list(self.seeds), config_digest=self.config_digest)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkReport":
        return cls(d["rows"], d["seeds"], d["config_digest"])

    def to_markdown(self) -> str:
        """Rows are metrics, columns are variants."""
        header = "| metric | " + " | ".join(self.names) + " |"
        rule = "|---" * (len(self.rows) + 1) + "|"
        frac, dist = [], []
        for row in self.rows:
            if row["failed"]:
                frac.append("failed")
                dist.append("failed")
            else:
                frac.append(f"{100 * row['on_manifold_fraction']:.1f}")
                dist.append(f"{row['dtwd_mean']:.3f}±{row['dtwd_std']:.3f}")
        lines = [
            header,
            rule,
            "| on manifold (%) | " + " | ".join(frac) + " |",
            "| DTWD | " + " | ".join(dist) + " |",
        ]
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> tuple[str, str]:
        """Write <path>.json and <path>.md."""
        root = os.path.splitext(path)[0]
        return write_json(root + ".json", self.to_dict()), atomic_write_text(root + ".md", self.to_markdown())


def latent_endpoints(model: LatentModel, dataset: Dataset) -> list[tuple[npt.NDArray, npt.NDArray]]:
    """Latent start/end of every demonstration.

    The first and last points of each trajectory of `dataset` are mapped to the
    latent point of their nearest training observation.
    """
    nn = NearestNeighbors(n_neighbors=1).fit(model.dataset.coords)
    trajs = dataset.trajectories()
    query = np.array([[dataset.coords[t[0]], dataset.coords[t[-1]]] for t in trajs]).reshape(
        -1, dataset.spec.ambient_dim
    )
    if query.shape[1] != model.dataset.coords.shape[1]:
        raise ManifoldMismatchError(f"@latent_endpoints: {dataset.spec} does not match the model's {model.spec}")
    index = nn.kneighbors(query, return_distance=False)[:, 0]
    X = model.X[index].reshape(len(trajs), 2, model.Q)
    return [(x[0], x[1]) for x in X]


def latent_bounds(X: npt.ArrayLike, pad: float = 0.1) -> npt.NDArray:
    """Extent of the latent points, padded by `pad` times the range on each side."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    return np.column_stack((lo - pad * span, hi + pad * span))


def _geodesic_settings(geodesic_config: Optional[dict]) -> dict:
    settings = dict(config["geodesic"], tol=1e-6, pad=0.1)
    if geodesic_config:
        unknown = set(geodesic_config) - set(settings)
        if unknown:
            raise ValueError(f"@benchmark: unknown geodesic settings {sorted(unknown)}")
        settings.update(geodesic_config)
    return settings


def _variant_metric(variant: Variant, model: LatentModel):
    if variant.solver == "straight":
        return None
    if variant.metric == "kde":
        return KDEMetric(model.X, variant.kde_sigma)
    return MetricField(model)


def _latent_curve(variant: Variant, model: LatentModel, metric, start, end, settings: dict):
    if variant.solver == "straight":
        return straight_line(start, end, settings["n_quad"] + 1)
    if variant.solver == "graph":
        bounds = latent_bounds(model.X, settings["pad"])
        return graph_geodesic(metric, start, end, bounds, settings["resolution"])
    return spline_geodesic(
        metric, start, end,
        n_control=settings["n_control"],
        n_quad=settings["n_quad"],
        iterations=settings["iterations"],
        lr=settings["learning_rate"],
        fd_step=settings["fd_step"],
    )


def _evaluate_run(variant: Variant, model: LatentModel, dataset: Dataset, settings: dict) -> dict:
    """DTWD per demonstration and the on-manifold share of one trained model."""
    mode = "ambient" if model.spec.is_euclidean else "manifold"
    trajs = dataset.trajectories()
    metric = _variant_metric(variant, model)
    scores, n_on, n_all = [], 0, 0
    for (start, end), t in zip(latent_endpoints(model, dataset), trajs):
        curve = _latent_curve(variant, model, metric, start, end, settings)
        decoded = model.decode_many(curve.samples)
        n_on += int(round(on_manifold_fraction(decoded, dataset.spec, settings["tol"]) * len(decoded)))
        n_all += len(decoded)
        pair = TrajectoryPair(decoded, dataset.coords[t], mode, spec=None if mode == "ambient" else dataset.spec)
        scores.append(dtwd(pair))
    return dict(dtwd=float(np.mean(scores)), n_on=n_on, n_all=n_all, n_geodesics=len(scores))


def _evaluate_variant(variant: Variant, dataset: Dataset, seeds: list, settings: dict) -> dict:
    row = dict(name=variant.name, solver=variant.solver, metric=variant.metric, failed=False, error=None)
    if variant.kde_sigma is not None:
        row["kde_sigma"] = float(variant.kde_sigma)
    if variant.error is not None:
        return dict(row, failed=True, error=variant.error)
    try:
        runs = [_evaluate_run(variant, variant.models[seed], dataset, settings) for seed in seeds]
    except VARIANT_ERRORS as e_:
        return dict(row, failed=True, error=f"{type(e_).__name__}: {e_}")
    per_seed = np.array([r["dtwd"] for r in runs])
    row.update(
        on_manifold_fraction=float(sum(r["n_on"] for r in runs) / sum(r["n_all"] for r in runs)),
        dtwd_mean=float(np.mean(per_seed)),
        dtwd_std=float(np.std(per_seed)),
        dtwd_per_seed=per_seed.tolist(),
        n_geodesics=int(sum(r["n_geodesics"] for r in runs)),
    )
    return row


def benchmark(dataset: Dataset, model_variants: Sequence[Variant], geodesic_config: Optional[dict] = None,
              seeds: Sequence[int] = (0,), n_jobs: int = 1, verbose: int = 0) -> BenchmarkReport:
    """Geodesics between demonstration endpoints, decoded and compared with the demonstrations.

    Parameters
    ----------
    dataset:
        demonstrations to score, normally held out from training; their first and
        last points are the geodesic endpoints
    model_variants:
        the variants, each with one trained model per seed
    geodesic_config:
        overrides of the [geodesic] config section, plus `tol` (on-manifold
        tolerance, 1e-6) and `pad` (graph bounds padding, 0.1)
    seeds:
        seeds to evaluate; DTWD mean and std are taken over seeds
    n_jobs, verbose:
        joblib settings, variants are evaluated in parallel

    Returns
    -------
    BenchmarkReport with one row per variant, in the given order
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) == 0:
        raise ValueError("@benchmark: no seeds")
    settings = _geodesic_settings(geodesic_config)
    for v in model_variants:
        if v.error is not None:
            continue
        for seed in seeds:
            if seed not in v.models:
                raise ModelStateError(f"@benchmark: variant {v.name} has no model for seed {seed}")
            if not v.models[seed].trained:
                raise ModelStateError(f"@benchmark: variant {v.name} (seed {seed}) is not trained")
    if verbose:
        print(f"@benchmark: {len(model_variants)} variants x {len(seeds)} seeds, "
              f"{dataset.n_trajectories} demonstrations")
    rows = joblib.Parallel(n_jobs=n_jobs, verbose=verbose)(
        joblib.delayed(_evaluate_variant)(v, dataset, seeds, settings) for v in model_variants
    )
    config_digest = digest(dict(
        seeds=seeds,
        geodesic=settings,
        variants=[v.describe() for v in model_variants],
        data=digest(dataset.to_dict()),
    ))
    return BenchmarkReport(list(rows), seeds, config_digest)
