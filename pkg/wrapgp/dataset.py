"""
Manifold-valued datasets.

A dataset is a sequence of points on one manifold, grouped into contiguous
trajectories. On disk it is a JSON document
{"spec": ..., "points": [[...]], "trajectory_ids": [...], "timestamps": [...]}.
"""

__all__ = ["Dataset", "read_spd_csv", "spd_from_timeseries"]

from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt
from astropy.table import Table

from .exceptions import ManifoldDomainError, ManifoldMismatchError
from .manifolds import ManifoldPoint, ManifoldSpec, project_check
from .utils import read_json, write_json


class Dataset:
    """Points on a manifold with trajectory labels.

    Parameters
    ----------
    spec:
        the manifold
    coords:
        (N, ambient_dim) array of ambient coordinates
    trajectory_ids:
        integer label per point, each trajectory a contiguous index range
    timestamps:
        optional time per point
    tol:
        validation tolerance of the manifold constraints, None skips the check
    """

    def __init__(self, spec: ManifoldSpec, coords: npt.ArrayLike,
                 trajectory_ids: Optional[npt.ArrayLike] = None,
                 timestamps: Optional[npt.ArrayLike] = None, tol: Optional[float] = 1e-9):
        self.spec = spec
        self.coords = np.atleast_2d(np.asarray(coords, dtype=float))
        N = self.coords.shape[0]
        if self.coords.shape[1] != spec.ambient_dim:
            raise ManifoldMismatchError(
                f"@Dataset: points have {self.coords.shape[1]} coordinates, {spec} needs {spec.ambient_dim}"
            )
        self.trajectory_ids = (
            np.zeros(N, dtype=int) if trajectory_ids is None else np.asarray(trajectory_ids, dtype=int)
        )
        self.timestamps = None if timestamps is None else np.asarray(timestamps, dtype=float)
        if self.trajectory_ids.shape != (N,):
            raise ValueError("@Dataset: trajectory_ids must have one entry per point")
        if self.timestamps is not None and self.timestamps.shape != (N,):
            raise ValueError("@Dataset: timestamps must have one entry per point")
        # contiguity: a label never reappears after its range has ended
        starts = np.flatnonzero(np.diff(self.trajectory_ids, prepend=self.trajectory_ids[0] - 1))
        if len(np.unique(self.trajectory_ids)) != len(starts):
            raise ValueError("@Dataset: trajectories must be contiguous index ranges")
        if tol is not None:
            for i, row in enumerate(self.coords):
                if not project_check(row, spec, tol):
                    raise ManifoldDomainError(f"@Dataset: point {i} is not on {spec}")

    def __repr__(self):
        return "<Dataset [{}] N={} trajectories={}>".format(self.spec, self.N, self.n_trajectories)

    def __len__(self):
        return self.N

    @property
    def N(self) -> int:
        return self.coords.shape[0]

    @property
    def points(self) -> list[ManifoldPoint]:
        return [ManifoldPoint(self.spec, row, check=False) for row in self.coords]

    @property
    def n_trajectories(self) -> int:
        return len(np.unique(self.trajectory_ids))

    def trajectories(self) -> list[npt.NDArray]:
        """Index arrays of the trajectories in order of appearance."""
        _, first = np.unique(self.trajectory_ids, return_index=True)
        return [np.flatnonzero(self.trajectory_ids == self.trajectory_ids[i]) for i in np.sort(first)]

    def subset(self, index: npt.ArrayLike) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.spec,
            self.coords[index],
            self.trajectory_ids[index],
            None if self.timestamps is None else self.timestamps[index],
            tol=None,
        )

    def split(self, n_holdout: int) -> tuple["Dataset", "Dataset"]:
        """(training, held-out): the last `n_holdout` trajectories are held out.

        With n_holdout = 0 both parts are the full dataset.
        """
        trajs = self.trajectories()
        if not 0 <= n_holdout < len(trajs):
            raise ValueError(f"@Dataset: cannot hold out {n_holdout} of {len(trajs)} trajectories")
        if n_holdout == 0:
            return self, self
        cut = len(trajs) - n_holdout
        return self.subset(np.hstack(trajs[:cut])), self.subset(np.hstack(trajs[cut:]))

    def thin(self, n_total: int) -> "Dataset":
        """Evenly thin every trajectory so that about `n_total` points remain."""
        trajs = self.trajectories()
        per = max(2, int(np.ceil(n_total / len(trajs))))
        index = np.hstack([
            t[np.unique(np.round(np.linspace(0, len(t) - 1, min(per, len(t)))).astype(int))]
            for t in trajs
        ])
        return self.subset(index)

    def as_euclidean(self) -> "Dataset":
        """The same data viewed as vectors of R^ambient_dim."""
        return Dataset(self.spec.euclidean_view(), self.coords, self.trajectory_ids, self.timestamps)

    def to_dict(self) -> dict:
        d = dict(
            spec=str(self.spec),
            points=self.coords.tolist(),
            trajectory_ids=self.trajectory_ids.tolist(),
        )
        if self.timestamps is not None:
            d["timestamps"] = self.timestamps.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict, tol: float = 1e-9) -> "Dataset":
        for key in ("spec", "points"):
            if key not in d:
                raise ValueError(f"@Dataset: missing key '{key}' in dataset document")
        return cls(
            ManifoldSpec.parse(d["spec"]),
            d["points"],
            d.get("trajectory_ids"),
            d.get("timestamps"),
            tol=tol,
        )

    def save(self, path: str) -> str:
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str, tol: float = 1e-9) -> "Dataset":
        return cls.from_dict(read_json(path), tol=tol)


def read_spd_csv(path: str, size: Optional[int] = None, tol: float = 1e-9) -> Dataset:
    """Read flattened SPD matrices (row-major, one per row) from a CSV file.

    Optional columns ``trajectory_id`` and ``timestamp`` are used as labels;
    all other columns are matrix entries.
    """
    t = Table.read(path, format="ascii.csv")
    label_cols = [c for c in ("trajectory_id", "timestamp") if c in t.colnames]
    value_cols = [c for c in t.colnames if c not in label_cols]
    values = np.array([np.asarray(t[c], dtype=float) for c in value_cols]).T
    if size is None:
        size = int(round(np.sqrt(values.shape[1])))
    if size * size != values.shape[1]:
        raise ValueError(f"@read_spd_csv: {values.shape[1]} columns is not a square matrix size")
    # symmetrize text round-off
    mats = values.reshape(-1, size, size)
    mats = 0.5 * (mats + np.swapaxes(mats, 1, 2))
    return Dataset(
        ManifoldSpec.spd(size),
        mats.reshape(-1, size * size),
        t["trajectory_id"] if "trajectory_id" in t.colnames else None,
        t["timestamp"] if "timestamp" in t.colnames else None,
        tol=tol,
    )


def spd_from_timeseries(series: Sequence[npt.ArrayLike], kind: str = "correlation",
                        shrinkage: float = 1e-3,
                        trajectory_ids: Optional[npt.ArrayLike] = None) -> Dataset:
    """One SPD matrix per (T, M) time-series array.

    Parameters
    ----------
    series:
        list of (T, M) arrays, e.g. regional signals of one recording each
    kind:
        "covariance" or "correlation"
    shrinkage:
        the matrix is (1 - shrinkage) C + shrinkage * tr(C)/M * I
    trajectory_ids:
        optional label per matrix
    """
    assert kind in ("covariance", "correlation")
    assert 0 < shrinkage < 1
    mats = []
    for s in series:
        s = np.asarray(s, dtype=float)
        C = np.corrcoef(s, rowvar=False) if kind == "correlation" else np.cov(s, rowvar=False)
        M = C.shape[0]
        C = (1 - shrinkage) * C + shrinkage * np.trace(C) / M * np.eye(M)
        mats.append(0.5 * (C + C.T))
    mats = np.array(mats)
    return Dataset(ManifoldSpec.spd(mats.shape[1]), mats.reshape(len(mats), -1), trajectory_ids)
