"""
Synthetic demonstrations.

This module is to produce artifacts: sets of trajectories shaped like the
hand-drawn letters used in the benchmarks, with orientation-correlated
manifold-valued components.

- "J_R2xC_S2": a J in R^2 together with a C drawn on S^2
- "C_R2xSPD2": a C in R^2 with an SPD(2) ellipse aligned with the direction of motion
- "C_R3xS3": a rising C in R^3 with a unit quaternion turning about the direction of motion
"""

__all__ = [
    "SYNTHETIC_KINDS",
    "generate_synthetic",
    "make_letter",
    "resample_polyline",
    "lowpass",
    "spd_profile",
    "quaternion_profile",
]

from typing import Union

import numpy as np
import numpy.typing as npt
from scipy.signal.windows import gaussian

from .dataset import Dataset
from .manifolds import ManifoldSpec, exp_coords

SYNTHETIC_KINDS = ("J_R2xC_S2", "C_R2xSPD2", "C_R3xS3")
KIND_SPECS = {"J_R2xC_S2": "R2xS2", "C_R2xSPD2": "R2xSPD2", "C_R3xS3": "R3xS3"}

# vertices of the letters, drawn in [-1, 1]^2
J_VERTICES = np.array([[0.5, 1.0], [0.5, -0.5], [0.3, -0.9], [-0.1, -1.0], [-0.45, -0.85], [-0.6, -0.5]])
C_VERTICES = np.array([[0.9, 0.7], [0.3, 1.0], [-0.5, 0.8], [-0.9, 0.2], [-0.9, -0.2], [-0.5, -0.8],
                       [0.3, -1.0], [0.9, -0.7]])

# the sphere letter lives in the tangent disk of radius SPHERE_SCALE at the north pole
SPHERE_SCALE = 0.9
NORTH_POLE = np.array([0.0, 0.0, 1.0])
# ellipse axes of the SPD profile
SPD_MAJOR = (1.5, 0.5)
SPD_MINOR = 0.4
# vertex jitter between demonstrations
VERTEX_JITTER = 0.05


def resample_polyline(vertices: npt.ArrayLike, n_points: int) -> npt.NDArray:
    """ resample a polyline at `n_points` points equally spaced in arc length """
    vertices = np.asarray(vertices, dtype=float)
    s = np.hstack((0.0, np.cumsum(np.linalg.norm(np.diff(vertices, axis=0), axis=1))))
    s_new = np.linspace(0, s[-1], n_points)
    return np.column_stack([np.interp(s_new, s, vertices[:, i]) for i in range(vertices.shape[1])])


def lowpass(curve: npt.ArrayLike, width: int = 15) -> npt.NDArray:
    """ smooth each column with a normalized Gaussian window, edges padded by their end values """
    curve = np.asarray(curve, dtype=float)
    win = gaussian(4 * width + 1, std=width)
    win /= np.sum(win)
    pad = 2 * width
    padded = np.pad(curve, ((pad, pad), (0, 0)), mode="edge")
    return np.column_stack([np.convolve(padded[:, i], win, mode="valid") for i in range(curve.shape[1])])


def make_letter(vertices: npt.ArrayLike, n_points: int, rng: np.random.Generator,
                jitter: float = VERTEX_JITTER) -> npt.NDArray:
    """ one demonstration of a letter: jittered vertices, arc-length resampling, low-pass """
    vertices = np.asarray(vertices, dtype=float)
    vertices = vertices + rng.normal(scale=jitter, size=vertices.shape)
    dense = resample_polyline(vertices, 4 * n_points)
    smooth = lowpass(dense, width=max(2, n_points // 10))
    return resample_polyline(smooth, n_points)


def _tangent_angle(curve: npt.NDArray) -> npt.NDArray:
    d = np.gradient(curve, axis=0)
    return np.arctan2(d[:, 1], d[:, 0])


def spd_profile(curve: npt.ArrayLike) -> npt.NDArray:
    """ R(phi) diag(a, b) R(phi)^T with phi the direction of motion, shape (n, 2, 2) """
    curve = np.asarray(curve, dtype=float)
    n = curve.shape[0]
    phi = _tangent_angle(curve)
    s = np.linspace(0, 1, n)
    a = SPD_MAJOR[0] + SPD_MAJOR[1] * np.sin(np.pi * s)
    c, si = np.cos(phi), np.sin(phi)
    R = np.stack((np.stack((c, -si), axis=-1), np.stack((si, c), axis=-1)), axis=-2)
    D = np.zeros((n, 2, 2))
    D[:, 0, 0] = a
    D[:, 1, 1] = SPD_MINOR
    P = R @ D @ np.swapaxes(R, 1, 2)
    return 0.5 * (P + np.swapaxes(P, 1, 2))


def quaternion_profile(curve: npt.ArrayLike, max_angle: float = 0.5 * np.pi) -> npt.NDArray:
    """ unit quaternions (w, x, y, z) rotating by up to `max_angle` about the direction of motion """
    curve = np.asarray(curve, dtype=float)
    d = np.gradient(curve, axis=0)
    u = d / np.linalg.norm(d, axis=1, keepdims=True)
    alpha = max_angle * np.linspace(0, 1, curve.shape[0])
    q = np.column_stack((np.cos(alpha / 2), np.sin(alpha / 2)[:, None] * u))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _tangent_noise(spec: ManifoldSpec, base: npt.NDArray, noise: float, rng: np.random.Generator) -> npt.NDArray:
    """ isotropic noise in the tangent coordinates of every point """
    if noise == 0:
        return base
    return exp_coords(spec, base, rng.normal(scale=noise, size=(base.shape[0], spec.intrinsic_dim)))


def _demonstration(kind: str, n_points: int, rng: np.random.Generator) -> npt.NDArray:
    if kind == "J_R2xC_S2":
        pos = make_letter(J_VERTICES, n_points, rng)
        c = make_letter(C_VERTICES, n_points, rng) * SPHERE_SCALE / np.sqrt(2)
        sph = exp_coords(ManifoldSpec.sphere(2), NORTH_POLE, c)
        return np.hstack((pos, sph))
    elif kind == "C_R2xSPD2":
        pos = make_letter(C_VERTICES, n_points, rng)
        return np.hstack((pos, spd_profile(pos).reshape(n_points, 4)))
    else:
        planar = make_letter(C_VERTICES, n_points, rng)
        pos = np.column_stack((planar, np.linspace(-0.5, 0.5, n_points)))
        return np.hstack((pos, quaternion_profile(pos)))


def generate_synthetic(kind: str = "J_R2xC_S2", n_traj: int = 6, n_points: int = 200, noise: float = 0.01,
                       seed: Union[int, np.random.Generator] = 0) -> Dataset:
    """Synthetic demonstrations of one benchmark kind.

    Parameters
    ----------
    kind:
        one of SYNTHETIC_KINDS
    n_traj:
        number of demonstrations
    n_points:
        points per demonstration, at least 10
    noise:
        standard deviation of the isotropic tangent noise
    seed:
        random seed; equal seeds give identical datasets

    Returns
    -------
    Dataset with trajectory ids 0..n_traj-1 and timestamps in [0, 1]
    """
    if kind not in SYNTHETIC_KINDS:
        raise ValueError(f"@generate_synthetic: unknown kind '{kind}', choose from {SYNTHETIC_KINDS}")
    if n_points < 10:
        raise ValueError(f"@generate_synthetic: n_points must be >= 10, got {n_points}")
    if n_traj < 1:
        raise ValueError(f"@generate_synthetic: n_traj must be >= 1, got {n_traj}")
    if noise < 0:
        raise ValueError(f"@generate_synthetic: noise must be non-negative, got {noise}")
    spec = ManifoldSpec.parse(KIND_SPECS[kind])
    rng = np.random.default_rng(seed)
    coords = np.vstack([
        _tangent_noise(spec, _demonstration(kind, n_points, rng), noise, rng) for _ in range(n_traj)
    ])
    return Dataset(
        spec,
        coords,
        np.repeat(np.arange(n_traj), n_points),
        np.tile(np.linspace(0, 1, n_points), n_traj),
    )