"""
Riemannian manifold primitives.

Supported manifolds are Euclidean spaces R^d, spheres S^M (embedded in R^{M+1}),
SPD(M) matrices with the affine-invariant metric, and products thereof.
Points are stored in ambient coordinates (SPD row-major), tangent vectors in
intrinsic coordinates w.r.t. an orthonormal tangent basis.

Two layers are provided:

- array functions ``exp_coords``, ``log_coords``, ``basis_coords``,
  ``distance_coords`` ... which broadcast over leading axes and are used by the
  models, and
- the typed operations ``exp_map``, ``log_map``, ``distance``, ``tangent_basis``,
  ``cov_log_det`` and ``project_check`` acting on ``ManifoldPoint`` objects.
"""

__all__ = [
    "ManifoldSpec",
    "ManifoldPoint",
    "TangentCoords",
    "TangentBasis",
    "exp_map",
    "log_map",
    "distance",
    "tangent_basis",
    "cov_log_det",
    "project_check",
    "exp_coords",
    "log_coords",
    "basis_coords",
    "distance_coords",
    "cov_log_det_coords",
    "chart_metric",
    "exp_jacobian_coords",
    "exp_coords_torch",
    "sym_to_coeffs",
    "coeffs_to_sym",
]

import dataclasses
import re
import warnings
from typing import Optional, Union

import numpy as np
import numpy.typing as npt
import torch
from scipy import linalg

from .exceptions import (
    ConsistencyError,
    ManifoldDomainError,
    ManifoldMismatchError,
    SphereCutLocusWarning,
)

# |z| below which the S^2 basis is built on permuted coordinates
S2_PERMUTE_TOL = 1e-6
# minimal distance to the antipode accepted by the sphere log
ANTIPODAL_TOL = 1e-9


# ################################################ #
# manifold descriptions                            #
# ################################################ #


@dataclasses.dataclass(frozen=True)
class ManifoldSpec:
    """Description of a manifold.

    Parameters
    ----------
    kind:
        one of "euclidean", "sphere", "spd", "product"
    dim:
        d for R^d, M for S^M, M for SPD(M), 0 for products
    components:
        factors of a product (flattened, never nested)
    """

    kind: str
    dim: int = 0
    components: tuple = ()

    def __post_init__(self):
        assert self.kind in ("euclidean", "sphere", "spd", "product")
        if self.kind == "product":
            assert len(self.components) >= 1
            assert all(c.kind != "product" for c in self.components)
        else:
            assert self.dim >= 1

    # constructors
    @classmethod
    def euclidean(cls, dim: int) -> "ManifoldSpec":
        return cls("euclidean", int(dim))

    @classmethod
    def sphere(cls, dim: int) -> "ManifoldSpec":
        return cls("sphere", int(dim))

    @classmethod
    def spd(cls, size: int) -> "ManifoldSpec":
        return cls("spd", int(size))

    @classmethod
    def product(cls, *specs: "ManifoldSpec") -> "ManifoldSpec":
        flat = []
        for s in specs:
            flat.extend(s.factors)
        if len(flat) == 1:
            return flat[0]
        return cls("product", 0, tuple(flat))

    @classmethod
    def parse(cls, s: str) -> "ManifoldSpec":
        """Parse strings like "R2xS2", "S3", "R2xSPD2", "SPD15"."""
        specs = []
        for token in s.strip().split("x"):
            m = re.fullmatch(r"(R|S|SPD)(\d+)", token.strip())
            if m is None:
                raise ValueError(f"Invalid manifold token '{token}' in '{s}'")
            name, dim = m.group(1), int(m.group(2))
            if dim < 1:
                raise ValueError(f"Invalid dimension in '{token}'")
            specs.append(
                {"R": cls.euclidean, "S": cls.sphere, "SPD": cls.spd}[name](dim)
            )
        return cls.product(*specs)

    def __str__(self) -> str:
        if self.kind == "product":
            return "x".join(str(c) for c in self.components)
        return {"euclidean": "R", "sphere": "S", "spd": "SPD"}[self.kind] + str(self.dim)

    # dimensions
    @property
    def factors(self) -> tuple:
        return self.components if self.kind == "product" else (self,)

    @property
    def ambient_dim(self) -> int:
        if self.kind == "euclidean":
            return self.dim
        elif self.kind == "sphere":
            return self.dim + 1
        elif self.kind == "spd":
            return self.dim**2
        return sum(c.ambient_dim for c in self.components)

    @property
    def intrinsic_dim(self) -> int:
        if self.kind in ("euclidean", "sphere"):
            return self.dim
        elif self.kind == "spd":
            return self.dim * (self.dim + 1) // 2
        return sum(c.intrinsic_dim for c in self.components)

    @property
    def is_euclidean(self) -> bool:
        return all(c.kind == "euclidean" for c in self.factors)

    def ambient_slices(self) -> list[slice]:
        return _slices([c.ambient_dim for c in self.factors])

    def intrinsic_slices(self) -> list[slice]:
        return _slices([c.intrinsic_dim for c in self.factors])

    def euclidean_view(self) -> "ManifoldSpec":
        """R^ambient_dim, the space the Euclidean baselines regress in."""
        return ManifoldSpec.euclidean(self.ambient_dim)

    def default_basepoint(self) -> npt.NDArray:
        """Constant basepoint: 0 for R^d, (1,0,...,0) for S^M, I for SPD."""
        parts = []
        for c in self.factors:
            if c.kind == "euclidean":
                parts.append(np.zeros(c.dim))
            elif c.kind == "sphere":
                parts.append(np.eye(c.dim + 1)[0])
            else:
                parts.append(np.eye(c.dim).reshape(-1))
        return np.hstack(parts)

    def to_dict(self) -> str:
        return str(self)

    @classmethod
    def from_dict(cls, d: str) -> "ManifoldSpec":
        return cls.parse(d)


def _slices(dims: list[int]) -> list[slice]:
    edges = np.cumsum([0] + list(dims))
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


# ################################################ #
# typed containers                                 #
# ################################################ #


class ManifoldPoint:
    """A point on a manifold, stored in ambient coordinates.

    Parameters
    ----------
    spec:
        the manifold
    coords:
        ambient coordinates, length ``spec.ambient_dim``
    check:
        if True, validate the manifold constraints with tolerance `tol`
    tol:
        validation tolerance
    """

    def __init__(self, spec: ManifoldSpec, coords: npt.ArrayLike, check: bool = True,
                 tol: float = 1e-9):
        self.spec = spec
        self.coords = np.asarray(coords, dtype=float).reshape(-1)
        if self.coords.shape[0] != spec.ambient_dim:
            raise ManifoldMismatchError(
                f"@ManifoldPoint: expected {spec.ambient_dim} coordinates for {spec}, "
                f"got {self.coords.shape[0]}"
            )
        if check:
            _validate_point(spec, self.coords, tol)

    def __repr__(self):
        return "<ManifoldPoint [{}] {}>".format(self.spec, np.array2string(self.coords, precision=4))

    def __eq__(self, other):
        return (
            isinstance(other, ManifoldPoint)
            and self.spec == other.spec
            and np.array_equal(self.coords, other.coords)
        )

    def components(self) -> list["ManifoldPoint"]:
        return [
            ManifoldPoint(c, self.coords[s], check=False)
            for c, s in zip(self.spec.factors, self.spec.ambient_slices())
        ]

    def to_dict(self) -> dict:
        return {"spec": str(self.spec), "coords": self.coords.tolist()}

    @classmethod
    def from_dict(cls, d: dict, check: bool = True) -> "ManifoldPoint":
        return cls(ManifoldSpec.parse(d["spec"]), d["coords"], check=check)


class TangentCoords:
    """A tangent vector in intrinsic coordinates at `basepoint`."""

    def __init__(self, basepoint: ManifoldPoint, coeffs: npt.ArrayLike):
        self.basepoint = basepoint
        self.coeffs = np.asarray(coeffs, dtype=float).reshape(-1)
        if self.coeffs.shape[0] != basepoint.spec.intrinsic_dim:
            raise ManifoldMismatchError(
                f"@TangentCoords: expected {basepoint.spec.intrinsic_dim} coefficients "
                f"for {basepoint.spec}, got {self.coeffs.shape[0]}"
            )

    def __repr__(self):
        return "<TangentCoords [{}] {}>".format(
            self.basepoint.spec, np.array2string(self.coeffs, precision=4)
        )

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))


class TangentBasis:
    """Orthonormal basis of a tangent space, columns in ambient coordinates."""

    def __init__(self, basepoint: ManifoldPoint, columns: npt.NDArray):
        self.basepoint = basepoint
        self.columns = np.asarray(columns, dtype=float)
        assert self.columns.shape == (basepoint.spec.ambient_dim, basepoint.spec.intrinsic_dim)

    def to_ambient(self, coeffs: npt.ArrayLike) -> npt.NDArray:
        return self.columns @ np.asarray(coeffs, dtype=float)

    def to_coeffs(self, ambient: npt.ArrayLike) -> npt.NDArray:
        return self.columns.T @ np.asarray(ambient, dtype=float)


def _validate_point(spec: ManifoldSpec, coords: npt.NDArray, tol: float) -> None:
    if not np.all(np.isfinite(coords)):
        raise ManifoldDomainError(f"@ManifoldPoint: non-finite coordinates on {spec}")
    for c, s in zip(spec.factors, spec.ambient_slices()):
        x = coords[s]
        if c.kind == "sphere":
            norm = np.linalg.norm(x)
            if abs(norm - 1.0) > tol:
                raise ManifoldDomainError(f"@ManifoldPoint: |p|={norm:.12f} is not 1 on {c}")
        elif c.kind == "spd":
            X = x.reshape(c.dim, c.dim)
            if np.max(np.abs(X - X.T)) > tol:
                raise ManifoldDomainError(f"@ManifoldPoint: matrix is not symmetric on {c}")
            if np.linalg.eigvalsh(0.5 * (X + X.T))[0] <= 0:
                raise ManifoldDomainError(f"@ManifoldPoint: matrix is not positive-definite on {c}")


# ################################################ #
# SPD vectorization                                #
# ################################################ #


def _spd_index(M: int) -> tuple[npt.NDArray, npt.NDArray]:
    """Row / column indices of the coefficients: diagonal first, then i<j."""
    iu, ju = np.triu_indices(M, k=1)
    rows = np.hstack((np.arange(M), iu))
    cols = np.hstack((np.arange(M), ju))
    return rows, cols


def sym_to_coeffs(V: npt.NDArray) -> npt.NDArray:
    """Symmetric (..., M, M) --> (..., M(M+1)/2), off-diagonals scaled by sqrt(2).

    The coefficient inner product equals the Frobenius inner product.
    """
    V = np.asarray(V, dtype=float)
    M = V.shape[-1]
    rows, cols = _spd_index(M)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return V[..., rows, cols] * scale


def coeffs_to_sym(c: npt.NDArray, M: int) -> npt.NDArray:
    """Inverse of ``sym_to_coeffs``."""
    c = np.asarray(c, dtype=float)
    rows, cols = _spd_index(M)
    scale = np.where(rows == cols, 1.0, 1.0 / np.sqrt(2.0))
    V = np.zeros(c.shape[:-1] + (M, M))
    V[..., rows, cols] = c * scale
    V[..., cols, rows] = c * scale
    return V


def _spd_basis(M: int) -> npt.NDArray:
    """Ambient (row-major) columns of the Frobenius-orthonormal symmetric basis."""
    n = M * (M + 1) // 2
    return coeffs_to_sym(np.eye(n), M).reshape(n, M * M).T


def _sym_funm(X: npt.NDArray, func) -> npt.NDArray:
    """Apply a scalar function to the eigenvalues of symmetric matrices."""
    s, U = np.linalg.eigh(0.5 * (X + np.swapaxes(X, -1, -2)))
    return (U * func(s)[..., None, :]) @ np.swapaxes(U, -1, -2)


def _spd_sqrt_invsqrt(P: npt.NDArray) -> tuple[npt.NDArray, npt.NDArray]:
    s, U = np.linalg.eigh(0.5 * (P + np.swapaxes(P, -1, -2)))
    Ut = np.swapaxes(U, -1, -2)
    return (U * np.sqrt(s)[..., None, :]) @ Ut, (U / np.sqrt(s)[..., None, :]) @ Ut


# ################################################ #
# tangent bases                                    #
# ################################################ #


def _sphere_basis(p: npt.NDArray) -> npt.NDArray:
    """Orthonormal tangent basis of S^M at p, shape (..., M+1, M)."""
    p = np.asarray(p, dtype=float)
    D = p.shape[-1]
    if D == 2:
        return np.stack((-p[..., 1], p[..., 0]), axis=-1)[..., :, None]
    elif D == 3:
        # QR of A_p = [[-z, 0], [0, z], [x, y]]; for |z| small the coordinates are
        # cyclically permuted so that the largest |coordinate| sits in the z slot
        absp = np.abs(p)
        shift = np.where(absp[..., 2] < S2_PERMUTE_TOL, (2 - np.argmax(absp, axis=-1)) % 3, 0)
        idx = (np.arange(3) - shift[..., None]) % 3
        q = np.take_along_axis(p, idx, axis=-1)
        x, y, z = q[..., 0], q[..., 1], q[..., 2]
        zero = np.zeros_like(x)
        A = np.stack(
            (np.stack((-z, zero), axis=-1), np.stack((zero, z), axis=-1), np.stack((x, y), axis=-1)),
            axis=-2,
        )
        B, _ = np.linalg.qr(A)
        back = (np.arange(3) + shift[..., None]) % 3
        return np.take_along_axis(B, back[..., None], axis=-2)
    elif D == 4:
        w, x, y, z = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
        return np.stack(
            (
                np.stack((-x, -y, -z), axis=-1),
                np.stack((w, z, -y), axis=-1),
                np.stack((-z, w, x), axis=-1),
                np.stack((y, -x, w), axis=-1),
            ),
            axis=-2,
        )
    else:
        # Householder reflection mapping e_1 to -+p, its other columns span p's complement
        e1 = np.eye(D)[0]
        sign = np.where(p[..., :1] >= 0, 1.0, -1.0)
        u = p + sign * e1
        H = np.eye(D) - 2 * u[..., :, None] * u[..., None, :] / np.sum(u * u, axis=-1)[..., None, None]
        return H[..., :, 1:]


def basis_coords(spec: ManifoldSpec, base: npt.NDArray) -> npt.NDArray:
    """Tangent basis at ambient coords `base` (..., A), returns (..., A, I)."""
    base = np.asarray(base, dtype=float)
    lead = base.shape[:-1]
    B = np.zeros(lead + (spec.ambient_dim, spec.intrinsic_dim))
    for c, sa, si in zip(spec.factors, spec.ambient_slices(), spec.intrinsic_slices()):
        if c.kind == "euclidean":
            B[..., sa, si] = np.eye(c.dim)
        elif c.kind == "sphere":
            B[..., sa, si] = _sphere_basis(base[..., sa])
        else:
            B[..., sa, si] = _spd_basis(c.dim)
    return B


# ################################################ #
# exp / log / distance on arrays                   #
# ################################################ #


def _sphere_exp(p: npt.NDArray, u: npt.NDArray) -> npt.NDArray:
    r = np.linalg.norm(u, axis=-1, keepdims=True)
    q = p * np.cos(r) + u * np.sinc(r / np.pi)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def _sphere_log(p: npt.NDArray, q: npt.NDArray) -> npt.NDArray:
    if np.any(np.linalg.norm(p + q, axis=-1) < ANTIPODAL_TOL):
        raise ManifoldDomainError("@log_map: antipodal points on the sphere have no unique log")
    c = np.sum(p * q, axis=-1, keepdims=True)
    w = q - c * p
    nw = np.linalg.norm(w, axis=-1, keepdims=True)
    theta = np.arctan2(nw, c)
    ratio = np.where(nw > 1e-300, theta / np.where(nw > 1e-300, nw, 1.0), 1.0)
    return ratio * w


def _spd_exp(P: npt.NDArray, V: npt.NDArray) -> npt.NDArray:
    Ph, Pih = _spd_sqrt_invsqrt(P)
    Y = Ph @ _sym_funm(Pih @ V @ Pih, np.exp) @ Ph
    Y = 0.5 * (Y + np.swapaxes(Y, -1, -2))
    if np.any(np.linalg.eigvalsh(Y)[..., 0] <= 0):
        raise ConsistencyError("@exp_map: SPD exponential lost positive-definiteness")
    return Y


def _spd_log(P: npt.NDArray, Q: npt.NDArray) -> npt.NDArray:
    Qs = 0.5 * (Q + np.swapaxes(Q, -1, -2))
    if np.any(np.linalg.eigvalsh(Qs)[..., 0] <= 0):
        raise ManifoldDomainError("@log_map: matrix is not positive-definite")
    Ph, Pih = _spd_sqrt_invsqrt(P)
    V = Ph @ _sym_funm(Pih @ Qs @ Pih, np.log) @ Ph
    return 0.5 * (V + np.swapaxes(V, -1, -2))


def exp_coords(spec: ManifoldSpec, base: npt.NDArray, coeffs: npt.NDArray) -> npt.NDArray:
    """Exp_base(coeffs) on arrays; broadcasts base (..., A) with coeffs (..., I)."""
    base = np.asarray(base, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    if base.shape[-1] != spec.ambient_dim or coeffs.shape[-1] != spec.intrinsic_dim:
        raise ManifoldMismatchError(
            f"@exp_map: got base {base.shape[-1]} / coeffs {coeffs.shape[-1]} "
            f"for {spec} ({spec.ambient_dim}/{spec.intrinsic_dim})"
        )
    lead = np.broadcast_shapes(base.shape[:-1], coeffs.shape[:-1])
    out = np.zeros(lead + (spec.ambient_dim,))
    for c, sa, si in zip(spec.factors, spec.ambient_slices(), spec.intrinsic_slices()):
        p = np.broadcast_to(base[..., sa], lead + (c.ambient_dim,))
        v = np.broadcast_to(coeffs[..., si], lead + (c.intrinsic_dim,))
        if c.kind == "euclidean":
            out[..., sa] = p + v
        elif c.kind == "sphere":
            u = np.einsum("...ai,...i->...a", _sphere_basis(base[..., sa]), v)
            out[..., sa] = _sphere_exp(p, u)
        else:
            M = c.dim
            P = p.reshape(lead + (M, M))
            out[..., sa] = _spd_exp(P, coeffs_to_sym(v, M)).reshape(lead + (M * M,))
    return out


def log_coords(spec: ManifoldSpec, base: npt.NDArray, q: npt.NDArray) -> npt.NDArray:
    """Log_base(q) in intrinsic coordinates; broadcasts over leading axes."""
    base = np.asarray(base, dtype=float)
    q = np.asarray(q, dtype=float)
    if base.shape[-1] != spec.ambient_dim or q.shape[-1] != spec.ambient_dim:
        raise ManifoldMismatchError(f"@log_map: ambient dimension mismatch for {spec}")
    lead = np.broadcast_shapes(base.shape[:-1], q.shape[:-1])
    out = np.zeros(lead + (spec.intrinsic_dim,))
    for c, sa, si in zip(spec.factors, spec.ambient_slices(), spec.intrinsic_slices()):
        p = np.broadcast_to(base[..., sa], lead + (c.ambient_dim,))
        y = np.broadcast_to(q[..., sa], lead + (c.ambient_dim,))
        if c.kind == "euclidean":
            out[..., si] = y - p
        elif c.kind == "sphere":
            u = _sphere_log(p, y)
            out[..., si] = np.einsum("...ai,...a->...i", _sphere_basis(p), u)
        else:
            M = c.dim
            V = _spd_log(p.reshape(lead + (M, M)), y.reshape(lead + (M, M)))
            out[..., si] = sym_to_coeffs(V)
    return out


def distance_coords(spec: ManifoldSpec, a: npt.NDArray, b: npt.NDArray) -> npt.NDArray:
    """Geodesic distance; products combine components as sqrt of sum of squares."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-1] != spec.ambient_dim or b.shape[-1] != spec.ambient_dim:
        raise ManifoldMismatchError(f"@distance: ambient dimension mismatch for {spec}")
    lead = np.broadcast_shapes(a.shape[:-1], b.shape[:-1])
    d2 = np.zeros(lead)
    for c, sa in zip(spec.factors, spec.ambient_slices()):
        x, y = a[..., sa], b[..., sa]
        if c.kind == "euclidean":
            d2 = d2 + np.sum((x - y) ** 2, axis=-1)
        elif c.kind == "sphere":
            # chordal form, symmetric and accurate near 0
            chord = np.linalg.norm(x - y, axis=-1)
            d2 = d2 + (2 * np.arcsin(np.clip(chord / 2, 0, 1))) ** 2
        else:
            M = c.dim
            X = np.broadcast_to(x, lead + (c.ambient_dim,)).reshape(lead + (M, M))
            Y = np.broadcast_to(y, lead + (c.ambient_dim,)).reshape(lead + (M, M))
            _, Xih = _spd_sqrt_invsqrt(X)
            ev = np.linalg.eigvalsh(Xih @ (0.5 * (Y + np.swapaxes(Y, -1, -2))) @ Xih)
            d2 = d2 + np.sum(np.log(ev) ** 2, axis=-1)
    return np.sqrt(d2)


def _log_dexp_pairs(lam: npt.NDArray) -> npt.NDArray:
    """sum_{i<=j} log g(l_i, l_j) with g(l, m) = (e^l - e^m)/(l - m), g(l, l) = e^l."""
    M = lam.shape[-1]
    i, j = np.triu_indices(M)
    li, lj = lam[..., i], lam[..., j]
    lo = np.minimum(li, lj)
    d = np.abs(li - lj)
    safe = np.where(d > 1e-12, d, 1.0)
    log_ratio = np.where(d > 1e-12, np.log(np.expm1(safe) / safe), 0.5 * d)
    return np.sum(lo + log_ratio, axis=-1)


def cov_log_det_coords(spec: ManifoldSpec, base: npt.NDArray, coeffs: npt.NDArray) -> npt.NDArray:
    """log|det dExp_base(v)| in intrinsic coordinates, broadcast over leading axes.

    Sphere: (M-1) log|sin r / r| with r = |v|.
    SPD: sum_{i<=j} log g(l_i, l_j), l the eigenvalues of P^{-1/2} V P^{-1/2}; the
    congruence by P^{1/2} has unit determinant on this chart.
    """
    base = np.asarray(base, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    lead = np.broadcast_shapes(base.shape[:-1], coeffs.shape[:-1])
    out = np.zeros(lead)
    for c, sa, si in zip(spec.factors, spec.ambient_slices(), spec.intrinsic_slices()):
        v = coeffs[..., si]
        if c.kind == "sphere":
            r = np.linalg.norm(v, axis=-1)
            if np.any(r >= np.pi):
                warnings.warn(
                    "@cov_log_det: |v| >= pi on the sphere, the log-determinant diverges",
                    SphereCutLocusWarning,
                )
            with np.errstate(divide="ignore"):
                out = out + (c.dim - 1) * np.log(np.abs(np.sinc(r / np.pi)))
        elif c.kind == "spd":
            M = c.dim
            P = base[..., sa].reshape(base.shape[:-1] + (M, M))
            _, Pih = _spd_sqrt_invsqrt(P)
            lam = np.linalg.eigvalsh(Pih @ coeffs_to_sym(v, M) @ Pih)
            out = out + _log_dexp_pairs(lam)
    return out


def chart_metric(spec: ManifoldSpec, q: npt.NDArray) -> npt.NDArray:
    """Gram matrix of the Riemannian metric at q in the output chart of J_Exp.

    Identity for Euclidean and sphere (orthonormal frames), affine-invariant Gram
    tr(Y^-1 E_k Y^-1 E_l) of the symmetric basis for SPD; block-diagonal products.
    """
    q = np.asarray(q, dtype=float)
    lead = q.shape[:-1]
    G = np.zeros(lead + (spec.intrinsic_dim, spec.intrinsic_dim))
    for c, sa, si in zip(spec.factors, spec.ambient_slices(), spec.intrinsic_slices()):
        if c.kind in ("euclidean", "sphere"):
            G[..., si, si] = np.eye(c.intrinsic_dim)
        else:
            M = c.dim
            Yinv = np.linalg.inv(q[..., sa].reshape(lead + (M, M)))
            E = coeffs_to_sym(np.eye(c.intrinsic_dim), M)  # (n, M, M)
            A = np.einsum("...ab,kbc->...kac", Yinv, E)  # Y^-1 E_k
            Gc = np.einsum("...kab,...lba->...kl", A, A)
            G[..., si, si] = 0.5 * (Gc + np.swapaxes(Gc, -1, -2))
    return G


# ################################################ #
# differential of the exponential map              #
# ################################################ #


def exp_coords_torch(spec: ManifoldSpec, base: npt.NDArray, coeffs: torch.Tensor) -> torch.Tensor:
    """Differentiable Exp_base(coeffs) for one point, float64, ambient output."""
    base = np.asarray(base, dtype=float)
    B = torch.as_tensor(basis_coords(spec, base), dtype=torch.float64)
    out = []
    for c, sa, si in zip(spec.factors, spec.ambient_slices(), spec.intrinsic_slices()):
        p = torch.as_tensor(base[sa], dtype=torch.float64)
        v = coeffs[si]
        if c.kind == "euclidean":
            out.append(p + v)
        elif c.kind == "sphere":
            u = B[sa, si] @ v
            r = torch.sqrt(torch.sum(u * u))
            small = r < 1e-8
            r_safe = torch.where(small, torch.ones_like(r), r)
            cos_r = torch.where(small, 1 - r**2 / 2, torch.cos(r_safe))
            sinc_r = torch.where(small, 1 - r**2 / 6, torch.sin(r_safe) / r_safe)
            out.append(p * cos_r + u * sinc_r)
        else:
            M = c.dim
            Ph, Pih = _spd_sqrt_invsqrt(base[sa].reshape(M, M))
            Ph = torch.as_tensor(Ph, dtype=torch.float64)
            Pih = torch.as_tensor(Pih, dtype=torch.float64)
            V = (B[sa, si] @ v).reshape(M, M)
            out.append((Ph @ torch.linalg.matrix_exp(Pih @ V @ Pih) @ Ph).reshape(-1))
    return torch.cat(out)


def exp_jacobian_coords(spec: ManifoldSpec, base: npt.NDArray, coeffs: npt.NDArray,
                        method: str = "fd", step: float = 1e-6) -> npt.NDArray:
    """Jacobian of the coordinatized exponential map at coeffs.

    The output chart is the tangent basis at q = Exp_base(v): J = B_q^T dExp/dv.

    Parameters
    ----------
    spec:
        manifold
    base:
        basepoint (A,)
    coeffs:
        tangent coefficients (..., I)
    method:
        "fd" for central finite differences, "autograd" for torch autodiff
    step:
        finite-difference step

    Returns
    -------
    J: (..., I, I)
    """
    assert method in ("fd", "autograd")
    base = np.asarray(base, dtype=float)
    coeffs = np.asarray(coeffs, dtype=float)
    I = spec.intrinsic_dim
    if method == "fd":
        eye = np.eye(I) * step
        plus = exp_coords(spec, base, coeffs[..., None, :] + eye)  # (..., I, A)
        minus = exp_coords(spec, base, coeffs[..., None, :] - eye)
        dexp = np.swapaxes((plus - minus) / (2 * step), -1, -2)  # (..., A, I)
    else:
        flat = coeffs.reshape(-1, I)
        dexp = np.zeros((flat.shape[0], spec.ambient_dim, I))
        for k, v in enumerate(flat):
            dexp[k] = torch.autograd.functional.jacobian(
                lambda t: exp_coords_torch(spec, base, t),
                torch.as_tensor(v, dtype=torch.float64),
            ).numpy()
        dexp = dexp.reshape(coeffs.shape[:-1] + (spec.ambient_dim, I))
    q = exp_coords(spec, base, coeffs)
    Bq = basis_coords(spec, q)
    return np.swapaxes(Bq, -1, -2) @ dexp


# ################################################ #
# typed operations                                 #
# ################################################ #


def _check_same_spec(a: ManifoldPoint, b: ManifoldPoint, where: str) -> None:
    if a.spec != b.spec:
        raise ManifoldMismatchError(f"@{where}: spec mismatch {a.spec} vs {b.spec}")


def exp_map(base: ManifoldPoint, v: TangentCoords) -> ManifoldPoint:
    """Exponential map at `base`; `v` must be attached to `base`."""
    if v.basepoint.spec != base.spec or not np.allclose(v.basepoint.coords, base.coords, rtol=0, atol=1e-12):
        raise ManifoldMismatchError("@exp_map: tangent vector is not attached to the basepoint")
    return ManifoldPoint(base.spec, exp_coords(base.spec, base.coords, v.coeffs))


def log_map(base: ManifoldPoint, q: ManifoldPoint) -> TangentCoords:
    """Logarithmic map, inverse of ``exp_map``."""
    _check_same_spec(base, q, "log_map")
    return TangentCoords(base, log_coords(base.spec, base.coords, q.coords))


def distance(a: ManifoldPoint, b: ManifoldPoint) -> float:
    _check_same_spec(a, b, "distance")
    return float(distance_coords(a.spec, a.coords, b.coords))


def tangent_basis(base: ManifoldPoint) -> TangentBasis:
    return TangentBasis(base, basis_coords(base.spec, base.coords))


def cov_log_det(base: ManifoldPoint, v: TangentCoords) -> float:
    """log|det(dExp_base / dv)| of the change of variables."""
    if v.basepoint.spec != base.spec:
        raise ManifoldMismatchError("@cov_log_det: spec mismatch")
    return float(cov_log_det_coords(base.spec, base.coords, v.coeffs))


def project_check(q: npt.ArrayLike, spec: ManifoldSpec, tol: float) -> bool:
    """True iff the raw ambient vector `q` satisfies the constraints of `spec`.

    Sphere: ||q|-1| <= tol; SPD: max asymmetry <= tol and min eigenvalue
    >= tol * trace / M; products: every component.
    """
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != spec.ambient_dim or not np.all(np.isfinite(q)):
        return False
    for c, sa in zip(spec.factors, spec.ambient_slices()):
        x = q[sa]
        if c.kind == "sphere":
            if abs(np.linalg.norm(x) - 1.0) > tol:
                return False
        elif c.kind == "spd":
            X = x.reshape(c.dim, c.dim)
            if np.max(np.abs(X - X.T)) > tol:
                return False
            if np.linalg.eigvalsh(0.5 * (X + X.T))[0] < tol * np.trace(X) / c.dim:
                return False
    return True


def as_points(spec: ManifoldSpec, coords: npt.NDArray, check: bool = True) -> list[ManifoldPoint]:
    """Rows of an (N, A) array --> list of ManifoldPoint."""
    return [ManifoldPoint(spec, row, check=check) for row in np.atleast_2d(coords)]


def random_points(spec: ManifoldSpec, n: int, rng: Optional[np.random.Generator] = None,
                  scale: float = 1.0) -> npt.NDArray:
    """Random ambient coordinates on `spec`, shape (n, A); used by tests and artifacts."""
    rng = np.random.default_rng(rng)
    parts = []
    for c in spec.factors:
        if c.kind == "euclidean":
            parts.append(rng.normal(scale=scale, size=(n, c.dim)))
        elif c.kind == "sphere":
            x = rng.normal(size=(n, c.dim + 1))
            parts.append(x / np.linalg.norm(x, axis=1, keepdims=True))
        else:
            V = coeffs_to_sym(rng.normal(scale=scale, size=(n, c.intrinsic_dim)), c.dim)
            parts.append(_sym_funm(V, np.exp).reshape(n, -1))
    return np.hstack(parts)
