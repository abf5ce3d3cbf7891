"""
Latent-space kernels.

- ``SEKernel``: squared-exponential kernel k(x, x') = s2 exp(-|x - x'|^2 / (2 theta^2))
  with its first cross-derivative and second self cross-derivative
- ``TaskCovariance``: k^f = B B^T + diag(v)
- ``MultitaskKernel``: k^f (x) K^x + noise * I, kept as Kronecker factors
- ``RiemannianBCKernel``: product kernel on manifold data for back constraints
"""

__all__ = [
    "SEKernel",
    "TaskCovariance",
    "MultitaskKernel",
    "KroneckerBlocks",
    "RiemannianBCKernel",
    "gram",
    "grad_cross",
    "hess_self",
    "multitask_blocks",
    "bc_kernel_eval",
    "se_gram_torch",
    "add_jitter",
]

import dataclasses
from typing import Optional, Sequence, Union

import numpy as np
import numpy.typing as npt
import torch
from scipy import special

from .core import config
from .exceptions import ManifoldMismatchError, MemoryGuardError
from .manifolds import ManifoldPoint, ManifoldSpec, distance_coords


def _check_finite(X: npt.NDArray, where: str) -> npt.NDArray:
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"@{where}: non-finite latent inputs")
    return X


def add_jitter(K: npt.NDArray, jitter: float = config["kernel"]["jitter"]) -> npt.NDArray:
    """K + jitter * mean(diag(K)) * I"""
    K = np.asarray(K, dtype=float)
    return K + jitter * np.mean(np.diag(K)) * np.eye(K.shape[0])


# ################################################ #
# SE kernel                                        #
# ################################################ #


@dataclasses.dataclass(frozen=True)
class SEKernel:
    """Squared-exponential kernel, stored through its log-parameters."""

    log_lengthscale: float = 0.0
    log_variance: float = 0.0

    @classmethod
    def from_values(cls, lengthscale: float = 1.0, variance: float = 1.0) -> "SEKernel":
        if not (lengthscale > 0 and variance > 0):
            raise ValueError(
                f"@SEKernel: lengthscale and variance must be positive, got {lengthscale}, {variance}"
            )
        return cls(float(np.log(lengthscale)), float(np.log(variance)))

    @property
    def lengthscale(self) -> float:
        return float(np.exp(self.log_lengthscale))

    @property
    def variance(self) -> float:
        return float(np.exp(self.log_variance))

    def __call__(self, X1: npt.NDArray, X2: npt.NDArray) -> npt.NDArray:
        X1 = np.atleast_2d(X1)
        X2 = np.atleast_2d(X2)
        d2 = np.sum((X1[:, None, :] - X2[None, :, :]) ** 2, axis=-1)
        return self.variance * np.exp(-0.5 * d2 / self.lengthscale**2)

    def to_dict(self) -> dict:
        return {"theta": self.lengthscale, "sigma2": self.variance}

    @classmethod
    def from_dict(cls, d: dict) -> "SEKernel":
        return cls.from_values(d["theta"], d["sigma2"])


def se_gram_torch(X1: torch.Tensor, X2: torch.Tensor, log_lengthscale: torch.Tensor,
                  log_variance: torch.Tensor) -> torch.Tensor:
    """SE kernel matrix in torch, differentiable in inputs and log-parameters."""
    d2 = torch.sum((X1[:, None, :] - X2[None, :, :]) ** 2, dim=-1)
    return torch.exp(log_variance - 0.5 * d2 * torch.exp(-2 * log_lengthscale))


def gram(kernel: SEKernel, X: npt.NDArray) -> npt.NDArray:
    """K^x = [k(x_n, x_a)], N x N."""
    X = _check_finite(np.atleast_2d(X), "gram")
    K = kernel(X, X)
    return 0.5 * (K + K.T)


def grad_cross(kernel: SEKernel, X: npt.NDArray, xs: npt.NDArray) -> npt.NDArray:
    """dK^x: entry (n, r) = dk(x_n, x*)/dx*_r = k(x_n, x*) (x_n - x*)_r / theta^2."""
    X = _check_finite(np.atleast_2d(X), "grad_cross")
    xs = _check_finite(np.reshape(xs, -1), "grad_cross")
    k = kernel(X, xs[None, :])[:, 0]
    return k[:, None] * (X - xs[None, :]) / kernel.lengthscale**2


def hess_self(kernel: SEKernel, xs: npt.NDArray) -> npt.NDArray:
    """d^2 k(x, x') / dx_r dx'_s at x = x' = x*, equal to (s2 / theta^2) I."""
    Q = np.reshape(xs, -1).shape[0]
    return kernel.variance / kernel.lengthscale**2 * np.eye(Q)


# ################################################ #
# task covariance and multitask kernel             #
# ################################################ #


@dataclasses.dataclass(frozen=True)
class TaskCovariance:
    """k^f = B B^T + diag(v), B is M x r, v > 0 (stored as log v)."""

    B: np.ndarray
    log_v: np.ndarray

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        log_v = np.asarray(self.log_v, dtype=float).reshape(-1)
        assert B.shape[0] == log_v.shape[0]
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "log_v", log_v)

    @classmethod
    def init(cls, M: int, rank: int = -1, scale: float = config["kernel"]["task_init_scale"],
             rng: Union[None, int, np.random.Generator] = None) -> "TaskCovariance":
        """Random low-rank factor 0.1 * N(0, 1) and unit diagonal.

        rank -1 means full rank M, rank 0 gives independent outputs (k^f diagonal).
        """
        rank = M if rank < 0 else rank
        rng = np.random.default_rng(rng)
        return cls(scale * rng.normal(size=(M, rank)), np.zeros(M))

    @classmethod
    def identity(cls, M: int) -> "TaskCovariance":
        return cls(np.zeros((M, 0)), np.zeros(M))

    @property
    def M(self) -> int:
        return self.B.shape[0]

    @property
    def rank(self) -> int:
        return self.B.shape[1]

    @property
    def v(self) -> npt.NDArray:
        return np.exp(self.log_v)

    @property
    def matrix(self) -> npt.NDArray:
        return self.B @ self.B.T + np.diag(self.v)


@dataclasses.dataclass
class KroneckerBlocks:
    """K = kf (x) Kx + noise I, dK = kf (x) dKx, d2K = kf (x) d2Kx, kept as factors.

    vec ordering is task-major: index m * N + n.
    """

    kf: np.ndarray
    Kx: np.ndarray
    noise: float
    dKx: Optional[np.ndarray] = None
    d2Kx: Optional[np.ndarray] = None
    dense_max: int = config["guards"]["dense_max"]

    @property
    def size(self) -> int:
        return self.kf.shape[0] * self.Kx.shape[0]

    def _guard(self):
        if self.size > self.dense_max:
            raise MemoryGuardError(
                f"@KroneckerBlocks: dense assembly of {self.size}x{self.size} "
                f"exceeds dense_max={self.dense_max}"
            )

    def dense_K(self) -> npt.NDArray:
        self._guard()
        return np.kron(self.kf, self.Kx) + self.noise * np.eye(self.size)

    def dense_dK(self) -> npt.NDArray:
        self._guard()
        return np.kron(self.kf, self.dKx)

    def dense_d2K(self) -> npt.NDArray:
        self._guard()
        return np.kron(self.kf, self.d2Kx)


@dataclasses.dataclass(frozen=True)
class MultitaskKernel:
    """Multitask kernel k^f (x) k^x with Gaussian noise.

    `log_noise` is a scalar for shared noise or a length-M vector for per-task noise.
    """

    latent: SEKernel
    task: TaskCovariance
    log_noise: Union[float, np.ndarray] = float(np.log(config["kernel"]["noise"]))

    @property
    def noise(self) -> Union[float, npt.NDArray]:
        return np.exp(self.log_noise)

    @property
    def shared_noise(self) -> bool:
        return np.ndim(self.log_noise) == 0

    def noise_vector(self, N: int) -> npt.NDArray:
        """Diagonal of the noise covariance in task-major vec ordering."""
        return np.repeat(np.broadcast_to(self.noise, (self.task.M,)), N)

    def to_dict(self) -> dict:
        d = self.latent.to_dict()
        d.update(
            task_B=self.task.B.tolist(),
            task_v=self.task.v.tolist(),
            noise=self.noise.tolist() if not self.shared_noise else float(self.noise),
        )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MultitaskKernel":
        B = np.asarray(d["task_B"], dtype=float).reshape(len(d["task_v"]), -1)
        noise = np.asarray(d["noise"], dtype=float)
        return cls(
            SEKernel.from_dict(d),
            TaskCovariance(B, np.log(d["task_v"])),
            float(np.log(noise)) if noise.ndim == 0 else np.log(noise),
        )


def multitask_blocks(kernel: MultitaskKernel, X: npt.NDArray, xs: Optional[npt.NDArray] = None,
                     dense_max: int = config["guards"]["dense_max"]) -> KroneckerBlocks:
    """Kronecker factors of K, dK and d2K at the query `xs`.

    Per-task noise is not a Kronecker factor; it is carried in ``noise`` as the
    mean and resolved by the model's dense path.
    """
    X = np.atleast_2d(X)
    blocks = KroneckerBlocks(
        kf=kernel.task.matrix,
        Kx=gram(kernel.latent, X),
        noise=float(np.mean(kernel.noise)),
        dense_max=dense_max,
    )
    if xs is not None:
        blocks.dKx = grad_cross(kernel.latent, X, xs)
        blocks.d2Kx = hess_self(kernel.latent, xs)
    return blocks


# ################################################ #
# Riemannian back-constraint kernel                #
# ################################################ #


def _sphere_series_coefficients(M: int, lengthscale: float, n_max: int) -> npt.NDArray:
    """Heat-kernel coefficients exp(-n(n+M-1) theta^2/2) times harmonic multiplicities."""
    n = np.arange(n_max + 1)
    if M == 1:
        mult = np.where(n == 0, 1.0, 2.0)
    else:
        mult = (2 * n + M - 1) / (M - 1) * special.comb(n + M - 2, n)
    c = mult * np.exp(-0.5 * n * (n + M - 1) * lengthscale**2)
    return c / np.sum(c)


def _sphere_series(cos_d: npt.NDArray, M: int, coef: npt.NDArray) -> npt.NDArray:
    """sum_n c_n C_n^alpha(cos d) / C_n^alpha(1), alpha = (M-1)/2."""
    cos_d = np.clip(cos_d, -1.0, 1.0)
    out = np.zeros_like(cos_d)
    for n, c in enumerate(coef):
        if M == 1:
            out += c * special.eval_chebyt(n, cos_d)
        else:
            alpha = 0.5 * (M - 1)
            out += c * special.eval_gegenbauer(n, alpha, cos_d) / special.eval_gegenbauer(n, alpha, 1.0)
    return out


class RiemannianBCKernel:
    """Product of per-component kernels on manifold data.

    Euclidean components use the SE kernel, spheres a truncated heat-type
    Gegenbauer series normalized so that k(y, y) = variance, SPD components
    s2 exp(-d_affine^2 / (2 theta^2)).

    Parameters
    ----------
    spec:
        manifold of the data
    lengthscales, variances:
        one value per component, or a scalar shared by all
    n_max:
        truncation order of the sphere series
    """

    def __init__(self, spec: ManifoldSpec, lengthscales: Union[float, Sequence[float]] = 0.2,
                 variances: Union[float, Sequence[float]] = 1.0, n_max: int = 10):
        self.spec = spec
        ncomp = len(spec.factors)
        self.lengthscales = np.broadcast_to(np.asarray(lengthscales, dtype=float), (ncomp,)).copy()
        self.variances = np.broadcast_to(np.asarray(variances, dtype=float), (ncomp,)).copy()
        if np.any(self.lengthscales <= 0) or np.any(self.variances <= 0):
            raise ValueError("@RiemannianBCKernel: lengthscales and variances must be positive")
        self.n_max = int(n_max)
        self._coef = [
            _sphere_series_coefficients(c.dim, ls, self.n_max) if c.kind == "sphere" else None
            for c, ls in zip(spec.factors, self.lengthscales)
        ]

    def __repr__(self):
        return "<RiemannianBCKernel [{}] lengthscales={} variances={} n_max={}>".format(
            self.spec, self.lengthscales, self.variances, self.n_max
        )

    def __call__(self, Y1: npt.NDArray, Y2: npt.NDArray) -> npt.NDArray:
        """Kernel matrix between the rows of Y1 (N, A) and Y2 (P, A)."""
        Y1 = np.atleast_2d(Y1)
        Y2 = np.atleast_2d(Y2)
        if Y1.shape[1] != self.spec.ambient_dim or Y2.shape[1] != self.spec.ambient_dim:
            raise ManifoldMismatchError(f"@RiemannianBCKernel: ambient dimension mismatch for {self.spec}")
        K = np.ones((Y1.shape[0], Y2.shape[0]))
        for c, sa, ls, var, coef in zip(
            self.spec.factors, self.spec.ambient_slices(), self.lengthscales, self.variances, self._coef
        ):
            a, b = Y1[:, None, sa], Y2[None, :, sa]
            if c.kind == "euclidean":
                K *= var * np.exp(-0.5 * np.sum((a - b) ** 2, axis=-1) / ls**2)
            elif c.kind == "sphere":
                K *= var * _sphere_series(np.sum(a * b, axis=-1), c.dim, coef)
            else:
                d = distance_coords(c, a, b)
                K *= var * np.exp(-0.5 * d**2 / ls**2)
        return K

    def to_dict(self) -> dict:
        return dict(
            spec=str(self.spec),
            lengthscales=self.lengthscales.tolist(),
            variances=self.variances.tolist(),
            n_max=self.n_max,
        )

    @classmethod
    def from_dict(cls, d: dict) -> "RiemannianBCKernel":
        return cls(ManifoldSpec.parse(d["spec"]), d["lengthscales"], d["variances"], d["n_max"])


def bc_kernel_eval(k: RiemannianBCKernel, y_i: ManifoldPoint, y_j: ManifoldPoint) -> float:
    """k^M(y_i, y_j) for two points on the kernel's manifold."""
    if y_i.spec != k.spec or y_j.spec != k.spec:
        raise ManifoldMismatchError(f"@bc_kernel_eval: expected points on {k.spec}")
    return float(k(y_i.coords, y_j.coords)[0, 0])
