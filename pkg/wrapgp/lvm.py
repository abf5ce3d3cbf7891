"""
Multitask GPLVM and Wrapped GPLVM.

Manifold data y_i are represented by centered tangent vectors
v_i = Log_b(y_i) - tangent_mean at a constant basepoint b. A multitask GP with
covariance k^f (x) K^x + noise * I maps latent points x_i to v_i, and decoding
pushes the posterior mean forward with Exp_b. Latent points (or back-constraint
weights) and hyperparameters are fitted by MAP with Adam.

vec ordering of tangent targets is task-major: vec(V)[m * N + n] = V[n, m].
"""

__all__ = [
    "Posterior",
    "LatentModel",
    "init_pca",
    "log_marginal_likelihood",
    "log_prior",
    "train_map",
    "apply_back_constraints",
    "predict",
    "decode",
]

import dataclasses
import warnings
from typing import Optional

import numpy as np
import numpy.typing as npt
import torch
from scipy import linalg, special
from sklearn.decomposition import PCA

from .core import RunConfig, config
from .dataset import Dataset
from .exceptions import (
    DeskScaleWarning,
    FactorizationError,
    MemoryGuardError,
)
from .kernels import (
    MultitaskKernel,
    RiemannianBCKernel,
    SEKernel,
    TaskCovariance,
    add_jitter,
    gram,
    se_gram_torch,
)
from .manifolds import (
    ManifoldPoint,
    ManifoldSpec,
    cov_log_det_coords,
    exp_coords,
    log_coords,
)
from .optimize import AdamMinimizer
from .utils import read_json, write_json

LOG_2PI = float(np.log(2 * np.pi))
# Gamma(alpha=2, rate=2) prior on lengthscales
GAMMA_ALPHA = 2.0
GAMMA_BETA = 2.0


@dataclasses.dataclass
class Posterior:
    """Posterior of the tangent coefficients at one latent query."""

    mean: np.ndarray
    covariance: np.ndarray


def _condition_number(K: npt.NDArray) -> float:
    ev = np.abs(np.linalg.eigvalsh(0.5 * (K + K.T)))
    return float(ev.max() / ev.min()) if ev.min() > 0 else np.inf


class ParamLayout:
    """Named blocks of a flat parameter vector."""

    def __init__(self, shapes: dict):
        self.shapes = dict(shapes)
        self.slices = {}
        i = 0
        for name, shape in self.shapes.items():
            n = int(np.prod(shape, dtype=int))
            self.slices[name] = slice(i, i + n)
            i += n
        self.size = i

    def pack(self, values: dict) -> npt.NDArray:
        theta = np.zeros(self.size)
        for name, s in self.slices.items():
            theta[s] = np.reshape(values[name], -1)
        return theta

    def unpack(self, theta):
        """Works for numpy arrays and torch tensors."""
        return {name: theta[s].reshape(self.shapes[name]) for name, s in self.slices.items()}


class LatentModel:
    """A (wrapped) GPLVM.

    Parameters
    ----------
    dataset:
        training data, its spec is the output manifold
    Q:
        latent dimension
    X:
        (N, Q) latent points; ignored when `W` is given
    kernel:
        multitask kernel
    basepoint:
        ambient coords of the constant basepoint, default spec.default_basepoint()
    gpdm:
        dynamics kernel of the GPDM prior, None for the standard normal prior
    dyn_noise:
        noise added to the GPDM dynamics Gram
    bc_kernel:
        back-constraint kernel on the data, requires `W`
    W:
        (Q, N) back-constraint weights
    gamma_lengthscale:
        if True, add the Gamma(2, 2) prior on every learned lengthscale
    volume_correction:
        if True, subtract the change-of-volume log-determinants of Exp
    jitter:
        K^x gets jitter * mean(diag K^x) on its diagonal
    dense_max:
        largest N * M for which dense NM x NM algebra is allowed
    run_config:
        settings the model was trained with
    """

    def __init__(self, dataset: Dataset, Q: int, X: Optional[npt.ArrayLike] = None,
                 kernel: Optional[MultitaskKernel] = None,
                 basepoint: Optional[npt.ArrayLike] = None,
                 gpdm: Optional[SEKernel] = None,
                 dyn_noise: float = config["gpdm"]["dyn_noise"],
                 bc_kernel: Optional[RiemannianBCKernel] = None,
                 W: Optional[npt.ArrayLike] = None,
                 gamma_lengthscale: bool = False,
                 volume_correction: bool = True,
                 jitter: float = config["kernel"]["jitter"],
                 dense_max: int = config["guards"]["dense_max"],
                 run_config: Optional[RunConfig] = None):
        self.dataset = dataset
        self.spec: ManifoldSpec = dataset.spec
        self.Q = int(Q)
        self.kernel = kernel if kernel is not None else MultitaskKernel(
            SEKernel(), TaskCovariance.identity(self.spec.intrinsic_dim)
        )
        assert self.kernel.task.M == self.spec.intrinsic_dim
        self.basepoint = ManifoldPoint(
            self.spec, self.spec.default_basepoint() if basepoint is None else basepoint
        )
        self.gpdm = gpdm
        self.dyn_noise = float(dyn_noise)
        self.gamma_lengthscale = bool(gamma_lengthscale)
        self.volume_correction = bool(volume_correction)
        self.jitter = float(jitter)
        self.dense_max = int(dense_max)
        self.run_config = run_config

        # tangent targets
        raw = log_coords(self.spec, self.basepoint.coords, dataset.coords)
        self.tangent_mean = np.mean(raw, axis=0)
        self.V = raw - self.tangent_mean
        self.volume_term = (
            float(np.sum(cov_log_det_coords(self.spec, self.basepoint.coords, raw)))
            if self.volume_correction else 0.0
        )

        # back constraints
        self.bc_kernel = bc_kernel
        if bc_kernel is not None:
            if W is None:
                raise ValueError("@LatentModel: back constraints need weights W")
            self.K_bc = bc_kernel(dataset.coords, dataset.coords)
            self.W = np.asarray(W, dtype=float).reshape(self.Q, self.N)
            self.X = apply_back_constraints(self.W, self.K_bc)
        else:
            self.K_bc = None
            self.W = None
            self.X = np.zeros((self.N, self.Q)) if X is None else np.asarray(X, dtype=float).reshape(self.N, self.Q)

        self.trained = False
        self.objective_trace = []
        self._cache = None

    def __repr__(self):
        return "<LatentModel [{}] N={} Q={} M={} gpdm={} bc={} trained={}>".format(
            self.spec, self.N, self.Q, self.M, self.gpdm is not None, self.bc_kernel is not None, self.trained
        )

    @property
    def N(self) -> int:
        return self.dataset.N

    @property
    def M(self) -> int:
        return self.spec.intrinsic_dim

    @property
    def use_dense(self) -> bool:
        """Dense Cholesky path of the training objective."""
        if not self.kernel.shared_noise:
            if self.N * self.M > self.dense_max:
                raise MemoryGuardError(
                    f"@LatentModel: per-task noise needs dense algebra, N*M={self.N * self.M} > {self.dense_max}"
                )
            return True
        return self.N * self.M <= self.dense_max

    # ################################################ #
    # parameters                                       #
    # ################################################ #

    def param_layout(self) -> ParamLayout:
        shapes = {"W": (self.Q, self.N)} if self.bc_kernel is not None else {"X": (self.N, self.Q)}
        shapes.update(
            log_theta=(),
            log_sigma2=(),
            B=self.kernel.task.B.shape,
            log_v=(self.M,),
            log_noise=np.shape(self.kernel.log_noise),
        )
        if self.gpdm is not None:
            shapes.update(dyn_log_theta=(), dyn_log_sigma2=())
        return ParamLayout(shapes)

    def get_params(self) -> npt.NDArray:
        values = dict(
            log_theta=self.kernel.latent.log_lengthscale,
            log_sigma2=self.kernel.latent.log_variance,
            B=self.kernel.task.B,
            log_v=self.kernel.task.log_v,
            log_noise=self.kernel.log_noise,
        )
        if self.bc_kernel is not None:
            values["W"] = self.W
        else:
            values["X"] = self.X
        if self.gpdm is not None:
            values.update(dyn_log_theta=self.gpdm.log_lengthscale, dyn_log_sigma2=self.gpdm.log_variance)
        return self.param_layout().pack(values)

    def set_params(self, theta: npt.ArrayLike) -> None:
        p = self.param_layout().unpack(np.asarray(theta, dtype=float))
        if self.bc_kernel is not None:
            self.W = np.array(p["W"])
            self.X = apply_back_constraints(self.W, self.K_bc)
        else:
            self.X = np.array(p["X"])
        log_noise = p["log_noise"]
        self.kernel = MultitaskKernel(
            SEKernel(float(p["log_theta"]), float(p["log_sigma2"])),
            TaskCovariance(np.array(p["B"]), np.array(p["log_v"])),
            float(log_noise) if np.ndim(log_noise) == 0 else np.array(log_noise),
        )
        if self.gpdm is not None:
            self.gpdm = SEKernel(float(p["dyn_log_theta"]), float(p["dyn_log_sigma2"]))
        self.delete_cache()

    # ################################################ #
    # MAP objective                                    #
    # ################################################ #

    def _gaussian_term_torch(self, X: torch.Tensor, p: dict) -> torch.Tensor:
        N, M = self.N, self.M
        V = torch.as_tensor(self.V, dtype=torch.float64)
        kf = p["B"] @ p["B"].T + torch.diag(torch.exp(p["log_v"]))
        Kx = se_gram_torch(X, X, p["log_theta"], p["log_sigma2"])
        Kx = Kx + self.jitter * torch.exp(p["log_sigma2"]) * torch.eye(N, dtype=torch.float64)
        noise = torch.exp(p["log_noise"])
        try:
            if self.use_dense:
                noise_vec = noise.reshape(-1, 1).expand(M, N).reshape(-1) if noise.ndim else noise * torch.ones(
                    N * M, dtype=torch.float64)
                K = torch.kron(kf, Kx) + torch.diag(noise_vec)
                L = torch.linalg.cholesky(K)
                y = V.T.reshape(-1, 1)
                alpha = torch.cholesky_solve(y, L)
                return (-0.5 * torch.sum(y * alpha) - torch.sum(torch.log(torch.diagonal(L)))
                        - 0.5 * N * M * LOG_2PI)
            lam_x, Ux = torch.linalg.eigh(Kx)
            lam_f, Uf = torch.linalg.eigh(kf)
            S = lam_x[:, None] * lam_f[None, :] + noise
            Vt = Ux.T @ V @ Uf
            return -0.5 * torch.sum(Vt**2 / S) - 0.5 * torch.sum(torch.log(S)) - 0.5 * N * M * LOG_2PI
        except torch.linalg.LinAlgError:
            Kx_np = Kx.detach().numpy()
            raise FactorizationError("@LatentModel: Gram factorization failed", _condition_number(Kx_np))

    def _log_prior_torch(self, X: torch.Tensor, p: dict) -> torch.Tensor:
        Q = self.Q
        out = torch.zeros((), dtype=torch.float64)
        if self.gpdm is None:
            out = out - 0.5 * torch.sum(X**2) - 0.5 * X.numel() * LOG_2PI
        else:
            for idx in self.dataset.trajectories():
                Xt = X[torch.as_tensor(idx)]
                T = Xt.shape[0]
                out = out - 0.5 * torch.sum(Xt[0] ** 2) - 0.5 * Q * LOG_2PI
                if T < 2:
                    continue
                Kd = se_gram_torch(Xt[:-1], Xt[:-1], p["dyn_log_theta"], p["dyn_log_sigma2"])
                Kd = Kd + self.dyn_noise * torch.eye(T - 1, dtype=torch.float64)
                try:
                    L = torch.linalg.cholesky(Kd)
                except torch.linalg.LinAlgError:
                    raise FactorizationError(
                        "@LatentModel: GPDM dynamics Gram factorization failed",
                        _condition_number(Kd.detach().numpy()),
                    )
                Y = Xt[1:]
                alpha = torch.cholesky_solve(Y, L)
                out = (out - 0.5 * torch.sum(Y * alpha) - Q * torch.sum(torch.log(torch.diagonal(L)))
                       - 0.5 * (T - 1) * Q * LOG_2PI)
        if self.gamma_lengthscale:
            log_thetas = [p["log_theta"]]
            if self.gpdm is not None:
                log_thetas.append(p["dyn_log_theta"])
            for lt in log_thetas:
                out = out + _gamma_log_pdf_torch(lt)
        return out

    def _latent_torch(self, p: dict) -> torch.Tensor:
        if self.bc_kernel is not None:
            return torch.as_tensor(self.K_bc, dtype=torch.float64) @ p["W"].T
        return p["X"]

    def objective_torch(self, theta: torch.Tensor) -> torch.Tensor:
        """Negative log posterior, the cost minimized by ``train_map``."""
        p = self.param_layout().unpack(theta)
        X = self._latent_torch(p)
        return -(self._gaussian_term_torch(X, p) - self.volume_term + self._log_prior_torch(X, p))

    def objective(self, theta: Optional[npt.ArrayLike] = None) -> float:
        """log p(V | X, psi) - volume term + log prior at `theta` (default: current)."""
        theta = self.get_params() if theta is None else theta
        with torch.no_grad():
            return -float(self.objective_torch(torch.as_tensor(np.asarray(theta, dtype=float))))

    def objective_grad(self, theta: Optional[npt.ArrayLike] = None) -> npt.NDArray:
        """Gradient of ``objective`` by autograd."""
        theta = self.get_params() if theta is None else theta
        t = torch.tensor(np.asarray(theta, dtype=float), requires_grad=True)
        (-self.objective_torch(t)).backward()
        return t.grad.numpy().copy()

    # ################################################ #
    # cache                                            #
    # ################################################ #

    def make_cache(self) -> dict:
        """Factorizations of K^x and k^f and the solved targets A = K^{-1} V."""
        N, M = self.N, self.M
        Kx = add_jitter(gram(self.kernel.latent, self.X), self.jitter)
        lam_x, Ux = linalg.eigh(Kx)
        if lam_x[0] <= 0:
            raise FactorizationError("@LatentModel: K^x is not positive-definite", _condition_number(Kx))
        try:
            chol_x = linalg.cho_factor(Kx, lower=True)
        except linalg.LinAlgError:
            raise FactorizationError("@LatentModel: Cholesky of K^x failed", _condition_number(Kx))
        kf = self.kernel.task.matrix
        lam_f, Uf = linalg.eigh(kf)
        cache = dict(Kx=Kx, lam_x=lam_x, Ux=Ux, chol_x=chol_x, kf=kf, lam_f=lam_f, Uf=Uf)
        if self.kernel.shared_noise:
            S = lam_x[:, None] * lam_f[None, :] + float(self.kernel.noise)
            cache["S"] = S
            cache["A"] = Ux @ ((Ux.T @ self.V @ Uf) / S) @ Uf.T
        else:
            if N * M > self.dense_max:
                raise MemoryGuardError(f"@LatentModel: dense algebra with N*M={N * M} > {self.dense_max}")
            K = np.kron(kf, Kx) + np.diag(self.kernel.noise_vector(N))
            try:
                chol_K = linalg.cho_factor(K, lower=True)
            except linalg.LinAlgError:
                raise FactorizationError("@LatentModel: Cholesky of K failed", _condition_number(K))
            cache["chol_K"] = chol_K
            cache["A"] = linalg.cho_solve(chol_K, self.V.T.reshape(-1)).reshape(M, N).T
        self._cache = cache
        return cache

    def delete_cache(self) -> None:
        self._cache = None

    @property
    def cache(self) -> dict:
        if self._cache is None:
            self.make_cache()
        return self._cache

    # ################################################ #
    # prediction                                       #
    # ################################################ #

    def predict_mean(self, Xs: npt.ArrayLike) -> npt.NDArray:
        """Posterior mean tangent coefficients (shifted by tangent_mean) at rows of Xs."""
        Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
        ks = self.kernel.latent(self.X, Xs)  # (N, P)
        return ks.T @ self.cache["A"] @ self.cache["kf"] + self.tangent_mean

    def predict(self, xs: npt.ArrayLike) -> Posterior:
        xs = np.reshape(np.asarray(xs, dtype=float), (1, -1))
        c = self.cache
        ks = self.kernel.latent(self.X, xs)[:, 0]
        kss = self.kernel.latent.variance
        mean = ks @ c["A"] @ c["kf"] + self.tangent_mean
        if "S" in c:
            a = c["Ux"].T @ ks
            d = c["lam_f"] ** 2 * np.sum(a[:, None] ** 2 / c["S"], axis=0)
            reduction = (c["Uf"] * d) @ c["Uf"].T
        else:
            C = np.kron(c["kf"], ks[None, :])  # (M, NM)
            reduction = C @ linalg.cho_solve(c["chol_K"], C.T)
        cov = c["kf"] * kss - reduction
        return Posterior(mean, 0.5 * (cov + cov.T))

    def predictive_variance(self, xs: npt.ArrayLike) -> float:
        """Trace of the posterior covariance of the tangent coefficients."""
        return float(np.trace(self.predict(xs).covariance))

    def decode_many(self, Xs: npt.ArrayLike) -> npt.NDArray:
        """Ambient coordinates of the decoded points, (P, A)."""
        return exp_coords(self.spec, self.basepoint.coords, self.predict_mean(Xs))

    def decode(self, xs: npt.ArrayLike) -> ManifoldPoint:
        return ManifoldPoint(self.spec, self.decode_many(np.reshape(xs, (1, -1)))[0], check=False)

    # ################################################ #
    # persistence                                      #
    # ################################################ #

    def to_dict(self) -> dict:
        hyper = self.kernel.to_dict()
        return dict(
            spec=str(self.spec),
            Q=self.Q,
            X=self.X.tolist(),
            W=None if self.W is None else self.W.tolist(),
            hyperparameters=dict(
                kernel=hyper,
                gpdm=None if self.gpdm is None else self.gpdm.to_dict(),
                dyn_noise=self.dyn_noise,
                jitter=self.jitter,
            ),
            basepoint=self.basepoint.to_dict(),
            tangent_mean=self.tangent_mean.tolist(),
            bc_kernel=None if self.bc_kernel is None else self.bc_kernel.to_dict(),
            gamma_lengthscale=self.gamma_lengthscale,
            volume_correction=self.volume_correction,
            config=None if self.run_config is None else self.run_config.to_dict(),
            objective_trace=list(map(float, self.objective_trace)),
            trained=self.trained,
            data=self.dataset.to_dict(),
        )

    @classmethod
    def from_dict(cls, d: dict) -> "LatentModel":
        dataset = Dataset.from_dict(d["data"], tol=None)
        if str(dataset.spec) != d["spec"]:
            raise ValueError(f"@LatentModel: data spec {dataset.spec} differs from model spec {d['spec']}")
        hyper = d["hyperparameters"]
        bc_kernel = None if d.get("bc_kernel") is None else RiemannianBCKernel.from_dict(d["bc_kernel"])
        model = cls(
            dataset,
            d["Q"],
            X=d["X"],
            kernel=MultitaskKernel.from_dict(hyper["kernel"]),
            basepoint=d["basepoint"]["coords"],
            gpdm=None if hyper.get("gpdm") is None else SEKernel.from_dict(hyper["gpdm"]),
            dyn_noise=hyper.get("dyn_noise", config["gpdm"]["dyn_noise"]),
            bc_kernel=bc_kernel,
            W=d.get("W"),
            gamma_lengthscale=d.get("gamma_lengthscale", False),
            volume_correction=d.get("volume_correction", True),
            jitter=hyper.get("jitter", config["kernel"]["jitter"]),
            run_config=None if d.get("config") is None else RunConfig(**d["config"]),
        )
        # stored values are authoritative
        model.X = np.asarray(d["X"], dtype=float).reshape(model.N, model.Q)
        model.tangent_mean = np.asarray(d["tangent_mean"], dtype=float)
        model.V = log_coords(model.spec, model.basepoint.coords, dataset.coords) - model.tangent_mean
        model.objective_trace = list(d.get("objective_trace", []))
        model.trained = bool(d.get("trained", False))
        return model

    def save(self, path: str) -> str:
        return write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: str) -> "LatentModel":
        return cls.from_dict(read_json(path))


def _gamma_log_pdf_torch(log_theta: torch.Tensor) -> torch.Tensor:
    """log Gamma(theta; alpha, rate beta)"""
    theta = torch.exp(log_theta)
    return (GAMMA_ALPHA * np.log(GAMMA_BETA) - float(special.gammaln(GAMMA_ALPHA))
            + (GAMMA_ALPHA - 1) * log_theta - GAMMA_BETA * theta)


# ################################################ #
# operations                                       #
# ################################################ #


def init_pca(dataset: Dataset, Q: int, basepoint: Optional[npt.ArrayLike] = None) -> npt.NDArray:
    """PCA of the centered tangent vectors, columns scaled to unit variance."""
    if not dataset.N > Q:
        raise ValueError(f"@init_pca: need N > Q, got N={dataset.N}, Q={Q}")
    spec = dataset.spec
    b = spec.default_basepoint() if basepoint is None else np.asarray(basepoint, dtype=float)
    V = log_coords(spec, b, dataset.coords)
    V = V - np.mean(V, axis=0)
    if Q > V.shape[1]:
        raise ValueError(f"@init_pca: Q={Q} exceeds the tangent dimension {V.shape[1]}")
    pca = PCA(n_components=Q, svd_solver="full")
    X0 = pca.fit_transform(V)
    std = np.std(X0, axis=0)
    if np.any(std <= 1e-12 * max(1.0, np.abs(V).max())):
        raise ValueError("@init_pca: degenerate data, a principal direction has zero variance")
    return X0 / std


def log_marginal_likelihood(model: LatentModel, dataset: Optional[Dataset] = None) -> float:
    """log N(vec V; 0, k^f (x) K^x + noise I) - sum_i cov_log_det(b, v_i).

    The Gaussian term uses the Kronecker eigendecomposition for shared noise and a
    dense Cholesky for per-task noise.
    """
    if dataset is None:
        V, volume = model.V, model.volume_term
    else:
        if dataset.spec != model.spec or dataset.N != model.N:
            raise ValueError("@log_marginal_likelihood: dataset does not match the model")
        raw = log_coords(model.spec, model.basepoint.coords, dataset.coords)
        V = raw - model.tangent_mean
        volume = (float(np.sum(cov_log_det_coords(model.spec, model.basepoint.coords, raw)))
                  if model.volume_correction else 0.0)
    c = model.cache
    N, M = V.shape
    if "S" in c:
        Vt = c["Ux"].T @ V @ c["Uf"]
        gauss = -0.5 * np.sum(Vt**2 / c["S"]) - 0.5 * np.sum(np.log(c["S"])) - 0.5 * N * M * LOG_2PI
    else:
        y = V.T.reshape(-1)
        L = c["chol_K"][0]
        gauss = (-0.5 * y @ linalg.cho_solve(c["chol_K"], y) - np.sum(np.log(np.diag(L)))
                 - 0.5 * N * M * LOG_2PI)
    return float(gauss - volume)


def log_prior(model: LatentModel) -> float:
    """Latent prior (standard normal or GPDM) plus optional Gamma lengthscale priors."""
    with torch.no_grad():
        p = model.param_layout().unpack(torch.as_tensor(model.get_params()))
        return float(model._log_prior_torch(torch.as_tensor(model.X), p))


def apply_back_constraints(W: npt.ArrayLike, bc_kernel, dataset: Optional[Dataset] = None) -> npt.NDArray:
    """x_{i,q} = sum_j w_{q,j} k(y_i, y_j).

    `bc_kernel` is a RiemannianBCKernel (evaluated on `dataset`) or a precomputed
    N x N kernel matrix.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if isinstance(bc_kernel, RiemannianBCKernel):
        assert dataset is not None
        K = bc_kernel(dataset.coords, dataset.coords)
    else:
        K = np.asarray(bc_kernel, dtype=float)
    return K @ W.T


def train_map(dataset: Dataset, run_config: Optional[RunConfig] = None, verbose=False) -> LatentModel:
    """MAP training of latent variables (or back-constraint weights) and hyperparameters.

    Parameters
    ----------
    dataset:
        training data
    run_config:
        settings, default RunConfig()
    verbose: bool or int
        print progress every `verbose` iterations

    Returns
    -------
    a trained LatentModel at the highest log posterior visited; its objective_trace
    holds the log posterior per iteration
    """
    cfg = RunConfig() if run_config is None else run_config
    if not cfg.wrapped:
        dataset = dataset.as_euclidean()
    if dataset.N > config["guards"]["desk_max_points"]:
        warnings.warn(
            f"@train_map: N={dataset.N} above the desk-scale guidance of "
            f"{config['guards']['desk_max_points']} points",
            DeskScaleWarning,
        )
    spec = dataset.spec
    M = spec.intrinsic_dim
    rng = np.random.default_rng(cfg.seed)
    log_noise = np.log(config["kernel"]["noise"])
    kernel = MultitaskKernel(
        SEKernel.from_values(config["kernel"]["lengthscale"], config["kernel"]["variance"]),
        TaskCovariance.init(M, cfg.task_rank, rng=rng),
        np.full(M, log_noise) if cfg.per_task_noise else float(log_noise),
    )
    gpdm = (
        SEKernel.from_values(config["gpdm"]["lengthscale"], config["gpdm"]["variance"])
        if cfg.gpdm else None
    )
    X0 = init_pca(dataset, cfg.Q)
    bc_kernel, W0 = None, None
    if cfg.back_constraints:
        bc_kernel = RiemannianBCKernel(spec, cfg.bc_lengthscale, cfg.bc_variance, cfg.bc_n_max)
        K_bc = bc_kernel(dataset.coords, dataset.coords)
        W0 = linalg.lstsq(K_bc, X0)[0].T
    model = LatentModel(
        dataset,
        cfg.Q,
        X=X0,
        kernel=kernel,
        gpdm=gpdm,
        bc_kernel=bc_kernel,
        W=W0,
        gamma_lengthscale=cfg.gamma_lengthscale,
        volume_correction=cfg.volume_correction,
        run_config=cfg,
    )
    if verbose:
        print(f"@train_map: {model}")

    minimizer = AdamMinimizer(
        model.objective_torch,
        model.get_params(),
        lr=cfg.learning_rate,
        maxiter=cfg.iterations,
        verbose=verbose,
        name="train_map",
    )
    res = minimizer.run()
    # keep the best log posterior seen, not the last Adam iterate
    model.set_params(res["x_best"])
    model.objective_trace = [-c for c in res["msg"]["cost"]] + [-res["fun"]]
    model.trained = True
    model.make_cache()
    if verbose:
        print(f"@train_map: best log posterior {-res['fun_best']:.6f}")
    return model


def predict(model: LatentModel, xs: npt.ArrayLike) -> Posterior:
    """Multitask GP posterior of the tangent coefficients at `xs`."""
    return model.predict(xs)


def decode(model: LatentModel, xs: npt.ArrayLike) -> ManifoldPoint:
    """Exp_b(posterior mean at `xs`)."""
    return model.decode(xs)
