import warnings
from typing import Callable, Optional

import numpy as np
import numpy.typing as npt
import torch
from astropy import table

from .core import config
from .exceptions import NonFiniteObjectiveError, StallWarning

__all__ = ["AdamMinimizer"]


class AdamMinimizer:
    """Adaptive-moment minimizer on a flat parameter vector.

    The objective is either a torch function of a float64 tensor (gradients by
    autograd), or, with ``jac=True``, a numpy function returning (cost, grad).
    """

    def __init__(self, fun: Callable, x0: npt.ArrayLike, lr: float = 0.025, maxiter: int = 1000,
                 betas: tuple = (0.9, 0.999), jac: bool = False,
                 stall_steps: int = config["guards"]["stall_steps"], verbose=False,
                 name: str = "AdamMinimizer"):
        """
        Parameters
        ----------
        fun:
            objective function
        x0: array like
            initial guess of x
        lr:
            learning rate
        maxiter:
            number of Adam steps
        betas:
            moment decay rates
        jac:
            if True, fun(x) returns (cost, grad) as numpy
        stall_steps:
            warn if the cost has not improved for this many consecutive steps
        verbose: bool or int
            if True or a period, print progress every `verbose` steps
        name:
            tag of the progress messages
        """
        self.fun = fun
        self.x0 = np.asarray(x0, dtype=float)
        self.lr = lr
        self.maxiter = maxiter
        self.betas = betas
        self.jac = jac
        self.stall_steps = stall_steps
        self.verbose = verbose
        self.name = name

    def __call__(self, x: npt.ArrayLike) -> float:
        return self._eval(torch.as_tensor(np.asarray(x, dtype=float)), grad=False)[0]

    def _eval(self, x: torch.Tensor, grad: bool = True) -> tuple[float, Optional[npt.NDArray]]:
        if self.jac:
            cost, g = self.fun(x.detach().numpy().copy())
            return float(cost), (np.asarray(g, dtype=float) if grad else None)
        if not grad:
            with torch.no_grad():
                return float(self.fun(x)), None
        x = x.detach().clone().requires_grad_(True)
        cost = self.fun(x)
        if not torch.isfinite(cost):
            return float(cost), None
        cost.backward()
        return float(cost.detach()), x.grad.numpy().copy()

    def run(self, x0: Optional[npt.ArrayLike] = None, maxiter: Optional[int] = None) -> dict:
        """Run Adam.

        Returns
        -------
        dict(x=final x, x_best=lowest-cost x, fun=final cost, fun_best=lowest cost,
             niter=steps, nfev=evaluations, grad_norm=final gradient norm,
             msg=Table of (iter, cost, grad_norm))
        """
        x0 = self.x0 if x0 is None else np.asarray(x0, dtype=float)
        maxiter = self.maxiter if maxiter is None else maxiter
        period = int(self.verbose) if not isinstance(self.verbose, bool) else (100 if self.verbose else 0)

        x = torch.tensor(x0, dtype=torch.float64, requires_grad=True)
        optimizer = torch.optim.Adam([x], lr=self.lr, betas=self.betas)

        msg = []
        cost_best, x_best = np.inf, x0.copy()
        n_stall, stall_warned = 0, False
        g = np.zeros_like(x0)
        for iiter in range(maxiter):
            cost, g = self._eval(x)
            if not np.isfinite(cost) or g is None or not np.all(np.isfinite(g)):
                raise NonFiniteObjectiveError(f"@{self.name}: non-finite objective", iteration=iiter)
            msg.append(dict(iter=iiter, cost=cost, grad_norm=float(np.linalg.norm(g))))
            if cost < cost_best:
                cost_best, x_best = cost, x.detach().numpy().copy()
                n_stall = 0
            else:
                n_stall += 1
                if n_stall >= self.stall_steps and not stall_warned:
                    warnings.warn(
                        f"@{self.name}: no improvement for {n_stall} consecutive steps at iter {iiter}",
                        StallWarning,
                    )
                    stall_warned = True
            if period and iiter % period == 0:
                print(f"@{self.name}: iter {iiter} cost={cost:.6f} |grad|={np.linalg.norm(g):.3e}")
            optimizer.zero_grad()
            x.grad = torch.as_tensor(g, dtype=torch.float64)
            optimizer.step()

        # cost at the final parameters
        x_final = x.detach().numpy().copy()
        cost, g_final = self._eval(x.detach())
        if not np.isfinite(cost):
            raise NonFiniteObjectiveError(f"@{self.name}: non-finite objective", iteration=maxiter)
        if g_final is not None:
            g = g_final
        if cost < cost_best:
            cost_best, x_best = cost, x_final.copy()
        if period:
            print(f"@{self.name}: done, cost={cost:.6f} best={cost_best:.6f}")
        return dict(
            x=x_final,
            x_best=x_best,
            fun=cost,
            fun_best=cost_best,
            niter=maxiter,
            nfev=maxiter + 1,
            grad_norm=float(np.linalg.norm(g)),
            msg=table.Table(
                dict(
                    iter=np.array([_["iter"] for _ in msg], dtype=int),
                    cost=np.array([_["cost"] for _ in msg], dtype=float),
                    grad_norm=np.array([_["grad_norm"] for _ in msg], dtype=float),
                )
            ),
        )
