import numpy as np
import pytest
import torch

from wrapgp.exceptions import NonFiniteObjectiveError, StallWarning
from wrapgp.optimize import AdamMinimizer


def test_quadratic():
    target = torch.tensor([1.0, -2.0], dtype=torch.float64)
    res = AdamMinimizer(lambda x: torch.sum((x - target) ** 2), [0.0, 0.0], lr=0.1, maxiter=500).run()
    np.testing.assert_allclose(res["x_best"], [1.0, -2.0], atol=1e-3)
    assert res["fun_best"] <= res["msg"]["cost"][0]
    assert len(res["msg"]) == 500
    assert res["niter"] == 500


def test_numpy_jac():
    def fun(x):
        return float(np.sum(x**2)), 2 * x

    res = AdamMinimizer(fun, [3.0], lr=0.1, maxiter=300, jac=True).run()
    assert abs(res["x_best"][0]) < 1e-2


def test_non_finite():
    with pytest.raises(NonFiniteObjectiveError) as e_:
        AdamMinimizer(lambda x: torch.log(x[0]), [-1.0], maxiter=5).run()
    assert e_.value.iteration == 0


def test_stall_warning():
    with pytest.warns(StallWarning):
        AdamMinimizer(lambda x: torch.sum(0 * x) + 1.0, [0.0], maxiter=30, stall_steps=10).run()
