import numpy as np
import pytest

from wrapgp.artifact import generate_synthetic
from wrapgp.core import RunConfig
from wrapgp.dataset import Dataset
from wrapgp.kernels import MultitaskKernel, SEKernel, TaskCovariance
from wrapgp.lvm import LatentModel, train_map
from wrapgp.manifolds import ManifoldSpec, exp_coords


def sphere_model(N=12, Q=2, seed=0, noise=0.05, **kwargs) -> LatentModel:
    """Untrained S^2 model with random latents and a random task factor."""
    rng = np.random.default_rng(seed)
    spec = ManifoldSpec.sphere(2)
    coords = exp_coords(spec, spec.default_basepoint(), rng.normal(scale=0.5, size=(N, 2)))
    kernel = MultitaskKernel(
        SEKernel.from_values(0.8, 1.3),
        TaskCovariance.init(2, rng=rng, scale=0.5),
        float(np.log(noise)),
    )
    return LatentModel(Dataset(spec, coords), Q, X=rng.normal(size=(N, Q)), kernel=kernel, **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def small_model():
    return sphere_model()


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_synthetic("J_R2xC_S2", n_traj=2, n_points=12, noise=0.01, seed=0)


@pytest.fixture(scope="session")
def trained_model(tiny_dataset):
    cfg = RunConfig(spec="R2xS2", iterations=60, learning_rate=0.025, seed=0)
    return train_map(tiny_dataset, cfg)


@pytest.fixture
def make_model():
    return sphere_model
