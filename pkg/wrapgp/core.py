"""
Configuration of wrapgp.

The packaged defaults live in ``config/config.toml``. A run is described by a
``RunConfig``; values are resolved as

    command-line flags > user TOML file > experiment preset > packaged [run]
"""

import dataclasses
import hashlib
import json
import os
from copy import deepcopy
from typing import Optional

import toml

__all__ = ["CONFIG_PATH", "config", "RunConfig", "load_user_config"]

# determine CONFIG path
CONFIG_PATH = os.path.join(os.path.dirname(__file__), "config", "config.toml")
# load config
config = toml.load(CONFIG_PATH)
# names of experiment presets
EXPERIMENT_NAMES = list(config["experiments"].keys())


def load_user_config(path: str) -> dict:
    """Load a user TOML file, raising FileNotFoundError / ValueError."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file {path} does not exist.")
    try:
        return toml.load(path)
    except toml.TomlDecodeError as e_:
        raise ValueError(f"Invalid TOML in {path}: {e_}")


@dataclasses.dataclass
class RunConfig:
    """Settings of one training run.

    Parameters
    ----------
    spec:
        manifold spec string, e.g. "R2xS2", "R2xSPD2", "S3"
    Q:
        latent dimension
    iterations:
        number of Adam steps
    learning_rate:
        Adam learning rate
    seed:
        random seed, fixes initialization of the task factor
    gpdm:
        if True, use the GPDM prior instead of the standard normal prior
    gamma_lengthscale:
        if True, put a Gamma(2, 2) prior on every learned lengthscale
    back_constraints:
        if True, optimize back-constraint weights W instead of X
    bc_lengthscale, bc_variance, bc_n_max:
        back-constraint kernel parameters (shared by all components)
    task_rank:
        rank r of the task factor B, -1 for full rank, 0 for independent outputs
    per_task_noise:
        if True, learn one noise variance per output instead of a shared one
    wrapped:
        if False, the model regresses the ambient coordinates (Euclidean GPLVM)
    volume_correction:
        if False, drop the change-of-volume term from the likelihood
    output_dir:
        directory for artifacts
    """

    spec: str = "R2xS2"
    Q: int = 2
    iterations: int = 1000
    learning_rate: float = 0.025
    seed: int = 0
    gpdm: bool = True
    gamma_lengthscale: bool = False
    back_constraints: bool = False
    bc_lengthscale: float = 0.2
    bc_variance: float = 1.0
    bc_n_max: int = 10
    task_rank: int = -1
    per_task_noise: bool = False
    wrapped: bool = True
    volume_correction: bool = True
    output_dir: str = "output"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Check numeric fields, raise ValueError otherwise."""
        for name in ("Q", "iterations", "learning_rate", "bc_lengthscale",
                     "bc_variance", "bc_n_max"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"@RunConfig: {name} must be positive, got {value}")
        if self.seed < 0:
            raise ValueError(f"@RunConfig: seed must be non-negative, got {self.seed}")
        if self.task_rank < -1:
            raise ValueError(f"@RunConfig: invalid task_rank {self.task_rank}")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, d: Optional[dict] = None, experiment: Optional[str] = None,
                  **overrides) -> "RunConfig":
        """Resolve a RunConfig from packaged defaults, a preset and overrides.

        Parameters
        ----------
        d:
            user settings, e.g. the [run] table of a user TOML file
        experiment:
            name of a preset in ``config["experiments"]``
        overrides:
            highest precedence values (command-line flags); None is ignored
        """
        merged = deepcopy(config["run"])
        if experiment is not None:
            if experiment not in EXPERIMENT_NAMES:
                raise ValueError(f"@RunConfig: unknown experiment '{experiment}'")
            merged.update(config["experiments"][experiment])
        if d is not None:
            merged.update(d.get("run", d))
        merged.update({k: v for k, v in overrides.items() if v is not None})
        unknown = set(merged) - set(cls.field_names())
        if unknown:
            raise ValueError(f"@RunConfig: unknown keys {sorted(unknown)}")
        return cls(**merged)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON of this config, output_dir excluded."""
        d = self.to_dict()
        d.pop("output_dir")
        s = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(s.encode()).hexdigest()
