import os

from .core import RunConfig, config
from .manifolds import ManifoldSpec, ManifoldPoint, TangentCoords, TangentBasis
from .lvm import LatentModel, train_map
from .pullback import MetricField, KDEMetric

PACKAGE_PATH = os.path.dirname(__file__)
__version__ = config["package"]["version"]
