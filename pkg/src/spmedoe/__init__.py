"""SPMe lithium-ion cell model with Fisher-information experiment design."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

from .config import (CellConfig, ParameterVector, RunConfig, StateVector,  # noqa: E402
                     load_config, load_preset)
from .kernels import BACKEND  # noqa: E402

__all__ = ["CellConfig", "ParameterVector", "RunConfig", "StateVector",
           "load_config", "load_preset", "BACKEND", "__version__"]
