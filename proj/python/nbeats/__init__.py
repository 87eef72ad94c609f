"""N-BEATS forecasting models, training, metrics and ensembles."""

from ._nbeats import *  # noqa: F401,F403
from ._nbeats import Loss, Model, ModelConfig, SeriesSet, Topology  # noqa: F401

__all__ = [name for name in dir() if not name.startswith("_")]
