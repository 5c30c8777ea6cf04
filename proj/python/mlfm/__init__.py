"""Multilevel factor models with MLR covariance structure.

Thin wrapper over the compiled core: hierarchical partitions, PSD MLR
covariance models, the linear-time structured inverse and expanded Cholesky,
EM fitting, and the synthetic generator.
"""

try:
    from ._mlfm import *  # noqa: F401,F403  (installed wheel layout)
    from . import _mlfm as _core
except ImportError:  # pragma: no cover - development layout via PYTHONPATH
    from _mlfm import *  # noqa: F401,F403
    import _mlfm as _core

__all__ = [name for name in dir(_core) if not name.startswith("_")]
__version__ = "0.1.0"
