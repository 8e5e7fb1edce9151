"""Hot-loop kernels. The compiled extension is used when it was built and
``SPMEDOE_PURE_PYTHON`` is not set; otherwise the numpy fallback.
``BACKEND`` names the active implementation."""
import os

from . import _fallback

if os.environ.get("SPMEDOE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _fallback

BACKEND = "compiled" if _impl is not _fallback else "python"

propagate = _impl.propagate
propagate_batch = _impl.propagate_batch
propagate_grid = _impl.propagate_grid
markov = _impl.markov
adjoint_batch = _impl.adjoint_batch
