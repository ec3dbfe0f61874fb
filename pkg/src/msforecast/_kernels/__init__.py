"""Hot kernels: compiled extension when built, pure Python otherwise.

Set ``MSFORECAST_PURE_PYTHON=1`` to force the fallback. Both backends
produce bit-identical results.
"""
import importlib
import math
import os

from . import _fallback

STATUS_ARRIVED = _fallback.STATUS_ARRIVED
STATUS_STUCK = _fallback.STATUS_STUCK
STATUS_TIMEOUT = _fallback.STATUS_TIMEOUT

_core = None
if not os.environ.get("MSFORECAST_PURE_PYTHON"):
    try:
        _core = importlib.import_module(f"{__name__}._core")
    except ImportError:
        _core = None

_impl = _core if _core is not None else _fallback
BACKEND = "compiled" if _core is not None else "python"

render_gaussians = _impl.render_gaussians
sf_accel = _impl.sf_accel
sf_step = _impl.sf_step
integrate_path = _impl.integrate_path


def gaussian_table(variance: float, truncate_sigmas: float = 4.0) -> list:
    """Kernel values at integer squared distances up to the truncation radius."""
    cutoff = int(math.floor(truncate_sigmas * truncate_sigmas * variance))
    return [math.exp(-k / (2.0 * variance)) for k in range(cutoff + 1)]


def backends() -> dict:
    """All importable backends keyed by name (for benchmarks and parity tests)."""
    out = {"python": _fallback}
    if _core is not None:
        out["compiled"] = _core
    return out
