"""Backend selection for the event-loop kernels.

The compiled Cython module is preferred; set ``PCHAOS_PURE=1`` to force the
pure-Python loops. Both backends are importable directly for comparison.
"""
import os

from . import _pykernels as pure

try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("PCHAOS_PURE", "") not in ("1", "true", "yes"):
    backend = compiled
    BACKEND = "cython"
else:
    backend = pure
    BACKEND = "python"

kac_events = backend.kac_events
averaging_events = backend.averaging_events
circle_events = backend.circle_events
boltzmann_events = backend.boltzmann_events

__all__ = [
    "BACKEND",
    "backend",
    "compiled",
    "pure",
    "kac_events",
    "averaging_events",
    "circle_events",
    "boltzmann_events",
]
