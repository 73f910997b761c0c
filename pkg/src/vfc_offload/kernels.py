"""Backend selection for the inner loops.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy twin in ``_pykernels``. Set ``VFC_OFFLOAD_PURE_PYTHON=1`` to force the
fallback.
"""

from __future__ import annotations

import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)


def _load():
    if os.environ.get("VFC_OFFLOAD_PURE_PYTHON", "") not in ("", "0"):
        return _pykernels
    try:
        from . import _ckernels
    except ImportError as exc:
        log.debug("compiled kernels unavailable (%s); using numpy fallback", exc)
        return _pykernels
    return _ckernels


backend = _load()
BACKEND: str = backend.BACKEND

bellman_sweep = backend.bellman_sweep
value_iteration = backend.value_iteration
simulate_path = backend.simulate_path
backoff_slots = backend.backoff_slots
slot_status_counts = backend.slot_status_counts
sample_successors = backend.sample_successors


def available_backends() -> dict:
    """Every importable backend module, keyed by name."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
