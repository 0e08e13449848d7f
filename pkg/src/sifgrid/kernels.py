"""Selection of the Gibbs kernel implementation at import time.

The compiled core (``_sampler_cy``) is preferred when it was built; the
numpy implementation (``_sampler_py``) is a drop-in replacement consuming
the same random streams.  Set ``SIFGRID_KERNEL=python`` or
``SIFGRID_KERNEL=compiled`` to force a choice (the latter raises if the
extension is missing).
"""

import os

from . import _sampler_py

BETA_NORMAL = _sampler_py.BETA_NORMAL
BETA_UNIFORM = _sampler_py.BETA_UNIFORM

try:
    from . import _sampler_cy
except ImportError:
    _sampler_cy = None

_FORCED = os.environ.get("SIFGRID_KERNEL", "").strip().lower()
if _FORCED == "python":
    _active = _sampler_py
elif _FORCED == "compiled":
    if _sampler_cy is None:
        raise ImportError(
            "SIFGRID_KERNEL=compiled but the compiled sampler core is not built")
    _active = _sampler_cy
elif _FORCED:
    raise ImportError(f"unknown SIFGRID_KERNEL value: {_FORCED!r}")
else:
    _active = _sampler_cy if _sampler_cy is not None else _sampler_py


def active():
    """The kernel module in use."""
    return _active


def available() -> dict:
    """Name -> module map of the kernels importable in this environment."""
    out = {"python": _sampler_py}
    if _sampler_cy is not None:
        out["compiled"] = _sampler_cy
    return out


def resolve(name=None):
    """Look up a kernel by name; ``None`` returns the active one."""
    if name is None:
        return _active
    try:
        return available()[name]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; "
                         f"available: {sorted(available())}") from None


def using_compiled() -> bool:
    return bool(getattr(_active, "COMPILED", False))
