"""Backend selection: compiled kernels when available, pure Python otherwise.

The compiled extension covers the built-in structured models; systems of
arbitrary Python callables always run on the Python backend.  Set
STRATSAMPLE_BACKEND=python|compiled to override auto-selection globally.
"""

from __future__ import annotations

import os

try:
    from . import _core

    HAVE_COMPILED = True
except ImportError:  # extension not built
    _core = None
    HAVE_COMPILED = False


def compiled_available() -> bool:
    return HAVE_COMPILED


def model_supported(model) -> bool:
    """Can this model run on the compiled backend?"""
    if not HAVE_COMPILED or model.kernel is None:
        return False
    from . import _kernelspec

    return _kernelspec.supported(model)


def resolve(model, backend: str = "auto") -> str:
    env = os.environ.get("STRATSAMPLE_BACKEND")
    if backend == "auto" and env in ("python", "compiled"):
        backend = env
    if backend == "python":
        return "python"
    if backend == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled backend requested but the extension "
                               "is not built (pip install -e . rebuilds it)")
        if not model_supported(model):
            raise RuntimeError(f"model {model.name!r} is not expressible in "
                               "the compiled kernels")
        return "compiled"
    if backend != "auto":
        raise ValueError(f"unknown backend {backend!r}")
    return "compiled" if model_supported(model) else "python"
