"""Timing comparison of the pure-Python and compiled chain backends."""

from __future__ import annotations

import time

from . import backend
from .sampler import run_chain


def time_backend(model, which, n_steps, thin=10, seed=0, repeat=1):
    best = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        run_chain(model, n_steps, thin=thin, seed=seed, backend=which)
        dt = time.perf_counter() - t0
        best = dt if best is None else min(best, dt)
    return {"seconds": best, "microseconds_per_step": 1e6 * best / n_steps}


def compare_backends(model, n_steps=20000, thin=10, seed=0):
    """Time both backends on the same run; compiled only if available."""
    out = {"python": time_backend(model, "python", n_steps, thin, seed)}
    if backend.compiled_available() and backend.model_supported(model):
        out["compiled"] = time_backend(model, "compiled", n_steps, thin, seed)
    return out
