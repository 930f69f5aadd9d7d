"""Kernel dispatch: compiled extension when built, numpy otherwise.

Set ``STARRIS_PURE_PYTHON=1`` to force the numpy path. The compiled loops
win while call overhead dominates; past ``COMPILED_MAX_WORK`` multiply-adds
numpy's BLAS products are faster, so large calls go to numpy either way.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
COMPILED_MAX_WORK = 16384

if os.environ.get("STARRIS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def _pick(work):
    return _impl if work <= COMPILED_MAX_WORK else _kernels_py


def logdet_derivs(xinv, coef):
    coef = np.ascontiguousarray(coef, dtype=float)
    na, d = coef.shape[0], coef.shape[1]
    return _pick(na * na * d * d).logdet_derivs(np.ascontiguousarray(xinv, dtype=float), coef)


def logdet_derivs_batch(xinv, coef):
    coef = np.ascontiguousarray(coef, dtype=float)
    ns, na, d = coef.shape[:3]
    return _pick(ns * na * na * d * d).logdet_derivs_batch(np.ascontiguousarray(xinv, dtype=float), coef)


def quad_gram(coef, q, p):
    coef = np.ascontiguousarray(coef, dtype=float)
    na, d, n = coef.shape
    return _pick(na * na * d * n).quad_gram(
        coef, np.ascontiguousarray(q, dtype=float), np.ascontiguousarray(p, dtype=float)
    )
