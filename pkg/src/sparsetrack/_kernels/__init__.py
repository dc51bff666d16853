"""Incremental-gradient sweep kernels: compiled core with a pure fallback.

The compiled extension is used when it imported successfully and the
environment variable SPARSETRACK_PURE is unset; otherwise the numpy
fallback runs the same in-order sweep. ``BACKEND`` records the choice.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = ["sgd_epoch", "sgd_epoch_pure", "BACKEND", "compiled_available"]


def sgd_epoch_pure(features, targets, weights, eta, lo, hi):
    """In-order incremental sweep; reference implementation of the kernel."""
    n, p = features.shape
    if hi > p or lo < 0 or hi < lo:
        raise ValueError("support range out of bounds")
    if targets.shape[0] != n or weights.shape[0] != p:
        raise ValueError("shape mismatch between features, targets and weights")
    w = weights[lo:hi]
    for s in range(n):
        row = features[s, lo:hi]
        w -= eta * (row @ w - targets[s]) * row


try:
    from ._sgd import sgd_epoch as _compiled_sgd_epoch
except ImportError:  # extension not built; keep the pure path
    _compiled_sgd_epoch = None


def compiled_available() -> bool:
    return _compiled_sgd_epoch is not None


if _compiled_sgd_epoch is not None and not os.environ.get("SPARSETRACK_PURE"):
    BACKEND = "compiled"

    def sgd_epoch(features, targets, weights, eta, lo, hi):
        _compiled_sgd_epoch(
            np.ascontiguousarray(features, dtype=np.float64),
            np.ascontiguousarray(targets, dtype=np.float64),
            weights,
            float(eta),
            int(lo),
            int(hi),
        )

else:
    BACKEND = "pure"
    sgd_epoch = sgd_epoch_pure
