# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loop for the incremental gradient sweep.

One epoch visits the sample rows in order, applying the rank-one update
r <- r - eta * (v.r - target) * v restricted to the index range [lo, hi).
The order dependence is the point: updates within an epoch see the weights
left by earlier samples, so the sweep cannot be vectorized across rows.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def sgd_epoch(
    double[:, ::1] features,
    double[::1] targets,
    double[::1] weights,
    double eta,
    Py_ssize_t lo,
    Py_ssize_t hi,
):
    """Run one in-order epoch, updating ``weights`` in place within [lo, hi)."""
    cdef Py_ssize_t n = features.shape[0]
    cdef Py_ssize_t s, i
    cdef double pred, scale
    if hi > features.shape[1] or lo < 0 or hi < lo:
        raise ValueError("support range out of bounds")
    if targets.shape[0] != n or weights.shape[0] != features.shape[1]:
        raise ValueError("shape mismatch between features, targets and weights")
    with nogil:
        for s in range(n):
            pred = 0.0
            for i in range(lo, hi):
                pred += features[s, i] * weights[i]
            scale = eta * (pred - targets[s])
            for i in range(lo, hi):
                weights[i] -= scale * features[s, i]
