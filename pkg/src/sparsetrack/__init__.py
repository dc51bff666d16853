"""Sparse Gabor codes and neuro-dynamic programming for target tracking.

Subpackages and modules:

``images``
    PGM ingestion, synthetic 1/f image sequences, region extraction.
``gabor``
    Scale-invariant Gabor dictionary sampling and rendering.
``coding``
    Least-squares and l1 sparse coding, whitening, quantization, entropy.
``tracking``
    Exact finite-horizon dynamic programming and the greedy baseline.
``neurodp``
    Linear cost-to-go approximation trained by incremental value iteration.
``analysis``
    Design-matrix rank, Hessian conditioning, convergence time constants.
``cli``
    Command-line interface and experiment drivers.
"""

__version__ = "0.1.0"
