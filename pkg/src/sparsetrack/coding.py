"""Sparse coding of image patches, whitening, quantization and entropy.

Two patch encoders are provided. Plain least squares returns the
minimum-l2-norm solution when the fit is underdetermined. The l1-regularized
variant solves the equivalent nonnegatively-constrained quadratic program
obtained by splitting the coefficients into positive and negative parts,
using projected gradient descent with a fixed 1/L step; it is the default
for feature extraction because it keeps coefficients bounded and
decorrelated even when the rendered dictionary is nearly singular.

Unit convention: region-level feature coefficients are expressed in 8-bit
intensity units (the code of the patch rescaled to 0..255), matching the
quantization pipeline, while pixel intensities stay in [0, 1]. The encoders
themselves are scale-neutral; ``COEFF_UNIT`` applies only at the region
feature level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gabor import GaborDictionary
from .images import Frame, Region, tile_patches

__all__ = [
    "COEFF_UNIT",
    "DEFAULT_FEATURE_LAMBDA",
    "SparseCode",
    "QuantizedCode",
    "L1Result",
    "encode_least_squares",
    "encode_l1",
    "l1_objective",
    "kkt_residual",
    "encode_patch",
    "encode_region",
    "encode_regions",
    "whiten_image",
    "quantize_uniform",
    "dequantize",
    "estimate_entropy",
    "typical_count_exponent",
]

# One coefficient unit corresponds to one 8-bit gray level of patch
# intensity; region codes are reported in these units.
COEFF_UNIT = 255.0

# l1 weight for feature extraction, in unit-intensity terms.
DEFAULT_FEATURE_LAMBDA = 0.1


@dataclass(frozen=True)
class SparseCode:
    """Coefficient vector for one patch plus the dictionary that produced it."""

    coeffs: np.ndarray
    dictionary_id: str | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("sparse code contains non-finite coefficients")


@dataclass(frozen=True)
class QuantizedCode:
    """8-bit quantized coefficients: integer levels in [-128, 127]."""

    levels: np.ndarray
    bin_width: float

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError("bin width must be positive")
        if self.levels.size and (self.levels.min() < -128 or self.levels.max() > 127):
            raise ValueError("levels outside [-128, 127]")


def encode_least_squares(G: np.ndarray, patch: np.ndarray) -> np.ndarray:
    """Least-squares coefficients; minimum-norm when the fit is underdetermined."""
    G = np.asarray(G, dtype=np.float64)
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (G.shape[0],):
        raise ValueError(f"patch length {patch.shape} does not match {G.shape[0]} dictionary rows")
    coeffs, *_ = np.linalg.lstsq(G, patch, rcond=None)
    return coeffs


# ---------------------------------------------------------------------------
# l1-regularized coding as a nonnegative QP over y = (a_plus, a_minus)


@dataclass
class L1Result:
    """Projected-gradient outcome; ``objectives`` traces the full l1 objective."""

    coeffs: np.ndarray
    converged: bool
    objectives: np.ndarray
    n_iter: int
    split: np.ndarray  # stacked (a_plus, a_minus) at the final iterate


def l1_objective(G: np.ndarray, patch: np.ndarray, lam: float, coeffs: np.ndarray) -> float:
    resid = G @ coeffs - patch
    return float(resid @ resid + lam * np.abs(coeffs).sum())


def _qp_grad(G, GtI, lam, y):
    """Gradient of 0.5*y'Py + q'y with the block structure applied implicitly."""
    m = GtI.shape[0]
    diff = y[:m] - y[m:]
    core = 2.0 * (G.T @ (G @ diff))
    grad = np.empty_like(y)
    grad[:m] = core + lam - 2.0 * GtI
    grad[m:] = -core + lam + 2.0 * GtI
    return grad


def _lipschitz_bound(G: np.ndarray, iters: int = 50) -> float:
    """Power-iteration estimate of the largest QP Hessian eigenvalue.

    The Hessian spectrum is {0} union 4*eig(G'G); the 5% margin covers the
    estimate converging from below so the 1/L step stays a descent step.
    """
    rng = np.random.default_rng(0)
    v = rng.standard_normal(G.shape[1])
    v /= np.linalg.norm(v)
    lam = 1.0
    for _ in range(iters):
        w = G.T @ (G @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            return 1.0
        v = w / lam
    return 4.0 * lam * 1.05


def encode_l1(
    G: np.ndarray,
    patch: np.ndarray,
    lambda_reg: float,
    max_iter: int = 20000,
    tol: float = 1e-12,
) -> L1Result:
    """Minimize |G a - patch|^2 + lambda*|a|_1 by projected gradient.

    The coefficients are split as a = a_plus - a_minus with both parts
    nonnegative; each step projects onto the nonnegative orthant. Stops when
    the objective decrease falls below ``tol``; if the iteration budget runs
    out first the best iterate is returned flagged as not converged.
    """
    if lambda_reg < 0:
        raise ValueError("lambda_reg must be nonnegative")
    G = np.asarray(G, dtype=np.float64)
    patch = np.asarray(patch, dtype=np.float64)
    batch = _encode_l1_batch(G, patch[:, None], lambda_reg, max_iter, tol)
    return L1Result(
        coeffs=batch.coeffs[:, 0],
        converged=batch.converged,
        objectives=batch.objectives[:, 0],
        n_iter=batch.n_iter,
        split=batch.split[:, 0],
    )


def _encode_l1_batch(G, patches, lam, max_iter, tol) -> L1Result:
    """Vectorized projected gradient over several right-hand sides at once.

    All columns share the step size and stop together once every column's
    objective decrease falls below tol (columns are independent problems, so
    the shared schedule only costs extra identical iterations).
    """
    m = G.shape[1]
    GtI = G.T @ patches  # (m, n)
    step = 1.0 / _lipschitz_bound(G)
    y = np.zeros((2 * m, patches.shape[1]))
    const = np.sum(patches * patches, axis=0)
    objs = [_qp_objective(G, GtI, lam, y) + const]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        grad = _qp_grad(G, GtI, lam, y)
        y = np.maximum(y - step * grad, 0.0)
        objs.append(_qp_objective(G, GtI, lam, y) + const)
        if np.all(objs[-2] - objs[-1] < tol):
            converged = True
            break
    return L1Result(
        coeffs=y[:m] - y[m:],
        converged=converged,
        objectives=np.array(objs),
        n_iter=it,
        split=y,
    )


def _qp_objective(G, GtI, lam, y):
    m = GtI.shape[0]
    diff = y[:m] - y[m:]
    Gd = G @ diff
    quad = np.sum(Gd * Gd, axis=0)
    lin = lam * y.sum(axis=0) - 2.0 * np.sum(GtI * diff, axis=0)
    return quad + lin


def kkt_residual(G: np.ndarray, patch: np.ndarray, lam: float, split: np.ndarray) -> float:
    """Max |min(y, grad)| over the split variables; ~0 at a QP optimum."""
    GtI = G.T @ np.asarray(patch, dtype=np.float64)
    grad = _qp_grad(G, GtI, lam, split)
    return float(np.abs(np.minimum(split, grad)).max())


# ---------------------------------------------------------------------------
# Patch and region encoding


def encode_patch(dictionary: GaborDictionary, patch: np.ndarray) -> SparseCode:
    coeffs = dictionary.pinv() @ np.asarray(patch, dtype=np.float64)
    return SparseCode(coeffs, dictionary.dictionary_id)


def _encode_patch_rows(dictionary, patches, method, lambda_reg, max_iter, tol):
    """Codes of stacked patch rows, in 8-bit coefficient units."""
    if method == "ls":
        return (patches @ dictionary.pinv().T) * COEFF_UNIT
    if method != "qp":
        raise ValueError(f"unknown encode method {method!r}")
    result = _encode_l1_batch(dictionary.matrix, patches.T, lambda_reg, max_iter, tol)
    return result.coeffs.T * COEFF_UNIT


def encode_regions(
    dictionary: GaborDictionary,
    regions,
    method: str = "qp",
    lambda_reg: float = DEFAULT_FEATURE_LAMBDA,
    max_iter: int = 2000,
    tol: float = 1e-14,
) -> np.ndarray:
    """Feature vectors of several same-sized regions, one row per region.

    Each region is tiled into (a/patch_side)**2 non-overlapping patches in
    row-major tile order; all patches of all regions are encoded in one
    batched solve and the codes concatenated per region. ``method`` selects
    the l1 quadratic program (default) or plain least squares via the cached
    pseudoinverse. Coefficients come back in 8-bit intensity units.
    """
    regions = list(regions)
    if not regions:
        raise ValueError("no regions to encode")
    side = regions[0].size
    patches = np.concatenate([tile_patches(r, dictionary.patch_side) for r in regions])
    codes = _encode_patch_rows(dictionary, patches, method, lambda_reg, max_iter, tol)
    tiles = (side // dictionary.patch_side) ** 2
    return codes.reshape(len(regions), tiles * dictionary.m)


def encode_region(
    dictionary: GaborDictionary,
    region: Region,
    method: str = "qp",
    lambda_reg: float = DEFAULT_FEATURE_LAMBDA,
    max_iter: int = 2000,
    tol: float = 1e-14,
) -> np.ndarray:
    """Concatenated patch codes of one region; see ``encode_regions``."""
    return encode_regions(dictionary, [region], method, lambda_reg, max_iter, tol)[0]


# ---------------------------------------------------------------------------
# Whitening baseline


def whiten_image(frame: Frame, cutoff_frequency: float = 0.4) -> np.ndarray:
    """Filter-based decorrelation: |f| ramp with a smooth low-pass cutoff.

    Applies W(f) = |f| * exp(-(|f|/f0)^4) in the frequency domain with the
    zero-frequency component removed. The output grid has the same shape as
    the input but is not intensity-bounded.
    """
    if cutoff_frequency <= 0:
        raise ValueError("cutoff frequency must be positive")
    px = frame.pixels
    fy = np.fft.fftfreq(px.shape[0])[:, None]
    fx = np.fft.fftfreq(px.shape[1])[None, :]
    radius = np.hypot(fy, fx)
    filt = radius * np.exp(-((radius / cutoff_frequency) ** 4))
    return np.fft.ifft2(np.fft.fft2(px) * filt).real


# ---------------------------------------------------------------------------
# Quantization and entropy


def quantize_uniform(coeffs, bin_width: float = 1.0) -> QuantizedCode:
    """Round to the nearest bin center and clip to the 256 end bins.

    Bin k covers [(k-0.5)*w, (k+0.5)*w); values outside the representable
    range land in the -128 or 127 end bin.
    """
    values = coeffs.coeffs if isinstance(coeffs, SparseCode) else np.asarray(coeffs)
    levels = np.floor(values / bin_width + 0.5)
    levels = np.clip(levels, -128, 127).astype(np.int64)
    return QuantizedCode(levels, float(bin_width))


def dequantize(code: QuantizedCode) -> np.ndarray:
    return code.levels.astype(np.float64) * code.bin_width


def estimate_entropy(values, bin_count: int = 256) -> float:
    """Plug-in entropy (bits/symbol) of the empirical histogram of integers."""
    values = np.asarray(values).reshape(-1)
    if values.size == 0:
        raise ValueError("cannot estimate entropy of an empty sample")
    _, counts = np.unique(values, return_counts=True)
    if counts.size > bin_count:
        raise ValueError(f"{counts.size} distinct symbols exceed {bin_count} bins")
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


def typical_count_exponent(entropy_bits: float, n_elements: int) -> float:
    """log2 of the typical-set size for n i.i.d. symbols: n * H."""
    if entropy_bits < 0:
        raise ValueError("entropy must be nonnegative")
    return float(n_elements) * float(entropy_bits)
