"""Scale-invariant 2D Gabor dictionaries.

The three spatial parameters (envelope widths and wavelength) are strongly
correlated and heavy tailed, so they are drawn through a Gaussian copula
with Pareto marginals: one standard normal z is shared by all three, mapped
through the normal CDF and then each Pareto inverse CDF. Orientation, phase
and center are uniform on their natural ranges. Rendering follows the usual
rotated-envelope form with the carrier along the rotated second axis.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GaborParams",
    "CopulaModel",
    "GaborDictionary",
    "DEFAULT_MODEL",
    "pareto_icdf",
    "normal_cdf",
    "sample_spatial_params",
    "sample_gabor",
    "render_gabor",
    "build_dictionary",
    "save_dictionary",
    "load_dictionary",
]

# Survival probabilities below this would push the Pareto quantile to inf.
_MIN_TAIL = 1e-300


def pareto_icdf(x: float, alpha: float, beta: float) -> float:
    """Pareto quantile beta / (1 - x)**(1/alpha); strictly increasing in x."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    if not 0.0 <= x < 1.0:
        raise ValueError(f"probability {x} outside [0, 1): quantile undefined")
    return beta / (1.0 - x) ** (1.0 / alpha)


def normal_cdf(x: float) -> float:
    """Standard normal CDF via the error function."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _pareto_from_normal(z: float, alpha: float, beta: float) -> float:
    # Uses the survival form beta / sf(z)**(1/alpha), which equals
    # pareto_icdf(normal_cdf(z)) but stays accurate for large z.
    sf = max(0.5 * math.erfc(z / math.sqrt(2.0)), _MIN_TAIL)
    return beta / sf ** (1.0 / alpha)


@dataclass(frozen=True)
class CopulaModel:
    """Copula loading rho plus per-marginal Pareto shapes and scales.

    The defaults put envelope widths on Pareto(2, 1.6) and the wavelength
    on Pareto(2, 2), a heavy-tailed, scale-free mix that covers 10-pixel
    patches well; all three are coupled through one normal draw.
    """

    rho: float = 0.9
    alpha: tuple[float, float, float] = (2.0, 2.0, 2.0)
    beta: tuple[float, float, float] = (1.6, 1.6, 2.0)

    def __post_init__(self):
        if len(self.alpha) != 3 or len(self.beta) != 3:
            raise ValueError("alpha and beta must each have three entries")
        if any(a <= 0 for a in self.alpha) or any(b <= 0 for b in self.beta):
            raise ValueError("Pareto shapes and scales must be positive")


DEFAULT_MODEL = CopulaModel()


@dataclass(frozen=True)
class GaborParams:
    """One atom's seven parameters (angles in radians, lengths in pixels)."""

    phi: float
    varphi: float
    sigma_x: float
    sigma_y: float
    lambda_w: float
    x0: float
    y0: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.sigma_x <= 0 or self.sigma_y <= 0 or self.lambda_w <= 0:
            raise ValueError("envelope widths and wavelength must be positive")


def sample_spatial_params(model: CopulaModel, rng: np.random.Generator):
    """Draw (sigma_x, sigma_y, lambda_w) from one shared normal sample.

    The latent triple is (z, z, rho*z); each coordinate is pushed through
    the normal CDF and its own Pareto quantile, so each marginal is exactly
    Pareto(alpha_i, beta_i) and sigma_x, sigma_y are comonotone.
    """
    z = float(rng.standard_normal())
    latents = (z, z, model.rho * z)
    return tuple(
        _pareto_from_normal(latents[i], model.alpha[i], model.beta[i]) for i in range(3)
    )


def sample_gabor(model: CopulaModel, patch_side: int, rng: np.random.Generator) -> GaborParams:
    """Sample one atom: copula spatial triple plus uniform angle/phase/center."""
    if patch_side < 1:
        raise ValueError("patch_side must be at least 1")
    sigma_x, sigma_y, lambda_w = sample_spatial_params(model, rng)
    phi = float(rng.uniform(0.0, math.pi))
    varphi = float(rng.uniform(0.0, 2.0 * math.pi))
    x0 = float(rng.uniform(0.0, patch_side))
    y0 = float(rng.uniform(0.0, patch_side))
    return GaborParams(phi, varphi, sigma_x, sigma_y, lambda_w, x0, y0, 1.0)


def render_gabor(params: GaborParams, patch_side: int) -> np.ndarray:
    """Evaluate the atom on the patch grid, flattened row-major.

    Pixel (i, j) has i along x (columns) and j along y (rows); the offset
    (i - x0, j - y0) is rotated by phi and the cosine carrier runs along the
    rotated j axis with wavenumber 2*pi/lambda.
    """
    coords = np.arange(patch_side, dtype=np.float64)
    ii = coords[None, :] - params.x0  # varies along columns
    jj = coords[:, None] - params.y0  # varies along rows
    c, s = math.cos(params.phi), math.sin(params.phi)
    i_rot = c * ii - s * jj
    j_rot = s * ii + c * jj
    envelope = np.exp(
        -0.5 * (i_rot**2 / params.sigma_x**2 + j_rot**2 / params.sigma_y**2)
    )
    carrier = np.cos(2.0 * math.pi / params.lambda_w * j_rot + params.varphi)
    return (params.amplitude * envelope * carrier).reshape(-1)


@dataclass
class GaborDictionary:
    """Rendered atom matrix (one column per atom) plus its parameter samples."""

    patch_side: int
    matrix: np.ndarray
    params: list[GaborParams]
    seed: int | None = None
    model: CopulaModel = DEFAULT_MODEL
    normalized: bool = False
    _pinv: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        d = self.patch_side * self.patch_side
        if self.matrix.shape[0] != d:
            raise ValueError(f"matrix has {self.matrix.shape[0]} rows, expected {d}")
        if self.matrix.shape[1] != len(self.params):
            raise ValueError("one parameter set required per atom column")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("dictionary contains non-finite values")

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def m(self) -> int:
        return self.matrix.shape[1]

    @property
    def dictionary_id(self) -> str:
        tag = "n" if self.normalized else "r"
        return f"gabor-d{self.d}-m{self.m}-s{self.seed}-{tag}"

    def pinv(self) -> np.ndarray:
        """Moore-Penrose pseudoinverse, cached after the first call."""
        if self._pinv is None:
            self._pinv = np.linalg.pinv(self.matrix)
        return self._pinv


def build_dictionary(
    model: CopulaModel,
    patch_side: int,
    m: int,
    seed: int | np.random.Generator,
    normalize: bool = False,
) -> GaborDictionary:
    """Sample and render m atoms into a (patch_side**2, m) matrix.

    With ``normalize`` every column is scaled to unit l2 norm, which makes
    downstream singular-value cutoffs insensitive to the raw atom scale.
    """
    if m < 1:
        raise ValueError("atom count must be at least 1")
    if isinstance(seed, np.random.Generator):
        rng, seed_val = seed, None
    else:
        rng, seed_val = np.random.default_rng(seed), int(seed)
    params = [sample_gabor(model, patch_side, rng) for _ in range(m)]
    matrix = np.column_stack([render_gabor(p, patch_side) for p in params])
    if normalize:
        norms = np.linalg.norm(matrix, axis=0)
        norms[norms == 0] = 1.0
        matrix = matrix / norms
    return GaborDictionary(patch_side, matrix, params, seed_val, model, normalize)


# ---------------------------------------------------------------------------
# Serialization: short ascii header, then float64 atom matrix and parameter
# rows in little-endian binary.

_MAGIC = b"SPARSETRACK-DICT-1"
_PARAM_FIELDS = ("phi", "varphi", "sigma_x", "sigma_y", "lambda_w", "x0", "y0", "amplitude")


def save_dictionary(dic: GaborDictionary, path) -> None:
    header = io.StringIO()
    header.write(_MAGIC.decode("ascii") + "\n")
    header.write(f"patch_side={dic.patch_side}\n")
    header.write(f"d={dic.d}\n")
    header.write(f"m={dic.m}\n")
    header.write(f"seed={'' if dic.seed is None else dic.seed}\n")
    header.write(f"rho={dic.model.rho!r}\n")
    header.write("alpha=" + ",".join(repr(a) for a in dic.model.alpha) + "\n")
    header.write("beta=" + ",".join(repr(b) for b in dic.model.beta) + "\n")
    header.write(f"normalized={int(dic.normalized)}\n")
    header.write("data\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        fh.write(np.ascontiguousarray(dic.matrix, dtype="<f8").tobytes())
        rows = np.array(
            [[getattr(p, f) for f in _PARAM_FIELDS] for p in dic.params], dtype="<f8"
        )
        fh.write(rows.tobytes())


def load_dictionary(path) -> GaborDictionary:
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"data\n")
    if not blob.startswith(_MAGIC) or end < 0:
        raise ValueError(f"{path}: not a dictionary file")
    fields = {}
    for line in blob[len(_MAGIC) + 1 : end].decode("ascii").splitlines():
        key, _, val = line.partition("=")
        fields[key] = val
    patch_side = int(fields["patch_side"])
    d, m = int(fields["d"]), int(fields["m"])
    seed = int(fields["seed"]) if fields["seed"] else None
    model = CopulaModel(
        rho=float(fields["rho"]),
        alpha=tuple(float(v) for v in fields["alpha"].split(",")),
        beta=tuple(float(v) for v in fields["beta"].split(",")),
    )
    body = blob[end + len(b"data\n") :]
    matrix = np.frombuffer(body, dtype="<f8", count=d * m).reshape(d, m).copy()
    rows = np.frombuffer(body, dtype="<f8", offset=8 * d * m, count=m * len(_PARAM_FIELDS))
    params = [GaborParams(*row) for row in rows.reshape(m, len(_PARAM_FIELDS))]
    return GaborDictionary(
        patch_side, matrix, params, seed, model, bool(int(fields["normalized"]))
    )
