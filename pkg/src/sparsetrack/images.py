"""Grayscale image sequences: PGM ingestion, synthetic generation, regions.

All intensities are double precision in [0, 1]. Pixel grids are numpy arrays
indexed ``pixels[y, x]`` (row-major); a location is an integer ``(x, y)``
pair and a region's origin is its top-left corner. Every function here is
pure given its inputs; randomness always comes from an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Frame",
    "ImageSequence",
    "Region",
    "PgmParseError",
    "load_pgm",
    "write_pgm",
    "load_pgm_sequence",
    "write_targets",
    "generate_synthetic_sequence",
    "extract_region",
    "tile_patches",
    "assemble_patches",
]


class PgmParseError(ValueError):
    """Raised when a PGM file cannot be parsed; message names the byte offset."""


@dataclass(frozen=True)
class Frame:
    """One grayscale image with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"frame must be a 2-D grid, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("frame contains non-finite intensities")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("frame intensities must lie in [0, 1]")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class ImageSequence:
    """Ordered frames plus one known target location per frame.

    Targets are (x, y) integer pairs inside the frame bounds.
    """

    frames: list[Frame]
    targets: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.frames:
            raise ValueError("empty sequence")
        w, h = self.frames[0].width, self.frames[0].height
        for i, fr in enumerate(self.frames):
            if fr.width != w or fr.height != h:
                raise ValueError(f"frame {i + 1} has size {fr.width}x{fr.height}, expected {w}x{h}")
        if len(self.targets) != len(self.frames):
            raise ValueError(
                f"{len(self.targets)} targets for {len(self.frames)} frames"
            )
        for k, (x, y) in enumerate(self.targets, start=1):
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"target {k} at ({x}, {y}) outside {w}x{h} frame")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height


@dataclass(frozen=True)
class Region:
    """A square a-by-a window of one frame, flattened row-major."""

    origin: tuple[int, int]
    size: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.size * self.size,):
            raise ValueError("region data length must equal size squared")

    def grid(self) -> np.ndarray:
        return self.data.reshape(self.size, self.size)


# ---------------------------------------------------------------------------
# PGM (binary P5) input and output


def _next_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    """Read a whitespace-delimited header token, skipping '#' comments."""
    n = len(buf)
    while pos < n:
        c = buf[pos : pos + 1]
        if c == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise PgmParseError(f"unexpected end of header at byte {pos}")
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def parse_pgm(buf: bytes) -> Frame:
    """Parse a binary (P5) 8-bit PGM buffer into a Frame."""
    if buf[:2] != b"P5":
        raise PgmParseError("not a binary PGM: bad magic at byte 0")
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        tok, pos = _next_token(buf, pos)
        try:
            val = int(tok)
        except ValueError:
            raise PgmParseError(f"bad {name} token {tok!r} at byte {pos - len(tok)}") from None
        if val <= 0:
            raise PgmParseError(f"nonpositive {name} at byte {pos - len(tok)}")
        fields.append(val)
    width, height, maxval = fields
    if maxval > 255:
        raise PgmParseError(f"unsupported maxval {maxval} (8-bit only) at byte {pos - len(str(maxval))}")
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise PgmParseError(f"missing raster separator at byte {pos}")
    pos += 1
    need = width * height
    raster = buf[pos : pos + need]
    if len(raster) < need:
        raise PgmParseError(f"raster truncated at byte {pos + len(raster)}")
    px = np.frombuffer(raster, dtype=np.uint8, count=need).astype(np.float64)
    px = (px / maxval).reshape(height, width)
    return Frame(np.clip(px, 0.0, 1.0))


def load_pgm(path) -> Frame:
    with open(path, "rb") as fh:
        return parse_pgm(fh.read())


def write_pgm(frame: Frame, path, maxval: int = 255) -> None:
    """Write a Frame as binary P5, rounding intensities to maxval levels."""
    if not 1 <= maxval <= 255:
        raise ValueError("maxval must be in [1, 255]")
    levels = np.rint(frame.pixels * maxval).astype(np.uint8)
    header = f"P5\n{frame.width} {frame.height}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(levels.tobytes())


def _parse_targets(text: str, n_frames: int, width: int, height: int) -> list[tuple[int, int]]:
    """Parse 'k x y' lines (1-based k) into an ordered target list."""
    found: dict[int, tuple[int, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"targets line {lineno}: expected 'k x y', got {line!r}")
        k, x, y = (int(p) for p in parts)
        if not 1 <= k <= n_frames:
            raise ValueError(f"targets line {lineno}: frame index {k} out of 1..{n_frames}")
        if not (0 <= x < width and 0 <= y < height):
            raise ValueError(f"target {k} at ({x}, {y}) outside {width}x{height} frame")
        found[k] = (x, y)
    missing = [k for k in range(1, n_frames + 1) if k not in found]
    if missing:
        raise ValueError(f"targets file missing frames {missing}")
    return [found[k] for k in range(1, n_frames + 1)]


def load_pgm_sequence(paths, targets_file) -> ImageSequence:
    """Load an ordered list of P5 files plus their 'k x y' targets file."""
    paths = list(paths)
    if not paths:
        raise ValueError("empty sequence")
    frames = [load_pgm(p) for p in paths]
    with open(targets_file, "r", encoding="ascii") as fh:
        text = fh.read()
    targets = _parse_targets(text, len(frames), frames[0].width, frames[0].height)
    return ImageSequence(frames, targets)


def write_targets(targets, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for k, (x, y) in enumerate(targets, start=1):
            fh.write(f"{k} {x} {y}\n")


# ---------------------------------------------------------------------------
# Synthetic sequences

_DRIFT = (2, 1)  # pixels/frame the underlying field is advected by


def _power_law_field(rng: np.random.Generator, height: int, width: int, exponent: float) -> np.ndarray:
    """Gaussian random field with power spectrum |f|^(-exponent), zero mean."""
    noise = rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    radius = np.hypot(fy, fx)
    with np.errstate(divide="ignore"):
        shaping = np.where(radius > 0, radius ** (-exponent / 2.0), 0.0)
    spectrum = np.fft.fft2(noise) * shaping
    return np.fft.ifft2(spectrum).real


def generate_synthetic_sequence(
    width: int,
    height: int,
    n_frames: int,
    seed: int,
    spectral_exponent: float = 2.0,
    target_speed: int = 8,
) -> ImageSequence:
    """Seeded naturalistic sequence: advected 1/f field plus random-walk target.

    One large power-law field is generated and each frame is a window into it,
    shifted by a fixed drift, so consecutive frames are strongly correlated.
    The field is rescaled to [0, 1] once, globally, which preserves all pixel
    correlations. The target performs a random walk whose per-step component
    displacement is at most ``target_speed`` pixels, clipped to the frame.
    """
    if width < 1 or height < 1 or n_frames < 1:
        raise ValueError("width, height and frame count must be positive")
    if target_speed < 0:
        raise ValueError("target_speed must be nonnegative")
    rng = np.random.default_rng(seed)
    dx, dy = _DRIFT
    big_h = height + dy * (n_frames - 1)
    big_w = width + dx * (n_frames - 1)
    field = _power_law_field(rng, big_h, big_w, spectral_exponent)
    lo, hi = field.min(), field.max()
    if hi > lo:
        field = (field - lo) / (hi - lo)
    else:
        field = np.zeros_like(field)

    frames = []
    for k in range(n_frames):
        window = field[k * dy : k * dy + height, k * dx : k * dx + width]
        frames.append(Frame(window.copy()))

    x = int(rng.integers(0, width))
    y = int(rng.integers(0, height))
    targets = [(x, y)]
    for _ in range(n_frames - 1):
        x = int(np.clip(x + rng.integers(-target_speed, target_speed + 1), 0, width - 1))
        y = int(np.clip(y + rng.integers(-target_speed, target_speed + 1), 0, height - 1))
        targets.append((x, y))
    return ImageSequence(frames, targets)


# ---------------------------------------------------------------------------
# Regions and patch tiling


def extract_region(seq: ImageSequence, k: int, origin: tuple[int, int], side: int) -> Region:
    """Slice the a-by-a region with top-left corner ``origin`` from frame k (1-based)."""
    if not 1 <= k <= len(seq):
        raise ValueError(f"stage {k} out of 1..{len(seq)}")
    x, y = origin
    fr = seq.frames[k - 1]
    if side < 1 or x < 0 or y < 0 or x + side > fr.width or y + side > fr.height:
        raise ValueError(
            f"region of side {side} at ({x}, {y}) does not fit frame {k} ({fr.width}x{fr.height})"
        )
    data = fr.pixels[y : y + side, x : x + side].reshape(-1).copy()
    return Region((x, y), side, data)


def tile_patches(region: Region, patch_side: int) -> np.ndarray:
    """Split a region into non-overlapping patches, row-major tile order.

    Returns an array of shape (tiles, patch_side**2) where each row is one
    flattened patch.
    """
    a = region.size
    if a % patch_side != 0:
        raise ValueError(f"region side {a} not divisible by patch side {patch_side}")
    t = a // patch_side
    grid = region.grid()
    patches = (
        grid.reshape(t, patch_side, t, patch_side)
        .transpose(0, 2, 1, 3)
        .reshape(t * t, patch_side * patch_side)
    )
    return patches.copy()


def assemble_patches(patches: np.ndarray, side: int, patch_side: int) -> np.ndarray:
    """Inverse of tile_patches: rebuild the side-by-side region grid."""
    t = side // patch_side
    if patches.shape != (t * t, patch_side * patch_side):
        raise ValueError("patch array shape does not match the requested tiling")
    return (
        patches.reshape(t, t, patch_side, patch_side)
        .transpose(0, 2, 1, 3)
        .reshape(side, side)
    )
