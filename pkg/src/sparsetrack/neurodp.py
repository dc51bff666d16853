"""Linear cost-to-go approximation trained by incremental value iteration.

Each stage k has its own weight vector fitted to Bellman targets computed
from the already-fitted stage k+1, sweeping samples in a fixed order with
the rank-one incremental gradient update. Representations are pluggable:
raw pixels, whitened pixels, or concatenated sparse codes. A partition
layout reserves a contiguous block of the feature vector per task so that
sequential multitask training cannot interfere across tasks.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .coding import DEFAULT_FEATURE_LAMBDA, encode_regions, whiten_image
from .gabor import GaborDictionary, load_dictionary
from .images import ImageSequence, Region
from .tracking import TrackingTask, Trajectory, control_set, enumerate_states, step

__all__ = [
    "FEATURE_KINDS",
    "FeatureCode",
    "PartitionLayout",
    "LinearApproximator",
    "TrainConfig",
    "TrainingDivergedError",
    "Featurizer",
    "featurize",
    "feature_length",
    "sgd_update",
    "train_stage",
    "bellman_target",
    "incremental_value_iteration",
    "neuro_rollout",
    "sequential_train",
    "partition_key",
    "save_approximator",
    "load_approximator",
]

FEATURE_KINDS = ("raw_pixels", "whitened", "sparse_complete", "sparse_overcomplete")


@dataclass(frozen=True)
class FeatureCode:
    """A representation choice: pixel-based or sparse with a dictionary.

    ``encode_method`` and ``lambda_reg`` select how sparse features are
    computed; the default l1 route keeps coefficients bounded regardless of
    the dictionary's conditioning.
    """

    kind: str
    dictionary: GaborDictionary | None = None
    whiten_cutoff: float = 0.4
    encode_method: str = "qp"
    lambda_reg: float = DEFAULT_FEATURE_LAMBDA
    qp_iters: int = 2000

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.kind.startswith("sparse") and self.dictionary is None:
            raise ValueError(f"feature kind {self.kind!r} requires a dictionary")


def feature_length(feature: FeatureCode, region_side: int) -> int:
    if feature.kind in ("raw_pixels", "whitened"):
        return region_side * region_side
    dic = feature.dictionary
    if region_side % dic.patch_side != 0:
        raise ValueError(
            f"region side {region_side} not divisible by patch side {dic.patch_side}"
        )
    tiles = region_side // dic.patch_side
    return tiles * tiles * dic.m


@dataclass(frozen=True)
class PartitionLayout:
    """Equal, contiguous, non-overlapping blocks of the feature vector."""

    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("partition count must be at least 1")

    def width(self, p: int) -> int:
        if p % self.count != 0:
            raise ValueError(f"feature length {p} not divisible into {self.count} partitions")
        return p // self.count

    def support(self, p: int, index: int) -> tuple[int, int]:
        if not 0 <= index < self.count:
            raise ValueError(f"partition index {index} out of 0..{self.count - 1}")
        w = self.width(p)
        return index * w, (index + 1) * w


def _mask_partition(vec, layout, partition):
    if partition is None:
        return vec
    if layout is None:
        raise ValueError("partition index given without a layout")
    lo, hi = layout.support(vec.shape[-1], partition)
    vec[..., :lo] = 0.0
    vec[..., hi:] = 0.0
    return vec


def _encode_many(feature: FeatureCode, regions) -> np.ndarray:
    if feature.kind in ("raw_pixels", "whitened"):
        return np.stack([r.data.astype(np.float64) for r in regions])
    return encode_regions(
        feature.dictionary,
        regions,
        method=feature.encode_method,
        lambda_reg=feature.lambda_reg,
        max_iter=feature.qp_iters,
    )


def featurize(
    feature: FeatureCode,
    region: Region,
    layout: PartitionLayout | None = None,
    partition: int | None = None,
) -> np.ndarray:
    """Feature vector of one region, optionally masked to a partition.

    Pixel kinds return the region data unchanged (for the whitened kind the
    region is expected to have been cut from a whitened grid); sparse kinds
    concatenate per-patch codes in 8-bit coefficient units. With a
    partition, the full vector is computed and every entry outside the
    partition's block is zeroed.
    """
    vec = _encode_many(feature, [region])[0]
    return _mask_partition(vec, layout, partition)


class Featurizer:
    """Per-sequence feature extraction with caching.

    Whitened frames are computed once, and each (stage, state) region is
    encoded at most once; ``prefill`` batches the sparse solves for a whole
    stage. Masked variants are derived from the cached full vector, so a
    state's features are identical wherever they are requested.
    """

    def __init__(self, feature: FeatureCode, seq: ImageSequence, region_side: int):
        self.feature = feature
        self.seq = seq
        self.a = region_side
        self.p = feature_length(feature, region_side)
        self._grids = None
        self._cache: dict[tuple[int, tuple[int, int]], np.ndarray] = {}
        if feature.kind == "whitened":
            self._grids = [whiten_image(fr, feature.whiten_cutoff) for fr in seq.frames]

    def region(self, k: int, x: tuple[int, int]) -> Region:
        grid = self._grids[k - 1] if self._grids is not None else self.seq.frames[k - 1].pixels
        cx, cy = x
        a = self.a
        if cx < 0 or cy < 0 or cx + a > grid.shape[1] or cy + a > grid.shape[0]:
            raise ValueError(f"region of side {a} at {x} does not fit frame {k}")
        return Region((cx, cy), a, grid[cy : cy + a, cx : cx + a].reshape(-1).copy())

    def prefill(self, k: int, states) -> None:
        missing = [x for x in states if (k, x) not in self._cache]
        if not missing:
            return
        rows = _encode_many(self.feature, [self.region(k, x) for x in missing])
        for x, row in zip(missing, rows):
            self._cache[(k, x)] = row

    def vector(
        self,
        k: int,
        x: tuple[int, int],
        layout: PartitionLayout | None = None,
        partition: int | None = None,
    ) -> np.ndarray:
        key = (k, x)
        if key not in self._cache:
            self.prefill(k, [x])
        return _mask_partition(self._cache[key].copy(), layout, partition)


@dataclass
class LinearApproximator:
    """Per-stage weight vectors of a linear cost-to-go network."""

    weights: np.ndarray  # (horizon, p)
    feature: FeatureCode
    layout: PartitionLayout | None = None

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a (horizon, p) matrix")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights contain non-finite values")
        if self.layout is not None:
            self.layout.width(self.weights.shape[1])

    @property
    def horizon(self) -> int:
        return self.weights.shape[0]

    @property
    def p(self) -> int:
        return self.weights.shape[1]

    def value(self, k: int, vec: np.ndarray) -> float:
        return float(self.weights[k - 1] @ vec)

    @classmethod
    def zeros(
        cls,
        horizon: int,
        p: int,
        feature: FeatureCode,
        layout: PartitionLayout | None = None,
    ) -> "LinearApproximator":
        return cls(np.zeros((horizon, p)), feature, layout)


@dataclass
class TrainConfig:
    """Incremental-gradient settings.

    ``eta`` of None applies the per-stage rule 0.5 / max_s |v(x^s)|^2, which
    keeps every sweep in the monotone regime. The fit converges when the
    mean squared error over the stage's samples drops below ``tol``.
    """

    eta: float | None = None
    epochs: int = 100_000
    tol: float = 1e-8

    def __post_init__(self):
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.epochs < 1:
            raise ValueError("epoch cap must be at least 1")


class TrainingDivergedError(RuntimeError):
    pass


def sgd_update(weights: np.ndarray, vec: np.ndarray, target: float, eta: float) -> np.ndarray:
    """One incremental gradient step: w - eta * (v.w - target) * v."""
    if weights.shape != vec.shape:
        raise ValueError("weights and feature vector lengths differ")
    return weights - eta * (vec @ weights - target) * vec


@dataclass
class TrainResult:
    weights: np.ndarray
    errors: np.ndarray  # mean squared fit error after each epoch
    converged: bool
    epochs: int


def train_stage(
    features: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    weights: np.ndarray | None = None,
    support: tuple[int, int] | None = None,
) -> TrainResult:
    """Fit one stage's weights by cycling the samples in fixed row order.

    ``weights`` is updated in place when given (training continues from it);
    with a ``support`` range only entries in [lo, hi) are ever touched.
    Aborts when the fit error exceeds a million times its initial value.
    """
    V = np.ascontiguousarray(features, dtype=np.float64)
    beta = np.ascontiguousarray(targets, dtype=np.float64)
    if V.ndim != 2 or beta.shape != (V.shape[0],):
        raise ValueError("need a (n, p) sample matrix and n targets")
    if V.shape[0] == 0:
        raise ValueError("no training samples")
    n, p = V.shape
    if weights is None:
        weights = np.zeros(p)
    lo, hi = support if support is not None else (0, p)
    Vs = V[:, lo:hi]

    eta = config.eta
    if eta is None:
        max_norm = float((Vs * Vs).sum(axis=1).max())
        eta = 0.5 / max_norm if max_norm > 0 else 0.0

    def fit_error() -> float:
        resid = Vs @ weights[lo:hi] - beta
        return float(resid @ resid / n)

    initial = fit_error()
    if initial < config.tol:
        return TrainResult(weights, np.empty(0), True, 0)
    errors = []
    converged = False
    for epoch in range(1, config.epochs + 1):
        _kernels.sgd_epoch(V, beta, weights, eta, lo, hi)
        err = fit_error()
        errors.append(err)
        if err < config.tol:
            converged = True
            break
        if err > 1e6 * max(initial, np.finfo(float).tiny):
            raise TrainingDivergedError(
                f"fit error grew to {err:.3e} from {initial:.3e}; try a smaller learning rate"
            )
    return TrainResult(weights, np.array(errors), converged, len(errors))


# ---------------------------------------------------------------------------
# Fitted value iteration


def bellman_target(
    task: TrackingTask,
    k: int,
    x: tuple[int, int],
    approx: LinearApproximator,
    featurizer: Featurizer,
    partition: int | None = None,
) -> float:
    """One backup: stage cost plus the minimal approximate successor value."""
    if k == task.horizon:
        return task.stage_cost(k, x)
    best = None
    for u in control_set(task.a):
        nxt = step(x, u)
        if not task.fits(nxt):
            continue
        vec = featurizer.vector(k + 1, nxt, approx.layout, partition)
        val = approx.value(k + 1, vec)
        if best is None or val < best:
            best = val
    return task.stage_cost(k, x) + best


def incremental_value_iteration(
    task: TrackingTask,
    feature: FeatureCode,
    config: TrainConfig,
    partition: int | None = None,
    approx: LinearApproximator | None = None,
    layout: PartitionLayout | None = None,
    max_samples: int | None = None,
    featurizer: Featurizer | None = None,
):
    """Backward sweep over stages, fitting each stage to its Bellman targets.

    Every enumerated state is a training sample unless ``max_samples``
    subsamples them (deterministically, evenly spaced). Returns the trained
    approximator and the per-stage error traces, terminal stage last.
    Passing the ``featurizer`` back into rollouts reuses the cached codes.
    """
    if featurizer is None:
        featurizer = Featurizer(feature, task.seq, task.a)
    if approx is None:
        approx = LinearApproximator.zeros(task.horizon, featurizer.p, feature, layout)
    if approx.horizon != task.horizon or approx.p != featurizer.p:
        raise ValueError("approximator shape does not match the task and feature")
    if partition is not None and approx.layout is None:
        raise ValueError("partition index given for an unpartitioned approximator")

    stages = enumerate_states(task)
    support = None
    if partition is not None:
        support = approx.layout.support(approx.p, partition)

    traces: list[np.ndarray] = [None] * task.horizon
    for k in range(task.horizon, 0, -1):
        states = stages.states(k)
        if max_samples is not None and len(states) > max_samples:
            idx = np.linspace(0, len(states) - 1, max_samples).round().astype(int)
            states = [states[i] for i in idx]
        featurizer.prefill(k, states)
        V = np.stack([featurizer.vector(k, x, approx.layout, partition) for x in states])
        beta = np.array(
            [bellman_target(task, k, x, approx, featurizer, partition) for x in states]
        )
        result = train_stage(V, beta, config, weights=approx.weights[k - 1], support=support)
        traces[k - 1] = result.errors
    return approx, traces


def neuro_rollout(
    task: TrackingTask,
    approx: LinearApproximator,
    partition: int | None = None,
    featurizer: Featurizer | None = None,
) -> Trajectory:
    """Forward pass greedy with respect to the approximate cost-to-go."""
    if featurizer is None:
        featurizer = Featurizer(approx.feature, task.seq, task.a)
    x = task.x1
    states, controls = [x], []
    cost = task.stage_cost(1, x)
    for k in range(1, task.horizon):
        best_val, best_u = None, None
        for u in control_set(task.a):
            nxt = step(x, u)
            if not task.fits(nxt):
                continue
            vec = featurizer.vector(k + 1, nxt, approx.layout, partition)
            val = approx.value(k + 1, vec)
            if best_val is None or val < best_val:
                best_val, best_u = val, u
        x = step(x, best_u)
        controls.append(best_u)
        states.append(x)
        cost += task.stage_cost(k + 1, x)
    return Trajectory(controls, states, cost)


def partition_key(task: TrackingTask, partitions: int) -> int:
    """Deterministic spatial hash of the initial target location, mod P."""
    if partitions < 1:
        raise ValueError("partition count must be at least 1")
    x, y = task.seq.targets[0]
    return ((x * 73856093) ^ (y * 19349663)) % partitions


@dataclass
class SequentialResult:
    approx: LinearApproximator
    assignments: list[int | None]
    neuro_costs: list[float]
    greedy_costs: list[float]
    dp_costs: list[float]

    @property
    def cost_ratios(self) -> list[float]:
        return [n / g for n, g in zip(self.neuro_costs, self.greedy_costs)]

    @property
    def dp_ratios(self) -> list[float]:
        return [d / g for d, g in zip(self.dp_costs, self.greedy_costs)]


def sequential_train(
    tasks,
    feature: FeatureCode,
    config: TrainConfig,
    partitioned: bool = False,
    partitions: int | None = None,
) -> SequentialResult:
    """Train tasks in order on one shared network, then evaluate all of them.

    Weights persist from task to task. In partitioned mode each task trains
    only inside the partition selected by the hash of its initial target
    location; colliding keys share a partition. Evaluation reports each
    task's rollout cost against its greedy and exact-DP costs.
    """
    from .tracking import rollout, solve_exact_dp, solve_greedy

    tasks = list(tasks)
    if not tasks:
        raise ValueError("no tasks")
    horizon, a = tasks[0].horizon, tasks[0].a
    for t in tasks:
        if t.horizon != horizon or t.a != a:
            raise ValueError("sequential tasks must share horizon and region size")

    layout = None
    assignments: list[int | None] = [None] * len(tasks)
    if partitioned:
        if partitions is None or partitions < len(tasks):
            raise ValueError("need at least one partition per task")
        layout = PartitionLayout(partitions)
        assignments = [partition_key(t, partitions) for t in tasks]

    p = feature_length(feature, a)
    approx = LinearApproximator.zeros(horizon, p, feature, layout)
    featurizers = [Featurizer(feature, t.seq, t.a) for t in tasks]
    for task, part, fz in zip(tasks, assignments, featurizers):
        incremental_value_iteration(
            task, feature, config, partition=part, approx=approx, featurizer=fz
        )

    neuro, greedy, dp = [], [], []
    for task, part, fz in zip(tasks, assignments, featurizers):
        neuro.append(neuro_rollout(task, approx, partition=part, featurizer=fz).total_cost)
        greedy.append(solve_greedy(task).total_cost)
        dp.append(rollout(task, solve_exact_dp(task)).total_cost)
    return SequentialResult(approx, assignments, neuro, greedy, dp)


# ---------------------------------------------------------------------------
# Serialization: ascii header plus raw little-endian float64 weight rows.

_MAGIC = b"SPARSETRACK-APPROX-1"


def save_approximator(approx: LinearApproximator, path, dictionary_path: str = "") -> None:
    header = io.StringIO()
    header.write(_MAGIC.decode("ascii") + "\n")
    header.write(f"horizon={approx.horizon}\n")
    header.write(f"p={approx.p}\n")
    header.write(f"kind={approx.feature.kind}\n")
    header.write(f"partitions={approx.layout.count if approx.layout else 0}\n")
    header.write(f"dictionary={dictionary_path}\n")
    header.write("data\n")
    with open(path, "wb") as fh:
        fh.write(header.getvalue().encode("ascii"))
        fh.write(np.ascontiguousarray(approx.weights, dtype="<f8").tobytes())


def load_approximator(path, dictionary: GaborDictionary | None = None) -> LinearApproximator:
    with open(path, "rb") as fh:
        blob = fh.read()
    end = blob.find(b"data\n")
    if not blob.startswith(_MAGIC) or end < 0:
        raise ValueError(f"{path}: not an approximator file")
    fields = {}
    for line in blob[len(_MAGIC) + 1 : end].decode("ascii").splitlines():
        key, _, val = line.partition("=")
        fields[key] = val
    horizon, p = int(fields["horizon"]), int(fields["p"])
    kind = fields["kind"]
    if kind.startswith("sparse") and dictionary is None:
        if not fields["dictionary"]:
            raise ValueError("sparse approximator needs a dictionary")
        dictionary = load_dictionary(fields["dictionary"])
    feature = FeatureCode(kind, dictionary)
    layout = PartitionLayout(int(fields["partitions"])) if int(fields["partitions"]) else None
    weights = (
        np.frombuffer(blob, dtype="<f8", offset=end + len(b"data\n"), count=horizon * p)
        .reshape(horizon, p)
        .copy()
    )
    return LinearApproximator(weights, feature, layout)
