"""Experiment drivers: every analysis maps to one function emitting CSV rows.

Conventions shared by the drivers (and stated in the outputs): synthetic
frames have 1/f^2 statistics and intensities in [0, 1]; dictionary atoms
are unit-normalized; sparse features are l1-QP codes in 8-bit coefficient
units unless a driver says otherwise (the memory-capacity curve uses the
plain least-squares route, the over-completeness comparison the QP route).
Tasks are generated from seeds by deterministic scans, so a (config, seed)
pair pins every output byte.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, fields

import numpy as np

from . import analysis, coding, gabor, images, neurodp, tracking

__all__ = [
    "ExperimentConfig",
    "parse_config_file",
    "config_from_sources",
    "make_task",
    "scan_tasks",
    "grid_patch_pool",
    "write_task_dir",
    "load_task_file",
    "feature_for_kind",
    "KIND_NAMES",
    "run_capacity",
    "run_speed",
    "run_seqlearn",
    "run_entropy",
    "run_appendix1d",
    "EXPERIMENTS",
]

# CLI feature names to internal kinds
KIND_NAMES = {
    "pixels": "raw_pixels",
    "whitened": "whitened",
    "sparse": "sparse_complete",
    "sparse2.25": "sparse_overcomplete",
}


@dataclass
class ExperimentConfig:
    """Flat experiment settings; file keys and flag names match field names."""

    seed: int = 0
    kinds: tuple[str, ...] = ("pixels", "sparse", "sparse2.25")
    tasks: int = 4
    region_side: int = 20
    patch_side: int = 10
    atoms: int = 100
    atoms_over: int = 225
    partitions: tuple[int, ...] = (8, 16, 32, 64, 128, 256)
    frame_width: int = 120
    frame_height: int = 120
    n_frames: int = 5
    target_speed: int = 0  # 0 means "use the region side"
    spectral_exponent: float = 2.0
    eta: float = 0.0  # 0 means the per-stage 0.5/max|v|^2 rule
    epochs: int = 100_000
    tol: float = 1e-8
    lambda_feature: float = coding.DEFAULT_FEATURE_LAMBDA
    encode_iters: int = 2000
    rho: float = 0.9
    alpha: tuple[float, float, float] = gabor.DEFAULT_MODEL.alpha
    beta: tuple[float, float, float] = gabor.DEFAULT_MODEL.beta

    def model(self) -> gabor.CopulaModel:
        return gabor.CopulaModel(self.rho, self.alpha, self.beta)

    def train_config(self) -> neurodp.TrainConfig:
        eta = self.eta if self.eta > 0 else None
        return neurodp.TrainConfig(eta=eta, epochs=self.epochs, tol=self.tol)


def _parse_value(name: str, text: str, kind):
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    if kind is str:
        return text
    # tuple-valued fields: comma separated
    parts = [p for p in text.split(",") if p]
    if name in ("kinds",):
        for p in parts:
            if p not in KIND_NAMES:
                raise ValueError(f"unknown feature kind {p!r}")
        return tuple(parts)
    if name in ("partitions",):
        return tuple(int(p) for p in parts)
    return tuple(float(p) for p in parts)


def parse_config_file(path) -> dict:
    """Read 'key=value' lines; '#' starts a comment."""
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def config_from_sources(file_values: dict | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config with precedence: flag overrides > file > defaults."""
    cfg = ExperimentConfig()
    by_name = {f.name: f for f in fields(ExperimentConfig)}
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for key, val in merged.items():
        if key not in by_name:
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if isinstance(val, str):
            val = _parse_value(key, val, type(current) if not isinstance(current, tuple) else tuple)
        setattr(cfg, key, val)
    return cfg


# ---------------------------------------------------------------------------
# Task synthesis


def make_task(seed: int, cfg: ExperimentConfig) -> tracking.TrackingTask:
    """Seeded task: synthetic sequence, tracker started on the first target."""
    speed = cfg.target_speed or cfg.region_side
    seq = images.generate_synthetic_sequence(
        cfg.frame_width, cfg.frame_height, cfg.n_frames, seed, cfg.spectral_exponent, speed
    )
    wx, wy = seq.targets[0]
    x1 = (
        min(max(wx, 0), cfg.frame_width - cfg.region_side),
        min(max(wy, 0), cfg.frame_height - cfg.region_side),
    )
    return tracking.TrackingTask(seq, cfg.region_side, x1)


@dataclass
class TaskCase:
    seed: int
    task: tracking.TrackingTask
    dp_cost: float
    greedy_cost: float


def scan_tasks(
    cfg: ExperimentConfig,
    count: int,
    require_gap: bool = False,
    distinct_partition_keys: int | None = None,
    start_seed: int | None = None,
) -> list[TaskCase]:
    """Deterministically scan seeds for usable tasks.

    A task is kept when its greedy cost is positive (so cost ratios are
    defined); with ``require_gap`` the exact solution must beat greedy.
    With ``distinct_partition_keys`` the kept tasks must map to pairwise
    distinct partitions of that count (colliding tasks are skipped, since
    shared partitions are allowed but not wanted for the clean experiment).
    """
    kept: list[TaskCase] = []
    seed = cfg.seed if start_seed is None else start_seed
    attempts = 0
    while len(kept) < count:
        if attempts > 500:
            raise RuntimeError("no suitable tasks found in 500 seeds")
        task = make_task(seed, cfg)
        seed += 1
        attempts += 1
        greedy = tracking.solve_greedy(task).total_cost
        if greedy <= 0:
            continue
        dp = tracking.rollout(task, tracking.solve_exact_dp(task)).total_cost
        if require_gap and not dp < greedy:
            continue
        if distinct_partition_keys is not None:
            key = neurodp.partition_key(task, distinct_partition_keys)
            if any(
                neurodp.partition_key(c.task, distinct_partition_keys) == key for c in kept
            ):
                continue
        kept.append(TaskCase(seed - 1, task, dp, greedy))
    return kept


def grid_patch_pool(seed: int, count: int, patch_side: int, spectral_exponent: float = 2.0):
    """Distinct-content patches: disjoint grid cells of one synthetic frame.

    Non-overlapping cells avoid the near-duplicate rows that would make
    every representation's design matrix artificially singular.
    """
    per_row = math.isqrt(count)
    while per_row * per_row < count:
        per_row += 1
    side = per_row * patch_side
    seq = images.generate_synthetic_sequence(side, side, 1, seed, spectral_exponent, 0)
    cells = []
    for y in range(0, side, patch_side):
        for x in range(0, side, patch_side):
            cells.append(images.extract_region(seq, 1, (x, y), patch_side))
    return cells[:count]


# ---------------------------------------------------------------------------
# Task files: key=value plus PGM frames and a targets file


def write_task_dir(task_dir, seq: images.ImageSequence) -> str:
    """Write frames, targets and the task description file; returns its path."""
    os.makedirs(task_dir, exist_ok=True)
    names = []
    for k, frame in enumerate(seq.frames, start=1):
        name = f"frame_{k:03d}.pgm"
        images.write_pgm(frame, os.path.join(task_dir, name))
        names.append(name)
    images.write_targets(seq.targets, os.path.join(task_dir, "targets.txt"))
    return names


def write_task_file(path, frame_names, targets_name, a: int, x1) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"frames={','.join(frame_names)}\n")
        fh.write(f"targets={targets_name}\n")
        fh.write(f"a={a}\n")
        fh.write(f"x1={x1[0]},{x1[1]}\n")


def load_task_file(path) -> tracking.TrackingTask:
    values = parse_config_file(path)
    base = os.path.dirname(os.path.abspath(path))
    frame_paths = [os.path.join(base, n) for n in values["frames"].split(",") if n]
    seq = images.load_pgm_sequence(frame_paths, os.path.join(base, values["targets"]))
    x1 = tuple(int(v) for v in values["x1"].split(","))
    return tracking.TrackingTask(seq, int(values["a"]), x1)


# ---------------------------------------------------------------------------
# Feature construction


def feature_for_kind(
    name: str,
    cfg: ExperimentConfig,
    dictionary: gabor.GaborDictionary | None = None,
    dictionary_over: gabor.GaborDictionary | None = None,
    encode_method: str = "qp",
) -> neurodp.FeatureCode:
    kind = KIND_NAMES[name]
    dic = None
    if kind == "sparse_complete":
        dic = dictionary or gabor.build_dictionary(
            cfg.model(), cfg.patch_side, cfg.atoms, seed=cfg.seed + 7001, normalize=True
        )
    elif kind == "sparse_overcomplete":
        dic = dictionary_over or gabor.build_dictionary(
            cfg.model(), cfg.patch_side, cfg.atoms_over, seed=cfg.seed + 7002, normalize=True
        )
    return neurodp.FeatureCode(
        kind,
        dic,
        encode_method=encode_method,
        lambda_reg=cfg.lambda_feature,
        qp_iters=cfg.encode_iters,
    )


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# Drivers


def run_capacity(cfg: ExperimentConfig, out_dir) -> list[str]:
    """Memory-capacity curves plus the over-completeness rank comparison.

    The curve reports, per target rank, the smallest feature count whose
    design matrix reaches it: sparse features grow by atoms (least-squares
    route), pixel features by whole pixels of a growing window. The second
    output compares complete and x2.25 over-complete QP codes at n equal to
    the over-complete length.
    """
    rng_seed = cfg.seed
    n_max_values = [5, 10, 15, 20, 25]
    pool_side = 24
    pool = grid_patch_pool(rng_seed, 256, pool_side, cfg.spectral_exponent)
    big = np.stack([r.data for r in pool])

    def pixel_rank(p, n_max):
        return analysis.numeric_rank(big[:n_max, :p])

    small = grid_patch_pool(rng_seed + 1, 256, cfg.patch_side, cfg.spectral_exponent)

    def sparse_rank(p, n_max):
        dic = gabor.build_dictionary(cfg.model(), cfg.patch_side, p, seed=rng_seed + p, normalize=True)
        V = coding.encode_regions(dic, small[:n_max], method="ls")
        return analysis.numeric_rank(V)

    rows = []
    pix_ps = list(range(5, pool_side * pool_side + 1, 5))
    for pt in analysis.capacity_curve(n_max_values, pixel_rank, pix_ps):
        rows.append(("pixels", pt.n_max, pt.p, int(pt.saturated)))
    sp_ps = list(range(5, cfg.patch_side**2 + 1, 5))
    for pt in analysis.capacity_curve(n_max_values, sparse_rank, sp_ps):
        rows.append(("sparse", pt.n_max, pt.p, int(pt.saturated)))
    curve_path = os.path.join(out_dir, "capacity_curve.csv")
    _write_csv(curve_path, ("kind", "n_max", "p", "saturated"), rows)

    n = cfg.atoms_over
    pool2 = grid_patch_pool(rng_seed + 2, n, cfg.patch_side, cfg.spectral_exponent)
    dic_c = gabor.build_dictionary(cfg.model(), cfg.patch_side, cfg.atoms, seed=rng_seed + 11, normalize=True)
    dic_o = gabor.build_dictionary(cfg.model(), cfg.patch_side, cfg.atoms_over, seed=rng_seed + 12, normalize=True)
    Vc = coding.encode_regions(dic_c, pool2, "qp", cfg.lambda_feature, cfg.encode_iters)
    Vo = coding.encode_regions(dic_o, pool2, "qp", cfg.lambda_feature, cfg.encode_iters)
    over_path = os.path.join(out_dir, "capacity_overcomplete.csv")
    _write_csv(
        over_path,
        ("kind", "n", "p", "numeric_rank"),
        [
            ("sparse", n, dic_c.m, analysis.numeric_rank(Vc)),
            ("sparse2.25", n, dic_o.m, analysis.numeric_rank(Vo)),
        ],
    )
    return [curve_path, over_path]


def speed_error_trace(task, feature, epochs: int) -> np.ndarray:
    """Per-epoch residual norm |V r - beta|, averaged over stages.

    Targets are the exact cost-to-go values, isolating the incremental
    gradient's convergence from the value-iteration bootstrap.
    """
    table = tracking.solve_exact_dp(task)
    fz = neurodp.Featurizer(feature, task.seq, task.a)
    per_stage = []
    for k in range(1, task.horizon + 1):
        states = table.stages.states(k)
        fz.prefill(k, states)
        V = np.stack([fz.vector(k, x) for x in states])
        beta = np.array([table.value(k, x) for x in states])
        res = neurodp.train_stage(V, beta, neurodp.TrainConfig(epochs=epochs, tol=0.0))
        per_stage.append(np.sqrt(res.errors * len(states)))
    return np.mean(per_stage, axis=0)


def fit_speed_trace(trace: np.ndarray) -> analysis.TimeConstantFit:
    """Log-linear fit over the decaying head of the trace (six decades)."""
    floor = trace[0] * 1e-6
    below = np.nonzero(trace <= floor)[0]
    stop = int(below[0]) if below.size else len(trace)
    stop = max(stop, 10)
    return analysis.fit_time_constant([(i + 1, trace[i]) for i in range(stop)])


def run_speed(cfg: ExperimentConfig, out_dir, epochs: int = 4000) -> list[str]:
    """Convergence-rate comparison across representations, shared task set."""
    cases = scan_tasks(cfg, cfg.tasks)
    trace_rows, fit_rows = [], []
    for name in cfg.kinds:
        feature = feature_for_kind(name, cfg)
        trace = np.mean(
            [speed_error_trace(c.task, feature, epochs) for c in cases], axis=0
        )
        fit = fit_speed_trace(trace)
        for i, err in enumerate(trace, start=1):
            trace_rows.append((i, repr(float(err)), name))
        fit_rows.append((name, repr(fit.delta), repr(fit.r_squared)))
    trace_path = os.path.join(out_dir, "speed_traces.csv")
    fit_path = os.path.join(out_dir, "speed_constants.csv")
    _write_csv(trace_path, ("iter", "error", "kind"), trace_rows)
    _write_csv(fit_path, ("kind", "delta", "r_squared"), fit_rows)
    return [trace_path, fit_path]


def run_seqlearn(cfg: ExperimentConfig, out_dir) -> list[str]:
    """Sequential multitask learning with and without partitions.

    For each representation: an unpartitioned sequential run (the
    forgetting baseline) and partitioned runs over the configured partition
    counts, keeping only counts that divide the feature length. Cost ratio
    is neuro-DP cost over greedy cost; the exact-DP ratio is reported for
    comparison.
    """
    max_p = max(cfg.partitions) if cfg.partitions else cfg.tasks
    cases = scan_tasks(cfg, cfg.tasks, distinct_partition_keys=max_p)
    tasks = [c.task for c in cases]
    rows = []
    for name in cfg.kinds:
        feature = feature_for_kind(name, cfg)
        p = neurodp.feature_length(feature, cfg.region_side)
        runs = [("none", 0, False)] + [
            ("partitioned", count, True) for count in cfg.partitions if p % count == 0
        ]
        for label, count, partitioned in runs:
            result = neurodp.sequential_train(
                tasks,
                feature,
                cfg.train_config(),
                partitioned=partitioned,
                partitions=count if partitioned else None,
            )
            for i, case in enumerate(cases):
                rows.append(
                    (
                        name,
                        label,
                        count,
                        i + 1,
                        case.seed,
                        repr(result.cost_ratios[i]),
                        repr(result.dp_ratios[i]),
                    )
                )
    path = os.path.join(out_dir, "seqlearn_ratios.csv")
    _write_csv(
        path,
        ("kind", "mode", "partitions", "task", "seed", "cost_ratio", "dp_ratio"),
        rows,
    )
    return [path]


def run_entropy(cfg: ExperimentConfig, out_dir, n_patches: int = 1500) -> list[str]:
    """Histogram entropies of quantized pixels and sparse codes.

    Pixels are rounded to 8-bit levels; sparse coefficients are already in
    8-bit units and are quantized with unit bins. Also reports the
    typical-set exponent N*H for N = one patch worth of symbols.
    """
    seq = images.generate_synthetic_sequence(
        cfg.frame_width, cfg.frame_height, cfg.n_frames, cfg.seed, cfg.spectral_exponent, 0
    )
    rng = np.random.default_rng(cfg.seed + 17)
    regions = []
    for _ in range(n_patches):
        k = int(rng.integers(1, len(seq) + 1))
        x = int(rng.integers(0, seq.width - cfg.patch_side + 1))
        y = int(rng.integers(0, seq.height - cfg.patch_side + 1))
        regions.append(images.extract_region(seq, k, (x, y), cfg.patch_side))

    d = cfg.patch_side**2
    pix_levels = np.rint(np.stack([r.data for r in regions]) * 255).astype(np.int64)
    dic = gabor.build_dictionary(cfg.model(), cfg.patch_side, cfg.atoms, seed=cfg.seed + 11, normalize=True)
    codes = coding.encode_regions(dic, regions, "qp", cfg.lambda_feature, cfg.encode_iters)
    sp_levels = coding.quantize_uniform(codes.reshape(-1)).levels

    ent_rows, hist_rows = [], []
    for kind, levels, n_sym in (("pixels", pix_levels.reshape(-1), d), ("sparse", sp_levels, dic.m)):
        h = coding.estimate_entropy(levels)
        ent_rows.append((kind, repr(h), repr(coding.typical_count_exponent(h, n_sym))))
        values, counts = np.unique(levels, return_counts=True)
        hist_rows.extend((kind, int(v), int(c)) for v, c in zip(values, counts))
    ent_path = os.path.join(out_dir, "entropy.csv")
    hist_path = os.path.join(out_dir, "entropy_histograms.csv")
    _write_csv(ent_path, ("kind", "bits_per_symbol", "typical_exponent"), ent_rows)
    _write_csv(hist_path, ("kind", "level", "count"), hist_rows)
    return [ent_path, hist_path]


def run_appendix1d(cfg: ExperimentConfig, out_dir) -> list[str]:
    """Closed-form 1-D tracking comparisons, deterministic and stochastic."""
    rows = []
    det = tracking.solve_1d_deterministic((0, 0, 2, 3), 4, 0)
    gre = tracking.greedy_1d_deterministic((0, 0, 2, 3), 4, 0)
    rows.append(
        (
            "deterministic",
            "",
            "",
            repr(det.cost),
            repr(gre.cost),
            " ".join(map(str, det.controls)),
            " ".join(map(str, gre.controls)),
        )
    )
    for n in range(5, 9):
        w = [0, 0] + list(range(2, n))
        det_n = tracking.solve_1d_deterministic(w, n, 0)
        gre_n = tracking.greedy_1d_deterministic(w, n, 0)
        rows.append(
            (
                f"deterministic_N{n}",
                "",
                "",
                repr(det_n.cost),
                repr(gre_n.cost),
                " ".join(map(str, det_n.controls)),
                " ".join(map(str, gre_n.controls)),
            )
        )
    rng = np.random.default_rng(cfg.seed)
    for _ in range(20):
        p1 = float(rng.uniform(0.5001, 1.0))
        p2 = float(rng.uniform(0.5001, 1.0))
        res = tracking.solve_1d_stochastic(p1, p2)
        rows.append(
            ("stochastic", repr(p1), repr(p2), repr(res.cost), repr(res.greedy_cost), str(res.first_control), "")
        )
    path = os.path.join(out_dir, "appendix1d.csv")
    _write_csv(
        path,
        ("case", "p1", "p2", "dp_cost", "greedy_cost", "dp_controls", "greedy_controls"),
        rows,
    )
    return [path]


EXPERIMENTS = {
    "capacity": run_capacity,
    "speed": run_speed,
    "seqlearn": run_seqlearn,
    "entropy": run_entropy,
    "appendix1d": run_appendix1d,
}
