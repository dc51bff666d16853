"""Finite-horizon target tracking with restricted controls.

The tracker's state is the top-left corner of an a-by-a region; each stage
it may shift the region a pixels left, right, up or down, or stay. The
stage cost is the squared distance to the known target location, and the
exact solution is the backward cost-to-go recursion over the reachable
states. Ties in the minimization are always broken by the fixed control
order below, so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .images import ImageSequence

__all__ = [
    "control_set",
    "step",
    "TrackingTask",
    "StageStates",
    "CostToGoTable",
    "Trajectory",
    "enumerate_states",
    "solve_exact_dp",
    "rollout",
    "solve_greedy",
    "solve_1d_deterministic",
    "greedy_1d_deterministic",
    "solve_1d_stochastic",
    "Deterministic1D",
    "Stochastic1D",
]

State = tuple[int, int]
Control = tuple[int, int]


def control_set(a: int) -> tuple[Control, ...]:
    """The five controls in tie-break order: left, right, down, up, stay."""
    return ((-a, 0), (a, 0), (0, a), (0, -a), (0, 0))


def step(x: State, u: Control) -> State:
    return (x[0] + u[0], x[1] + u[1])


@dataclass
class TrackingTask:
    """An image sequence, a region size, and the tracker's initial corner."""

    seq: ImageSequence
    a: int
    x1: State

    def __post_init__(self):
        if self.a < 1:
            raise ValueError("region size must be at least 1")
        if not self.fits(self.x1):
            raise ValueError(f"initial state {self.x1} does not fit a {self.a}-pixel region")

    @property
    def horizon(self) -> int:
        return len(self.seq)

    def fits(self, x: State) -> bool:
        return (
            0 <= x[0] <= self.seq.width - self.a
            and 0 <= x[1] <= self.seq.height - self.a
        )

    def stage_cost(self, k: int, x: State) -> float:
        wx, wy = self.seq.targets[k - 1]
        return float((x[0] - wx) ** 2 + (x[1] - wy) ** 2)


@dataclass
class StageStates:
    """Reachable, in-bounds states per stage; stage 1 holds exactly x1."""

    stages: list[list[State]]

    def states(self, k: int) -> list[State]:
        return self.stages[k - 1]

    def __len__(self) -> int:
        return len(self.stages)


def enumerate_states(task: TrackingTask) -> StageStates:
    """Breadth-first expansion of the control graph, stage by stage.

    Each stage keeps only states whose region fits the frame, deduplicated
    and sorted so downstream sweeps are deterministic.
    """
    controls = control_set(task.a)
    stages = [[task.x1]]
    current = {task.x1}
    for _ in range(task.horizon - 1):
        nxt = {step(x, u) for x in current for u in controls}
        current = {x for x in nxt if task.fits(x)}
        stages.append(sorted(current))
    return StageStates(stages)


@dataclass
class CostToGoTable:
    """Exact cost-to-go and argmin control for every reachable (stage, state)."""

    stages: StageStates
    cost_to_go: dict[tuple[int, State], float] = field(default_factory=dict)
    best_control: dict[tuple[int, State], Control] = field(default_factory=dict)

    def value(self, k: int, x: State) -> float:
        return self.cost_to_go[(k, x)]


def solve_exact_dp(task: TrackingTask) -> CostToGoTable:
    """Backward recursion from the final stage with zero terminal cost."""
    stages = enumerate_states(task)
    table = CostToGoTable(stages)
    controls = control_set(task.a)
    n = task.horizon
    for x in stages.states(n):
        table.cost_to_go[(n, x)] = task.stage_cost(n, x)
        table.best_control[(n, x)] = (0, 0)
    for k in range(n - 1, 0, -1):
        for x in stages.states(k):
            best_val, best_u = None, None
            for u in controls:
                nxt = step(x, u)
                if not task.fits(nxt):
                    continue
                val = table.cost_to_go[(k + 1, nxt)]
                if best_val is None or val < best_val:
                    best_val, best_u = val, u
            table.cost_to_go[(k, x)] = task.stage_cost(k, x) + best_val
            table.best_control[(k, x)] = best_u
    return table


@dataclass
class Trajectory:
    controls: list[Control]
    states: list[State]
    total_cost: float


def rollout(task: TrackingTask, table: CostToGoTable) -> Trajectory:
    """Forward pass applying the stored argmin controls; cost equals J_1(x1)."""
    x = task.x1
    states, controls = [x], []
    cost = task.stage_cost(1, x)
    for k in range(1, task.horizon):
        u = table.best_control[(k, x)]
        x = step(x, u)
        controls.append(u)
        states.append(x)
        cost += task.stage_cost(k + 1, x)
    return Trajectory(controls, states, cost)


def solve_greedy(task: TrackingTask) -> Trajectory:
    """Pick the in-bounds control minimizing only the next stage's cost."""
    x = task.x1
    states, controls = [x], []
    cost = task.stage_cost(1, x)
    for k in range(1, task.horizon):
        best_val, best_u = None, None
        for u in control_set(task.a):
            nxt = step(x, u)
            if not task.fits(nxt):
                continue
            val = task.stage_cost(k + 1, nxt)
            if best_val is None or val < best_val:
                best_val, best_u = val, u
        x = step(x, best_u)
        controls.append(best_u)
        states.append(x)
        cost += task.stage_cost(k + 1, x)
    return Trajectory(controls, states, cost)


# ---------------------------------------------------------------------------
# One-dimensional problems with absolute-value cost and controls {0, 1}.
# Stages are 0-based here, matching the usual statement of the problem.


@dataclass
class Deterministic1D:
    cost: float
    controls: list[int]
    trajectory: list[int]


def solve_1d_deterministic(targets, n_stages: int, x0: int = 0) -> Deterministic1D:
    """Exact backward recursion for the 1-D tracker on stages 0..n_stages-1.

    The state ranges over 0..max(targets) + n_stages, which every feasible
    trajectory from x0 stays inside. Ties prefer staying put.
    """
    targets = list(targets)
    if len(targets) < n_stages:
        raise ValueError("need one target per stage")
    if x0 < 0 or any(w < 0 for w in targets):
        raise ValueError("states and targets are nonnegative integers")
    hi = max(targets[:n_stages] + [x0]) + n_stages + 1
    j_next = [0.0] * (hi + 1)
    best = [[0] * (hi + 1) for _ in range(n_stages)]
    for k in range(n_stages - 1, -1, -1):
        j_here = [0.0] * (hi + 1)
        for x in range(hi + 1):
            stay = j_next[x]
            move = j_next[x + 1] if x + 1 <= hi else float("inf")
            u = 0 if stay <= move else 1
            j_here[x] = min(stay, move) + abs(x - targets[k])
            best[k][x] = u
        j_next = j_here
    x, traj, controls = x0, [x0], []
    for k in range(n_stages - 1):
        u = best[k][x]
        x += u
        controls.append(u)
        traj.append(x)
    return Deterministic1D(j_next[x0], controls, traj)


def greedy_1d_deterministic(targets, n_stages: int, x0: int = 0) -> Deterministic1D:
    """Greedy baseline: minimize only the next stage's distance; ties stay."""
    targets = list(targets)
    x, traj, controls = x0, [x0], []
    cost = float(abs(x0 - targets[0]))
    for k in range(1, n_stages):
        u = 0 if abs(x - targets[k]) <= abs(x + 1 - targets[k]) else 1
        x += u
        controls.append(u)
        traj.append(x)
        cost += abs(x - targets[k])
    return Deterministic1D(cost, controls, traj)


@dataclass
class Stochastic1D:
    cost: float
    first_control: int
    greedy_cost: float


def solve_1d_stochastic(p1: float, p2: float) -> Stochastic1D:
    """Three-stage tracker with a random target; returns J0(0) and u0*.

    The target is at 0 at stage 0; at stage 1 it is 0 with probability p1,
    else 1; at stage 2 it is 2 with probability p2, else 1. The expectation
    recursion is evaluated exactly over the reachable states, and the greedy
    expected cost is reported alongside for comparison.
    """
    for p in (p1, p2):
        if not 0.0 < p <= 1.0:
            raise ValueError(f"probability {p} outside (0, 1]")

    def expected_cost(k: int, x: int) -> float:
        if k == 0:
            return float(abs(x))
        if k == 1:
            return p1 * abs(x) + (1 - p1) * abs(x - 1)
        return (1 - p2) * abs(x - 1) + p2 * abs(x - 2)

    hi = 4
    j2 = [expected_cost(2, x) for x in range(hi + 1)]
    j1 = [0.0] * (hi + 1)
    for x in range(hi):
        j1[x] = min(j2[x], j2[x + 1]) + expected_cost(1, x)
    j0 = [0.0] * (hi + 1)
    u0 = [0] * (hi + 1)
    for x in range(hi - 1):
        stay, move = j1[x], j1[x + 1]
        u0[x] = 0 if stay <= move else 1
        j0[x] = min(stay, move) + expected_cost(0, x)

    # Greedy from 0: stays at stage 1 (p1 > 1/2 favors the origin), then
    # moves toward the stage-2 mass; expected cost (1 - p1) + p2.
    greedy_x1 = 0 if expected_cost(1, 0) <= expected_cost(1, 1) else 1
    greedy_x2 = min(
        (expected_cost(2, greedy_x1 + u) , greedy_x1 + u) for u in (0, 1)
    )[1]
    greedy = expected_cost(0, 0) + expected_cost(1, greedy_x1) + expected_cost(2, greedy_x2)
    return Stochastic1D(j0[0], u0[0], greedy)
