"""Domain types for the service-trading market.

Coordinates are planar meters (already-projected), so Euclidean distance is
exact.  One timeslot is one second; every rate parameter (bits/timeslot,
meters/timeslot, currency/timeslot) is interpreted on that grid.  All types
are immutable after construction and safe to share across parallel
replications.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

PairKey = tuple[int, int]  # (worker_id, task_id)


@dataclass(frozen=True)
class Location:
    lon: float  # meters on the planar projection
    lat: float

    def distance(self, other: "Location") -> float:
        return math.hypot(self.lon - other.lon, self.lat - other.lat)


@dataclass(frozen=True)
class TaskSpec:
    """A sensing task: time window [t_b, t_e], budget, quality demand, place, data size."""

    id: int
    t_b: int
    t_e: int
    budget: float
    quality_demand: float  # desired quality, 1/timeslot units
    loc: Location
    data_size: float  # bits each worker must deliver

    @property
    def width(self) -> int:
        return self.t_e - self.t_b


@dataclass(frozen=True)
class WorkerSpec:
    """A mobile worker: per-timeslot cost rates, sensing rate, speed, start location.

    ``e_t`` plays double duty exactly as modeled: it is the transmit power in
    the SNR term and the per-timeslot transmission energy rate monetized
    through V1.
    """

    id: int
    e_c: float  # sensing cost, currency/timeslot
    e_D: float  # delay cost, currency/timeslot
    e_t: float  # transmit power, watts (J/timeslot)
    e_m: float  # movement cost, currency/timeslot
    f: float  # sensing rate, bits/timeslot
    v: float  # speed, meters/timeslot
    loc0: Location


@dataclass(frozen=True)
class UncertaintyParams:
    """Delay and channel uncertainty.

    ``a`` maps (worker_id, task_id) to the per-movement-slot delay
    probability.  Delay durations are uniform on the integer grid
    {t_min..t_max}; channel quality is uniform on {mu1..mu2}.
    """

    a: dict[PairKey, float]
    t_min: int
    t_max: int
    mu1: int
    mu2: int

    def delay_prob(self, worker_id: int, task_id: int) -> float:
        return self.a[(worker_id, task_id)]

    @property
    def mean_delay(self) -> float:
        return (self.t_min + self.t_max) / 2.0

    @property
    def mean_channel(self) -> float:
        return (self.mu1 + self.mu2) / 2.0


@dataclass(frozen=True)
class EconomicConfig:
    """Market-wide weights, thresholds, and negotiation parameters.

    V1 monetizes joules; V2 weights quality in task utility; V3 in [0,1]
    weights the settlement term so that a breach always lowers joint welfare.
    rho1..rho5 are the risk thresholds for gates (22c), (23c), (23d), (33c),
    (33d) respectively.  ``p_desire`` maps (worker_id, task_id) to the
    worker's opening ask; compensation is fixed at ``q_frac`` times the final
    payment when a contract is signed.
    """

    v1: float = 1.0
    v2: float = 10.0
    v3: float = 0.5
    u_min: float = 0.1
    rho1: float = 0.3
    rho2: float = 0.3
    rho3: float = 0.3
    rho4: float = 0.3
    rho5: float = 0.3
    dp: float = 0.5
    p_desire: dict[PairKey, float] = field(default_factory=dict)
    bandwidth: float = 6e6  # Hz
    q_frac: float = 0.5

    def ask(self, worker_id: int, task_id: int) -> float:
        return self.p_desire[(worker_id, task_id)]


@dataclass(frozen=True)
class Scenario:
    tasks: tuple[TaskSpec, ...]
    workers: tuple[WorkerSpec, ...]
    uncertainty: UncertaintyParams
    econ: EconomicConfig
    horizon: int
    seed: int

    def task(self, task_id: int) -> TaskSpec:
        return self._task_index[task_id]

    def worker(self, worker_id: int) -> WorkerSpec:
        return self._worker_index[worker_id]

    @property
    def _task_index(self) -> dict[int, TaskSpec]:
        idx = getattr(self, "_task_idx_cache", None)
        if idx is None:
            idx = {t.id: t for t in self.tasks}
            object.__setattr__(self, "_task_idx_cache", idx)
        return idx

    @property
    def _worker_index(self) -> dict[int, WorkerSpec]:
        idx = getattr(self, "_worker_idx_cache", None)
        if idx is None:
            idx = {w.id: w for w in self.workers}
            object.__setattr__(self, "_worker_idx_cache", idx)
        return idx


def validate_scenario(scenario: Scenario) -> list[str]:
    """Return every invariant violation as a human-readable string.

    An empty list means the scenario is valid.  Violations are data, not
    errors: callers decide whether to abort.
    """
    problems: list[str] = []
    seen_tasks: set[int] = set()
    for t in scenario.tasks:
        if t.id in seen_tasks:
            problems.append(f"duplicate task id {t.id}")
        seen_tasks.add(t.id)
        if not (0 <= t.t_b < t.t_e <= scenario.horizon):
            problems.append(
                f"task {t.id}: window [{t.t_b}, {t.t_e}] not within (0, {scenario.horizon}] "
                "with t_b < t_e"
            )
        if t.budget < 0:
            problems.append(f"task {t.id}: negative budget {t.budget}")
        if t.quality_demand <= 0:
            problems.append(f"task {t.id}: non-positive quality demand {t.quality_demand}")
        if t.data_size <= 0:
            problems.append(f"task {t.id}: non-positive data size {t.data_size}")
        if not (math.isfinite(t.loc.lon) and math.isfinite(t.loc.lat)):
            problems.append(f"task {t.id}: non-finite location")

    seen_workers: set[int] = set()
    for w in scenario.workers:
        if w.id in seen_workers:
            problems.append(f"duplicate worker id {w.id}")
        seen_workers.add(w.id)
        for name in ("e_c", "e_D", "e_t", "e_m", "f", "v"):
            if getattr(w, name) <= 0:
                problems.append(f"worker {w.id}: non-positive {name}")
        if not (math.isfinite(w.loc0.lon) and math.isfinite(w.loc0.lat)):
            problems.append(f"worker {w.id}: non-finite location")

    u = scenario.uncertainty
    if not (1 <= u.t_min <= u.t_max):
        problems.append(f"delay duration range [{u.t_min}, {u.t_max}] not ordered with t_min >= 1")
    if u.mu1 > u.mu2:
        problems.append(f"channel range [{u.mu1}, {u.mu2}] inverted")
    for (wid, tid), prob in u.a.items():
        if not (0.0 <= prob <= 1.0):
            problems.append(f"delay probability a[{wid},{tid}]={prob} outside [0,1]")

    e = scenario.econ
    if not (0.0 <= e.v3 <= 1.0):
        problems.append(f"V3={e.v3} outside [0,1]")
    if e.u_min <= 0:
        problems.append(f"u_min={e.u_min} not positive")
    for k in range(1, 6):
        rho = getattr(e, f"rho{k}")
        if not (0.0 < rho <= 1.0):
            problems.append(f"rho{k}={rho} outside (0,1]")
    if e.dp <= 0:
        problems.append(f"payment decrement {e.dp} not positive")
    if not (0.0 <= e.q_frac <= 1.0):
        problems.append(f"q_frac={e.q_frac} outside [0,1]")

    return problems
