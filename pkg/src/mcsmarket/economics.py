"""Deterministic cost, time, age-of-information, quality, and utility formulas.

All times are rounded up to whole timeslots (conservative: feasibility is
never overstated).  Costs are assembled in natural units (currency for
movement/delay/sensing, joules for transmission) and monetized through the
single V1 factor when totalled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import EconomicConfig, Location, TaskSpec, UncertaintyParams, WorkerSpec


def ceil_slots(x: float) -> int:
    """Round a non-negative duration up to whole timeslots.

    A tiny tolerance absorbs float noise so that e.g. 300/150 is 2 slots, not
    3.
    """
    if x <= 0:
        return 0
    n = math.ceil(x - 1e-9)
    return max(n, 0)


@dataclass(frozen=True)
class CostBreakdown:
    c_move: float
    c_delay: float
    c_sense: float
    c_tran: float
    tau_move: int
    tau_delay: int
    tau_sense: int
    tau_tran: int

    @property
    def total_cost(self) -> float:
        # V1 is applied by total_cost(); this is the pre-monetization sum.
        return self.c_move + self.c_delay + self.c_sense + self.c_tran

    @property
    def total_time(self) -> int:
        return self.tau_move + self.tau_delay + self.tau_sense + self.tau_tran


@dataclass(frozen=True)
class ContractTerm:
    payment: float
    compensation: float
    stage: str  # "futures" | "spot"

    def __post_init__(self):
        if self.payment < 0 or self.compensation < 0:
            raise ValueError("contract terms must be non-negative")
        if self.stage not in ("futures", "spot"):
            raise ValueError(f"unknown stage {self.stage!r}")


@dataclass(frozen=True)
class OutcomeRecord:
    completed: bool  # beta
    realized: CostBreakdown
    partial_cost: float  # cost sunk before abandonment (natural units, pre-V1)


def travel(worker: WorkerSpec, origin: Location, task: TaskSpec) -> tuple[int, float]:
    """Slots and cost to move from ``origin`` to the task location."""
    tau = ceil_slots(origin.distance(task.loc) / worker.v)
    return tau, worker.e_m * tau


def tau_transmit(worker: WorkerSpec, task: TaskSpec, gamma: float, bandwidth: float) -> int:
    snr = worker.e_t * gamma
    if snr <= 0:
        raise ValueError(f"non-positive SNR {snr}")
    if task.data_size <= 0:
        return 0
    return ceil_slots(task.data_size / (bandwidth * math.log2(1.0 + snr)))


def service_times(
    worker: WorkerSpec, task: TaskSpec, gamma: float, bandwidth: float
) -> tuple[int, float, int, float]:
    """(tau_sense, c_sense, tau_tran, c_tran) at channel quality ``gamma``.

    c_tran is in joules (watts x slots); V1 folds it into currency at
    total-cost time.
    """
    tau_sense = ceil_slots(task.data_size / worker.f) if task.data_size > 0 else 0
    tau_tran = tau_transmit(worker, task, gamma, bandwidth)
    return tau_sense, worker.e_c * tau_sense, tau_tran, worker.e_t * tau_tran


def delay_cost(worker: WorkerSpec, delay_slots: int) -> float:
    if delay_slots < 0:
        raise ValueError("delay_slots must be >= 0")
    return worker.e_D * delay_slots


def total_cost(
    v1: float,
    *,
    c_move: float,
    c_delay: float,
    c_sense: float,
    c_tran: float,
    tau_move: int,
    tau_delay: int,
    tau_sense: int,
    tau_tran: int,
) -> tuple[float, CostBreakdown]:
    """Monetized total cost and the assembled breakdown; V1 scales cost only."""
    parts = CostBreakdown(
        c_move=c_move,
        c_delay=c_delay,
        c_sense=c_sense,
        c_tran=c_tran,
        tau_move=tau_move,
        tau_delay=tau_delay,
        tau_sense=tau_sense,
        tau_tran=tau_tran,
    )
    return v1 * parts.total_cost, parts


def aoi(tau_sense: int, tau_tran: int) -> tuple[float, float]:
    """Total and average age of information for one delivery.

    age sums the instantaneous age over every slot from generation to
    reception; AGE is the per-slot average (tau+1)/2, which the closed form
    below reproduces exactly (checked against direct summation).
    """
    if tau_sense < 0 or tau_tran < 0:
        raise ValueError("service times must be >= 0")
    tau = tau_sense + tau_tran
    age = (tau * tau + tau) / 2.0
    avg = (tau + 1) / 2.0
    return age, avg


def service_quality(ages: list[float]) -> float:
    """Quality as the sum of inverse average ages; fresher data counts more."""
    for a in ages:
        if a <= 0:
            raise ValueError(f"average age must be positive, got {a}")
    return sum(1.0 / a for a in ages)


def worker_utility(
    outcomes: list[tuple[OutcomeRecord, ContractTerm]], v1: float
) -> float:
    """Realized worker utility: payments for fulfilled contracts minus full
    costs, minus sunk cost plus compensation for every breach."""
    total = 0.0
    for record, term in outcomes:
        if record.completed:
            total += term.payment - v1 * record.realized.total_cost
        else:
            total -= v1 * record.partial_cost + term.compensation
    return total


def task_utility(
    quality_terms: list[float],
    settlements: list[tuple[bool, ContractTerm]],
    v2: float,
    v3: float,
) -> float:
    """Realized task utility.

    ``quality_terms`` are 1/AGE values for workers that actually delivered
    (breaching workers contribute no data, a deliberate deviation from the
    unconditional sum in the source formulation); the settlement term credits
    compensation for breaches and debits payments for completions, weighted
    by V3.
    """
    quality = v2 * sum(quality_terms)
    settle = sum(
        (term.compensation if not completed else -term.payment)
        for completed, term in settlements
    )
    return quality + v3 * settle


# --- Expectation forms --------------------------------------------------------


def expected_tau_transmit(
    worker: WorkerSpec, task: TaskSpec, params: UncertaintyParams, bandwidth: float
) -> int:
    """Transmission slots at the mean channel value, on the slot grid."""
    return tau_transmit(worker, task, params.mean_channel, bandwidth)


def expected_cost(
    worker: WorkerSpec,
    task: TaskSpec,
    tau_move: int,
    params: UncertaintyParams,
    econ: EconomicConfig,
) -> float:
    """Expected monetized cost of one (worker, task) engagement.

    Deterministic movement and sensing costs, plus the expected delay cost
    (one Bernoulli trial per movement slot) and the transmission cost at the
    mean channel value, all scaled by V1.
    """
    a = params.delay_prob(worker.id, task.id)
    tau_sense = ceil_slots(task.data_size / worker.f) if task.data_size > 0 else 0
    tau_tran = expected_tau_transmit(worker, task, params, econ.bandwidth)
    c = (
        worker.e_m * tau_move
        + worker.e_D * tau_move * a * params.mean_delay
        + worker.e_c * tau_sense
        + worker.e_t * tau_tran
    )
    return econ.v1 * c


def expected_age(
    worker: WorkerSpec, task: TaskSpec, params: UncertaintyParams, bandwidth: float
) -> float:
    """Expected average AoI: (tau_sense + E[tau_tran] + 1) / 2."""
    tau_sense = ceil_slots(task.data_size / worker.f) if task.data_size > 0 else 0
    return (tau_sense + expected_tau_transmit(worker, task, params, bandwidth) + 1) / 2.0


def expected_pair_worker_utility(
    e_beta: float, price: float, e_cost: float, compensation: float
) -> float:
    """E[beta](p - E[c]) - (1 - E[beta])(E[c_part] + q) with E[c_part] := E[c]."""
    return e_beta * (price - e_cost) - (1.0 - e_beta) * (e_cost + compensation)


def expected_worker_utility(
    pairs: list[tuple[float, float, float, float]]
) -> float:
    """Sum of expected_pair_worker_utility over (e_beta, price, e_cost, q) tuples."""
    return sum(expected_pair_worker_utility(*p) for p in pairs)


def expected_pair_task_utility(
    inv_age: float, e_beta: float, price: float, compensation: float, v2: float, v3: float
) -> float:
    """Per-worker term of the expected task utility.

    The quality term 1/E[AGE] is credited unconditionally (the expectation
    form keeps it regardless of E[beta]); the settlement term weights
    compensation by the breach probability and payment by the completion
    probability.
    """
    return v2 * inv_age + v3 * ((1.0 - e_beta) * compensation - e_beta * price)


def expected_task_utility(
    pairs: list[tuple[float, float, float, float]], v2: float, v3: float
) -> float:
    """Sum over (inv_age, e_beta, price, q) tuples of the matched workers."""
    return sum(expected_pair_task_utility(ia, eb, p, q, v2, v3) for ia, eb, p, q in pairs)
