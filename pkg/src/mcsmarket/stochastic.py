"""Uncertainty machinery: samplers, completion-scenario enumeration, risk gates.

A task-completion scenario (TCS) is one realization of (delay count X, delay
durations Y_1..Y_X, delay-free slot count X', channel value Z).  One Bernoulli
delay trial fires per movement timeslot; durations are uniform on
{t_min..t_max}; the channel is uniform on the integer grid {mu1..mu2}.  The
completion probability sums, over all TCS, the scenario weight

    a^X (1-a)^X' / ((mu2-mu1+1) (t_max-t_min+1)^X)

restricted to scenarios where movement + delays + sensing + transmission at Z
fit inside the deadline slack (with arrival clamped to the task's start time,
which adds the side condition that the service itself fits in the window).

Three evaluation modes are provided:

* ``enumerate``  - exact, refuses above the movement-slot cap (default 8),
* ``monte_carlo`` - vectorized sampling estimate, authoritative above the cap,
* ``exact``      - same sum as ``enumerate`` computed by convolving the per-
  slot delay distribution and grouping channel values; polynomial-time, no
  cap.  Planner and matching gates use this mode.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .economics import ceil_slots

ENUMERATION_CAP = 8
MONTE_CARLO_SAMPLES = 100_000


class EnumerationCapExceeded(ValueError):
    """tau_move exceeds the literal-enumeration cap; use monte_carlo or exact."""


@dataclass(frozen=True)
class Tcs:
    """One task-completion scenario (durations listed per delayed slot)."""

    delays: int  # X
    durations: tuple[int, ...]
    delay_free: int  # X'
    channel: int  # Z


@dataclass(frozen=True)
class CompletionModel:
    """Inputs to Pr(task completed in time) for one (worker, task) engagement.

    ``deadline_slack`` is the whole-slot budget from departure to the task's
    closing time; ``service_window`` (closing minus start time) caps the
    post-arrival service when the worker may have to wait for the window to
    open; None disables that side condition.
    """

    tau_move: int
    tau_sense: int
    deadline_slack: int
    a: float
    t_min: int
    t_max: int
    mu1: int
    mu2: int
    data_size: float
    bandwidth: float
    tx_power: float
    service_window: int | None = None

    def tau_tran(self, gamma: float) -> int:
        if self.data_size <= 0:
            return 0
        return ceil_slots(self.data_size / (self.bandwidth * math.log2(1.0 + self.tx_power * gamma)))


def sample_delay(
    rng: np.random.Generator, a: float, t_min: int, t_max: int
) -> tuple[bool, int]:
    """One Bernoulli(a) delay trial; duration uniform on {t_min..t_max} if it fires."""
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"delay probability {a} outside [0,1]")
    if rng.random() < a:
        return True, int(rng.integers(t_min, t_max + 1))
    return False, 0


def sample_channel(rng: np.random.Generator, mu1: int, mu2: int) -> int:
    if mu1 > mu2:
        raise ValueError(f"channel range [{mu1}, {mu2}] inverted")
    return int(rng.integers(mu1, mu2 + 1))


def expectations(
    a: float, t_min: int, t_max: int, mu1: int, mu2: int
) -> tuple[float, float, float]:
    """(E[delay indicator], E[delay duration], E[channel])."""
    return a, (t_min + t_max) / 2.0, (mu1 + mu2) / 2.0


def iter_tcs(model: CompletionModel) -> Iterator[tuple[Tcs, float]]:
    """Literal enumeration of every TCS with its probability weight.

    Slots are exchangeable, so scenarios are keyed by the delayed-slot count
    and the ordered duration tuple; the binomial factor accounts for which
    slots fired.  Weights over the full iteration sum to exactly 1.
    """
    n_channels = model.mu2 - model.mu1 + 1
    dur_range = model.t_max - model.t_min + 1
    for z in range(model.mu1, model.mu2 + 1):
        for x in range(model.tau_move + 1):
            base = (
                math.comb(model.tau_move, x)
                * model.a**x
                * (1.0 - model.a) ** (model.tau_move - x)
                / n_channels
            )
            if base == 0.0:
                # degenerate a in {0,1}: skip impossible branches
                if (model.a == 0.0 and x > 0) or (model.a == 1.0 and x < model.tau_move):
                    continue
            per_tuple = base / (dur_range**x)
            for durations in itertools.product(
                range(model.t_min, model.t_max + 1), repeat=x
            ):
                yield Tcs(x, durations, model.tau_move - x, z), per_tuple


def _tcs_feasible(model: CompletionModel, tcs: Tcs) -> bool:
    tau_t = model.tau_tran(tcs.channel)
    if model.service_window is not None and model.tau_sense + tau_t > model.service_window:
        return False
    total = model.tau_move + sum(tcs.durations) + model.tau_sense + tau_t
    return total <= model.deadline_slack


def _delay_total_distribution(model: CompletionModel, max_d: int) -> np.ndarray:
    """P(total extra delay = d) for d in 0..max_d, overflow lumped at the end.

    One convolution step per movement slot with the per-slot mixture
    {0 w.p. 1-a, y w.p. a/range}.
    """
    dist = np.zeros(max_d + 2)
    dist[0] = 1.0
    if model.tau_move == 0:
        return dist
    step = np.zeros(max_d + 2)
    step[0] = 1.0 - model.a
    per = model.a / (model.t_max - model.t_min + 1)
    for y in range(model.t_min, model.t_max + 1):
        if y <= max_d:
            step[y] += per
        else:
            step[-1] += per
    for _ in range(model.tau_move):
        new = np.convolve(dist[:-1], step[:-1])
        overflow = dist[-1] + new[max_d + 1 :].sum() + dist[:-1].sum() * step[-1]
        dist = np.zeros(max_d + 2)
        dist[: max_d + 1] = new[: max_d + 1]
        dist[-1] = overflow
    return dist


def channel_groups(model: CompletionModel) -> dict[int, int]:
    """Distinct transmission durations over the channel grid, with multiplicities."""
    groups: dict[int, int] = {}
    for z in range(model.mu1, model.mu2 + 1):
        tau_t = model.tau_tran(z)
        groups[tau_t] = groups.get(tau_t, 0) + 1
    return groups


def completion_probability_from_groups(
    tau_move: int,
    tau_sense: int,
    deadline_slack: int,
    a: float,
    t_min: int,
    t_max: int,
    groups: dict[int, int],
    n_channels: int,
    service_window: int | None,
) -> float:
    """Exact TCS sum with the channel grid pre-grouped by transmission slots."""
    budget_base = deadline_slack - tau_move - tau_sense
    if budget_base < 0:
        return 0.0
    probe = CompletionModel(
        tau_move=tau_move,
        tau_sense=tau_sense,
        deadline_slack=deadline_slack,
        a=a,
        t_min=t_min,
        t_max=t_max,
        mu1=0,
        mu2=n_channels - 1,
        data_size=0.0,
        bandwidth=1.0,
        tx_power=1.0,
    )
    dist = _delay_total_distribution(probe, budget_base)
    cum = np.cumsum(dist[:-1])
    total = 0.0
    for tau_t, count in groups.items():
        if service_window is not None and tau_sense + tau_t > service_window:
            continue
        budget = budget_base - tau_t
        if budget < 0:
            continue
        total += count * cum[min(budget, len(cum) - 1)]
    return float(total / n_channels)


def _exact_probability(model: CompletionModel) -> float:
    return completion_probability_from_groups(
        model.tau_move,
        model.tau_sense,
        model.deadline_slack,
        model.a,
        model.t_min,
        model.t_max,
        channel_groups(model),
        model.mu2 - model.mu1 + 1,
        model.service_window,
    )


def _monte_carlo_probability(model: CompletionModel, n: int, seed: int) -> float:
    rng = np.random.Generator(np.random.PCG64(seed))
    n_channels = model.mu2 - model.mu1 + 1
    tau_t_by_z = np.array([model.tau_tran(z) for z in range(model.mu1, model.mu2 + 1)])
    z_idx = rng.integers(0, n_channels, size=n)
    tau_t = tau_t_by_z[z_idx]
    if model.tau_move > 0:
        fired = rng.random((n, model.tau_move)) < model.a
        durations = rng.integers(model.t_min, model.t_max + 1, size=(n, model.tau_move))
        total_delay = (fired * durations).sum(axis=1)
    else:
        total_delay = np.zeros(n, dtype=int)
    ok = model.tau_move + total_delay + model.tau_sense + tau_t <= model.deadline_slack
    if model.service_window is not None:
        ok &= model.tau_sense + tau_t <= model.service_window
    return float(ok.mean())


def completion_probability(
    model: CompletionModel,
    mode: str = "exact",
    n: int = MONTE_CARLO_SAMPLES,
    seed: int = 0,
    cap: int = ENUMERATION_CAP,
) -> float:
    """Pr(completion in time) under the TCS model.

    ``enumerate`` is the literal exact sum and refuses when tau_move exceeds
    ``cap``; ``exact`` computes the identical sum without the cap;
    ``monte_carlo`` estimates it from ``n`` samples under ``seed``.
    """
    if model.tau_move < 0 or model.tau_sense < 0:
        raise ValueError("model times must be non-negative")
    if mode == "enumerate":
        if model.tau_move > cap:
            raise EnumerationCapExceeded(
                f"tau_move={model.tau_move} exceeds enumeration cap {cap}"
            )
        return _exact_probability(model)
    if mode == "exact":
        return _exact_probability(model)
    if mode == "monte_carlo":
        return _monte_carlo_probability(model, n, seed)
    raise ValueError(f"unknown mode {mode!r}")


def enumerate_probability_literal(model: CompletionModel) -> float:
    """Per-TCS summation; exponential in tau_move, used as a cross-check oracle."""
    return sum(w for tcs, w in iter_tcs(model) if _tcs_feasible(model, tcs))


# --- Risk gates ----------------------------------------------------------------
#
# The source transforms each probabilistic risk constraint through a Markov-
# style bound into a deterministic test on the expectation.  The bound is
# applied in the direction printed there (Pr(U >= u) >= E[U]/u), which is not
# the standard inequality; the gates below implement the printed tests
# verbatim rather than a corrected bound.


def risk_gate_worker_utility(expected_utility: float, u_min: float, rho: float) -> bool:
    """Gate on the risk of an unsatisfying utility: E[U]/u_min >= 1 - rho."""
    if u_min <= 0:
        raise ValueError("u_min must be positive")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho={rho} outside (0,1]")
    return expected_utility / u_min >= 1.0 - rho


def risk_gate_completion(pr_complete: float, rho: float) -> bool:
    """Gate on the risk of failing the task: Pr(beta=1) > 1 - rho (strict)."""
    if not 0.0 <= pr_complete <= 1.0 + 1e-12:
        raise ValueError(f"probability {pr_complete} outside [0,1]")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho={rho} outside (0,1]")
    return pr_complete > 1.0 - rho


def risk_gate_task_quality(expected_quality: float, q_demand: float, rho: float) -> bool:
    """Gate on the risk of undesired quality: E[Q]/Q_D >= 1 - rho."""
    if q_demand <= 0:
        raise ValueError("quality demand must be positive")
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho={rho} outside (0,1]")
    return expected_quality / q_demand >= 1.0 - rho
