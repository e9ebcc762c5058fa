"""Ant-colony path pre-planning over the worker-rooted task graph.

Each worker sees a complete directed graph whose vertices are its start
position plus every task.  An ant walk extends a path one feasible task at a
time; feasibility at expected clock ``c`` requires

* the expected completion (arrival clamped to the task's start time, plus
  sensing and transmission at the mean channel) to fit before the closing
  time,
* the asked payment to cover the expected cost (worker rationality),
* the utility-risk and completion-risk gates at the current asked payment.

Edge desirability follows the transition rule: pheromone^eps1 x
distance-heuristic^eps2 x (1/window width)^eps3 x (1/wait)^eps4.  As printed,
the rule rewards raw distance; the conventional inverse-distance heuristic is
the default, with ``inverse_distance_heuristic=False`` retained for verbatim
fidelity.  Waits are floored to one slot before exponentiation.

Pheromone evaporates everywhere each iteration and the iteration-best path
deposits its total expected utility on each of its edges; a strictly positive
floor keeps every edge reachable.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .economics import ceil_slots, expected_age, expected_cost, expected_pair_worker_utility
from .model import Location, Scenario, TaskSpec, WorkerSpec
from .stochastic import (
    CompletionModel,
    _delay_total_distribution,
    risk_gate_completion,
    risk_gate_worker_utility,
)

ETA_FLOOR = 1e-6  # meters; avoids 1/0 on co-located vertices


@dataclass(frozen=True)
class AcoConfig:
    eps1: float = 1.0
    eps2: float = 2.0
    eps3: float = 1.0
    eps4: float = 1.0
    ants: int = 20
    iter_max: int = 200
    theta: float = 0.3
    tau0: float = 1.0
    inverse_distance_heuristic: bool = True
    tau_floor_frac: float = 1e-6
    # task counts at or below this run exhaustive search instead of sampling;
    # the stability/equilibrium verifiers rely on exact preferences
    exact_threshold: int = 0

    def __post_init__(self):
        if not (0.0 < self.theta < 1.0):
            raise ValueError("theta must be in (0,1)")
        for name in ("eps1", "eps2", "eps3", "eps4", "tau0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.ants < 1 or self.iter_max < 1:
            raise ValueError("ants and iter_max must be >= 1")


@dataclass(frozen=True)
class PairEval:
    """Everything the market needs to know about one prospective engagement."""

    tau_move: int
    e_cost: float
    e_beta: float
    inv_age: float
    arrival: float
    completion: float
    price: float
    compensation: float
    feasible_window: bool
    covers_cost: bool
    gate_utility: bool
    gate_completion: bool
    e_utility: float

    @property
    def feasible(self) -> bool:
        return (
            self.feasible_window
            and self.covers_cost
            and self.gate_utility
            and self.gate_completion
        )


@dataclass(frozen=True)
class PathStop:
    task_id: int
    depart: float  # expected clock when leaving the previous vertex
    eval: PairEval


@dataclass(frozen=True)
class PlannedPath:
    stops: tuple[PathStop, ...]
    utility: float

    @property
    def task_ids(self) -> tuple[int, ...]:
        return tuple(s.task_id for s in self.stops)


class PlannerContext:
    """Per-worker evaluation cache shared by ant walks, exhaustive search,
    matching proposals, and the property verifiers.

    ``window_override=True`` replaces every task window with (0, horizon)
    during evaluation (the *\\TD benchmark variants); ``risk_gates=False``
    drops gates (23c)/(23d) (the *\\Risk variant).  Execution-time windows are
    never overridden here, only decision-time ones.
    """

    def __init__(
        self,
        scenario: Scenario,
        worker: WorkerSpec,
        *,
        start: Location | None = None,
        start_clock: float = 0.0,
        window_override: bool = False,
        risk_gates: bool = True,
        rho_utility: float | None = None,
        rho_completion: float | None = None,
        static_cache: dict | None = None,
    ):
        self.scenario = scenario
        self.worker = worker
        self.start = start if start is not None else worker.loc0
        self.start_clock = start_clock
        self.window_override = window_override
        self.risk_gates = risk_gates
        econ = scenario.econ
        self.rho_utility = econ.rho2 if rho_utility is None else rho_utility
        self.rho_completion = econ.rho3 if rho_completion is None else rho_completion
        self.tasks = {t.id: t for t in scenario.tasks}
        self._loc: dict[int | None, Location] = {None: self.start}
        for t in scenario.tasks:
            self._loc[t.id] = t.loc
        self._tau_move: dict[tuple[int | None, int], int] = {}
        self._dist: dict[tuple[int | None, int], float] = {}
        self._e_cost: dict[tuple[int | None, int], float] = {}
        self._e_beta: dict[tuple[int, int, int], float] = {}
        self._delay_cdf: dict[tuple[float, int], object] = {}
        self._evals: dict[tuple, PairEval] = {}
        # (tau_sense, tau_tran at mean channel, inv_age, channel groups);
        # shareable across contexts for the same scenario
        self._static = static_cache if static_cache is not None else {}

    def window(self, task: TaskSpec) -> tuple[int, int]:
        if self.window_override:
            return 0, self.scenario.horizon
        return task.t_b, task.t_e

    def distance(self, m: int | None, n: int) -> float:
        key = (m, n)
        if key not in self._dist:
            self._dist[key] = self._loc[m].distance(self._loc[n])
        return self._dist[key]

    def tau_move(self, m: int | None, n: int) -> int:
        key = (m, n)
        if key not in self._tau_move:
            self._tau_move[key] = ceil_slots(self.distance(m, n) / self.worker.v)
        return self._tau_move[key]

    def task_static(self, n: int) -> tuple[int, int, float, dict[int, int]]:
        key = (self.worker.id, n)
        if key not in self._static:
            task = self.tasks[n]
            u = self.scenario.uncertainty
            econ = self.scenario.econ
            tau_sense = ceil_slots(task.data_size / self.worker.f)
            tau_tran = ceil_slots(
                task.data_size
                / (econ.bandwidth * math.log2(1.0 + self.worker.e_t * u.mean_channel))
            )
            inv_age = 1.0 / expected_age(self.worker, task, u, econ.bandwidth)
            groups: dict[int, int] = {}
            for z in range(u.mu1, u.mu2 + 1):
                tt = (
                    ceil_slots(
                        task.data_size
                        / (econ.bandwidth * math.log2(1.0 + self.worker.e_t * z))
                    )
                    if task.data_size > 0
                    else 0
                )
                groups[tt] = groups.get(tt, 0) + 1
            self._static[key] = (tau_sense, tau_tran, inv_age, groups)
        return self._static[key]

    def e_cost(self, m: int | None, n: int) -> float:
        key = (m, n)
        if key not in self._e_cost:
            self._e_cost[key] = expected_cost(
                self.worker,
                self.tasks[n],
                self.tau_move(m, n),
                self.scenario.uncertainty,
                self.scenario.econ,
            )
        return self._e_cost[key]

    def _cdf(self, a: float, tau_move: int):
        """Cumulative distribution of the total extra delay over tau_move
        slots, long enough to cover every slack the horizon admits."""
        key = (a, tau_move)
        cdf = self._delay_cdf.get(key)
        if cdf is None:
            u = self.scenario.uncertainty
            max_d = self.scenario.horizon + u.t_max
            probe = CompletionModel(
                tau_move=tau_move,
                tau_sense=0,
                deadline_slack=0,
                a=a,
                t_min=u.t_min,
                t_max=u.t_max,
                mu1=0,
                mu2=0,
                data_size=0.0,
                bandwidth=1.0,
                tx_power=1.0,
            )
            cdf = np.cumsum(_delay_total_distribution(probe, max_d)[:-1])
            self._delay_cdf[key] = cdf
        return cdf

    def e_beta(self, m: int | None, n: int, clock: float) -> float:
        task = self.tasks[n]
        t_b, t_e = self.window(task)
        slack = math.floor(t_e - clock + 1e-9)
        tau_move = self.tau_move(m, n)
        key = (tau_move, n, slack)
        hit = self._e_beta.get(key)
        if hit is not None:
            return hit
        u = self.scenario.uncertainty
        tau_sense, _, _, groups = self.task_static(n)
        budget_base = slack - tau_move - tau_sense
        if budget_base < 0:
            prob = 0.0
        else:
            cdf = self._cdf(u.delay_prob(self.worker.id, n), tau_move)
            width = t_e - t_b
            total = 0.0
            last = len(cdf) - 1
            for tau_t, count in groups.items():
                if tau_sense + tau_t > width:
                    continue
                budget = budget_base - tau_t
                if budget < 0:
                    continue
                total += count * cdf[min(budget, last)]
            prob = float(total / (u.mu2 - u.mu1 + 1))
        self._e_beta[key] = prob
        return prob

    def eval_pair(self, m: int | None, n: int, clock: float, price: float) -> PairEval:
        key = (m, n, clock, price)
        cached = self._evals.get(key)
        if cached is not None:
            return cached
        task = self.tasks[n]
        econ = self.scenario.econ
        u = self.scenario.uncertainty
        t_b, t_e = self.window(task)
        tau_move = self.tau_move(m, n)
        tau_sense, tau_tran, inv_age, _ = self.task_static(n)
        e_delay = tau_move * u.delay_prob(self.worker.id, n) * u.mean_delay
        arrival = clock + tau_move + e_delay
        # the expected clock is kept on the slot grid (conservative ceil),
        # which also keeps the evaluation caches dense
        completion = float(ceil_slots(max(arrival, t_b))) + tau_sense + tau_tran
        e_cost = self.e_cost(m, n)
        e_beta = self.e_beta(m, n, clock)
        compensation = econ.q_frac * price
        e_utility = expected_pair_worker_utility(e_beta, price, e_cost, compensation)
        if self.risk_gates:
            gate_u = risk_gate_worker_utility(e_utility, econ.u_min, self.rho_utility)
            gate_c = risk_gate_completion(e_beta, self.rho_completion)
        else:
            gate_u = gate_c = True
        ev = PairEval(
            tau_move=tau_move,
            e_cost=e_cost,
            e_beta=e_beta,
            inv_age=inv_age,
            arrival=arrival,
            completion=completion,
            price=price,
            compensation=compensation,
            feasible_window=completion <= t_e + 1e-9,
            covers_cost=price >= e_cost - 1e-9,
            gate_utility=gate_u,
            gate_completion=gate_c,
            e_utility=e_utility,
        )
        self._evals[key] = ev
        return ev

    def wait(self, m: int | None, n: int, clock: float) -> float:
        task = self.tasks[n]
        t_b, _ = self.window(task)
        u = self.scenario.uncertainty
        e_delay = self.tau_move(m, n) * u.delay_prob(self.worker.id, n) * u.mean_delay
        return max(t_b - (clock + self.tau_move(m, n) + e_delay), 0.0)

    def feasible_set(
        self,
        m: int | None,
        clock: float,
        visited: set[int],
        prices: dict[int, float],
    ) -> list[int]:
        """Unvisited tasks the worker can still rationally plan for from (m, clock)."""
        out = []
        for n in sorted(self.tasks):
            if n in visited or n not in prices:
                continue
            if self.eval_pair(m, n, clock, prices[n]).feasible:
                out.append(n)
        return out


def transition_probabilities(
    ctx: PlannerContext,
    pheromone: np.ndarray,
    vertex_index: dict[int | None, int],
    m: int | None,
    feasible: list[int],
    clock: float,
    config: AcoConfig,
) -> np.ndarray:
    """Normalized next-task distribution over the feasible set (state transition rule)."""
    if not feasible:
        raise ValueError("transition over an empty feasible set")
    mi = vertex_index[m]
    weights = np.empty(len(feasible))
    for k, n in enumerate(feasible):
        eta = max(ctx.distance(m, n), ETA_FLOOR)
        if config.inverse_distance_heuristic:
            eta = 1.0 / eta
        width = max(ctx.tasks[n].t_e - ctx.tasks[n].t_b, 1)
        wait = max(ctx.wait(m, n, clock), 1.0)
        weights[k] = (
            pheromone[mi, vertex_index[n]] ** config.eps1
            * eta**config.eps2
            * (1.0 / width) ** config.eps3
            * (1.0 / wait) ** config.eps4
        )
    total = weights.sum()
    if total <= 0.0 or not np.isfinite(total):
        # pheromone floor keeps this from zero in practice; fall back to uniform
        return np.full(len(feasible), 1.0 / len(feasible))
    return weights / total


def update_pheromone(
    pheromone: np.ndarray,
    best_edges: list[tuple[int, int]],
    best_utility: float,
    theta: float,
    tau_floor: float,
) -> None:
    """Evaporate everywhere, deposit the best path's total utility on its edges."""
    pheromone *= 1.0 - theta
    for mi, ni in best_edges:
        pheromone[mi, ni] += best_utility
    np.maximum(pheromone, tau_floor, out=pheromone)


class _WalkCache:
    """Per-(vertex, clock) candidate table shared by all ants of one run.

    Prices are fixed within a run, so feasibility and the non-pheromone
    heuristic factors only depend on (m, clock); ants share path prefixes
    heavily and hit this cache almost always.
    """

    def __init__(self, ctx: PlannerContext, prices: dict[int, float], config: AcoConfig):
        self.ctx = ctx
        self.prices = prices
        self.config = config
        self.table: dict[tuple[int | None, float], tuple[list[int], list[float]]] = {}

    def candidates(self, m: int | None, clock: float) -> tuple[list[int], list[float]]:
        key = (m, clock)
        hit = self.table.get(key)
        if hit is not None:
            return hit
        ctx, config = self.ctx, self.config
        feasible: list[int] = []
        heur: list[float] = []
        for n in sorted(ctx.tasks):
            if n not in self.prices:
                continue
            ev = ctx.eval_pair(m, n, clock, self.prices[n])
            if not ev.feasible:
                continue
            eta = max(ctx.distance(m, n), ETA_FLOOR)
            if config.inverse_distance_heuristic:
                eta = 1.0 / eta
            width = max(ctx.tasks[n].t_e - ctx.tasks[n].t_b, 1)
            wait = max(ctx.window(ctx.tasks[n])[0] - ev.arrival, 1.0)
            feasible.append(n)
            if config.eps2 == 2.0:
                h = eta * eta
            elif config.eps2 == 1.0:
                h = eta
            else:
                h = eta**config.eps2
            heur.append(
                h * (1.0 / width) ** config.eps3 * (1.0 / wait) ** config.eps4
            )
        self.table[key] = (feasible, heur)
        return feasible, heur


def _walk(
    cache: _WalkCache,
    pheromone: list[list[float]],
    vertex_index: dict[int | None, int],
    config: AcoConfig,
    rng: np.random.Generator,
) -> PlannedPath:
    ctx = cache.ctx
    m: int | None = None
    clock = ctx.start_clock
    visited: set[int] = set()
    stops: list[PathStop] = []
    utility = 0.0
    eps1 = config.eps1
    plain_tau = eps1 == 1.0
    while True:
        feasible, heur = cache.candidates(m, clock)
        row = pheromone[vertex_index[m]]
        weights = []
        total = 0.0
        for k, n in enumerate(feasible):
            if n in visited:
                weights.append(0.0)
                continue
            tau = row[vertex_index[n]]
            w = (tau if plain_tau else tau**eps1) * heur[k]
            weights.append(w)
            total += w
        if total <= 0.0:
            break
        # roulette selection without numpy overhead
        pick = rng.random() * total
        acc = 0.0
        chosen = -1
        for k, w in enumerate(weights):
            acc += w
            if pick <= acc and w > 0.0:
                chosen = k
                break
        if chosen < 0:
            chosen = max(range(len(weights)), key=lambda k: weights[k])
        n = feasible[chosen]
        ev = ctx.eval_pair(m, n, clock, cache.prices[n])
        stops.append(PathStop(task_id=n, depart=clock, eval=ev))
        utility += ev.e_utility
        visited.add(n)
        clock = ev.completion
        m = n
    return PlannedPath(stops=tuple(stops), utility=utility)


def evaluate_sequence(
    ctx: PlannerContext, prices: dict[int, float], order: tuple[int, ...]
) -> PlannedPath:
    """Re-evaluate a task order at current prices, dropping infeasible stops."""
    clock = ctx.start_clock
    m: int | None = None
    stops: list[PathStop] = []
    utility = 0.0
    for n in order:
        if n not in prices:
            continue
        ev = ctx.eval_pair(m, n, clock, prices[n])
        if not ev.feasible:
            continue
        stops.append(PathStop(task_id=n, depart=clock, eval=ev))
        utility += ev.e_utility
        clock = ev.completion
        m = n
    return PlannedPath(stops=tuple(stops), utility=utility)


def best_path_exhaustive(ctx: PlannerContext, prices: dict[int, float]) -> PlannedPath:
    """Depth-first search over all feasible task sequences (oracle / exact mode)."""
    best_stops: list[PathStop] = []
    best_utility = 0.0

    def recurse(m: int | None, clock: float, visited: set[int], stops: list[PathStop], utility: float):
        nonlocal best_stops, best_utility
        if utility > best_utility + 1e-12:
            best_stops, best_utility = list(stops), utility
        for n in ctx.feasible_set(m, clock, visited, prices):
            ev = ctx.eval_pair(m, n, clock, prices[n])
            stops.append(PathStop(task_id=n, depart=clock, eval=ev))
            visited.add(n)
            recurse(n, ev.completion, visited, stops, utility + ev.e_utility)
            visited.remove(n)
            stops.pop()

    recurse(None, ctx.start_clock, set(), [], 0.0)
    return PlannedPath(stops=tuple(best_stops), utility=best_utility)


def run_aco(
    ctx: PlannerContext,
    prices: dict[int, float],
    config: AcoConfig,
    seed: int,
) -> PlannedPath:
    """Best pre-planned path for one worker at the given asked payments.

    Deterministic under (ctx inputs, prices, config, seed).  The best-so-far
    path is monotone non-decreasing in utility across iterations; ties keep
    the earliest find.  Task counts at or below ``config.exact_threshold``
    bypass sampling for exhaustive search.
    """
    task_ids = sorted(set(ctx.tasks) & set(prices))
    if not task_ids:
        return PlannedPath(stops=(), utility=0.0)
    if len(task_ids) <= config.exact_threshold:
        return best_path_exhaustive(ctx, prices)

    vertex_index: dict[int | None, int] = {None: 0}
    for k, tid in enumerate(task_ids, start=1):
        vertex_index[tid] = k
    size = len(task_ids) + 1
    pheromone = np.full((size, size), config.tau0)
    tau_floor = config.tau_floor_frac * config.tau0
    rng = np.random.Generator(np.random.PCG64(seed))
    cache = _WalkCache(ctx, prices, config)

    best = PlannedPath(stops=(), utility=0.0)
    for _ in range(config.iter_max):
        phero_rows = pheromone.tolist()
        iter_best: PlannedPath | None = None
        for _ in range(config.ants):
            path = _walk(cache, phero_rows, vertex_index, config, rng)
            if iter_best is None or path.utility > iter_best.utility + 1e-12:
                iter_best = path
        assert iter_best is not None
        if iter_best.stops and iter_best.utility > best.utility + 1e-12:
            best = iter_best
        edges = []
        m: int | None = None
        for stop in iter_best.stops:
            edges.append((vertex_index[m], vertex_index[stop.task_id]))
            m = stop.task_id
        update_pheromone(pheromone, edges, iter_best.utility, config.theta, tau_floor)
    return best


def all_feasible_sequences(
    ctx: PlannerContext, prices: dict[int, float], max_len: int | None = None
) -> list[tuple[tuple[int, ...], float]]:
    """Every feasible sequence with its utility (verifier helper, small inputs)."""
    out: list[tuple[tuple[int, ...], float]] = []

    def recurse(m, clock, visited, seq, utility):
        out.append((tuple(seq), utility))
        if max_len is not None and len(seq) >= max_len:
            return
        for n in ctx.feasible_set(m, clock, visited, prices):
            ev = ctx.eval_pair(m, n, clock, prices[n])
            visited.add(n)
            seq.append(n)
            recurse(n, ev.completion, visited, seq, utility + ev.e_utility)
            seq.pop()
            visited.remove(n)

    recurse(None, ctx.start_clock, set(), [], 0.0)
    return out


def best_utility_for_task_set(
    ctx: PlannerContext, prices: dict[int, float], task_set: frozenset[int]
) -> float | None:
    """Max expected utility over orderings serving exactly ``task_set``.

    None when no feasible ordering serves the whole set.  Used by the
    blocking-coalition verifier; exponential in |task_set|.
    """
    best: float | None = None
    for order in itertools.permutations(sorted(task_set)):
        clock = ctx.start_clock
        m: int | None = None
        utility = 0.0
        ok = True
        for n in order:
            ev = ctx.eval_pair(m, n, clock, prices[n])
            if not ev.feasible:
                ok = False
                break
            utility += ev.e_utility
            clock = ev.completion
            m = n
        if ok and (best is None or utility > best):
            best = utility
    return best
