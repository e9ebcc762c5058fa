"""Benchmark mechanisms, per-replication metrics, and the Monte-Carlo harness.

Mechanisms share one transaction executor and differ only in how contracts
come to exist:

* ``stagewise``          - futures matching up front, spot recruitment backup,
                           all risk gates and window feasibility active;
* ``conspot``            - no futures stage: every task enters the spot pool
                           at its opening time and recruitment is negotiated
                           per timeslot;
* ``conspot-no-td``      - conspot with window-blind candidate evaluation;
* ``stagewise-no-td``    - stagewise with window-blind candidate evaluation;
* ``stagewise-no-risk``  - stagewise with all five risk gates disabled;
* ``quality-p``          - per-timeslot greedy selection by expected data
                           freshness under budget, no negotiation, no
                           compensation terms;
* ``random-m``           - per-timeslot random affordable selection, ditto.

Interaction accounting: negotiation messages are counted by the matching
algorithms; quality-p/random-m charge two messages per considered candidate
(willingness + selection notice).  DIP samples one latency per message
(uplink for worker-sent, downlink for owner-sent) and ECIP charges a
per-message device power draw times that latency.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .economics import expected_age
from .matching import FtConfig, MatchedPair, Matching, MessageLog, run_ft_m2m
from .model import Scenario
from .planner import AcoConfig
from .rng import SeededRng
from .sim import Engine, EngineConfig, HeuristicPolicy, TransactionLog
from .spot import SpotMarketState, SpotTask, SpotWorker, StConfig, run_st_m2m

MECHANISMS = (
    "stagewise",
    "conspot",
    "conspot-no-td",
    "stagewise-no-td",
    "stagewise-no-risk",
    "quality-p",
    "random-m",
)

MIN_SPOT_PRICE = 0.1


@dataclass(frozen=True)
class InteractionCostModel:
    uplink_ms: tuple[float, float] = (0.5, 11.0)
    downlink_ms: tuple[float, float] = (0.5, 4.0)
    worker_power_w: tuple[float, float] = (0.2, 0.4)
    owner_power_w: tuple[float, float] = (6.0, 20.0)

    def sample(self, messages: MessageLog, rng: np.random.Generator) -> tuple[float, float]:
        """(total delay ms, total energy J) over all logged messages."""
        n_up = messages.worker_sent
        n_down = messages.owner_sent
        up = rng.uniform(*self.uplink_ms, size=n_up) if n_up else np.array([])
        down = rng.uniform(*self.downlink_ms, size=n_down) if n_down else np.array([])
        p_up = rng.uniform(*self.worker_power_w, size=n_up) if n_up else np.array([])
        p_down = rng.uniform(*self.owner_power_w, size=n_down) if n_down else np.array([])
        dip_ms = float(up.sum() + down.sum())
        ecip_j = float((p_up * up).sum() + (p_down * down).sum()) * 1e-3
        return dip_ms, ecip_j


@dataclass(frozen=True)
class MetricsRow:
    mechanism: str
    replication: int
    seed: int
    quality: float
    task_utility: float
    worker_utility: float
    welfare: float
    podsq: float
    potaw: float
    rt_ms: float
    ni: int
    dip_ms: float
    ecip_j: float


@dataclass(frozen=True)
class MetricStat:
    mean: float
    std: float


@dataclass(frozen=True)
class MetricsReport:
    mechanism: str
    n: int
    stats: dict[str, MetricStat]


@dataclass(frozen=True)
class RunConfig:
    aco: AcoConfig = AcoConfig(ants=10, iter_max=30)
    interaction: InteractionCostModel = InteractionCostModel()
    # tasks stay recruitable while quality is unmet, budget remains, and the
    # window is open


def compute_row(
    mechanism: str,
    replication: int,
    seed: int,
    scenario: Scenario,
    log: TransactionLog,
    rt_ms: float,
    interaction: InteractionCostModel,
    rng: np.random.Generator,
) -> MetricsRow:
    econ = scenario.econ
    quality = sum(log.task_quality.values())
    task_utility = 0.0
    for t in scenario.tasks:
        settle = 0.0
        for out in log.outcomes:
            if out.task_id != t.id:
                continue
            settle += out.compensation if not out.completed else -out.price
        task_utility += econ.v2 * log.task_quality.get(t.id, 0.0) + econ.v3 * settle
    worker_utility = 0.0
    for out in log.outcomes:
        if out.completed:
            worker_utility += out.price - econ.v1 * out.costs.total_cost
        else:
            worker_utility -= econ.v1 * out.partial_cost + out.compensation
    accepted = len(log.outcomes)
    abandoned = sum(1 for o in log.outcomes if not o.completed)
    potaw = abandoned / accepted if accepted else 0.0
    met = sum(
        1
        for t in scenario.tasks
        if log.task_quality.get(t.id, 0.0) >= t.quality_demand - 1e-12
    )
    podsq = met / len(scenario.tasks) if scenario.tasks else 0.0
    dip_ms, ecip_j = interaction.sample(log.messages, rng)
    return MetricsRow(
        mechanism=mechanism,
        replication=replication,
        seed=seed,
        quality=quality,
        task_utility=task_utility,
        worker_utility=worker_utility,
        welfare=task_utility + worker_utility,
        podsq=podsq,
        potaw=potaw,
        rt_ms=rt_ms,
        ni=log.messages.total,
        dip_ms=dip_ms,
        ecip_j=ecip_j,
    )


def _spot_pool(engine: Engine, t: int, *, all_tasks: bool) -> list[SpotTask]:
    pool = []
    for tid in sorted(engine.tasks):
        rt = engine.tasks[tid]
        open_for_recruitment = rt.in_spot_pool or (all_tasks and t >= rt.spec.t_b)
        if not open_for_recruitment:
            continue
        if t >= rt.spec.t_e:
            continue
        if rt.quality >= rt.spec.quality_demand - 1e-12:
            continue
        if rt.residual < MIN_SPOT_PRICE:
            continue
        pool.append(SpotTask(task=rt.spec, residual_budget=rt.residual))
    return pool


def _idle_workers(engine: Engine) -> list[SpotWorker]:
    out = []
    for wid in sorted(engine.workers):
        rt = engine.workers[wid]
        if rt.idle:
            out.append(SpotWorker(worker=rt.spec, loc=rt.loc))
    return out


def make_st_m2m_hook(st_config: StConfig, *, all_tasks: bool, static_cache: dict):
    """Spot recruitment hook: negotiate for the pool, append matches to paths."""

    def hook(t: int, engine: Engine) -> None:
        pool = _spot_pool(engine, t, all_tasks=all_tasks)
        if not pool:
            return
        workers = _idle_workers(engine)
        if not workers:
            return
        if all(
            (sw.worker.id, st.task.id) in engine.pair_history
            for sw in workers
            for st in pool
        ):
            return
        state = SpotMarketState(t=t, tasks=pool, workers=workers)
        result = run_st_m2m(
            state,
            engine.scenario,
            st_config,
            static_cache=static_cache,
            exclude=engine.pair_history,
        )
        engine.log.messages.merge(result.messages)
        for (_, __), pair in sorted(result.pairs.items()):
            engine.add_spot_contract(pair)

    return hook


def make_simple_hook(kind: str, seed: int):
    """quality-p / random-m: per-timeslot selection without negotiation.

    Both charge 2 messages per considered candidate.  Selections carry no
    compensation term (nothing was negotiated, so a breach costs the worker
    nothing beyond its sunk effort).
    """
    rng = SeededRng(seed).substream("simple", kind)

    def hook(t: int, engine: Engine) -> None:
        scenario = engine.scenario
        open_tasks = []
        for tid in sorted(engine.tasks):
            rt = engine.tasks[tid]
            if rt.spec.t_b <= t < rt.spec.t_e and rt.quality < rt.spec.quality_demand:
                if rt.residual >= MIN_SPOT_PRICE:
                    open_tasks.append(rt)
        idle = [w for w in _idle_workers(engine)]
        if not open_tasks or not idle:
            return
        available = {sw.worker.id: sw for sw in idle}
        for rt in open_tasks:
            tid = rt.spec.id
            candidates = [
                sw
                for sw in available.values()
                if (sw.worker.id, tid) not in engine.pair_history
            ]
            if not candidates:
                continue
            engine.log.messages.proposals += len(candidates)  # willingness
            engine.log.messages.replies += len(candidates)  # selection notice
            if kind == "quality":
                ranked = sorted(
                    candidates,
                    key=lambda sw: (
                        -1.0
                        / expected_age(
                            sw.worker, rt.spec, scenario.uncertainty, scenario.econ.bandwidth
                        ),
                        sw.worker.id,
                    ),
                )
            else:
                ranked = list(candidates)
                perm = rng.permutation(len(ranked))
                ranked = [ranked[i] for i in perm]
            for sw in ranked:
                price = scenario.econ.p_desire[(sw.worker.id, tid)]
                if rt.residual < price:
                    continue
                pair = MatchedPair(
                    worker_id=sw.worker.id,
                    task_id=tid,
                    price=price,
                    compensation=0.0,
                    stage="spot",
                    t_ini=float(t),
                    tau_move=0,
                    e_beta=1.0,
                    e_cost=0.0,
                    inv_age=1.0
                    / expected_age(
                        sw.worker, rt.spec, scenario.uncertainty, scenario.econ.bandwidth
                    ),
                )
                engine.add_spot_contract(pair)
                available.pop(sw.worker.id, None)
                break  # one recruit per task per slot

    return hook


def run_mechanism_once(
    name: str,
    scenario: Scenario,
    seed: int,
    config: RunConfig | None = None,
) -> tuple[TransactionLog, float]:
    """One replication of one mechanism; returns (log, decision wall-time ms)."""
    if name not in MECHANISMS:
        raise ValueError(f"unknown mechanism {name!r}; expected one of {MECHANISMS}")
    config = config or RunConfig()
    root = SeededRng(seed)
    window_override = name.endswith("no-td")
    risk_gates = not name.endswith("no-risk")
    static_cache: dict = {}

    started = time.perf_counter()
    if name.startswith("stagewise"):
        ft = FtConfig(
            aco=config.aco, window_override=window_override, risk_gates=risk_gates
        )
        matching = run_ft_m2m(scenario, ft, seed=int(root.substream("ft").integers(0, 2**62)))
    else:
        matching = Matching()

    if name in ("quality-p", "random-m"):
        hook = make_simple_hook(
            "quality" if name == "quality-p" else "random",
            int(root.substream("simple").integers(0, 2**62)),
        )
    else:
        st_config = StConfig(window_override=window_override, risk_gates=risk_gates)
        hook = make_st_m2m_hook(
            st_config,
            all_tasks=name.startswith("conspot"),
            static_cache=static_cache,
        )

    engine = Engine(
        scenario,
        matching,
        seed=int(root.substream("engine").integers(0, 2**62)),
        config=EngineConfig(policy=HeuristicPolicy(), spot_hook=hook),
    )
    log = engine.run()
    rt_ms = (time.perf_counter() - started) * 1e3
    return log, rt_ms


def run_mechanism(
    name: str,
    scenario: Scenario,
    seeds: list[int],
    config: RunConfig | None = None,
) -> tuple[list[MetricsRow], list[TransactionLog]]:
    config = config or RunConfig()
    rows = []
    logs = []
    for rep, seed in enumerate(seeds):
        log, rt_ms = run_mechanism_once(name, scenario, seed, config)
        metric_rng = SeededRng(seed).substream("interaction", name)
        rows.append(
            compute_row(name, rep, seed, scenario, log, rt_ms, config.interaction, metric_rng)
        )
        logs.append(log)
    return rows, logs


def aggregate(rows: list[MetricsRow]) -> MetricsReport:
    if not rows:
        raise ValueError("no rows to aggregate")
    name = rows[0].mechanism
    stats = {}
    for metric in (
        "quality",
        "task_utility",
        "worker_utility",
        "welfare",
        "podsq",
        "potaw",
        "rt_ms",
        "ni",
        "dip_ms",
        "ecip_j",
    ):
        values = [float(getattr(r, metric)) for r in rows]
        std = statistics.pstdev(values) if len(values) > 1 else 0.0
        stats[metric] = MetricStat(mean=statistics.fmean(values), std=std)
    return MetricsReport(mechanism=name, n=len(rows), stats=stats)


def run_monte_carlo(
    mechanisms: list[str],
    scenario: Scenario,
    n_replications: int,
    base_seed: int,
    config: RunConfig | None = None,
) -> tuple[list[MetricsRow], dict[str, MetricsReport]]:
    """Paired-seed replications: replication r uses one seed across mechanisms."""
    if n_replications < 1:
        raise ValueError("n_replications must be >= 1")
    root = SeededRng(base_seed)
    seeds = [int(root.substream("rep", r).integers(0, 2**62)) for r in range(n_replications)]
    all_rows: list[MetricsRow] = []
    reports: dict[str, MetricsReport] = {}
    for name in mechanisms:
        rows, _ = run_mechanism(name, scenario, seeds, config)
        all_rows.extend(rows)
        reports[name] = aggregate(rows)
    all_rows.sort(key=lambda r: (r.mechanism, r.replication))
    return all_rows, reports
