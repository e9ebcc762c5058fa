"""Spot-stage temporary recruitment (onsite many-to-many matching).

Structurally the futures negotiation with three differences: workers pick
their interest set directly from the spot pool by gate-checking each task
from their *current* position and timeslot (no path pre-planning), the
task-side knapsack capacity is the residual budget at the current timeslot,
and there is no post-termination quality gate.  Prices restart from the
desired asks at every invocation; the rejected-price decrement carries no
risk-gate check (the candidate set is re-gated at the new price next round,
which is what keeps matched pairs rational).

Each task in a worker's interest set is evaluated independently from the
worker's current state; recruited tasks are appended to the worker's path
and any that turn out mutually infeasible are resolved by the en-route
policy during execution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .economics import expected_pair_worker_utility
from .knapsack import Candidate, select_workers_knapsack
from .matching import MatchedPair, Matching, MessageLog, Proposal, grid_ceil
from .model import Location, PairKey, Scenario, TaskSpec, WorkerSpec
from .planner import PlannerContext


@dataclass(frozen=True)
class SpotTask:
    task: TaskSpec
    residual_budget: float


@dataclass(frozen=True)
class SpotWorker:
    worker: WorkerSpec
    loc: Location


@dataclass
class SpotMarketState:
    """Spot market view at one timeslot: who seeks, who serves, what matched."""

    t: int
    tasks: list[SpotTask] = field(default_factory=list)
    workers: list[SpotWorker] = field(default_factory=list)
    result: Matching | None = None


@dataclass(frozen=True)
class StConfig:
    window_override: bool = False
    risk_gates: bool = True
    max_rounds: int = 10_000


def run_st_m2m(
    state: SpotMarketState,
    scenario: Scenario,
    config: StConfig | None = None,
    static_cache: dict | None = None,
    exclude: set[PairKey] | None = None,
) -> Matching:
    """Negotiate temporary contracts at timeslot ``state.t``; fills ``state.result``.

    ``exclude`` lists (worker, task) pairs that already traded (active or
    settled); those are never re-proposed.
    """
    config = config or StConfig()
    econ = scenario.econ
    exclude = exclude or set()
    t = state.t
    spot_tasks = {st.task.id: st for st in state.tasks}
    contexts: dict[int, PlannerContext] = {}
    for sw in state.workers:
        contexts[sw.worker.id] = PlannerContext(
            scenario,
            sw.worker,
            start=sw.loc,
            start_clock=float(t),
            window_override=config.window_override,
            risk_gates=config.risk_gates,
            rho_utility=econ.rho4,
            rho_completion=econ.rho5,
            static_cache=static_cache,
        )

    prices: dict[PairKey, float] = {
        (sw.worker.id, tid): econ.p_desire[(sw.worker.id, tid)]
        for sw in state.workers
        for tid in spot_tasks
    }
    messages = MessageLog()
    worker_ids = sorted(contexts)
    proposals_by_task: dict[int, list[Proposal]] = {}
    selections: dict[int, tuple[int, ...]] = {}
    rounds = 0

    while True:
        rounds += 1
        if rounds > config.max_rounds:
            raise RuntimeError(f"spot matching failed to converge within {config.max_rounds} rounds")

        proposals_by_task = {tid: [] for tid in spot_tasks}
        for wid in worker_ids:
            ctx = contexts[wid]
            for tid in sorted(spot_tasks):
                if (wid, tid) in exclude:
                    continue
                ev = ctx.eval_pair(None, tid, float(t), prices[(wid, tid)])
                if not ev.feasible:
                    continue
                proposals_by_task[tid].append(
                    Proposal(
                        worker_id=wid,
                        task_id=tid,
                        price=prices[(wid, tid)],
                        e_beta=ev.e_beta,
                        e_cost=ev.e_cost,
                        inv_age=ev.inv_age,
                        tau_move=ev.tau_move,
                        t_ini=float(t),
                    )
                )
                messages.proposals += 1

        selections = {}
        for tid, props in proposals_by_task.items():
            candidates = [
                Candidate(p.worker_id, p.price, p.gain(econ.v2, econ.v3, econ.q_frac))
                for p in sorted(props, key=lambda p: p.worker_id)
            ]
            selections[tid] = select_workers_knapsack(
                candidates, spot_tasks[tid].residual_budget
            )
            messages.replies += len(props)

        changed = False
        for tid, props in proposals_by_task.items():
            accepted = set(selections[tid])
            for prop in props:
                wid = prop.worker_id
                if wid in accepted:
                    continue
                floor = grid_ceil(prop.e_cost)
                current = prices[(wid, tid)]
                if current <= floor + 1e-9:
                    continue
                prices[(wid, tid)] = round(max(current - econ.dp, floor), 10)
                changed = True
                messages.price_updates += 1

        if not changed:
            break

    matching = Matching(rounds=rounds, messages=messages, final_prices=dict(prices))
    matching.final_proposals = {
        tid: sorted(props, key=lambda p: p.worker_id)
        for tid, props in proposals_by_task.items()
    }
    for tid in sorted(spot_tasks):
        props = {p.worker_id: p for p in proposals_by_task.get(tid, [])}
        for wid in selections.get(tid, ()):
            prop = props[wid]
            matching.pairs[(wid, tid)] = MatchedPair(
                worker_id=wid,
                task_id=tid,
                price=prop.price,
                compensation=econ.q_frac * prop.price,
                stage="spot",
                t_ini=float(t),
                tau_move=prop.tau_move,
                e_beta=prop.e_beta,
                e_cost=prop.e_cost,
                inv_age=prop.inv_age,
            )
            matching.by_task.setdefault(tid, []).append(wid)
    for wid in worker_ids:
        # execution order: earliest closing time first, then id
        mine = sorted(
            (tid for (w, tid) in matching.pairs if w == wid),
            key=lambda tid: (spot_tasks[tid].task.t_e, tid),
        )
        if mine:
            matching.by_worker[wid] = mine
    for tid in matching.by_task:
        matching.by_task[tid].sort()
    matching.check_consistency()
    state.result = matching
    return matching
