"""Brute-force property verifiers for matching outputs.

These re-derive every quantity from scenario data (the same evaluation
machinery the mechanism uses, exercised through fresh contexts) and check:

* blocking coalitions - a worker plus task set where the worker strictly
  prefers the set to its current assignment AND every task in the set
  strictly gains by recruiting the worker, either after evicting up to
  ``max_eviction`` of its current workers (Type 1) or within its leftover
  budget (Type 2);
* individual rationality - budgets respected, every matched pair's payment
  covers its expected cost, and all risk gates hold at the contracted terms;
* competitive equilibrium - payments cover expected costs, each task's
  selection is knapsack-optimal among its final-round proposers, and no
  affordable willing worker is left unmatched.

Deviations must respect the deviators' own constraints: coalition pairs must
be feasible and pass the worker-side gates at their final asked prices,
task-side deviations must fit the budget and keep the quality gate; tasks
that withdrew under the quality gate are out of the market and excluded.
Searches refuse oversized instances (they are exponential by design).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .economics import (
    expected_cost,
    expected_pair_task_utility,
    expected_pair_worker_utility,
)
from .knapsack import Candidate, select_workers_brute_force, selection_key
from .matching import Matching
from .model import Scenario
from .planner import PairEval, PlannerContext
from .stochastic import (
    risk_gate_completion,
    risk_gate_task_quality,
    risk_gate_worker_utility,
)

TOL = 1e-9


class InstanceTooLarge(ValueError):
    """Brute-force search refused: instance exceeds the configured limits."""


@dataclass(frozen=True)
class BlockingCoalition:
    kind: int  # 1 = with evictions, 2 = within leftover budget
    worker_id: int
    tasks: tuple[int, ...]
    evictions: tuple[tuple[int, tuple[int, ...]], ...]
    worker_utility_gain: float


@dataclass(frozen=True)
class Violation:
    kind: str
    subject: str
    detail: str


@dataclass(frozen=True)
class VerifierFlags:
    window_override: bool = False
    risk_gates: bool = True
    rho_utility: float | None = None
    rho_completion: float | None = None
    spot_clock: float = 0.0
    spot_locs: dict | None = None  # worker_id -> Location for spot matchings
    budgets: dict | None = None  # task_id -> capacity override (spot residuals)
    # futures coalitions walk task sequences; spot engagements are evaluated
    # independently from the worker's current state (additive utilities)
    sequential_paths: bool = True


def _context(scenario: Scenario, worker, flags: VerifierFlags) -> PlannerContext:
    start = None
    if flags.spot_locs is not None:
        start = flags.spot_locs.get(worker.id)
    return PlannerContext(
        scenario,
        worker,
        start=start,
        start_clock=flags.spot_clock,
        window_override=flags.window_override,
        risk_gates=flags.risk_gates,
        rho_utility=flags.rho_utility,
        rho_completion=flags.rho_completion,
    )


def _budget(scenario: Scenario, tid: int, flags: VerifierFlags) -> float:
    if flags.budgets is not None and tid in flags.budgets:
        return flags.budgets[tid]
    return scenario.task(tid).budget


def best_plan_for_set(
    ctx: PlannerContext,
    prices: dict[int, float],
    task_set: frozenset[int],
    sequential: bool = True,
) -> tuple[float, dict[int, PairEval]] | None:
    """Max-utility feasible way to serve exactly ``task_set`` (None if none).

    Sequential mode searches orderings with the clock advancing between
    stops; additive mode evaluates each engagement independently from the
    start state.
    """
    if not sequential:
        utility = 0.0
        evals: dict[int, PairEval] = {}
        for n in sorted(task_set):
            ev = ctx.eval_pair(None, n, ctx.start_clock, prices[n])
            if not ev.feasible:
                return None
            evals[n] = ev
            utility += ev.e_utility
        return utility, evals
    best: tuple[float, dict[int, PairEval]] | None = None
    for order in itertools.permutations(sorted(task_set)):
        clock = ctx.start_clock
        m: int | None = None
        utility = 0.0
        evals = {}
        feasible = True
        for n in order:
            ev = ctx.eval_pair(m, n, clock, prices[n])
            if not ev.feasible:
                feasible = False
                break
            evals[n] = ev
            utility += ev.e_utility
            clock = ev.completion
            m = n
        if feasible and (best is None or utility > best[0]):
            best = (utility, evals)
    return best


def _current_worker_utility(
    ctx: PlannerContext, matching: Matching, wid: int, sequential: bool = True
) -> float:
    """Expected utility of the signed engagements, re-evaluated from scratch."""
    total = 0.0
    clock = ctx.start_clock
    m: int | None = None
    for tid in matching.tasks_of(wid):
        pair = matching.pairs[(wid, tid)]
        if sequential:
            ev = ctx.eval_pair(m, tid, clock, pair.price)
            clock = ev.completion
            m = tid
        else:
            ev = ctx.eval_pair(None, tid, ctx.start_clock, pair.price)
        total += ev.e_utility
    return total


def _pair_price(matching: Matching, scenario: Scenario, wid: int, tid: int) -> float:
    if (wid, tid) in matching.final_prices:
        return matching.final_prices[(wid, tid)]
    return scenario.econ.p_desire[(wid, tid)]


def _task_gain(pair_like, econ) -> float:
    return expected_pair_task_utility(
        pair_like.inv_age, pair_like.e_beta, pair_like.price, pair_like.compensation,
        econ.v2, econ.v3,
    )


@dataclass(frozen=True)
class _HypPair:
    inv_age: float
    e_beta: float
    price: float
    compensation: float


def find_blocking_coalitions(
    matching: Matching,
    scenario: Scenario,
    *,
    max_workers: int = 8,
    max_tasks: int = 6,
    max_eviction: int = 3,
    flags: VerifierFlags | None = None,
) -> list[BlockingCoalition]:
    flags = flags or VerifierFlags()
    econ = scenario.econ
    if len(scenario.workers) > max_workers or len(scenario.tasks) > max_tasks:
        raise InstanceTooLarge(
            f"{len(scenario.workers)} workers x {len(scenario.tasks)} tasks exceeds "
            f"{max_workers} x {max_tasks}"
        )
    found: list[BlockingCoalition] = []
    for worker in sorted(scenario.workers, key=lambda w: w.id):
        wid = worker.id
        ctx = _context(scenario, worker, flags)
        prices = {
            t.id: _pair_price(matching, scenario, wid, t.id) for t in scenario.tasks
        }
        current = _current_worker_utility(ctx, matching, wid, flags.sequential_paths)
        market = (
            set(flags.budgets) if flags.budgets is not None else {t.id for t in scenario.tasks}
        )
        eligible = [
            t.id
            for t in scenario.tasks
            if t.id in market
            and t.id not in matching.withdrawn
            and wid not in matching.workers_of(t.id)
        ]
        for r in range(1, len(eligible) + 1):
            for combo in itertools.combinations(eligible, r):
                plan = best_plan_for_set(
                    ctx, prices, frozenset(combo), flags.sequential_paths
                )
                if plan is None:
                    continue
                utility, evals = plan
                if utility <= current + TOL:
                    continue
                # Type 2: every task gains within its leftover budget
                type2_ok = True
                for tid in combo:
                    if not _task_improves(
                        matching, scenario, tid, wid, evals[tid], (), flags
                    ):
                        type2_ok = False
                        break
                if type2_ok:
                    found.append(
                        BlockingCoalition(
                            kind=2,
                            worker_id=wid,
                            tasks=combo,
                            evictions=tuple((tid, ()) for tid in combo),
                            worker_utility_gain=utility - current,
                        )
                    )
                    continue
                # Type 1: every task gains after evicting some non-empty set
                evictions = []
                type1_ok = True
                for tid in combo:
                    ev_set = _find_eviction(
                        matching, scenario, tid, wid, evals[tid], max_eviction, flags
                    )
                    if ev_set is None:
                        type1_ok = False
                        break
                    evictions.append((tid, ev_set))
                if type1_ok:
                    found.append(
                        BlockingCoalition(
                            kind=1,
                            worker_id=wid,
                            tasks=combo,
                            evictions=tuple(evictions),
                            worker_utility_gain=utility - current,
                        )
                    )
    return found


def _task_improves(
    matching: Matching,
    scenario: Scenario,
    tid: int,
    wid: int,
    new_eval: PairEval,
    evicted: tuple[int, ...],
    flags: VerifierFlags,
) -> bool:
    econ = scenario.econ
    members = matching.workers_of(tid)
    kept = [w for w in members if w not in evicted]
    current_gain = sum(_task_gain(matching.pairs[(w, tid)], econ) for w in members)
    new_pair = _HypPair(
        inv_age=new_eval.inv_age,
        e_beta=new_eval.e_beta,
        price=new_eval.price,
        compensation=new_eval.compensation,
    )
    deviated_gain = sum(
        _task_gain(matching.pairs[(w, tid)], econ) for w in kept
    ) + _task_gain(new_pair, econ)
    total_price = sum(matching.pairs[(w, tid)].price for w in kept) + new_eval.price
    if total_price > _budget(scenario, tid, flags) + TOL:
        return False
    if flags.risk_gates and flags.budgets is None:
        # futures-stage deviations must keep the task's own quality gate
        quality = sum(matching.pairs[(w, tid)].inv_age for w in kept) + new_eval.inv_age
        if not risk_gate_task_quality(
            quality, scenario.task(tid).quality_demand, econ.rho1
        ):
            return False
    return deviated_gain > current_gain + TOL


def _find_eviction(
    matching: Matching,
    scenario: Scenario,
    tid: int,
    wid: int,
    new_eval: PairEval,
    max_eviction: int,
    flags: VerifierFlags,
) -> tuple[int, ...] | None:
    members = matching.workers_of(tid)
    for size in range(1, min(max_eviction, len(members)) + 1):
        for evicted in itertools.combinations(members, size):
            if _task_improves(matching, scenario, tid, wid, new_eval, evicted, flags):
                return evicted
    return None


def check_individual_rationality(
    matching: Matching, scenario: Scenario, flags: VerifierFlags | None = None
) -> list[Violation]:
    flags = flags or VerifierFlags()
    econ = scenario.econ
    rho_u = econ.rho2 if flags.rho_utility is None else flags.rho_utility
    rho_c = econ.rho3 if flags.rho_completion is None else flags.rho_completion
    violations: list[Violation] = []
    for task in scenario.tasks:
        if flags.budgets is not None and task.id not in flags.budgets:
            continue
        members = matching.workers_of(task.id)
        total = sum(matching.pairs[(w, task.id)].price for w in members)
        if total > _budget(scenario, task.id, flags) + TOL:
            violations.append(
                Violation(
                    "budget",
                    f"task {task.id}",
                    f"payments {total:.4f} exceed budget {_budget(scenario, task.id, flags):.4f}",
                )
            )
        if flags.risk_gates and flags.budgets is None and members:
            quality = sum(matching.pairs[(w, task.id)].inv_age for w in members)
            if not risk_gate_task_quality(quality, task.quality_demand, econ.rho1):
                violations.append(
                    Violation(
                        "quality-gate",
                        f"task {task.id}",
                        f"E[Q]={quality:.4f} fails gate for Q_D={task.quality_demand:.4f}",
                    )
                )
    for (wid, tid), pair in sorted(matching.pairs.items()):
        worker = scenario.worker(wid)
        e_cost = expected_cost(
            worker, scenario.task(tid), pair.tau_move, scenario.uncertainty, econ
        )
        if pair.price < e_cost - TOL:
            violations.append(
                Violation(
                    "price-below-cost",
                    f"pair ({wid},{tid})",
                    f"price {pair.price:.4f} < expected cost {e_cost:.4f}",
                )
            )
        if flags.risk_gates:
            e_util = expected_pair_worker_utility(
                pair.e_beta, pair.price, e_cost, pair.compensation
            )
            if not risk_gate_worker_utility(e_util, econ.u_min, rho_u):
                violations.append(
                    Violation(
                        "utility-gate",
                        f"pair ({wid},{tid})",
                        f"E[U]={e_util:.4f} fails gate",
                    )
                )
            if not risk_gate_completion(pair.e_beta, rho_c):
                violations.append(
                    Violation(
                        "completion-gate",
                        f"pair ({wid},{tid})",
                        f"Pr(complete)={pair.e_beta:.4f} fails gate",
                    )
                )
    return violations


def check_competitive_equilibrium(
    matching: Matching, scenario: Scenario, flags: VerifierFlags | None = None
) -> list[Violation]:
    flags = flags or VerifierFlags()
    econ = scenario.econ
    violations: list[Violation] = []
    for (wid, tid), pair in sorted(matching.pairs.items()):
        e_cost = expected_cost(
            scenario.worker(wid), scenario.task(tid), pair.tau_move, scenario.uncertainty, econ
        )
        if e_cost > pair.price + TOL:
            violations.append(
                Violation(
                    "cost-coverage",
                    f"pair ({wid},{tid})",
                    f"expected cost {e_cost:.4f} > price {pair.price:.4f}",
                )
            )
    for task in scenario.tasks:
        tid = task.id
        if tid in matching.withdrawn:
            continue
        if flags.budgets is not None and tid not in flags.budgets:
            continue
        proposals = matching.final_proposals.get(tid, [])
        if not proposals:
            continue
        candidates = [
            Candidate(p.worker_id, p.price, p.gain(econ.v2, econ.v3, econ.q_frac))
            for p in sorted(proposals, key=lambda p: p.worker_id)
        ]
        budget = _budget(scenario, tid, flags)
        optimal = select_workers_brute_force(candidates, budget)
        selected = tuple(sorted(matching.workers_of(tid)))
        opt_gain = selection_key(candidates, optimal)[0]
        sel_gain = selection_key(candidates, selected)[0] if set(selected) <= {
            c.worker_id for c in candidates
        } else float("-inf")
        if sel_gain < opt_gain - TOL:
            violations.append(
                Violation(
                    "selection-suboptimal",
                    f"task {tid}",
                    f"selected gain {sel_gain:.6f} < optimal {opt_gain:.6f}",
                )
            )
        residual = budget - sum(matching.pairs[(w, tid)].price for w in selected)
        for prop in proposals:
            if prop.worker_id in selected:
                continue
            gain = prop.gain(econ.v2, econ.v3, econ.q_frac)
            if gain > TOL and prop.price <= residual + TOL:
                violations.append(
                    Violation(
                        "leftover-budget",
                        f"task {tid}",
                        f"residual {residual:.4f} can afford willing worker "
                        f"{prop.worker_id} at {prop.price:.4f} with gain {gain:.6f}",
                    )
                )
    return violations


def expected_social_welfare(matching: Matching, scenario: Scenario) -> float:
    """Sum of both sides' expected utilities over the signed contracts."""
    econ = scenario.econ
    total = 0.0
    for pair in matching.pairs.values():
        total += expected_pair_worker_utility(
            pair.e_beta, pair.price, pair.e_cost, pair.compensation
        )
        total += _task_gain(pair, econ)
    return total
