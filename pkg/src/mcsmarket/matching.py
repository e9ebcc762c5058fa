"""Futures-stage many-to-many matching with payment negotiation.

Round structure: every worker re-plans its best task path at the current
asked payments and proposes to each task on it (price, completion
probability, expected data freshness); every task knapsack-selects the
affordable gain-maximizing subset of its proposers and replies; rejected
workers whose price still covers their expected cost lower the ask by the
decrement (never below the cost floor, and never into a price that would
violate the utility-risk gate).  The process terminates when no ask changed,
after which each task either signs contracts (compensation = q_frac x final
price) or withdraws entirely if its quality-risk gate fails.

Asked payments stay on the 0.1-currency grid (cost floors are rounded up to
the grid), which keeps the DP selection exactly optimal.

Message accounting: one unit per directed message - proposal (worker->owner),
accept/reject reply (owner->worker), price-update announcement
(worker->owner).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

from .economics import expected_pair_task_utility, expected_pair_worker_utility
from .knapsack import PRICE_RESOLUTION, Candidate, select_workers_knapsack
from .model import PairKey, Scenario
from .planner import AcoConfig, PlannedPath, PlannerContext, evaluate_sequence, run_aco
from .rng import SeededRng
from .stochastic import risk_gate_task_quality, risk_gate_worker_utility


def grid_ceil(value: float, step: float = PRICE_RESOLUTION) -> float:
    return round(math.ceil(value / step - 1e-9) * step, 10)


@dataclass(frozen=True)
class Proposal:
    worker_id: int
    task_id: int
    price: float
    e_beta: float
    e_cost: float
    inv_age: float
    tau_move: int
    t_ini: float

    def gain(self, v2: float, v3: float, q_frac: float) -> float:
        return expected_pair_task_utility(
            self.inv_age, self.e_beta, self.price, q_frac * self.price, v2, v3
        )


@dataclass(frozen=True)
class MatchedPair:
    worker_id: int
    task_id: int
    price: float
    compensation: float
    stage: str  # "futures" | "spot"
    t_ini: float
    tau_move: int
    e_beta: float
    e_cost: float
    inv_age: float


@dataclass
class MessageLog:
    proposals: int = 0
    replies: int = 0
    price_updates: int = 0

    @property
    def worker_sent(self) -> int:
        return self.proposals + self.price_updates

    @property
    def owner_sent(self) -> int:
        return self.replies

    @property
    def total(self) -> int:
        return self.proposals + self.replies + self.price_updates

    def merge(self, other: "MessageLog") -> None:
        self.proposals += other.proposals
        self.replies += other.replies
        self.price_updates += other.price_updates


@dataclass
class Matching:
    """Mutually consistent task<->worker assignment with signed contract terms."""

    pairs: dict[PairKey, MatchedPair] = field(default_factory=dict)
    by_task: dict[int, list[int]] = field(default_factory=dict)
    by_worker: dict[int, list[int]] = field(default_factory=dict)  # path order
    withdrawn: frozenset[int] = frozenset()
    rounds: int = 0
    messages: MessageLog = field(default_factory=MessageLog)
    final_prices: dict[PairKey, float] = field(default_factory=dict)
    final_proposals: dict[int, list[Proposal]] = field(default_factory=dict)

    def workers_of(self, task_id: int) -> list[int]:
        return self.by_task.get(task_id, [])

    def tasks_of(self, worker_id: int) -> list[int]:
        return self.by_worker.get(worker_id, [])

    def check_consistency(self) -> None:
        for (wid, tid) in self.pairs:
            assert tid in self.by_worker.get(wid, []), f"pair ({wid},{tid}) missing in by_worker"
            assert wid in self.by_task.get(tid, []), f"pair ({wid},{tid}) missing in by_task"
        for tid, wids in self.by_task.items():
            for wid in wids:
                assert (wid, tid) in self.pairs
        for wid, tids in self.by_worker.items():
            for tid in tids:
                assert (wid, tid) in self.pairs

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "rounds": self.rounds,
            "withdrawn": sorted(self.withdrawn),
            "messages": {
                "proposals": self.messages.proposals,
                "replies": self.messages.replies,
                "price_updates": self.messages.price_updates,
            },
            "pairs": [
                {
                    "worker_id": p.worker_id,
                    "task_id": p.task_id,
                    "price": p.price,
                    "compensation": p.compensation,
                    "stage": p.stage,
                    "t_ini": p.t_ini,
                    "tau_move": p.tau_move,
                    "e_beta": p.e_beta,
                    "e_cost": p.e_cost,
                    "inv_age": p.inv_age,
                }
                for _, p in sorted(self.pairs.items())
            ],
            "by_worker": {str(w): tids for w, tids in sorted(self.by_worker.items())},
            "final_prices": [[w, t, p] for (w, t), p in sorted(self.final_prices.items())],
            "final_proposals": {
                str(tid): [
                    {
                        "worker_id": pr.worker_id,
                        "price": pr.price,
                        "e_beta": pr.e_beta,
                        "e_cost": pr.e_cost,
                        "inv_age": pr.inv_age,
                        "tau_move": pr.tau_move,
                        "t_ini": pr.t_ini,
                    }
                    for pr in props
                ]
                for tid, props in sorted(self.final_proposals.items())
            },
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Matching":
        m = cls()
        m.rounds = raw["rounds"]
        m.withdrawn = frozenset(raw["withdrawn"])
        m.messages = MessageLog(**raw["messages"])
        for p in raw["pairs"]:
            pair = MatchedPair(**p)
            m.pairs[(pair.worker_id, pair.task_id)] = pair
            m.by_task.setdefault(pair.task_id, []).append(pair.worker_id)
        m.by_worker = {int(w): list(tids) for w, tids in raw["by_worker"].items()}
        m.final_prices = {(w, t): p for w, t, p in raw["final_prices"]}
        m.final_proposals = {
            int(tid): [Proposal(task_id=int(tid), **pr) for pr in props]
            for tid, props in raw["final_proposals"].items()
        }
        for tid in m.by_task:
            m.by_task[tid].sort()
        return m


def decrement_payment(price: float, dp: float, cost: float) -> float:
    """Next-round ask: one decrement down, clamped at the cost floor."""
    if price < cost - 1e-9:
        raise ValueError(f"price {price} already below cost {cost}")
    return max(price - dp, cost)


@dataclass(frozen=True)
class FtConfig:
    # negotiation re-plans every round, so a light colony plus the warm-start
    # comparison against the previous path is enough; the path-quality
    # acceptance test exercises the full-strength configuration separately
    aco: AcoConfig = AcoConfig(ants=6, iter_max=12)
    window_override: bool = False
    risk_gates: bool = True
    max_rounds: int = 10_000


def run_ft_m2m(
    scenario: Scenario,
    config: FtConfig | None = None,
    seed: int = 0,
    observer=None,
) -> Matching:
    """Run the futures-stage negotiation to convergence and sign contracts.

    ``observer(round, prices, selections)`` is called after each round's
    selection step (diagnostics and round-level property tests).
    """
    config = config or FtConfig()
    econ = scenario.econ
    root = SeededRng(seed)
    contexts = {
        w.id: PlannerContext(
            scenario,
            w,
            window_override=config.window_override,
            risk_gates=config.risk_gates,
        )
        for w in scenario.workers
    }
    prices: dict[PairKey, float] = dict(econ.p_desire)
    # ACO reseeds only when a worker's prices changed, so cached paths are
    # exactly what a recomputation would produce
    price_version: dict[int, int] = {w.id: 0 for w in scenario.workers}
    dirty: dict[int, bool] = {w.id: True for w in scenario.workers}
    paths: dict[int, PlannedPath] = {}
    messages = MessageLog()

    worker_ids = sorted(w.id for w in scenario.workers)
    task_by_id = {t.id: t for t in scenario.tasks}
    proposals_by_task: dict[int, list[Proposal]] = {}
    # tentative acceptances are sticky between rounds (a task only adds under
    # its residual budget); the signing step below repacks each task's final
    # proposer set fresh, which is what the equilibrium property quantifies
    # over.  Together with the standing price chains this caps the round
    # count by the longest single decrement chain plus one.
    sticky: dict[int, dict[int, Proposal]] = {t.id: {} for t in scenario.tasks}
    latest_stats: dict[PairKey, Proposal] = {}
    ever_proposed: set[PairKey] = set()
    frozen: set[PairKey] = set()
    rounds = 0

    while True:
        rounds += 1
        if rounds > config.max_rounds:
            raise RuntimeError(f"matching failed to converge within {config.max_rounds} rounds")

        for wid in worker_ids:
            if dirty[wid] or wid not in paths:
                worker_prices = {
                    t.id: prices[(wid, t.id)] for t in scenario.tasks
                }
                aco_seed = int(
                    root.substream("aco", wid, price_version[wid]).integers(0, 2**62)
                )
                fresh = run_aco(contexts[wid], worker_prices, config.aco, aco_seed)
                prev = paths.get(wid)
                if prev is not None and prev.stops:
                    warm = evaluate_sequence(contexts[wid], worker_prices, prev.task_ids)
                    if warm.utility >= fresh.utility:
                        fresh = warm
                paths[wid] = fresh
                dirty[wid] = False

        proposals_by_task = {t.id: [] for t in scenario.tasks}
        for wid in worker_ids:
            for stop in paths[wid].stops:
                ev = stop.eval
                prop = Proposal(
                    worker_id=wid,
                    task_id=stop.task_id,
                    price=prices[(wid, stop.task_id)],
                    e_beta=ev.e_beta,
                    e_cost=ev.e_cost,
                    inv_age=ev.inv_age,
                    tau_move=ev.tau_move,
                    t_ini=stop.depart,
                )
                proposals_by_task[stop.task_id].append(prop)
                latest_stats[(wid, stop.task_id)] = prop
                ever_proposed.add((wid, stop.task_id))
                messages.proposals += 1
        # a tentative agreement stands on its original basis even when the
        # worker's re-planned path no longer passes through the task
        for tid, kept in sticky.items():
            proposed_here = {p.worker_id for p in proposals_by_task[tid]}
            for wid, old_prop in kept.items():
                if wid not in proposed_here:
                    proposals_by_task[tid].append(old_prop)
                    messages.proposals += 1

        selections: dict[int, tuple[int, ...]] = {}
        for tid, props in proposals_by_task.items():
            proposers = {p.worker_id: p for p in props}
            kept = {
                wid: old for wid, old in sticky[tid].items() if wid in proposers
            }
            residual = task_by_id[tid].budget - sum(p.price for p in kept.values())
            candidates = [
                Candidate(p.worker_id, p.price, p.gain(econ.v2, econ.v3, econ.q_frac))
                for p in sorted(props, key=lambda p: p.worker_id)
                if p.worker_id not in kept
            ]
            added = select_workers_knapsack(candidates, max(residual, 0.0))
            for wid in added:
                kept[wid] = proposers[wid]
            sticky[tid] = kept
            selections[tid] = tuple(sorted(kept))
            messages.replies += len(props)

        if observer is not None:
            observer(rounds, dict(prices), dict(selections))

        changed = False
        for wid in worker_ids:
            for tid in sorted(task_by_id):
                pair = (wid, tid)
                if wid in sticky[tid] or pair in frozen:
                    continue
                stats = latest_stats.get(pair)
                if stats is None:
                    # never proposed: undercut on the start-context basis so
                    # the chain is already run down if the pair joins a path
                    # later (the update is a private ask revision, no message)
                    ctx = contexts[wid]
                    stats = Proposal(
                        worker_id=wid,
                        task_id=tid,
                        price=prices[pair],
                        e_beta=ctx.e_beta(None, tid, 0.0),
                        e_cost=ctx.e_cost(None, tid),
                        inv_age=ctx.task_static(tid)[2],
                        tau_move=ctx.tau_move(None, tid),
                        t_ini=0.0,
                    )
                    latest_stats[pair] = stats
                floor = grid_ceil(stats.e_cost)
                current = prices[pair]
                if current <= floor + 1e-9:
                    # at the declared floor; a later stats refresh must not
                    # reopen the chain (that would unbound the round count)
                    frozen.add(pair)
                    continue
                candidate = round(max(current - econ.dp, floor), 10)
                if candidate >= current:
                    frozen.add(pair)
                    continue
                if config.risk_gates:
                    e_util = expected_pair_worker_utility(
                        stats.e_beta, candidate, stats.e_cost, econ.q_frac * candidate
                    )
                    if not risk_gate_worker_utility(e_util, econ.u_min, econ.rho2):
                        frozen.add(pair)  # a lower ask would breach the gate
                        continue
                prices[pair] = candidate
                price_version[wid] += 1
                dirty[wid] = True
                changed = True
                if pair in ever_proposed:
                    messages.price_updates += 1

        if not changed:
            break

    matching = Matching(rounds=rounds, messages=messages, final_prices=dict(prices))
    matching.final_proposals = {
        tid: sorted(props, key=lambda p: p.worker_id)
        for tid, props in proposals_by_task.items()
    }
    withdrawn = set()
    for tid in sorted(task_by_id):
        props = {p.worker_id: p for p in proposals_by_task.get(tid, [])}
        # signing repack: the final selection is knapsack-optimal over the
        # final round's proposers at terminal prices
        candidates = [
            Candidate(p.worker_id, p.price, p.gain(econ.v2, econ.v3, econ.q_frac))
            for p in sorted(props.values(), key=lambda p: p.worker_id)
        ]
        chosen = select_workers_knapsack(candidates, task_by_id[tid].budget)
        if config.risk_gates:
            e_quality = sum(props[w].inv_age for w in chosen)
            if not risk_gate_task_quality(
                e_quality, task_by_id[tid].quality_demand, econ.rho1
            ):
                withdrawn.add(tid)
                continue
        for wid in chosen:
            prop = props[wid]
            matching.pairs[(wid, tid)] = MatchedPair(
                worker_id=wid,
                task_id=tid,
                price=prop.price,
                compensation=econ.q_frac * prop.price,
                stage="futures",
                t_ini=prop.t_ini,
                tau_move=prop.tau_move,
                e_beta=prop.e_beta,
                e_cost=prop.e_cost,
                inv_age=prop.inv_age,
            )
            matching.by_task.setdefault(tid, []).append(wid)

    for wid in worker_ids:
        ordered = [
            s.task_id for s in paths[wid].stops if (wid, s.task_id) in matching.pairs
        ]
        # signed agreements the final path no longer passes through are
        # appended, earliest closing time first
        extras = sorted(
            (
                tid
                for (w, tid) in matching.pairs
                if w == wid and tid not in ordered
            ),
            key=lambda tid: (task_by_id[tid].t_e, tid),
        )
        ordered.extend(extras)
        if ordered:
            matching.by_worker[wid] = ordered
    for tid in matching.by_task:
        matching.by_task[tid].sort()
    matching.withdrawn = frozenset(withdrawn)
    matching.check_consistency()
    return matching


def convergence_round_bound(scenario: Scenario) -> int:
    """Worst-case round count: one decrement per rejection round per pair,
    from the opening ask down to a non-negative cost floor, plus the final
    no-change round."""
    gaps = [p for p in scenario.econ.p_desire.values()]
    if not gaps:
        return 1
    return math.ceil(max(gaps) / scenario.econ.dp) + 1
