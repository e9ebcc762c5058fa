"""Seeded verification suites behind the ``verify`` CLI command.

Each suite runs N independently seeded instances through a mechanism and a
brute-force property checker.  Small instances use the exact planner
(exhaustive best-path search): the stability and equilibrium arguments
presume each worker proposes from its true optimal vector, which the
sampling planner only approximates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .knapsack import Candidate, select_workers_brute_force, select_workers_knapsack, selection_key
from .matching import FtConfig, Matching, run_ft_m2m
from .planner import AcoConfig
from .scenario import GeneratorConfig, benchmark_config, generate_scenario
from .spot import SpotMarketState, SpotTask, SpotWorker, StConfig, run_st_m2m
from .stochastic import (
    CompletionModel,
    completion_probability,
    enumerate_probability_literal,
    iter_tcs,
)
from .economics import aoi
from .rng import SeededRng
from .verifiers import (
    VerifierFlags,
    check_competitive_equilibrium,
    check_individual_rationality,
    find_blocking_coalitions,
)


def small_verify_config(n_tasks: int = 5, n_workers: int = 7) -> GeneratorConfig:
    """Brute-force-checkable market: quality demands reachable by one worker,
    so no task withdraws and releases workers mid-analysis."""
    return benchmark_config(
        n_tasks=n_tasks,
        n_workers=n_workers,
        region=(800.0, 800.0),
        quality_demand=(0.2, 0.5),
    )


EXACT_FT = FtConfig(aco=AcoConfig(ants=8, iter_max=20, exact_threshold=6))


@dataclass
class SuiteReport:
    suite: str
    trials: int
    failures: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def _spot_instance(scenario, seed: int) -> tuple[SpotMarketState, dict, dict]:
    """A fresh spot market over the whole scenario at a seeded timeslot."""
    rng = SeededRng(seed).substream("spot-instance")
    t = int(rng.integers(0, max(scenario.horizon // 4, 1)))
    tasks = [SpotTask(task=task, residual_budget=task.budget) for task in scenario.tasks]
    workers = [SpotWorker(worker=w, loc=w.loc0) for w in scenario.workers]
    budgets = {st.task.id: st.residual_budget for st in tasks}
    locs = {sw.worker.id: sw.loc for sw in workers}
    return SpotMarketState(t=t, tasks=tasks, workers=workers), budgets, locs


def suite_stability(trials: int, base_seed: int, n_tasks: int = 5, n_workers: int = 7) -> SuiteReport:
    report = SuiteReport(suite="stability", trials=trials)
    config = small_verify_config(n_tasks, n_workers)
    for trial in range(trials):
        seed = base_seed + trial
        scenario = generate_scenario(config, seed)
        matching = run_ft_m2m(scenario, EXACT_FT, seed=seed)
        coalitions = find_blocking_coalitions(matching, scenario)
        if coalitions:
            report.failures.append(
                {
                    "trial": trial,
                    "stage": "futures",
                    "seed": seed,
                    "coalitions": [
                        {
                            "kind": c.kind,
                            "worker": c.worker_id,
                            "tasks": list(c.tasks),
                            "gain": c.worker_utility_gain,
                        }
                        for c in coalitions
                    ],
                }
            )
        state, budgets, locs = _spot_instance(scenario, seed)
        spot = run_st_m2m(state, scenario)
        flags = VerifierFlags(
            rho_utility=scenario.econ.rho4,
            rho_completion=scenario.econ.rho5,
            spot_clock=float(state.t),
            spot_locs=locs,
            budgets=budgets,
            sequential_paths=False,
        )
        spot_coalitions = find_blocking_coalitions(spot, scenario, flags=flags)
        if spot_coalitions:
            report.failures.append(
                {
                    "trial": trial,
                    "stage": "spot",
                    "seed": seed,
                    "coalitions": [
                        {
                            "kind": c.kind,
                            "worker": c.worker_id,
                            "tasks": list(c.tasks),
                            "gain": c.worker_utility_gain,
                        }
                        for c in spot_coalitions
                    ],
                }
            )
    return report


def suite_rationality(
    trials: int,
    base_seed: int,
    n_tasks: int = 10,
    n_workers: int = 15,
    matching_override: Matching | None = None,
    scenario_override=None,
) -> SuiteReport:
    report = SuiteReport(suite="rationality", trials=trials)
    config = benchmark_config(n_tasks=n_tasks, n_workers=n_workers)
    for trial in range(trials):
        seed = base_seed + trial
        if scenario_override is not None:
            scenario = scenario_override
            matching = matching_override
            assert matching is not None
        else:
            scenario = generate_scenario(config, seed)
            matching = run_ft_m2m(scenario, FtConfig(), seed=seed)
        violations = check_individual_rationality(matching, scenario)
        if violations:
            report.failures.append(
                {
                    "trial": trial,
                    "seed": seed,
                    "violations": [
                        {"kind": v.kind, "subject": v.subject, "detail": v.detail}
                        for v in violations
                    ],
                }
            )
        if scenario_override is not None:
            break
    return report


def suite_equilibrium(trials: int, base_seed: int, n_tasks: int = 5, n_workers: int = 7) -> SuiteReport:
    report = SuiteReport(suite="equilibrium", trials=trials)
    config = small_verify_config(n_tasks, n_workers)
    for trial in range(trials):
        seed = base_seed + trial
        scenario = generate_scenario(config, seed)
        matching = run_ft_m2m(scenario, EXACT_FT, seed=seed)
        violations = check_competitive_equilibrium(matching, scenario)
        if violations:
            report.failures.append(
                {
                    "trial": trial,
                    "seed": seed,
                    "violations": [
                        {"kind": v.kind, "subject": v.subject, "detail": v.detail}
                        for v in violations
                    ],
                }
            )
    return report


def suite_oracles(trials: int, base_seed: int) -> SuiteReport:
    """Knapsack DP vs subset enumeration, completion probability enumeration
    vs Monte Carlo, TCS weight normalization, AoI closed form vs summation."""
    report = SuiteReport(suite="oracles", trials=trials)
    root = SeededRng(base_seed)

    rng = root.substream("knapsack")
    for trial in range(trials):
        n = int(rng.integers(1, 13))
        candidates = [
            Candidate(
                worker_id=i,
                price=round(float(rng.integers(1, 120)) * 0.1, 10),
                gain=float(rng.integers(-20, 100)) * 0.25,
            )
            for i in range(n)
        ]
        budget = round(float(rng.integers(0, 300)) * 0.1, 10)
        dp = select_workers_knapsack(candidates, budget)
        bf = select_workers_brute_force(candidates, budget)
        if selection_key(candidates, dp) != selection_key(candidates, bf):
            report.failures.append(
                {"oracle": "knapsack", "trial": trial, "dp": list(dp), "bf": list(bf)}
            )

    rng = root.substream("completion")
    for trial in range(trials):
        model = CompletionModel(
            tau_move=int(rng.integers(0, 7)),
            tau_sense=int(rng.integers(0, 4)),
            deadline_slack=int(rng.integers(0, 30)),
            a=float(rng.uniform(0.0, 0.6)),
            t_min=1,
            t_max=int(rng.integers(1, 5)),
            mu1=150,
            mu2=int(rng.integers(150, 220)),
            data_size=float(rng.uniform(1e7, 4e7)),
            bandwidth=6e6,
            tx_power=0.5,
            service_window=int(rng.integers(2, 40)),
        )
        exact = completion_probability(model, mode="enumerate")
        mc = completion_probability(model, mode="monte_carlo", n=100_000, seed=base_seed + trial)
        if abs(exact - mc) > 0.01:
            report.failures.append(
                {"oracle": "completion", "trial": trial, "exact": exact, "mc": mc}
            )

    small = CompletionModel(
        tau_move=4, tau_sense=1, deadline_slack=9, a=0.3, t_min=1, t_max=3,
        mu1=150, mu2=160, data_size=2e7, bandwidth=6e6, tx_power=0.5, service_window=20,
    )
    weight_sum = sum(w for _, w in iter_tcs(small))
    if abs(weight_sum - 1.0) > 1e-9:
        report.failures.append({"oracle": "tcs-normalization", "weight_sum": weight_sum})
    literal = enumerate_probability_literal(small)
    grouped = completion_probability(small, mode="exact")
    if abs(literal - grouped) > 1e-12:
        report.failures.append(
            {"oracle": "tcs-literal-vs-grouped", "literal": literal, "grouped": grouped}
        )

    for tau in range(0, 101):
        age, avg = aoi(tau, 0)
        brute = float(sum(range(tau + 1)))
        if age != brute:
            report.failures.append({"oracle": "aoi", "tau": tau, "closed": age, "brute": brute})
    return report


SUITES = {
    "stability": suite_stability,
    "rationality": suite_rationality,
    "equilibrium": suite_equilibrium,
    "oracles": suite_oracles,
}
