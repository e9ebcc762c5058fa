"""Timeslot-level transaction executor.

Runs matched contracts against realized randomness: per-movement-slot delay
draws, a channel draw at each transmission start, en-route continue/abandon
decisions by a pluggable policy, breach settlement (compensation to the
task), and spot-stage recruitment hooks.  Money is conserved exactly: for
every task, initial budget = residual + payments made - compensations
collected, and worker net receipts mirror the task flows.

Timing convention: slot ``t`` occupies [t, t+1).  An engagement that departs
at slot ``c`` and consumes k slots finishes at time c+k; it succeeds iff
c+k <= t_e.  Sensing never starts before the task's opening time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

from .economics import CostBreakdown, aoi, ceil_slots
from .matching import MatchedPair, Matching, MessageLog
from .model import Location, Scenario, TaskSpec, WorkerSpec
from .rng import SeededRng

CONTINUE = 0
ABANDON = 1


@dataclass
class Stop:
    contract: MatchedPair

    @property
    def task_id(self) -> int:
        return self.contract.task_id


@dataclass
class ActiveJob:
    stop: Stop
    task: TaskSpec
    depart_t: int
    move_left: int
    origin: Location | None = None
    move_total: int = 0
    delay_left: int = 0
    move_trial_pending: bool = True
    arrived: bool = False
    sense_left: int = 0
    tran_left: int = 0
    gamma: int | None = None
    started_service: bool = False
    # accrued natural-unit costs and slot counts
    c_move: float = 0.0
    c_delay: float = 0.0
    c_sense: float = 0.0
    c_tran: float = 0.0
    tau_move: int = 0
    tau_delay: int = 0
    tau_sense: int = 0
    tau_tran: int = 0

    def accrued_cost(self) -> float:
        return self.c_move + self.c_delay + self.c_sense + self.c_tran

    def breakdown(self) -> CostBreakdown:
        return CostBreakdown(
            c_move=self.c_move,
            c_delay=self.c_delay,
            c_sense=self.c_sense,
            c_tran=self.c_tran,
            tau_move=self.tau_move,
            tau_delay=self.tau_delay,
            tau_sense=self.tau_sense,
            tau_tran=self.tau_tran,
        )


@dataclass
class WorkerRt:
    spec: WorkerSpec
    loc: Location
    queue: list[Stop] = field(default_factory=list)
    job: ActiveJob | None = None

    @property
    def idle(self) -> bool:
        return self.job is None and not self.queue


@dataclass
class TaskRt:
    spec: TaskSpec
    committed: float = 0.0
    paid: float = 0.0
    collected: float = 0.0
    quality: float = 0.0
    in_spot_pool: bool = False

    @property
    def residual(self) -> float:
        return self.spec.budget - self.paid - self.committed + self.collected


@dataclass(frozen=True)
class PairOutcome:
    worker_id: int
    task_id: int
    stage: str
    completed: bool
    price: float
    compensation: float
    costs: CostBreakdown
    partial_cost: float  # natural units, pre-V1
    resolved_t: int
    quality: float  # 1/AGE delivered, 0 on breach
    abandoned_by_policy: bool


@dataclass
class TransactionLog:
    outcomes: list[PairOutcome] = field(default_factory=list)
    task_paid: dict[int, float] = field(default_factory=dict)
    task_collected: dict[int, float] = field(default_factory=dict)
    task_quality: dict[int, float] = field(default_factory=dict)
    task_residual: dict[int, float] = field(default_factory=dict)
    worker_net: dict[int, float] = field(default_factory=dict)
    messages: MessageLog = field(default_factory=MessageLog)
    spot_recruited: int = 0

    def money_conservation_gap(self, scenario: Scenario) -> float:
        """|sum budgets - (sum residuals + sum worker nets)|; exact zero up to float noise."""
        budgets = sum(t.budget for t in scenario.tasks)
        residuals = sum(self.task_residual.values())
        worker = sum(self.worker_net.values())
        return abs(budgets - (residuals + worker))


@dataclass(frozen=True)
class AgentView:
    """What a policy may observe when deciding for one worker-slot."""

    worker: WorkerSpec
    loc: Location
    t: int
    task: TaskSpec
    contract: MatchedPair
    move_left: int
    delay_left: int
    sense_left: int
    tran_left: int  # expected slots until gamma is drawn, realized after
    started_service: bool
    remaining_path: int
    horizon: int

    @property
    def distance_to_target(self) -> float:
        return self.loc.distance(self.task.loc)

    def projected_completion(self) -> float:
        """Earliest completion time from slot t under current knowledge."""
        travel = self.delay_left + self.move_left
        arrival = self.t + travel
        start = max(arrival, self.task.t_b)
        return start + self.sense_left + self.tran_left


class Policy(Protocol):
    def act(self, view: AgentView) -> int: ...

    def reward(self, worker_id: int, amount: float) -> None: ...

    def job_done(self, worker_id: int, view: AgentView | None) -> None: ...


class HeuristicPolicy:
    """Continue while completion is still projected to fit the window."""

    def act(self, view: AgentView) -> int:
        return CONTINUE if view.projected_completion() <= view.task.t_e else ABANDON

    def reward(self, worker_id: int, amount: float) -> None:  # pragma: no cover
        pass

    def job_done(self, worker_id: int, view: AgentView | None) -> None:  # pragma: no cover
        pass


SpotHook = Callable[[int, "Engine"], None]


@dataclass
class EngineConfig:
    policy: Policy = field(default_factory=HeuristicPolicy)
    spot_hook: SpotHook | None = None


class Engine:
    """One replication: walks the timeslot loop and settles every contract."""

    def __init__(
        self,
        scenario: Scenario,
        matching: Matching,
        seed: int,
        config: EngineConfig | None = None,
    ):
        self.scenario = scenario
        self.config = config or EngineConfig()
        self.rng_root = SeededRng(seed)
        self._delay_rng = self.rng_root.substream("delays")
        self._channel_rng = self.rng_root.substream("channels")
        self.t = 0
        self.workers: dict[int, WorkerRt] = {
            w.id: WorkerRt(spec=w, loc=w.loc0) for w in scenario.workers
        }
        self.tasks: dict[int, TaskRt] = {t.id: TaskRt(spec=t) for t in scenario.tasks}
        self.log = TransactionLog()
        self.log.messages.merge(matching.messages)
        self.pair_history: set[tuple[int, int]] = set()
        for wid, tids in sorted(matching.by_worker.items()):
            rt = self.workers[wid]
            for tid in tids:
                pair = matching.pairs[(wid, tid)]
                rt.queue.append(Stop(contract=pair))
                self.tasks[tid].committed += pair.price
                self.pair_history.add((wid, tid))

    # -- contract lifecycle -----------------------------------------------

    def add_spot_contract(self, pair: MatchedPair) -> None:
        rt = self.workers[pair.worker_id]
        rt.queue.append(Stop(contract=pair))
        self.tasks[pair.task_id].committed += pair.price
        self.pair_history.add((pair.worker_id, pair.task_id))
        self.log.spot_recruited += 1

    def _resolve(self, wid: int, job: ActiveJob, completed: bool, abandoned: bool) -> None:
        worker = self.workers[wid]
        pair = job.stop.contract
        task_rt = self.tasks[pair.task_id]
        task_rt.committed -= pair.price
        if not job.arrived and job.origin is not None and job.move_total > 0:
            # abandoned mid-route: the worker stays where it got to
            frac = job.tau_move / job.move_total
            worker.loc = Location(
                job.origin.lon + frac * (job.task.loc.lon - job.origin.lon),
                job.origin.lat + frac * (job.task.loc.lat - job.origin.lat),
            )
        quality = 0.0
        if completed:
            task_rt.paid += pair.price
            _, avg_age = aoi(job.tau_sense, job.tau_tran)
            quality = 1.0 / avg_age
            task_rt.quality += quality
        else:
            task_rt.collected += pair.compensation
            task_rt.in_spot_pool = True
        self.log.outcomes.append(
            PairOutcome(
                worker_id=wid,
                task_id=pair.task_id,
                stage=pair.stage,
                completed=completed,
                price=pair.price,
                compensation=pair.compensation,
                costs=job.breakdown(),
                partial_cost=0.0 if completed else job.accrued_cost(),
                resolved_t=self.t,
                quality=quality,
                abandoned_by_policy=abandoned,
            )
        )
        worker.job = None

    # -- timeslot mechanics --------------------------------------------------

    def _activate_next(self, wid: int) -> None:
        worker = self.workers[wid]
        if worker.job is not None or not worker.queue:
            return
        stop = worker.queue.pop(0)
        task = self.scenario.task(stop.task_id)
        tau_move = ceil_slots(worker.loc.distance(task.loc) / worker.spec.v)
        worker.job = ActiveJob(
            stop=stop,
            task=task,
            depart_t=self.t,
            move_left=tau_move,
            origin=worker.loc,
            move_total=tau_move,
        )
        if tau_move == 0:
            worker.job.arrived = True
            worker.loc = task.loc
            worker.job.sense_left = ceil_slots(task.data_size / worker.spec.f)

    def _view(self, wid: int) -> AgentView:
        worker = self.workers[wid]
        job = worker.job
        assert job is not None
        if job.arrived and job.started_service and job.gamma is not None:
            tran_left = job.tran_left
        else:
            u = self.scenario.uncertainty
            tran_left = ceil_slots(
                job.task.data_size
                / (
                    self.scenario.econ.bandwidth
                    * math.log2(1.0 + worker.spec.e_t * u.mean_channel)
                )
            )
        sense_left = (
            job.sense_left
            if job.arrived
            else ceil_slots(job.task.data_size / worker.spec.f)
        )
        return AgentView(
            worker=worker.spec,
            loc=worker.loc,
            t=self.t,
            task=job.task,
            contract=job.stop.contract,
            move_left=job.move_left,
            delay_left=job.delay_left,
            sense_left=sense_left,
            tran_left=tran_left,
            started_service=job.started_service,
            remaining_path=len(worker.queue),
            horizon=self.scenario.horizon,
        )

    def _step_worker(self, wid: int) -> None:
        worker = self.workers[wid]
        policy = self.config.policy
        v1 = self.scenario.econ.v1
        if worker.job is None:
            self._activate_next(wid)
        job = worker.job
        if job is None:
            return

        # window already closed: forced breach, no decision left to make
        if self.t >= job.task.t_e:
            policy.reward(wid, -job.stop.contract.compensation)
            self._resolve(wid, job, completed=False, abandoned=False)
            policy.job_done(wid, None)
            return

        view = self._view(wid)
        action = policy.act(view)
        if action == ABANDON:
            policy.reward(wid, -job.stop.contract.compensation)
            self._resolve(wid, job, completed=False, abandoned=True)
            policy.job_done(wid, None)
            return

        u = self.scenario.uncertainty
        spec = worker.spec
        if not job.arrived:
            if job.delay_left > 0:
                job.delay_left -= 1
                job.tau_delay += 1
                job.c_delay += spec.e_D
                policy.reward(wid, -v1 * spec.e_D)
                return
            if job.move_left > 0:
                if job.move_trial_pending:
                    job.move_trial_pending = False
                    a = u.delay_prob(wid, job.task.id)
                    if self._delay_rng.random() < a:
                        duration = int(self._delay_rng.integers(u.t_min, u.t_max + 1))
                        job.delay_left = duration - 1
                        job.tau_delay += 1
                        job.c_delay += spec.e_D
                        policy.reward(wid, -v1 * spec.e_D)
                        return
                job.move_left -= 1
                job.move_trial_pending = True
                job.tau_move += 1
                job.c_move += spec.e_m
                policy.reward(wid, -v1 * spec.e_m)
                if job.move_left == 0:
                    job.arrived = True
                    worker.loc = job.task.loc
                    job.sense_left = ceil_slots(job.task.data_size / spec.f)
                return
            job.arrived = True
            job.sense_left = ceil_slots(job.task.data_size / spec.f)

        # waiting for the window to open costs nothing
        if self.t < job.task.t_b:
            policy.reward(wid, 0.0)
            return

        job.started_service = True
        if job.sense_left > 0:
            job.sense_left -= 1
            job.tau_sense += 1
            job.c_sense += spec.e_c
            policy.reward(wid, -v1 * spec.e_c)
            if job.sense_left == 0 and job.gamma is None:
                job.gamma = int(self._channel_rng.integers(u.mu1, u.mu2 + 1))
                snr = spec.e_t * job.gamma
                job.tran_left = ceil_slots(
                    job.task.data_size / (self.scenario.econ.bandwidth * math.log2(1.0 + snr))
                )
                if job.tran_left == 0:
                    self._finish_if_in_time(wid, job, policy)
            return
        if job.gamma is None:
            # zero-sensing task: draw the channel at first service slot
            job.gamma = int(self._channel_rng.integers(u.mu1, u.mu2 + 1))
            snr = spec.e_t * job.gamma
            job.tran_left = ceil_slots(
                job.task.data_size / (self.scenario.econ.bandwidth * math.log2(1.0 + snr))
            )
        if job.tran_left > 0:
            job.tran_left -= 1
            job.tau_tran += 1
            job.c_tran += spec.e_t
            reward = -v1 * spec.e_t
            if job.tran_left == 0:
                completed = self.t + 1 <= job.task.t_e
                if completed:
                    reward += job.stop.contract.price
                else:
                    reward -= job.stop.contract.compensation
                policy.reward(wid, reward)
                self._resolve(wid, job, completed=completed, abandoned=False)
                policy.job_done(wid, None)
                return
            policy.reward(wid, reward)
            return
        # nothing left to transmit (data_size 0): instantaneous completion
        self._finish_if_in_time(wid, job, policy)

    def _finish_if_in_time(self, wid: int, job: ActiveJob, policy: Policy) -> None:
        completed = self.t + 1 <= job.task.t_e
        policy.reward(
            wid,
            job.stop.contract.price if completed else -job.stop.contract.compensation,
        )
        self._resolve(wid, job, completed=completed, abandoned=False)
        policy.job_done(wid, None)

    def all_resolved(self) -> bool:
        return all(w.job is None and not w.queue for w in self.workers.values())

    def run(self) -> TransactionLog:
        for self.t in range(self.scenario.horizon):
            if self.config.spot_hook is not None:
                self.config.spot_hook(self.t, self)
            for wid in sorted(self.workers):
                self._step_worker(wid)
            if self.all_resolved() and self.config.spot_hook is None:
                break
        self.t = self.scenario.horizon
        # anything still pending at the horizon is a breach
        for wid in sorted(self.workers):
            worker = self.workers[wid]
            if worker.job is not None:
                self.config.policy.reward(wid, -worker.job.stop.contract.compensation)
                self._resolve(wid, worker.job, completed=False, abandoned=False)
                self.config.policy.job_done(wid, None)
            while worker.queue:
                stop = worker.queue.pop(0)
                tau_move = ceil_slots(worker.loc.distance(self.scenario.task(stop.task_id).loc) / worker.spec.v)
                ghost = ActiveJob(
                    stop=stop,
                    task=self.scenario.task(stop.task_id),
                    depart_t=self.t,
                    move_left=tau_move,
                )
                self.config.policy.reward(wid, -stop.contract.compensation)
                self._resolve(wid, ghost, completed=False, abandoned=False)
                self.config.policy.job_done(wid, None)

        for tid, rt in self.tasks.items():
            self.log.task_paid[tid] = rt.paid
            self.log.task_collected[tid] = rt.collected
            self.log.task_quality[tid] = rt.quality
            self.log.task_residual[tid] = rt.residual
        for wid in self.workers:
            net = 0.0
            for out in self.log.outcomes:
                if out.worker_id != wid:
                    continue
                net += out.price if out.completed else -out.compensation
            self.log.worker_net[wid] = net
        return self.log
