"""Scenario generation, worker-CSV ingestion, and JSON (de)serialization."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .model import EconomicConfig, Location, Scenario, TaskSpec, UncertaintyParams, WorkerSpec
from .rng import SeededRng

SCHEMA_VERSION = 1

Range = tuple[float, float]


class ConfigError(ValueError):
    """A generator range is inverted or otherwise unusable."""


@dataclass(frozen=True)
class GeneratorConfig:
    """Parameter ranges for synthetic scenarios.

    The defaults follow the standard simulation setting, except for
    ``data_size``: the literal value (2-4 Gb over a 6 MHz link) makes every
    transmission take ~50-110 slots, which freezes the market (no ask can
    cover the expected cost and no worker set can reach any quality demand).
    The default is scaled so one transmission takes 1-2 slots, the operating
    point the reported per-task quality numbers imply.  ``table2_config()``
    keeps the literal value.
    """

    n_tasks: int = 10
    n_workers: int = 15
    horizon: int = 100
    region: tuple[float, float] = (1500.0, 1500.0)
    # task ranges
    t_b: tuple[int, int] = (1, 90)
    window_width: tuple[int, int] = (10, 99)
    budget: Range = (30.0, 45.0)
    quality_demand: Range = (10.0, 15.0)
    data_size: Range = (2.0e7, 4.0e7)  # bits
    # worker ranges
    sense_cost: Range = (0.002, 0.006)
    delay_cost: Range = (0.02, 0.05)
    tx_power: Range = (0.45, 0.55)  # watts
    move_cost: Range = (0.02, 0.05)
    sense_rate: Range = (256e6, 512e6)  # bits/timeslot
    speed: Range = (100.0, 200.0)  # m/timeslot
    delay_prob: Range = (0.005, 0.01)
    # uncertainty
    delay_duration: tuple[int, int] = (1, 5)
    channel: tuple[int, int] = (150, 400)
    # economics
    v1: float = 1.0
    v2: float = 10.0
    v3: float = 0.5
    u_min: float = 0.1
    rho: tuple[float, float, float, float, float] = (0.3, 0.3, 0.3, 0.3, 0.3)
    dp: float = 0.5
    p_desire: Range = (8.0, 10.0)
    bandwidth: float = 6e6
    q_frac: float = 0.5

    def validate(self) -> None:
        for name in (
            "t_b",
            "window_width",
            "budget",
            "quality_demand",
            "data_size",
            "sense_cost",
            "delay_cost",
            "tx_power",
            "move_cost",
            "sense_rate",
            "speed",
            "delay_prob",
            "delay_duration",
            "channel",
            "p_desire",
        ):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"range {name} is inverted: [{lo}, {hi}]")
        if self.n_tasks < 0 or self.n_workers < 0 or self.horizon <= 0:
            raise ConfigError("n_tasks/n_workers must be >= 0 and horizon > 0")
        if self.delay_duration[0] < 1:
            raise ConfigError("delay durations must be >= 1 timeslot")

    def to_json(self, path: str | Path) -> None:
        payload = {"schema_version": SCHEMA_VERSION, **asdict(self)}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def from_json(cls, path: str | Path) -> "GeneratorConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        raw.pop("schema_version", None)
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown generator config keys: {sorted(unknown)}")
        for key, value in list(raw.items()):
            if isinstance(value, list):
                raw[key] = tuple(value)
        cfg = cls(**raw)
        cfg.validate()
        return cfg


def benchmark_config(**overrides) -> GeneratorConfig:
    """Default market preset used by the benchmark and verification suites."""
    return replace(GeneratorConfig(), **overrides)


def table2_config(**overrides) -> GeneratorConfig:
    """The literal published parameter set (data size 2-4 Gb)."""
    return replace(GeneratorConfig(data_size=(2.0e9, 4.0e9)), **overrides)


def _grid(value: float, step: float = 0.1) -> float:
    return round(round(value / step) * step, 10)


def generate_scenario(config: GeneratorConfig, seed: int) -> Scenario:
    """Draw a scenario uniformly from the configured ranges.

    Pure function of (config, seed).  Task windows are clamped so
    t_e <= horizon; asks are drawn on the 0.1-currency grid so the knapsack
    DP stays exact; the per-pair delay probability is a single per-worker
    draw applied to all tasks.
    """
    config.validate()
    root = SeededRng(seed)

    rng = root.substream("tasks")
    tasks = []
    for i in range(config.n_tasks):
        t_b = int(rng.integers(config.t_b[0], config.t_b[1] + 1))
        width = int(rng.integers(config.window_width[0], config.window_width[1] + 1))
        t_e = min(t_b + width, config.horizon)
        tasks.append(
            TaskSpec(
                id=i,
                t_b=t_b,
                t_e=t_e,
                budget=_grid(rng.uniform(*config.budget)),
                quality_demand=rng.uniform(*config.quality_demand),
                loc=Location(rng.uniform(0, config.region[0]), rng.uniform(0, config.region[1])),
                data_size=rng.uniform(*config.data_size),
            )
        )

    rng = root.substream("workers")
    workers = []
    delay_probs = []
    for j in range(config.n_workers):
        workers.append(
            WorkerSpec(
                id=j,
                e_c=rng.uniform(*config.sense_cost),
                e_D=rng.uniform(*config.delay_cost),
                e_t=rng.uniform(*config.tx_power),
                e_m=rng.uniform(*config.move_cost),
                f=rng.uniform(*config.sense_rate),
                v=rng.uniform(*config.speed),
                loc0=Location(rng.uniform(0, config.region[0]), rng.uniform(0, config.region[1])),
            )
        )
        delay_probs.append(rng.uniform(*config.delay_prob))

    a = {(w.id, t.id): delay_probs[j] for j, w in enumerate(workers) for t in tasks}
    uncertainty = UncertaintyParams(
        a=a,
        t_min=config.delay_duration[0],
        t_max=config.delay_duration[1],
        mu1=config.channel[0],
        mu2=config.channel[1],
    )

    rng = root.substream("econ")
    p_desire = {
        (w.id, t.id): _grid(rng.uniform(*config.p_desire)) for w in workers for t in tasks
    }
    econ = EconomicConfig(
        v1=config.v1,
        v2=config.v2,
        v3=config.v3,
        u_min=config.u_min,
        rho1=config.rho[0],
        rho2=config.rho[1],
        rho3=config.rho[2],
        rho4=config.rho[3],
        rho5=config.rho[4],
        dp=config.dp,
        p_desire=p_desire,
        bandwidth=config.bandwidth,
        q_frac=config.q_frac,
    )
    return Scenario(
        tasks=tuple(tasks),
        workers=tuple(workers),
        uncertainty=uncertainty,
        econ=econ,
        horizon=config.horizon,
        seed=seed,
    )


WORKER_CSV_HEADER = ["id", "lon", "lat", "speed", "e_c", "e_D", "e_t", "e_m", "f"]


class WorkerCsvError(ValueError):
    """Malformed or invariant-violating worker CSV row (carries the line number)."""


def load_worker_csv(path: str | Path) -> list[WorkerSpec]:
    """Ingest dataset-derived workers from CSV (header as in WORKER_CSV_HEADER)."""
    workers: list[WorkerSpec] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != WORKER_CSV_HEADER:
            raise WorkerCsvError(
                f"{path}: expected header {','.join(WORKER_CSV_HEADER)}, got {reader.fieldnames}"
            )
        for line_no, row in enumerate(reader, start=2):
            try:
                spec = WorkerSpec(
                    id=int(row["id"]),
                    e_c=float(row["e_c"]),
                    e_D=float(row["e_D"]),
                    e_t=float(row["e_t"]),
                    e_m=float(row["e_m"]),
                    f=float(row["f"]),
                    v=float(row["speed"]),
                    loc0=Location(float(row["lon"]), float(row["lat"])),
                )
            except (TypeError, ValueError, KeyError) as exc:
                raise WorkerCsvError(f"{path}:{line_no}: malformed row ({exc})") from exc
            for name in ("e_c", "e_D", "e_t", "e_m", "f", "v"):
                if getattr(spec, name) <= 0:
                    raise WorkerCsvError(
                        f"{path}:{line_no}: worker {spec.id} has non-positive {name}"
                    )
            workers.append(spec)
    return workers


# --- Scenario JSON -----------------------------------------------------------


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "horizon": s.horizon,
        "seed": s.seed,
        "tasks": [
            {
                "id": t.id,
                "t_b": t.t_b,
                "t_e": t.t_e,
                "budget": t.budget,
                "quality_demand": t.quality_demand,
                "lon": t.loc.lon,
                "lat": t.loc.lat,
                "data_size": t.data_size,
            }
            for t in s.tasks
        ],
        "workers": [
            {
                "id": w.id,
                "e_c": w.e_c,
                "e_D": w.e_D,
                "e_t": w.e_t,
                "e_m": w.e_m,
                "f": w.f,
                "v": w.v,
                "lon": w.loc0.lon,
                "lat": w.loc0.lat,
            }
            for w in s.workers
        ],
        "uncertainty": {
            "t_min": s.uncertainty.t_min,
            "t_max": s.uncertainty.t_max,
            "mu1": s.uncertainty.mu1,
            "mu2": s.uncertainty.mu2,
            "a": [[wid, tid, prob] for (wid, tid), prob in sorted(s.uncertainty.a.items())],
        },
        "econ": {
            "v1": s.econ.v1,
            "v2": s.econ.v2,
            "v3": s.econ.v3,
            "u_min": s.econ.u_min,
            "rho": [s.econ.rho1, s.econ.rho2, s.econ.rho3, s.econ.rho4, s.econ.rho5],
            "dp": s.econ.dp,
            "bandwidth": s.econ.bandwidth,
            "q_frac": s.econ.q_frac,
            "p_desire": [[wid, tid, p] for (wid, tid), p in sorted(s.econ.p_desire.items())],
        },
    }


def scenario_from_dict(raw: dict) -> Scenario:
    tasks = tuple(
        TaskSpec(
            id=t["id"],
            t_b=t["t_b"],
            t_e=t["t_e"],
            budget=t["budget"],
            quality_demand=t["quality_demand"],
            loc=Location(t["lon"], t["lat"]),
            data_size=t["data_size"],
        )
        for t in raw["tasks"]
    )
    workers = tuple(
        WorkerSpec(
            id=w["id"],
            e_c=w["e_c"],
            e_D=w["e_D"],
            e_t=w["e_t"],
            e_m=w["e_m"],
            f=w["f"],
            v=w["v"],
            loc0=Location(w["lon"], w["lat"]),
        )
        for w in raw["workers"]
    )
    u = raw["uncertainty"]
    uncertainty = UncertaintyParams(
        a={(wid, tid): prob for wid, tid, prob in u["a"]},
        t_min=u["t_min"],
        t_max=u["t_max"],
        mu1=u["mu1"],
        mu2=u["mu2"],
    )
    e = raw["econ"]
    econ = EconomicConfig(
        v1=e["v1"],
        v2=e["v2"],
        v3=e["v3"],
        u_min=e["u_min"],
        rho1=e["rho"][0],
        rho2=e["rho"][1],
        rho3=e["rho"][2],
        rho4=e["rho"][3],
        rho5=e["rho"][4],
        dp=e["dp"],
        p_desire={(wid, tid): p for wid, tid, p in e["p_desire"]},
        bandwidth=e["bandwidth"],
        q_frac=e["q_frac"],
    )
    return Scenario(
        tasks=tasks,
        workers=workers,
        uncertainty=uncertainty,
        econ=econ,
        horizon=raw["horizon"],
        seed=raw["seed"],
    )


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(scenario_to_dict(s), indent=2, sort_keys=True), encoding="utf-8"
    )


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def merge_workers(scenario: Scenario, workers: list[WorkerSpec]) -> Scenario:
    """Replace the worker side with dataset-derived workers, re-keying pair maps."""
    delay_probs = {}
    asks = {}
    old_by_worker: dict[int, float] = {}
    for (wid, tid), prob in scenario.uncertainty.a.items():
        old_by_worker[wid] = prob
    default_a = (
        sum(old_by_worker.values()) / len(old_by_worker) if old_by_worker else 0.0075
    )
    default_ask = 9.0
    for w in workers:
        for t in scenario.tasks:
            delay_probs[(w.id, t.id)] = old_by_worker.get(w.id, default_a)
            asks[(w.id, t.id)] = scenario.econ.p_desire.get((w.id, t.id), default_ask)
    uncertainty = UncertaintyParams(
        a=delay_probs,
        t_min=scenario.uncertainty.t_min,
        t_max=scenario.uncertainty.t_max,
        mu1=scenario.uncertainty.mu1,
        mu2=scenario.uncertainty.mu2,
    )
    econ = replace(scenario.econ, p_desire=asks)
    return replace(scenario, workers=tuple(workers), uncertainty=uncertainty, econ=econ)
