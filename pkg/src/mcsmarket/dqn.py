"""Per-worker deep Q-learning for en-route continue/abandon decisions.

A small fully-connected network (rectifier activations, two output values:
continue / abandon-and-advance) is trained per worker from its own replay
buffer with proportional prioritized sampling and RMSprop updates against a
periodically synced target network.  Each engagement is treated as a terminal
segment: the settlement reward (payment or compensation) fully determines the
terminal value, and per-slot rewards are the monetized costs the slot accrues.

State encoding (all features scaled to [0,1] by scenario bounds): location
(2), current timeslot, target id slot, window slack, breach penalty,
distance to target, remaining path length.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .matching import Matching
from .model import Scenario
from .rng import SeededRng
from .sim import ABANDON, CONTINUE, AgentView, Engine, EngineConfig

STATE_DIM = 8
N_ACTIONS = 2


@dataclass(frozen=True)
class TrainConfig:
    discount: float = 0.9
    lr: float = 1e-3
    replay_capacity: int = 20_000
    batch_size: int = 32
    per_alpha: float = 0.6
    per_beta0: float = 0.4  # importance-sampling exponent, annealed to 1.0
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.8  # fraction of episodes over which eps anneals
    target_sync: int = 100  # train steps between target copies
    hidden: tuple[int, ...] = (64, 64)
    rmsprop_rho: float = 0.99
    rmsprop_eps: float = 1e-8
    priority_floor: float = 1e-3
    train_steps_per_episode: int = 32

    def __post_init__(self):
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must be in [0,1]")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


class QNet:
    """Plain numpy MLP with manual backprop (float64 throughout)."""

    def __init__(self, layer_sizes: list[int], rng: np.random.Generator | None = None):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = list(layer_sizes)
        rng = rng or np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            scale = np.sqrt(2.0 / fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Q-values; x is (batch, in) or (in,)."""
        squeeze = x.ndim == 1
        h = np.atleast_2d(x)
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w.T + b, 0.0)
        out = h @ self.weights[-1].T + self.biases[-1]
        return out[0] if squeeze else out

    def forward_cached(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        acts = [np.atleast_2d(x)]
        h = acts[0]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w.T + b, 0.0)
            acts.append(h)
        out = h @ self.weights[-1].T + self.biases[-1]
        return out, acts

    def backward(
        self, acts: list[np.ndarray], dout: np.ndarray
    ) -> list[tuple[np.ndarray, np.ndarray]]:
        """Gradients [(dW, db) per layer] given d(loss)/d(output)."""
        grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(self.weights)  # type: ignore
        delta = dout
        for layer in range(len(self.weights) - 1, -1, -1):
            a_in = acts[layer]
            grads[layer] = (delta.T @ a_in, delta.sum(axis=0))
            if layer > 0:
                delta = (delta @ self.weights[layer]) * (acts[layer] > 0.0)
        return grads

    def copy_from(self, other: "QNet") -> None:
        for i in range(len(self.weights)):
            self.weights[i] = other.weights[i].copy()
            self.biases[i] = other.biases[i].copy()

    def clone(self) -> "QNet":
        net = QNet(self.layer_sizes)
        net.copy_from(self)
        return net

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    # -- flat binary serialization (header: layer sizes; body: row-major
    #    little-endian float64) plus a JSON metadata sidecar ---------------

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<I", len(self.layer_sizes)))
            fh.write(struct.pack(f"<{len(self.layer_sizes)}I", *self.layer_sizes))
            for w, b in zip(self.weights, self.biases):
                fh.write(w.astype("<f8").tobytes(order="C"))
                fh.write(b.astype("<f8").tobytes(order="C"))
        sidecar = {
            "schema_version": 1,
            "layer_sizes": self.layer_sizes,
            "activation": "relu",
            "dtype": "float64-le",
        }
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "QNet":
        raw = Path(path).read_bytes()
        (n_sizes,) = struct.unpack_from("<I", raw, 0)
        sizes = list(struct.unpack_from(f"<{n_sizes}I", raw, 4))
        net = cls(sizes)
        offset = 4 + 4 * n_sizes
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            w = np.frombuffer(raw, dtype="<f8", count=fan_out * fan_in, offset=offset)
            offset += w.nbytes
            b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset)
            offset += b.nbytes
            net.weights[i] = w.reshape(fan_out, fan_in).copy()
            net.biases[i] = b.copy()
        return net


class RmsProp:
    def __init__(self, net: QNet, lr: float, rho: float, eps: float):
        self.lr = lr
        self.rho = rho
        self.eps = eps
        self.cache = [
            (np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)
        ]

    def step(self, net: QNet, grads: list[tuple[np.ndarray, np.ndarray]]) -> None:
        for i, (dw, db) in enumerate(grads):
            cw, cb = self.cache[i]
            cw *= self.rho
            cw += (1.0 - self.rho) * dw * dw
            cb *= self.rho
            cb += (1.0 - self.rho) * db * db
            net.weights[i] -= self.lr * dw / (np.sqrt(cw) + self.eps)
            net.biases[i] -= self.lr * db / (np.sqrt(cb) + self.eps)


@dataclass
class Experience:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Proportional prioritized replay; priority 0 never survives insertion."""

    def __init__(self, capacity: int, priority_floor: float = 1e-3):
        self.capacity = capacity
        self.priority_floor = priority_floor
        self.items: list[Experience] = []
        self.priorities: list[float] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self.items)

    def add(self, exp: Experience) -> None:
        priority = max(self.priorities, default=1.0)
        if len(self.items) < self.capacity:
            self.items.append(exp)
            self.priorities.append(priority)
        else:
            self.items[self._next] = exp
            self.priorities[self._next] = priority
            self._next = (self._next + 1) % self.capacity

    def sample(
        self, batch_size: int, alpha: float, beta: float, rng: np.random.Generator
    ) -> tuple[np.ndarray, list[Experience], np.ndarray]:
        if len(self.items) < batch_size:
            raise ValueError("not enough experience to sample a batch")
        prios = np.asarray(self.priorities) ** alpha
        probs = prios / prios.sum()
        idx = rng.choice(len(self.items), size=batch_size, p=probs)
        weights = (len(self.items) * probs[idx]) ** (-beta)
        weights = weights / weights.max()
        return idx, [self.items[i] for i in idx], weights

    def update_priorities(self, idx: np.ndarray, td_errors: np.ndarray) -> None:
        for i, td in zip(idx, td_errors):
            self.priorities[int(i)] = abs(float(td)) + self.priority_floor


def q_loss(
    batch: list[Experience],
    pred: QNet,
    target: QNet,
    discount: float,
    weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Importance-weighted mean squared TD error and per-sample TD errors."""
    if not batch:
        raise ValueError("empty batch")
    states = np.stack([e.state for e in batch])
    next_states = np.stack([e.next_state for e in batch])
    actions = np.array([e.action for e in batch])
    rewards = np.array([e.reward for e in batch])
    dones = np.array([e.done for e in batch], dtype=float)
    q_next = target.forward(next_states).max(axis=1)
    targets = rewards + discount * q_next * (1.0 - dones)
    q_pred = pred.forward(states)[np.arange(len(batch)), actions]
    td = targets - q_pred
    w = np.ones(len(batch)) if weights is None else weights
    return float(np.mean(w * td * td)), td


def train_step(
    replay: ReplayBuffer,
    pred: QNet,
    target: QNet,
    optimizer: RmsProp,
    config: TrainConfig,
    rng: np.random.Generator,
    beta: float | None = None,
) -> float:
    """One PER-sampled gradient step; updates sampled priorities to |TD|."""
    idx, batch, weights = replay.sample(
        config.batch_size, config.per_alpha, config.per_beta0 if beta is None else beta, rng
    )
    states = np.stack([e.state for e in batch])
    next_states = np.stack([e.next_state for e in batch])
    actions = np.array([e.action for e in batch])
    rewards = np.array([e.reward for e in batch])
    dones = np.array([e.done for e in batch], dtype=float)

    q_next = target.forward(next_states).max(axis=1)
    targets = rewards + config.discount * q_next * (1.0 - dones)
    out, acts = pred.forward_cached(states)
    q_pred = out[np.arange(len(batch)), actions]
    td = targets - q_pred

    dout = np.zeros_like(out)
    dout[np.arange(len(batch)), actions] = -2.0 * weights * td / len(batch)
    grads = pred.backward(acts, dout)
    optimizer.step(pred, grads)
    replay.update_priorities(idx, td)
    return float(np.mean(weights * td * td))


def act(state: np.ndarray, net: QNet, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over the two actions; argmax ties resolve to continue."""
    if not 0.0 <= eps <= 1.0:
        raise ValueError("eps must be in [0,1]")
    if rng.random() < eps:
        return int(rng.integers(0, N_ACTIONS))
    q = net.forward(state)
    return CONTINUE if q[CONTINUE] >= q[ABANDON] else ABANDON


@dataclass(frozen=True)
class ScenarioBounds:
    """Normalization constants for the state encoding."""

    lon_max: float
    lat_max: float
    horizon: int
    n_tasks: int
    q_max: float

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "ScenarioBounds":
        lons = [t.loc.lon for t in scenario.tasks] + [w.loc0.lon for w in scenario.workers]
        lats = [t.loc.lat for t in scenario.tasks] + [w.loc0.lat for w in scenario.workers]
        asks = list(scenario.econ.p_desire.values()) or [1.0]
        return cls(
            lon_max=max(max(lons, default=1.0), 1.0),
            lat_max=max(max(lats, default=1.0), 1.0),
            horizon=scenario.horizon,
            n_tasks=max(len(scenario.tasks), 1),
            q_max=max(scenario.econ.q_frac * max(asks), 1e-9),
        )

    @property
    def diag(self) -> float:
        return float(np.hypot(self.lon_max, self.lat_max))


def encode_state(view: AgentView, bounds: ScenarioBounds) -> np.ndarray:
    clip = lambda x: min(max(x, 0.0), 1.0)  # noqa: E731
    return np.array(
        [
            clip(view.loc.lon / bounds.lon_max),
            clip(view.loc.lat / bounds.lat_max),
            clip(view.t / bounds.horizon),
            clip(view.task.id / bounds.n_tasks),
            clip((view.task.t_e - view.t) / bounds.horizon),
            clip(view.contract.compensation / bounds.q_max),
            clip(view.distance_to_target / bounds.diag),
            clip(view.remaining_path / bounds.n_tasks),
        ]
    )


class TrainingPolicy:
    """Engine policy that acts epsilon-greedily and collects transitions."""

    def __init__(
        self,
        nets: dict[int, QNet],
        replays: dict[int, ReplayBuffer],
        bounds: ScenarioBounds,
        eps: float,
        rng: np.random.Generator,
    ):
        self.nets = nets
        self.replays = replays
        self.bounds = bounds
        self.eps = eps
        self.rng = rng
        self.pending: dict[int, tuple[np.ndarray, int, float]] = {}
        self.episode_reward: dict[int, float] = {wid: 0.0 for wid in nets}

    def act(self, view: AgentView) -> int:
        wid = view.worker.id
        state = encode_state(view, self.bounds)
        if wid in self.pending:
            s, a, r = self.pending.pop(wid)
            self.replays[wid].add(Experience(s, a, r, state, done=False))
        action = act(state, self.nets[wid], self.eps, self.rng)
        self.pending[wid] = (state, action, 0.0)
        return action

    def reward(self, worker_id: int, amount: float) -> None:
        self.episode_reward[worker_id] = self.episode_reward.get(worker_id, 0.0) + amount
        if worker_id in self.pending:
            s, a, r = self.pending[worker_id]
            self.pending[worker_id] = (s, a, r + amount)

    def job_done(self, worker_id: int, view: AgentView | None) -> None:
        if worker_id in self.pending:
            s, a, r = self.pending.pop(worker_id)
            self.replays[worker_id].add(
                Experience(s, a, r, np.zeros(STATE_DIM), done=True)
            )


class GreedyPolicy(TrainingPolicy):
    """Trained-network policy: greedy actions, no recording."""

    def __init__(self, nets: dict[int, QNet], bounds: ScenarioBounds):
        rng = np.random.default_rng(0)
        super().__init__(nets, {}, bounds, eps=0.0, rng=rng)

    def act(self, view: AgentView) -> int:
        state = encode_state(view, self.bounds)
        return act(state, self.nets[view.worker.id], 0.0, self.rng)

    def reward(self, worker_id: int, amount: float) -> None:
        self.episode_reward[worker_id] = self.episode_reward.get(worker_id, 0.0) + amount

    def job_done(self, worker_id: int, view: AgentView | None) -> None:
        pass


@dataclass
class EpisodeTrace:
    rewards: dict[int, float]
    losses: list[float] = field(default_factory=list)

    @property
    def total_reward(self) -> float:
        return sum(self.rewards.values())


class DqnTrainer:
    """Per-worker networks trained across episodes of one scenario+matching."""

    def __init__(
        self,
        scenario: Scenario,
        matching: Matching,
        config: TrainConfig | None = None,
        seed: int = 0,
        spot_hook=None,
    ):
        self.scenario = scenario
        self.matching = matching
        self.config = config or TrainConfig()
        self.seed = seed
        self.spot_hook = spot_hook
        self.bounds = ScenarioBounds.from_scenario(scenario)
        root = np.random.default_rng(seed)
        sizes = [STATE_DIM, *self.config.hidden, N_ACTIONS]
        self.nets = {w.id: QNet(sizes, rng=root) for w in scenario.workers}
        self.targets = {wid: net.clone() for wid, net in self.nets.items()}
        self.replays = {
            w.id: ReplayBuffer(self.config.replay_capacity, self.config.priority_floor)
            for w in scenario.workers
        }
        self.optimizers = {
            wid: RmsProp(net, self.config.lr, self.config.rmsprop_rho, self.config.rmsprop_eps)
            for wid, net in self.nets.items()
        }
        self.train_steps = 0

    def _eps(self, episode: int, total: int) -> float:
        c = self.config
        span = max(int(total * c.eps_decay_frac), 1)
        frac = min(episode / span, 1.0)
        return c.eps_start + (c.eps_end - c.eps_start) * frac

    def _beta(self, episode: int, total: int) -> float:
        frac = min(episode / max(total - 1, 1), 1.0)
        return self.config.per_beta0 + (1.0 - self.config.per_beta0) * frac

    def run(self, episodes: int) -> list[EpisodeTrace]:
        traces = []
        root = SeededRng(self.seed)
        for ep in range(episodes):
            rng = np.random.default_rng((self.seed, ep))
            policy = TrainingPolicy(
                self.nets, self.replays, self.bounds, self._eps(ep, episodes), rng
            )
            engine = Engine(
                self.scenario,
                self.matching,
                seed=int(root.substream("episode", ep).integers(0, 2**62)),
                config=EngineConfig(policy=policy, spot_hook=self.spot_hook),
            )
            engine.run()
            trace = EpisodeTrace(rewards=dict(policy.episode_reward))
            beta = self._beta(ep, episodes)
            for wid, replay in self.replays.items():
                if len(replay) < self.config.batch_size:
                    continue
                for _ in range(self.config.train_steps_per_episode):
                    loss = train_step(
                        replay,
                        self.nets[wid],
                        self.targets[wid],
                        self.optimizers[wid],
                        self.config,
                        rng,
                        beta=beta,
                    )
                    trace.losses.append(loss)
                    self.train_steps += 1
                    if self.train_steps % self.config.target_sync == 0:
                        self.targets[wid].copy_from(self.nets[wid])
            traces.append(trace)
        return traces
