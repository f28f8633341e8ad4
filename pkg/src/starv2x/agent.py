"""Learners: DDQN with attention, vanilla DDQN, and an epsilon-greedy
multi-armed bandit baseline.

The action space is factored, so the Q-network has one output head per
action dimension; action selection, TD targets and the argmax all apply per
head independently.  Target synchronization is a hard copy every ``S_Q``
train steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward, sgd_step, zero_grad
from .errors import BufferUnderflow
from .nn import (NetworkSpec, copy_params, forward, init_params,
                 load_checkpoint, save_checkpoint)

VARIANT_DDQN_ATTN = "DDQN_ATTN"
VARIANT_DDQN_VANILLA = "DDQN_VANILLA"
VARIANT_MAB = "MAB"


@dataclass(frozen=True)
class AgentConfig:
    variant: str = VARIANT_DDQN_ATTN
    discount: float = 0.98
    learning_rate: float = 0.001
    batch_size: int = 4
    eps_initial: float = 1.0
    eps_final: float = 0.02
    eps_decay_frac: float = 0.3
    target_sync_sq: int = 100
    use_dqn_target: bool = False   # plain DQN target instead of the decoupled one
    grad_clip_norm: float = 10.0   # global-norm clip; <= 0 disables

    def __post_init__(self):
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must be in (0, 1]")
        for e in (self.eps_initial, self.eps_final):
            if not (0.0 <= e <= 1.0):
                raise ValueError("epsilon must be in [0, 1]")


def epsilon_schedule(cfg: AgentConfig, episode: int, total_episodes: int) -> float:
    """Linear decay from eps_initial to eps_final over the first decay_frac."""
    horizon = max(1, int(cfg.eps_decay_frac * total_episodes))
    frac = min(1.0, episode / horizon)
    return cfg.eps_initial + frac * (cfg.eps_final - cfg.eps_initial)


@dataclass
class BufferEntry:
    state: np.ndarray        # token matrix (T, F)
    action: tuple[int, ...]
    reward: float
    next_state: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform batch sampling."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._ring: list[BufferEntry] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._ring)

    def push(self, entry: BufferEntry) -> None:
        if len(self._ring) < self.capacity:
            self._ring.append(entry)
        else:
            self._ring[self._cursor] = entry
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[BufferEntry]:
        if len(self._ring) < batch_size:
            raise BufferUnderflow(f"buffer holds {len(self._ring)} < batch {batch_size}")
        idx = rng.choice(len(self._ring), size=batch_size, replace=False)
        return [self._ring[i] for i in idx]


def _head_values(spec: NetworkSpec, params: dict[str, Tensor],
                 states: np.ndarray) -> list[np.ndarray]:
    """Raw per-head Q arrays (batch, n_actions_d), no gradient bookkeeping."""
    return [t.data for t in forward(spec, params, states)]


def td_target_dqn(batch: list[BufferEntry], spec: NetworkSpec,
                  online: dict[str, Tensor], target: dict[str, Tensor],
                  zeta: float) -> np.ndarray:
    """R + zeta * max_a' Q_target(s', a') per action dimension; (B, D)."""
    next_states = np.stack([e.next_state for e in batch])
    rewards = np.array([e.reward for e in batch])
    live = np.array([0.0 if e.done else 1.0 for e in batch])
    q_next = _head_values(spec, target, next_states)
    cols = [rewards + zeta * live * q.max(axis=1) for q in q_next]
    return np.stack(cols, axis=1)


def td_target_ddqn(batch: list[BufferEntry], spec: NetworkSpec,
                   online: dict[str, Tensor], target: dict[str, Tensor],
                   zeta: float) -> np.ndarray:
    """Selection by the online net, evaluation by the target net; (B, D)."""
    next_states = np.stack([e.next_state for e in batch])
    rewards = np.array([e.reward for e in batch])
    live = np.array([0.0 if e.done else 1.0 for e in batch])
    q_online = _head_values(spec, online, next_states)
    q_target = _head_values(spec, target, next_states)
    rows = np.arange(len(batch))
    cols = []
    for qo, qt in zip(q_online, q_target):
        sel = qo.argmax(axis=1)
        cols.append(rewards + zeta * live * qt[rows, sel])
    return np.stack(cols, axis=1)


class DDQNAgent:
    """Online/target Q-networks over the factored catalog."""

    def __init__(self, cfg: AgentConfig, spec: NetworkSpec, seed: int):
        self.cfg = cfg
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self.online = init_params(spec, self.rng)
        self.target = copy_params(self.online)
        self.train_calls = 0

    @property
    def branch_sizes(self) -> tuple[int, ...]:
        return self.spec.head_sizes

    def q_values(self, state_tokens: np.ndarray) -> list[np.ndarray]:
        return _head_values(self.spec, self.online, state_tokens)

    def select_action(self, state_tokens: np.ndarray, eps: float) -> tuple[int, ...]:
        """Epsilon-greedy with an independent coin per action dimension.

        Per-dimension exploration produces single-dimension deviations from
        the greedy action, which is what the factored heads need to estimate
        each dimension's value conditioned on the others' greedy choices.
        Greedy ties break to the lowest index.
        """
        qs = self.q_values(state_tokens)
        greedy = [int(np.argmax(q)) for q in qs]
        if eps > 0.0:
            coins = self.rng.random(len(greedy))
            for d, n in enumerate(self.branch_sizes):
                if coins[d] < eps:
                    greedy[d] = int(self.rng.integers(0, n))
        return tuple(greedy)

    def train_step(self, buffer: ReplayBuffer) -> float:
        """One optimizer step of MSE against stop-gradient TD targets."""
        batch = buffer.sample(self.cfg.batch_size, self.rng)
        target_fn = td_target_dqn if self.cfg.use_dqn_target else td_target_ddqn
        targets = target_fn(batch, self.spec, self.online, self.target,
                            self.cfg.discount)

        states = np.stack([e.state for e in batch])
        actions = np.array([e.action for e in batch])
        rows = np.arange(len(batch))

        zero_grad(self.online)
        heads = forward(self.spec, self.online, states)
        loss = None
        for d, head in enumerate(heads):
            sel = head[rows, actions[:, d]]
            diff = sel - Tensor(targets[:, d])
            term = (diff * diff).mean()
            loss = term if loss is None else loss + term
        loss = loss * (1.0 / len(heads))
        backward(loss)
        if self.cfg.grad_clip_norm > 0:
            total = np.sqrt(sum(float(np.sum(t.grad**2))
                                for t in self.online.values()
                                if t.grad is not None))
            if total > self.cfg.grad_clip_norm:
                scale = self.cfg.grad_clip_norm / total
                for t in self.online.values():
                    if t.grad is not None:
                        t.grad *= scale
        sgd_step(self.online, self.cfg.learning_rate)

        self.train_calls += 1
        if self.train_calls % self.cfg.target_sync_sq == 0:
            self.sync_target()
        return float(loss.data)

    def sync_target(self) -> None:
        self.target = copy_params(self.online)

    # -- persistence -------------------------------------------------------
    def save(self, path, sidecar_extra: dict | None = None) -> None:
        save_checkpoint(path, self.spec, self.online)
        side = {"variant": self.cfg.variant, "train_calls": self.train_calls}
        side.update(sidecar_extra or {})
        with open(str(path) + ".json", "w") as fh:
            json.dump(side, fh, indent=2, sort_keys=True)

    def load(self, path) -> None:
        spec, params = load_checkpoint(path)
        if spec != self.spec:
            raise ValueError("checkpoint network spec mismatch")
        self.online = params
        self.sync_target()


class MABAgent:
    """Independent per-dimension epsilon-greedy bandits with incremental means.

    No state conditioning: every dimension keeps (count, mean reward) per arm.
    """

    def __init__(self, branch_sizes: tuple[int, ...], seed: int):
        self.branch_sizes = tuple(branch_sizes)
        self.rng = np.random.default_rng(seed)
        self.counts = [np.zeros(n, dtype=int) for n in branch_sizes]
        self.means = [np.zeros(n) for n in branch_sizes]

    def select_action(self, state_tokens=None, eps: float = 0.0) -> tuple[int, ...]:
        if self.rng.random() < eps:
            return tuple(int(self.rng.integers(0, n)) for n in self.branch_sizes)
        return tuple(int(np.argmax(m)) for m in self.means)

    def update(self, action: tuple[int, ...], reward: float) -> None:
        for d, arm in enumerate(action):
            self.counts[d][arm] += 1
            n = self.counts[d][arm]
            self.means[d][arm] += (reward - self.means[d][arm]) / n
