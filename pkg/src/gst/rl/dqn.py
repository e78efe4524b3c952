"""Deep Q-learning with a hard-synced target network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..netcore import Adam, Mlp, huber_loss
from .replay import ReplayBuffer


@dataclass
class DqnHyper:
    gamma: float = 0.99
    batch: int = 64
    buffer: int = 50_000
    learn_start: int = 1000
    train_every: int = 1
    target_sync: int = 500  # hard sync period, in updates
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10_000
    huber_delta: float = 1.0
    double: bool = True


class DqnAgent:
    def __init__(self, q: Mlp, optim: Adam, hyper: DqnHyper):
        self.q = q
        self.target = q.copy()
        self.optim = optim
        self.hyper = hyper
        self.updates = 0

    @property
    def nets(self) -> list[Mlp]:
        return [self.q]

    @property
    def optims(self) -> list[Adam]:
        return [self.optim]

    def epsilon(self, t: int) -> float:
        h = self.hyper
        if h.eps_decay_steps <= 0:
            return h.eps_end
        frac = min(t / h.eps_decay_steps, 1.0)
        return h.eps_start + frac * (h.eps_end - h.eps_start)

    def greedy(self, state) -> int:
        return int(np.argmax(self.q(np.asarray(state, dtype=np.float32))))

    def act(self, state, t: int, rng: np.random.Generator) -> int:
        # draw both numbers every step so the stream does not depend on the branch taken
        u = rng.random()
        a = int(rng.integers(self.q.out_dim))
        return a if u < self.epsilon(t) else self.greedy(state)

    def td_loss(self, batch) -> tuple[float, object, np.ndarray]:
        s, a, r, s2, d = batch
        h = self.hyper
        q_next_target = self.target(s2)
        if h.double:
            a_next = np.argmax(self.q(s2), axis=1)
        else:
            a_next = np.argmax(q_next_target, axis=1)
        idx = np.arange(len(a))
        y = r + h.gamma * (1.0 - d) * q_next_target[idx, a_next]
        q_all, cache = self.q.forward(s)
        loss, g_sel = huber_loss(q_all[idx, a], y.astype(q_all.dtype), h.huber_delta)
        grad = np.zeros_like(q_all)
        grad[idx, a] = g_sel
        return loss, cache, grad

    def update(self, batch) -> float:
        """One temporal-difference step, then the periodic hard target sync."""
        loss, cache, grad = self.td_loss(batch)
        grads = self.q.backward(cache, grad)
        self.optim.step(self.q, grads)
        self.updates += 1
        if self.updates % self.hyper.target_sync == 0:
            self.target.copy_from(self.q)
        return loss


def dqn_update(agent: DqnAgent, buffer: ReplayBuffer, rng: np.random.Generator) -> float | None:
    if len(buffer) < agent.hyper.batch:
        return None
    return agent.update(buffer.sample(agent.hyper.batch, rng))
