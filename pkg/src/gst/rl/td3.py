"""Twin-critic deterministic policy gradient with delayed actor updates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..netcore import Adam, Mlp, Grads, mse_loss
from .replay import ReplayBuffer


@dataclass
class Td3Hyper:
    gamma: float = 0.99
    tau: float = 0.005
    batch: int = 100
    buffer: int = 100_000
    learn_start: int = 1000
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    expl_noise: float = 0.1
    max_action: float = 1.0


class Td3Agent:
    def __init__(self, actor: Mlp, critics: tuple[Mlp, Mlp], optims: tuple[Adam, Adam, Adam], hyper: Td3Hyper):
        self.actor = actor
        self.critic1, self.critic2 = critics
        self.actor_target = actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.actor_opt, self.critic1_opt, self.critic2_opt = optims
        self.hyper = hyper
        self.critic_steps = 0
        self.actor_steps = 0

    @property
    def nets(self) -> list[Mlp]:
        return [self.actor, self.critic1, self.critic2]

    @property
    def optims(self) -> list[Adam]:
        return [self.actor_opt, self.critic1_opt, self.critic2_opt]

    def policy(self, state) -> np.ndarray:
        return self.hyper.max_action * self.actor(np.asarray(state, dtype=np.float32))

    def act(self, state, rng: np.random.Generator, explore: bool = True) -> np.ndarray:
        a = self.policy(state)
        noise = rng.normal(0.0, self.hyper.expl_noise * self.hyper.max_action, size=a.shape)
        if explore:
            a = a + noise
        return np.clip(a, -self.hyper.max_action, self.hyper.max_action)

    def _critic_step(self, critic: Mlp, opt: Adam, sa: np.ndarray, y: np.ndarray) -> float:
        q, cache = critic.forward(sa)
        loss, g = mse_loss(q, y[:, None].astype(q.dtype))
        opt.step(critic, critic.backward(cache, g))
        return loss

    def update(self, batch, rng: np.random.Generator) -> dict:
        s, a, r, s2, d = batch
        h = self.hyper
        noise = np.clip(rng.normal(0.0, h.policy_noise, size=a.shape), -h.noise_clip, h.noise_clip)
        a2 = np.clip(h.max_action * self.actor_target(s2) + noise, -h.max_action, h.max_action)
        sa2 = np.concatenate([s2, a2], axis=1).astype(np.float32)
        q_next = np.minimum(self.critic1_target(sa2), self.critic2_target(sa2))[:, 0]
        y = r + h.gamma * (1.0 - d) * q_next
        sa = np.concatenate([s, a], axis=1).astype(np.float32)
        out = {
            "critic1": self._critic_step(self.critic1, self.critic1_opt, sa, y),
            "critic2": self._critic_step(self.critic2, self.critic2_opt, sa, y),
        }
        self.critic_steps += 1
        if self.critic_steps % h.policy_delay == 0:
            out["actor"] = self._actor_step(s)
            self.actor_steps += 1
            self.actor_target.soft_update(self.actor, h.tau)
            self.critic1_target.soft_update(self.critic1, h.tau)
            self.critic2_target.soft_update(self.critic2, h.tau)
        return out

    def _actor_step(self, s: np.ndarray) -> float:
        h = self.hyper
        pi, a_cache = self.actor.forward(s)
        act = h.max_action * pi
        q, c_cache = self.critic1.forward(np.concatenate([s, act], axis=1).astype(np.float32))
        n = len(s)
        c_grads = self.critic1.backward(c_cache, np.full_like(q, -1.0 / n))
        dq_da = c_grads.inputs[:, s.shape[1]:] * h.max_action
        self.actor_opt.step(self.actor, self.actor.backward(a_cache, dq_da))
        return float(-q.mean())


def td3lite_update(agent: Td3Agent, buffer: ReplayBuffer, rng: np.random.Generator) -> dict | None:
    if len(buffer) < agent.hyper.batch:
        return None
    return agent.update(buffer.sample(agent.hyper.batch, rng), rng)
