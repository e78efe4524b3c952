"""Small native environments: cart-pole, point-mass and a scripted reward source."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..numerics import rng_state, set_rng_state


@dataclass(frozen=True)
class EnvSpec:
    name: str
    state_dim: int
    n_actions: int | None = None  # discrete action count
    action_dim: int | None = None  # continuous box dimension
    action_low: float = -1.0
    action_high: float = 1.0
    max_steps: int = 200
    constants: dict = field(default_factory=dict)


CARTPOLE = EnvSpec(
    "cartpole",
    state_dim=4,
    n_actions=2,
    max_steps=200,
    constants={
        "gravity": 9.8,
        "masscart": 1.0,
        "masspole": 0.1,
        "length": 0.5,  # half the pole length
        "force_mag": 10.0,
        "tau": 0.02,
        "theta_threshold": 12 * 2 * math.pi / 360,
        "x_threshold": 2.4,
    },
)

POINTMASS = EnvSpec(
    "pointmass",
    state_dim=4,
    action_dim=2,
    max_steps=200,
    constants={"dt": 0.05, "max_speed": 2.0, "action_cost": 0.01},
)


def cartpole_step(state, action: int, spec: EnvSpec = CARTPOLE) -> tuple[np.ndarray, float, bool]:
    """One Euler step; ``done`` here means the pole fell or the cart left the track."""
    if action not in (0, 1):
        raise ValueError(f"invalid cart-pole action {action!r}")
    c = spec.constants
    x, x_dot, theta, theta_dot = (float(v) for v in state)
    force = c["force_mag"] if action == 1 else -c["force_mag"]
    total_mass = c["masspole"] + c["masscart"]
    polemass_length = c["masspole"] * c["length"]
    cos, sin = math.cos(theta), math.sin(theta)
    temp = (force + polemass_length * theta_dot**2 * sin) / total_mass
    theta_acc = (c["gravity"] * sin - cos * temp) / (
        c["length"] * (4.0 / 3.0 - c["masspole"] * cos**2 / total_mass)
    )
    x_acc = temp - polemass_length * theta_acc * cos / total_mass
    tau = c["tau"]
    x += tau * x_dot
    x_dot += tau * x_acc
    theta += tau * theta_dot
    theta_dot += tau * theta_acc
    done = abs(x) > c["x_threshold"] or abs(theta) > c["theta_threshold"]
    return np.array([x, x_dot, theta, theta_dot]), 1.0, done


def pointmass_step(state, action, spec: EnvSpec = POINTMASS) -> tuple[np.ndarray, float, bool]:
    c = spec.constants
    a = np.clip(np.asarray(action, dtype=np.float64), spec.action_low, spec.action_high)
    pos = np.asarray(state[:2], dtype=np.float64)
    vel = np.asarray(state[2:], dtype=np.float64) + c["dt"] * a
    speed = float(np.linalg.norm(vel))
    if speed > c["max_speed"]:
        vel *= c["max_speed"] / speed
    pos = pos + c["dt"] * vel
    reward = -(float(pos @ pos) + c["action_cost"] * float(a @ a))
    return np.concatenate([pos, vel]), reward, False


class Env:
    """Episodic wrapper: tracks the step count and applies the time limit.

    ``step`` returns ``(next_state, reward, terminal, done)`` where ``terminal``
    marks a true end state (no bootstrapping) and ``done`` additionally covers
    the time limit.
    """

    def __init__(self, spec: EnvSpec, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.state: np.ndarray | None = None
        self.steps = 0

    def reset(self) -> np.ndarray:
        raise NotImplementedError

    def _dynamics(self, state, action):
        raise NotImplementedError

    def step(self, action):
        if self.state is None:
            raise RuntimeError("reset() before step()")
        nxt, reward, terminal = self._dynamics(self.state, action)
        self.steps += 1
        self.state = nxt
        done = terminal or self.steps >= self.spec.max_steps
        return nxt.copy(), reward, terminal, done

    def get_state(self) -> dict:
        return {
            "state": None if self.state is None else self.state.tolist(),
            "steps": self.steps,
            "rng": rng_state(self.rng),
        }

    def set_state(self, d: dict) -> None:
        self.state = None if d["state"] is None else np.array(d["state"])
        self.steps = d["steps"]
        set_rng_state(self.rng, d["rng"])


class CartPole(Env):
    def __init__(self, rng: np.random.Generator, spec: EnvSpec = CARTPOLE):
        super().__init__(spec, rng)

    def reset(self) -> np.ndarray:
        self.state = self.rng.uniform(-0.05, 0.05, size=4)
        self.steps = 0
        return self.state.copy()

    def _dynamics(self, state, action):
        return cartpole_step(state, int(action), self.spec)


class PointMass(Env):
    def __init__(self, rng: np.random.Generator, spec: EnvSpec = POINTMASS, start: np.ndarray | None = None):
        super().__init__(spec, rng)
        self.start = start

    def reset(self) -> np.ndarray:
        pos = self.rng.uniform(-1, 1, size=2) if self.start is None else np.asarray(self.start, dtype=np.float64)
        self.state = np.concatenate([pos, np.zeros(2)])
        self.steps = 0
        return self.state.copy()

    def _dynamics(self, state, action):
        return pointmass_step(state, action, self.spec)


class ScriptedEnv:
    """Each episode lasts one step and returns the next scripted reward."""

    def __init__(self, rewards):
        self.rewards = [float(r) for r in rewards]
        if not self.rewards:
            raise ValueError("scripted reward sequence is empty")
        self.index = 0

    def __len__(self) -> int:
        return len(self.rewards)

    def reset(self) -> np.ndarray:
        return np.zeros(1)

    def step(self, action=None):
        r = self.rewards[self.index]
        self.index += 1
        return np.zeros(1), r, True, True


def make_env(name: str, rng: np.random.Generator) -> Env:
    if name == "cartpole":
        return CartPole(rng)
    if name == "pointmass":
        return PointMass(rng)
    raise ValueError(f"unknown environment {name!r}")
