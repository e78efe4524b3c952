from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    state: np.ndarray
    action: int | np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool  # true end state; time-limit truncation is not done


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform minibatch sampling."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int = 1, discrete: bool = True):
        self.capacity = capacity
        self.states = np.zeros((capacity, state_dim), dtype=np.float32)
        self.next_states = np.zeros((capacity, state_dim), dtype=np.float32)
        if discrete:
            self.actions = np.zeros(capacity, dtype=np.int64)
        else:
            self.actions = np.zeros((capacity, action_dim), dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.dones = np.zeros(capacity, dtype=np.float32)
        self.pos = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition) -> None:
        i = self.pos
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.dones[i] = float(t.done)
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch: int, rng: np.random.Generator) -> np.ndarray:
        if batch > self.size:
            raise ValueError(f"cannot sample {batch} from {self.size} transitions")
        return rng.choice(self.size, size=batch, replace=False)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = self.sample_indices(batch, rng)
        return self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "states": self.states,
            "next_states": self.next_states,
            "actions": self.actions,
            "rewards": self.rewards,
            "dones": self.dones,
            "cursor": np.array([self.pos, self.size], dtype=np.int64),
        }

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in ("states", "next_states", "actions", "rewards", "dones"):
            getattr(self, name)[:] = arrays[name]
        self.pos, self.size = (int(v) for v in arrays["cursor"])
