from __future__ import annotations

from typing import Callable

import numpy as np

from ..numerics import make_rng
from .envs import Env

EVAL_STREAM = 7


def evaluate(policy: Callable[[np.ndarray], object], make: Callable[[np.random.Generator], Env], episodes: int, seed: int) -> float:
    """Mean return of noiseless rollouts; episode starts come from ``seed`` alone."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    env = make(make_rng(seed, EVAL_STREAM))
    returns = []
    for _ in range(episodes):
        state = env.reset()
        total, done = 0.0, False
        while not done:
            state, reward, _, done = env.step(policy(state))
            total += reward
        returns.append(total)
    return float(np.mean(returns))
