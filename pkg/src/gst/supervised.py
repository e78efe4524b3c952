"""Two-spirals classification: a low-variance supervised host for GST."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netcore import Adam, Mlp, softmax_xent
from .numerics import make_rng


@dataclass
class SpiralsHyper:
    n_points: int = 2000
    noise: float = 0.2
    turns: float = 1.5
    data_seed: int = 1234
    val_fraction: float = 0.2
    batch: int = 64
    epoch_steps: int = 50  # gradient steps between validation checks


def two_spirals(n: int, noise: float = 0.2, turns: float = 1.5, seed: int = 1234) -> tuple[np.ndarray, np.ndarray]:
    """``n`` points on two interleaved spirals, labels 0/1, shuffled."""
    rng = make_rng(seed)
    half = n // 2
    t = np.sqrt(rng.uniform(0, 1, size=half)) * turns * 2 * np.pi
    r = t / (turns * 2 * np.pi) * 3
    arm = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    x = np.concatenate([arm, -arm]) + rng.normal(0, noise, size=(2 * half, 2))
    y = np.concatenate([np.zeros(half, np.int64), np.ones(half, np.int64)])
    order = rng.permutation(2 * half)
    return x[order].astype(np.float32), y[order]


class SpiralsTask:
    def __init__(self, net: Mlp, optim: Adam, hyper: SpiralsHyper):
        self.net = net
        self.optim = optim
        self.hyper = hyper
        x, y = two_spirals(hyper.n_points, hyper.noise, hyper.turns, hyper.data_seed)
        n_val = int(round(len(x) * hyper.val_fraction))
        self.x_val, self.y_val = x[:n_val], y[:n_val]
        self.x_train, self.y_train = x[n_val:], y[n_val:]

    @property
    def nets(self) -> list[Mlp]:
        return [self.net]

    @property
    def optims(self) -> list[Adam]:
        return [self.optim]

    def train_step(self, rng: np.random.Generator) -> float:
        idx = rng.choice(len(self.x_train), size=self.hyper.batch, replace=False)
        logits, cache = self.net.forward(self.x_train[idx])
        loss, grad = softmax_xent(logits, self.y_train[idx])
        self.optim.step(self.net, self.net.backward(cache, grad))
        return loss

    def validation(self) -> tuple[float, float]:
        """(loss, accuracy) on the held-out split."""
        logits = self.net(self.x_val)
        loss, _ = softmax_xent(logits, self.y_val)
        acc = float(np.mean(np.argmax(logits, axis=1) == self.y_val))
        return loss, acc
