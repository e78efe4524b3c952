"""Multi-layer perceptron whose linear layers may share and prune weights.

Forward passes realize each layer's :class:`CompressedTensor` into a dense
matrix.  Backward passes compute the dense weight gradient ``delta^T x`` and
sum it over the members of each group (the chain rule for tied weights), so
the optimizer only ever touches shared values and the realized weights keep
their structure for as long as a layer stays grouped.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grouping import (
    CompressedTensor,
    GroupPattern,
    ConversionError,
    convert_friendly,
    convert_projection,
    dense_pattern,
    parent_map,
    project,
    realize,
)
from .numerics import DTYPE, ShapeError, uniform_init

ACTIVATIONS = ("relu", "tanh", "identity")


class CacheError(ValueError):
    pass


@dataclass
class CompressedLinear:
    weight: CompressedTensor  # rows = out_dim, cols = in_dim
    bias: np.ndarray
    compressed: bool = False

    @property
    def out_dim(self) -> int:
        return self.weight.pattern.rows

    @property
    def in_dim(self) -> int:
        return self.weight.pattern.cols

    @property
    def grouped(self) -> bool:
        return self.weight.pattern.kind != "dense"

    def copy(self) -> "CompressedLinear":
        return CompressedLinear(self.weight.copy(), self.bias.copy(), self.compressed)


@dataclass
class Grads:
    weights: list[np.ndarray]  # per-group gradient, one array per layer
    biases: list[np.ndarray]
    inputs: np.ndarray


@dataclass
class _Cache:
    inputs: list[np.ndarray]
    outputs: list[np.ndarray]
    preacts: list[np.ndarray]
    weights: list[np.ndarray]
    squeeze: bool


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(kind: str, z: np.ndarray, y: np.ndarray, g: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return g * (z > 0)
    if kind == "tanh":
        return g * (1 - y * y)
    return g


class Mlp:
    def __init__(self, layers: Sequence[CompressedLinear], activations: Sequence[str]):
        if len(layers) != len(activations):
            raise ShapeError("one activation per layer is required")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"layer widths do not chain: {prev.out_dim} -> {nxt.in_dim}")
        self.layers = list(layers)
        self.activations = list(activations)

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        hidden: str = "relu",
        output: str = "identity",
        compress: Sequence[bool] | None = None,
        dtype=DTYPE,
    ) -> "Mlp":
        """Fan-in uniform init.  By default only hidden-to-hidden layers are compressible."""
        n = len(sizes) - 1
        if compress is None:
            compress = [0 < i < n - 1 for i in range(n)]
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = 1.0 / np.sqrt(fan_in)
            w = uniform_init(rng, fan_out, fan_in, scale, dtype=dtype)
            b = uniform_init(rng, 1, fan_out, scale, dtype=dtype).ravel()
            layers.append(CompressedLinear(project(w, dense_pattern(fan_out, fan_in)), b, bool(compress[i])))
        return cls(layers, [hidden] * (n - 1) + [output])

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dtype(self):
        return self.layers[0].bias.dtype

    def parameter_count(self) -> int:
        return sum(layer.weight.pattern.positions + layer.bias.size for layer in self.layers)

    def copy(self) -> "Mlp":
        return Mlp([layer.copy() for layer in self.layers], list(self.activations))

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def forward(self, x) -> tuple[np.ndarray, _Cache]:
        x = np.asarray(x, dtype=self.dtype)
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        if h.ndim != 2 or h.shape[1] != self.in_dim:
            raise ShapeError(f"input of shape {x.shape} does not match in_dim {self.in_dim}")
        cache = _Cache([], [], [], [], squeeze)
        for layer, act in zip(self.layers, self.activations):
            w = realize(layer.weight)
            z = h @ w.T + layer.bias
            cache.inputs.append(h)
            cache.weights.append(w)
            cache.preacts.append(z)
            h = _activate(act, z)
            cache.outputs.append(h)
        return (h[0] if squeeze else h), cache

    def backward(self, cache: _Cache, output_grad) -> Grads:
        if len(cache.inputs) != len(self.layers):
            raise CacheError("cache was produced by a network with a different depth")
        g = np.asarray(output_grad, dtype=self.dtype)
        if cache.squeeze:
            g = g[None, :]
        if g.shape != cache.outputs[-1].shape:
            raise CacheError(f"output grad {g.shape} does not match forward output {cache.outputs[-1].shape}")
        wgrads: list[np.ndarray] = [None] * len(self.layers)  # type: ignore[list-item]
        bgrads: list[np.ndarray] = [None] * len(self.layers)  # type: ignore[list-item]
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            w = cache.weights[i]
            if w.shape != layer.weight.shape:
                raise CacheError(f"layer {i} changed shape since the forward pass")
            delta = _activation_grad(self.activations[i], cache.preacts[i], cache.outputs[i], g)
            dense = delta.T @ cache.inputs[i]
            wgrads[i] = group_gradient(layer.weight, dense)
            bgrads[i] = delta.sum(axis=0)
            g = delta @ w
        return Grads(wgrads, bgrads, g[0] if cache.squeeze else g)

    # flat views, used by gradient checks and target-network updates
    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.weight.values, l.bias]) for l in self.layers])

    def set_flat(self, flat) -> None:
        flat = np.asarray(flat)
        k = 0
        for layer in self.layers:
            g, b = layer.weight.values.size, layer.bias.size
            layer.weight.values[:] = flat[k:k + g]
            layer.bias[:] = flat[k + g:k + g + b]
            k += g + b

    def copy_from(self, other: "Mlp") -> None:
        """Hard sync: adopt ``other``'s patterns, masks and values."""
        self.layers = [layer.copy() for layer in other.layers]
        self.activations = list(other.activations)

    def soft_update(self, other: "Mlp", tau: float) -> None:
        """``self <- tau * other + (1 - tau) * self`` on realized weights and biases."""
        for mine, theirs in zip(self.layers, other.layers):
            if mine.weight.pattern != theirs.weight.pattern:
                mine.weight = convert_friendly(mine.weight, theirs.weight.pattern) if _refines(
                    theirs.weight.pattern, mine.weight.pattern
                ) else project(realize(mine.weight), theirs.weight.pattern)
            if tau == 1.0:
                mine.weight.values[:] = theirs.weight.values
                mine.bias[:] = theirs.bias
            else:
                mine.weight.values[:] = tau * theirs.weight.values + (1 - tau) * mine.weight.values
                mine.bias[:] = tau * theirs.bias + (1 - tau) * mine.bias
            mine.weight.mask[:] = theirs.weight.mask
            mine.weight.values[~mine.weight.mask] = 0


def _refines(fine: GroupPattern, coarse: GroupPattern) -> bool:
    try:
        parent_map(fine, coarse)
    except ConversionError:
        return False
    return True


def group_gradient(ct: CompressedTensor, dense_grad: np.ndarray) -> np.ndarray:
    """Sum a dense weight gradient over each group; pruned groups get 0."""
    p = ct.pattern
    if p.kind == "dense":
        g = dense_grad.reshape(-1).copy()
    else:
        g = np.bincount(p.group_of.ravel(), weights=dense_grad.ravel(), minlength=p.group_count)
        g = g.astype(dense_grad.dtype)
    g[~ct.mask] = 0
    return g


class Adam:
    """Adaptive-moment optimizer with bias correction, one moment pair per trainable scalar."""

    def __init__(self, mlp: Mlp, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.reset(mlp)

    def reset(self, mlp: Mlp) -> None:
        """Zero moments sized to ``mlp``'s current group counts."""
        self.t = 0
        self.m_w = [np.zeros_like(l.weight.values) for l in mlp.layers]
        self.v_w = [np.zeros_like(l.weight.values) for l in mlp.layers]
        self.m_b = [np.zeros_like(l.bias) for l in mlp.layers]
        self.v_b = [np.zeros_like(l.bias) for l in mlp.layers]

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    def _update(self, param, grad, m, v, alive=None):
        b1, b2 = self.beta1, self.beta2
        m *= b1
        m += (1 - b1) * grad
        v *= b2
        v += (1 - b2) * grad * grad
        m_hat = m / (1 - b1 ** self.t)
        v_hat = v / (1 - b2 ** self.t)
        step = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if alive is not None:
            step[~alive] = 0
        param -= step.astype(param.dtype)
        if alive is not None:
            param[~alive] = 0

    def step(self, mlp: Mlp, grads: Grads) -> None:
        if len(grads.weights) != len(mlp.layers) or len(self.m_w) != len(mlp.layers):
            raise ShapeError("gradient/optimizer state does not match the network")
        self.t += 1
        for i, layer in enumerate(mlp.layers):
            if grads.weights[i].shape != layer.weight.values.shape or self.m_w[i].shape != layer.weight.values.shape:
                raise ShapeError(f"layer {i}: gradient or moments out of sync with group count")
            self._update(layer.weight.values, grads.weights[i], self.m_w[i], self.v_w[i], layer.weight.mask)
            self._update(layer.bias, grads.biases[i], self.m_b[i], self.v_b[i])

    def remap(self, index: int, parent: np.ndarray) -> None:
        """Each new group inherits the moments of its source group."""
        self.m_w[index] = self.m_w[index][parent].copy()
        self.v_w[index] = self.v_w[index][parent].copy()

    def reproject(self, index: int, old: GroupPattern, new: GroupPattern) -> None:
        for moments in (self.m_w, self.v_w):
            per_pos = moments[index][old.group_of]
            moments[index] = project(per_pos, new, dtype=per_pos.dtype).values

    def copy(self) -> "Adam":
        other = object.__new__(Adam)
        other.__dict__.update(self.__dict__)
        for name in ("m_w", "v_w", "m_b", "v_b"):
            setattr(other, name, [a.copy() for a in getattr(self, name)])
        return other


def release_grouping(mlp: Mlp, index: int, optim: Adam | None = None) -> None:
    """Unpack a grouped layer to the dense pattern; realized weights are unchanged."""
    layer = mlp.layers[index]
    if not layer.grouped:
        return
    target = dense_pattern(layer.out_dim, layer.in_dim)
    parent = parent_map(target, layer.weight.pattern)
    layer.weight = convert_friendly(layer.weight, target)
    if optim is not None:
        optim.remap(index, parent)


def convert_layer(mlp: Mlp, index: int, target: GroupPattern, method: str, optim: Adam | None = None) -> float:
    """Move one layer onto ``target``; returns the max absolute change of the realized weight."""
    layer = mlp.layers[index]
    before = realize(layer.weight)
    source = layer.weight.pattern
    if method == "friendly":
        parent = parent_map(target, source)
        layer.weight = convert_friendly(layer.weight, target)
        if optim is not None:
            optim.remap(index, parent)
    elif method == "projection":
        layer.weight = convert_projection(layer.weight, target)
        if optim is not None:
            optim.reproject(index, source, target)
            optim.m_w[index][~layer.weight.mask] = 0
            optim.v_w[index][~layer.weight.mask] = 0
    else:
        raise ValueError(f"unknown conversion method {method!r}")
    return float(np.max(np.abs(realize(layer.weight) - before))) if before.size else 0.0


def group_layers(mlp: Mlp, pattern_for) -> None:
    """Project each compressed layer onto ``pattern_for(layer)`` (skipped when it returns None)."""
    for layer in mlp.layers:
        if not layer.compressed:
            continue
        p = pattern_for(layer)
        if p is not None:
            layer.weight = project(realize(layer.weight), p, dtype=layer.weight.values.dtype)


# losses return (mean loss, gradient w.r.t. predictions)
def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def huber_loss(pred, target, delta: float = 1.0) -> tuple[float, np.ndarray]:
    diff = pred - target
    a = np.abs(diff)
    quad = np.minimum(a, delta)
    loss = 0.5 * quad * quad + delta * (a - quad)
    grad = np.clip(diff, -delta, delta) / diff.size
    return float(np.mean(loss)), grad.astype(pred.dtype)


def softmax_xent(logits, labels) -> tuple[float, np.ndarray]:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    idx = np.arange(n)
    loss = -np.mean(np.log(p[idx, labels] + 1e-12))
    grad = p.copy()
    grad[idx, labels] -= 1
    return float(loss), (grad / n).astype(logits.dtype)
