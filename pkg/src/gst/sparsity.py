"""Magnitude pruning, sparsity measurement and compression-ratio accounting."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .grouping import CompressedTensor

# slack for accumulated float error in thresholds such as 0.05 * k
_TARGET_SLACK = 1e-9

VALUE_BITS = 16
HALF = 1.0 / VALUE_BITS


def positions_needed(target: float, positions: int) -> int:
    """Smallest pruned-position count whose fraction reaches ``target``."""
    if target <= 0:
        return 0
    if target >= 1:
        return positions
    return min(positions, math.ceil(target * positions - _TARGET_SLACK))


def magnitude_prune(ct: CompressedTensor, target: float) -> CompressedTensor:
    """Prune the smallest alive groups until the pruned-position fraction reaches ``target``.

    Groups are ranked by ``|value|`` with ties broken by group id.  Already
    pruned groups stay pruned, so repeated calls only grow the pruned set.
    """
    if not 0 <= target <= 1:
        raise ValueError(f"target sparsity must be in [0, 1], got {target}")
    out = ct.copy()
    sizes = ct.pattern.sizes
    pruned = ct.pruned_positions()
    need = positions_needed(target, ct.pattern.positions)
    if pruned >= need:
        return out
    alive = np.flatnonzero(ct.mask)
    order = alive[np.lexsort((alive, np.abs(ct.values[alive])))]
    reached = pruned + np.cumsum(sizes[order])
    k = int(np.searchsorted(reached, need, side="left")) + 1
    victims = order[:k]
    out.mask[victims] = False
    out.values[victims] = 0
    return out


@dataclass
class SparsityReport:
    s_layer: list[float]
    s_global: float
    p_comp: int
    p_total: int
    groups_comp: int = 0
    alive_groups_comp: int = 0
    blocks: list[float] = field(default_factory=list)
    pruned_comp: int = 0

    @property
    def frac(self) -> float:
        return self.p_comp / self.p_total if self.p_total else 0.0

    @property
    def block_eff(self) -> float:
        """Unpruned positions per alive group across compressed layers.

        Equals the block size whenever all compressed groups have one size;
        with mixed sizes it is the value that makes the closed-form CR agree
        with the stored-bit count.  Falls back to positions per group when
        everything is pruned and to 1 when nothing is compressed.
        """
        if self.alive_groups_comp:
            return (self.p_comp - self.pruned_comp) / self.alive_groups_comp
        return self.p_comp / self.groups_comp if self.groups_comp else 1.0


def _layer_sizes(layer) -> tuple[int, int]:
    w = layer.weight
    bias = getattr(layer, "bias", None)
    return w.pattern.positions, 0 if bias is None else int(np.size(bias))


def measure(layers: Iterable) -> SparsityReport:
    """Position sparsity from the masks of ``layers``.

    Each layer needs ``weight`` (a :class:`CompressedTensor`), ``bias`` and a
    ``compressed`` flag.  Biases count toward ``p_total`` only.
    """
    s_layer, blocks = [], []
    pruned_comp = p_comp = p_total = groups = alive = 0
    for layer in layers:
        w_pos, b_pos = _layer_sizes(layer)
        p_total += w_pos + b_pos
        if not layer.compressed:
            continue
        pruned = layer.weight.pruned_positions()
        s_layer.append(pruned / w_pos)
        blocks.append(w_pos / layer.weight.pattern.group_count)
        pruned_comp += pruned
        p_comp += w_pos
        groups += layer.weight.pattern.group_count
        alive += int(layer.weight.mask.sum())
    s_global = pruned_comp / p_comp if p_comp else 0.0
    return SparsityReport(s_layer, s_global, p_comp, p_total, groups, alive, blocks, pruned_comp)


def cr_ideal(block: float, sparsity: float, frac: float) -> float:
    return ((block + sparsity - 1) / block) * frac


def cr_bitmap(block: float, sparsity: float, frac: float) -> float:
    return ((block + sparsity - 1) / block - HALF) * frac


def stored_bits(layers: Iterable) -> tuple[int, int]:
    """(stored bits, dense 16-bit bits) under the bitmap storage model."""
    bits = total = 0
    for layer in layers:
        w_pos, b_pos = _layer_sizes(layer)
        total += VALUE_BITS * (w_pos + b_pos)
        bits += VALUE_BITS * b_pos
        if layer.compressed:
            bits += layer_payload_bits(layer.weight)
        else:
            bits += VALUE_BITS * w_pos
    return bits, total


def layer_payload_bits(ct: CompressedTensor) -> int:
    return VALUE_BITS * int(ct.mask.sum()) + ct.pattern.positions


def cr_exact(layers: Sequence) -> float:
    bits, total = stored_bits(layers)
    return 1.0 - bits / total if total else 0.0


def cr_formula(report: SparsityReport) -> float:
    return cr_bitmap(report.block_eff, report.s_global, report.frac)
