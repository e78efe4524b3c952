"""Weight-sharing partitions and the operations that move weights between them.

A :class:`GroupPattern` assigns every position of a ``rows x cols`` matrix to
one group; all positions of a group hold one shared value.  Supported kinds:

``dense``
    every position is its own group.
``circulant``
    ``B x B`` blocks where entry ``(i, j)`` of a block is ``g[(j - i) mod B]``.
``b4-friendly-b2``
    each circulant-4 diagonal split into its rows {0,1} and rows {2,3} halves
    (8 groups of 2 per 4x4 block); refines circulant-4.
``b2-friendly-b4``
    4x4 blocks built from four 2x2 circulants with top-left tied to
    bottom-right and top-right tied to bottom-left (4 groups of 4 per block);
    circulant-2 refines it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .numerics import DTYPE, ShapeError

DENSE = "dense"
CIRCULANT = "circulant"
B4_FRIENDLY_B2 = "b4-friendly-b2"
B2_FRIENDLY_B4 = "b2-friendly-b4"
KINDS = (DENSE, CIRCULANT, B4_FRIENDLY_B2, B2_FRIENDLY_B4)

# group size implied by each friendly kind
_FRIENDLY_BLOCK = {B4_FRIENDLY_B2: 2, B2_FRIENDLY_B4: 4}


class StructureError(ValueError):
    pass


class ConversionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GroupPattern:
    rows: int
    cols: int
    kind: str
    block: int
    group_of: np.ndarray  # (rows, cols) int64, read-only
    group_count: int
    sizes: np.ndarray = field(repr=False)  # members per group

    @property
    def positions(self) -> int:
        return self.rows * self.cols

    @property
    def name(self) -> str:
        if self.kind in (DENSE,) + tuple(_FRIENDLY_BLOCK):
            return self.kind
        return f"{self.kind}-{self.block}"

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroupPattern):
            return NotImplemented
        return (self.rows, self.cols, self.kind, self.block) == (other.rows, other.cols, other.kind, other.block)

    def __hash__(self) -> int:
        return hash((self.rows, self.cols, self.kind, self.block))


def parse_pattern_name(name: str) -> tuple[str, int]:
    """``"circulant-4"`` -> ``("circulant", 4)``; friendly kinds and ``dense`` carry their own block."""
    name = name.strip().lower()
    if name == DENSE:
        return DENSE, 1
    if name in _FRIENDLY_BLOCK:
        return name, _FRIENDLY_BLOCK[name]
    if name.startswith(CIRCULANT + "-"):
        try:
            block = int(name[len(CIRCULANT) + 1:])
        except ValueError:
            pass
        else:
            return CIRCULANT, block
    raise StructureError(f"unknown pattern name {name!r}")


def _raw_labels(kind: str, rows: int, cols: int, block: int) -> np.ndarray:
    i = np.arange(rows)[:, None]
    j = np.arange(cols)[None, :]
    if kind == DENSE:
        return i * cols + j
    if kind == CIRCULANT:
        bi, bj = i // block, j // block
        offset = (j % block - i % block) % block
        return ((bi * (cols // block) + bj) * block + offset)
    bi, bj = i // 4, j // 4
    li, lj = i % 4, j % 4
    base = (bi * (cols // 4) + bj) * 8
    if kind == B4_FRIENDLY_B2:
        offset = (lj - li) % 4
        half = li // 2
        return base + offset * 2 + half
    # b2-friendly-b4: sub-block parity decides TL/BR vs TR/BL pairing
    pair = (li // 2 + lj // 2) % 2
    diag = ((lj % 2) - (li % 2)) % 2
    return base + pair * 2 + diag


@lru_cache(maxsize=256)
def build_pattern(kind: str, rows: int, cols: int, block: int = 1) -> GroupPattern:
    if kind not in KINDS:
        raise StructureError(f"unknown pattern kind {kind!r}")
    if rows <= 0 or cols <= 0:
        raise StructureError("pattern dimensions must be positive")
    if kind == DENSE:
        if block != 1:
            raise StructureError("dense pattern has block size 1")
    elif kind == CIRCULANT:
        if block < 1:
            raise StructureError("block size must be >= 1")
        if rows % block or cols % block:
            raise StructureError(f"{rows}x{cols} is not divisible by block size {block}")
    else:
        if block != _FRIENDLY_BLOCK[kind]:
            raise StructureError(f"{kind} has group size {_FRIENDLY_BLOCK[kind]}, not {block}")
        if rows % 4 or cols % 4:
            raise StructureError(f"{kind} needs dimensions divisible by 4, got {rows}x{cols}")
    raw = np.broadcast_to(_raw_labels(kind, rows, cols, block), (rows, cols)).ravel()
    # renumber by row-major first occurrence
    _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    group_of = rank[inverse].reshape(rows, cols).astype(np.int64)
    group_of.setflags(write=False)
    sizes = np.bincount(group_of.ravel(), minlength=order.size)
    sizes.setflags(write=False)
    return GroupPattern(rows, cols, kind, block, group_of, int(order.size), sizes)


def dense_pattern(rows: int, cols: int) -> GroupPattern:
    return build_pattern(DENSE, rows, cols, 1)


def pattern_from_name(name: str, rows: int, cols: int) -> GroupPattern:
    kind, block = parse_pattern_name(name)
    if kind == CIRCULANT and block == 1:
        kind = DENSE
    return build_pattern(kind, rows, cols, block)


def members(p: GroupPattern) -> list[list[tuple[int, int]]]:
    out: list[list[tuple[int, int]]] = [[] for _ in range(p.group_count)]
    for i in range(p.rows):
        for j in range(p.cols):
            out[int(p.group_of[i, j])].append((i, j))
    return out


@dataclass
class CompressedTensor:
    pattern: GroupPattern
    values: np.ndarray
    mask: np.ndarray  # True = alive

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.dtype.kind != "f":
            self.values = self.values.astype(DTYPE)
        self.mask = np.asarray(self.mask, dtype=bool)
        g = self.pattern.group_count
        if self.values.shape != (g,) or self.mask.shape != (g,):
            raise StructureError(
                f"expected {g} values and mask entries, got {self.values.shape} and {self.mask.shape}"
            )
        self.values[~self.mask] = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.pattern.rows, self.pattern.cols

    def position_mask(self) -> np.ndarray:
        return self.mask[self.pattern.group_of]

    def pruned_positions(self) -> int:
        return int(self.pattern.sizes[~self.mask].sum())

    def copy(self) -> "CompressedTensor":
        return CompressedTensor(self.pattern, self.values.copy(), self.mask.copy())


def realize(ct: CompressedTensor) -> np.ndarray:
    return np.where(ct.mask, ct.values, 0)[ct.pattern.group_of]


def project(m, p: GroupPattern, dtype=None) -> CompressedTensor:
    """Group-mean projection: the Frobenius-nearest matrix with structure ``p``."""
    m = np.asarray(m)
    if m.shape != (p.rows, p.cols):
        raise ShapeError(f"matrix {m.shape} does not match pattern {p.rows}x{p.cols}")
    dtype = dtype or (m.dtype if m.dtype.kind == "f" else DTYPE)
    if p.kind == DENSE:
        values = m.ravel().astype(dtype, copy=True)
    else:
        sums = np.bincount(p.group_of.ravel(), weights=m.ravel().astype(np.float64), minlength=p.group_count)
        values = (sums / p.sizes).astype(dtype)
    return CompressedTensor(p, values, np.ones(p.group_count, dtype=bool))


def _containing_groups(fine: GroupPattern, coarse: GroupPattern) -> np.ndarray | None:
    """For each fine group, the coarse group containing it, or None if not a refinement."""
    f = fine.group_of.ravel()
    c = coarse.group_of.ravel()
    parent = np.full(fine.group_count, -1, dtype=np.int64)
    parent[f] = c
    if np.any(parent[f] != c):
        return None
    return parent


def refines(fine: GroupPattern, coarse: GroupPattern) -> bool:
    if (fine.rows, fine.cols) != (coarse.rows, coarse.cols):
        raise StructureError(
            f"shape mismatch: {fine.rows}x{fine.cols} vs {coarse.rows}x{coarse.cols}"
        )
    return _containing_groups(fine, coarse) is not None


def convert_friendly(ct: CompressedTensor, target: GroupPattern) -> CompressedTensor:
    src = ct.pattern
    if (src.rows, src.cols) != (target.rows, target.cols):
        raise ConversionError(f"shape mismatch: {src.name} {src.rows}x{src.cols} vs {target.name}")
    parent = _containing_groups(target, src)
    if parent is None:
        raise ConversionError(f"{target.name} does not refine {src.name}; use projection instead")
    return CompressedTensor(target, ct.values[parent].copy(), ct.mask[parent].copy())


def convert_projection(ct: CompressedTensor, target: GroupPattern) -> CompressedTensor:
    if (ct.pattern.rows, ct.pattern.cols) != (target.rows, target.cols):
        raise ConversionError(f"shape mismatch: {ct.pattern.name} vs {target.name}")
    out = project(realize(ct), target, dtype=ct.values.dtype)
    dead = ~ct.position_mask().ravel()
    hit = np.bincount(target.group_of.ravel(), weights=dead, minlength=target.group_count) > 0
    out.mask[hit] = False
    out.values[hit] = 0
    return out


def parent_map(fine: GroupPattern, coarse: GroupPattern) -> np.ndarray:
    """Index array mapping each fine group to its containing coarse group."""
    parent = _containing_groups(fine, coarse)
    if parent is None:
        raise ConversionError(f"{fine.name} does not refine {coarse.name}")
    return parent
