"""Reward-aware pruning, the gradual-pruning baseline and the GST controller."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .grouping import CIRCULANT, DENSE, StructureError, build_pattern, pattern_from_name
from .netcore import Adam, Mlp, convert_layer, group_layers, release_grouping
from .sparsity import SparsityReport, magnitude_prune, measure

GROUPED, CONVERTED, RELEASED = "grouped", "converted", "released"
_PHASE_ORDER = {GROUPED: 0, CONVERTED: 1, RELEASED: 2}


@dataclass
class GradualConfig:
    s_i: float = 0.0
    s_f: float = 0.5
    t_0: int = 0
    n: int = 10
    delta: int = 1000


@dataclass
class ConversionConfig:
    target: str  # pattern name, e.g. "b4-friendly-b2" or "circulant-2"
    method: str = "friendly"  # or "projection"
    at_sparsity: float | None = None
    at_timestep: int | None = None


@dataclass
class GstConfig:
    p_step: float = 0.05
    p_start: int = 0
    p_fre: int = 1
    s_ub: float = 0.5
    block: int = 1
    s_shift: float = 0.0
    pattern: str = CIRCULANT  # initial grouping kind: circulant or a friendly kind
    scheduler: str = "rwp"  # or "gradual"
    gradual: GradualConfig = field(default_factory=GradualConfig)
    conversion: ConversionConfig | None = None
    r_prev_init: float = 0.0

    def __post_init__(self):
        for name in ("p_step", "s_ub", "s_shift"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.p_fre < 1:
            raise ValueError("p_fre must be >= 1")
        if self.block < 1:
            raise ValueError("block must be >= 1")
        if self.scheduler not in ("rwp", "gradual"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        c = self.conversion
        if c is not None:
            if c.method not in ("friendly", "projection"):
                raise ValueError(f"unknown conversion method {c.method!r}")
            if c.at_sparsity is None and c.at_timestep is None:
                c.at_sparsity = self.s_shift / 2
            if c.at_sparsity is not None and not c.at_sparsity < self.s_shift:
                raise ValueError("conversion.at_sparsity must be below s_shift")

    @property
    def groups_at_start(self) -> bool:
        return self.block > 1 and self.s_shift != 0


@dataclass
class SchedulerState:
    p_th: float = 0.0
    r_prev: float = 0.0
    t: int = 0
    s_now: float = 0.0
    phase: str = GROUPED
    conversion_done: bool = False
    pruned_now: bool = False  # a pruning event fired at step t

    def as_dict(self) -> dict:
        return asdict(self)


def gradual_target(t: float, s_i: float, s_f: float, t_0: float, n: int, delta: float) -> float:
    """Cubic sparsity ramp from ``s_i`` at ``t_0`` to ``s_f`` at ``t_0 + n*delta``."""
    span = n * delta
    frac = 1.0 if span <= 0 else min(max((t - t_0) / span, 0.0), 1.0)
    if frac == 0.0:
        return s_i
    if frac == 1.0:
        return s_f
    return s_f + (s_i - s_f) * (1 - frac) ** 3


def rwp_step(state: SchedulerState, r_new: float | None, cfg: GstConfig) -> float | None:
    """New pruning threshold when ``r_new`` beats the best return so far, else None."""
    if r_new is None or not r_new > state.r_prev:
        return None
    return state.p_th + cfg.p_step


def initial_pattern(cfg: GstConfig, rows: int, cols: int):
    if cfg.pattern == CIRCULANT:
        return build_pattern(CIRCULANT, rows, cols, cfg.block)
    return pattern_from_name(cfg.pattern, rows, cols)


class GstController:
    """Drives one run's grouping, conversion, release and pruning decisions.

    ``nets`` are the networks whose compressible layers GST manages and whose
    sparsity is measured; ``optims`` (same order, None allowed) get their
    moment arrays remapped whenever a layer changes pattern.
    """

    def __init__(self, cfg: GstConfig, nets: Sequence[Mlp], optims: Sequence[Adam | None] | None = None):
        self.cfg = cfg
        self.nets = list(nets)
        self.optims = list(optims) if optims is not None else [None] * len(self.nets)
        self.state = SchedulerState(r_prev=cfg.r_prev_init)

    def layers(self):
        for net in self.nets:
            yield from net.layers

    def measure(self) -> SparsityReport:
        return measure(self.layers())

    def init_gst(self) -> None:
        if not self.cfg.groups_at_start:
            self.state.phase = RELEASED
            return

        def pattern_for(layer):
            try:
                return initial_pattern(self.cfg, layer.out_dim, layer.in_dim)
            except StructureError:
                layer.compressed = False  # indivisible layers stay dense and uncounted
                return None

        for net in self.nets:
            group_layers(net, pattern_for)
        for net, opt in zip(self.nets, self.optims):
            if opt is not None:
                opt.reset(net)
        self.state.phase = GROUPED

    @property
    def grouped_mode(self) -> bool:
        return self.state.phase != RELEASED

    def before_update(self, t: int) -> None:
        """Measure sparsity, then release or convert before the gradient step."""
        st = self.state
        st.t = t
        st.pruned_now = False
        st.s_now = self.measure().s_global
        if st.phase != RELEASED and not self.cfg.s_shift > st.s_now:
            self._release_all()
            st.phase = RELEASED
        conv = self.cfg.conversion
        if conv is not None and not st.conversion_done and st.phase == GROUPED:
            due = (conv.at_sparsity is not None and st.s_now >= conv.at_sparsity) or (
                conv.at_timestep is not None and t >= conv.at_timestep
            )
            if due:
                self._convert_all(conv)
                st.conversion_done = True
                st.phase = CONVERTED

    def after_update(self, t: int, r_new: float | None) -> None:
        """Pruning check and best-return bookkeeping after the parameter update."""
        st, cfg = self.state, self.cfg
        if t % cfg.p_fre == 0 and t > cfg.p_start and st.s_now < cfg.s_ub:
            if cfg.scheduler == "rwp":
                new = rwp_step(st, r_new, cfg)
            else:
                g = cfg.gradual
                target = gradual_target(t, g.s_i, g.s_f, g.t_0, g.n, g.delta)
                new = max(st.p_th, target)
            if new is not None:
                st.p_th = new
                self._prune_all(min(new, 1.0))
                st.pruned_now = True
        if r_new is not None and r_new > st.r_prev:
            st.r_prev = r_new

    def tick(self, t: int, r_new: float | None) -> SchedulerState:
        self.before_update(t)
        self.after_update(t, r_new)
        return self.state

    def _prune_all(self, target: float) -> None:
        for layer in self.layers():
            if layer.compressed:
                layer.weight = magnitude_prune(layer.weight, target)

    def _release_all(self) -> None:
        for net, opt in zip(self.nets, self.optims):
            for i, layer in enumerate(net.layers):
                if layer.compressed and layer.grouped:
                    release_grouping(net, i, opt)

    def _convert_all(self, conv: ConversionConfig) -> None:
        for net, opt in zip(self.nets, self.optims):
            for i, layer in enumerate(net.layers):
                if layer.compressed and layer.weight.pattern.kind != DENSE:
                    target = pattern_from_name(conv.target, layer.out_dim, layer.in_dim)
                    convert_layer(net, i, target, conv.method, opt)


def average_cr(values: Sequence[float]) -> float:
    """Arithmetic mean of per-step compression ratios."""
    values = list(values)
    if not values:
        raise ValueError("average_cr of an empty log")
    return math.fsum(values) / len(values)


def check_phase_order(phases: Sequence[str]) -> bool:
    ranks = [_PHASE_ORDER[p] for p in phases]
    return all(a <= b for a, b in zip(ranks, ranks[1:]))
