"""Run configuration: INI sections, strict validation, explicit defaults.

Every section is optional except ``[run]``; omitted keys take the defaults
below, and :func:`render_config` prints the full effective configuration so
no value is silently implied.
"""
from __future__ import annotations

import configparser
import re
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from ..grouping import StructureError, parse_pattern_name
from ..schedule import ConversionConfig, GradualConfig, GstConfig

TASK_LEARNERS = {
    "cartpole": "dqn",
    "pointmass": "td3lite",
    "two-spirals": "supervised",
    "scripted": "none",
}


class ConfigError(ValueError):
    pass


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")

    @field_validator("*", mode="before")
    @classmethod
    def _none_word(cls, v):
        if isinstance(v, str) and v.strip().lower() in ("none", "null", ""):
            return None
        return v


def _float_list(v):
    if isinstance(v, str):
        return [float(x) for x in re.split(r"[,\s]+", v.strip()) if x]
    return v


class RunSection(_Section):
    task: Literal["cartpole", "pointmass", "scripted", "two-spirals"]
    learner: Optional[Literal["dqn", "td3lite", "supervised", "none"]] = None
    total_timesteps: int = 10_000
    max_episodes: int = 0  # 0: no episode limit
    eval_period: int = 0  # 0: evaluate only at the end
    eval_episodes: int = 10
    log_period: int = 1
    seed: int = 0

    @model_validator(mode="after")
    def _check(self):
        if self.learner is None:
            self.learner = TASK_LEARNERS[self.task]
        if self.learner != TASK_LEARNERS[self.task]:
            raise ValueError(f"task {self.task} runs with learner {TASK_LEARNERS[self.task]}, not {self.learner}")
        if self.total_timesteps < 1 or self.log_period < 1 or self.eval_episodes < 1:
            raise ValueError("total_timesteps, log_period and eval_episodes must be >= 1")
        if self.eval_period < 0 or self.max_episodes < 0:
            raise ValueError("eval_period and max_episodes must be >= 0")
        if self.eval_period and self.eval_period % self.log_period:
            raise ValueError("eval_period must be a multiple of log_period")
        return self


class NetSection(_Section):
    hidden: list[int] = [64, 64]
    activation: Literal["relu", "tanh"] = "relu"

    @field_validator("hidden", mode="before")
    @classmethod
    def _split(cls, v):
        return [int(x) for x in _float_list(v)] if isinstance(v, str) else v


class OptimSection(_Section):
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_end: Optional[float] = None  # linear decay target; None keeps lr fixed
    lr_decay_steps: int = 0


class GstSection(_Section):
    p_step: float = 0.05
    p_start: int = 0
    p_fre: int = 1
    s_ub: float = 0.5
    block: int = 1
    s_shift: float = 0.0
    pattern: Literal["circulant", "b4-friendly-b2", "b2-friendly-b4"] = "circulant"
    scheduler: Literal["rwp", "gradual"] = "rwp"
    r_prev_init: float = 0.0


class GradualSection(_Section):
    s_i: float = 0.0
    s_f: float = 0.5
    t_0: int = 0
    n: int = 10
    delta: int = 1000


class ConversionSection(_Section):
    target: str
    method: Literal["friendly", "projection"] = "friendly"
    at_sparsity: Optional[float] = None
    at_timestep: Optional[int] = None

    @field_validator("target")
    @classmethod
    def _known(cls, v):
        try:
            parse_pattern_name(v)
        except StructureError as exc:
            raise ValueError(str(exc)) from None
        return v


class DqnSection(_Section):
    gamma: float = 0.99
    batch: int = 128
    buffer: int = 50_000
    learn_start: int = 1000
    train_every: int = 4
    target_sync: int = 250
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10_000
    huber_delta: float = 1.0
    double: bool = True


class Td3Section(_Section):
    gamma: float = 0.99
    tau: float = 0.005
    batch: int = 100
    buffer: int = 100_000
    learn_start: int = 1000
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    policy_delay: int = 2
    expl_noise: float = 0.1


class SupervisedSection(_Section):
    n_points: int = 2000
    noise: float = 0.2
    turns: float = 1.5
    data_seed: int = 1234
    val_fraction: float = 0.2
    batch: int = 64
    epoch_steps: int = 50


class ScriptedSection(_Section):
    rewards: list[float]

    @field_validator("rewards", mode="before")
    @classmethod
    def _split(cls, v):
        return _float_list(v)

    @field_validator("rewards")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("rewards must not be empty")
        return v


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    run: RunSection
    net: NetSection = NetSection()
    optim: OptimSection = OptimSection()
    gst: GstSection = GstSection()
    gradual: GradualSection = GradualSection()
    conversion: Optional[ConversionSection] = None
    dqn: DqnSection = DqnSection()
    td3: Td3Section = Td3Section()
    supervised: SupervisedSection = SupervisedSection()
    scripted: Optional[ScriptedSection] = None

    @model_validator(mode="after")
    def _check(self):
        if self.run.task == "scripted" and self.scripted is None:
            raise ValueError("task scripted needs a [scripted] section with rewards")
        self.gst_config()  # range checks live on GstConfig
        return self

    def gst_config(self) -> GstConfig:
        conv = None
        if self.conversion is not None:
            conv = ConversionConfig(**self.conversion.model_dump())
        return GstConfig(
            **self.gst.model_dump(),
            gradual=GradualConfig(**self.gradual.model_dump()),
            conversion=conv,
        )

    def with_seed(self, seed: int) -> "RunConfig":
        out = self.model_copy(deep=True)
        out.run.seed = seed
        return out


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    lines: dict[tuple[str, str | None], int] = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), n)
        elif section is not None:
            key = re.split(r"[=:]", line, maxsplit=1)[0].strip()
            lines.setdefault((section, key), n)
    return lines


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case so typos are reported verbatim
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    data = {section: dict(parser.items(section)) for section in parser.sections()}
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        where = _line_index(text)
        msgs = []
        for err in exc.errors():
            loc = [str(p) for p in err["loc"]]
            section = loc[0] if loc else None
            key = loc[1] if len(loc) > 1 else None
            line = where.get((section, key)) or where.get((section, None))
            place = f"{source}:{line}" if line else source
            field = ".".join(loc) or "(config)"
            msgs.append(f"{place}: [{field}] {err['msg']}")
        raise ConfigError("\n".join(msgs)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def render_config(cfg: RunConfig) -> str:
    """Full effective configuration in the same INI format it was read from."""
    out = []
    for name, section in cfg:
        if section is None:
            continue
        out.append(f"[{name}]")
        for key, value in section.model_dump().items():
            out.append(f"{key} = {_fmt(value)}")
        out.append("")
    return "\n".join(out)
