"""One training run: task, learner, GST controller and the run log.

Per timestep the order follows the GST loop: gather experience (and the
newest episode return), measure sparsity and release/convert, apply the
learner's gradient step, run the pruning check, update the best return.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from ..checkpoint import load_checkpoint, save_checkpoint
from ..netcore import Adam, Mlp
from ..numerics import make_rng, rng_state, set_rng_state
from ..rl.dqn import DqnAgent, DqnHyper
from ..rl.envs import CartPole, PointMass, ScriptedEnv, make_env
from ..rl.evaluate import evaluate
from ..rl.replay import ReplayBuffer, Transition
from ..rl.td3 import Td3Agent, Td3Hyper
from ..schedule import GstController, SchedulerState
from ..sparsity import cr_exact, cr_formula, measure
from ..supervised import SpiralsHyper, SpiralsTask
from .config import RunConfig, render_config

SCHEMA = "gst-runlog/1"
COLUMNS = [
    "timestep",
    "episodes",
    "episode_return",
    "eval_return",
    "s_now",
    "p_th",
    "r_prev",
    "phase",
    "cr_formula",
    "cr_exact",
    "wall_time",
]
NUMERIC = ["episode_return", "eval_return", "s_now", "p_th", "r_prev", "cr_formula", "cr_exact"]

# independent substreams of one run seed
NET_STREAM, ACT_STREAM, SAMPLE_STREAM, ENV_STREAM, NOISE_STREAM = range(5)


@dataclass
class RunLog:
    rows: list[dict] = field(default_factory=list)
    events: list[tuple[int, float, float]] = field(default_factory=list)  # (t, s_now at the check, new p_th)

    def column(self, name: str) -> list:
        return [row[name] for row in self.rows]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def row_to_csv(row: dict) -> list[str]:
    return [_fmt(row[c]) for c in COLUMNS]


def write_runlog(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for row in rows:
            w.writerow(row_to_csv(row))


def read_runlog(path) -> list[dict]:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    rows = []
    for raw in reader:
        row: dict = {}
        for key, value in raw.items():
            if key in ("timestep", "episodes"):
                row[key] = int(value)
            elif key == "phase":
                row[key] = value
            else:
                row[key] = float(value) if value != "" else None
        rows.append(row)
    return rows


class Run:
    def __init__(self, cfg: RunConfig, seed: int | None = None):
        if seed is not None:
            cfg = cfg.with_seed(seed)
        self.cfg = cfg
        self.seed = cfg.run.seed
        self.task = cfg.run.task
        self.gst_cfg = cfg.gst_config()
        self.net_rng = make_rng(self.seed, NET_STREAM)
        self.act_rng = make_rng(self.seed, ACT_STREAM)
        self.sample_rng = make_rng(self.seed, SAMPLE_STREAM)
        self.noise_rng = make_rng(self.seed, NOISE_STREAM)
        self.t = 0
        self.episodes = 0
        self.episode_return = 0.0
        self.state: np.ndarray | None = None
        self.window_return: float | None = None
        self.window_eval: float | None = None
        self.final_eval: float | None = None
        self.log = RunLog()
        self.wall_start = time.perf_counter()
        self._build()
        self.controller = GstController(self.gst_cfg, self.learner.nets, self.learner.optims)
        self.controller.init_gst()
        self._sync_targets()

    # construction ------------------------------------------------------
    def _optim(self, net: Mlp) -> Adam:
        o = self.cfg.optim
        return Adam(net, lr=o.lr, beta1=o.beta1, beta2=o.beta2, eps=o.eps)

    def _mlp(self, sizes, output="identity") -> Mlp:
        return Mlp.build(sizes, self.net_rng, hidden=self.cfg.net.activation, output=output)

    def _build(self) -> None:
        hidden = list(self.cfg.net.hidden)
        if self.task == "cartpole":
            self.env = make_env("cartpole", make_rng(self.seed, ENV_STREAM))
            q = self._mlp([4, *hidden, 2])
            self.learner = DqnAgent(q, self._optim(q), DqnHyper(**self.cfg.dqn.model_dump()))
            self.buffer = ReplayBuffer(self.cfg.dqn.buffer, 4)
        elif self.task == "pointmass":
            self.env = make_env("pointmass", make_rng(self.seed, ENV_STREAM))
            actor = self._mlp([4, *hidden, 2], output="tanh")
            c1 = self._mlp([6, *hidden, 1])
            c2 = self._mlp([6, *hidden, 1])
            opts = (self._optim(actor), self._optim(c1), self._optim(c2))
            self.learner = Td3Agent(actor, (c1, c2), opts, Td3Hyper(**self.cfg.td3.model_dump()))
            self.buffer = ReplayBuffer(self.cfg.td3.buffer, 4, action_dim=2, discrete=False)
        elif self.task == "two-spirals":
            net = self._mlp([2, *hidden, 2])
            self.learner = SpiralsTask(net, self._optim(net), SpiralsHyper(**self.cfg.supervised.model_dump()))
        else:
            net = self._mlp([1, *hidden, 1])
            self.learner = _Frozen(net)
            self.env = ScriptedEnv(self.cfg.scripted.rewards)

    def _sync_targets(self) -> None:
        """Targets start as exact copies of the (possibly regrouped) online nets."""
        if isinstance(self.learner, DqnAgent):
            self.learner.target.copy_from(self.learner.q)
        elif isinstance(self.learner, Td3Agent):
            a = self.learner
            a.actor_target.copy_from(a.actor)
            a.critic1_target.copy_from(a.critic1)
            a.critic2_target.copy_from(a.critic2)

    # run loop ----------------------------------------------------------
    @property
    def total_timesteps(self) -> int:
        total = self.cfg.run.total_timesteps
        if self.task == "scripted":
            total = min(total, len(self.env))
        return total

    def finished(self) -> bool:
        if self.t >= self.total_timesteps:
            return True
        limit = self.cfg.run.max_episodes
        return bool(limit) and self.episodes >= limit

    def _set_lr(self) -> None:
        o = self.cfg.optim
        if o.lr_end is None or o.lr_decay_steps <= 0:
            return
        lr = o.lr + min(self.t / o.lr_decay_steps, 1.0) * (o.lr_end - o.lr)
        for opt in self.learner.optims:
            opt.lr = lr

    def _experience(self) -> float | None:
        """Environment interaction for step ``t``; returns a completed episode's return."""
        t = self.t
        if self.task == "scripted":
            _, r, _, _ = self.env.step()
            self.episodes += 1
            return r
        if self.task == "two-spirals":
            h = self.learner.hyper
            if t > 0 and t % h.epoch_steps == 0:
                loss, _ = self.learner.validation()
                self.episodes += 1
                return -loss
            return None
        if self.state is None:
            self.state = self.env.reset()
            self.episode_return = 0.0
        if self.task == "cartpole":
            action = self.learner.act(self.state, t, self.act_rng)
        elif t < self.learner.hyper.learn_start:
            action = self.act_rng.uniform(-1, 1, size=2)
        else:
            action = self.learner.act(self.state, self.act_rng)
        nxt, reward, terminal, done = self.env.step(action)
        self.buffer.add(Transition(self.state, action, reward, nxt, terminal))
        self.episode_return += reward
        self.state = nxt
        if done:
            self.episodes += 1
            ret = self.episode_return
            self.state = None
            return ret
        return None

    def _learn(self) -> None:
        t = self.t
        if self.task == "scripted":
            return
        self._set_lr()
        if self.task == "two-spirals":
            self.learner.train_step(self.sample_rng)
        elif self.task == "cartpole":
            h = self.learner.hyper
            if t >= h.learn_start and t % h.train_every == 0 and len(self.buffer) >= h.batch:
                self.learner.update(self.buffer.sample(h.batch, self.sample_rng))
        else:
            h = self.learner.hyper
            if t >= h.learn_start and len(self.buffer) >= h.batch:
                self.learner.update(self.buffer.sample(h.batch, self.sample_rng), self.noise_rng)

    def evaluate(self) -> float:
        n = self.cfg.run.eval_episodes
        if self.task == "cartpole":
            return evaluate(self.learner.greedy, lambda g: CartPole(g), n, self.seed)
        if self.task == "pointmass":
            return evaluate(self.learner.policy, lambda g: PointMass(g), n, self.seed)
        if self.task == "two-spirals":
            return self.learner.validation()[1]
        return float("nan")

    def step(self) -> dict | None:
        """Advance one timestep; returns the log row when ``t`` is on the log grid."""
        t = self.t
        r_new = self._experience()
        if r_new is not None:
            self.window_return = r_new
        c = self.controller
        c.before_update(t)
        self._learn()
        c.after_update(t, r_new)
        if c.state.pruned_now:
            self.log.events.append((t, c.state.s_now, c.state.p_th))
        period = self.cfg.run.eval_period
        if period and t > 0 and t % period == 0:
            self.window_eval = self.evaluate()
        row = None
        if t % self.cfg.run.log_period == 0:
            row = self._row()
            self.log.rows.append(row)
            self.window_return = None
            self.window_eval = None
        self.t += 1
        return row

    def _row(self) -> dict:
        st = self.controller.state
        layers = list(self.controller.layers())
        report = measure(layers)
        return {
            "timestep": self.t,
            "episodes": self.episodes,
            "episode_return": self.window_return,
            "eval_return": self.window_eval,
            "s_now": st.s_now,
            "p_th": st.p_th,
            "r_prev": st.r_prev,
            "phase": st.phase,
            "cr_formula": cr_formula(report),
            "cr_exact": cr_exact(layers),
            "wall_time": round(time.perf_counter() - self.wall_start, 6),
        }

    def run(self, on_row=None, max_steps: int | None = None) -> RunLog:
        done = 0
        while not self.finished() and (max_steps is None or done < max_steps):
            row = self.step()
            if row is not None and on_row is not None:
                on_row(row)
            done += 1
        if self.finished() and self.task != "scripted":
            self.final_eval = self.evaluate()
        return self.log

    def summary(self) -> dict:
        from ..schedule import average_cr

        crs = self.log.column("cr_formula")
        evals = [v for v in self.log.column("eval_return") if v is not None]
        return {
            "schema": SCHEMA,
            "seed": self.seed,
            "timesteps": self.t,
            "episodes": self.episodes,
            "average_cr": average_cr(crs) if crs else None,
            "final_eval_return": self.final_eval,
            "max_eval_return": max(evals) if evals else None,
            "final_s_now": self.controller.state.s_now,
            "final_phase": self.controller.state.phase,
            "pruning_events": [list(e) for e in self.log.events],
        }

    # checkpointing -----------------------------------------------------
    def _named(self) -> tuple[dict, dict]:
        L = self.learner
        if isinstance(L, DqnAgent):
            return {"q": L.q, "q_target": L.target}, {"q": L.optim}
        if isinstance(L, Td3Agent):
            nets = {
                "actor": L.actor,
                "critic1": L.critic1,
                "critic2": L.critic2,
                "actor_target": L.actor_target,
                "critic1_target": L.critic1_target,
                "critic2_target": L.critic2_target,
            }
            return nets, {"actor": L.actor_opt, "critic1": L.critic1_opt, "critic2": L.critic2_opt}
        return {"net": L.net}, ({"net": L.optim} if L.optim is not None else {})

    def save(self, path) -> None:
        nets, optims = self._named()
        gst_nets = [name for name, net in nets.items() if any(net is n for n in self.controller.nets)]
        extra = {
            "config": render_config(self.cfg),
            "gst_nets": gst_nets,
            "t": self.t,
            "episodes": self.episodes,
            "episode_return": self.episode_return,
            "state": None if self.state is None else self.state.tolist(),
            "final_eval": self.final_eval,
            "rngs": {
                name: rng_state(getattr(self, name))
                for name in ("net_rng", "act_rng", "sample_rng", "noise_rng")
            },
            "counters": _learner_counters(self.learner),
            "log_rows": self.log.rows,
            "log_events": [list(e) for e in self.log.events],
        }
        arrays = {}
        if hasattr(self, "buffer"):
            arrays = {f"buffer.{k}": v for k, v in self.buffer.arrays().items()}
        env = getattr(self, "env", None)
        if isinstance(env, ScriptedEnv):
            extra["env"] = {"index": env.index}
        elif env is not None:
            extra["env"] = env.get_state()
        save_checkpoint(path, nets, optims, self.controller.state.as_dict(), extra, arrays)

    @classmethod
    def resume(cls, cfg: RunConfig, path) -> "Run":
        ck = load_checkpoint(path)
        extra = ck["extra"]
        run = cls(cfg)
        nets, optims = run._named()
        for name, net in nets.items():
            net.copy_from(ck["nets"][name])
        for name, opt in optims.items():
            opt.__dict__.update(ck["optims"][name].__dict__)
        run.controller.state = SchedulerState(**ck["scheduler"])
        run.t = extra["t"]
        run.episodes = extra["episodes"]
        run.episode_return = extra["episode_return"]
        run.state = None if extra["state"] is None else np.array(extra["state"])
        run.final_eval = extra["final_eval"]
        for name, st in extra["rngs"].items():
            set_rng_state(getattr(run, name), st)
        _set_learner_counters(run.learner, extra["counters"])
        run.log = RunLog(extra["log_rows"], [tuple(e) for e in extra["log_events"]])
        if hasattr(run, "buffer"):
            run.buffer.load_arrays({k[len("buffer."):]: v for k, v in ck["extra_arrays"].items()})
        if "env" in extra:
            if isinstance(run.env, ScriptedEnv):
                run.env.index = extra["env"]["index"]
            else:
                run.env.set_state(extra["env"])
        return run


class _Frozen:
    """Scripted-task stand-in learner: a network that is measured but never trained."""

    def __init__(self, net: Mlp):
        self.net = net
        self.optim = None

    @property
    def nets(self):
        return [self.net]

    @property
    def optims(self):
        return [None]


def _learner_counters(learner) -> dict:
    if isinstance(learner, DqnAgent):
        return {"updates": learner.updates}
    if isinstance(learner, Td3Agent):
        return {"critic_steps": learner.critic_steps, "actor_steps": learner.actor_steps}
    return {}


def _set_learner_counters(learner, counters: dict) -> None:
    for key, value in counters.items():
        setattr(learner, key, value)


def train(cfg: RunConfig, out_dir, seed: int | None = None, resume_from=None) -> dict:
    """Run to completion, streaming the CSV; returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    run = Run.resume(cfg, resume_from) if resume_from else Run(cfg)
    csv_path = out / "runlog.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# {SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for row in run.log.rows:
            writer.writerow(row_to_csv(row))
        try:
            run.run(on_row=lambda row: writer.writerow(row_to_csv(row)))
        finally:
            fh.flush()
    run.save(out / "final.gstc")
    summary = run.summary()
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary
