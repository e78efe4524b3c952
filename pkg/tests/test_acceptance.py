"""The nine acceptance criteria, each at its stated tolerance.

Every test appends one ``PASS``/``FAIL`` line that pytest prints in a
closing "acceptance criteria" section.  Criteria 6-9 share the cart-pole
and two-spirals runs through module-scoped fixtures.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gst.bitmap import decode_bitmap, encode_bitmap
from gst.grouping import (
    B2_FRIENDLY_B4,
    B4_FRIENDLY_B2,
    CIRCULANT,
    DENSE,
    CompressedTensor,
    build_pattern,
    convert_friendly,
    convert_projection,
    project,
    realize,
)
from gst.harness import Run, load_config, parse_config
from gst.netcore import Adam, CompressedLinear, Mlp, group_layers, mse_loss, release_grouping
from gst.numerics import finite_diff_grad, make_rng
from gst.sparsity import cr_bitmap, cr_exact, cr_ideal, magnitude_prune, measure, stored_bits
from oracles import group_mean_projection, schedule_oracle, stored_bits_by_count

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SEEDS = range(5)
KIND_BLOCKS = [(DENSE, 1), (CIRCULANT, 2), (CIRCULANT, 4), (B4_FRIENDLY_B2, 2), (B2_FRIENDLY_B4, 4)]
LOGGED_RUNS = []  # (config, RunLog) of every run, for criterion 9


def report(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


# --- 1 ---------------------------------------------------------------------

def random_scripted_config(rng):
    block = int(rng.choice([1, 2, 4]))
    s_shift = float(rng.choice([0.0, 0.3, 0.5, 1.0]))
    s_ub = float(rng.uniform(0.2, 0.95))
    p_step = float(rng.choice([0.02, 0.05, 0.1, 0.125]))
    p_fre = int(rng.integers(1, 6))
    p_start = int(rng.integers(-1, 30))
    conversion = block == 4 and s_shift > 0.2 and rng.random() < 0.5
    n = int(rng.integers(1, 501))
    rewards = rng.integers(-3, 4, size=n).cumsum()  # integer walk: ties exercise the strict comparison
    text = f"""
[run]
task = scripted
total_timesteps = {n}
[net]
hidden = 8, 16, 8
[gst]
block = {block}
s_shift = {s_shift}
s_ub = {s_ub}
p_step = {p_step}
p_fre = {p_fre}
p_start = {p_start}
[scripted]
rewards = {", ".join(str(int(r)) for r in rewards)}
"""
    if conversion:
        text += "[conversion]\ntarget = b4-friendly-b2\nmethod = friendly\nat_sparsity = 0.15\n"
    cfg = dict(block=block, s_shift=s_shift, s_ub=s_ub, p_step=p_step, p_fre=p_fre, p_start=p_start,
               conversion_at=0.15 if conversion else None)
    return parse_config(text), cfg, rewards.astype(float).tolist()


def test_1_scheduler_matches_oracle():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(50):
        run_cfg, cfg, rewards = random_scripted_config(rng)
        run = Run(run_cfg)
        run.run()
        LOGGED_RUNS.append((run_cfg, run.log))
        layers = [l for l in run.learner.net.layers if l.compressed]
        sizes = [l.weight.pattern.positions for l in layers]
        expected = schedule_oracle(rewards, cfg, sizes, [cfg["block"]] * len(sizes), [2] * len(sizes))
        got = [(r["p_th"], r["r_prev"], r["s_now"], r["phase"]) for r in run.log.rows]
        if got != expected:
            mismatches += 1
    elapsed = time.perf_counter() - start
    report(1, mismatches == 0 and elapsed < 10, f"50 sequences, {mismatches} mismatching, {elapsed:.1f} s (limit 10 s)")


# --- 2 ---------------------------------------------------------------------

def random_model(rng):
    widths = [4 * int(k) for k in rng.integers(1, 5, size=int(rng.integers(2, 5)))]
    layers = []
    for rows, cols in zip(widths[1:], widths[:-1]):
        kind, block = KIND_BLOCKS[int(rng.integers(len(KIND_BLOCKS)))]
        if kind == CIRCULANT and rng.random() < 0.2:
            kind, block = CIRCULANT, 1
        p = build_pattern(kind, rows, cols, block)
        ct = CompressedTensor(p, rng.normal(size=p.group_count), np.ones(p.group_count, bool))
        ct = magnitude_prune(ct, float(rng.uniform(0, 1)))
        layers.append(CompressedLinear(ct, np.zeros(rows), bool(rng.random() < 0.8)))
    return layers


def test_2_formula_accounting_parity():
    rng = np.random.default_rng(7)
    worst, bits_ok = 0.0, True
    for _ in range(200):
        layers = random_model(rng)
        rep = measure(layers)
        worst = max(worst, abs(cr_exact(layers) - cr_bitmap(rep.block_eff, rep.s_global, rep.frac)))
        bits_ok &= stored_bits(layers) == stored_bits_by_count(layers)
    units = (
        cr_bitmap(4, 0, 1) == 0.6875,
        cr_bitmap(1, 0, 1) == -0.0625,
        cr_bitmap(4, 1, 1) == 0.9375,
        cr_ideal(2, 0.5, 1) == 0.75,
    )
    ok = worst <= 1e-12 and bits_ok and all(units)
    report(2, ok, f"200 models, max |cr_exact - cr_bitmap| = {worst:.2e} (limit 1e-12), unit values exact: {all(units)}")


# --- 3 ---------------------------------------------------------------------

def structured_net(kind, block, density, seed):
    rng = make_rng(seed)
    widths = [4 * int(k) for k in rng.integers(1, 4, size=4)]
    net = Mlp.build(widths, rng, hidden="tanh", compress=[True] * 3, dtype=np.float64)
    if kind != DENSE:
        group_layers(net, lambda l: build_pattern(kind, l.out_dim, l.in_dim, block))
    for layer in net.layers:
        layer.weight = magnitude_prune(layer.weight, density)
    return net


def max_relative_error(net, seed):
    rng = make_rng(seed, 1)
    x = rng.normal(size=(4, net.in_dim))
    y = rng.normal(size=(4, net.out_dim))
    out, cache = net.forward(x)
    g = net.backward(cache, mse_loss(out, y)[1])
    analytic = np.concatenate([np.concatenate([w, b]) for w, b in zip(g.weights, g.biases)])
    alive = np.concatenate([np.concatenate([l.weight.mask, np.ones(l.bias.size, bool)]) for l in net.layers])
    flat = net.get_flat()

    def loss(v):
        net.set_flat(np.where(alive, v, 0.0))
        return mse_loss(net.forward(x)[0], y)[0]

    numeric = finite_diff_grad(loss, flat, eps=1e-4)
    net.set_flat(flat)
    numeric[~alive] = 0.0  # pruned groups are not parameters
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


def test_3_gradient_correctness():
    start = time.perf_counter()
    worst = 0.0
    for seed, ((kind, block), density) in enumerate((kb, d) for kb in KIND_BLOCKS for d in (0.0, 0.5)):
        worst = max(worst, max_relative_error(structured_net(kind, block, density, seed), seed))
    elapsed = time.perf_counter() - start
    report(3, worst <= 1e-3 and elapsed < 30, f"5 patterns x 2 densities, max relative error {worst:.2e} (limit 1e-3), {elapsed:.1f} s")


# --- 4 ---------------------------------------------------------------------

def structure_intact(layer):
    w = layer.weight
    m = realize(w)
    regrouped = project(m, w.pattern, dtype=m.dtype)
    return np.array_equal(realize(regrouped), m) and not m[~w.position_mask()].any()


def test_4_structure_and_conversions():
    rng = make_rng(4)
    net = Mlp.build([8, 16, 16, 16, 4], rng, compress=[True] * 4)
    kinds = [(CIRCULANT, 4), (B4_FRIENDLY_B2, 2), (B2_FRIENDLY_B4, 4), (CIRCULANT, 2)]
    for layer, (kind, block) in zip(net.layers, kinds):
        layer.weight = project(realize(layer.weight), build_pattern(kind, layer.out_dim, layer.in_dim, block))
    opt = Adam(net, lr=1e-2)
    broken = 0
    for step in range(10_000):
        x = rng.normal(size=(8, 8)).astype(np.float32)
        out, cache = net.forward(x)
        opt.step(net, net.backward(cache, mse_loss(out, rng.normal(size=(8, 4)).astype(np.float32))[1]))
        if step % 1000 == 999:
            for layer in net.layers:
                layer.weight = magnitude_prune(layer.weight, 0.05 * (step // 1000 + 1))
        broken += sum(not structure_intact(layer) for layer in net.layers)

    # exact conversions on random tensors
    friendly_delta = release_delta = projection_err = 0.0
    crng = np.random.default_rng(5)
    for _ in range(100):
        rows, cols = 4 * int(crng.integers(1, 4)), 4 * int(crng.integers(1, 4))
        mask = crng.random
        c4 = build_pattern(CIRCULANT, rows, cols, 4)
        src = CompressedTensor(c4, crng.normal(size=c4.group_count).astype(np.float32), mask(c4.group_count) > 0.3)
        for target in (build_pattern(B4_FRIENDLY_B2, rows, cols, 2), build_pattern(DENSE, rows, cols, 1)):
            friendly_delta = max(friendly_delta, float(np.max(np.abs(realize(convert_friendly(src, target)) - realize(src)))))
        b2f4 = build_pattern(B2_FRIENDLY_B4, rows, cols, 4)
        src2 = CompressedTensor(b2f4, crng.normal(size=b2f4.group_count).astype(np.float32), mask(b2f4.group_count) > 0.3)
        friendly_delta = max(friendly_delta, float(np.max(np.abs(realize(convert_friendly(src2, build_pattern(CIRCULANT, rows, cols, 2))) - realize(src2)))))
        layer_net = Mlp([CompressedLinear(src.copy(), np.zeros(rows, np.float32), True)], ["identity"])
        release_grouping(layer_net, 0)
        release_delta = max(release_delta, float(np.max(np.abs(realize(layer_net.layers[0].weight) - realize(src)))))
        full = CompressedTensor(c4, src.values.copy(), np.ones(c4.group_count, bool))
        c2 = build_pattern(CIRCULANT, rows, cols, 2)
        projected = realize(convert_projection(full, c2))
        projection_err = max(projection_err, float(np.max(np.abs(projected - group_mean_projection(realize(full), c2.group_of)))))
    ok = broken == 0 and friendly_delta == 0 and release_delta == 0 and projection_err <= 1e-6
    report(4, ok, f"10^4 steps, {broken} structure violations; friendly max change {friendly_delta}, "
                  f"release max change {release_delta}, projection vs group mean {projection_err:.1e} (limit 1e-6)")


# --- 5 ---------------------------------------------------------------------

def test_5_codec():
    rng = np.random.default_rng(55)
    bad_values = bad_masks = bad_bits = 0
    for _ in range(500):
        kind, block = KIND_BLOCKS[int(rng.integers(len(KIND_BLOCKS)))]
        rows, cols = 4 * int(rng.integers(1, 5)), 4 * int(rng.integers(1, 5))
        p = build_pattern(kind, rows, cols, block)
        scale = 10.0 ** rng.uniform(-3, 3)
        ct = CompressedTensor(p, (rng.normal(size=p.group_count) * scale).astype(np.float32), rng.random(p.group_count) < rng.uniform(0, 1))
        blob = encode_bitmap(ct)
        out = decode_bitmap(blob)
        bad_masks += not np.array_equal(out.mask, ct.mask)
        step = np.spacing(np.abs(ct.values).astype(np.float16)).astype(np.float64)
        bad_values += int(np.any(np.abs(out.values.astype(np.float64) - ct.values) > step))
        layer = CompressedLinear(ct, np.zeros(0, np.float32), True)
        bad_bits += blob.payload_bits != stored_bits([layer])[0]
    ok = bad_values == bad_masks == bad_bits == 0
    report(5, ok, f"500 tensors, {bad_masks} mask / {bad_values} value / {bad_bits} bit-count mismatches")


# --- 6 and 7: cart-pole ----------------------------------------------------

def run_config(name, seed):
    cfg = load_config(CONFIGS / f"{name}.ini").with_seed(seed)
    start = time.perf_counter()
    run = Run(cfg)
    run.run()
    LOGGED_RUNS.append((cfg, run.log))
    evals = [v for v in run.log.column("eval_return") if v is not None] + [run.final_eval]
    return {
        "final": run.final_eval,
        "best": max(evals),
        "average_cr": run.summary()["average_cr"],
        "episodes": run.episodes,
        "seconds": time.perf_counter() - start,
    }


@pytest.fixture(scope="module")
def cartpole():
    return {name: [run_config(name, s) for s in SEEDS] for name in ("cartpole_dense", "cartpole_gst", "cartpole_rwp")}


def test_6_cartpole_reward(cartpole):
    base, gst = cartpole["cartpole_dense"], cartpole["cartpole_gst"]
    base_ok = sum(b["best"] >= 195 and b["episodes"] <= 500 for b in base)
    reach = sum(g["best"] >= 0.9 * b["final"] for g, b in zip(gst, base))
    final_to_final = sum(g["final"] >= 0.9 * b["final"] for g, b in zip(gst, base))
    slowest = max(r["seconds"] for runs in cartpole.values() for r in runs)
    detail = (
        f"baseline >= 195 within 500 episodes on {base_ok}/5 seeds; GST reaches 0.9x baseline final on {reach}/5 "
        f"(final-vs-final {final_to_final}/5); slowest seed {slowest:.0f} s; "
        f"baseline finals {[round(b['final'], 1) for b in base]}, GST best {[round(g['best'], 1) for g in gst]}"
    )
    report(6, base_ok >= 3 and reach >= 3 and slowest < 300, detail)


def test_7_cartpole_cr_gain(cartpole):
    gains = [g["average_cr"] - r["average_cr"] for g, r in zip(cartpole["cartpole_gst"], cartpole["cartpole_rwp"])]
    report(7, all(d >= 0.15 for d in gains), "per-seed average CR gain (points): " + ", ".join(f"{100 * d:.1f}" for d in gains))


# --- 8: two-spirals --------------------------------------------------------

@pytest.fixture(scope="module")
def spirals():
    start = time.perf_counter()
    out = {name: [run_config(name, s) for s in SEEDS] for name in ("spirals_dense", "spirals_gst")}
    return out, time.perf_counter() - start


def test_8_spirals(spirals):
    runs, elapsed = spirals
    gaps = [d["final"] - g["final"] for d, g in zip(runs["spirals_dense"], runs["spirals_gst"])]
    crs = [g["average_cr"] for g in runs["spirals_gst"]]
    ok = all(gap <= 0.02 for gap in gaps) and all(c >= 0.5 for c in crs) and elapsed < 120
    report(8, ok, f"accuracy gap (points) {[round(100 * x, 2) for x in gaps]}, average CR {[round(c, 3) for c in crs]}, {elapsed:.0f} s total")


# --- 9 ---------------------------------------------------------------------

def test_9_monotone_and_legal(cartpole, spirals):
    assert LOGGED_RUNS, "criteria 1, 6-8 populate the run list"
    non_monotone = illegal = events = 0
    for cfg, log in LOGGED_RUNS:
        for col in ("s_now", "p_th", "r_prev"):
            vals = log.column(col)
            non_monotone += sum(b < a for a, b in zip(vals, vals[1:]))
        g = cfg.gst
        for t, s_before, _ in log.events:
            events += 1
            illegal += not (t % g.p_fre == 0 and t > g.p_start and s_before < g.s_ub)
    report(9, non_monotone == 0 and illegal == 0,
           f"{len(LOGGED_RUNS)} runs, {events} pruning events: {non_monotone} decreases, {illegal} illegal instants")
