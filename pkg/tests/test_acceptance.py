"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (printed in the terminal summary)
before asserting, so a failing criterion still reports its measured value.
"""
import itertools
import json
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from oracles import counting_forward, standalone_forward
from stageprune.analysis import (accuracy_expectation_vs_grid, config_counts, config_inclusion_probability,
                                 expected_channel_samples, inclusion_counts, run_ranking_experiment,
                                 uniform_maximality)
from stageprune.autograd import Tensor, conv2d, cross_entropy, grad_check, linear, relu, reshape
from stageprune.cli import main
from stageprune.cost import Budget, CostModel, CostTable, flops_of_config, latency_of_config, stage_cost_bounds
from stageprune.datasets import split_per_class, standardize, synth_blobs
from stageprune.search import EAConfig, InfeasibleBudgetError, StageEvaluator, dea_search, stage_ea
from stageprune.slimnet import LayerSpec, Supernet, SupernetSpec, count_candidates, desk_spec, ratio_grid
from stageprune.training import TrainConfig, sample_width_config, stage_losses, train_supernet

SEEDS = (0, 1, 2)


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)


def desk_data(seed):
    """4-class 12x12 blob task used by the training-based criteria."""
    ds = split_per_class(synth_blobs(1600, 12, 4, seed=seed, noise=0.4, jitter=3, blobs=6), 100, seed)
    (xt, yt), (xv, yv) = ds.train, ds.val
    (xt, xv), _ = standardize(xt, xv)
    return xt, yt, xv, yv


def desk_train_cfg(seed, **kw):
    return TrainConfig(epochs=20, batch_size=64, lr=0.025, decay_epochs=13, seed=seed, **kw)


def random_config(spec, rng):
    return tuple(int(rng.choice(spec.choices(k))) for k in range(spec.depth))


# ---------------------------------------------------------------- 1

def test_c01_gradient_correctness():
    t0 = time.time()
    errs = []
    for seed in range(6):
        rng = np.random.default_rng(seed)
        ci, c1, c2, k, s = 1 + seed % 2, int(rng.integers(2, 4)), int(rng.integers(2, 4)), 3, 5
        he = lambda shape: Tensor(rng.standard_normal(shape) * np.sqrt(2 / np.prod(shape[1:])),  # noqa: E731
                                  requires_grad=True)
        x = Tensor(rng.standard_normal((2, ci, s, s)))
        y = rng.integers(0, k, 2)
        p = [he((c1, ci, 3, 3)), he((c1,)), he((c2, c1, 3, 3)), he((c2,)), he((k, c2 * s * s)), he((k,))]

        def loss_fn():
            h = relu(conv2d(x, p[0], p[1], 1, 1))
            h = relu(conv2d(h, p[2], p[3], 1, 1))
            return cross_entropy(linear(reshape(h, (2, -1)), p[4], p[5]), y)

        errs.append(grad_check(loss_fn, p, 1e-5))
    ok = max(errs) < 1e-4
    report(1, ok, f"max rel err {max(errs):.2e} over {len(errs)} nets (< 1e-4), {time.time() - t0:.1f}s")
    assert ok


# ---------------------------------------------------------------- 2

def test_c02_weight_sharing_semantics():
    spec = desk_spec(in_channels=2, size=12, n_classes=5)
    net = Supernet(spec, seed=3, dtype=np.float64)
    weights = {i: (net.params[f"layer{i}.weight"].data, net.params[f"layer{i}.bias"].data)
               for i, l in enumerate(spec.layers) if l.has_weights}
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 2, 12, 12))
    worst = 0.0
    for _ in range(100):
        cfg = random_config(spec, rng)
        worst = max(worst, float(np.max(np.abs(net.forward(x, cfg).data - standalone_forward(spec, weights, cfg, x)))))
    ok = worst <= 1e-6 and spec.depth == 6
    report(2, ok, f"100 configs on a {spec.depth}-layer supernet, max abs diff {worst:.2e} (<= 1e-6)")
    assert ok


# ---------------------------------------------------------------- 3

def test_c03_expectations_vs_monte_carlo():
    m, draws = 8, 100_000
    kept = inclusion_counts(m, draws, np.random.default_rng(0))
    z_ch = []
    for i in range(1, m + 1):
        p = expected_channel_samples(i, m, 1.0)
        se = math.sqrt(draws * p * (1 - p))
        z_ch.append(0.0 if se == 0 and kept[i - 1] == draws else abs(kept[i - 1] - p * draws) / se)
    counts = config_counts(m, 2, draws, np.random.default_rng(1))
    z_cfg = []
    for cfg, c in counts.items():
        p = config_inclusion_probability(cfg, m)
        se = math.sqrt(draws * p * (1 - p))
        z_cfg.append(0.0 if se == 0 and c == draws else abs(c - p * draws) / se)
    worst = max(z_ch + z_cfg)
    ok = worst <= 3.0
    report(3, ok, f"m={m}, 1e5 draws: max |z| {max(z_ch):.2f} over channels, {max(z_cfg):.2f} over "
                  f"{len(z_cfg)} configs (<= 3)")
    assert ok


# ---------------------------------------------------------------- 4

def test_c04_uniform_maximality():
    groups = uniform_maximality(3, 4, 1.0)
    with_uniform = [g for g in groups if g.uniform is not None]
    ok = all(g.argmax == [g.uniform] for g in with_uniform) and len(with_uniform) == 4
    report(4, ok, f"L=3, m=4: uniform config is the unique maximiser in {len(with_uniform)}/4 groups")
    assert ok


# ---------------------------------------------------------------- 5

def test_c05_candidate_counts():
    g = 32
    layers = tuple(x for _ in range(10) for x in (LayerSpec("conv", 64, 1), LayerSpec("relu")))
    spec = SupernetSpec(1, (4, 4), layers, stage_bounds=(0, 4, 10, 20), ratios=tuple(np.arange(1, g + 1) / g))
    per, total = count_candidates(spec)
    ok = per == [g ** 2, g ** 3, g ** 5] and math.prod(per) == total == g ** 10 == 1125899906842624
    report(5, ok, f"per-stage {per} multiply to {total} = 32^10")
    assert ok


# ---------------------------------------------------------------- 6

def one_stage_net(depth, g, seed):
    layers = tuple(x for _ in range(depth) for x in (LayerSpec("conv", 8, 3, 1, 1), LayerSpec("relu")))
    layers += (LayerSpec("dense", 3, prunable=False),)
    spec = SupernetSpec(1, (6, 6), layers, stage_bounds=(0, 2 * depth, 2 * depth + 1),
                        ratios=ratio_grid(1 / g, 1.0, g))
    net = Supernet(spec, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((96, 1, 6, 6)).astype(np.float32)
    train_supernet(net, x, rng.integers(0, 3, 96), TrainConfig(epochs=3, batch_size=32, seed=seed))
    return net, net.stage_features(x[:32])


def stage_oracle(net, cache, budget):
    spec = net.spec
    ev = StageEvaluator(net, cache, CostModel(spec))
    doms = [spec.choices(k) for k in spec.stage_slots(0)]
    losses = sorted(ev.loss(0, gene) for gene in itertools.product(*doms) if ev.cost(0, gene) <= budget)
    return losses, math.prod(len(d) for d in doms)


def test_c06_stage_ea_vs_exhaustive():
    t0 = time.time()
    exact = 0
    for seed in range(10):
        net, cache = one_stage_net(2, 4, seed)
        lo, hi = stage_cost_bounds(net.spec, 0)
        budget = lo + 0.5 * (hi - lo)
        losses, n = stage_oracle(net, cache, budget)
        assert n == 16
        res = stage_ea(net, 0, cache, budget, EAConfig(seed=seed))
        exact += res.loss == losses[0] and res.cost <= budget
    top = 0
    for seed in range(10):
        net, cache = one_stage_net(3, 8, seed)
        lo, hi = stage_cost_bounds(net.spec, 0)
        budget = lo + 0.5 * (hi - lo)
        losses, n = stage_oracle(net, cache, budget)
        assert n == 512
        res = stage_ea(net, 0, cache, budget, EAConfig(seed=seed))
        better = sum(v < res.loss for v in losses)
        top += better <= 0.01 * len(losses) and res.cost <= budget
    ok = exact == 10 and top >= 9
    report(6, ok, f"g=4 two-layer stage: exhaustive minimum in {exact}/10 seeds; g=8 three-layer stage: "
                  f"top 1% in {top}/10 seeds, {time.time() - t0:.0f}s")
    assert ok


# ---------------------------------------------------------------- 7

def toy_two_stage(seed, g=4):
    layers = (LayerSpec("conv", 6, 3, 1, 1), LayerSpec("relu"), LayerSpec("conv", 6, 3, 1, 1), LayerSpec("relu"),
              LayerSpec("conv", 6, 2, 2, 0), LayerSpec("relu"), LayerSpec("conv", 6, 3, 1, 1), LayerSpec("relu"),
              LayerSpec("dense", 3, prunable=False))
    spec = SupernetSpec(1, (8, 8), layers, ratios=ratio_grid(1 / g, 1.0, g))
    net = Supernet(spec, seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((96, 1, 8, 8)).astype(np.float32)
    train_supernet(net, x, rng.integers(0, 3, 96), TrainConfig(epochs=3, batch_size=32, seed=seed))
    return net, net.stage_features(x[:32])


def test_c07_dea_feasibility_and_quality():
    t0 = time.time()
    desk = Supernet(desk_spec(ratios=ratio_grid(0.25, 1.0, 4)), seed=0)
    desk_cache = desk.stage_features(np.random.default_rng(0).standard_normal((16, 1, 12, 12)).astype(np.float32))
    spec = desk.spec
    entries = {li: {c: 0.01 * c * (1 + li) for c in range(1, l.channels + 1)}
               for li, l in enumerate(spec.layers) if l.has_weights}
    table = CostTable(entries, overhead=0.5)
    lo_f, hi_f = flops_of_config(spec, spec.tiny_config()), flops_of_config(spec, spec.full_config())
    lo_l, hi_l = latency_of_config(spec, spec.tiny_config(), table), latency_of_config(spec, spec.full_config(), table)
    rng = np.random.default_rng(7)
    runs = feasible = 0
    while runs < 50:
        latency = runs % 2 == 1
        frac = rng.uniform(0.05, 1.0)
        budget_val = (lo_l + frac * (hi_l - lo_l)) if latency else (lo_f + frac * (hi_f - lo_f))
        budget = Budget("latency" if latency else "flops", float(budget_val))
        try:
            res = dea_search(desk, desk_cache, budget, EAConfig(population=8, top_k=4, iterations=3, seed=runs),
                             EAConfig(population=6, top_k=3, iterations=3, seed=runs + 100),
                             table if latency else None)
        except InfeasibleBudgetError:
            continue
        runs += 1
        true_cost = latency_of_config(spec, res.config, table) if latency else flops_of_config(spec, res.config)
        feasible += true_cost <= budget.value and res.cost == true_cost
    top = 0
    for seed in range(10):
        net, cache = toy_two_stage(seed)
        model = CostModel(net.spec)
        ev = StageEvaluator(net, cache, model)
        doms = [[net.spec.choices(k) for k in net.spec.stage_slots(i)] for i in range(2)]
        budget = 0.55 * flops_of_config(net.spec, net.spec.full_config())
        joint = [ev.loss(0, a) + ev.loss(1, b) for a in itertools.product(*doms[0])
                 for b in itertools.product(*doms[1]) if ev.cost(0, a) + ev.cost(1, b) <= budget]
        res = dea_search(net, cache, Budget("flops", budget), EAConfig(seed=seed),
                         EAConfig(seed=seed + 1000))
        better = sum(v < res.total_loss - 1e-12 for v in joint)
        top += better <= 0.01 * len(joint)
    ok = feasible == 50 and top >= 9
    report(7, ok, f"{feasible}/50 runs within budget (flops and latency); toy joint top 1% in {top}/10 seeds, "
                  f"{time.time() - t0:.0f}s")
    assert ok


# ---------------------------------------------------------------- 8

@pytest.fixture(scope="module")
def trained_desk():
    xt, yt, xv, yv = desk_data(0)
    net = Supernet(desk_spec(), seed=0)
    train_supernet(net, xt, yt, desk_train_cfg(0, grad_clip=2.0))
    return net, xt, yt, xv, yv


@pytest.mark.slow
def test_c08_distillation_loss_ordering(trained_desk):
    net, xt, _, xv, _ = trained_desk
    spec = net.spec
    rng = np.random.default_rng(8)
    pool = np.concatenate([xt, xv])
    full, rand, tiny = [], [], []
    for _ in range(60):
        cache = net.stage_features(pool[rng.choice(len(pool), 32, replace=False)])
        full.append(sum(stage_losses(net, cache, spec.full_config())))
        rand.append(sum(stage_losses(net, cache, sample_width_config(spec, "random", rng))))
        tiny.append(sum(stage_losses(net, cache, spec.tiny_config())))
    ok = all(v == 0.0 for v in full) and np.mean(full) <= np.mean(rand) <= np.mean(tiny)
    report(8, ok, f"60 batches: fullnet {max(full)!r} (exact 0), random {np.mean(rand):.4f} <= "
                  f"tiny {np.mean(tiny):.4f}")
    assert ok


# ---------------------------------------------------------------- 9

@pytest.mark.slow
def test_c09_ranking_effectiveness():
    t0 = time.time()
    rhos, base = [], []
    for seed in SEEDS:
        xt, yt, xv, yv = desk_data(seed)
        res = run_ranking_experiment(desk_spec(), xt, yt, xv, yv, 16, desk_train_cfg(seed), desk_train_cfg(seed),
                                     seed=seed)
        rhos.append(res.rho)
        base.append(res.baseline_rho)
    med, med_base = float(np.median(rhos)), float(np.median(base))
    ok = med >= 0.5 and med > med_base
    report(9, ok, f"median spearman {med:.3f} vs single-stage baseline {med_base:.3f} "
                  f"(per seed {np.round(rhos, 3).tolist()} vs {np.round(base, 3).tolist()}), {time.time() - t0:.0f}s")
    assert ok


# ---------------------------------------------------------------- 10

@pytest.mark.slow
def test_c10_unfull_training_trend():
    t0 = time.time()
    curves = []
    for seed in SEEDS:
        xt, yt, xv, yv = desk_data(seed)
        curves.append(accuracy_expectation_vs_grid(desk_spec(), xt, yt, xv, yv, (2, 4, 8, 16),
                                                   desk_train_cfg(seed, grad_clip=2.0), 30, seed=seed))
    med = np.median(np.array(curves), axis=0)
    drops = int(np.sum(np.diff(med) < 0))
    ok = drops >= 2 and med[-1] < med[0]
    report(10, ok, f"median accuracy expectation for g=2,4,8,16: {np.round(med, 3).tolist()}; "
                   f"{drops}/3 consecutive decreases, {time.time() - t0:.0f}s")
    assert ok


# ---------------------------------------------------------------- 11

def test_c11_cli_determinism(tmp_path):
    spec = {"preset": "desk", "n_classes": 4, "ratios": {"start": 0.25, "stop": 1.0, "num": 4}}
    cfg = {"spec": spec, "seed": 5, "output_dir": str(tmp_path / "unused"),
           "dataset": {"kind": "synth", "n": 400, "size": 12, "k": 4, "per_class_val": 20, "noise": 0.4},
           "train": {"epochs": 3, "batch_size": 32}, "retrain": {"epochs": 1},
           "stage_ea": {"population": 12, "top_k": 4, "iterations": 4},
           "manager_ea": {"population": 8, "top_k": 3, "iterations": 3}, "search_batch": 64}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    runs = {}
    for name, threads in (("a", 1), ("b", 1), ("c", 3)):
        out = tmp_path / name
        assert main(["train", "--config", str(path), "--out", str(out), "--threads", str(threads)]) == 0
        assert main(["search", "--config", str(path), "--out", str(out), "--threads", str(threads),
                     "--checkpoint", str(out / "supernet.json"), "--budget-macs", "120000"]) == 0
        runs[name] = [(out / f).read_bytes() for f in ("supernet.bin", "supernet.json", "search_report.json",
                                                       "search_curve.csv", "width_config.csv")]
    ok = runs["a"] == runs["b"] == runs["c"]
    report(11, ok, "train and search reruns bitwise identical (serial twice, 3 threads once)")
    assert ok


# ---------------------------------------------------------------- 12

def test_c12_cost_model():
    spec = desk_spec()
    net = Supernet(spec, seed=0, dtype=np.float64)
    weights = {i: (net.params[f"layer{i}.weight"].data, net.params[f"layer{i}.bias"].data)
               for i, l in enumerate(spec.layers) if l.has_weights}
    rng = np.random.default_rng(12)
    x = rng.standard_normal((1, 12, 12))
    mac_ok = sum(counting_forward(spec, weights, c, x)[1] == flops_of_config(spec, c)
                 for c in [random_config(spec, rng) for _ in range(10)])

    entries, c_prev_max = {}, spec.in_channels
    for li, layer in enumerate(spec.layers):
        if layer.has_weights:
            # random positive steps along both axes keep the table monotone
            grid = np.cumsum(np.cumsum(rng.uniform(0.01, 0.1, (c_prev_max, layer.channels)), 0), 1)
            entries[li] = {(a, b): float(grid[a - 1, b - 1])
                           for a in range(1, c_prev_max + 1) for b in range(1, layer.channels + 1)}
            c_prev_max = layer.channels
    table = CostTable(entries, overhead=0.3)
    lat_ok = 0
    for _ in range(50):
        cfg = random_config(spec, rng)
        widths = dict(zip(spec.prunable_layers, cfg))
        total, c_prev = 0.0, spec.in_channels
        for li, layer in enumerate(spec.layers):
            if layer.has_weights:
                co = widths.get(li, layer.channels)
                total += entries[li][(c_prev, co)]
                c_prev = co
        lat_ok += latency_of_config(spec, cfg, table) == total + 0.3

    mono_table = CostTable({li: {c: 0.02 * c + 0.01 * li for c in range(1, l.channels + 1)}
                            for li, l in enumerate(spec.layers) if l.has_weights}, overhead=0.1)
    models = (CostModel(spec), CostModel(spec, "latency", mono_table))
    increments = violations = 0
    while increments < 1000:
        cfg = list(random_config(spec, rng))
        k = int(rng.integers(spec.depth))
        higher = [c for c in spec.choices(k) if c > cfg[k]]
        if not higher:
            continue
        before = [m.total(cfg) for m in models]
        cfg[k] = int(rng.choice(higher))
        violations += sum(m.total(cfg) < b for m, b in zip(models, before))
        increments += 1
    ok = mac_ok == 10 and lat_ok == 50 and violations == 0
    report(12, ok, f"instrumented MACs match {mac_ok}/10; dense-table latency exact {lat_ok}/50; "
                   f"{violations} monotonicity violations in {increments} increments")
    assert ok
