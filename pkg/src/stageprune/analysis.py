"""Diagnostics for weight-sharing supernets.

* sampling expectations of channels and width configurations under uniform
  width sampling, and the arithmetic/geometric-mean bound showing that
  uniform configurations collect the most training;
* the accuracy expectation of randomly sampled subnets;
* ranking effectiveness: rank correlation between a supernet's proxy score
  and the accuracy of the same candidates trained from scratch.
"""
from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from .cost import flops_of_config
from .slimnet import Supernet, SupernetSpec, quantize, ratio_grid
from .training import TrainConfig, accuracy, retrain_subnet, sample_width_config, stage_losses, train_supernet


# ------------------------------------------------------------ expectations

def expected_channel_samples(i: int, m: int, n: float) -> float:
    """Expected number of the ``n`` steps that include channel ``i`` (1-based)."""
    if not (isinstance(i, (int, np.integer)) and 1 <= i <= m):
        raise ValueError(f"channel index {i} outside [1, {m}]")
    if n < 0:
        raise ValueError("n must be non-negative")
    return (1 - (i - 1) / m) * n


def expected_config_samples(config: Sequence[int], m: int, n: float) -> float:
    """Product of per-layer expectations for the channel counts in ``config``."""
    if not config:
        raise ValueError("empty config")
    out = 1.0
    for c in config:
        out *= expected_channel_samples(c, m, n)
    return out


def config_inclusion_probability(config: Sequence[int], m: int) -> float:
    """Chance that one uniform width draw per layer covers every count in ``config``."""
    return expected_config_samples(config, m, 1.0)


def amgm_bound(config: Sequence[int], m: int, n: float) -> float:
    """``(mean_l E(c_l)) ** L``, the upper bound on :func:`expected_config_samples`."""
    vals = [expected_channel_samples(c, m, n) for c in config]
    return (sum(vals) / len(vals)) ** len(vals)


def inclusion_counts(m: int, draws: int, rng: np.random.Generator) -> np.ndarray:
    """Monte Carlo: how often each channel 1..m is kept by uniform widths in {1..m}."""
    widths = rng.integers(1, m + 1, size=draws)
    kept = np.bincount(widths, minlength=m + 1)[1:]
    return kept[::-1].cumsum()[::-1]


def config_counts(m: int, layers: int, draws: int, rng: np.random.Generator) -> dict[tuple, int]:
    """Monte Carlo: for every config in {1..m}^layers, how many draws cover it."""
    widths = rng.integers(1, m + 1, size=(draws, layers))
    hist = np.zeros((m,) * layers, dtype=np.int64)
    np.add.at(hist, tuple(widths.T - 1), 1)
    # covered(c) = #draws with w >= c elementwise: suffix sums along every axis
    cov = hist
    for ax in range(layers):
        cov = np.flip(np.flip(cov, ax).cumsum(axis=ax), ax)
    return {tuple(int(v) + 1 for v in idx): int(cov[idx]) for idx in np.ndindex(*cov.shape)}


@dataclass
class MaximalityGroup:
    total: float                    # shared sum of per-layer expectations
    best: float
    argmax: list[tuple]
    uniform: tuple | None


def uniform_maximality(layers: int, m: int, n: float) -> list[MaximalityGroup]:
    """Enumerate {1..m}^layers grouped by equal expectation sum.

    Within each group the product of expectations is maximised; when the
    group contains a uniform config it should be the unique maximiser.
    """
    groups: dict[int, list[tuple]] = {}
    for cfg in itertools.product(range(1, m + 1), repeat=layers):
        groups.setdefault(sum(cfg), []).append(cfg)
    out = []
    for s in sorted(groups):
        members = groups[s]
        prods = [expected_config_samples(c, m, n) for c in members]
        best = max(prods)
        argmax = [c for c, p in zip(members, prods) if p == best]
        uniform = next((c for c in members if len(set(c)) == 1), None)
        total = sum(expected_channel_samples(c, m, n) for c in members[0])
        out.append(MaximalityGroup(total, best, argmax, uniform))
    return out


# ------------------------------------------------------------ supernet accuracy

def supernet_accuracy_expectation(net: Supernet, x, y, n_samples: int, rng: np.random.Generator,
                                  configs: Sequence[Sequence[int]] | None = None, adapted: bool = True) -> float:
    """Mean validation accuracy of ``n_samples`` random subnets with inherited weights.

    By default each subnet runs stage by stage through its adapters, the
    form in which stage-wise training supervised it; ``adapted=False``
    evaluates the bare sliced network instead.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if len(y) == 0:
        raise ValueError("empty validation set")
    if configs is None:
        configs = [sample_width_config(net.spec, "random", rng) for _ in range(n_samples)]
    return float(np.mean([accuracy(net, x, y, c, adapted) for c in configs[:n_samples]]))


# ------------------------------------------------------------ ranking

@dataclass
class RankingRecord:
    candidate: int
    config: tuple
    macs: int
    proxy: float
    actual: float
    baseline_proxy: float | None = None

    def __post_init__(self):
        if not math.isfinite(self.proxy):
            raise ValueError("proxy must be finite")
        if not 0.0 <= self.actual <= 1.0:
            raise ValueError("actual accuracy must lie in [0, 1]")


def ranking_correlation(proxy, actual: Sequence[float] | None = None) -> tuple[float, float]:
    """Spearman rho and Kendall tau-b between ``-proxy`` and ``actual``.

    Accepts either a list of :class:`RankingRecord` or two score lists.
    Lower proxy (loss) is better, so positive values mean agreement. Ties get
    average ranks. Raises when fewer than 3 records or either list is
    constant, where the coefficients are undefined.
    """
    if actual is None:
        proxy, actual = [r.proxy for r in proxy], [r.actual for r in proxy]
    proxy = np.asarray(proxy, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if len(proxy) != len(actual):
        raise ValueError("proxy and actual differ in length")
    if len(proxy) < 3:
        raise ValueError("need at least 3 records")
    if np.ptp(proxy) == 0 or np.ptp(actual) == 0:
        raise ValueError("correlation undefined: scores have no spread")
    rho = stats.spearmanr(-proxy, actual).statistic
    tau = stats.kendalltau(-proxy, actual).statistic
    return float(rho), float(tau)


def stratified_candidates(spec: SupernetSpec, n: int, rng: np.random.Generator, bins: int = 4,
                          max_tries: int = 2000) -> list[tuple]:
    """``n`` distinct configs spread evenly over ``bins`` equal-width MAC bins.

    Configs are drawn around a random base ratio with per-layer jitter and
    kept when their MACs fall in the bin being filled.
    """
    lo = flops_of_config(spec, spec.tiny_config())
    hi = flops_of_config(spec, spec.full_config())
    edges = np.linspace(lo, hi, bins + 1)
    per_bin = [n // bins + (1 if b < n % bins else 0) for b in range(bins)]
    g = spec.g
    seen: set[tuple] = set()
    out: list[tuple] = []
    for b, want in enumerate(per_bin):
        got = 0
        for _ in range(max_tries):
            if got == want:
                break
            base = rng.uniform(b / bins, (b + 1) / bins) ** 0.5 * (g - 1)
            idx = np.clip(np.rint(base + rng.normal(0, g / 6, spec.depth)), 0, g - 1).astype(int)
            cfg = tuple(quantize(spec.ratios[j], m) for j, m in zip(idx, spec.max_widths))
            cost = flops_of_config(spec, cfg)
            inside = edges[b] <= cost < edges[b + 1] or (b == bins - 1 and cost == hi)
            if inside and cfg not in seen:
                seen.add(cfg)
                out.append(cfg)
                got += 1
        if got < want:
            raise RuntimeError(f"could not fill MAC bin {b} with {want} distinct candidates")
    return out


def proxy_scores(net: Supernet, x_eval, configs: Sequence[Sequence[int]]) -> list[float]:
    """Total stage distillation loss of each config on one held-out batch."""
    cache = net.stage_features(x_eval)
    return [float(sum(stage_losses(net, cache, c))) for c in configs]


@dataclass
class RankingResult:
    records: list[RankingRecord]
    rho: float
    tau: float
    baseline_rho: float | None = None
    baseline_tau: float | None = None
    logs: dict = field(default_factory=dict, repr=False)


def run_ranking_experiment(spec: SupernetSpec, x_train, y_train, x_val, y_val, n_candidates: int,
                           train_cfg: TrainConfig, retrain_cfg: TrainConfig, seed: int = 0,
                           baseline: bool = True, eval_size: int = 256, n_jobs: int = 1) -> RankingResult:
    """Train a stage-wise supernet (and optionally a single-stage baseline),
    score stratified candidates by proxy, retrain each from scratch, correlate."""
    if n_candidates < 8:
        raise ValueError("ranking experiment needs at least 8 candidates")
    rng = np.random.default_rng(seed)
    configs = stratified_candidates(spec, n_candidates, rng)
    x_eval = np.asarray(x_val[:eval_size])

    net = Supernet(spec, seed=seed)
    logs = {"stagewise": train_supernet(net, x_train, y_train, train_cfg, n_jobs=n_jobs)}
    proxies = proxy_scores(net, x_eval, configs)

    base_proxies = None
    if baseline:
        base = Supernet(spec.single_stage(), seed=seed)
        logs["baseline"] = train_supernet(base, x_train, y_train, train_cfg, n_jobs=n_jobs)
        base_proxies = proxy_scores(base, x_eval, configs)

    retrain = lambda cfg: retrain_subnet(spec, cfg, x_train, y_train, x_val, y_val, retrain_cfg)  # noqa: E731
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            accs = list(ex.map(retrain, configs))
    else:
        accs = [retrain(c) for c in configs]
    records = []
    for k, (cfg, acc) in enumerate(zip(configs, accs)):
        records.append(RankingRecord(k, cfg, flops_of_config(spec, cfg), proxies[k], acc,
                                     None if base_proxies is None else base_proxies[k]))
    rho, tau = ranking_correlation(records)
    brho = btau = None
    if base_proxies is not None:
        brho, btau = ranking_correlation(base_proxies, [r.actual for r in records])
    return RankingResult(records, rho, tau, brho, btau, logs)


def write_records_csv(records: Sequence[RankingRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["candidate_id", "config", "macs", "proxy_loss", "actual_accuracy", "baseline_proxy_loss"])
        for r in records:
            wr.writerow([r.candidate, "-".join(map(str, r.config)), r.macs, repr(float(r.proxy)), repr(float(r.actual)),
                         "" if r.baseline_proxy is None else repr(float(r.baseline_proxy))])


def read_records_csv(path) -> list[RankingRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            bp = row.get("baseline_proxy_loss") or None
            out.append(RankingRecord(int(row["candidate_id"]), tuple(int(c) for c in row["config"].split("-")),
                                     int(row["macs"]), float(row["proxy_loss"]), float(row["actual_accuracy"]),
                                     None if bp is None else float(bp)))
    return out


# ------------------------------------------------------------ candidate growth

def accuracy_expectation_vs_grid(spec: SupernetSpec, x_train, y_train, x_val, y_val,
                                 grid_sizes: Sequence[int], train_cfg: TrainConfig, n_samples: int,
                                 seed: int = 0, start: float = 0.1, shared: bool = True) -> list[float]:
    """Supernet accuracy expectation after fixed training, per ratio-grid size.

    With ``shared`` every grid is scored on the same random configs, drawn
    from the ratios all grids contain (the endpoints of ``linspace``), so
    only the training differs between grids. Otherwise each grid draws its
    own configs, which also changes how narrow the evaluated subnets are.
    """
    grids = {g: ratio_grid(start, 1.0, g) for g in grid_sizes}
    common = sorted(set.intersection(*(set(r) for r in grids.values())))
    pick = np.random.default_rng([seed, 0xACC])
    configs = [tuple(quantize(common[j], m) for j, m in zip(pick.integers(0, len(common), spec.depth),
                                                            spec.max_widths))
               for _ in range(n_samples)]
    out = []
    for g in grid_sizes:
        net = Supernet(spec.with_ratios(grids[g]), seed=seed)
        train_supernet(net, x_train, y_train, train_cfg)
        rng = np.random.default_rng([seed, g])
        out.append(supernet_accuracy_expectation(net, x_val, y_val, n_samples, rng,
                                                 configs if shared else None))
    return out
