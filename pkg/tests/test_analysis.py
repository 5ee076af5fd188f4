import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stageprune.analysis import (RankingRecord, amgm_bound, config_counts, config_inclusion_probability,
                                 expected_channel_samples, expected_config_samples, inclusion_counts,
                                 ranking_correlation, read_records_csv, run_ranking_experiment,
                                 stratified_candidates, supernet_accuracy_expectation, uniform_maximality,
                                 write_records_csv)
from stageprune.cost import flops_of_config
from stageprune.slimnet import Supernet, desk_spec, ratio_grid
from stageprune.training import TrainConfig


# ---------------------------------------------------------------- oracles

def avg_ranks(v):
    v = list(v)
    order = sorted(range(len(v)), key=lambda k: v[k])
    ranks = [0.0] * len(v)
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def spearman_oracle(a, b):
    ra, rb = avg_ranks(a), avg_ranks(b)
    ma, mb = sum(ra) / len(ra), sum(rb) / len(rb)
    num = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    den = math.sqrt(sum((x - ma) ** 2 for x in ra) * sum((y - mb) ** 2 for y in rb))
    return num / den


def kendall_b_oracle(a, b):
    conc = disc = ta = tb = 0
    for i, j in itertools.combinations(range(len(a)), 2):
        da, db = a[i] - a[j], b[i] - b[j]
        if da == 0 and db == 0:
            continue
        if da == 0:
            ta += 1
        elif db == 0:
            tb += 1
        elif da * db > 0:
            conc += 1
        else:
            disc += 1
    return (conc - disc) / math.sqrt((conc + disc + ta) * (conc + disc + tb))


# ---------------------------------------------------------------- expectations

def test_channel_expectation_spot_values():
    assert expected_channel_samples(17, 32, 1000) == 500.0
    assert expected_channel_samples(1, 32, 1000) == 1000.0
    assert expected_channel_samples(32, 32, 32) == 1.0


def test_config_expectation_small_grid():
    # m = 3, n = 3: E(1)=3, E(2)=2, E(3)=1
    assert expected_config_samples([2, 2], 3, 3) == 4.0
    assert expected_config_samples([1, 3], 3, 3) == 3.0
    assert expected_config_samples([2, 2], 3, 3) > expected_config_samples([1, 3], 3, 3)


def test_config_expectation_m4():
    # m = 4, n = 8: E = 8, 6, 4, 2
    assert expected_config_samples([2, 2], 4, 8) == 36.0
    assert expected_config_samples([1, 3], 4, 8) == 32.0


def test_expectation_validation():
    for bad in (0, 33):
        with pytest.raises(ValueError):
            expected_channel_samples(bad, 32, 10)
    with pytest.raises(ValueError):
        expected_channel_samples(1, 4, -1)
    with pytest.raises(ValueError):
        expected_config_samples([], 4, 1)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 12).flatmap(lambda m: st.tuples(st.just(m), st.lists(st.integers(1, m), min_size=1,
                                                                             max_size=5))),
       st.floats(0, 1e4))
def test_amgm_bounds_product(mc, n):
    m, cfg = mc
    assert expected_config_samples(cfg, m, n) <= amgm_bound(cfg, m, n) * (1 + 1e-12)


def test_uniform_maximality_exhaustive_against_brute_force():
    L, m, n = 3, 4, 10.0
    for grp in uniform_maximality(L, m, n):
        if grp.uniform is None:
            continue
        assert grp.argmax == [grp.uniform]
    # independent brute force over every config for one group
    members = [c for c in itertools.product(range(1, 5), repeat=3) if sum(c) == 6]
    prods = {c: math.prod((1 - (x - 1) / m) * n for x in c) for c in members}
    assert max(prods, key=prods.get) == (2, 2, 2)


def test_inclusion_counts_within_three_se():
    m, draws = 8, 100_000
    counts = inclusion_counts(m, draws, np.random.default_rng(0))
    for i in range(1, m + 1):
        p = expected_channel_samples(i, m, 1.0)
        se = math.sqrt(draws * p * (1 - p)) if p < 1 else 0.0
        assert abs(counts[i - 1] - p * draws) <= 3 * se + 1e-9


def test_config_counts_within_three_se():
    m, L, draws = 4, 2, 100_000
    counts = config_counts(m, L, draws, np.random.default_rng(1))
    for cfg, c in counts.items():
        p = config_inclusion_probability(cfg, m)
        se = math.sqrt(draws * p * (1 - p))
        assert abs(c - p * draws) <= 3 * se + 1e-9


def test_config_counts_brute_force():
    rng = np.random.default_rng(2)
    counts = config_counts(3, 2, 50, rng)
    draws = np.random.default_rng(2).integers(1, 4, size=(50, 2))
    for cfg, c in counts.items():
        assert c == int(np.sum(np.all(draws >= np.array(cfg), axis=1)))


# ---------------------------------------------------------------- ranking

@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=3, max_size=25))
def test_rank_correlation_matches_brute_force(pairs):
    proxy = [float(p) for p, _ in pairs]
    actual = [a / 6 for _, a in pairs]
    if len(set(proxy)) < 2 or len(set(actual)) < 2:
        with pytest.raises(ValueError):
            ranking_correlation(proxy, actual)
        return
    rho, tau = ranking_correlation(proxy, actual)
    neg = [-p for p in proxy]
    assert rho == pytest.approx(spearman_oracle(neg, actual), abs=1e-12)
    assert tau == pytest.approx(kendall_b_oracle(neg, actual), abs=1e-12)


def test_rank_correlation_extremes():
    acc = [0.1, 0.4, 0.5, 0.9]
    assert ranking_correlation([4.0, 3.0, 2.0, 1.0], acc) == pytest.approx((1.0, 1.0))
    assert ranking_correlation([1.0, 2.0, 3.0, 4.0], acc) == pytest.approx((-1.0, -1.0))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(-500, 500), min_size=4, max_size=15, unique=True))
def test_rank_correlation_monotone_invariance(ints):
    proxy = [i / 100 for i in ints]
    actual = list(np.linspace(0, 1, len(proxy)))
    a = ranking_correlation(proxy, actual)
    b = ranking_correlation([math.exp(p) * 3 + 1 for p in proxy], actual)
    assert a == pytest.approx(b, abs=1e-12)


def test_rank_correlation_errors():
    with pytest.raises(ValueError):
        ranking_correlation([1.0, 2.0], [0.1, 0.2])
    with pytest.raises(ValueError):
        ranking_correlation([1.0, 1.0, 1.0], [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        ranking_correlation([1.0, 2.0, 3.0], [0.5, 0.5, 0.5])
    with pytest.raises(ValueError):
        ranking_correlation([1.0, 2.0, 3.0], [0.1, 0.2])


def test_record_validation():
    with pytest.raises(ValueError):
        RankingRecord(0, (1,), 1, float("nan"), 0.5)
    with pytest.raises(ValueError):
        RankingRecord(0, (1,), 1, 1.0, 1.5)


def test_records_csv_round_trip(tmp_path):
    recs = [RankingRecord(0, (2, 4), 100, 0.1 + 0.2, 0.75, None),
            RankingRecord(1, (8, 8), 400, 1 / 3, 1.0, 2 / 7)]
    write_records_csv(recs, tmp_path / "r.csv")
    assert read_records_csv(tmp_path / "r.csv") == recs


def test_stratified_candidates_fill_bins():
    spec = desk_spec()
    cfgs = stratified_candidates(spec, 12, np.random.default_rng(0))
    assert len(set(cfgs)) == 12
    lo, hi = flops_of_config(spec, spec.tiny_config()), flops_of_config(spec, spec.full_config())
    edges = np.linspace(lo, hi, 5)
    bins = np.clip(np.searchsorted(edges, [flops_of_config(spec, c) for c in cfgs], side="right") - 1, 0, 3)
    assert np.bincount(bins, minlength=4).tolist() == [3, 3, 3, 3]


def test_ranking_needs_eight_candidates():
    with pytest.raises(ValueError):
        run_ranking_experiment(desk_spec(), np.zeros((4, 1, 12, 12)), np.zeros(4, int), np.zeros((4, 1, 12, 12)),
                               np.zeros(4, int), 7, TrainConfig(epochs=0), TrainConfig(epochs=0))


# ---------------------------------------------------------------- accuracy expectation

def test_untrained_expectation_near_chance():
    k = 4
    spec = desk_spec(n_classes=k)
    net = Supernet(spec, seed=0)
    rng = np.random.default_rng(0)
    x = rng.standard_normal((400, 1, 12, 12)).astype(np.float32)
    y = rng.integers(0, k, 400)
    acc = supernet_accuracy_expectation(net, x, y, 10, np.random.default_rng(1))
    assert abs(acc - 1 / k) < 0.15


def test_expectation_with_forced_full_config():
    spec = desk_spec(n_classes=3, ratios=ratio_grid(0.5, 1.0, 2))
    net = Supernet(spec, seed=0)
    rng = np.random.default_rng(3)
    x = rng.standard_normal((30, 1, 12, 12)).astype(np.float32)
    y = net.predict(x)  # labels are the full network's own predictions
    full = [spec.full_config()] * 5
    assert supernet_accuracy_expectation(net, x, y, 5, rng, configs=full) == 1.0
    with pytest.raises(ValueError):
        supernet_accuracy_expectation(net, x, y, 0, rng)
