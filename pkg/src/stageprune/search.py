"""Budget-constrained evolutionary search over stage-wise subnets.

Two nested evolutionary loops:

* :func:`stage_ea` searches one stage's per-layer widths, minimising the
  stage distillation loss against cached fullnet features, under a cost
  budget for that stage.
* :func:`dea_search` evolves per-stage budget splits of a global budget. A
  split's fitness is the sum of the best stage losses found by
  :func:`stage_ea` under each part. Stage searches for one split are
  independent and may run in parallel.

Infeasible offspring are rejected and redrawn; after ``max_attempts``
failures the parent is kept, so every evaluated gene satisfies its budget.
"""
from __future__ import annotations

import csv
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .autograd import Tensor, mse_stage_loss
from .cost import Budget, CostModel, CostTable
from .slimnet import Supernet, StageFeatureCache


class InfeasibleBudgetError(ValueError):
    pass


class Interval(NamedTuple):
    """Continuous (or integer, when ``integral``) legal range of a gene element."""
    lo: float
    hi: float
    integral: bool = False


def _draw(domain, rng: np.random.Generator):
    if isinstance(domain, Interval):
        if domain.integral:
            return int(rng.integers(int(domain.lo), int(domain.hi) + 1))
        return float(rng.uniform(domain.lo, domain.hi))
    return domain[int(rng.integers(len(domain)))]


@dataclass
class EAConfig:
    population: int = 128
    top_k: int = 32
    mutation_prob: float = 0.1
    iterations: int = 10
    n_mutation: int | None = None
    n_crossover: int | None = None
    seed: int = 0
    max_attempts: int = 100

    def __post_init__(self):
        if self.n_mutation is None and self.n_crossover is None:
            self.n_mutation = self.population // 2
        if self.n_mutation is None:
            self.n_mutation = self.population - self.n_crossover
        if self.n_crossover is None:
            self.n_crossover = self.population - self.n_mutation
        if self.n_mutation + self.n_crossover != self.population:
            raise ValueError("n_mutation + n_crossover must equal population")
        if not 1 <= self.top_k <= self.population:
            raise ValueError("top_k must lie in [1, population]")
        if not 0 < self.mutation_prob < 1:
            raise ValueError("mutation_prob must lie in (0, 1)")
        if self.iterations < 1 or self.max_attempts < 1:
            raise ValueError("iterations and max_attempts must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EAConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown EA config fields: {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------------ operators

def mutate(gene: Sequence, domains: Sequence, p_m: float, rng: np.random.Generator,
           feasible: Callable[[tuple], bool] | None = None, max_attempts: int = 100) -> tuple:
    """Redraw each element with probability ``p_m``; reject infeasible children."""
    gene = tuple(gene)
    for _ in range(max_attempts):
        mask = rng.random(len(gene)) < p_m
        child = tuple(_draw(d, rng) if hit else v for v, d, hit in zip(gene, domains, mask))
        if feasible is None or feasible(child):
            return child
    return gene


def crossover(a: Sequence, b: Sequence, rng: np.random.Generator,
              feasible: Callable[[tuple], bool] | None = None, max_attempts: int = 100) -> tuple:
    """Take every element from ``a`` or ``b`` with probability 1/2 each."""
    a, b = tuple(a), tuple(b)
    if len(a) != len(b):
        raise ValueError("parents differ in length")
    for _ in range(max_attempts):
        pick = rng.random(len(a)) < 0.5
        child = tuple(x if p else y for x, y, p in zip(a, b, pick))
        if feasible is None or feasible(child):
            return child
    return a


def random_gene(domains: Sequence, rng: np.random.Generator, feasible: Callable[[tuple], bool],
                max_attempts: int = 100) -> tuple:
    """Uniform feasible gene by rejection; falls back to randomised growth from the minimum."""
    for _ in range(max_attempts):
        g = tuple(_draw(d, rng) for d in domains)
        if feasible(g):
            return g
    g = [d[0] for d in domains]
    for k in rng.permutation(len(domains)):
        options = list(domains[k])
        for v in rng.permutation(options):
            trial = g.copy()
            trial[k] = int(v)
            if v > g[k] and feasible(tuple(trial)):
                g = trial
                break
    return tuple(g)


def _select(scored: list[tuple[float, tuple]], k: int) -> list[tuple[float, tuple]]:
    """Best ``k`` distinct genes; ties broken by gene order for determinism."""
    seen, out = set(), []
    for loss, gene in sorted(scored, key=lambda s: (s[0], s[1])):
        if gene in seen:
            continue
        seen.add(gene)
        out.append((loss, gene))
        if len(out) == k:
            break
    return out


def _evolve(initial: list[tuple], fitness: Callable[[list[tuple]], list[float]], domains, feasible,
            cfg: EAConfig, rng: np.random.Generator):
    """Shared generational loop. Returns ``(best_loss, best_gene, history, evaluated)``."""
    pop = initial
    history: list[float] = []
    best: tuple[float, tuple] | None = None
    evaluated: list[tuple] = []
    for t in range(cfg.iterations):
        losses = fitness(pop)
        evaluated.extend(pop)
        scored = list(zip(losses, pop))
        elites = _select(scored, cfg.top_k)
        if best is None or (elites[0][0], elites[0][1]) < best:
            best = elites[0]
        history.append(best[0])
        if t == cfg.iterations - 1:
            break
        parents = [g for _, g in elites]
        children = []
        for _ in range(cfg.n_mutation):
            p = parents[int(rng.integers(len(parents)))]
            children.append(mutate(p, domains, cfg.mutation_prob, rng, feasible, cfg.max_attempts))
        for _ in range(cfg.n_crossover):
            i, j = rng.integers(len(parents), size=2)
            children.append(crossover(parents[i], parents[j], rng, feasible, cfg.max_attempts))
        pop = parents + children
    return best[0], best[1], history, evaluated


# ------------------------------------------------------------------ stage EA

@dataclass
class StageResult:
    stage: int
    gene: tuple
    loss: float
    cost: float
    budget: float
    history: list[float] = field(default_factory=list)


class StageEvaluator:
    """Memoised stage fitness for one feature cache.

    ``loss(i, gene)`` is the distillation loss of the gene's adapted stage
    output against the cached fullnet stage output. Values are pure in
    ``(i, gene)`` so they are cached for the evaluator's lifetime.
    """

    def __init__(self, net: Supernet, cache: StageFeatureCache, cost_model: CostModel, reduction: str = "mean"):
        self.net, self.cache, self.cost_model = net, cache, cost_model
        self.reduction = reduction
        self._losses: dict[tuple, float] = {}
        self._costs: dict[tuple, float] = {}
        self._lock = threading.Lock()
        self.evaluations = 0

    def loss(self, i: int, gene: tuple) -> float:
        key = (i, gene)
        hit = self._losses.get(key)
        if hit is not None:
            return hit
        _, adapted = self.net.stage_forward(i, gene, self.cache.inputs[i])
        val = float(mse_stage_loss(adapted, Tensor(self.cache.targets[i]), self.reduction).data)
        with self._lock:
            self._losses[key] = val
            self.evaluations += 1
        return val

    def cost(self, i: int, gene: tuple):
        key = (i, gene)
        if key not in self._costs:
            self._costs[key] = self.cost_model.stage(i, gene)
        return self._costs[key]


def stage_ea(net: Supernet, i: int, cache: StageFeatureCache, budget: float, cfg: EAConfig,
             cost_model: CostModel | None = None, evaluator: StageEvaluator | None = None,
             seed=None) -> StageResult:
    """Lowest-loss gene for stage ``i`` whose stage-local cost is within ``budget``."""
    spec = net.spec
    evaluator = evaluator or StageEvaluator(net, cache, cost_model or CostModel(spec))
    slots = spec.stage_slots(i)
    domains = [spec.choices(k) for k in slots]
    lo = tuple(d[0] for d in domains)
    hi = tuple(d[-1] for d in domains)
    if evaluator.cost(i, lo) > budget:
        raise InfeasibleBudgetError(f"stage {i}: budget {budget} below minimum cost {evaluator.cost(i, lo)}")
    feasible = lambda g: evaluator.cost(i, g) <= budget  # noqa: E731
    rng = np.random.default_rng(cfg.seed if seed is None else seed)

    initial = [hi] if feasible(hi) else []
    initial.append(lo)
    while len(initial) < cfg.population:
        initial.append(random_gene(domains, rng, feasible, cfg.max_attempts))

    fitness = lambda pop: [evaluator.loss(i, g) for g in pop]  # noqa: E731
    loss, gene, history, evaluated = _evolve(initial, fitness, domains, feasible, cfg, rng)
    assert all(feasible(g) for g in evaluated)
    return StageResult(i, gene, loss, evaluator.cost(i, gene), budget, history)


# ------------------------------------------------------------------ manager

def random_budget_gene(bounds: Sequence[tuple], total: float, rng: np.random.Generator,
                       integral: bool = False) -> tuple:
    """Random split of ``total`` into per-stage budgets within ``bounds``.

    The spare budget above the stage minima is split by a flat Dirichlet
    draw; parts exceeding a stage's maximum are redistributed over the
    remaining headroom. The result always sums to at most ``total``.
    """
    mins = np.array([b[0] for b in bounds], dtype=np.float64)
    maxs = np.array([b[1] for b in bounds], dtype=np.float64)
    if total < mins.sum():
        raise InfeasibleBudgetError(f"total budget {total} below sum of stage minima {mins.sum()}")
    slack = min(float(total), float(maxs.sum())) - float(mins.sum())
    caps = maxs - mins
    alloc = rng.dirichlet(np.ones(len(bounds))) * slack
    over = np.clip(alloc - caps, 0, None).sum()
    alloc = np.minimum(alloc, caps)
    room = caps - alloc
    if over > 0 and room.sum() > 0:
        alloc = alloc + room * min(1.0, over / room.sum())
    gene = np.minimum(mins + alloc, maxs)
    if integral:
        return tuple(int(math.floor(v)) for v in gene)
    gene = [float(v) for v in gene]
    # float rounding can push the sum a few ulps over the total
    k = int(np.argmax(np.array(gene) - mins))
    while math.fsum(gene) > total and gene[k] > mins[k]:
        gene[k] = max(float(mins[k]), math.nextafter(gene[k] - (math.fsum(gene) - total), -math.inf))
    return tuple(gene)


@dataclass
class SearchResult:
    config: tuple
    total_loss: float
    cost: float
    budget: Budget
    stage_genes: list[tuple]
    stage_losses: list[float]
    stage_budgets: list[float]
    stage_costs: list[float]
    history: list[float]

    def to_dict(self) -> dict:
        return {
            "config": list(self.config),
            "total_loss": self.total_loss,
            "cost": self.cost,
            "budget": {"kind": self.budget.kind, "value": self.budget.value},
            "stages": [{"gene": list(g), "loss": l, "budget": b, "cost": c}
                       for g, l, b, c in zip(self.stage_genes, self.stage_losses,
                                             self.stage_budgets, self.stage_costs)],
            "history": list(self.history),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def write_curve_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["generation", "best_total_loss"])
            for t, v in enumerate(self.history):
                wr.writerow([t, repr(v)])


def _stage_seed(master: int, stage: int, budget) -> np.random.SeedSequence:
    # child seed keyed by the budget itself so a stage search is a pure
    # function of (stage, budget) and can be memoised and run in any order
    b = int(budget) if float(budget).is_integer() else int.from_bytes(np.float64(budget).tobytes(), "little")
    return np.random.SeedSequence([master, stage, b])


def dea_search(net: Supernet, cache: StageFeatureCache, budget: Budget, stage_cfg: EAConfig,
               manager_cfg: EAConfig, table: CostTable | None = None, n_jobs: int = 1) -> SearchResult:
    """Search per-stage budgets and per-stage widths under a global budget."""
    spec = net.spec
    cm = CostModel(spec, budget.kind, table)
    n = spec.n_stages
    bounds = [cm.bounds(i) for i in range(n)]
    avail = budget.value - cm.fixed
    if avail < sum(b[0] for b in bounds):
        raise InfeasibleBudgetError(
            f"budget {budget.value} below the minimum achievable cost {sum(b[0] for b in bounds) + cm.fixed}")
    domains = [Interval(lo, hi, cm.integral) for lo, hi in bounds]
    feasible = lambda g: math.fsum(g) <= avail and all(lo <= v <= hi for v, (lo, hi) in zip(g, bounds))  # noqa
    evaluator = StageEvaluator(net, cache, cm)
    results: dict[tuple, StageResult] = {}
    executor = ThreadPoolExecutor(n_jobs) if n_jobs > 1 else None

    def solve(key):
        i, b = key
        return stage_ea(net, i, cache, b, stage_cfg, cm, evaluator, seed=_stage_seed(stage_cfg.seed, i, b))

    def fitness(pop: list[tuple]) -> list[float]:
        todo = sorted({(i, g[i]) for g in pop for i in range(n)} - set(results))
        solved = executor.map(solve, todo) if executor is not None else map(solve, todo)
        for key, res in zip(todo, solved):
            results[key] = res
        return [sum(results[(i, g[i])].loss for i in range(n)) for g in pop]

    rng = np.random.default_rng(manager_cfg.seed)
    initial = [random_budget_gene(bounds, avail, rng, cm.integral) for _ in range(manager_cfg.population)]
    top = tuple(hi for _, hi in bounds)
    if math.fsum(top) <= avail:
        initial[0] = top
    try:
        total, best, history, _ = _evolve(initial, fitness, domains, feasible, manager_cfg, rng)
    finally:
        if executor is not None:
            executor.shutdown()

    stage_res = [results[(i, best[i])] for i in range(n)]
    config = spec.join_genes([r.gene for r in stage_res])
    cost = cm.total(config)
    if cost > budget.value:
        raise AssertionError(f"assembled cost {cost} exceeds budget {budget.value}")
    return SearchResult(config, total, cost, budget, [r.gene for r in stage_res], [r.loss for r in stage_res],
                        list(best), [r.cost for r in stage_res], history)
