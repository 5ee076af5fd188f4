"""MAC counting and table-driven latency estimates for width configurations.

Costs are in multiply-accumulates (MACs). Two attributions are provided:

* assembled: a layer's input width is whatever the previous layer of the
  config produces (:func:`flops_of_config`, :func:`stage_costs`). The
  per-stage terms sum to the total exactly.
* stage-local: a stage is costed with its input at full width, which is how
  stages are trained and searched (:func:`stage_cost`). Because MACs are
  monotone in every width, the stage-local sum bounds the assembled cost
  from above, so budgets met stage by stage are met by the assembled net.

Adapters are never costed.
"""
from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from typing import Sequence

from .slimnet import SupernetSpec


def layer_macs(spec: SupernetSpec, idx: int, c_in: int, c_out: int) -> int:
    layer = spec.layers[idx]
    _, h, w = spec.input_shape(idx)
    if layer.kind == "conv":
        kh, kw = layer.kernel
        _, ho, wo = spec.output_shape(idx)
        return c_in * c_out * kh * kw * ho * wo
    if layer.kind == "dense":
        return c_in * h * w * c_out
    return 0


def _walk(spec: SupernetSpec, widths: dict[int, int], layer_ids, c_in: int):
    """Yield ``(layer index, c_in, c_out)`` for weight layers in ``layer_ids``."""
    for idx in layer_ids:
        layer = spec.layers[idx]
        if not layer.has_weights:
            continue
        c_out = widths.get(idx, layer.channels)
        yield idx, c_in, c_out
        c_in = c_out


def flops_of_config(spec: SupernetSpec, config: Sequence[int]) -> int:
    config = spec.validate_config(config)
    widths = dict(zip(spec.prunable_layers, config))
    return sum(layer_macs(spec, i, ci, co) for i, ci, co in _walk(spec, widths, range(len(spec.layers)),
                                                                    spec.in_channels))


def stage_costs(spec: SupernetSpec, config: Sequence[int]) -> list[int]:
    """Assembled MACs attributed to each stage; sums to :func:`flops_of_config`."""
    config = spec.validate_config(config)
    widths = dict(zip(spec.prunable_layers, config))
    per_stage = [0] * spec.n_stages
    stage_of = {li: s for s in range(spec.n_stages) for li in spec.stage_range(s)}
    for i, ci, co in _walk(spec, widths, range(len(spec.layers)), spec.in_channels):
        per_stage[stage_of[i]] += layer_macs(spec, i, ci, co)
    return per_stage


def _stage_widths(spec: SupernetSpec, i: int, gene: Sequence[int]) -> dict[int, int]:
    slots = spec.stage_slots(i)
    if len(gene) != len(slots):
        raise ValueError(f"stage {i} gene needs {len(slots)} entries, got {len(gene)}")
    return {spec.prunable_layers[k]: int(c) for k, c in zip(slots, gene)}


def stage_flops(spec: SupernetSpec, i: int, gene: Sequence[int]) -> int:
    """Stage-local MACs of stage ``i`` with full-width stage input."""
    c_in = spec.input_shape(spec.stage_bounds[i])[0]
    return sum(layer_macs(spec, li, ci, co)
               for li, ci, co in _walk(spec, _stage_widths(spec, i, gene), spec.stage_range(i), c_in))


# ------------------------------------------------------------------ latency

@dataclass
class CostTable:
    """Measured per-layer latencies in milliseconds.

    ``entries[layer_index]`` maps either an output channel count or a
    ``(c_in, c_out)`` pair to a latency. Lookups between listed counts are
    linearly (bilinearly for pairs) interpolated; outside the listed range
    they raise.
    """

    entries: dict[int, dict] = field(default_factory=dict)
    overhead: float = 0.0

    def __post_init__(self):
        if self.overhead < 0:
            raise ValueError("overhead must be non-negative")
        for li, table in self.entries.items():
            if not table:
                raise ValueError(f"layer {li}: empty latency table")
            if any(v <= 0 for v in table.values()):
                raise ValueError(f"layer {li}: latencies must be positive")
            keys = list(table)
            if isinstance(keys[0], tuple):
                cins = sorted({k[0] for k in keys})
                couts = sorted({k[1] for k in keys})
                for a in cins:
                    row = [table[(a, b)] for b in couts if (a, b) in table]
                    if any(x > y for x, y in zip(row, row[1:])):
                        raise ValueError(f"layer {li}: latency decreases in c_out")
                for b in couts:
                    col = [table[(a, b)] for a in cins if (a, b) in table]
                    if any(x > y for x, y in zip(col, col[1:])):
                        raise ValueError(f"layer {li}: latency decreases in c_in")
            else:
                vals = [table[k] for k in sorted(table)]
                if any(x > y for x, y in zip(vals, vals[1:])):
                    raise ValueError(f"layer {li}: latency decreases with channel count")

    def covers(self, layer_index: int) -> bool:
        return layer_index in self.entries

    def lookup(self, layer_index: int, c_in: int, c_out: int) -> float:
        table = self.entries.get(layer_index)
        if table is None:
            raise KeyError(f"no latency entries for layer {layer_index}")
        if isinstance(next(iter(table)), tuple):
            return _bilinear(table, c_in, c_out, layer_index)
        return _interp(sorted(table.items()), c_out, layer_index)

    @classmethod
    def from_csv(cls, path) -> "CostTable":
        entries: dict[int, dict] = {}
        overhead = 0.0
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["layer_index"].strip() == "overhead":
                    overhead = float(row["latency_ms"])
                    continue
                li = int(row["layer_index"])
                if row.get("c_in"):
                    key = (int(row["c_in"]), int(row["c_out"]))
                else:
                    key = int(row["channels"])
                entries.setdefault(li, {})[key] = float(row["latency_ms"])
        return cls(entries, overhead)

    def to_csv(self, path) -> None:
        pair = any(isinstance(next(iter(t)), tuple) for t in self.entries.values())
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            if pair:
                wr.writerow(["layer_index", "c_in", "c_out", "latency_ms"])
                for li in sorted(self.entries):
                    for (ci, co), v in sorted(self.entries[li].items()):
                        wr.writerow([li, ci, co, repr(v)])
                wr.writerow(["overhead", "", "", repr(self.overhead)])
            else:
                wr.writerow(["layer_index", "channels", "latency_ms"])
                for li in sorted(self.entries):
                    for c, v in sorted(self.entries[li].items()):
                        wr.writerow([li, c, repr(v)])
                wr.writerow(["overhead", "", repr(self.overhead)])


def _interp(items: list[tuple[int, float]], c: int, li: int) -> float:
    keys = [k for k, _ in items]
    pos = bisect.bisect_left(keys, c)
    if pos < len(keys) and keys[pos] == c:
        return items[pos][1]
    if pos == 0 or pos == len(keys):
        raise ValueError(f"layer {li}: channel count {c} outside table range [{keys[0]}, {keys[-1]}]")
    (k0, v0), (k1, v1) = items[pos - 1], items[pos]
    return v0 + (v1 - v0) * (c - k0) / (k1 - k0)


def _bracket(keys: list[int], c: int, what: str, li: int) -> tuple[int, int]:
    pos = bisect.bisect_left(keys, c)
    if pos < len(keys) and keys[pos] == c:
        return c, c
    if pos == 0 or pos == len(keys):
        raise ValueError(f"layer {li}: {what} {c} outside table range [{keys[0]}, {keys[-1]}]")
    return keys[pos - 1], keys[pos]


def _bilinear(table: dict, c_in: int, c_out: int, li: int) -> float:
    if (c_in, c_out) in table:
        return table[(c_in, c_out)]
    a0, a1 = _bracket(sorted({k[0] for k in table}), c_in, "c_in", li)
    b0, b1 = _bracket(sorted({k[1] for k in table}), c_out, "c_out", li)
    try:
        q = {(a, b): table[(a, b)] for a in (a0, a1) for b in (b0, b1)}
    except KeyError:
        raise ValueError(f"layer {li}: table has no grid cell around ({c_in}, {c_out})") from None
    ta = 0.0 if a1 == a0 else (c_in - a0) / (a1 - a0)
    tb = 0.0 if b1 == b0 else (c_out - b0) / (b1 - b0)
    lo = q[(a0, b0)] + (q[(a0, b1)] - q[(a0, b0)]) * tb
    hi = q[(a1, b0)] + (q[(a1, b1)] - q[(a1, b0)]) * tb
    return lo + (hi - lo) * ta


def _layer_latency(spec, table: CostTable, li: int, ci: int, co: int) -> float:
    if table.covers(li):
        return table.lookup(li, ci, co)
    if spec.layers[li].is_prunable:
        raise ValueError(f"latency table has no entries for prunable layer {li}")
    return 0.0


def latency_of_config(spec: SupernetSpec, config: Sequence[int], table: CostTable) -> float:
    """Sum of per-layer table lookups plus the table's fixed overhead."""
    config = spec.validate_config(config)
    widths = dict(zip(spec.prunable_layers, config))
    total = sum(_layer_latency(spec, table, li, ci, co)
                for li, ci, co in _walk(spec, widths, range(len(spec.layers)), spec.in_channels))
    return total + table.overhead


def stage_latency(spec: SupernetSpec, i: int, gene: Sequence[int], table: CostTable) -> float:
    """Stage-local latency of stage ``i`` (overhead excluded)."""
    c_in = spec.input_shape(spec.stage_bounds[i])[0]
    return sum(_layer_latency(spec, table, li, ci, co)
               for li, ci, co in _walk(spec, _stage_widths(spec, i, gene), spec.stage_range(i), c_in))


# ------------------------------------------------------------------ budgets

@dataclass(frozen=True)
class Budget:
    kind: str  # "flops" (MACs) or "latency" (ms)
    value: float

    def __post_init__(self):
        if self.kind not in ("flops", "latency"):
            raise ValueError(f"unknown budget kind {self.kind!r}")
        if self.value < 0:
            raise ValueError("budget must be non-negative")


class CostModel:
    """Bundles a spec with a cost kind so search code can stay kind-agnostic."""

    def __init__(self, spec: SupernetSpec, kind: str = "flops", table: CostTable | None = None):
        if kind == "latency" and table is None:
            raise ValueError("latency costs need a CostTable")
        if kind not in ("flops", "latency"):
            raise ValueError(f"unknown cost kind {kind!r}")
        self.spec, self.kind, self.table = spec, kind, table

    @property
    def integral(self) -> bool:
        return self.kind == "flops"

    @property
    def fixed(self) -> float:
        """Cost outside every stage (latency overhead)."""
        return self.table.overhead if self.kind == "latency" else 0

    def total(self, config: Sequence[int]):
        if self.kind == "flops":
            return flops_of_config(self.spec, config)
        return latency_of_config(self.spec, config, self.table)

    def stage(self, i: int, gene: Sequence[int]):
        if self.kind == "flops":
            return stage_flops(self.spec, i, gene)
        return stage_latency(self.spec, i, gene, self.table)

    def bounds(self, i: int) -> tuple:
        return stage_cost_bounds(self.spec, i, self.kind, self.table)


def stage_cost(spec: SupernetSpec, i: int, gene: Sequence[int], kind: str = "flops",
               table: CostTable | None = None):
    return CostModel(spec, kind, table).stage(i, gene)


def stage_cost_bounds(spec: SupernetSpec, i: int, kind: str = "flops", table: CostTable | None = None):
    """Stage-local cost at all-min and all-max widths of stage ``i``."""
    slots = spec.stage_slots(i)
    lo = tuple(spec.choices(k)[0] for k in slots)
    hi = tuple(spec.choices(k)[-1] for k in slots)
    if kind == "flops":
        return stage_flops(spec, i, lo), stage_flops(spec, i, hi)
    if table is None:
        raise ValueError("latency bounds need a CostTable")
    return stage_latency(spec, i, lo, table), stage_latency(spec, i, hi, table)
