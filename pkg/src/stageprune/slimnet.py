"""Slimmable supernet with prefix-sliced weight sharing and stage decomposition."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import Tensor, conv2d, relu, avg_pool2d, max_pool2d, narrow, reshape

KINDS = ("conv", "dense", "pool", "relu")
DEFAULT_RATIOS = tuple(float(r) for r in np.round(np.linspace(0.1, 1.0, 31), 6))

WidthConfig = tuple  # per-prunable-layer channel counts


def quantize(ratio: float, m: int) -> int:
    """Channel count for ``ratio`` of ``m`` channels, rounded half-up, never 0."""
    return max(1, int(math.floor(ratio * m + 0.5 + 1e-9)))


def ratio_grid(start: float = 0.1, stop: float = 1.0, num: int = 31) -> tuple[float, ...]:
    return tuple(float(r) for r in np.round(np.linspace(start, stop, num), 9))


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    channels: int | None = None
    kernel: tuple[int, int] | None = None
    stride: int = 1
    pad: int = 0
    pool: str = "avg"
    prunable: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if isinstance(self.kernel, int):
            object.__setattr__(self, "kernel", (self.kernel, self.kernel))
        elif self.kernel is not None:
            object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        has_kernel = self.kind in ("conv", "pool")
        if has_kernel != (self.kernel is not None):
            raise ValueError(f"{self.kind} layer: kernel must be given iff kind is conv or pool")
        if self.kind in ("conv", "dense"):
            if self.channels is None or self.channels < 1:
                raise ValueError(f"{self.kind} layer needs channels >= 1")
        elif self.channels is not None:
            raise ValueError(f"{self.kind} layer takes no channel count")
        if self.stride < 1 or self.pad < 0:
            raise ValueError("stride must be >= 1 and pad >= 0")
        if self.kind == "pool" and self.pool not in ("avg", "max"):
            raise ValueError(f"unknown pooling mode {self.pool!r}")

    @property
    def has_weights(self) -> bool:
        return self.kind in ("conv", "dense")

    @property
    def is_prunable(self) -> bool:
        return self.has_weights and self.prunable

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.channels is not None:
            d["channels"] = self.channels
        if self.kernel is not None:
            d.update(kernel=list(self.kernel), stride=self.stride, pad=self.pad)
        if self.kind == "pool":
            d["pool"] = self.pool
        if self.has_weights and not self.prunable:
            d["prunable"] = False
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        if "kernel" in d and d["kernel"] is not None:
            d["kernel"] = tuple(d["kernel"]) if not isinstance(d["kernel"], int) else d["kernel"]
        return cls(**d)


@dataclass(frozen=True)
class SupernetSpec:
    """Layer list, stage partition and width-ratio grid of a supernet.

    ``stage_bounds`` are indices into ``layers``; stage ``i`` covers
    ``layers[stage_bounds[i]:stage_bounds[i+1]]``. Width configurations are
    tuples with one channel count per prunable layer, in layer order.
    """

    in_channels: int
    input_size: tuple[int, int]
    layers: tuple[LayerSpec, ...]
    stage_bounds: tuple[int, ...] = ()
    ratios: tuple[float, ...] = DEFAULT_RATIOS
    _shapes: tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_size", tuple(self.input_size))
        if not self.stage_bounds:
            object.__setattr__(self, "stage_bounds", downsampling_bounds(self.layers))
        object.__setattr__(self, "stage_bounds", tuple(int(b) for b in self.stage_bounds))
        object.__setattr__(self, "ratios", tuple(sorted(float(r) for r in self.ratios)))
        self._validate()
        object.__setattr__(self, "_shapes", tuple(self._infer_shapes()))

    def _validate(self):
        if not self.layers:
            raise ValueError("supernet needs at least one layer")
        b = self.stage_bounds
        if len(b) < 2 or b[0] != 0 or b[-1] != len(self.layers) or any(x >= y for x, y in zip(b, b[1:])):
            raise ValueError(f"stage bounds {b} must increase strictly from 0 to {len(self.layers)}")
        for i in range(self.n_stages):
            if not any(l.has_weights for l in self.layers[b[i]:b[i + 1]]):
                raise ValueError(f"stage {i} contains no conv/dense layer")
        r = self.ratios
        if not r or len(set(r)) != len(r) or r[0] <= 0 or r[-1] > 1:
            raise ValueError("ratio grid must hold distinct values in (0, 1]")
        if 1.0 not in r:
            raise ValueError("ratio grid must contain 1.0")
        if not self.prunable_layers:
            raise ValueError("supernet has no prunable layer")

    def _infer_shapes(self):
        c, (h, w) = self.in_channels, self.input_size
        shapes = []
        for idx, layer in enumerate(self.layers):
            shapes.append((c, h, w))
            if layer.kind in ("conv", "pool"):
                kh, kw = layer.kernel
                for size, k, name in ((h, kh, "height"), (w, kw, "width")):
                    span = size + 2 * layer.pad - k
                    if span < 0 or span % layer.stride:
                        raise ValueError(f"layer {idx}: {name} {size} incompatible with kernel/stride/pad")
                h = (h + 2 * layer.pad - kh) // layer.stride + 1
                w = (w + 2 * layer.pad - kw) // layer.stride + 1
            if layer.kind == "conv":
                c = layer.channels
            elif layer.kind == "dense":
                c, h, w = layer.channels, 1, 1
        shapes.append((c, h, w))
        return shapes

    # -- derived structure

    @property
    def n_stages(self) -> int:
        return len(self.stage_bounds) - 1

    @property
    def g(self) -> int:
        return len(self.ratios)

    @property
    def prunable_layers(self) -> tuple[int, ...]:
        return tuple(i for i, l in enumerate(self.layers) if l.is_prunable)

    @property
    def depth(self) -> int:
        return len(self.prunable_layers)

    @property
    def max_widths(self) -> tuple[int, ...]:
        return tuple(self.layers[i].channels for i in self.prunable_layers)

    @property
    def n_classes(self) -> int:
        return self._shapes[-1][0]

    def input_shape(self, layer_index: int) -> tuple[int, int, int]:
        """Full-width ``(c, h, w)`` entering ``layers[layer_index]``."""
        return self._shapes[layer_index]

    def output_shape(self, layer_index: int) -> tuple[int, int, int]:
        return self._shapes[layer_index + 1]

    def stage_range(self, i: int) -> range:
        return range(self.stage_bounds[i], self.stage_bounds[i + 1])

    def stage_slots(self, i: int) -> list[int]:
        """Positions in a WidthConfig belonging to stage ``i``."""
        lo, hi = self.stage_bounds[i], self.stage_bounds[i + 1]
        return [k for k, li in enumerate(self.prunable_layers) if lo <= li < hi]

    def stage_depth(self, i: int) -> int:
        return len(self.stage_slots(i))

    def stage_output_channels(self, i: int) -> int:
        return self.output_shape(self.stage_bounds[i + 1] - 1)[0]

    def choices(self, slot: int) -> tuple[int, ...]:
        """Sorted distinct channel counts for the prunable layer at ``slot``."""
        m = self.max_widths[slot]
        return tuple(sorted({quantize(r, m) for r in self.ratios}))

    def all_choices(self) -> list[tuple[int, ...]]:
        return [self.choices(k) for k in range(self.depth)]

    def full_config(self) -> WidthConfig:
        return self.max_widths

    def tiny_config(self) -> WidthConfig:
        return tuple(quantize(self.ratios[0], m) for m in self.max_widths)

    def validate_config(self, config: Sequence[int]) -> WidthConfig:
        config = tuple(int(c) for c in config)
        if len(config) != self.depth:
            raise ValueError(f"width config has {len(config)} entries, expected {self.depth}")
        for k, c in enumerate(config):
            if c not in self.choices(k):
                raise ValueError(f"width {c} not a legal choice for prunable layer {self.prunable_layers[k]}")
        return config

    def split_config(self, config: Sequence[int]) -> list[tuple[int, ...]]:
        return [tuple(config[k] for k in self.stage_slots(i)) for i in range(self.n_stages)]

    def join_genes(self, genes: Sequence[Sequence[int]]) -> WidthConfig:
        out = [0] * self.depth
        for i, gene in enumerate(genes):
            slots = self.stage_slots(i)
            if len(gene) != len(slots):
                raise ValueError(f"stage {i} gene has {len(gene)} entries, expected {len(slots)}")
            for k, c in zip(slots, gene):
                out[k] = int(c)
        return tuple(out)

    # -- variants

    def with_stages(self, bounds: Sequence[int]) -> "SupernetSpec":
        return replace(self, stage_bounds=tuple(bounds))

    def single_stage(self) -> "SupernetSpec":
        """All prunable layers in one stage (net-wise); the head keeps its own stage."""
        head = head_start(self.layers)
        return self.with_stages((0, head, len(self.layers)) if head < len(self.layers) else (0, head))

    def with_ratios(self, ratios: Sequence[float]) -> "SupernetSpec":
        return replace(self, ratios=tuple(ratios))

    def narrow(self, config: Sequence[int]) -> "SupernetSpec":
        """Standalone spec whose maximal widths are ``config``."""
        config = self.validate_config(config)
        it = iter(config)
        layers = tuple(replace(l, channels=next(it)) if l.is_prunable else l for l in self.layers)
        return replace(self, layers=layers, ratios=(1.0,))

    # -- serialization

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "input_size": list(self.input_size),
            "layers": [l.to_dict() for l in self.layers],
            "stage_bounds": list(self.stage_bounds),
            "ratios": list(self.ratios),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SupernetSpec":
        ratios = d.get("ratios", DEFAULT_RATIOS)
        if isinstance(ratios, dict):
            ratios = ratio_grid(ratios.get("start", 0.1), ratios.get("stop", 1.0), ratios.get("num", 31))
        return cls(
            in_channels=int(d["in_channels"]),
            input_size=tuple(d["input_size"]),
            layers=tuple(LayerSpec.from_dict(l) for l in d["layers"]),
            stage_bounds=tuple(d.get("stage_bounds") or ()),
            ratios=tuple(ratios),
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source) -> "SupernetSpec":
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text()
        return cls.from_dict(json.loads(source))


def head_start(layers: Sequence[LayerSpec]) -> int:
    """Index where the non-prunable classifier head begins (``len(layers)`` if none).

    The head is everything after the last prunable layer and its trailing
    activations, provided it holds a weight layer.
    """
    last = max(i for i, l in enumerate(layers) if l.is_prunable)
    start = last + 1
    while start < len(layers) and layers[start].kind == "relu":
        start += 1
    return start if any(l.has_weights for l in layers[start:]) else len(layers)


def downsampling_bounds(layers: Sequence[LayerSpec]) -> tuple[int, ...]:
    """Stage bounds placed before every strided conv or pool layer.

    Stages left without a prunable layer are merged into their predecessor,
    except the classifier head, which always forms its own final stage with
    no searchable widths. Keeping the head out of the prunable stages means
    subnets are distilled on feature maps through their adapter rather than
    on logits through the shared head.
    """
    head = head_start(layers)
    body = layers[:head]
    starts = [0] + [i for i, l in enumerate(body) if i > 0 and l.kind in ("conv", "pool") and l.stride > 1]
    bounds = sorted(set(starts)) + [head]
    merged = [0]
    for lo, hi in zip(bounds, bounds[1:]):
        if lo and any(l.is_prunable for l in body[lo:hi]):
            merged.append(lo)
    merged.append(head)
    # a leading stage with no prunable layer would stay invalid; fold it forward
    while len(merged) > 2 and not any(l.is_prunable for l in body[merged[0]:merged[1]]):
        merged.pop(1)
    if head < len(layers):
        merged.append(len(layers))
    return tuple(merged)


def desk_spec(in_channels: int = 1, size: int = 12, n_classes: int = 4,
              widths: Sequence[int] = (8, 8, 16, 16, 16, 16), ratios=DEFAULT_RATIOS,
              stage_bounds: Sequence[int] = (), global_pool: bool = False) -> SupernetSpec:
    """Six-conv desk-scale supernet: two 3x3 convs per resolution, 2x2/2 downsampling.

    The dense head reads the whole final map; ``global_pool`` averages it
    first, which discards where features sit in the image.
    """
    if size % 4:
        raise ValueError("size must be divisible by 4")
    w = list(widths)
    layers = [
        LayerSpec("conv", w[0], 3, 1, 1), LayerSpec("relu"),
        LayerSpec("conv", w[1], 3, 1, 1), LayerSpec("relu"),
        LayerSpec("conv", w[2], 2, 2, 0), LayerSpec("relu"),
        LayerSpec("conv", w[3], 3, 1, 1), LayerSpec("relu"),
        LayerSpec("conv", w[4], 2, 2, 0), LayerSpec("relu"),
        LayerSpec("conv", w[5], 3, 1, 1), LayerSpec("relu"),
    ]
    if global_pool:
        layers.append(LayerSpec("pool", None, size // 4, size // 4, 0, "avg"))
    layers.append(LayerSpec("dense", n_classes, prunable=False))
    return SupernetSpec(in_channels, (size, size), tuple(layers), tuple(stage_bounds), tuple(ratios))


def count_candidates(spec: SupernetSpec) -> tuple[list[int], int]:
    """Per-stage candidate counts ``g**L_i`` and their product ``g**L``."""
    per_stage = [spec.g ** spec.stage_depth(i) for i in range(spec.n_stages)]
    total = 1
    for c in per_stage:
        total *= c
    return per_stage, total


# --------------------------------------------------------------- parameters

@dataclass
class StageFeatureCache:
    """Fullnet stage inputs and outputs for one batch (plain arrays, no grad)."""

    inputs: list[np.ndarray]
    targets: list[np.ndarray]

    @property
    def n_stages(self) -> int:
        return len(self.targets)


def slice_params(weight: Tensor, bias: Tensor | None, c_in: int, c_out: int):
    """First ``c_out`` filters, each cut to its first ``c_in`` input channels."""
    if c_out > weight.shape[0] or c_in > weight.shape[1] or c_in < 1 or c_out < 1:
        raise ValueError(f"cannot slice {weight.shape} to ({c_out}, {c_in})")
    w = narrow(weight, (c_out, c_in))
    b = narrow(bias, (c_out,)) if bias is not None else None
    return w, b


class Supernet:
    """Parameters of a slimmable supernet plus width-aware forward passes.

    Every layer holds full-width tensors; a subnet uses views onto their
    leading channels. Each stage whose output is prunable owns a 1x1 adapter
    (no normalisation, no nonlinearity) that maps a narrowed stage output
    back to the fullnet channel count. Adapters start as the identity.
    """

    def __init__(self, spec: SupernetSpec, seed: int | None = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.params: dict[str, Tensor] = {}
        for idx, layer in enumerate(spec.layers):
            if not layer.has_weights:
                continue
            c_in, h, w = spec.input_shape(idx)
            kh, kw = layer.kernel if layer.kind == "conv" else (h, w)
            fan_in = c_in * kh * kw
            wt = rng.standard_normal((layer.channels, c_in, kh, kw)) * math.sqrt(2.0 / fan_in)
            self._add(f"layer{idx}.weight", wt)
            self._add(f"layer{idx}.bias", np.zeros(layer.channels))
        for i in range(spec.n_stages):
            if self._stage_out_prunable(i):
                f = spec.stage_output_channels(i)
                self._add(f"adapter{i}.weight", np.eye(f).reshape(f, f, 1, 1))
                self._add(f"adapter{i}.bias", np.zeros(f))

    def _add(self, name, arr):
        self.params[name] = Tensor(np.asarray(arr, dtype=self.dtype), requires_grad=True, name=name)

    def _stage_out_prunable(self, i: int) -> bool:
        last = [li for li in self.spec.stage_range(i) if self.spec.layers[li].has_weights][-1]
        return self.spec.layers[last].is_prunable

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # -- state

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if set(state) != set(self.params):
            missing = set(self.params) ^ set(state)
            raise ValueError(f"state does not match architecture: {sorted(missing)[:4]}")
        for k, p in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data[...] = arr

    def copy(self) -> "Supernet":
        other = Supernet.__new__(Supernet)
        other.spec, other.dtype = self.spec, self.dtype
        other.params = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return other

    def astype(self, dtype) -> "Supernet":
        other = self.copy()
        other.dtype = np.dtype(dtype)
        for p in other.params.values():
            p.data = p.data.astype(dtype)
        return other

    # -- forward passes

    def _layer(self, idx: int, x: Tensor, c_out: int) -> Tensor:
        layer = self.spec.layers[idx]
        if layer.kind == "relu":
            return relu(x)
        if layer.kind == "pool":
            fn = avg_pool2d if layer.pool == "avg" else max_pool2d
            return fn(x, layer.kernel, layer.stride, layer.pad)
        w, b = slice_params(self.params[f"layer{idx}.weight"], self.params[f"layer{idx}.bias"],
                            x.shape[1], c_out)
        if layer.kind == "dense":
            return conv2d(x, w, b)
        return conv2d(x, w, b, layer.stride, layer.pad)

    def _run(self, x: Tensor, layer_ids, widths: dict[int, int]) -> Tensor:
        for idx in layer_ids:
            layer = self.spec.layers[idx]
            c_out = widths.get(idx, layer.channels) if layer.has_weights else None
            x = self._layer(idx, x, c_out)
        return x

    def _widths(self, config) -> dict[int, int]:
        return dict(zip(self.spec.prunable_layers, config))

    def forward(self, x, config: Sequence[int] | None = None) -> Tensor:
        """Logits ``[b, k]`` of the subnet selected by ``config`` (default: fullnet)."""
        x = _input(x, self.dtype)
        widths = self._widths(self.spec.validate_config(config) if config is not None else self.spec.full_config())
        out = self._run(x, range(len(self.spec.layers)), widths)
        return reshape(out, (out.shape[0], -1)) if out.data.ndim == 4 else out

    def adapted_forward(self, x, config: Sequence[int] | None = None) -> Tensor:
        """Logits of ``config`` with every stage fed the previous stage's adapted output.

        This chains the stages exactly as they are trained, each seeing a
        fullnet-width input. At full width it equals :meth:`forward`.
        """
        genes = self.spec.split_config(self.spec.validate_config(config) if config is not None
                                       else self.spec.full_config())
        out = _input(x, self.dtype)
        for i, gene in enumerate(genes):
            _, out = self.stage_forward(i, gene, out)
        return reshape(out, (out.shape[0], -1)) if out.data.ndim == 4 else out

    def stage_forward(self, i: int, gene: Sequence[int], x) -> tuple[Tensor, Tensor]:
        """Run stage ``i`` of the subnet ``gene`` on a fullnet-width input.

        Returns ``(raw, adapted)``. ``adapted`` always has the fullnet's
        channel count; when the gene's output width is already full the
        adapter is skipped and ``adapted is raw``.
        """
        spec = self.spec
        x = _input(x, self.dtype)
        expected = spec.input_shape(spec.stage_bounds[i])[0]
        if x.shape[1] != expected:
            raise ValueError(f"stage {i} expects {expected} input channels, got {x.shape[1]}")
        slots = spec.stage_slots(i)
        if len(gene) != len(slots):
            raise ValueError(f"stage {i} gene needs {len(slots)} entries, got {len(gene)}")
        for k, c in zip(slots, gene):
            if c not in spec.choices(k):
                raise ValueError(f"width {c} not a legal choice for prunable layer {spec.prunable_layers[k]}")
        widths = {spec.prunable_layers[k]: int(c) for k, c in zip(slots, gene)}
        raw = self._run(x, spec.stage_range(i), widths)
        full = spec.stage_output_channels(i)
        if raw.shape[1] == full:
            return raw, raw
        w, b = slice_params(self.params[f"adapter{i}.weight"], self.params[f"adapter{i}.bias"],
                            raw.shape[1], full)
        return raw, conv2d(raw, w, b)

    def stage_features(self, x) -> StageFeatureCache:
        """Fullnet forward recording each stage's input and output."""
        x = _input(x, self.dtype)
        inputs, targets = [], []
        widths = self._widths(self.spec.full_config())
        for i in range(self.spec.n_stages):
            inputs.append(x.data)
            x = self._run(Tensor(x.data), self.spec.stage_range(i), widths)
            targets.append(x.data)
        return StageFeatureCache(inputs, targets)

    def forward_with_features(self, x) -> tuple[Tensor, StageFeatureCache]:
        """Fullnet forward (recorded on the active tape) plus detached stage features."""
        x = _input(x, self.dtype)
        inputs, targets = [], []
        widths = self._widths(self.spec.full_config())
        for i in range(self.spec.n_stages):
            inputs.append(x.data)
            x = self._run(x, self.spec.stage_range(i), widths)
            targets.append(x.data)
        out = reshape(x, (x.shape[0], -1)) if x.data.ndim == 4 else x
        return out, StageFeatureCache(inputs, targets)

    def predict(self, x, config=None, batch_size: int = 512, adapted: bool = False) -> np.ndarray:
        x = np.asarray(x)
        fwd = self.adapted_forward if adapted else self.forward
        out = [fwd(x[s:s + batch_size], config).data.argmax(axis=1)
               for s in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def _input(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.dtype == dtype else Tensor(x.data.astype(dtype))
    return Tensor(np.asarray(x, dtype=dtype))


def extract_subnet(net: Supernet, config: Sequence[int]) -> Supernet:
    """Standalone network holding copies of the weights ``config`` selects."""
    spec = net.spec
    config = spec.validate_config(config)
    narrowed = spec.narrow(config).single_stage()
    sub = Supernet(narrowed, seed=None, dtype=net.dtype)
    widths = dict(zip(spec.prunable_layers, config))
    c_prev = spec.in_channels
    for idx, layer in enumerate(spec.layers):
        if not layer.has_weights:
            continue
        c_out = widths.get(idx, layer.channels)
        sub.params[f"layer{idx}.weight"].data[...] = net.params[f"layer{idx}.weight"].data[:c_out, :c_prev]
        sub.params[f"layer{idx}.bias"].data[...] = net.params[f"layer{idx}.bias"].data[:c_out]
        c_prev = c_out
    return sub


# ------------------------------------------------------------------ exports

def write_width_csv(spec: SupernetSpec, config: Sequence[int], path) -> None:
    config = spec.validate_config(config)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["layer_index", "channels", "max_channels"])
        for li, c, m in zip(spec.prunable_layers, config, spec.max_widths):
            wr.writerow([li, c, m])


def read_width_csv(spec: SupernetSpec, path) -> WidthConfig:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        by_layer = {int(r["layer_index"]): int(r["channels"]) for r in rows}
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed width CSV {path}: {exc}") from None
    if sorted(by_layer) != list(spec.prunable_layers):
        raise ValueError(f"width CSV {path} does not list exactly the prunable layers {spec.prunable_layers}")
    return spec.validate_config([by_layer[i] for i in spec.prunable_layers])
