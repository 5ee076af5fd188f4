"""Sandwich training of a stage-wise supernet with inplace distillation.

Each iteration:

1. the fullnet runs on the batch and back-propagates the task loss, while its
   stage inputs/outputs are saved as constants;
2. a random subnet and the tinynet run every stage on the saved fullnet
   stage input and regress the saved fullnet stage output
   (:func:`~stageprune.autograd.mse_stage_loss` through the stage adapter);
3. all gradients are summed in a fixed order (fullnet, random subnets stage
   by stage, tinynet stage by stage) and one SGD step is taken.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import (Tape, Tensor, OptimState, cross_entropy, mse_stage_loss,
                       sgd_momentum_step)
from .checkpoint import save_checkpoint, load_checkpoint
from .slimnet import Supernet, SupernetSpec, StageFeatureCache, quantize

logger = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Raised when a training loss becomes NaN or infinite."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 512
    lr: float = 0.025
    lr_decay: float = 0.1
    decay_epochs: int | list = 10
    momentum: float = 0.9
    weight_decay: float = 3e-4
    n_random: int = 1
    seed: int = 0
    checkpoint_every: int = 0
    loss_reduction: str = "mean"
    grad_clip: float = 0.0  # global L2 norm cap on the summed gradient; 0 disables

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.n_random < 0:
            raise ValueError("epochs, batch_size and n_random must be non-negative (batch_size positive)")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("lr must be positive and lr_decay in (0, 1]")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("momentum must lie in [0, 1) and weight_decay be non-negative")
        if isinstance(self.decay_epochs, int) and self.decay_epochs < 1:
            raise ValueError("decay_epochs must be positive")
        if self.grad_clip < 0:
            raise ValueError("grad_clip must be non-negative")
        if self.loss_reduction not in ("sum", "batchmean", "mean"):
            raise ValueError(f"unknown loss_reduction {self.loss_reduction!r}")

    def lr_at(self, epoch: int) -> float:
        if isinstance(self.decay_epochs, int):
            steps = epoch // self.decay_epochs
        else:
            steps = sum(1 for m in self.decay_epochs if epoch >= m)
        return self.lr * self.lr_decay ** steps

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


def sample_width_config(spec: SupernetSpec, mode: str, rng: np.random.Generator) -> tuple[int, ...]:
    """``full``: every layer at max width; ``tiny``: every layer at the smallest
    grid ratio; ``random``: a grid ratio drawn uniformly per layer."""
    if mode == "full":
        return spec.full_config()
    if mode == "tiny":
        return spec.tiny_config()
    if mode != "random":
        raise ValueError(f"unknown sampling mode {mode!r}")
    idx = rng.integers(0, spec.g, size=spec.depth)
    return tuple(quantize(spec.ratios[j], m) for j, m in zip(idx, spec.max_widths))


def _stage_branch(net: Supernet, i: int, gene, cache: StageFeatureCache, params, reduction: str):
    with Tape() as tape:
        _, adapted = net.stage_forward(i, gene, cache.inputs[i])
        loss = mse_stage_loss(adapted, Tensor(cache.targets[i]), reduction)
    return float(loss.data), tape.gradient(loss, params)


def stage_losses(net: Supernet, cache: StageFeatureCache, config: Sequence[int],
                 reduction: str = "mean") -> list[float]:
    """Per-stage distillation loss of ``config`` against a cached fullnet pass."""
    genes = net.spec.split_config(config)
    out = []
    for i, gene in enumerate(genes):
        _, adapted = net.stage_forward(i, gene, cache.inputs[i])
        out.append(float(mse_stage_loss(adapted, Tensor(cache.targets[i]), reduction).data))
    return out


def train_iteration(net: Supernet, x: np.ndarray, y: np.ndarray, cfg: TrainConfig, state: OptimState,
                    rng: np.random.Generator, teacher: Supernet | None = None, distill: bool = True,
                    executor: ThreadPoolExecutor | None = None) -> dict:
    """One sandwich step; returns the log entry for the iteration."""
    if len(x) == 0:
        raise ValueError("empty batch")
    params = net.parameters()
    net.zero_grad()
    with Tape() as tape:
        logits, cache = net.forward_with_features(x)
        task = cross_entropy(logits, y)
    task_loss = float(task.data)
    if not np.isfinite(task_loss):
        raise DivergenceError(f"task loss became {task_loss}")
    grads = tape.gradient(task, params)
    entry: dict = {"task_loss": task_loss, "lr": state.lr}

    if distill:
        if teacher is not None:
            cache = teacher.stage_features(x)
        branches = [(f"random{j}", sample_width_config(net.spec, "random", rng)) for j in range(cfg.n_random)]
        branches.append(("tiny", net.spec.tiny_config()))
        # stages without searchable widths reproduce the fullnet exactly: loss 0, no gradient
        jobs = [(name, i, gene) for name, cfg_w in branches
                for i, gene in enumerate(net.spec.split_config(cfg_w)) if gene]
        run = lambda job: _stage_branch(net, job[1], job[2], cache, params, cfg.loss_reduction)  # noqa: E731
        results = list(executor.map(run, jobs)) if executor is not None else [run(j) for j in jobs]
        for (name, i, _), (loss, branch_grads) in zip(jobs, results):
            if not np.isfinite(loss):
                raise DivergenceError(f"{name} stage {i} distillation loss became {loss}")
            entry[f"{name}_stage{i}"] = loss
            grads = [g + bg for g, bg in zip(grads, branch_grads)]

    if cfg.grad_clip:
        norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
        entry["grad_norm"] = norm
        if norm > cfg.grad_clip:
            grads = [g * (cfg.grad_clip / norm) for g in grads]
    for p, g in zip(params, grads):
        p.grad = g
    sgd_momentum_step(params, grads, state)
    return entry


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def train_supernet(net: Supernet, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                   teacher: Supernet | None = None, distill: bool = True, n_jobs: int = 1,
                   checkpoint_dir=None, log_path=None) -> list[dict]:
    """Train ``net`` in place for ``cfg.epochs`` epochs; return the iteration log."""
    rng = np.random.default_rng(cfg.seed)
    state = OptimState(cfg.lr, cfg.momentum, cfg.weight_decay)
    log: list[dict] = []
    executor = ThreadPoolExecutor(n_jobs) if n_jobs > 1 and distill else None
    x = np.asarray(x, dtype=net.dtype)
    y = np.asarray(y)
    try:
        for epoch in range(cfg.epochs):
            state.lr = cfg.lr_at(epoch)
            for idx in _batches(len(x), cfg.batch_size, rng):
                entry = train_iteration(net, x[idx], y[idx], cfg, state, rng, teacher, distill, executor)
                log.append({"iteration": len(log), "epoch": epoch, **entry})
            logger.debug("epoch %d task loss %.4f", epoch, log[-1]["task_loss"] if log else float("nan"))
            if checkpoint_dir is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(Path(checkpoint_dir) / f"epoch{epoch + 1:04d}.json", net.state_dict(),
                                {"spec": net.spec.to_dict(), "epoch": epoch + 1})
    finally:
        if executor is not None:
            executor.shutdown()
    if log_path is not None:
        write_log_csv(log, log_path)
    return log


def write_log_csv(log: list[dict], path) -> None:
    keys: list[str] = []
    for entry in log:
        keys.extend(k for k in entry if k not in keys)
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys or ["iteration", "task_loss", "lr"])
        wr.writeheader()
        for entry in log:
            wr.writerow({k: repr(v) if isinstance(v, float) else v for k, v in entry.items()})


def accuracy(net: Supernet, x: np.ndarray, y: np.ndarray, config=None, adapted: bool = False) -> float:
    """Top-1 accuracy; ``adapted`` routes stage outputs through their adapters."""
    if len(y) == 0:
        raise ValueError("empty evaluation set")
    return float(np.mean(net.predict(x, config, adapted=adapted) == np.asarray(y)))


def fit_standalone(spec: SupernetSpec, config: Sequence[int], x, y, cfg: TrainConfig) -> Supernet:
    """Fresh network with ``config`` widths, trained from scratch on task loss only."""
    net = Supernet(spec.narrow(config).single_stage(), seed=cfg.seed)
    train_supernet(net, x, y, cfg, distill=False)
    return net


def retrain_subnet(spec: SupernetSpec, config: Sequence[int], x_train, y_train, x_val, y_val,
                   cfg: TrainConfig) -> float:
    """Top-1 validation accuracy of ``config`` trained from scratch."""
    net = fit_standalone(spec, config, x_train, y_train, cfg)
    return accuracy(net, x_val, y_val)


def load_teacher(spec: SupernetSpec, source) -> Supernet:
    """Frozen fullnet teacher from a checkpoint path or another :class:`Supernet`.

    Only the layer weights are taken; the teacher must match the fullnet
    architecture exactly.
    """
    if isinstance(source, Supernet):
        if source.spec.layers != spec.layers or source.spec.in_channels != spec.in_channels \
                or source.spec.input_size != spec.input_size:
            raise ValueError("teacher architecture does not match the fullnet")
        state = source.state_dict()
    else:
        state, _ = load_checkpoint(source)
    teacher = Supernet(spec, seed=None)
    for name, p in teacher.params.items():
        if name.startswith("adapter"):
            continue
        if name not in state or tuple(state[name].shape) != p.shape:
            raise ValueError(f"teacher architecture mismatch at {name}")
        p.data[...] = state[name]
        p.requires_grad = False
    return teacher


def supervise_external_teacher(net: Supernet, teacher, x, y, cfg: TrainConfig, **kwargs) -> list[dict]:
    """Like :func:`train_supernet` but distillation targets come from a frozen teacher."""
    return train_supernet(net, x, y, cfg, teacher=load_teacher(net.spec, teacher), **kwargs)
