"""Command-line pipeline: train a supernet, search it, retrain the result, run analyses.

Exit codes: 0 success, 1 bad config or arguments, 2 training diverged,
3 file I/O failure, 4 budget infeasible.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import (config_counts, config_inclusion_probability, expected_channel_samples, inclusion_counts,
                       run_ranking_experiment, write_records_csv)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .cost import Budget, CostTable, flops_of_config
from .search import InfeasibleBudgetError, dea_search
from .slimnet import Supernet, SupernetSpec, read_width_csv, write_width_csv
from .training import DivergenceError, accuracy, fit_standalone, train_supernet

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_INFEASIBLE = 0, 1, 2, 3, 4

logger = logging.getLogger("stageprune")


class UsageError(ValueError):
    pass


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    cfg.validate()
    return cfg


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_net(path, spec: SupernetSpec) -> Supernet:
    state, meta = load_checkpoint(path)
    if "spec" not in meta or SupernetSpec.from_dict(meta["spec"]) != spec:
        raise ConfigError(f"checkpoint {path} was trained for a different supernet spec")
    net = Supernet(spec, seed=None)
    try:
        net.load_state_dict(state)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint {path}: {exc}") from exc
    return net


# ------------------------------------------------------------------ commands

def cmd_train(args) -> int:
    cfg = _load_config(args)
    spec, data, tcfg = cfg.spec_obj(), cfg.data(), cfg.train_cfg()
    if spec.n_classes != data.n_classes or spec.input_shape(0) != data.x_train.shape[1:]:
        raise ConfigError("spec input shape or class count does not match the dataset")
    out = _out_dir(cfg)
    _write_json(out / "run_config.json", cfg.resolved())
    net = Supernet(spec, seed=tcfg.seed)
    ckpt_dir = out / "checkpoints" if tcfg.checkpoint_every else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(exist_ok=True)
    train_supernet(net, data.x_train, data.y_train, tcfg, n_jobs=cfg.threads,
                   checkpoint_dir=ckpt_dir, log_path=out / "train_log.csv")
    save_checkpoint(out / "supernet.json", net.state_dict(), {"spec": spec.to_dict(), "epochs": tcfg.epochs})
    summary = {"full_accuracy": accuracy(net, data.x_val, data.y_val),
               "tiny_accuracy": accuracy(net, data.x_val, data.y_val, spec.tiny_config(), adapted=True)}
    _write_json(out / "train_summary.json", summary)
    print(f"trained supernet: full accuracy {summary['full_accuracy']:.4f}; checkpoint {out / 'supernet.json'}")
    return EXIT_OK


def _budget_from_args(args, cfg: RunConfig) -> tuple[Budget, CostTable | None]:
    if args.budget_macs is not None and args.budget_ms is not None:
        raise UsageError("give only one of --budget-macs and --budget-ms")
    table = None
    if args.budget_ms is not None or (args.budget_macs is None and cfg.budget and cfg.budget.get("kind") == "latency"):
        path = args.cost_table or (cfg.budget or {}).get("cost_table")
        if not path:
            raise UsageError("latency budgets need --cost-table")
        try:
            table = CostTable.from_csv(path)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"cost table {path}: {exc}") from exc
    if args.budget_macs is not None:
        return Budget("flops", float(args.budget_macs)), None
    if args.budget_ms is not None:
        return Budget("latency", float(args.budget_ms)), table
    return cfg.budget_obj(), table


def cmd_search(args) -> int:
    cfg = _load_config(args)
    spec = cfg.spec_obj()
    budget, table = _budget_from_args(args, cfg)
    net = _load_net(args.checkpoint, spec)
    data = cfg.data()
    cache = net.stage_features(data.x_val[:cfg.search_batch])
    result = dea_search(net, cache, budget, cfg.stage_cfg(), cfg.manager_cfg(), table, n_jobs=cfg.threads)
    out = _out_dir(cfg)
    report = result.to_dict()
    report["macs"] = flops_of_config(spec, result.config)
    _write_json(out / "search_report.json", report)
    result.write_curve_csv(out / "search_curve.csv")
    write_width_csv(spec, result.config, out / "width_config.csv")
    print(f"best config {'-'.join(map(str, result.config))}: loss {result.total_loss:.6g}, "
          f"cost {result.cost:.6g} <= {budget.value:.6g}")
    return EXIT_OK


def cmd_retrain(args) -> int:
    cfg = _load_config(args)
    spec = cfg.spec_obj()
    try:
        config = read_width_csv(spec, args.width_config)
    except ValueError as exc:
        raise ConfigError(f"width config {args.width_config}: {exc}") from exc
    data, rcfg = cfg.data(), cfg.retrain_cfg()
    net = fit_standalone(spec, config, data.x_train, data.y_train, rcfg)
    out = _out_dir(cfg)
    acc = accuracy(net, data.x_val, data.y_val)
    report = {"config": list(config), "accuracy": acc, "macs": flops_of_config(spec, config)}
    _write_json(out / "retrain_report.json", report)
    save_checkpoint(out / "subnet.json", net.state_dict(), {"spec": net.spec.to_dict(), "config": list(config)})
    print(f"retrained {'-'.join(map(str, config))}: accuracy {acc:.4f}, {report['macs']} MACs")
    return EXIT_OK


def _analyze_expectations(args) -> int:
    if args.m < 1 or args.n < 0 or args.draws < 1:
        raise UsageError("need m >= 1, n >= 0 and draws >= 1")
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    kept = inclusion_counts(args.m, args.draws, rng)
    with open(out / "expectations.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["i", "expected_samples", "mc_rate", "mc_se"])
        for i in range(1, args.m + 1):
            p = float(kept[i - 1]) / args.draws
            wr.writerow([i, repr(expected_channel_samples(i, args.m, args.n)), repr(p * args.n),
                         repr(args.n * float(np.sqrt(p * (1 - p) / args.draws)))])
    if args.layers:
        if args.m ** args.layers > 100_000:
            raise UsageError("m**layers too large for the config table")
        counts = config_counts(args.m, args.layers, args.draws, np.random.default_rng(args.seed))
        with open(out / "config_expectations.csv", "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["config", "inclusion_probability", "mc_rate"])
            for cfg, c in sorted(counts.items()):
                wr.writerow(["-".join(map(str, cfg)), repr(config_inclusion_probability(cfg, args.m)),
                             repr(c / args.draws)])
    print(f"wrote {out / 'expectations.csv'}")
    return EXIT_OK


def _analyze_ranking(args) -> int:
    if args.n_candidates < 8:
        raise UsageError("ranking needs --n-candidates >= 8")
    cfg = _load_config(args)
    spec, data = cfg.spec_obj(), cfg.data()
    res = run_ranking_experiment(spec, data.x_train, data.y_train, data.x_val, data.y_val, args.n_candidates,
                                 cfg.train_cfg(), cfg.retrain_cfg(), seed=cfg.component_seed("analysis"),
                                 baseline=not args.no_baseline, eval_size=cfg.search_batch, n_jobs=cfg.threads)
    out = _out_dir(cfg)
    write_records_csv(res.records, out / "ranking_records.csv")
    summary = {"spearman": res.rho, "kendall": res.tau, "baseline_spearman": res.baseline_rho,
               "baseline_kendall": res.baseline_tau, "n_candidates": len(res.records)}
    _write_json(out / "ranking_summary.json", summary)
    print(f"spearman {res.rho:.4f} kendall {res.tau:.4f}" +
          ("" if res.baseline_rho is None else f"; single-stage baseline spearman {res.baseline_rho:.4f}"))
    return EXIT_OK


def _analyze_candidate_count(args) -> int:
    if args.g < 1 or args.L < 0:
        raise UsageError("need g >= 1 and L >= 0")
    depths = [int(s) for s in args.stages.split(",")] if args.stages else [args.L]
    if sum(depths) != args.L:
        raise UsageError("--stages depths must sum to L")
    per_stage = [args.g ** d for d in depths]
    print(args.g ** args.L)
    if args.stages:
        print("per-stage: " + " ".join(str(c) for c in per_stage))
    return EXIT_OK


def cmd_analyze(args) -> int:
    return {"expectations": _analyze_expectations, "ranking": _analyze_ranking,
            "candidate-count": _analyze_candidate_count}[args.analysis](args)


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stageprune", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        sp.add_argument("--threads", type=int)

    common(sub.add_parser("train", help="train a stage-wise supernet"))

    sp = sub.add_parser("search", help="search widths under a FLOPs or latency budget")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--budget-macs", type=float)
    sp.add_argument("--budget-ms", type=float)
    sp.add_argument("--cost-table")

    sp = sub.add_parser("retrain", help="train a searched width config from scratch")
    common(sp)
    sp.add_argument("--width-config", required=True)

    sp = sub.add_parser("analyze", help="sampling expectations, ranking experiment, candidate counts")
    asub = sp.add_subparsers(dest="analysis", required=True)
    ap = asub.add_parser("expectations")
    ap.add_argument("--m", type=int, required=True)
    ap.add_argument("--n", type=float, required=True)
    ap.add_argument("--layers", type=int, default=0)
    ap.add_argument("--draws", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    ap = asub.add_parser("ranking")
    common(ap)
    ap.add_argument("--n-candidates", type=int, default=16)
    ap.add_argument("--no-baseline", action="store_true")
    ap = asub.add_parser("candidate-count")
    ap.add_argument("--g", type=int, required=True)
    ap.add_argument("--L", type=int, required=True)
    ap.add_argument("--stages", help="comma-separated stage depths summing to L")
    return p


COMMANDS = {"train": cmd_train, "search": cmd_search, "retrain": cmd_retrain, "analyze": cmd_analyze}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except InfeasibleBudgetError as exc:
        print(f"error: infeasible budget: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
