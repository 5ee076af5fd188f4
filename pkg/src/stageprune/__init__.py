"""Stage-wise channel pruning on a small numpy autodiff engine.

Train a slimmable supernet stage by stage with inplace distillation, search
per-layer widths under a MAC or latency budget with a two-level evolutionary
search, and retrain the winner from scratch.
"""
from .analysis import (RankingRecord, expected_channel_samples, expected_config_samples, ranking_correlation,
                       run_ranking_experiment, supernet_accuracy_expectation)
from .cost import Budget, CostModel, CostTable, flops_of_config, latency_of_config, stage_cost_bounds
from .datasets import Dataset, load_idx, split_per_class, standardize, synth_blobs
from .estimators import StageWiseSearch, SubnetClassifier, SupernetTrainer
from .search import EAConfig, InfeasibleBudgetError, SearchResult, dea_search, stage_ea
from .slimnet import LayerSpec, Supernet, SupernetSpec, count_candidates, desk_spec, extract_subnet
from .training import DivergenceError, TrainConfig, retrain_subnet, train_supernet

__version__ = "0.1.0"

__all__ = [
    "RankingRecord", "expected_channel_samples", "expected_config_samples", "ranking_correlation",
    "run_ranking_experiment", "supernet_accuracy_expectation",
    "Budget", "CostModel", "CostTable", "flops_of_config", "latency_of_config", "stage_cost_bounds",
    "Dataset", "load_idx", "split_per_class", "standardize", "synth_blobs",
    "StageWiseSearch", "SubnetClassifier", "SupernetTrainer",
    "EAConfig", "InfeasibleBudgetError", "SearchResult", "dea_search", "stage_ea",
    "LayerSpec", "Supernet", "SupernetSpec", "count_candidates", "desk_spec", "extract_subnet",
    "DivergenceError", "TrainConfig", "retrain_subnet", "train_supernet",
]
