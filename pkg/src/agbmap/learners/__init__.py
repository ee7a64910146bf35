"""Tree-ensemble learners: bagged forests and leaf-wise boosted trees.

The split-search and traversal kernels exist twice: a compiled Cython
extension used when built, and a pure-numpy twin selected automatically when
it is not. The two follow one numeric contract and produce bit-identical
models; ``active_backend()`` reports which one is live and AGBMAP_BACKEND
overrides the choice.
"""
from .backends import active_backend, available_backends, get_backend
from .benchmark import benchmark_training, compare_backends
from .model import (
    KIND_GBDT,
    KIND_RANDOM_FOREST,
    ForestModel,
    TrainConfig,
    Tree,
)
from .reference import exact_tree_reference, tree_partitions
from .training import predict, train_gbdt, train_random_forest

__all__ = [
    "KIND_GBDT",
    "KIND_RANDOM_FOREST",
    "ForestModel",
    "TrainConfig",
    "Tree",
    "active_backend",
    "available_backends",
    "benchmark_training",
    "compare_backends",
    "exact_tree_reference",
    "get_backend",
    "predict",
    "train_gbdt",
    "train_random_forest",
    "tree_partitions",
]
