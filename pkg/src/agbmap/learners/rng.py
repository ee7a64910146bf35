"""Counter-based pseudo-random streams for reproducible training.

Every random draw in the learners is the k-th value of a splitmix64 stream:
``value(seed, k) = mix64(seed + (k+1)*GOLDEN)`` over uint64 arithmetic. A
counter-based design has no hidden state, so draws can be generated in any
order, vectorized, or recomputed inside the compiled kernels, and the result
never depends on evaluation order or worker count. The compiled backend
carries a C copy of the same three functions; the constants here are part of
the serialized-model contract and must not change.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15

# Stream tags keep the tree-seed, bootstrap, and feature-subset streams apart.
TAG_TREE = 0x7472656500000001
TAG_BOOTSTRAP = 0x626F6F7400000002
TAG_FEATURES = 0x6665617400000003


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def stream_value(seed: int, k: int) -> int:
    """k-th value (0-based) of the stream identified by seed."""
    return mix64((seed + (k + 1) * GOLDEN) & _MASK)


def stream_array(seed: int, start: int, count: int) -> np.ndarray:
    """Values start..start+count-1 of a stream, vectorized (uint64)."""
    k = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed & _MASK) + k * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def tree_seed(master_seed: int, tree_index: int) -> int:
    return stream_value(master_seed ^ TAG_TREE, tree_index)


def bootstrap_indices(t_seed: int, n: int) -> np.ndarray:
    """n draws with replacement from range(n), int32, in draw order."""
    return (stream_array(t_seed ^ TAG_BOOTSTRAP, 0, n) % np.uint64(n)).astype(np.int32)


def feature_subset(t_seed: int, node_slot: int, p: int, mtry: int) -> list:
    """Sorted mtry-subset of range(p) for one node (partial Fisher-Yates).

    The compiled kernels re-derive exactly this subset from (tree seed,
    node slot), so node numbering is part of the determinism contract.
    """
    if mtry >= p:
        return list(range(p))
    node_seed = stream_value(t_seed ^ TAG_FEATURES, node_slot)
    arr = list(range(p))
    for j in range(mtry):
        r = j + stream_value(node_seed, j) % (p - j)
        arr[j], arr[r] = arr[r], arr[j]
    return sorted(arr[:mtry])
