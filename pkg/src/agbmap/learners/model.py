"""Model containers and their versioned JSON serialization.

Serialized floats use Python's repr (shortest round-tripping form), so a
model saved and reloaded predicts bit-identically. Bin edges ride along in
booster models for provenance even though prediction reads thresholds
straight from the nodes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import ValidationError

KIND_RANDOM_FOREST = "random_forest"
KIND_GBDT = "gbdt"

MODEL_FORMAT = "agbmap-forest-1"


@dataclass
class Tree:
    """A decision tree as parallel node arrays (feature < 0 marks a leaf)."""

    feature: np.ndarray   # int32
    threshold: np.ndarray  # float64
    left: np.ndarray      # int32
    right: np.ndarray     # int32
    value: np.ndarray     # float64

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    def to_json_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int32),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int32),
            np.asarray(d["right"], dtype=np.int32),
            np.asarray(d["value"], dtype=np.float64),
        )

    def equals(self, other: "Tree") -> bool:
        return (
            np.array_equal(self.feature, other.feature)
            and np.array_equal(self.threshold, other.threshold)
            and np.array_equal(self.left, other.left)
            and np.array_equal(self.right, other.right)
            and np.array_equal(self.value, other.value)
        )


@dataclass
class TrainConfig:
    """Hyperparameters for both learners; defaults follow the usual tool defaults."""

    n_trees: int = 100
    seed: int = 0
    threads: int = 1
    # random forest
    rf_mtry: int | None = None   # None -> ceil(p / 3)
    rf_min_leaf: int = 1
    rf_bootstrap: bool = True
    rf_max_depth: int = 0        # 0 = unlimited
    # gradient-boosted trees
    gbdt_max_leaves: int = 31
    gbdt_learning_rate: float = 0.1
    gbdt_max_bins: int = 255
    gbdt_min_leaf: int = 20
    gbdt_min_gain: float = 0.0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValidationError("n_trees must be >= 0")
        if not 0.0 < self.gbdt_learning_rate <= 1.0:
            raise ValidationError("learning_rate must be in (0, 1]")
        for name in ("rf_min_leaf", "gbdt_max_leaves", "gbdt_max_bins",
                     "gbdt_min_leaf", "threads"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.rf_mtry is not None and self.rf_mtry < 1:
            raise ValidationError("rf_mtry must be >= 1")
        if self.gbdt_max_bins > 65535:
            raise ValidationError("gbdt_max_bins must fit 16-bit bin indices")

    def mtry_for(self, p: int) -> int:
        return min(p, self.rf_mtry if self.rf_mtry else math.ceil(p / 3))

    def to_json_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "seed": self.seed,
            "threads": self.threads,
            "rf": {
                "mtry": self.rf_mtry,
                "min_leaf": self.rf_min_leaf,
                "bootstrap": self.rf_bootstrap,
                "max_depth": self.rf_max_depth,
            },
            "gbdt": {
                "max_leaves": self.gbdt_max_leaves,
                "learning_rate": self.gbdt_learning_rate,
                "max_bins": self.gbdt_max_bins,
                "min_leaf": self.gbdt_min_leaf,
                "min_gain": self.gbdt_min_gain,
            },
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TrainConfig":
        rf = d.get("rf", {})
        gbdt = d.get("gbdt", {})
        return cls(
            n_trees=d.get("n_trees", 100),
            seed=d.get("seed", 0),
            threads=d.get("threads", 1),
            rf_mtry=rf.get("mtry"),
            rf_min_leaf=rf.get("min_leaf", 1),
            rf_bootstrap=rf.get("bootstrap", True),
            rf_max_depth=rf.get("max_depth", 0),
            gbdt_max_leaves=gbdt.get("max_leaves", 31),
            gbdt_learning_rate=gbdt.get("learning_rate", 0.1),
            gbdt_max_bins=gbdt.get("max_bins", 255),
            gbdt_min_leaf=gbdt.get("min_leaf", 20),
            gbdt_min_gain=gbdt.get("min_gain", 0.0),
        )


@dataclass
class ForestModel:
    """A trained tree ensemble (bagged forest or boosted trees).

    Predictions: forest = mean of tree outputs; booster = base_score +
    learning_rate * sum of tree outputs.
    """

    kind: str
    trees: list
    feature_names: list
    base_score: float = 0.0
    learning_rate: float = 1.0
    bin_edges: list | None = None
    config: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def to_json_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "kind": self.kind,
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature_names": list(self.feature_names),
            "seed": self.seed,
            "config": self.config.to_json_dict(),
            "bin_edges": None if self.bin_edges is None
            else [e.tolist() for e in self.bin_edges],
            "trees": [t.to_json_dict() for t in self.trees],
        }

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def from_json_dict(cls, d: dict) -> "ForestModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValidationError(f"not a model file (format={d.get('format')!r})")
        if d["kind"] not in (KIND_RANDOM_FOREST, KIND_GBDT):
            raise ValidationError(f"unknown model kind {d['kind']!r}")
        return cls(
            kind=d["kind"],
            trees=[Tree.from_json_dict(t) for t in d["trees"]],
            feature_names=list(d["feature_names"]),
            base_score=d["base_score"],
            learning_rate=d["learning_rate"],
            bin_edges=None if d.get("bin_edges") is None
            else [np.asarray(e, dtype=np.float64) for e in d["bin_edges"]],
            config=TrainConfig.from_json_dict(d.get("config", {})),
            seed=d.get("seed", 0),
        )

    @classmethod
    def load(cls, path) -> "ForestModel":
        with open(path) as fh:
            return cls.from_json_dict(json.load(fh))

    def equals(self, other: "ForestModel") -> bool:
        """Bit-level equality of everything that affects predictions."""
        if (self.kind != other.kind or self.n_trees != other.n_trees
                or self.base_score != other.base_score
                or self.learning_rate != other.learning_rate
                or list(self.feature_names) != list(other.feature_names)):
            return False
        return all(a.equals(b) for a, b in zip(self.trees, other.trees))
