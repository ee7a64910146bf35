"""Wall-clock training benchmarks, including the two-backend comparison."""
from __future__ import annotations

import time

from .backends import available_backends, backend_name, get_backend
from .model import KIND_GBDT, KIND_RANDOM_FOREST, TrainConfig
from .training import train_gbdt, train_random_forest

_TRAINERS = {KIND_GBDT: train_gbdt, KIND_RANDOM_FOREST: train_random_forest}


def benchmark_training(X, y, config: TrainConfig | None = None,
                       learners=(KIND_GBDT, KIND_RANDOM_FOREST),
                       backend=None) -> dict:
    """Train each learner once and report wall-clock seconds.

    Both learners get the same thread budget (config.threads) and the same
    seed; the report carries the dataset shape so timings are interpretable.
    """
    config = config or TrainConfig()
    report = {
        "n": int(X.shape[0]),
        "p": int(X.shape[1]),
        "seed": config.seed,
        "threads": config.threads,
        "n_trees": config.n_trees,
        "backend": backend_name(get_backend(backend)),
        "timings_s": {},
        "n_nodes": {},
    }
    for kind in learners:
        trainer = _TRAINERS[kind]
        t0 = time.perf_counter()
        model = trainer(X, y, config, backend=backend)
        report["timings_s"][kind] = time.perf_counter() - t0
        report["n_nodes"][kind] = sum(t.n_nodes for t in model.trees)
    times = report["timings_s"]
    if KIND_GBDT in times and KIND_RANDOM_FOREST in times and times[KIND_RANDOM_FOREST] > 0:
        report["gbdt_over_rf"] = times[KIND_GBDT] / times[KIND_RANDOM_FOREST]
    return report


def compare_backends(X, y, config: TrainConfig | None = None,
                     learners=(KIND_GBDT, KIND_RANDOM_FOREST),
                     backends=None) -> dict:
    """Benchmark every backend and verify they train identical models."""
    config = config or TrainConfig()
    backends = list(backends) if backends else available_backends()
    out = {"backends": {}, "models_identical": True}
    reference_models = {}
    for name in backends:
        out["backends"][name] = benchmark_training(X, y, config, learners, backend=name)
        for kind in learners:
            model = _TRAINERS[kind](X, y, config, backend=name)
            if kind not in reference_models:
                reference_models[kind] = model
            elif not reference_models[kind].equals(model):
                out["models_identical"] = False
    return out
