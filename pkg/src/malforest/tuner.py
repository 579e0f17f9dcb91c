"""Budgeted hyperparameter search over pinned per-estimator spaces.

Configurations are drawn from a Halton sequence with a seeded
Cranley-Patterson rotation: low-discrepancy coverage of the space while
remaining deterministic, and the trial list for a smaller budget is a
prefix of the list for a larger one with the same seed. Each trial trains
on the training partition and is scored by validation AUC (threshold-free
ranking quality); there is no early pruning.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import forest, metrics
from .errors import ConfigError, DataError
from .forest import ForestConfig

# (low, high, scale, integer); scale "log" or "linear"
SEARCH_RANGES = {
    "trees": (50, 600, "log", True),
    "depth": (3, 12, "linear", True),
    "leaves": (15, 255, "linear", True),
    "learning_rate": (0.01, 0.3, "log", False),
    "min_child_weight": (0.5, 20.0, "linear", False),
    "feature_subsample": (0.5, 1.0, "linear", False),
    "row_subsample": (0.6, 1.0, "linear", False),
}

# estimator -> (forest variant, growth policy, sampled hyperparameters);
# forest spaces omit the boosting-only parameters
ESTIMATORS = {
    "lgbm": ("gbdt", "leaf",
             ["trees", "leaves", "learning_rate", "min_child_weight",
              "feature_subsample", "row_subsample"]),
    "xgb": ("gbdt", "depth",
            ["trees", "depth", "learning_rate", "min_child_weight",
             "feature_subsample", "row_subsample"]),
    "rf": ("random_forest", "depth", ["trees", "depth"]),
    "et": ("extra_trees", "depth", ["trees", "depth"]),
}

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19)


@dataclass
class Budget:
    max_trials: int = 30
    max_seconds: float | None = None


@dataclass
class Trial:
    config: ForestConfig
    val_auc: float
    wall_time: float


@dataclass
class TrialLog:
    estimator: str
    seed: int
    trials: list[Trial] = field(default_factory=list)

    @property
    def best_index(self) -> int:
        best = 0
        for i, t in enumerate(self.trials):
            if t.val_auc > self.trials[best].val_auc:
                best = i
        return best

    def to_json(self) -> str:
        return json.dumps({
            "estimator": self.estimator,
            "seed": self.seed,
            "best_index": self.best_index,
            "trials": [{"config": t.config.to_dict(), "val_auc": t.val_auc,
                        "wall_time": t.wall_time} for t in self.trials],
        }, sort_keys=True)


def _halton(index: int, base: int) -> float:
    result = 0.0
    f = 1.0
    i = index
    while i > 0:
        f /= base
        result += f * (i % base)
        i //= base
    return result


def sample_config(estimator: str, trial_index: int, seed: int) -> ForestConfig:
    """Trial `trial_index` of the rotated Halton sequence for this estimator."""
    if estimator not in ESTIMATORS:
        raise ConfigError(f"estimator must be one of {sorted(ESTIMATORS)}, "
                          f"got {estimator!r}")
    _, growth, params = ESTIMATORS[estimator]
    rotation = np.random.default_rng(seed).uniform(size=len(params))
    values = {}
    for j, name in enumerate(params):
        lo, hi, scale, integer = SEARCH_RANGES[name]
        u = (_halton(trial_index + 1, _PRIMES[j]) + rotation[j]) % 1.0
        if scale == "log":
            v = float(np.exp(np.log(lo) + u * (np.log(hi) - np.log(lo))))
        else:
            v = lo + u * (hi - lo)
        if integer:
            v = int(min(max(round(v), lo), hi))
        values[name] = v
    values["growth"] = growth
    if growth == "leaf":
        values["depth"] = 0  # leaf-wise growth is capped by leaves, not depth
    return ForestConfig(**values).validate()


def trial_seed(seed: int, trial_index: int) -> int:
    return int(np.random.SeedSequence(entropy=seed,
                                      spawn_key=(trial_index,)).generate_state(1)[0])


def search(estimator: str, train_x, train_y, val_x, val_y,
           budget: Budget | None = None, seed: int = 0,
           keep_models: bool = False):
    """Sample, train and score configurations until the budget binds.

    Returns (best_config, TrialLog) or (best_config, TrialLog, models)
    when keep_models is set. Deterministic for a given (seed, max_trials)
    when no time budget is set.
    """
    budget = budget or Budget()
    if budget.max_trials < 1:
        raise ConfigError("budget allows zero trials; raise max_trials to at "
                          "least 1 or remove the limit")
    if len(val_y) == 0:
        raise DataError("validation set is empty")
    variant = ESTIMATORS[estimator][0]
    log = TrialLog(estimator=estimator, seed=seed)
    models = []
    started = time.monotonic()
    for i in range(budget.max_trials):
        if (budget.max_seconds is not None and i > 0
                and time.monotonic() - started > budget.max_seconds):
            break
        config = sample_config(estimator, i, seed)
        t0 = time.monotonic()
        model = forest.train(train_x, train_y, variant, config,
                             seed=trial_seed(seed, i))
        score = metrics.auc(forest.predict_proba(model, val_x), val_y)
        log.trials.append(Trial(config=config, val_auc=score,
                                wall_time=time.monotonic() - t0))
        if keep_models:
            models.append(model)
    if not log.trials:
        raise ConfigError("no trial completed within the time budget; raise "
                          "max_seconds or lower the model cost")
    best_config = log.trials[log.best_index].config
    if keep_models:
        return best_config, log, models
    return best_config, log
