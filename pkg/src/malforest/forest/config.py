"""Hyperparameter record shared by all ensemble variants."""

from dataclasses import asdict, dataclass, field, fields

from ..errors import ConfigError

VARIANTS = ("gbdt", "random_forest", "extra_trees")
GROWTH_POLICIES = ("depth", "leaf")

# inclusive bounds enforced by validate(); search spaces are narrower
RANGES = {
    "trees": (0, 10_000),
    "depth": (0, 64),            # 0 means uncapped (hard cap 64)
    "leaves": (0, 65_536),       # 0 means no leaf cap
    "learning_rate": (1e-6, 1.0),
    "min_child_weight": (0.0, 1e9),
    "reg_lambda": (0.0, 1e9),
    "min_split_gain": (0.0, 1e9),
    "feature_subsample": (1e-9, 1.0),
    "row_subsample": (1e-9, 1.0),
    "max_bins": (2, 255),
}

HARD_DEPTH_CAP = 64


@dataclass(frozen=True)
class ForestConfig:
    trees: int = 200
    depth: int = 6
    leaves: int = 0
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    min_split_gain: float = 0.0
    feature_subsample: float = 1.0
    row_subsample: float = 1.0
    max_bins: int = 255
    growth: str = "depth"

    def validate(self) -> "ForestConfig":
        for f in fields(self):
            if f.name == "growth":
                continue
            lo, hi = RANGES[f.name]
            value = getattr(self, f.name)
            if not (lo <= value <= hi):
                raise ConfigError(
                    f"hyperparameter {f.name}={value} outside [{lo}, {hi}]")
        if self.growth not in GROWTH_POLICIES:
            raise ConfigError(f"growth must be one of {GROWTH_POLICIES}, "
                              f"got {self.growth!r}")
        return self

    @property
    def depth_cap(self) -> int:
        return self.depth if self.depth > 0 else HARD_DEPTH_CAP

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ForestConfig":
        return cls(**obj)


# Gain-based feature selection trains this fixed configuration.
SELECTOR_CONFIG = ForestConfig(trees=200, depth=6, learning_rate=0.1,
                               max_bins=255, growth="depth")
SELECTOR_SEED = 42
