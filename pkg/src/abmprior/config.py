"""Training configuration and its text-file form (YAML, one key per field)."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import yaml

ALGORITHMS = ("mpo", "svg")
PRIOR_KINDS = ("bm", "abm", "none")
TRUST_REGIONS = ("combined", "decoupled")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "mpo"
    prior_kind: str = "abm"
    epsilon: float | None = None  # None -> 0.1 for mpo, 0.2 for svg
    trust_region: str = "combined"
    eps_trust: float = 5e-3
    eps_mu: float = 5e-3
    eps_sigma: float = 1e-5
    gamma: float = 0.99
    M: int = 20
    batch_size: int = 64
    snippet_len: int = 10
    target_period: int = 200
    learning_rate: float = 2e-4
    dual_learning_rate: float = 2e-4
    eta_init: float | None = None  # None -> 3 for mpo, 1 for svg
    alpha_init: float = 1.0
    total_steps: int = 20000
    eval_every: int = 1000
    eval_episodes: int = 5
    eval_episode_len: int | None = None
    seed: int = 0
    task: str = "reach-A"
    multi_task: bool = False
    prior_only: bool = False
    policy_widths: tuple[int, ...] = (64, 64)
    prior_widths: tuple[int, ...] = (64, 64)
    critic_widths: tuple[int, ...] = (64, 64, 64)
    env: str | None = None  # None -> environment named in the dataset header
    dataset_path: str | None = None
    out_dir: str | None = None

    def __post_init__(self):
        for name in ("policy_widths", "prior_widths", "critic_widths"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.prior_kind not in PRIOR_KINDS:
            raise ValueError(f"prior_kind must be one of {PRIOR_KINDS}, got {self.prior_kind!r}")
        if self.trust_region not in TRUST_REGIONS:
            raise ValueError(f"trust_region must be one of {TRUST_REGIONS}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        for name in ("M", "batch_size", "target_period", "eval_every", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")
        if self.snippet_len < 2:
            raise ValueError("snippet_len must be at least 2")
        if self.learning_rate <= 0 or self.dual_learning_rate <= 0:
            raise ValueError("learning rates must be positive")
        if self.prior_only and self.prior_kind == "none":
            raise ValueError("prior_only training needs a learned prior")

    @property
    def resolved_epsilon(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 0.1 if self.algorithm == "mpo" else 0.2

    @property
    def resolved_eta_init(self) -> float:
        if self.eta_init is not None:
            return self.eta_init
        return 3.0 if self.algorithm == "mpo" else 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def updated(self, **overrides) -> "TrainConfig":
        return replace(self, **overrides)


FIELD_NAMES = tuple(f.name for f in fields(TrainConfig))


def config_from_dict(d: dict) -> TrainConfig:
    unknown = set(d) - set(FIELD_NAMES)
    if unknown:
        raise KeyError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**d)


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` with the value parsed as YAML (so numbers, lists and null work)."""
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ValueError(f"override {text!r} is not of the form key=value")
    key = key.strip()
    if key not in FIELD_NAMES:
        raise KeyError(f"unknown config key {key!r}")
    return key, yaml.safe_load(value)


def load_config(path=None, overrides=()) -> TrainConfig:
    d = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        d = yaml.safe_load(p.read_text()) or {}
        if not isinstance(d, dict):
            raise ValueError(f"{p}: expected a mapping of config keys")
    for item in overrides:
        k, v = parse_override(item)
        d[k] = v
    return config_from_dict(d)


def save_config(path, config: TrainConfig) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))
