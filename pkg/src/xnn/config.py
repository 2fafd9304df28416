"""Hyperparameters shared by the model, the gradient code and the trainer."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import ConfigError

ACTIVATIONS = ("tanh", "linear")
TASKS = ("regression", "classification")


@dataclass
class Hyperparams:
    """All tunables of an xNN fit.

    ``k`` and ``batch_size`` may be left as ``None``; :meth:`resolve` fills
    them with ``min(p, 10)`` and ``min(1000, 0.2 n)`` once the data shape is
    known.
    """

    k: int | None = None
    lambda1: float = 1e-3
    lambda2: float = 1e-3
    lambda3: float = 1e-6
    eta: float = 1e-3
    tau: float = 0.1
    batch_size: int | None = None
    max_epochs: int = 2000
    patience: int = 200
    min_delta: float = 1e-5
    hidden: tuple[int, ...] = (10, 6)
    activation: str = "tanh"
    prune_threshold: float = 0.95
    finetune_epochs: int = 100
    seed: int = 0
    task: str = "regression"
    # W fixed to identity columns, no Cayley steps (GAM special case).
    gam_mode: bool = False
    # Debug only: plain Adam on W without the orthogonality constraint.
    orthogonal: bool = True
    reortho_every: int = 100
    # Differentiate through the batch mean and std (False: treat them as constants).
    stat_grad: bool = True
    norm_eps: float = 1e-5

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self) -> "Hyperparams":
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.eta <= 0:
            raise ConfigError(f"eta must be > 0, got {self.eta}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not 0 < self.prune_threshold <= 1:
            raise ConfigError(f"prune_threshold must lie in (0, 1], got {self.prune_threshold}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.k is not None and self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.max_epochs < 0 or self.finetune_epochs < 0 or self.patience < 1:
            raise ConfigError("max_epochs/finetune_epochs must be >= 0 and patience >= 1")
        if any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must be >= 1, got {self.hidden}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        return self

    def resolve(self, p: int, n: int | None = None) -> "Hyperparams":
        """Return a copy with data-dependent defaults filled in."""
        hp = dataclasses.replace(self)
        if hp.k is None:
            hp.k = p if hp.gam_mode else min(p, 10)
        if hp.batch_size is None and n is not None:
            hp.batch_size = max(1, min(1000, int(0.2 * n)))
        hp.validate()
        if hp.k > p:
            raise ConfigError(f"k={hp.k} exceeds the feature count p={p}")
        if hp.gam_mode and hp.k != p:
            raise ConfigError(f"gam_mode needs k == p, got k={hp.k}, p={p}")
        return hp

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown hyperparameter(s): {sorted(unknown)}")
        return cls(**d)
