"""Simulation scenarios S1-S6, dataset splits and CSV input/output.

Random streams come from PCG64 seeded through ``SeedSequence(seed,
spawn_key=...)``, so every (scenario, repetition, role) triple gets its own
reproducible, platform-stable stream.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, ShapeError

log = logging.getLogger(__name__)

SPLITS = ("train", "validation", "test")
ROLES = {"train": 0, "test": 1, "fit": 2, "split": 3}


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent PCG64 generator for ``seed`` and an integer spawn key."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    feature_names: list[str] | None = None
    split: np.ndarray | None = None  # per-row label, one of SPLITS
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ShapeError(f"X {self.X.shape} and y {self.y.shape} disagree")
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task == "classification" and not np.isin(self.y, (0.0, 1.0)).all():
            raise ConfigError("classification responses must be 0/1")
        if self.feature_names is None:
            self.feature_names = [f"x{j + 1}" for j in range(self.X.shape[1])]
        if len(self.feature_names) != self.X.shape[1]:
            raise ShapeError("feature_names length does not match X")
        if self.split is not None:
            self.split = np.asarray(self.split, dtype=object)
            if self.split.shape != self.y.shape:
                raise ShapeError("split labels must have one entry per row")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, label: str) -> "Dataset":
        if self.split is None:
            raise ConfigError("dataset has no split labels")
        mask = self.split == label
        return replace(self, X=self.X[mask], y=self.y[mask], split=None)


# features and scenarios

def gen_features(n: int, p: int, t: float, rng: np.random.Generator) -> np.ndarray:
    """x_j = (d_j + t s) / (1 + t) with d_j, s iid Unif(-1, 1); Corr = t^2 / (1 + t^2)."""
    if n < 1 or p < 1 or t < 0:
        raise ConfigError(f"need n >= 1, p >= 1, t >= 0; got n={n}, p={p}, t={t}")
    d = rng.uniform(-1.0, 1.0, size=(n, p))
    s = rng.uniform(-1.0, 1.0, size=(n, 1))
    return (d + t * s) / (1.0 + t)


@dataclass
class ScenarioSpec:
    id: str
    mean: Callable[[np.ndarray], np.ndarray]
    true_W: np.ndarray | None = None  # rows as printed, one per component
    ridges: list[Callable] | None = None
    intercept: float = 0.0
    noise_sd: float = 1.0
    p: int = 10

    @property
    def directions(self) -> np.ndarray | None:
        """Unit-norm true projection directions as columns (p x m)."""
        if self.true_W is None:
            return None
        return (self.true_W / np.linalg.norm(self.true_W, axis=1, keepdims=True)).T


def _pad(rows):
    W = np.zeros((len(rows), 10))
    for i, r in enumerate(rows):
        W[i, : len(r)] = r
    return W


_S1_W = _pad([[1], [0, 1], [0, 0, 0.5, 0.5], [0, 0, 0, 0, 0.2, 0.3, 0.5]])
_S1_H = [
    lambda z: 2.0 * z,
    lambda z: 0.2 * np.exp(-4.0 * z),
    lambda z: 3.0 * z**2,
    lambda z: 2.5 * np.sin(np.pi * z),
]
_S2_W = _pad([[0.1, 0.9], [0, 0.1, 0.9], [0, 0, 0.1, 0.9]])
_S2_H = [
    lambda z: 0.5 * z,
    lambda z: 4.0 * np.sin(np.pi * z) / (2.0 - np.sin(np.pi * z)),
    lambda z: -4.0 * np.exp(-z**2),
]


def _additive(W, hs, intercept=0.0):
    def mean(X):
        Z = X @ W.T
        return intercept + sum(h(Z[:, j]) for j, h in enumerate(hs))

    return mean


def _s3(X):
    x1, x2, x3, x4 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    return np.exp(2.0 * np.tanh(x1 * x2 + 2.0 * x3 * x4))


def _s4(X):
    return 3.0 * np.pi ** (X[:, 0] * X[:, 1]) * np.sqrt(2.0 * (X[:, 2] + 1.0))


def _s5(X):
    x1, x2, x3, x4, x5, x6 = (X[:, j] for j in range(6))
    return x1 - x2 + 2.0 * (x3 + x4 + x5 + x6) / (0.5 + (1.5 + x3 + x5 - x4 - x6) ** 2)


def _s6(X):
    x1, x2, x3, x4 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    return np.sin(0.5 * np.pi * (-x1 + 2.0 * x3 + x4)) * np.exp(0.5 * (x2 + x3 - x4))


SCENARIOS: dict[str, ScenarioSpec] = {
    "S1": ScenarioSpec("S1", _additive(_S1_W, _S1_H), _S1_W, _S1_H),
    "S2": ScenarioSpec("S2", _additive(_S2_W, _S2_H, 3.0), _S2_W, _S2_H, intercept=3.0),
    "S3": ScenarioSpec("S3", _s3),
    "S4": ScenarioSpec("S4", _s4),
    "S5": ScenarioSpec("S5", _s5),
    "S6": ScenarioSpec("S6", _s6),
}


def get_scenario(sid: str) -> ScenarioSpec:
    try:
        return SCENARIOS[sid.upper()]
    except KeyError:
        raise ConfigError(
            f"unknown scenario {sid!r}; valid ids: {', '.join(SCENARIOS)}"
        ) from None


def scenario(spec: ScenarioSpec | str, n: int, rng: np.random.Generator,
             t: float = 1.0) -> Dataset:
    """Draw n rows: correlated Unif features and y = f(x) + N(0, noise_sd^2)."""
    if isinstance(spec, str):
        spec = get_scenario(spec)
    X = gen_features(n, spec.p, t, rng)
    y = spec.mean(X) + spec.noise_sd * rng.standard_normal(n)
    return Dataset(X, y, "regression", meta={"scenario": spec.id})


def split(ds: Dataset, train_frac: float, val_frac: float,
          rng: np.random.Generator) -> Dataset:
    if train_frac <= 0 or val_frac <= 0 or train_frac + val_frac > 1 + 1e-12:
        raise ConfigError(f"bad split fractions ({train_frac}, {val_frac})")
    n_train = int(np.floor(train_frac * ds.n))
    n_val = int(np.floor(val_frac * ds.n))
    if n_train == 0 or n_val == 0:
        raise ConfigError(
            f"split of n={ds.n} with ({train_frac}, {val_frac}) leaves an empty partition"
        )
    labels = np.empty(ds.n, dtype=object)
    perm = rng.permutation(ds.n)
    labels[perm[:n_train]] = "train"
    labels[perm[n_train:n_train + n_val]] = "validation"
    labels[perm[n_train + n_val:]] = "test"
    return replace(ds, split=labels)


# CSV

def _fmt(x: float) -> str:
    return repr(float(x))


def save_csv(ds: Dataset, path, response: str = "y", include_split: bool = False) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = [*ds.feature_names, response]
        if include_split and ds.split is not None:
            header.append("split")
        w.writerow(header)
        for i in range(ds.n):
            row = [_fmt(v) for v in ds.X[i]] + [_fmt(ds.y[i])]
            if len(header) > ds.p + 1:
                row.append(ds.split[i])
            w.writerow(row)


def write_manifest(path, **fields) -> None:
    Path(path).write_text(json.dumps(fields, indent=1, sort_keys=True) + "\n")


def load_csv(path, schema: dict | None = None) -> Dataset:
    """Read a header-first, comma-separated UTF-8 file into a Dataset.

    ``schema`` keys:

    * ``response``: response column name (default ``"y"``)
    * ``task``: ``"regression"`` (default) or ``"classification"``
    * ``columns``: ``{name: "numeric" | "categorical" | "ignore" | "split"}``;
      unlisted columns are numeric
    * ``scale``: min-max scale features to [-1, 1] (default False); the
      transform is kept in ``meta["scaler"]``

    Rows with unparseable numeric cells are dropped and their line numbers
    recorded in ``meta["rejected_lines"]``.
    """
    schema = dict(schema or {})
    response = schema.get("response", "y")
    task = schema.get("task", "regression")
    roles = dict(schema.get("columns", {}))
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise ConfigError(f"{path}: no data rows")
    missing = [c for c in [response, *roles] if c not in header]
    if missing:
        raise ConfigError(f"{path}: missing column(s) {missing}")
    col = {name: i for i, name in enumerate(header)}
    for name in header:
        if name != response:
            roles.setdefault(name, "numeric")
    numeric = [c for c in header if c != response and roles[c] == "numeric"]
    categorical = [c for c in header if c != response and roles[c] == "categorical"]
    split_col = next((c for c in header if roles.get(c) == "split"), None)

    parsed, rejected = [], []
    for lineno, row in enumerate(body, start=2):
        if len(row) != len(header):
            rejected.append(lineno)
            continue
        try:
            nums = [float(row[col[c]]) for c in numeric]
            yv = float(row[col[response]])
        except ValueError:
            rejected.append(lineno)
            continue
        if not np.all(np.isfinite(nums)) or not np.isfinite(yv):
            rejected.append(lineno)
            continue
        parsed.append((nums, [row[col[c]] for c in categorical], yv,
                       row[col[split_col]] if split_col else None))
    if rejected:
        log.warning("%s: rejected %d unparseable row(s) at lines %s",
                    path, len(rejected), rejected[:20])
    if not parsed:
        raise ConfigError(f"{path}: no parseable rows")

    X_num = np.array([r[0] for r in parsed], dtype=float).reshape(len(parsed), len(numeric))
    names = list(numeric)
    blocks = [X_num]
    levels = {}
    for ci, c in enumerate(categorical):
        vals = [r[1][ci] for r in parsed]
        lv = sorted(set(vals))
        levels[c] = lv
        index = {v: i for i, v in enumerate(lv)}
        onehot = np.zeros((len(vals), len(lv)))
        onehot[np.arange(len(vals)), [index[v] for v in vals]] = 1.0
        blocks.append(onehot)
        names += [f"{c}={v}" for v in lv]
    X = np.hstack(blocks)
    y = np.array([r[2] for r in parsed])
    if task == "classification" and not np.isin(y, (0.0, 1.0)).all():
        raise ConfigError(f"{path}: response {response!r} is not binary 0/1")

    meta = {"rejected_lines": rejected, "categories": levels, "response": response}
    if schema.get("scale"):
        scaler = fit_minmax(X)
        X = apply_minmax(X, scaler)
        meta["scaler"] = {"min": scaler[0].tolist(), "max": scaler[1].tolist()}
    split_labels = None
    if split_col:
        split_labels = np.array([r[3] for r in parsed], dtype=object)
        bad = set(split_labels) - set(SPLITS)
        if bad:
            raise ConfigError(f"{path}: unknown split label(s) {sorted(bad)}")
    return Dataset(X, y, task, names, split_labels, meta)


def fit_minmax(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return X.min(axis=0), X.max(axis=0)


def apply_minmax(X: np.ndarray, scaler) -> np.ndarray:
    lo, hi = (np.asarray(a, dtype=float) for a in scaler)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.where(hi > lo, 2.0 * (X - lo) / span - 1.0, 0.0)
