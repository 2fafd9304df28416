"""SOS-BP training: mini-batch Adam on everything except W, Cayley steps on W,
momentum-zero batch normalization, early stopping on a validation split,
then subnetwork pruning and a fine-tuning pass with the projection frozen.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.stats import rankdata

from .config import Hyperparams
from .data import Dataset
from .diff import loss_terms_and_grads
from .errors import ConfigError, NumericError, ShapeError
from .model import (
    XnnModel, canonicalize_signs, forward, importance_ratios, init_model,
    linear_predictor, ortho_residual, raw_outputs,
)
from .optim import AdamState, adam_step, cayley_step, reorthonormalize

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "train_loss", "val_score", "ortho_residual", "seconds")


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_score: list[float] = field(default_factory=list)
    ortho_residual: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def __len__(self) -> int:
        return len(self.epoch)

    def append(self, **row) -> None:
        for name in HISTORY_FIELDS:
            getattr(self, name).append(row[name])

    @property
    def max_ortho_residual(self) -> float:
        return max(self.ortho_residual, default=0.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_FIELDS)
            for row in zip(*(getattr(self, f) for f in HISTORY_FIELDS)):
                w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


def _train_val(ds: Dataset) -> tuple[Dataset, Dataset]:
    if ds.split is None:
        raise ConfigError("dataset needs train/validation split labels")
    tr, va = ds.subset("train"), ds.subset("validation")
    if tr.n == 0 or va.n == 0:
        raise ConfigError(f"empty split: {tr.n} training and {va.n} validation rows")
    return tr, va


def finalize_norm(model: XnnModel, X_train) -> XnnModel:
    """Copy of ``model`` whose NormStates hold full training-set moments."""
    out = model.copy()
    h = raw_outputs(out, X_train)
    out.norm_mean = h.mean(axis=0)
    out.norm_std = np.maximum(h.std(axis=0), out.norm_eps)
    return out


def data_loss(model: XnnModel, X, y) -> float:
    """Unpenalized fit loss: MSE (identity link) or mean cross-entropy (logit)."""
    eta = linear_predictor(model, X)
    y = np.asarray(y, dtype=float)
    if model.link == "identity":
        return float(np.mean((eta - y) ** 2))
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta))


def _params(model: XnnModel, with_W: bool) -> list[np.ndarray]:
    ps = [np.array(model.mu), model.beta, *model.weights, *model.biases]
    return [model.W, *ps] if with_W else ps


def _grads(grads, with_W: bool) -> list[np.ndarray]:
    gs = [np.array(grads.g_mu), grads.g_beta, *grads.g_weights, *grads.g_biases]
    return [grads.g_W, *gs] if with_W else gs


def _set_params(model: XnnModel, params, with_W: bool) -> None:
    params = list(params)
    if with_W:
        model.W = params.pop(0)
    n = len(model.weights)
    model.mu = float(params[0])
    model.beta = params[1]
    model.weights = params[2:2 + n]
    model.biases = params[2 + n:2 + 2 * n]


def _run_epochs(model: XnnModel, train: Dataset, val: Dataset, hp: Hyperparams,
                rng: np.random.Generator, epochs: int, update_W: bool,
                history: TrainHistory) -> XnnModel:
    """Shared mini-batch loop; returns the best-validation model (finalized)."""
    n = train.n
    nb = min(hp.batch_size, n)
    n_batches = n // nb
    adam_W = update_W and not hp.orthogonal
    cayley = update_W and hp.orthogonal
    adam = AdamState()
    steps = 0

    best = finalize_norm(model, train.X)
    best_score = data_loss(best, val.X, val.y)
    best_epoch = 0
    wait = 0
    t0 = time.perf_counter()
    for epoch in range(1, epochs + 1):
        perm = rng.permutation(n)
        losses = []
        resid = 0.0
        for b in range(n_batches):
            idx = perm[b * nb:(b + 1) * nb]
            try:
                terms, grads, (mean, std) = loss_terms_and_grads(
                    model, train.X[idx], train.y[idx], hp, stat_grad=hp.stat_grad)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch}, batch {b + 1}: {exc}") from exc
            losses.append(sum(terms.values()))
            if cayley:
                model.W = cayley_step(model.W, grads.g_W, hp.tau)
                steps += 1
                if hp.reortho_every and steps % hp.reortho_every == 0:
                    model.W = reorthonormalize(model.W)
                resid = max(resid, ortho_residual(model.W))
            _set_params(model, adam_step(adam, _params(model, adam_W),
                                         _grads(grads, adam_W), hp.eta), adam_W)
            model.norm_mean, model.norm_std = mean, std
        if not update_W or not hp.orthogonal:
            resid = ortho_residual(model.W)
        current = finalize_norm(model, train.X)
        score = data_loss(current, val.X, val.y)
        if not np.isfinite(score):
            raise NumericError(f"epoch {epoch}: non-finite validation score")
        history.append(epoch=epoch, train_loss=float(np.mean(losses)) if losses else float("nan"),
                       val_score=score, ortho_residual=resid,
                       seconds=time.perf_counter() - t0)
        if score < best_score - hp.min_delta:
            best, best_score, best_epoch, wait = current, score, epoch, 0
        else:
            wait += 1
            if wait >= hp.patience:
                log.info("early stop at epoch %d (best %d, score %.5f)",
                         epoch, best_epoch, best_score)
                break
    history.best_epoch = best_epoch
    return best


def sosbp_fit(ds: Dataset, hp: Hyperparams, rng: np.random.Generator
              ) -> tuple[XnnModel, TrainHistory]:
    """Fit an xNN on the ``train`` rows, early-stopping on ``validation``."""
    train, val = _train_val(ds)
    hp = hp.resolve(train.p, train.n)
    if ds.task == "classification" and hp.task != "classification":
        hp = dataclasses.replace(hp, task="classification")
    model = init_model(train.p, hp, rng)
    model.hparams = hp.to_dict()
    history = TrainHistory()
    if hp.max_epochs == 0:
        return finalize_norm(model, train.X), history
    best = _run_epochs(model, train, val, hp, rng, hp.max_epochs,
                       update_W=not hp.gam_mode, history=history)
    best.hparams = hp.to_dict()
    return best, history


def prune(model: XnnModel, threshold: float) -> XnnModel:
    """Keep the top-IR subnetworks whose cumulative IR first reaches ``threshold``.

    The others get beta_j = 0 and are marked inactive.  A model already
    pruned at this threshold is returned unchanged.
    """
    if not 0 < threshold <= 1:
        raise ConfigError(f"prune threshold must lie in (0, 1], got {threshold}")
    ir = importance_ratios(np.where(model.active, model.beta, 0.0))
    out = model.copy()
    if model.prune_threshold == threshold:
        return out
    order = np.argsort(-ir, kind="stable")
    cum = np.cumsum(ir[order])
    n_keep = int(np.searchsorted(cum, threshold - 1e-12) + 1)
    keep = np.zeros(model.k, dtype=bool)
    keep[order[:min(n_keep, model.k)]] = True
    out.active = keep & model.active
    out.beta = np.where(out.active, out.beta, 0.0)
    out.prune_threshold = threshold
    return out


def fine_tune(model: XnnModel, ds: Dataset, hp: Hyperparams,
              rng: np.random.Generator | None = None) -> tuple[XnnModel, TrainHistory]:
    """Adam-only refit of the surviving subnetworks with W frozen and no l1."""
    train, val = _train_val(ds)
    hp = dataclasses.replace(hp.resolve(train.p, train.n), lambda1=0.0, lambda2=0.0,
                             patience=max(hp.finetune_epochs, 1))
    if rng is None:
        rng = np.random.default_rng(hp.seed)
    history = TrainHistory()
    work = model.copy()
    if hp.finetune_epochs == 0:
        return finalize_norm(work, train.X), history
    W0 = work.W.copy()
    best = _run_epochs(work, train, val, hp, rng, hp.finetune_epochs,
                       update_W=False, history=history)
    assert np.array_equal(best.W, W0)
    return best, history


def auc_score(y, scores) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic."""
    y = np.asarray(y, dtype=float)
    pos = y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(model: XnnModel, X, y, task: str | None = None) -> dict:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
    task = task or ("classification" if model.link == "logit" else "regression")
    if (task == "classification") != (model.link == "logit"):
        raise ConfigError(f"task {task!r} does not match model link {model.link!r}")
    pred = forward(model, X)
    if task == "regression":
        return {"task": task, "n": int(y.size), "mse": float(np.mean((pred - y) ** 2))}
    eta = linear_predictor(model, X)
    return {
        "task": task,
        "n": int(y.size),
        "cross_entropy": float(np.mean(np.logaddexp(0.0, eta) - y * eta)),
        "auc": auc_score(y, eta),
    }


@dataclass
class FitResult:
    model: XnnModel  # pruned, fine-tuned, finalized, sign-canonical
    history: TrainHistory
    finetune_history: TrainHistory
    hp: Hyperparams
    val_score: float
    pre_prune: XnnModel | None = None

    @property
    def importance(self) -> np.ndarray:
        return importance_ratios(self.model.beta)


def fit_pipeline(ds: Dataset, hp: Hyperparams, rng: np.random.Generator | None = None,
                 keep_pre_prune: bool = False) -> FitResult:
    """fit -> prune -> fine_tune -> finalize_norm -> sign canonicalization."""
    if rng is None:
        rng = np.random.default_rng(hp.seed)
    train, val = _train_val(ds)
    hp = hp.resolve(train.p, train.n)
    fitted, history = sosbp_fit(ds, hp, rng)
    pruned = prune(fitted, hp.prune_threshold)
    tuned, ft_history = fine_tune(pruned, ds, hp, rng)
    tuned = canonicalize_signs(finalize_norm(tuned, train.X))
    tuned.hparams = hp.to_dict()
    return FitResult(tuned, history, ft_history, hp, data_loss(tuned, val.X, val.y),
                     fitted if keep_pre_prune else None)


DEFAULT_GRID = (1e-4, 1e-3, 1e-2)


def _grid_cell(args):
    ds, hp, seed = args
    return fit_pipeline(ds, hp, np.random.default_rng(seed))


def grid_search(ds: Dataset, hp: Hyperparams, lambda1s=DEFAULT_GRID, lambda2s=DEFAULT_GRID,
                jobs: int = 1) -> tuple[FitResult, list[dict]]:
    """Tune (lambda1, lambda2) by validation score; returns the best fit and a table."""
    cells = [dataclasses.replace(hp, lambda1=a, lambda2=b) for a, b in product(lambda1s, lambda2s)]
    args = [(ds, c, hp.seed) for c in cells]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_grid_cell, args))
    else:
        results = [_grid_cell(a) for a in args]
    table = [
        {"lambda1": r.hp.lambda1, "lambda2": r.hp.lambda2, "val_score": r.val_score,
         "n_active": int(r.model.active.sum())}
        for r in results
    ]
    best = min(results, key=lambda r: r.val_score)
    return best, table
