"""Simulation-study cells: one (scenario, n, repetition) run of the full
pipeline, plus structure-recovery scoring against the known directions."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from pathlib import Path

import numpy as np

from .config import Hyperparams
from .data import ROLES, SCENARIOS, get_scenario, scenario, split, stream
from .model import ridge_outputs
from .train import evaluate, fit_pipeline, grid_search

log = logging.getLogger(__name__)

TEST_SIZE = 10_000


def cell_streams(seed: int, sid: str, n: int, rep: int) -> dict[str, np.random.Generator]:
    """One PCG64 stream per role, keyed by (scenario, n, repetition, role)."""
    sidx = list(SCENARIOS).index(get_scenario(sid).id) + 1
    return {role: stream(seed, sidx, n, rep, code) for role, code in ROLES.items()}


def match_directions(true_dirs: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Greedy one-to-one matching by |cosine|.

    ``true_dirs`` (p x m) and ``W`` (p x r) hold directions as columns.
    Returns, for each true direction, the |cosine| of its matched column
    (0 where nothing is left to match).
    """
    A = true_dirs / np.linalg.norm(true_dirs, axis=0)
    B = W / np.maximum(np.linalg.norm(W, axis=0), 1e-300)
    C = np.abs(A.T @ B)
    out = np.zeros(A.shape[1])
    rows, cols = set(range(C.shape[0])), set(range(C.shape[1]))
    while rows and cols:
        r, c = max(((r, c) for r in rows for c in cols), key=lambda rc: C[rc])
        out[r] = C[r, c]
        rows.discard(r)
        cols.discard(c)
    return out


def run_cell(sid: str, n: int, rep: int, hp: Hyperparams, seed: int = 0,
             grid: bool = False, return_model: bool = False) -> dict:
    """Generate train/validation (80/20) plus a fresh 10000-row test set,
    fit the full pipeline and score it."""
    spec = get_scenario(sid)
    rs = cell_streams(seed, spec.id, n, rep)
    ds = split(scenario(spec, n, rs["train"]), 0.8, 0.2, rs["split"])
    test = scenario(spec, TEST_SIZE, rs["test"])
    hp = dataclasses.replace(hp, seed=seed)
    t0 = time.perf_counter()
    if grid:
        result, _ = grid_search(ds, hp)
    else:
        result = fit_pipeline(ds, hp, rs["fit"], keep_pre_prune=True)
    model = result.model
    row = {
        "scenario": spec.id,
        "n": n,
        "rep": rep,
        "test_mse": evaluate(model, test.X, test.y)["mse"],
        "val_score": result.val_score,
        "n_active": int(model.active.sum()),
        "epochs": len(result.history),
        "best_epoch": result.history.best_epoch,
        "max_ortho_residual": max(result.history.max_ortho_residual,
                                  result.finetune_history.max_ortho_residual),
        "lambda1": result.hp.lambda1,
        "lambda2": result.hp.lambda2,
        "seconds": time.perf_counter() - t0,
    }
    # normalization contract on the training rows, retained subnetworks only
    H = ridge_outputs(model, ds.subset("train").X)[:, model.active]
    row["norm_max_abs_mean"] = float(np.abs(H.mean(axis=0)).max(initial=0.0))
    row["norm_max_std_dev"] = float(np.abs(H.std(axis=0) - 1.0).max(initial=0.0))
    if spec.directions is not None:
        cos = match_directions(spec.directions, model.W[:, model.active])
        row["min_cosine"] = float(cos.min())
        row["cosines"] = cos.tolist()
    if return_model:
        row["model"] = model
        row["train"] = ds.subset("train")
    log.info("%s n=%d rep=%d: test MSE %.4f, %d active, %.1fs", spec.id, n, rep,
             row["test_mse"], row["n_active"], row["seconds"])
    return row


def source_digest() -> str:
    """Hash of the package sources; cached results go stale when it changes."""
    h = hashlib.sha256()
    for f in sorted(Path(__file__).parent.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:16]


def cached_cell(cache_dir, sid: str, n: int, rep: int, hp: Hyperparams,
                seed: int = 0) -> dict:
    """:func:`run_cell` with results stored as JSON under ``cache_dir``.

    The key covers the cell, the hyperparameters and :func:`source_digest`,
    so a code or config change forces a fresh fit.
    """
    key = json.dumps([sid, n, rep, seed, hp.to_dict(), source_digest()], sort_keys=True)
    path = Path(cache_dir) / f"{sid}_n{n}_r{rep}_{hashlib.sha256(key.encode()).hexdigest()[:12]}.json"
    if path.exists():
        return json.loads(path.read_text())
    row = run_cell(sid, n, rep, hp, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(row, indent=1))
    return row
