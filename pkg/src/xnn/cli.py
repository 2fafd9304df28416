"""Command line: ``xnn <simulate|train|evaluate|explain|benchmark|fdcheck>``.

Every command accepts ``--config PATH`` (a JSON object); flags given on the
command line take precedence over config keys.  Data goes to files under
``--out``; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as xdata
from .config import Hyperparams
from .diff import fd_suite
from .errors import XnnError
from .model import load_model, save_model
from .report import explain, write_plots
from .train import evaluate, fit_pipeline, grid_search

log = logging.getLogger("xnn")

FD_TOLERANCE = 1e-5

# flag dest -> Hyperparams field
HP_FLAGS = {
    "k": "k", "lambda1": "lambda1", "lambda2": "lambda2", "lambda3": "lambda3",
    "tau": "tau", "eta": "eta", "batch_size": "batch_size", "epochs": "max_epochs",
    "patience": "patience", "prune": "prune_threshold", "finetune_epochs": "finetune_epochs",
    "hidden": "hidden", "activation": "activation", "gam_mode": "gam_mode",
    "min_delta": "min_delta", "task": "task",
}


def _hidden(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config; flags override its keys")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_hp(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("hyperparameters")
    g.add_argument("--k", type=int)
    g.add_argument("--lambda1", type=float)
    g.add_argument("--lambda2", type=float)
    g.add_argument("--lambda3", type=float)
    g.add_argument("--tau", type=float)
    g.add_argument("--eta", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--min-delta", type=float)
    g.add_argument("--prune", type=float, choices=(0.95, 0.99))
    g.add_argument("--finetune-epochs", type=int)
    g.add_argument("--hidden", type=_hidden, help="hidden widths, e.g. 10,6")
    g.add_argument("--activation", choices=("tanh", "linear"))
    g.add_argument("--gam-mode", action="store_const", const=True)
    g.add_argument("--grid-search", action="store_const", const=True)
    g.add_argument("--jobs", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xnn", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a scenario dataset CSV + manifest")
    _add_common(p)
    p.add_argument("--scenario")
    p.add_argument("--n", type=int)

    p = sub.add_parser("train", help="fit -> prune -> fine-tune; write model, history, report")
    _add_common(p)
    _add_hp(p)
    p.add_argument("--data", type=Path)
    p.add_argument("--schema", type=Path, help="JSON column-role schema for the CSV")
    p.add_argument("--task", choices=("regression", "classification"))
    p.add_argument("--train-frac", type=float)
    p.add_argument("--val-frac", type=float)
    p.add_argument("--plots", action="store_const", const=True)

    p = sub.add_parser("evaluate", help="score a saved model on a CSV")
    _add_common(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--data", type=Path)
    p.add_argument("--schema", type=Path)
    p.add_argument("--task", choices=("regression", "classification"))

    p = sub.add_parser("explain", help="interpretability report (and SVG plots)")
    _add_common(p)
    p.add_argument("--model", type=Path)
    p.add_argument("--data", type=Path, help="training data, for projection ranges")
    p.add_argument("--schema", type=Path)
    p.add_argument("--plots", action="store_const", const=True)

    p = sub.add_parser("benchmark", help="repeated scenario runs; mean/sd test MSE table")
    _add_common(p)
    _add_hp(p)
    p.add_argument("--scenario", help="comma-separated ids, e.g. S1,S2")
    p.add_argument("--sizes", type=_ints, help="comma-separated sample sizes")
    p.add_argument("--n", type=int, help="single sample size (alias of --sizes)")
    p.add_argument("--reps", type=int)

    p = sub.add_parser("fdcheck", help="finite-difference gradient check suite")
    _add_common(p)
    p.add_argument("--eps", type=float)
    p.add_argument("--configs", type=int)
    p.add_argument("--corrupt", action="store_const", const=True,
                   help="debug: perturb the analytic gradient (must fail)")
    return ap


DEFAULTS = {
    "simulate": {"scenario": None, "n": None, "seed": 0, "out": "."},
    "train": {"data": None, "schema": None, "task": None, "train_frac": 0.8, "val_frac": 0.2,
              "plots": False, "grid_search": False, "jobs": 1, "seed": 0, "out": "."},
    "evaluate": {"model": None, "data": None, "schema": None, "task": None, "seed": 0,
                 "out": "."},
    "explain": {"model": None, "data": None, "schema": None, "plots": False, "seed": 0,
                "out": "."},
    "benchmark": {"scenario": "S1", "sizes": [10000], "n": None, "reps": 10, "jobs": 1,
                  "grid_search": False, "seed": 0, "out": "."},
    "fdcheck": {"eps": 1e-5, "configs": 20, "corrupt": False, "seed": 0, "out": None},
}


def resolve_config(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < explicit flags; reject unknown keys."""
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    allowed = set(cfg)
    if cmd in ("train", "benchmark"):
        allowed |= set(HP_FLAGS) | {f.name for f in dataclasses.fields(Hyperparams)}
    if args.config:
        loaded = json.loads(Path(args.config).read_text())
        if not isinstance(loaded, dict):
            raise XnnError("config file must hold a JSON object")
        unknown = set(loaded) - allowed
        if unknown:
            raise XnnError(f"unknown config key(s) for {cmd}: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose") or value is None:
            continue
        cfg[key] = value
    return cfg


def hyperparams_from(cfg: dict) -> Hyperparams:
    fields = {f.name for f in dataclasses.fields(Hyperparams)}
    kw = {name: cfg[name] for name in fields if name in cfg and cfg[name] is not None}
    for flag, name in HP_FLAGS.items():
        if cfg.get(flag) is not None:
            kw[name] = cfg[flag]
    if "hidden" in kw and isinstance(kw["hidden"], str):
        kw["hidden"] = _hidden(kw["hidden"])
    kw["seed"] = int(cfg.get("seed") or 0)
    return Hyperparams(**kw).validate()


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schema(cfg) -> dict:
    schema = json.loads(Path(cfg["schema"]).read_text()) if cfg.get("schema") else {}
    if cfg.get("task"):
        schema["task"] = cfg["task"]
    return schema


def _require(cfg, *names):
    missing = [n for n in names if cfg.get(n) in (None, "")]
    if missing:
        raise XnnError(f"missing required option(s): {', '.join('--' + m for m in missing)}")


# commands

def cmd_simulate(cfg: dict) -> int:
    _require(cfg, "scenario", "n")
    spec = xdata.get_scenario(cfg["scenario"])
    seed, n = int(cfg["seed"]), int(cfg["n"])
    sidx = list(xdata.SCENARIOS).index(spec.id) + 1
    ds = xdata.scenario(spec, n, xdata.stream(seed, sidx, n, 0, xdata.ROLES["train"]))
    out = _out_dir(cfg)
    stem = f"{spec.id}_n{n}_seed{seed}"
    xdata.save_csv(ds, out / f"{stem}.csv")
    xdata.write_manifest(
        out / f"{stem}.json", scenario=spec.id, n=n, seed=seed, t=1.0,
        noise_sd=spec.noise_sd, split_fractions=[0.8, 0.2],
        rng="PCG64 via SeedSequence(seed, spawn_key=(scenario, n, 0, 0))",
        csv=f"{stem}.csv",
    )
    log.info("wrote %s", out / f"{stem}.csv")
    return 0


def _load_split(cfg) -> xdata.Dataset:
    ds = xdata.load_csv(cfg["data"], _schema(cfg))
    if ds.split is None:
        seed = int(cfg["seed"])
        ds = xdata.split(ds, float(cfg["train_frac"]), float(cfg["val_frac"]),
                         xdata.stream(seed, 0, 0, 0, xdata.ROLES["split"]))
    return ds


def cmd_train(cfg: dict) -> int:
    _require(cfg, "data")
    ds = _load_split(cfg)
    hp = hyperparams_from(cfg)
    if ds.task != hp.task:
        hp = dataclasses.replace(hp, task=ds.task)
    out = _out_dir(cfg)
    if cfg.get("grid_search"):
        result, table = grid_search(ds, hp, jobs=int(cfg.get("jobs") or 1))
        with open(out / "grid.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(table[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(table)
    else:
        result = fit_pipeline(ds, hp, np.random.default_rng(hp.seed))
    train = ds.subset("train")
    save_model(result.model, out / "model.json", result.hp)
    result.history.to_csv(out / "history.csv")
    report = explain(result.model, train.X, ds.feature_names)
    report.save(out / "report.json")
    if cfg.get("plots"):
        write_plots(report, out / "plots")
    metrics = evaluate(result.model, ds.subset("validation").X, ds.subset("validation").y)
    log.info("validation %s; %d active subnetworks", metrics, len(report.components))
    return 0


def cmd_evaluate(cfg: dict) -> int:
    _require(cfg, "model", "data")
    model = load_model(cfg["model"])
    schema = _schema(cfg)
    schema.setdefault("task", "classification" if model.link == "logit" else "regression")
    ds = xdata.load_csv(cfg["data"], schema)
    if ds.split is not None and (ds.split == "test").any():
        ds = ds.subset("test")
    metrics = evaluate(model, ds.X, ds.y, ds.task)
    (_out_dir(cfg) / "metrics.json").write_text(json.dumps(metrics, indent=1) + "\n")
    log.info("%s", metrics)
    return 0


def cmd_explain(cfg: dict) -> int:
    _require(cfg, "model", "data")
    model = load_model(cfg["model"])
    schema = _schema(cfg)
    schema.setdefault("task", "classification" if model.link == "logit" else "regression")
    ds = xdata.load_csv(cfg["data"], schema)
    if ds.split is not None and (ds.split == "train").any():
        ds = ds.subset("train")
    report = explain(model, ds.X, ds.feature_names)
    out = _out_dir(cfg)
    report.save(out / "report.json")
    if cfg.get("plots"):
        write_plots(report, out / "plots")
    return 0


def _bench_cell(args):
    from .experiments import run_cell

    sid, n, rep, hp, seed, grid = args
    try:
        row = run_cell(sid, n, rep, hp, seed=seed, grid=grid)
        row.pop("cosines", None)
        row["error"] = ""
    except Exception as exc:  # recorded per cell; the run continues
        log.error("%s n=%d rep=%d failed: %s", sid, n, rep, exc)
        row = {"scenario": sid, "n": n, "rep": rep, "test_mse": float("nan"), "error": repr(exc)}
    return row


def cmd_benchmark(cfg: dict) -> int:
    hp = hyperparams_from(cfg)
    sids = [xdata.get_scenario(s).id for s in str(cfg["scenario"]).split(",") if s]
    sizes = [int(cfg["n"])] if cfg.get("n") else [int(s) for s in cfg["sizes"]]
    reps, seed = int(cfg["reps"]), int(cfg["seed"])
    jobs = int(cfg.get("jobs") or 1)
    tasks = [(s, n, r, hp, seed, bool(cfg.get("grid_search")))
             for s in sids for n in sizes for r in range(reps)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_bench_cell, tasks))
    else:
        rows = [_bench_cell(t) for t in tasks]
    out = _out_dir(cfg)
    fields = ["scenario", "n", "rep", "test_mse", "val_score", "n_active", "epochs",
              "best_epoch", "max_ortho_residual", "min_cosine", "lambda1", "lambda2",
              "seconds", "error"]
    with open(out / "benchmark_runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    with open(out / "benchmark.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "n", "reps", "failures", "mean_mse", "std_mse"])
        for s in sids:
            for n in sizes:
                vals = np.array([r["test_mse"] for r in rows if r["scenario"] == s and r["n"] == n])
                ok = vals[np.isfinite(vals)]
                mean = repr(float(ok.mean())) if ok.size else "nan"
                std = repr(float(ok.std(ddof=1))) if ok.size > 1 else "nan"
                w.writerow([s, n, len(vals), int(len(vals) - ok.size), mean, std])
    log.info("wrote %s", out / "benchmark.csv")
    return 0


def cmd_fdcheck(cfg: dict) -> int:
    rows = fd_suite(int(cfg["configs"]), float(cfg["eps"]), int(cfg["seed"]),
                    bool(cfg.get("corrupt")))
    worst = max(r["max_rel_err"] for r in rows)
    if cfg.get("out"):
        (_out_dir(cfg) / "fdcheck.json").write_text(json.dumps(rows, indent=1) + "\n")
    print(f"max relative error over {len(rows)} configurations: {worst:.3e}")
    return 0 if worst <= FD_TOLERANCE else 1


COMMANDS = {
    "simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
    "explain": cmd_explain, "benchmark": cmd_benchmark, "fdcheck": cmd_fdcheck,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](resolve_config(args))
    except (XnnError, OSError, json.JSONDecodeError) as exc:
        print(f"xnn {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
