"""Command-line experiment runner.

Subcommands::

    fbalf train   single holdout run
    fbalf cv      grid search x k-fold cross-validation x variants
    fbalf synth   write a planted synthetic rating file
    fbalf stats   loss/win, Wilcoxon and Friedman over finished summaries

Settings come from an INI file (``--config``) with ``[data]``, ``[split]``,
``[model]`` and ``[experiment]`` sections; every key can be overridden on
the command line.  Exit status is 0 on success, 1 for configuration errors
and 2 when every run diverged.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .client import DivergenceError
from .data import ParseError, filter_min_degree, make_kfold, mark_cold, parse_ratings, split_holdout
from .model import PARALLEL_ROUND, SEQUENTIAL, HyperParams
from .server import UploadRejected, dump_server
from .stats import friedman_ranks, loss_win, wilcoxon_signed_rank
from .synthetic import generate_synthetic
from .training import run_training

log = logging.getLogger("fbalf")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2

VARIANTS = {
    "fbalf": {"bias_enabled": True, "filling_enabled": True},
    "no-bias": {"bias_enabled": False, "filling_enabled": True},
    "no-filling": {"bias_enabled": True, "filling_enabled": False},
    "plain": {"bias_enabled": False, "filling_enabled": False},
}
SEPARATOR_NAMES = {"tab": "\t", "\\t": "\t", "comma": ",", "colons": "::"}
SELECTION_NOTE = (
    "best grid point per variant = lowest mean test RMSE over folds; "
    "no separate validation split is used"
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str = ""
    sep: str = "::"
    header: bool = False
    columns: tuple[str, ...] = ("user", "item", "rating")
    r_min: float | None = None
    r_max: float | None = None
    min_ratings: int = 0
    folds: int = 5
    train_fraction: float = 0.8
    split_seed: int = 0
    factors: int = 20
    eta: tuple[float, ...] = (0.002,)
    lam: tuple[float, ...] = (0.06,)
    rho: tuple[int, ...] = (1,)
    rounds: int = 300
    t_hf: int = 10
    t_local: int = 10
    mode: str = SEQUENTIAL
    bias: bool = True
    clamp: bool = True
    patience: int | None = None
    seed: int = 0
    variants: tuple[str, ...] = ("fbalf",)
    out: str = "runs"
    jobs: int = 1

    def validate(self) -> "ExperimentConfig":
        if not self.dataset:
            raise ConfigError("no dataset given")
        if not Path(self.dataset).is_file():
            raise ConfigError(f"dataset not readable: {self.dataset}")
        if self.sep not in ("::", "\t", ","):
            raise ConfigError(f"unsupported separator {self.sep!r}")
        if not (self.eta and self.lam and self.rho):
            raise ConfigError("hyperparameter grids must be non-empty")
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown or not self.variants:
            raise ConfigError(f"unknown variants {unknown}; choose from {sorted(VARIANTS)}")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("train_fraction must be in (0, 1)")
        if self.mode not in (SEQUENTIAL, PARALLEL_ROUND):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        try:
            for eta, lam, rho in self.grid():
                self.hyperparams(eta, lam, rho)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def grid(self):
        return list(itertools.product(self.eta, self.lam, self.rho))

    def hyperparams(self, eta: float, lam: float, rho: int, variant: str | None = None) -> HyperParams:
        hp = HyperParams(
            factors=self.factors, eta=eta, lam=lam, rho=rho, rounds=self.rounds,
            t_hf=self.t_hf, t_local=self.t_local, seed=self.seed, bias_enabled=self.bias,
            schedule=self.mode, clamp_predictions=self.clamp, patience=self.patience,
        )
        if variant is not None:
            hp = replace(hp, **VARIANTS[variant])
            if not hp.filling_enabled:
                hp = replace(hp, rho=0)
        return hp

    def to_ini(self) -> str:
        def fmt(v):
            if isinstance(v, tuple):
                return ",".join(fmt(x) for x in v)
            if isinstance(v, bool):
                return "true" if v else "false"
            if v is None:
                return ""
            if v == "\t":
                return "tab"
            return str(v)

        sections = {
            "data": ["dataset", "sep", "header", "columns", "r_min", "r_max", "min_ratings"],
            "split": ["folds", "train_fraction", "split_seed"],
            "model": ["factors", "eta", "lam", "rho", "rounds", "t_hf", "t_local",
                      "mode", "bias", "clamp", "patience", "seed"],
            "experiment": ["variants", "out", "jobs"],
        }
        lines = []
        for name, keys in sections.items():
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {fmt(getattr(self, k))}" for k in keys)
            lines.append("")
        return "\n".join(lines)

    def echo(self) -> dict:
        d = asdict(self)
        # where and how fast it ran does not change any result
        d.pop("jobs")
        d.pop("out")
        d["dataset"] = str(Path(self.dataset).name)
        return d


def _floats(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _sep(text):
    return SEPARATOR_NAMES.get(text, text)


def _opt_int(text):
    return int(text) if str(text).strip() else None


def _opt_float(text):
    return float(text) if str(text).strip() else None


# key -> (section, parser)
CONFIG_KEYS = {
    "dataset": ("data", str), "path": ("data", str), "sep": ("data", _sep),
    "header": ("data", _bool), "columns": ("data", lambda s: tuple(x.strip() for x in s.split(","))),
    "r_min": ("data", _opt_float), "r_max": ("data", _opt_float),
    "min_ratings": ("data", int),
    "folds": ("split", int), "train_fraction": ("split", float), "split_seed": ("split", int),
    "factors": ("model", int), "eta": ("model", _floats), "lam": ("model", _floats),
    "lambda": ("model", _floats), "rho": ("model", _ints), "rounds": ("model", int),
    "t_hf": ("model", int), "t_local": ("model", int), "mode": ("model", str),
    "bias": ("model", _bool), "clamp": ("model", _bool), "patience": ("model", _opt_int),
    "seed": ("model", int),
    "variants": ("experiment", lambda s: tuple(x.strip() for x in s.split(",") if x.strip())),
    "out": ("experiment", str), "jobs": ("experiment", int),
}
ALIASES = {"path": "dataset", "lambda": "lam"}


def load_config(path) -> ExperimentConfig:
    """Read an INI experiment file; relative dataset paths resolve against it."""
    parser = configparser.ConfigParser(interpolation=None)
    path = Path(path)
    if not parser.read(path):
        raise ConfigError(f"cannot read config {path}")
    cfg = ExperimentConfig()
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown key [{section}] {key}")
            try:
                value = CONFIG_KEYS[key][1](raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from None
            setattr(cfg, ALIASES.get(key, key), value)
    if cfg.dataset and not Path(cfg.dataset).is_absolute():
        cfg.dataset = str(path.parent / cfg.dataset)
    return cfg


def smoke_config_path() -> Path:
    return Path(str(resources.files("fbalf") / "data" / "smoke.ini"))


# --------------------------------------------------------------------------
# running


def load_dataset(cfg: ExperimentConfig):
    try:
        ds = parse_ratings(cfg.dataset, sep=cfg.sep, columns=cfg.columns, header=cfg.header,
                           r_min=cfg.r_min, r_max=cfg.r_max)
    except (ParseError, ValueError) as exc:
        raise ConfigError(f"{cfg.dataset}: {exc}") from None
    if ds.report.duplicates:
        log.warning("%d duplicate (user, item) rows dropped", ds.report.duplicates)
    if cfg.min_ratings:
        ds = filter_min_degree(ds, cfg.min_ratings)
    if len(ds) == 0:
        raise ConfigError("dataset is empty after filtering")
    return ds


def _tag(variant, eta, lam, rho, fold):
    return f"{variant}_eta{eta:g}_lam{lam:g}_rho{rho}_fold{fold}"


def write_rounds(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "objective", "mae", "rmse", "seconds"])
        for r in records:
            w.writerow([r.round, f"{r.objective:.6f}", f"{r.mae:.4f}", f"{r.rmse:.4f}", f"{r.seconds:.3f}"])


def _execute(job):
    """Worker body: one (variant, grid point, fold) run.  Returns its result row."""
    train, test, hp, out_path, meta, checkpoint = job
    row = dict(meta)
    try:
        # overflow is caught by the divergence check, so keep stderr quiet
        with np.errstate(over="ignore", invalid="ignore"):
            report = run_training(train, test, hp)
    except (DivergenceError, UploadRejected, FloatingPointError) as exc:
        row.update(status="diverged", error=str(exc), mae=None, rmse=None)
        return row
    write_rounds(out_path, report.records)
    if checkpoint:
        dump_server(report.server, checkpoint)
    row.update(status="ok", mae=report.final.mae, rmse=report.final.rmse,
               rounds_run=len(report.records),
               uploaded_keys=int(report.surface_sizes().sum()))
    return row


def _run_jobs(jobs, n_workers):
    if n_workers == 1:
        return [_execute(j) for j in jobs]
    with ProcessPoolExecutor(n_workers) as pool:
        return list(pool.map(_execute, jobs))


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def compare(reference: str, cells: dict[str, list[float]]) -> dict:
    """Pairwise and joint statistics of aligned metric cells per model."""
    names = list(cells)
    out = {"reference": reference, "against": {}, "friedman": {}}
    if reference not in cells or len(names) < 2:
        return out
    ours = cells[reference]
    for name in names:
        if name == reference:
            continue
        lw = loss_win(ours, cells[name])
        p = wilcoxon_signed_rank(list(zip(ours, cells[name])))
        out["against"][name] = {"loss": lw.losses, "win": lw.wins, "tie": lw.ties,
                                "p_value": None if math.isnan(p) else p}
    ranks = friedman_ranks(np.array([cells[n] for n in names]))
    out["friedman"] = {n: float(r) for n, r in zip(names, ranks)}
    return out


def summarize(cfg: ExperimentConfig, rows: list[dict]) -> dict:
    variants = {}
    cells = {}
    for variant in cfg.variants:
        mine = [r for r in rows if r["variant"] == variant]
        points = sorted({(r["eta"], r["lam"], r["rho"]) for r in mine})
        grid = []
        for point in points:
            runs = sorted((r for r in mine if (r["eta"], r["lam"], r["rho"]) == point),
                          key=lambda r: r["fold"])
            ok = [r for r in runs if r["status"] == "ok"]
            entry = {"eta": point[0], "lam": point[1], "rho": point[2],
                     "folds": [{"fold": r["fold"], "mae": r["mae"], "rmse": r["rmse"],
                                "status": r["status"]} for r in runs]}
            if ok and len(ok) == len(runs):
                mae = np.array([r["mae"] for r in ok])
                rmse = np.array([r["rmse"] for r in ok])
                entry.update(mae_mean=float(mae.mean()), mae_std=float(mae.std()),
                             rmse_mean=float(rmse.mean()), rmse_std=float(rmse.std()))
            grid.append(entry)
        scored = [g for g in grid if "rmse_mean" in g]
        best = min(scored, key=lambda g: g["rmse_mean"]) if scored else None
        variants[variant] = {"grid": grid, "best": best}
        if best is not None:
            cells[variant] = [f[m] for f in best["folds"] for m in ("mae", "rmse")]
    return {
        "config": cfg.echo(),
        "selection": SELECTION_NOTE,
        "variants": variants,
        "comparison": compare(cfg.variants[0], cells),
        "cells": "per fold: MAE, RMSE of each variant's best grid point",
    }


def write_summary(path, summary) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_experiment(cfg: ExperimentConfig, holdout: bool = False, checkpoint: str | None = None) -> int:
    """Run every (fold, grid point, variant) and write CSVs plus ``summary.json``."""
    cfg.validate()
    ds = load_dataset(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.ini").write_text(cfg.to_ini())

    if holdout:
        train, test = split_holdout(ds, cfg.train_fraction, cfg.split_seed)
        splits = [(0, train, test)]
    else:
        if cfg.folds > len(ds):
            raise ConfigError(f"{cfg.folds} folds but only {len(ds)} ratings")
        plan = make_kfold(ds, cfg.folds, cfg.split_seed)
        splits = [(k, *plan.datasets(ds, k)) for k in range(cfg.folds)]

    jobs = []
    for variant in cfg.variants:
        points = sorted({(e, l, cfg.hyperparams(e, l, r, variant).rho) for e, l, r in cfg.grid()})
        for eta, lam, rho in points:
            hp = cfg.hyperparams(eta, lam, rho, variant)
            for fold, train, test in splits:
                tag = "train" if holdout and len(cfg.variants) == 1 and len(points) == 1 \
                    else _tag(variant, eta, lam, rho, fold)
                meta = {"variant": variant, "eta": eta, "lam": lam, "rho": rho, "fold": fold, "tag": tag}
                jobs.append((train, mark_cold(train, test), hp, out / f"rounds_{tag}.csv", meta, None))
    if checkpoint:
        if len(jobs) != 1:
            raise ConfigError("--checkpoint needs exactly one run")
        jobs[0] = (*jobs[0][:5], checkpoint)

    log.info("%d runs", len(jobs))
    rows = _run_jobs(jobs, cfg.jobs)
    for r in rows:
        if r["status"] != "ok":
            log.error("run %s diverged: %s", r["tag"], r["error"])
    summary = summarize(cfg, rows)
    summary["runs"] = rows
    write_summary(out / "summary.json", summary)
    if all(r["status"] != "ok" for r in rows):
        return EXIT_DIVERGED
    return EXIT_OK


def table_from_summaries(paths) -> tuple[list[str], list[str], np.ndarray]:
    """Models x cases table: each summary contributes mean MAE and mean RMSE cases."""
    models: list[str] | None = None
    cases, columns = [], []
    for p in paths:
        summary = json.loads(Path(p).read_text())
        best = {v: d["best"] for v, d in summary["variants"].items() if d.get("best")}
        names = list(best)
        if models is None:
            models = names
        elif set(names) != set(models):
            raise ConfigError(f"{p}: variants {names} differ from {models}")
        for metric in ("mae", "rmse"):
            cases.append(f"{Path(p).parent.name}:{metric}")
            columns.append([best[m][f"{metric}_mean"] for m in models])
    return models or [], cases, np.array(columns).T


def table_from_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    """CSV with a header row ``case,<model>,<model>...`` and one row per case."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    models = [m.strip() for m in rows[0][1:]]
    cases = [r[0] for r in rows[1:] if r]
    values = np.array([[float(x) for x in r[1:]] for r in rows[1:] if r]).T
    return models, cases, values


def run_stats(paths, reference: str | None) -> dict:
    if len(paths) == 1 and str(paths[0]).endswith(".csv"):
        models, cases, table = table_from_csv(paths[0])
    else:
        models, cases, table = table_from_summaries(paths)
    if not models:
        raise ConfigError("no models found")
    reference = reference or models[0]
    if reference not in models:
        raise ConfigError(f"reference {reference!r} not among {models}")
    result = compare(reference, {m: list(map(float, table[k])) for k, m in enumerate(models)})
    result["cases"] = cases
    return _clean(result)


# --------------------------------------------------------------------------
# argument parsing


def _add_run_options(p):
    p.add_argument("--config", help="INI experiment file")
    p.add_argument("--smoke", action="store_true", help="use the bundled 50x40 smoke config")
    p.add_argument("--dataset")
    p.add_argument("--sep", type=_sep)
    p.add_argument("--header", action="store_const", const=True, default=None)
    p.add_argument("--min-ratings", dest="min_ratings", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--train-fraction", dest="train_fraction", type=float)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--factors", type=int)
    p.add_argument("--eta", type=_floats)
    p.add_argument("--lambda", dest="lam", type=_floats)
    p.add_argument("--rho", type=_ints)
    p.add_argument("--rounds", type=int)
    p.add_argument("--t-hf", dest="t_hf", type=int)
    p.add_argument("--t-local", dest="t_local", type=int)
    p.add_argument("--mode", choices=[SEQUENTIAL, PARALLEL_ROUND])
    p.add_argument("--no-bias", dest="bias", action="store_const", const=False, default=None)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variants", type=lambda s: tuple(x for x in s.split(",") if x))
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)


OVERRIDABLE = ["dataset", "sep", "header", "min_ratings", "folds", "train_fraction", "split_seed",
               "factors", "eta", "lam", "rho", "rounds", "t_hf", "t_local", "mode", "bias",
               "patience", "seed", "variants", "out", "jobs"]


def resolve_config(args) -> ExperimentConfig:
    if args.smoke:
        cfg = load_config(smoke_config_path())
    elif args.config:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig()
    for key in OVERRIDABLE:
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if args.bias is False and cfg.variants == ("fbalf",):
        cfg.variants = ("no-bias",)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbalf", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="single holdout run")
    _add_run_options(train)
    train.add_argument("--checkpoint", help="write the final server state here")

    cv = sub.add_parser("cv", help="grid x folds x variants")
    _add_run_options(cv)

    synth = sub.add_parser("synth", help="write a synthetic rating CSV")
    synth.add_argument("out_path")
    synth.add_argument("--users", type=int, default=50)
    synth.add_argument("--items", type=int, default=40)
    synth.add_argument("--rank", type=int, default=3)
    synth.add_argument("--user-bias-spread", type=float, default=0.5)
    synth.add_argument("--item-bias-spread", type=float, default=0.5)
    synth.add_argument("--noise-sigma", type=float, default=0.1)
    synth.add_argument("--density", type=float, default=0.3)
    synth.add_argument("--seed", type=int, default=0)

    stats = sub.add_parser("stats", help="compare models over summaries or a CSV table")
    stats.add_argument("inputs", nargs="+", help="summary.json files, or one CSV table")
    stats.add_argument("--reference", help="model to compare against the others")
    stats.add_argument("--out", help="also write the result as JSON here")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        if args.command == "synth":
            if not 0 < args.density <= 1:
                raise ConfigError("density must be in (0, 1]")
            ds = generate_synthetic(args.users, args.items, args.rank, args.user_bias_spread,
                                    args.item_bias_spread, args.noise_sigma, seed=args.seed,
                                    density=args.density, out_path=args.out_path)
            print(f"wrote {len(ds)} ratings to {args.out_path}")
            return EXIT_OK
        if args.command == "stats":
            result = run_stats(args.inputs, args.reference)
            text = json.dumps(result, indent=2, sort_keys=True)
            print(text)
            if args.out:
                Path(args.out).write_text(text + "\n")
            return EXIT_OK
        cfg = resolve_config(args)
        if args.command == "train":
            if len(cfg.grid()) > 1:
                raise ConfigError("train takes a single grid point; use cv for grids")
            return run_experiment(cfg, holdout=True, checkpoint=args.checkpoint)
        return run_experiment(cfg)
    except (ConfigError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"fbalf: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
