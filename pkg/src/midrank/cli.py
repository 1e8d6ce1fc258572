"""Command-line driver: generate | train | rank | evaluate.

Options can also come from a TOML file (``--config``); keys at the top
level apply to every command, keys under ``[<command>]`` to that command
only, and explicit flags win over both. The root seed falls back to the
``MIDRANK_SEED`` environment variable, then 0.

Exit status: 0 on success, 1 on usage or configuration errors, 2 on data
or model errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .core import MidRankError, Sequence, make_permutation
from .data import (
    Dataset,
    SyntheticConfig,
    config_dict,
    generate_synthetic,
    load_dataset,
    sample_test_sequences,
    save_dataset,
)
from .evaluation import compare_exhaustive, report_rows, run_all, select_best_single
from .fusion import EmptyRankings, FusionStrategy, VoteWeighting, rank_ensemble
from .inference import Initializer, SearchConfig
from .metrics import rows_to_csv, rows_to_json
from .models import dumps_model, load_model
from .training import DEFAULT_MU_GRID, TrainConfig, train_ensemble

log = logging.getLogger("midrank")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_lambdas(text) -> tuple[int, ...]:
    """``"3-8"``, ``"2,3,5"`` or a list of ints."""
    if isinstance(text, (list, tuple)):
        return tuple(int(x) for x in text)
    out: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def parse_floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(",") if x.strip())


# option name -> (default, converter); flags default to None so config files can fill gaps
OPTIONS: dict[str, dict[str, tuple[Any, Any]]] = {
    "generate": {
        "out_dir": ("data", str),
        "dim": (10, int),
        "train_sequences": (200, int),
        "train_length": (8, int),
        "test_sequences": (500, int),
        "test_length": (8, int),
        "noise_sigma": (0.2, float),
        "compress": (False, bool),
    },
    "train": {
        "train": (None, str),
        "model": ("model.json", str),
        "report": (None, str),
        "lambdas": ((2, 3, 4, 5, 6, 7, 8), parse_lambdas),
        "feature_map": ("stacked_diff", str),
        "mu": (1e-2, float),
        "mu_grid": (DEFAULT_MU_GRID, parse_floats),
        "cv_folds": (3, int),
        "positives": (10, int),
        "epochs": (1000, int),
        "tolerance": (1e-4, float),
        "select_length": (8, int),
        "trees": (5, int),
        "threads": (1, int),
        "pair_samples": (False, bool),
    },
    "rank": {
        "model": (None, str),
        "input": (None, str),
        "output": (None, str),
        "fusion": (None, str),
        "all_fusions": (False, bool),
        "trees": (5, int),
        "initializer": ("ranksvm", str),
        "vote_weighting": ("shifted", str),
    },
    "evaluate": {
        "model": (None, str),
        "test": (None, str),
        "output": ("report", str),
        "all_fusions": (False, bool),
        "ablate_lambda": (False, bool),
        "compare_exhaustive": (False, bool),
        "exhaustive_lambda": (None, int),
        "sample_length": (None, int),
        "sample_count": (500, int),
        "trees": (5, int),
        "initializer": ("ranksvm", str),
        "vote_weighting": ("shifted", str),
        "threads": (1, int),
    },
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="midrank", description="Learning to rank from ordered subsequences.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="TOML file with option values")
        sp.add_argument("--seed", type=int, help="root seed (default: $MIDRANK_SEED or 0)")

    g = sub.add_parser("generate", help="write synthetic train/test JSONL datasets")
    common(g)
    g.add_argument("--out-dir")
    g.add_argument("--dim", type=int)
    g.add_argument("--train-sequences", type=int)
    g.add_argument("--train-length", type=int)
    g.add_argument("--test-sequences", type=int)
    g.add_argument("--test-length", type=int)
    g.add_argument("--noise-sigma", type=float)
    g.add_argument("--compress", action="store_true", default=None, help="write .jsonl.gz")

    t = sub.add_parser("train", help="fit one ranker per subsequence length")
    common(t)
    t.add_argument("--train", help="training dataset (JSONL)")
    t.add_argument("--model", help="output model path")
    t.add_argument("--report", help="training report path (default: <model>.report.json)")
    t.add_argument("--lambdas", help="e.g. 2-8 or 2,3,5")
    t.add_argument("--feature-map", choices=["mean_pairwise_diff", "stacked", "stacked_diff", "full_pairwise_diff"])
    t.add_argument("--mu", type=float, help="regularization weight when cross-validation is off")
    t.add_argument("--mu-grid", help="comma-separated candidates for cross-validation")
    t.add_argument("--cv-folds", type=int, help="folds for choosing mu; 0 disables")
    t.add_argument("--positives", type=int, help="positive windows sampled per sequence")
    t.add_argument("--epochs", type=int)
    t.add_argument("--tolerance", type=float, help="relative duality-gap stopping threshold")
    t.add_argument("--select-length", type=int, help="test length used to choose the best single ranker")
    t.add_argument("--trees", type=int, help="search trees used while choosing the best single ranker")
    t.add_argument("--threads", type=int)
    t.add_argument(
        "--pair-samples", action="store_true", default=None, help="train lambda=2 on every item pair (RankSVM style)"
    )

    r = sub.add_parser("rank", help="order sequences with a trained model")
    common(r)
    r.add_argument("--model")
    r.add_argument("--input", help="JSONL dataset, or '-' for one sequence object on stdin")
    r.add_argument("--output", help="write JSON here instead of stdout")
    r.add_argument("--fusion", choices=[s.value for s in FusionStrategy])
    r.add_argument("--all-fusions", action="store_true", default=None)
    r.add_argument("--trees", type=int)
    r.add_argument("--initializer", choices=[i.value for i in Initializer])
    r.add_argument("--vote-weighting", choices=[w.value for w in VoteWeighting])

    e = sub.add_parser("evaluate", help="score a model on a test dataset")
    common(e)
    e.add_argument("--model")
    e.add_argument("--test", help="test dataset (JSONL)")
    e.add_argument("--output", help="report prefix; writes <prefix>.csv and <prefix>.json")
    e.add_argument("--all-fusions", action="store_true", default=None)
    e.add_argument("--ablate-lambda", action="store_true", default=None, help="one row per ranker length")
    e.add_argument("--compare-exhaustive", action="store_true", default=None, help="greedy vs exhaustive timing")
    e.add_argument("--exhaustive-lambda", type=int, help="ranker used by --compare-exhaustive")
    e.add_argument("--sample-length", type=int, help="resample test sequences of this length")
    e.add_argument("--sample-count", type=int)
    e.add_argument("--trees", type=int)
    e.add_argument("--initializer", choices=[i.value for i in Initializer])
    e.add_argument("--vote-weighting", choices=[w.value for w in VoteWeighting])
    e.add_argument("--threads", type=int)
    return p


def resolve(command: str, args: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, config file and flags into the effective configuration."""
    file_cfg: dict[str, Any] = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {args.config}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise UsageError(f"{args.config}: {exc}") from exc
        file_cfg = {k: v for k, v in raw.items() if not isinstance(v, dict)}
        file_cfg.update(raw.get(command, {}))
    spec = OPTIONS[command]
    out: dict[str, Any] = {}
    for key, (default, conv) in spec.items():
        val = getattr(args, key, None)
        if val is None:
            val = file_cfg.get(key, file_cfg.get(key.replace("_", "-"), default))
        try:
            out[key] = conv(val) if val is not None else None
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid value for {key}: {val!r}") from exc
    unknown = set(file_cfg) - set(spec) - {"seed"} - {k.replace("_", "-") for k in spec}
    if unknown:
        raise UsageError(f"unknown {command} option(s) in config: {sorted(unknown)}")
    seed = args.seed if args.seed is not None else file_cfg.get("seed", os.environ.get("MIDRANK_SEED", 0))
    try:
        out["seed"] = int(seed)
    except ValueError as exc:
        raise UsageError(f"invalid seed {seed!r}") from exc
    return out


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _jsonable(cfg: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}


def cmd_generate(cfg: dict) -> int:
    try:
        configs = {
            split: SyntheticConfig(
                dim=cfg["dim"],
                num_sequences=cfg[f"{split}_sequences"],
                seq_len=cfg[f"{split}_length"],
                noise_sigma=cfg["noise_sigma"],
                seed=cfg["seed"],
                split=split,
            )
            for split in ("train", "test")
        }
    except MidRankError as exc:
        raise UsageError(str(exc)) from exc
    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = ".jsonl.gz" if cfg["compress"] else ".jsonl"
    summary: dict[str, Any] = {"config": _jsonable(cfg), "files": {}}
    for split, sc in configs.items():
        ds = generate_synthetic(sc)
        path = out_dir / f"{split}{ext}"
        save_dataset(ds, path)
        summary["files"][split] = {
            "path": str(path),
            "sequences": len(ds),
            "items": sum(len(s) for s in ds.sequences),
            "synthetic": config_dict(sc),
        }
    print(json.dumps(summary, indent=1))
    return 0


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            lambdas=cfg["lambdas"],
            positives_per_sequence=cfg["positives"],
            mu=cfg["mu"],
            mu_grid=cfg["mu_grid"],
            cv_folds=cfg["cv_folds"],
            sdca_epochs=cfg["epochs"],
            tolerance=cfg["tolerance"],
            seed=cfg["seed"],
            feature_map=cfg["feature_map"],
            threads=cfg["threads"],
            pair_samples=cfg["pair_samples"],
        )
    except (MidRankError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(cfg: dict) -> int:
    _require(cfg, "train")
    tc = _train_config(cfg)
    ds = load_dataset(cfg["train"])
    ens = train_ensemble(ds.sequences, tc)
    search = SearchConfig(num_trees=cfg["trees"], seed=cfg["seed"])
    best, val_kt = select_best_single(ds.sequences, ens, tc, cfg["select_length"], search)
    ens.best_single_lambda = best
    ens.config = {"train": _jsonable(cfg)}
    model_path = Path(cfg["model"])
    model_path.write_text(dumps_model(ens))
    report = {
        "config": _jsonable(cfg),
        "lambdas": ens.diagnostics["training"],
        "best_single_lambda": best,
        "best_single_validation_kt": {str(k): v for k, v in val_kt.items()},
    }
    report_path = Path(cfg["report"] or model_path.with_suffix(".report.json"))
    report_path.write_text(json.dumps(report, indent=1) + "\n")
    print(json.dumps({"model": str(model_path), "report": str(report_path), "lambdas": ens.lambdas}))
    return 0


def _read_rank_input(path: str, dim: int) -> list[Sequence]:
    if path == "-":
        rec = json.loads(sys.stdin.read())
        items = np.asarray(rec["items"], dtype=np.float64)
        order = rec.get("order")
        return [Sequence(items=items, ground_truth=make_permutation(order) if order else None, id=str(rec.get("id", "stdin")))]
    return load_dataset(path).sequences


def cmd_rank(cfg: dict) -> int:
    _require(cfg, "model", "input")
    ens = load_model(cfg["model"])
    if cfg["fusion"]:
        ens.fusion = FusionStrategy(cfg["fusion"])
    search = SearchConfig(num_trees=cfg["trees"], initializer=cfg["initializer"], seed=cfg["seed"])
    strategies = list(FusionStrategy) if cfg["all_fusions"] else None
    results = []
    for s in _read_rank_input(cfg["input"], ens.d):
        if s.dim != ens.d:
            raise MidRankError(f"sequence {s.id!r} has dimension {s.dim}, model expects {ens.d}")
        try:
            res = rank_ensemble(s.items, ens, search, strategies=strategies, weighting=cfg["vote_weighting"])
        except EmptyRankings as exc:
            results.append({"id": s.id, "error": str(exc)})
            continue
        entry: dict[str, Any] = {
            "id": s.id,
            "order": list(res.perm.order),
            "fusion": ens.fusion.value,
            "per_lambda": [
                {"lambda": r.lam, "order": list(r.perm.order), "score": r.score, "trace": r.trace.to_dict()}
                for r in res.per_ranker
            ],
        }
        if strategies:
            entry["fused"] = {k: list(v.order) for k, v in sorted(res.fused.items())}
        results.append(entry)
    _emit(json.dumps({"config": _jsonable(cfg), "results": results}, indent=1) + "\n", cfg["output"])
    return 0


def cmd_evaluate(cfg: dict) -> int:
    _require(cfg, "model", "test")
    ens = load_model(cfg["model"])
    ds: Dataset = load_dataset(cfg["test"])
    if ds.dim != ens.d:
        raise MidRankError(f"test data has dimension {ds.dim}, model expects {ens.d}")
    seqs = ds.sequences
    if cfg["sample_length"]:
        seqs = sample_test_sequences(ds, cfg["sample_length"], cfg["sample_count"], cfg["seed"])
    missing = [s.id for s in seqs if s.ground_truth is None]
    if missing:
        raise MidRankError(f"{len(missing)} test sequences lack ground truth (first: {missing[0]})")
    min_lam = min(r.lam for r in ens.fused_rankers())
    usable = [s for s in seqs if len(s) >= min_lam]
    if len(usable) < len(seqs):
        log.warning("skipping %d sequences shorter than lambda=%d", len(seqs) - len(usable), min_lam)
    search = SearchConfig(num_trees=cfg["trees"], initializer=cfg["initializer"], seed=cfg["seed"])
    outcomes = run_all(usable, ens, search, cfg["threads"], cfg["ablate_lambda"], cfg["vote_weighting"])
    rows = report_rows(usable, outcomes, ens, cfg["all_fusions"], cfg["ablate_lambda"])
    extra: dict[str, Any] = {"config": _jsonable(cfg)}
    if cfg["compare_exhaustive"]:
        short = [s for s in usable if len(s) <= 8]
        if not short:
            raise MidRankError("--compare-exhaustive needs test sequences of length <= 8")
        extra["exhaustive"] = compare_exhaustive(short, ens, search, cfg["exhaustive_lambda"])
    prefix = Path(cfg["output"])
    comment = "config " + json.dumps(_jsonable(cfg), sort_keys=True)
    prefix.with_suffix(".csv").write_text(rows_to_csv(rows, comment))
    prefix.with_suffix(".json").write_text(rows_to_json(rows, **extra))
    sys.stdout.write(rows_to_csv(rows))
    if "exhaustive" in extra:
        print(json.dumps(extra["exhaustive"], indent=1))
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "rank": cmd_rank, "evaluate": cmd_evaluate}


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"midrank: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MidRankError, FileNotFoundError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"midrank: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
