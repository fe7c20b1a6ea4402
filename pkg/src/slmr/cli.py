"""Command line interface: ``slmr {synth,train,score,eval,sweep}``.

Config files are INI with sections ``[data]``, ``[model]``, ``[mask]``,
``[train]`` and ``[score]``; keys are the :class:`RunConfig` field names.
Values resolve as defaults < config file < command-line flags.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .detect import best_f1_threshold, evaluate, write_metrics_json, write_scores_csv
from .estimator import SLMRDetector
from .model import NumericError
from .pipeline import (DataError, file_sha256, load_dataset, optional_column, parse_label_map, read_csv,
                       save_dataset, synth_generate)

log = logging.getLogger("slmr")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SWAT_TRIM_ROWS = 4 * 3600  # SWaT logs at 1 Hz


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # [data]
    train_csv: Optional[str] = None
    test_csv: Optional[str] = None
    label_column: str = "label"
    label_map: Optional[str] = None
    drop_columns: str = ""
    swat_trim: bool = False
    # [model]
    window: int = 100
    groups: int = 4
    channels: int = 32
    hidden: int = 64
    se_hidden: int = 4
    mask: bool = True
    odd_even: bool = True
    multi_cnn: bool = True
    senet: bool = True
    forecast_head: bool = True
    reconstruct_head: bool = True
    masked_loss_only: bool = False
    # [mask]
    mask_ratio: float = 0.1
    mask_mean_len: float = 3.0
    # [train]
    lr: float = 0.001
    batch_size: int = 256
    epochs: int = 30
    val_fraction: float = 0.1
    train_stride: int = 1
    seed: int = 0
    # [score]
    gamma_score: float = 1.0
    full_window_recon: bool = False

    def validate(self) -> "RunConfig":
        errs = []
        for name, ok, msg in (
            ("window", self.window >= 2, "must be >= 2"),
            ("window", not (self.odd_even and self.window % 2), "must be even when odd_even is on"),
            ("groups", self.groups >= 2, "must be >= 2"),
            ("channels", self.channels >= 1 and self.channels % max(self.groups, 1) == 0,
             "must be a positive multiple of groups"),
            ("hidden", self.hidden >= 1, "must be positive"),
            ("se_hidden", self.se_hidden >= 1, "must be positive"),
            ("mask_ratio", 0.0 < self.mask_ratio < 1.0, "must lie in (0, 1)"),
            ("mask_mean_len", self.mask_mean_len >= 1.0, "must be >= 1"),
            ("lr", self.lr >= 0, "must be >= 0"),
            ("batch_size", self.batch_size >= 1, "must be positive"),
            ("epochs", self.epochs >= 0, "must be >= 0"),
            ("val_fraction", 0.0 <= self.val_fraction < 1.0, "must lie in [0, 1)"),
            ("train_stride", self.train_stride >= 1, "must be positive"),
            ("gamma_score", self.gamma_score >= 0, "must be >= 0"),
            ("forecast_head", self.forecast_head or self.reconstruct_head,
             "forecast_head and reconstruct_head cannot both be off"),
        ):
            if not ok:
                errs.append(f"{name}: {msg}")
        if self.label_map:
            try:
                parse_label_map(self.label_map)
            except ValueError as exc:
                errs.append(f"label_map: {exc}")
        if errs:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))
        return self

    def estimator(self, **overrides) -> SLMRDetector:
        names = SLMRDetector._get_param_names()
        params = {k: v for k, v in asdict(self).items() if k in names}
        params["random_state"] = self.seed
        params.update(overrides)
        return SLMRDetector(**params)


SECTIONS = {
    "data": ("train_csv", "test_csv", "label_column", "label_map", "drop_columns", "swat_trim"),
    "model": ("window", "groups", "channels", "hidden", "se_hidden", "mask", "odd_even", "multi_cnn",
              "senet", "forecast_head", "reconstruct_head", "masked_loss_only"),
    "mask": ("mask_ratio", "mask_mean_len"),
    "train": ("lr", "batch_size", "epochs", "val_fraction", "train_stride", "seed"),
    "score": ("gamma_score", "full_window_recon"),
}
_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw):
    kind = _TYPES[name]
    if raw is None:
        return None
    try:
        if kind == "bool":
            if isinstance(raw, bool):
                return raw
            low = str(raw).strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return str(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {kind}") from None


def read_config_file(path: str) -> Dict[str, object]:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path} does not exist")
    parser = configparser.ConfigParser()
    parser.read(path)
    out, errs = {}, []
    for section in parser.sections():
        if section not in SECTIONS:
            errs.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                errs.append(f"[{section}] unknown key {key!r}")
                continue
            try:
                out[key] = _coerce(key, raw)
            except ConfigError as exc:
                errs.append(str(exc))
    if errs:
        raise ConfigError(f"{path}:\n  " + "\n  ".join(errs))
    return out


def write_config_file(path: str, cfg: RunConfig) -> None:
    parser = configparser.ConfigParser()
    d = asdict(cfg)
    for section, keys in SECTIONS.items():
        parser[section] = {k: str(d[k]) for k in keys if d[k] is not None}
    with open(path, "w") as fh:
        parser.write(fh)


def resolve_config(file_values: Optional[Dict[str, object]], cli_values: Dict[str, object]) -> RunConfig:
    """Merge defaults, then config-file values, then explicitly given CLI flags."""
    merged = asdict(RunConfig())
    merged.update({k: v for k, v in (file_values or {}).items() if v is not None})
    merged.update({k: v for k, v in cli_values.items() if k in merged and v is not None})
    return RunConfig(**merged)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, dest=f.name, default=None, action=argparse.BooleanOptionalAction)
        else:
            conv = {"int": int, "float": float}.get(f.type, str)
            p.add_argument(flag, dest=f.name, default=None, type=conv)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slmr", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"slmr {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic train/test CSV pair")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--anomaly-fraction", type=float, default=0.1)

    p = sub.add_parser("train", help="train a model and write checkpoint, manifest and loss curves")
    _add_run_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("score", help="write per-timestamp anomaly scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-csv", required=True)
    p.add_argument("--label-column", default="label", help="split out when present in the header")
    p.add_argument("--label-map", default=None)
    p.add_argument("--gamma-score", type=float, default=None)
    p.add_argument("--drop-columns", default="", help="comma-separated non-feature columns")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="best-F1 point-adjusted evaluation on labelled test data")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test-csv", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--label-map", default=None)
    p.add_argument("--gamma-score", type=float, default=None)
    p.add_argument("--threshold", type=float, default=None, help="fixed threshold instead of best-F1 search")
    p.add_argument("--drop-columns", default="", help="comma-separated non-feature columns")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep", help="train+evaluate over one parameter axis")
    _add_run_flags(p)
    p.add_argument("--axis", required=True, choices=("mask_ratio", "window", "gamma"))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--checkpoint", default=None, help="gamma axis only: re-score this model instead of training")
    p.add_argument("--out", required=True)
    return ap


def _run_config(args) -> RunConfig:
    file_values = read_config_file(args.config) if args.config else None
    cli = {f.name: getattr(args, f.name, None) for f in fields(RunConfig)}
    return resolve_config(file_values, cli).validate()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _version_string() -> str:
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                              cwd=os.path.dirname(__file__), timeout=5)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _load_train(cfg: RunConfig):
    if not cfg.train_csv:
        raise ConfigError("train_csv: required (use --train-csv or [data] train_csv)")
    if not os.path.exists(cfg.train_csv):
        raise DataError(f"{cfg.train_csv}: no such file")
    drop = [c for c in cfg.drop_columns.split(",") if c.strip()]
    ds = load_dataset(cfg.train_csv, label_column=cfg.label_column, label_map=parse_label_map(cfg.label_map),
                      train_skip_rows=SWAT_TRIM_ROWS if cfg.swat_trim else 0, drop_columns=drop)
    return ds


def _load_test(path, label_column, label_map, drop_columns=""):
    drop = [c for c in drop_columns.split(",") if c.strip()]
    x, y, names = read_csv(path, label_column, parse_label_map(label_map), drop_columns=drop)
    return x, y, names


def cmd_synth(args) -> int:
    ds = synth_generate(k=args.k, n=args.n, seed=args.seed, anomaly_fraction=args.anomaly_fraction)
    train_path, test_path = save_dataset(ds, args.out)
    print(f"wrote {train_path} ({len(ds.train)} rows) and {test_path} "
          f"({len(ds.test)} rows, {ds.labels.mean():.3%} anomalous)")
    return EXIT_OK


def _train(cfg: RunConfig, out: str, **overrides) -> SLMRDetector:
    ds = _load_train(cfg)
    os.makedirs(out, exist_ok=True)
    est = cfg.estimator(**overrides)
    t0 = time.perf_counter()
    est.fit(ds.train)
    elapsed = time.perf_counter() - t0
    manifest = {
        "version": _version_string(),
        "config": asdict(cfg),
        "seed": cfg.seed,
        "data": {"train_csv": cfg.train_csv, "train_sha256": file_sha256(cfg.train_csv),
                 "feature_names": ds.feature_names, "rows": len(ds.train)},
        "best_epoch": est.history_.best_epoch,
        "train_seconds": elapsed,
    }
    est.save(os.path.join(out, "checkpoint.json"), {"manifest": manifest})
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    with open(os.path.join(out, "losses.csv"), "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "train_loss_f", "train_loss_r", "val_loss"])
        wr.writeheader()
        for row in est.history_.rows():
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return est


def cmd_train(args) -> int:
    cfg = _run_config(args)
    est = _train(cfg, args.out)
    print(f"trained {est.model_.n_parameters()} parameters; best epoch {est.history_.best_epoch}; "
          f"artifacts in {args.out}")
    return EXIT_OK


def _load_checkpoint(path) -> SLMRDetector:
    if not os.path.exists(path):
        raise DataError(f"{path}: no such checkpoint")
    return SLMRDetector.load(path)


def _check_k(est: SLMRDetector, x: np.ndarray):
    if x.shape[1] != est.n_features_in_:
        raise DataError(f"feature count mismatch: checkpoint expects {est.n_features_in_}, data has {x.shape[1]}")


def cmd_score(args) -> int:
    est = _load_checkpoint(args.checkpoint)
    label_column = optional_column(args.test_csv, args.label_column) if os.path.exists(args.test_csv) else args.label_column
    x, y, _ = _load_test(args.test_csv, label_column, args.label_map, args.drop_columns)
    _check_k(est, x)
    series = est.score_series(x, args.gamma_score)
    os.makedirs(args.out, exist_ok=True)
    truth = y[est.window:] if y is not None else None
    write_scores_csv(os.path.join(args.out, "scores.csv"), series, truth=truth)
    print(f"scored {len(series)} timestamps -> {os.path.join(args.out, 'scores.csv')}")
    return EXIT_OK


def _eval_scores(est, x, y, gamma, threshold, out, extra=None):
    series = est.score_series(x, gamma)
    truth = y[est.window:]
    scores = series.scores
    if threshold is None:
        threshold, report = best_f1_threshold(scores, truth)
    else:
        report, _ = evaluate(scores, truth, threshold)
    _, pred = evaluate(scores, truth, threshold)
    if not all(np.isfinite([report.precision, report.recall, report.f1])):
        raise NumericError("non-finite metrics")
    if out:
        os.makedirs(out, exist_ok=True)
        write_scores_csv(os.path.join(out, "scores.csv"), series, pred, truth)
        write_metrics_json(os.path.join(out, "metrics.json"), report,
                           {"gamma_score": series.gamma, "window": est.window, **(extra or {})})
    return report


def cmd_eval(args) -> int:
    est = _load_checkpoint(args.checkpoint)
    x, y, _ = _load_test(args.test_csv, args.label_column, args.label_map, args.drop_columns)
    _check_k(est, x)
    if y is None:
        raise DataError(f"{args.test_csv}: evaluation needs a label column")
    report = _eval_scores(est, x, y, args.gamma_score, args.threshold, args.out,
                          {"test_csv": args.test_csv, "test_sha256": file_sha256(args.test_csv)})
    print(f"threshold={report.threshold:.6g} precision={report.precision:.4f} "
          f"recall={report.recall:.4f} f1={report.f1:.4f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _run_config(args)
    if not cfg.test_csv:
        raise ConfigError("test_csv: required for sweep")
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values: cannot parse {args.values!r}") from None
    if not values:
        raise ConfigError("--values: no values given")
    if args.checkpoint and args.axis != "gamma":
        raise ConfigError("--checkpoint: only valid with --axis gamma")
    x, y, _ = _load_test(cfg.test_csv, cfg.label_column, cfg.label_map, cfg.drop_columns)
    if y is None:
        raise DataError(f"{cfg.test_csv}: sweep needs a label column")
    os.makedirs(args.out, exist_ok=True)
    rows = []
    shared = None
    for v in values:
        point_dir = os.path.join(args.out, f"{args.axis}={v:g}")
        if args.axis == "gamma":
            # gamma only enters the score, so one trained model serves every point
            if shared is None:
                shared = (_load_checkpoint(args.checkpoint) if args.checkpoint
                          else _train(cfg, os.path.join(args.out, "model")))
            est, gamma = shared, v
        else:
            over = {"mask_ratio": v} if args.axis == "mask_ratio" else {"window": int(v)}
            point_cfg = resolve_config(asdict(cfg), over).validate()
            est, gamma = _train(point_cfg, point_dir), None
        report = _eval_scores(est, x, y, gamma, None, point_dir)
        rows.append({"axis": args.axis, "value": v, "precision": report.precision,
                     "recall": report.recall, "f1": report.f1, "threshold": report.threshold})
        print(f"{args.axis}={v:g}: P={report.precision:.4f} R={report.recall:.4f} F1={report.f1:.4f}")
    with open(os.path.join(args.out, "sweep.csv"), "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "score": cmd_score, "eval": cmd_eval, "sweep": cmd_sweep}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # parameter combinations rejected by the library itself
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
