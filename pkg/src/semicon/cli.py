"""Experiment runner: single runs, sweeps, and plot-ready tables.

Config files are `key = value` lines ('#' starts a comment). CLI flags
override file values. Every run writes one report file; sweeps add an
aggregate CSV with mean and sample standard deviation over repetitions.

Exit codes: 0 ok, 1 config error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import glob
import math
import os
import sys

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .models import ConvSpec, MlpSpec
from .reports import RunReport, read_reports, write_reports
from .stream import load_cifar_binary, make_synthetic, split_dataset
from .trainers import TrainConfig, run as run_method

DATASETS = ("synthetic", "cifar10", "cifar100")


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",")]


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    raise ValueError(text)


SCHEMA = {
    "method": str,
    "dataset": str,
    "data_path": str,
    "test_path": str,
    "out": str,
    "reps": int,
    "seed": int,
    "alpha": float,
    "tau": float,
    "galpha_on": str,
    "stream_batch": int,
    "mem_batch": int,
    "mem_size": int,
    "epochs": int,
    "lr": float,
    "loss_trace": _bool,
    "sweep_alpha": _floats,
    "sweep_mem_batch": _ints,
    "n_classes": int,
    "dim": int,
    "separation": float,
    "per_class": int,
    "n_tasks": int,
    "test_per_class": int,
}

DEFAULTS = {
    "method": "ours",
    "dataset": "synthetic",
    "out": "reports",
    "reps": 1,
    "seed": 0,
    "stream_batch": 10,
    "n_classes": 4,
    "dim": 6,
    "separation": 3.0,
    "per_class": 50,
    "test_per_class": 25,
}

# n_tasks defaults per dataset: 2 synthetic, 5 cifar10, 20 cifar100

# TrainConfig fields that are forwarded only when the user set them, so
# that per-method defaults and applicability checks stay in one place
_OPTIONAL_TRAIN_KEYS = ("alpha", "tau", "galpha_on", "mem_size", "mem_batch",
                        "epochs", "loss_trace")


def parse_config_file(path: str) -> dict:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    cfg: dict = {}
    for lineno, raw in enumerate(lines, 1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        key, sep, value = text.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        if key not in SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in cfg:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        try:
            cfg[key] = SCHEMA[key](value)
        except ValueError:
            raise ConfigError(
                f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return cfg


def _merge_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config is not None:
        cfg.update(parse_config_file(args.config))
    for flag in ("method", "dataset", "alpha", "tau", "mem_size", "mem_batch",
                 "stream_batch", "lr", "seed", "reps", "out", "galpha_on",
                 "epochs"):
        value = getattr(args, flag)
        if value is not None:
            cfg[flag] = value
    if cfg["dataset"] not in DATASETS:
        raise ConfigError(f"unknown dataset {cfg['dataset']!r}, "
                          f"expected one of {', '.join(DATASETS)}")
    if cfg["reps"] < 1:
        raise ConfigError(f"reps must be positive, got {cfg['reps']}")
    if "sweep_alpha" in cfg and "sweep_mem_batch" in cfg:
        raise ConfigError("sweep_alpha and sweep_mem_batch are exclusive")
    return cfg


def _train_config(cfg: dict, *, seed: int, axis: str | None = None,
                  value=None) -> TrainConfig:
    kw = {"method": cfg["method"], "stream_batch": cfg["stream_batch"],
          "seed": seed}
    if "lr" in cfg:
        kw["learning_rate"] = cfg["lr"]
    for key in _OPTIONAL_TRAIN_KEYS:
        if key in cfg:
            kw[key] = cfg[key]
    if axis is not None:
        kw[axis] = value
    return TrainConfig(**kw)


def _load_cifar_stream(cfg: dict, seed: int):
    label_bytes = 1 if cfg["dataset"] == "cifar10" else 2
    default_tasks = 5 if cfg["dataset"] == "cifar10" else 20
    n_tasks = cfg.get("n_tasks", default_tasks)
    for key in ("data_path", "test_path"):
        if key not in cfg:
            raise ConfigError(f"dataset {cfg['dataset']} needs {key}")
        if not os.path.exists(cfg[key]):
            raise DataError(f"dataset file not found: {cfg[key]}")
    train = load_cifar_binary(cfg["data_path"], label_bytes=label_bytes)
    test = load_cifar_binary(cfg["test_path"], label_bytes=label_bytes)
    return split_dataset(train, n_tasks, seed,
                         batch_size=cfg["stream_batch"], test_data=test)


def _build_stream(cfg: dict, seed: int):
    """One stream per repetition; the seed shifts data draw and order."""
    if cfg["dataset"] == "synthetic":
        stream = make_synthetic(
            cfg["n_classes"], cfg["dim"], cfg["separation"], cfg["per_class"],
            cfg.get("n_tasks", 2), seed, batch_size=cfg["stream_batch"],
            test_per_class=cfg["test_per_class"],
        )
        return stream, MlpSpec(in_dim=cfg["dim"])
    return _load_cifar_stream(cfg, seed), ConvSpec()


def _check_finite(encoder, report: RunReport) -> None:
    if not math.isfinite(report.final_avg):
        raise NumericError("final accuracy is not finite")
    for name, value in encoder.params.items():
        if not np.all(np.isfinite(value)):
            raise NumericError(f"parameter {name} diverged during training")
    if report.loss_trace is not None:
        if not all(map(math.isfinite, report.loss_trace)):
            raise NumericError("training loss diverged")


def _sweep_points(cfg: dict) -> list[tuple[str | None, object]]:
    if "sweep_alpha" in cfg:
        return [("alpha", v) for v in cfg["sweep_alpha"]]
    if "sweep_mem_batch" in cfg:
        return [("mem_batch", v) for v in cfg["sweep_mem_batch"]]
    return [(None, None)]


def _run_name(method: str, axis: str | None, value, rep: int) -> str:
    parts = [method]
    if axis is not None:
        parts.append(f"{axis}{value:g}")
    parts.append(f"rep{rep}")
    return "-".join(parts) + ".report.jsonl"


def _std(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def cmd_run(args: argparse.Namespace) -> None:
    cfg = _merge_config(args)
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    points = _sweep_points(cfg)
    aggregate = []
    for axis, value in points:
        reports = []
        for rep in range(cfg["reps"]):
            seed = cfg["seed"] + rep
            train_cfg = _train_config(cfg, seed=seed, axis=axis, value=value)
            stream, model = _build_stream(cfg, seed)
            encoder, _, report = run_method(train_cfg, stream, model)
            _check_finite(encoder, report)
            name = _run_name(cfg["method"], axis, value, rep)
            write_reports(os.path.join(out_dir, name), [report])
            reports.append(report)
            print(f"{name}: final_avg={report.final_avg:.4f} "
                  f"labels={report.label_fraction:.3f}")
        aggregate.append((axis, value, reports))
    if len(points) > 1 or cfg["reps"] > 1:
        _write_aggregate(os.path.join(out_dir, "aggregate.csv"), aggregate)
    print(f"wrote {sum(len(r) for _, _, r in aggregate)} reports to {out_dir}")


def _write_aggregate(path: str, aggregate) -> None:
    axis = aggregate[0][0] or "run"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([axis, "mean_final_avg", "std_final_avg",
                         "mean_label_fraction", "reps"])
        for _, value, reports in aggregate:
            finals = [r.final_avg for r in reports]
            fractions = [r.label_fraction for r in reports]
            writer.writerow([
                value if value is not None else "single",
                f"{np.mean(finals):.6f}", f"{_std(finals):.6f}",
                f"{np.mean(fractions):.6f}", len(reports),
            ])
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# plot-data
# ---------------------------------------------------------------------------

def _load_reports_dir(reports_dir: str) -> list[RunReport]:
    pattern = os.path.join(reports_dir, "*.report.jsonl")
    reports = []
    for path in sorted(glob.glob(pattern)):
        reports.extend(read_reports(path))
    if not reports:
        raise DataError(f"no reports found in {reports_dir}")
    return reports


def _grouped(reports: list[RunReport], axis: str):
    """Group by (method, axis value), keeping only reports where it is set."""
    groups: dict = {}
    for rep in reports:
        value = rep.config.get(axis)
        if value is None:
            continue
        groups.setdefault((rep.config["method"], value), []).append(rep)
    for key in groups:
        groups[key].sort(key=lambda r: r.config["seed"])
    return dict(sorted(groups.items()))


def _check_consistent(group: list[RunReport], ignore: set[str],
                      context: str) -> None:
    base = group[0].config
    divergent = set()
    for rep in group[1:]:
        for key in base:
            if key not in ignore and rep.config.get(key) != base[key]:
                divergent.add(key)
    if divergent:
        raise DataError(f"inconsistent configs in {context}: "
                        f"divergent keys: {sorted(divergent)}")


def _axis_table(reports: list[RunReport], axis: str, path: str) -> bool:
    groups = _grouped(reports, axis)
    if len({value for _, value in groups}) < 2:
        return False  # a curve needs at least two axis points
    rows = []
    for (method, value), group in groups.items():
        _check_consistent(group, {"seed"}, f"{axis}={value:g} ({method})")
        finals = [r.final_avg for r in group]
        rows.append([method, f"{value:g}", f"{np.mean(finals):.6f}",
                     f"{_std(finals):.6f}", len(group)])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", axis, "mean_final_avg", "std_final_avg",
                         "reps"])
        writer.writerows(rows)
    return True


def _relative_table(reports: list[RunReport], path: str) -> bool:
    """Budgeted methods against the fully supervised scr baseline.

    relative_final_avg is a plain ratio: mean final accuracy of the
    method divided by mean final accuracy of scr at the same mem_size.
    """
    groups = _grouped(reports, "mem_size")
    scr = {size: group for (method, size), group in groups.items()
           if method == "scr"}
    if not scr:
        return False  # nothing to normalize against
    rows = []
    for (method, size), group in groups.items():
        if method not in ("ours", "scr-mo"):
            continue
        if size not in scr:
            raise DataError(f"no scr baseline report for mem_size={size}")
        _check_consistent(group, {"seed"}, f"mem_size={size} ({method})")
        _check_consistent(scr[size], {"seed"}, f"mem_size={size} (scr)")
        mean = np.mean([r.final_avg for r in group])
        base = np.mean([r.final_avg for r in scr[size]])
        if base == 0:
            raise NumericError(f"scr baseline accuracy is zero at "
                               f"mem_size={size}")
        fraction = np.mean([r.label_fraction for r in group])
        rows.append([method, size, f"{fraction:.6f}", f"{mean / base:.6f}",
                     len(group)])
    if not rows:
        return False
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "mem_size", "label_fraction",
                         "relative_final_avg", "reps"])
        writer.writerows(rows)
    return True


def cmd_plot_data(args: argparse.Namespace) -> None:
    reports = _load_reports_dir(args.reports_dir)
    out_dir = args.out or args.reports_dir
    os.makedirs(out_dir, exist_ok=True)
    tables = [
        ("accuracy_vs_mem_batch.csv",
         lambda p: _axis_table(reports, "mem_batch", p)),
        ("accuracy_vs_alpha.csv",
         lambda p: _axis_table(reports, "alpha", p)),
        ("relative_vs_label_fraction.csv",
         lambda p: _relative_table(reports, p)),
    ]
    written = 0
    for name, build in tables:
        path = os.path.join(out_dir, name)
        if build(path):
            print(f"wrote {path}")
            written += 1
    if not written:
        raise DataError("reports carry no sweep axes to tabulate")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="semicon",
                     description="continual-learning experiment runner")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    runp = sub.add_parser("run", help="train one config, or a sweep")
    runp.add_argument("config", nargs="?", default=None,
                      help="key = value config file")
    runp.add_argument("--method")
    runp.add_argument("--dataset")
    runp.add_argument("--alpha", type=float)
    runp.add_argument("--tau", type=float)
    runp.add_argument("--mem-size", dest="mem_size", type=int)
    runp.add_argument("--mem-batch", dest="mem_batch", type=int)
    runp.add_argument("--stream-batch", dest="stream_batch", type=int)
    runp.add_argument("--lr", type=float)
    runp.add_argument("--seed", type=int)
    runp.add_argument("--reps", type=int)
    runp.add_argument("--out")
    runp.add_argument("--galpha-on", dest="galpha_on",
                      choices=("labeled", "unlabeled"))
    runp.add_argument("--epochs", type=int)

    plot = sub.add_parser("plot-data", help="tabulate a reports directory")
    plot.add_argument("reports_dir")
    plot.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            cmd_run(args)
        elif args.command == "plot-data":
            cmd_plot_data(args)
        else:
            raise ConfigError("expected a command: run or plot-data")
        return 0
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
