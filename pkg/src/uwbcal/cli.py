"""``uwbcal`` command-line front-end.

Subcommands: ``gen-data``, ``train``, ``simulate``, ``eval`` and
``export-weights``. Exit status is 0 on success, 1 on a runtime failure and
2 on a usage or configuration error. Outputs are written to a temporary file
next to the target and renamed into place, so a failed command leaves no
partial file behind.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from uwbcal import __version__
from uwbcal.config import ConfigError, ExperimentConfig
from uwbcal.geometry import Mode
from uwbcal.nn import (
    Dataset,
    TrainingError,
    WeightFileError,
    load_weights,
    train,
    weights_from_bytes,
    weights_to_bytes,
)
from uwbcal.sim import KINDS, RunLog, generate_dataset, metrics, run_closed_loop, run_estimation

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
DEFAULTS = ExperimentConfig()


class UsageError(Exception):
    pass


class RunFailure(Exception):
    pass


@contextlib.contextmanager
def atomic_output(target):
    """Yield a temporary path beside ``target``; rename it over ``target`` on success."""
    target = Path(target)
    if not target.parent.is_dir():
        raise RunFailure(f"output directory {target.parent} does not exist")
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    os.close(fd)
    tmp = Path(tmp)
    try:
        yield tmp
        os.replace(tmp, target)
    finally:
        tmp.unlink(missing_ok=True)


def save_log(log: RunLog, target) -> None:
    target = Path(target)
    summary_target = target.with_name(target.name + ".summary.json")
    with atomic_output(target) as tmp:
        summary_tmp = log.save(tmp)
        try:
            os.replace(summary_tmp, summary_target)
        except BaseException:
            summary_tmp.unlink(missing_ok=True)
            raise


def _on_off(text: str) -> bool:
    value = text.strip().lower()
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got {text!r}")
    return value == "on"


def _mode(text: str) -> str:
    try:
        return Mode.parse(text).value
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _overrides(args, mapping: dict) -> dict:
    """Collect the flags the user actually passed as ``section.key`` overrides."""
    out = {}
    for dest, key in mapping.items():
        value = getattr(args, dest, None)
        if value is not None:
            out[key] = value
    return out


def load_config(args, mapping: dict) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config, _overrides(args, mapping))
    cfg.validate_references()
    return cfg


# --- gen-data ---------------------------------------------------------------

GEN_FLAGS = {"mode": "run.mode", "seed": "dataset.seed", "n_flights": "dataset.n_flights",
             "flight_duration": "dataset.flight_duration", "rate": "dataset.rate"}


def cmd_gen_data(args) -> int:
    cfg = load_config(args, GEN_FLAGS)
    constellation = cfg.build_constellation()
    out = Path(args.out)
    if not out.parent.is_dir():
        raise RunFailure(f"output directory {out.parent} does not exist")
    data = generate_dataset(constellation, cfg.bias, cfg.noise, cfg.run.mode, cfg.dataset)
    with atomic_output(out) as tmp:
        data.save_csv(tmp)
    t = data.targets
    print(f"wrote {len(data)} {data.mode.value} samples to {out}")
    print(f"target mean {t.mean():+.4f} m  std {t.std():.4f} m  "
          f"median |t| {np.median(np.abs(t)):.4f} m  max |t| {np.abs(t).max():.3f} m")
    return EXIT_OK


# --- train ------------------------------------------------------------------

TRAIN_FLAGS = {"xi": "train.xi_threshold", "split": "train.split_fraction", "lr": "train.learning_rate",
               "batch_size": "train.batch_size", "epochs": "train.epochs", "seed": "train.seed"}


def cmd_train(args) -> int:
    cfg = load_config(args, TRAIN_FLAGS)
    tc = cfg.train
    print(f"config: xi={tc.xi_threshold} split={tc.split_fraction} lr={tc.learning_rate} "
          f"batch={tc.batch_size} epochs={tc.epochs} seed={tc.seed}")
    try:
        data = Dataset.load_csv(args.dataset)
    except OSError as exc:
        raise RunFailure(f"cannot read dataset {args.dataset}: {exc.strerror}") from None
    except ValueError as exc:
        raise RunFailure(f"bad dataset: {exc}") from None
    out = Path(args.out)
    history_path = Path(args.history) if args.history else out.with_name(out.name + ".history.csv")
    for p in (out, history_path):
        if not p.parent.is_dir():
            raise RunFailure(f"output directory {p.parent} does not exist")
    try:
        model, hist = train(data, tc)
    except TrainingError as exc:
        raise RunFailure(str(exc)) from None
    with atomic_output(out) as tmp_w, atomic_output(history_path) as tmp_h:
        tmp_w.write_bytes(weights_to_bytes(model))
        hist.to_csv(tmp_h)
    train_rmse = float(np.sqrt(hist.train_loss[hist.best_epoch]))
    print(f"trained {model.mode.value} model on {len(data)} samples; best epoch {hist.best_epoch}")
    print(f"train RMSE {train_rmse:.4f} m  validation RMSE {hist.best_val_rmse:.4f} m")
    print(f"wrote {out} and {history_path}")
    return EXIT_OK


# --- simulate ---------------------------------------------------------------

SIM_FLAGS = {"mode": "run.mode", "compensation": "run.compensation", "rejection": "run.rejection",
             "closed_loop": "run.closed_loop", "seed": "run.seed", "seeds": "run.seeds",
             "model": "run.model", "trajectory": "trajectory.kind", "rate": "trajectory.sample_rate",
             "speed": "trajectory.speed", "duration": "trajectory.duration",
             "outlier_rate": "noise.outlier_rate"}


def _one_run(job):
    run_cfg, closed = job
    return (run_closed_loop if closed else run_estimation)(run_cfg)


def seed_path(out: Path, seed: int, n_seeds: int) -> Path:
    if n_seeds == 1:
        return out
    return out.with_name(f"{out.stem}.seed{seed}{out.suffix}")


def cmd_simulate(args) -> int:
    cfg = load_config(args, SIM_FLAGS)
    r = cfg.run
    mode = Mode.parse(r.mode)
    model = None
    if r.model is not None:
        try:
            model = load_weights(r.model, expected_mode=mode if r.compensation else None)
        except (OSError, WeightFileError, ValueError) as exc:
            raise UsageError(f"cannot use model {r.model}: {exc}") from None
    elif r.compensation:
        raise UsageError("compensation is on but no --model was given")
    constellation = cfg.build_constellation()
    seeds = [r.seed + k for k in range(r.seeds)]
    try:
        jobs = [(cfg.run_config(model, s, constellation), r.closed_loop) for s in seeds]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.out and not Path(args.out).parent.is_dir():
        raise RunFailure(f"output directory {Path(args.out).parent} does not exist")

    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            logs = list(pool.map(_one_run, jobs))
    else:
        logs = [_one_run(j) for j in jobs]
    logs.sort(key=lambda lg: lg.meta["seed"])

    if args.out:
        for lg in logs:
            save_log(lg, seed_path(Path(args.out), lg.meta["seed"], len(logs)))

    rmse = np.array([lg.summary.get("rmse", np.nan) for lg in logs])
    trk = np.array([lg.summary.get("tracking_rmse", np.nan) for lg in logs])
    n_div = sum(bool(lg.meta["diverged"]) for lg in logs)
    label = run_label(logs[0].meta)
    print(f"{'run':<28s} {'seeds':>5s} {'rmse [m]':>17s} {'tracking [m]':>17s} {'diverged':>8s}")
    print(f"{label:<28s} {len(logs):5d} {np.nanmean(rmse):8.4f}±{np.nanstd(rmse):<8.4f} "
          f"{np.nanmean(trk):8.4f}±{np.nanstd(trk):<8.4f} {n_div:4d}/{len(logs)}")
    return EXIT_OK


# --- eval -------------------------------------------------------------------

def run_label(meta: dict) -> str:
    parts = [meta["mode"], "comp" if meta["compensation"] else "nocomp",
             "rej" if meta["rejection"] else "norej"]
    if meta.get("closed_loop"):
        parts.append("closed")
    return "-".join(parts)


def _parse_log_arg(text: str):
    tag, sep, path = text.partition("=")
    return (tag, path) if sep and tag else (None, text)


def reduction(base: float, cand: float) -> float:
    """Percent RMSE reduction of ``cand`` relative to ``base``."""
    return 100.0 * (base - cand) / base if base > 0 else 0.0


def cmd_eval(args) -> int:
    groups: dict[str, list] = {}
    for item in args.logs:
        tag, path = _parse_log_arg(item)
        path = Path(path)
        if not path.is_file():
            raise RunFailure(f"no such log {path}")
        try:
            log = RunLog.load(path)
        except (OSError, ValueError, KeyError) as exc:
            raise RunFailure(f"cannot read log {path}: {exc}") from None
        groups.setdefault(tag or run_label(log.meta), []).append((path, log))

    table = {}
    for tag, entries in groups.items():
        ms = [metrics(lg, lg.meta.get("burn_in", 1.0)) for _, lg in entries]
        rmse = np.array([m["rmse"] for m in ms])
        trk = np.array([m["tracking_rmse"] for m in ms])
        table[tag] = {
            "n": len(ms),
            "rmse_mean": float(rmse.mean()),
            "rmse_std": float(rmse.std()),
            "tracking_rmse_mean": float(trk.mean()),
            "diverged": int(sum(m["diverged"] for m in ms)),
            "trajectory": entries[0][1].meta["trajectory"],
            "logs": [str(p) for p, _ in entries],
        }

    pairs = [tuple(c.split(":", 1)) for c in args.compare]
    if not pairs and len(table) == 2:
        pairs = [tuple(table)]
    comparisons = []
    for base, cand in pairs:
        for tag in (base, cand):
            if tag not in table:
                raise UsageError(f"unknown tag {tag!r} in --compare; known: {sorted(table)}")
        trajs = [lg.meta["trajectory"] for tag in (base, cand) for _, lg in groups[tag]]
        if any(t != trajs[0] for t in trajs):
            raise RunFailure(f"refusing to compare {base} and {cand}: logs use different trajectories")
        comparisons.append({"baseline": base, "candidate": cand,
                            "reduction_pct": reduction(table[base]["rmse_mean"], table[cand]["rmse_mean"])})

    print(f"{'tag':<28s} {'n':>3s} {'rmse [m]':>17s} {'tracking [m]':>12s} {'diverged':>8s}")
    for tag, row in table.items():
        print(f"{tag:<28s} {row['n']:3d} {row['rmse_mean']:8.4f}±{row['rmse_std']:<8.4f} "
              f"{row['tracking_rmse_mean']:12.4f} {row['diverged']:4d}/{row['n']}")
    for c in comparisons:
        print(f"{c['candidate']} vs {c['baseline']}: RMSE reduction {c['reduction_pct']:.1f}%")
    if args.json:
        doc = {"runs": table, "comparisons": comparisons}
        with atomic_output(args.json) as tmp:
            tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# --- export-weights ---------------------------------------------------------

def cmd_export_weights(args) -> int:
    expected = Mode.parse(args.mode) if args.mode else None
    try:
        model = load_weights(args.input, expected_mode=expected)
    except OSError as exc:
        raise RunFailure(f"cannot read {args.input}: {exc.strerror}") from None
    except (WeightFileError, ValueError) as exc:
        raise RunFailure(f"{args.input}: {exc}") from None
    blob = weights_to_bytes(model)
    again = weights_from_bytes(blob, expected_mode=model.mode)
    if weights_to_bytes(again) != blob or any(
        a.tobytes() != b.tobytes() for a, b in zip(model.params(), again.params())
    ):
        raise RunFailure("weight round-trip is not bit-exact")
    with atomic_output(args.output) as tmp:
        tmp.write_bytes(blob)
    dims = "x".join(str(d) for d in model.layer_dims)
    print(f"exported {model.mode.value} model ({dims}, {len(blob)} bytes) to {args.output}; round-trip exact")
    return EXIT_OK


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    d = DEFAULTS
    parser = argparse.ArgumentParser(
        prog="uwbcal",
        description="Learned UWB bias compensation and outlier rejection: data, training and simulation.",
    )
    parser.add_argument("--version", action="version", version=f"uwbcal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p):
        p.add_argument("--config", metavar="TOML", help="experiment config file (default: built-in defaults)")

    p = sub.add_parser("gen-data", help="simulate training flights and write a dataset CSV")
    common(p)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--mode", type=_mode, help=f"ranging mode twr|tdoa (default: {d.run.mode})")
    p.add_argument("--seed", type=int, help=f"dataset seed (default: {d.dataset.seed})")
    p.add_argument("--n-flights", type=int, help=f"number of flights (default: {d.dataset.n_flights})")
    p.add_argument("--flight-duration", type=float,
                   help=f"seconds per flight (default: {d.dataset.flight_duration})")
    p.add_argument("--rate", type=float, help=f"logging rate in Hz (default: {d.dataset.rate})")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the bias network on a dataset CSV")
    common(p)
    p.add_argument("dataset", help="dataset CSV written by gen-data")
    p.add_argument("--out", required=True, help="output weight file")
    p.add_argument("--history", help="per-epoch loss CSV (default: <out>.history.csv)")
    p.add_argument("--xi", type=float, help=f"drop samples with |target| above this, m "
                                            f"(default: {d.train.xi_threshold})")
    p.add_argument("--split", type=float, help=f"training fraction (default: {d.train.split_fraction})")
    p.add_argument("--lr", type=float, help=f"SGD learning rate (default: {d.train.learning_rate})")
    p.add_argument("--batch-size", type=int, help=f"mini-batch size (default: {d.train.batch_size})")
    p.add_argument("--epochs", type=int, help=f"training epochs (default: {d.train.epochs})")
    p.add_argument("--seed", type=int, help=f"shuffle/init seed (default: {d.train.seed})")
    p.set_defaults(func=cmd_train)

    on_off = {True: "on", False: "off"}
    p = sub.add_parser("simulate", help="run open- or closed-loop estimation experiments")
    common(p)
    p.add_argument("--mode", type=_mode, help=f"ranging mode twr|tdoa (default: {d.run.mode})")
    p.add_argument("--compensation", type=_on_off, metavar="on|off",
                   help=f"NN bias compensation (default: {on_off[d.run.compensation]})")
    p.add_argument("--rejection", type=_on_off, metavar="on|off",
                   help=f"dynamics and chi-squared gates (default: {on_off[d.run.rejection]})")
    p.add_argument("--closed-loop", action="store_const", const=True,
                   help="fly the tag with a controller fed by the estimate (default: open loop)")
    p.add_argument("--model", help="weight file; required with --compensation on (default: none)")
    p.add_argument("--seed", type=int, help=f"first seed (default: {d.run.seed})")
    p.add_argument("--seeds", type=int, help=f"number of consecutive seeds (default: {d.run.seeds})")
    p.add_argument("--trajectory", choices=KINDS, help=f"reference path (default: {d.trajectory.kind})")
    p.add_argument("--rate", type=float, help=f"measurement rate in Hz (default: {d.trajectory.sample_rate:g})")
    p.add_argument("--speed", type=float, help=f"reference speed in m/s (default: {d.trajectory.speed})")
    p.add_argument("--duration", type=float, help=f"run length in s (default: {d.trajectory.duration:g})")
    p.add_argument("--outlier-rate", type=float, help=f"NLOS spike probability (default: {d.noise.outlier_rate})")
    p.add_argument("--out", help="run log path (JSON lines; .seedN inserted for several seeds) "
                                 "(default: no log written)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default: 1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="tabulate run logs and compare RMSE between tags")
    p.add_argument("logs", nargs="+", metavar="[TAG=]LOG",
                   help="run logs; untagged logs are grouped by mode/compensation/rejection")
    p.add_argument("--compare", action="append", default=[], metavar="BASE:CAND",
                   help="report CAND's RMSE reduction relative to BASE (default: the two tags, if exactly two)")
    p.add_argument("--json", help="write the comparison as JSON here (default: none)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-weights", help="validate a weight file and re-serialize it")
    p.add_argument("input", help="weight file to read")
    p.add_argument("output", help="weight file to write")
    p.add_argument("--mode", type=_mode, help="require this ranging mode (default: accept either)")
    p.set_defaults(func=cmd_export_weights)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    prog = f"uwbcal {args.command}"
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"{prog}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RunFailure as exc:
        print(f"{prog}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError) as exc:
        print(f"{prog}: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
