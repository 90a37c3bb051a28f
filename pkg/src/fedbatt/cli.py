"""Command-line interface: run experiments, sweep parameters, check oracles.

Exit codes are a stable contract: 0 success, 1 invalid configuration (the
message names the offending key), 2 runtime invariant violation or a failed
oracle check.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import oracles
from .config import (config_from_dict, config_to_dict, dump_config,
                     load_config, reference_text, set_by_path)
from .devices import EnergyLedgerError
from .orchestrator import SCHEDULERS, ConfigError, Experiment

log = logging.getLogger("fedbatt")


def _emit(stream, payload: dict) -> None:
    stream.write(json.dumps(payload, sort_keys=True, separators=(",", ":")))
    stream.write("\n")
    stream.flush()


def _resolved_config(args):
    """Config file plus command-line overrides, re-validated as a whole."""
    raw = config_to_dict(load_config(args.config))
    if args.seed is not None:
        set_by_path(raw, "seed", args.seed)
    if args.scheduler is not None:
        set_by_path(raw, "run.scheduler", args.scheduler)
    if args.episodes is not None:
        set_by_path(raw, "run.episodes", args.episodes)
    if args.max_rounds is not None:
        set_by_path(raw, "run.max_rounds", args.max_rounds)
    cfg = config_from_dict(raw)
    cfg.validate()
    return cfg


def _run_into(cfg, out_dir: Path) -> dict:
    """Execute one experiment, streaming metrics.jsonl into `out_dir`."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(dump_config(cfg))
    experiment = Experiment(cfg)
    with open(out_dir / "metrics.jsonl", "w") as metrics:
        result = experiment.run(
            on_report=lambda record: _emit(metrics, record.to_dict()))
        summary = result.summary_dict()
        _emit(metrics, summary)
    return summary


def cmd_run(args) -> int:
    cfg = _resolved_config(args)
    out_dir = Path(args.out)
    log.info("running %s scheduler for %d episode(s) into %s",
             cfg.run.scheduler, cfg.run.episodes, out_dir)
    summary = _run_into(cfg, out_dir)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _scalar(token: str):
    token = token.strip()
    for kind in (int, float):
        try:
            return kind(token)
        except ValueError:
            pass
    return token


def parse_values(spec: str) -> list:
    """Sweep value list: ``a,b,c``, an inclusive integer range ``1..5``,
    ten evenly spaced points ``0.01..0.10``, or ``lo..hi:N`` for N points."""
    if "," in spec:
        return [_scalar(token) for token in spec.split(",")]
    if ".." in spec:
        head, _, count_text = spec.partition(":")
        lo_text, _, hi_text = head.partition("..")
        lo, hi = _scalar(lo_text), _scalar(hi_text)
        if isinstance(lo, str) or isinstance(hi, str):
            raise ConfigError(f"--values: range endpoints must be numbers "
                              f"({spec!r})")
        if count_text:
            try:
                count = int(count_text)
            except ValueError:
                raise ConfigError(f"--values: point count must be an integer "
                                  f"({spec!r})") from None
        elif isinstance(lo, int) and isinstance(hi, int):
            if hi < lo:
                raise ConfigError(f"--values: empty integer range ({spec!r})")
            return list(range(lo, hi + 1))
        else:
            count = 10
        if count < 1:
            raise ConfigError(f"--values: point count must be >= 1 ({spec!r})")
        points = np.linspace(float(lo), float(hi), count)
        values = [float(p) for p in points]
        if (isinstance(lo, int) and isinstance(hi, int)
                and all(v == int(v) for v in values)):
            return [int(v) for v in values]
        return values
    return [_scalar(spec)]


def _value_label(value) -> str:
    return f"{value:g}" if isinstance(value, float) else str(value)


_CSV_METRICS = ("episodes", "rounds_run", "best_accuracy", "best_round",
                "final_accuracy", "final_e_all")


def cmd_sweep(args) -> int:
    values = parse_values(args.values)
    base_raw = config_to_dict(_resolved_config(args))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        raw = copy.deepcopy(base_raw)
        set_by_path(raw, args.param, value)
        cfg = config_from_dict(raw)
        cfg.validate()
        label = f"{args.param}={_value_label(value)}"
        log.info("sweep point %s", label)
        summary = _run_into(cfg, out_dir / label)
        rows.append((value, summary))
    with open(out_dir / "sweep.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow((args.param,) + _CSV_METRICS + ("stop_reason",))
        for value, summary in rows:
            writer.writerow([_value_label(value)]
                            + [summary[k] for k in _CSV_METRICS]
                            + [summary["stop_reason"]])
        table = np.array([[float(summary[k]) for k in _CSV_METRICS]
                          for _, summary in rows])
        writer.writerow(["mean"] + [f"{v:.6g}" for v in table.mean(axis=0)]
                        + [""])
        writer.writerow(["std"] + [f"{v:.6g}" for v in table.std(axis=0)]
                        + [""])
    print(f"wrote {len(rows)} sweep points to {out_dir / 'sweep.csv'}")
    return 0


def _oracle_fedavg() -> tuple[bool, str]:
    observed = oracles.fedavg_trajectory_diff(rounds=10, seed=5)
    return observed < 1e-12, f"observed={observed:.3g}, bound=1e-12"


def _oracle_gradcheck() -> tuple[bool, str]:
    observed = oracles.gradcheck_max_rel_err(instances=56, seed=0)
    return observed < 1e-4, f"observed={observed:.3g}, bound=0.0001"


def _oracle_matrix_game() -> tuple[bool, str]:
    rates = {}
    for mode in ("qmix", "vdn"):
        rates[mode], _ = oracles.run_matrix_game(mode, budget=8000, seed=0,
                                                 eval_episodes=1000)
    observed = " ".join(f"{mode}:{rate:.3f}" for mode, rate in rates.items())
    return min(rates.values()) >= 0.95, f"observed={observed}, bound=0.95"


_ORACLES = {
    "fedavg": _oracle_fedavg,
    "gradcheck": _oracle_gradcheck,
    "matrix-game": _oracle_matrix_game,
}


def cmd_oracle(args) -> int:
    names = list(_ORACLES) if args.name == "all" else [args.name]
    all_passed = True
    for name in names:
        passed, detail = _ORACLES[name]()
        all_passed &= passed
        print(f"oracle {name}: {'PASS' if passed else 'FAIL'} ({detail})")
    return 0 if all_passed else 2


def cmd_reference(args) -> int:
    print(reference_text(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedbatt",
        description="Energy-aware federated learning simulator with a "
                    "cooperative reinforcement-learning scheduler.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p):
        p.add_argument("--config", help="YAML config file (defaults apply)")
        p.add_argument("--seed", type=int, help="override the experiment seed")
        p.add_argument("--scheduler", choices=SCHEDULERS,
                       help="override run.scheduler")
        p.add_argument("--episodes", type=int, help="override run.episodes")
        p.add_argument("--max-rounds", type=int,
                       help="override run.max_rounds")

    run_p = sub.add_parser("run", help="run one experiment")
    add_run_flags(run_p)
    run_p.add_argument("--out", default="fedbatt-run",
                       help="output directory (metrics.jsonl + config.yaml)")
    run_p.set_defaults(func=cmd_run)

    sweep_p = sub.add_parser("sweep",
                             help="run one experiment per parameter value")
    add_run_flags(sweep_p)
    sweep_p.add_argument("--out", default="fedbatt-sweep",
                         help="output directory (per-value subdirectories "
                              "+ sweep.csv)")
    sweep_p.add_argument("--param", required=True,
                         help="dotted config path, e.g. data.alpha")
    sweep_p.add_argument("--values", required=True,
                         help="comma list, integer range lo..hi, or "
                              "lo..hi[:N] evenly spaced points")
    sweep_p.set_defaults(func=cmd_sweep)

    oracle_p = sub.add_parser("oracle",
                              help="check the simulator against brute-force "
                                   "reference computations")
    oracle_p.add_argument("name", choices=sorted(_ORACLES) + ["all"])
    oracle_p.set_defaults(func=cmd_oracle)

    ref_p = sub.add_parser("reference",
                           help="print the annotated default configuration")
    ref_p.set_defaults(func=cmd_reference)
    return parser


def main(argv=None) -> int:
    level_name = os.environ.get("FEDBATT_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except EnergyLedgerError as e:
        print(f"error: energy accounting violated: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
