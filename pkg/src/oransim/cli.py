"""Command-line entry point: ``oransim <command> [--config PATH] [--seed N] [--mode det|live] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 runtime error. Set
``ORANSIM_LOG`` (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import harness
from .errors import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

COMMANDS = ("gen-data", "train", "sweep", "distill", "advtrain", "run-loop", "report")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oransim", description="Adversarial xApp experiments on a simulated O-RAN loop")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("det", "live"))
    p.add_argument("--out", help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a single config key (repeatable)")
    return p


def build_config(args) -> harness.ExperimentConfig:
    pairs = harness.parse_config_text(Path(args.config).read_text()) if args.config else {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k] = v
    for key, val in (("seed", args.seed), ("mode", args.mode), ("out", args.out)):
        if val is not None:
            pairs[key] = str(val)
    return harness.config_from_pairs(pairs)


def _report(cfg: harness.ExperimentConfig) -> None:
    """Collect existing sweep and loop outputs into ``report.txt``."""
    out = Path(cfg.out)
    lines = []
    for f in sorted((out / "sweep").glob("*.csv")):
        rows = f.read_text().splitlines()[1:]
        lines.append(f"sweep {f.stem}: " + " ".join(r.replace(",", ":") for r in rows))
    for f in sorted((out / "loop").glob("*/summary.txt")):
        lines.extend(f"loop {f.parent.name} {line}" for line in f.read_text().splitlines())
    for f in sorted((out / "loop").glob("*/timing.csv")):
        lines.extend(f"timing {f.parent.name} {line}" for line in f.read_text().splitlines())
    if not lines:
        raise FileNotFoundError(f"nothing to report under {out}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def run(cfg: harness.ExperimentConfig, command: str) -> None:
    if command == "gen-data":
        for v in cfg.variants:
            harness.ensure_dataset(cfg, v)
    elif command == "train":
        for v in cfg.variants:
            harness.train_undefended(cfg, v)
    elif command == "distill":
        for v in cfg.variants:
            harness.train_distilled(cfg, v)
    elif command == "advtrain":
        for v in cfg.variants:
            harness.train_advtrained(cfg, v)
    elif command == "sweep":
        for key, rows in harness.run_sweeps(cfg).items():
            print(" ".join(key), " ".join(f"{e:g}:{a:.3f}" for e, a in rows))
    elif command == "run-loop":
        rep = harness.run_closed_loop(cfg)
        print(harness.summary_text(rep), end="")
    elif command == "report":
        _report(cfg)


def main(argv=None) -> int:
    level = os.environ.get("ORANSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING) if not level.isdigit() else int(level),
                        format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        cfg = build_config(args)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        run(cfg, args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # reported, not raised: the exit code carries it
        logging.getLogger("oransim").debug("failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
