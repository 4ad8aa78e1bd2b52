"""Command-line entry point: run scheme x seed sweeps and write metrics/summary CSVs."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .domain import ScenarioConfig, load_scenario, replace
from .errors import DTSliceError
from .harness import SchemeId, run_experiment, write_summary

log = logging.getLogger("dtslice")


def parse_seeds(text: str) -> list[int]:
    """``"0..9"`` (inclusive), ``"1,4,7"`` or a mix such as ``"0..2,10"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = (int(x) for x in part.split("..", 1))
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("no seeds given")
    return seeds


def parse_schemes(text: str) -> list[str]:
    out = []
    for name in text.split(","):
        name = name.strip().lower()
        if not name:
            continue
        try:
            out.append(SchemeId(name).value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"unknown scheme {name!r}") from None
    if not out:
        raise argparse.ArgumentTypeError("no schemes given")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dtslice", description=__doc__)
    p.add_argument("--config", type=Path, help="scenario TOML file (defaults if omitted)")
    p.add_argument("--schemes", type=parse_schemes, default=None,
                   help="comma-separated: proposed,optimization,heuristic")
    p.add_argument("--seeds", type=parse_seeds, default=[0], help='e.g. "0..9" or "0,3,5"')
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--trace", action="store_true", help="also write per-window user traces")
    p.add_argument("--windows", type=int, default=None, help="override the number of windows")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_scenario(args.config) if args.config else ScenarioConfig()
        if args.windows is not None:
            cfg = replace(cfg, sim_windows=args.windows)
    except (OSError, DTSliceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    schemes = args.schemes or list(cfg.schemes)
    args.out.mkdir(parents=True, exist_ok=True)
    trace_dir = args.out if args.trace else None

    t0 = time.perf_counter()
    metrics = run_experiment(cfg, schemes, args.seeds, trace_dir=trace_dir)
    metrics.write_csv(args.out / "metrics.csv")
    if metrics.records:
        write_summary(args.out / "summary.csv", metrics)
    log.info("done in %.1f s", time.perf_counter() - t0)
    for scheme, seed, msg in metrics.errors:
        print(f"cell ({scheme}, {seed}) failed: {msg}", file=sys.stderr)
    return 1 if metrics.errors else 0


if __name__ == "__main__":
    sys.exit(main())
