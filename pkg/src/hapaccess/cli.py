"""Command-line entry point: ``hapaccess [--preset NAME | --config PATH] ...``.

Exit status is 0 on success, 1 for configuration errors and 2 when more
than 10% of the trials fail.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import MODES, PRESETS, ScenarioConfig, load_preset, load_scenario
from .errors import ConfigError
from .simulate import BASELINES, RunFailed, normalize_axis, run_scenario, summary_text, sweep

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("hapaccess")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hapaccess",
        description="Monte-Carlo simulator of grant-free access over cooperating HAPs.")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="scenario file (key = value lines)")
    src.add_argument("--preset", choices=PRESETS, help="shipped scenario")
    p.add_argument("--seed", type=int, help="master seed (overrides the file)")
    p.add_argument("--trials", type=int, help="number of trials (overrides the file)")
    p.add_argument("--mode", choices=MODES, help="processing mode (overrides the file)")
    p.add_argument("--sweep", metavar="AXIS=V1,V2,...",
                   help="sweep one axis: t_p, n_co, snr_db or k_a")
    p.add_argument("--variants", default="sic",
                   help=f"comma-separated processing variants for --sweep "
                        f"({', '.join(BASELINES)}); default: sic")
    p.add_argument("--workers", type=int, help="parallel trial workers")
    p.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def parse_sweep(text: str) -> tuple[str, list[str]]:
    if "=" not in text:
        raise ConfigError(f"--sweep expects AXIS=V1,V2,..., got {text!r}")
    axis, raw = text.split("=", 1)
    axis = normalize_axis(axis)
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if not values:
        raise ConfigError(f"--sweep {axis} has no values")
    try:
        [float(v) for v in values]
    except ValueError:
        raise ConfigError(f"--sweep {axis}: values must be numbers, got {raw!r}") from None
    return axis, values


def resolve_config(args) -> tuple[ScenarioConfig, set[str]]:
    if args.config is not None:
        cfg, explicit = load_scenario(args.config)
    elif args.preset is not None:
        cfg, explicit = load_preset(args.preset)
    else:
        cfg, explicit = ScenarioConfig(), set()
    overrides = {"master_seed": args.seed, "trials": args.trials, "mode": args.mode,
                 "workers": args.workers}
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        cfg = cfg.with_(**overrides)
        explicit |= set(overrides)
    return cfg, explicit


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, explicit = resolve_config(args)
        sweep_spec = parse_sweep(args.sweep) if args.sweep else None
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        bad = [v for v in variants if v not in BASELINES]
        if bad:
            raise ConfigError(f"unknown variant(s) {bad}; expected {', '.join(BASELINES)}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if sweep_spec is None:
            _, point = run_scenario(cfg, args.out, explicit)
            print(summary_text(cfg, point), end="")
        else:
            axis, values = sweep_spec
            points = sweep(cfg, axis, values, args.out, variants)
            for value, name, pt in points:
                aer = pt["aer"]
                print(f"{axis}={value} {name}: aer {aer.mean:.4g} +/- {aer.half_width:.2g} "
                      f"(n={pt.n_trials})")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunFailed as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {args.out}/")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
