"""Command line entry point: ``pinstripe <stage> [--config PATH] [--out DIR] ...``.

Exit codes: 0 all checks pass, 1 a verification check failed, 2 usage or
configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import default_config, load_config
from .errors import ConfigError
from .pipeline import STAGES, StageError, exit_code_for, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pinstripe",
                                description="Pinned stripe pipeline: " + " -> ".join(STAGES))
    p.add_argument("command", nargs="?", choices=STAGES,
                   help="stage to run (earlier stages run first if their artifacts are missing)")
    p.add_argument("--stage", choices=STAGES, help="same as the positional stage")
    p.add_argument("--config", help="sectioned key = value configuration file")
    p.add_argument("--out", help="output directory (overrides [output] output)")
    p.add_argument("--eps", type=float, action="append",
                   help="forcing amplitude; repeat to give several (overrides [solve] eps)")
    p.add_argument("--seed", type=int, help="seed for randomized checks")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    stage = args.stage or args.command
    if stage is None or (args.stage and args.command and args.stage != args.command):
        parser.print_usage(sys.stderr)
        print("pinstripe: give exactly one stage", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config) if args.config else default_config()
        eps = tuple(sorted(args.eps)) if args.eps else None
        cfg = cfg.with_overrides(eps=eps, seed=args.seed, output=args.out)
        result = run_pipeline(cfg, cfg.output, until=stage)
    except (StageError, ConfigError) as exc:
        print(f"pinstripe: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except Exception as exc:  # noqa: BLE001 - report and map to the numerical-failure code
        print(f"pinstripe: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    passed = result.get("passed", True)
    print(f"{stage}: {'pass' if passed else 'FAIL'} -> {cfg.output}")
    if not passed:
        for chk in result.get("checks", []):
            if not chk["passed"]:
                print(f"  failed {chk['name']}: {chk['value']:.3e} (limit {chk['threshold']:.3e})")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
