"""Command line entry point: ``thinplate <kind> [--config PATH] [--out DIR] [--threads N] [--seed S]``.

Exit status: 0 all checks passed, 1 a tolerance check failed, 2 the
configuration was rejected, 3 the run aborted (domain, stability or solver
failure).
"""

from __future__ import annotations

import argparse
import os
import sys

KINDS = ("simulate3d", "plate2d", "converge", "korn", "energy-audit", "material-check")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thinplate", description=__doc__.splitlines()[0])
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", help="YAML experiment config; its kind must match")
    p.add_argument("--out", help="output directory (default: config 'output' or runs/<kind>)")
    p.add_argument("--threads", type=int, help="BLAS/FFT thread count")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        # must precede the first numpy import to take effect
        for var in THREAD_VARS:
            os.environ[var] = str(args.threads)

    import yaml

    from .errors import ConfigError, ThinPlateError
    from .harness import ExperimentConfig, run

    try:
        raw = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    raw = yaml.safe_load(fh) or {}
            except OSError as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from None
            except yaml.YAMLError as exc:
                raise ConfigError(f"config is not valid YAML: {exc}") from None
            if not isinstance(raw, dict):
                raise ConfigError("config: expected a mapping")
        if raw.get("kind", args.kind) != args.kind:
            raise ConfigError(f"kind: config says {raw['kind']!r} but the command is {args.kind!r}")
        raw["kind"] = args.kind
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.threads is not None:
            raw["threads"] = args.threads
        cfg = ExperimentConfig.from_dict(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out or (raw.get("output") or os.path.join("runs", args.kind))
    try:
        record = run(cfg, out)
    except ThinPlateError as exc:
        print(f"aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT
    checks = record.metrics.get("checks", {})
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {args.kind}: {name}")
    print(f"record: {os.path.join(out, 'record.json')}")
    return EXIT_PASS if record.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
