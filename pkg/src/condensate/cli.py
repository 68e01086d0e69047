"""``condensate-sim`` command line.

Exit status: 0 success, 1 bad configuration or arguments, 2 acceptance
failure (``verify``), 3 runtime error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import ConfigError, ExperimentConfig, run, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_ACCEPTANCE, EXIT_RUNTIME = 0, 1, 2, 3

COMMANDS = {
    "simulate-ip": ("ip-sim", "simulate the particle system and record observables"),
    "solve-ode": ("ode", "integrate the slow-phase control ODE"),
    "simulate-wf": ("wf", "simulate the modulated Wright-Fisher diffusion"),
    "sample-pd": ("pd-sample", "sample Poisson-Dirichlet vectors and estimate moments"),
    "moments": ("moments", "solve the moment hierarchy"),
    "verify": ("verify", "run the acceptance checks"),
    "figure2": ("figure2", "fast-phase mass curves for A=1 against the closed form"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="condensate-sim", description="Condensation in inclusion processes: simulators and solvers.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        s = sub.add_parser(name, help=help_, description=help_)
        s.add_argument("--config", type=Path, help="JSON experiment file")
        s.add_argument("--seed", type=int, help="master seed (overrides the file)")
        s.add_argument("--replicas", type=int, help="number of replicas (overrides the file)")
        s.add_argument("--out", type=Path, help="output directory; stdout when omitted")
        s.add_argument("--format", choices=("csv", "json"), default="csv")
        if name == "simulate-ip":
            s.add_argument("--jobs", type=int, default=1, help="worker processes for replicas")
        if name == "verify":
            s.add_argument("--only", help="comma-separated criterion numbers (default: all)")
            s.add_argument("--no-repro", action="store_true", help="skip the second reproducibility pass")
    return p


def load_config(kind: str, args) -> ExperimentConfig:
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg = ExperimentConfig.loads(text)
        if cfg.kind != kind:
            raise ConfigError(f"config kind {cfg.kind!r} does not match command ({kind!r})")
    else:
        cfg = ExperimentConfig(kind=kind)
    return cfg.with_overrides(master_seed=args.seed, replicas=args.replicas)


def _verify(args) -> int:
    from .verify import CRITERIA, run_verify

    seed = args.seed if args.seed is not None else 0
    which = None
    if args.only:
        try:
            which = [int(v) for v in args.only.split(",")]
        except ValueError:
            raise ConfigError(f"--only expects integers, got {args.only!r}") from None
        bad = [n for n in which if n not in CRITERIA]
        if bad:
            raise ConfigError(f"unknown criteria {bad}")
    report = run_verify(seed, out_dir=args.out, which=which, echo=print, repro=not args.no_repro)
    print(f"{sum(r.passed for r in report.results)}/{len(report.results)} criteria passed")
    return EXIT_OK if report.passed else EXIT_ACCEPTANCE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    kind = COMMANDS[args.command][0]
    try:
        if kind == "verify":
            return _verify(args)
        cfg = load_config(kind, args)
        res = run(cfg, n_jobs=getattr(args, "jobs", 1))
        if args.out is not None:
            for path in write_outputs(res, args.out, fmt=args.format):
                print(path, file=sys.stderr)
        else:
            sys.stdout.write(res.to_csv() if args.format == "csv" else res.to_json())
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
