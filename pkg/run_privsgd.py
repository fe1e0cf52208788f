"""Command-line entry point: `python run_privsgd.py {run,tau-sim,calibrate,audit} ...`.

Exit status: 0 ok, 2 configuration error, 3 out-of-regime accountant input,
4 audit violation, 5 runs overran max_steps.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from privsgd import config
from privsgd.errors import EXIT_OK, ConfigurationError, PreconditionError, PrivSGDError, StepBudgetExceeded
from privsgd.exports import dumps
from privsgd.harness import cmd_audit, cmd_calibrate, cmd_run, cmd_tau_sim, load_spec
from privsgd.log import setup_logging
from privsgd.rng import fresh_seed

logger = logging.getLogger("privsgd.cli")


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _key_value(text: str) -> tuple:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip().lower(), value.strip()


def _resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    seed = fresh_seed()
    logger.warning("no --seed given; drew %d from OS entropy (recorded in outputs)", seed)
    return seed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run_privsgd",
        description="Private SGD experiments, stopping-time simulation, privacy calibration and audits.",
    )
    parser.add_argument("--log-level", default=None, help=f"logging level (default {config.LOG_LEVEL})")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid from a KEY=value config file")
    run.add_argument("--config", type=Path, default=None, help="flat KEY=value experiment file")
    run.add_argument("--name")
    run.add_argument("--n-values", help="comma-separated dataset sizes")
    run.add_argument("--epsilon-values", help="comma-separated epsilons; 'max' means 1/(2*sqrt(n))")
    run.add_argument("--repeats")
    run.add_argument("--seed")
    run.add_argument("--output-dir")
    run.add_argument("--sigma-override", help="fixed noise scale; 0 gives non-private SGD")
    run.add_argument("--workers")
    run.add_argument("--set", dest="params", action="append", type=_key_value, default=[],
                     metavar="KEY=VALUE", help="override any config key (repeatable)")

    tau = sub.add_parser("tau-sim", help="Monte-Carlo the stopping time for several n")
    tau.add_argument("--n-values", type=_int_list, required=True)
    tau.add_argument("--trials", type=int, default=10_000)
    tau.add_argument("--seed", type=int, default=None)
    tau.add_argument("--output-dir", type=Path, default=None)
    tau.add_argument("--name", default="tau")
    tau.add_argument("--workers", type=int, default=config.WORKERS)

    cal = sub.add_parser("calibrate", help="print sigma, eta, privacy report and risk bound as JSON")
    cal.add_argument("--n", type=int)
    cal.add_argument("--eps", type=float)
    cal.add_argument("--delta", type=float)
    cal.add_argument("--delta-prime", type=float)
    cal.add_argument("--L", type=float)
    cal.add_argument("--D", type=float)
    cal.add_argument("--d", type=int)
    cal.add_argument("--eps-bar", type=float)
    cal.add_argument("--delta-bar", type=float)

    audit = sub.add_parser("audit", help="empirical DP audit of a single noisy step")
    audit.add_argument("--L", type=float, default=1.0)
    audit.add_argument("--epsilon-tilde", type=float, default=0.5)
    audit.add_argument("--delta", type=float, default=1e-6)
    audit.add_argument("--sigma", type=float, default=None, help="noise scale (default: calibrated)")
    audit.add_argument("--sigma-scale", type=float, default=1.0, help="multiplier on the calibrated sigma")
    audit.add_argument("--trials", type=int, default=1_000_000)
    audit.add_argument("--intervals", type=int, default=500)
    audit.add_argument("--repeats", type=int, default=1)
    audit.add_argument("--seed", type=int, default=None)
    audit.add_argument("--output-dir", type=Path, default=None)
    audit.add_argument("--name", default="audit")
    audit.add_argument("--workers", type=int, default=config.WORKERS)
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "run":
        overrides = {
            "name": args.name,
            "n_values": args.n_values,
            "epsilon_values": args.epsilon_values,
            "repeats": args.repeats,
            "seed": args.seed,
            "output_dir": args.output_dir,
            "sigma_override": args.sigma_override,
            "workers": args.workers,
        }
        overrides.update(dict(args.params))
        result = cmd_run(load_spec(args.config, overrides))
        if result.degraded:
            raise StepBudgetExceeded("one or more cells had more than 1% of runs overrun max_steps")
        return EXIT_OK

    if args.command == "tau-sim":
        cmd_tau_sim(args.n_values, args.trials, _resolve_seed(args.seed), args.output_dir, args.name, args.workers)
        return EXIT_OK

    if args.command == "calibrate":
        payload = cmd_calibrate(n=args.n, eps=args.eps, delta=args.delta, delta_prime=args.delta_prime,
                                L=args.L, D=args.D, d=args.d, eps_bar=args.eps_bar, delta_bar=args.delta_bar)
        print(dumps(payload))
        return EXIT_OK

    if args.command == "audit":
        run = cmd_audit(L=args.L, epsilon_tilde=args.epsilon_tilde, delta=args.delta, sigma=args.sigma,
                        sigma_scale=args.sigma_scale, trials=args.trials, intervals=args.intervals,
                        repeats=args.repeats, seed=_resolve_seed(args.seed), output_dir=args.output_dir,
                        name=args.name, workers=args.workers)
        return run.exit_code

    raise ConfigurationError(f"unknown command {args.command!r}", field="command")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return _dispatch(args)
    except PreconditionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.inequality:
            print(f"violated: {exc.inequality}", file=sys.stderr)
        return exc.exit_code
    except PrivSGDError as exc:
        field = getattr(exc, "field", None)
        prefix = f"error [{field}]" if field else "error"
        print(f"{prefix}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
