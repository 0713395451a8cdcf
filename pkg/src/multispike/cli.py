"""Command-line entry point: ``multispike <verb> [options]``.

Exit codes: 0 on success, 2 on domain or validation errors, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .classic_tests import ASYMPTOTIC_POWER, envelope_lambda, envelope_mu, envelope_w
from .errors import DataFormatError, DomainError, NumericalError
from .harness import FIGURES, TEST_NAMES, emit_figure, load_spec, report_json, run_data_test, run_experiment
from .limit_field import DEFAULT_CV_DRAWS, FieldKernel, build_grid, lr_critical_value, lr_power_curve, sample_grid
from .spiked_sim import SpikedParams, generate_data, stream, write_matrix


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _emit(rows: list[dict], args: argparse.Namespace) -> None:
    if args.format == "json":
        text = json.dumps(rows if len(rows) != 1 else rows[0], indent=2, sort_keys=True) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        text = buf.getvalue()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _grid(args: argparse.Namespace, variant: str):
    if args.p is not None and args.n is not None:
        return sample_grid(variant, args.p, args.n, args.r, args.points_per_axis, args.delta, args.theta_max)
    return build_grid(FieldKernel(variant, args.c), args.r, args.points_per_axis, args.delta, args.theta_max)


def cmd_envelope(args) -> None:
    rows = []
    for variant, env in (("lambda", envelope_lambda), ("mu", envelope_mu)):
        rows.append(
            {
                "variant": variant,
                "h": ";".join(f"{v:g}" for v in args.h),
                "c": args.c,
                "alpha": args.alpha,
                "W": envelope_w(args.h, args.c, variant),
                "envelope": env(args.h, args.c, args.alpha),
            }
        )
    _emit(rows, args)


def cmd_power_asym(args) -> None:
    rows = []
    for name in args.tests:
        if name not in ASYMPTOTIC_POWER:
            raise DomainError(f"no closed-form power for {name!r}; have {sorted(ASYMPTOTIC_POWER)}")
        rows.append({"test": name, "c": args.c, "alpha": args.alpha, "power": ASYMPTOTIC_POWER[name](args.h, args.c, args.alpha)})
    _emit(rows, args)


def cmd_critval(args) -> None:
    grid = _grid(args, args.variant)
    crit = lr_critical_value(grid, args.alpha, args.draws, args.seed)
    _emit(
        [
            {
                "variant": args.variant,
                "c": grid.kernel.c,
                "r": grid.r,
                "grid_points": grid.size,
                "delta": grid.delta,
                "alpha": args.alpha,
                "draws": args.draws,
                "seed": args.seed,
                "critical": crit,
            }
        ],
        args,
    )


def cmd_lr_power(args) -> None:
    grid = _grid(args, args.variant)
    crit = lr_critical_value(grid, args.alpha, args.draws, args.seed)
    power, se = lr_power_curve(grid, crit, [args.h], args.power_draws, args.seed)
    env = envelope_lambda if args.variant == "lambda" else envelope_mu
    _emit(
        [
            {
                "variant": args.variant,
                "h": ";".join(f"{v:g}" for v in args.h),
                "c": grid.kernel.c,
                "alpha": args.alpha,
                "critical": crit,
                "power": float(power[0]),
                "std_error": float(se[0]),
                "envelope": env(args.h, grid.kernel.c, args.alpha),
            }
        ],
        args,
    )


def cmd_test(args) -> None:
    grid_opts = {"points_per_axis": args.points_per_axis, "cv_draws": args.draws}
    outcomes = run_data_test(args.input, args.tests, args.alpha, args.sigma2, args.seed, grid_opts)
    _emit([o.to_dict() for o in outcomes], args)


def cmd_simulate(args) -> None:
    params = SpikedParams(args.p, args.n, tuple(args.h), args.sigma2, args.basis)
    if not args.out:
        raise DomainError("simulate needs --out (use a .csv suffix for text output)")
    out = Path(args.out)
    if args.reps == 1:
        write_matrix(generate_data(params, stream(args.seed, 0)), out)
        return
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".csv" if args.format == "csv" else ".bin"
    for i in range(args.reps):
        write_matrix(generate_data(params, stream(args.seed, i)), out / f"rep{i:05d}{suffix}")


def cmd_experiment(args) -> None:
    spec = load_spec(args.spec)
    overrides = {}
    if args.seed_given:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["workers"] = args.threads
    if args.out:
        overrides["output"] = args.out
    spec = replace(spec, **overrides)
    report = run_experiment(spec)
    if not spec.output:
        sys.stdout.write(report_json(report))


def cmd_figures(args) -> None:
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    params = {"alpha": args.alpha, "seed": args.seed}
    if args.draws is not None:
        params["cv_draws"] = args.draws
    if args.power_draws is not None:
        params["power_draws"] = args.power_draws
    for fig in args.ids:
        path = emit_figure(fig, params, out_dir / f"{fig}.csv")
        sys.stdout.write(f"{path}\n")


def build_parser() -> argparse.ArgumentParser:
    def global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
        # Flags may come before or after the verb; the verb-level copies must not reset them.
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--seed", type=int, default=d(0))
        p.add_argument("--threads", type=int, default=d(None), help="worker processes for experiments")
        p.add_argument("--out", default=d(None), help="output file or directory")
        p.add_argument("--format", choices=("csv", "json"), default=d("json"))

    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, suppress=True)
    parser = argparse.ArgumentParser(prog="multispike", description=__doc__.splitlines()[0])
    global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="verb", required=True)

    def add(name: str, func, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    def grid_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--variant", choices=("lambda", "mu"), default="lambda")
        p.add_argument("--c", type=float, default=None, help="aspect ratio for the asymptotic grid")
        p.add_argument("--p", type=int, default=None, help="with --n, build the finite-sample grid")
        p.add_argument("--n", type=int, default=None)
        p.add_argument("--r", type=int, default=2)
        p.add_argument("--points-per-axis", type=int, default=30)
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--theta-max", type=float, default=3.0)
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--draws", type=int, default=DEFAULT_CV_DRAWS, help="field draws for the critical value")

    p = add("envelope", cmd_envelope, "asymptotic power envelopes at a spike vector")
    p.add_argument("--h", type=_floats, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.05)

    p = add("power-asym", cmd_power_asym, "closed-form asymptotic powers of classical tests")
    p.add_argument("--h", type=_floats, required=True)
    p.add_argument("--c", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--tests", type=_names, default=list(ASYMPTOTIC_POWER))

    p = add("critval", cmd_critval, "simulated sup-LR critical value")
    grid_args(p)

    p = add("lr-power", cmd_lr_power, "asymptotic sup-LR power at a spike vector")
    grid_args(p)
    p.add_argument("--h", type=_floats, required=True)
    p.add_argument("--power-draws", type=int, default=20_000)

    p = add("test", cmd_test, "run the test battery on a data matrix")
    p.add_argument("input")
    p.add_argument("--tests", type=_names, default=None, help=f"subset of {','.join(TEST_NAMES)}")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--sigma2", type=float, default=None, help="known noise variance")
    p.add_argument("--points-per-axis", type=int, default=30)
    p.add_argument("--draws", type=int, default=DEFAULT_CV_DRAWS)

    p = add("simulate", cmd_simulate, "write simulated spiked data matrices")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--h", type=_floats, default=[])
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--basis", choices=("canonical", "haar"), default="canonical")
    p.add_argument("--reps", type=int, default=1)

    p = add("experiment", cmd_experiment, "run an experiment from a JSON/TOML spec file")
    p.add_argument("spec")

    p = add("figures", cmd_figures, "write figure curve data as CSV")
    p.add_argument("ids", nargs="*", default=list(FIGURES))
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--draws", type=int, default=None)
    p.add_argument("--power-draws", type=int, default=None)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    args.seed_given = any(a == "--seed" or a.startswith("--seed=") for a in argv)
    if args.verb in ("critval", "lr-power") and args.c is None and (args.p is None or args.n is None):
        sys.stderr.write("error: give --c or both --p and --n\n")
        return 2
    try:
        args.func(args)
    except (DomainError, DataFormatError, FileNotFoundError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
