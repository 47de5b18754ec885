"""
Command-line front end.

Exit codes: 0 success, 1 usage error, 2 infeasible input, 3 I/O error,
4 fit stopped at ``max_iter`` without converging (result still written).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .datagen import DataFormatError, SimScheme, paper_scheme_model, read_dataset_csv, simulate, write_dataset_csv
from .driver import FitConfig, fit
from .exceptions import ManlyError
from .model import MixtureModel
from .study import StudyConfig, render_text, report_to_json, run_loo_study, summarize, write_csv_exports

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_IO, EXIT_NOT_CONVERGED = 0, 1, 2, 3, 4
PAPER_SCHEME = "paper-3.1"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def _seed(text):
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return value


def _fail(code, message):
    print(f"manlyem: {message}", file=sys.stderr)
    return code


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(json.dumps(obj, indent=2, allow_nan=False) + "\n")


def _load_scheme_model(source) -> MixtureModel:
    if source == PAPER_SCHEME:
        return paper_scheme_model()
    doc = _read_json(source)
    return MixtureModel.from_dict(doc.get("model", doc))


def cmd_simulate(args):
    try:
        model = _load_scheme_model(args.scheme)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read scheme: {exc}")
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(EXIT_INFEASIBLE, f"invalid scheme: {exc}")
    scheme = SimScheme(model, args.n, args.seed)
    try:
        data = simulate(scheme)
    except ManlyError as exc:
        return _fail(EXIT_INFEASIBLE, f"infeasible scheme: {exc}")
    try:
        write_dataset_csv(args.out, data)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write {args.out}: {exc}")
    resolved = {"command": "simulate", "scheme": args.scheme, "model": model.to_dict(),
                "n": args.n, "seed": args.seed, "out": args.out}
    print(json.dumps(resolved))
    return EXIT_OK


def _load_warm(path) -> MixtureModel:
    doc = _read_json(path)
    # accept a bare model or a fit result wrapping one
    return MixtureModel.from_dict(doc["model"] if "components" not in doc else doc)


def cmd_fit(args):
    try:
        data = read_dataset_csv(args.data)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read {args.data}: {exc}")
    except DataFormatError as exc:
        return _fail(EXIT_IO, str(exc))
    warm = None
    if args.warm is not None:
        try:
            warm = _load_warm(args.warm)
        except OSError as exc:
            return _fail(EXIT_IO, f"cannot read {args.warm}: {exc}")
        except (ValueError, KeyError, TypeError) as exc:
            return _fail(EXIT_INFEASIBLE, f"invalid warm-start model: {exc}")
    config = FitConfig(
        algorithm=f"em_{args.algorithm}",
        G=args.G,
        max_iter=args.max_iter,
        rel_tol=args.rel_tol,
        init="given_model" if warm is not None else "kmeans_hard",
        seed=args.seed,
    )
    try:
        result = fit(data, config, warm)
    except (ManlyError, ValueError, ArithmeticError) as exc:
        return _fail(EXIT_INFEASIBLE, f"fit failed: {type(exc).__name__}: {exc}")
    out = {"config": {"data": args.data, "warm": args.warm, **config.to_dict()}}
    out.update(result.to_dict())
    try:
        _write_json(args.out, out)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write {args.out}: {exc}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def _sidecar_paths(out):
    stem = os.path.splitext(out)[0]
    return stem, f"{stem}_timings.json"


def cmd_study(args):
    try:
        if args.paper_scale:
            config = StudyConfig.paper_scale(seed=args.seed or 0)
        elif args.config is not None:
            config = StudyConfig.from_dict(_read_json(args.config))
        else:
            config = StudyConfig(seed=args.seed or 0)
        if args.seed is not None and args.config is not None:
            config = StudyConfig.from_dict({**config.to_dict(), "seed": args.seed})
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read {args.config}: {exc}")
    except (ValueError, KeyError, TypeError) as exc:
        return _fail(EXIT_INFEASIBLE, f"invalid study config: {exc}")
    try:
        report, timings = run_loo_study(config, workers=args.workers)
    except ManlyError as exc:
        return _fail(EXIT_INFEASIBLE, f"study failed: {type(exc).__name__}: {exc}")
    stem, timing_path = _sidecar_paths(args.out)
    try:
        with open(args.out, "w") as fh:
            fh.write(report_to_json(report))
        _write_json(timing_path, timings)
        write_csv_exports(stem, report, timings)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot write study output: {exc}")
    failures = report["summary"]["aggregate"]
    if failures["cold_failures"] or failures["warm_failures"]:
        print(f"manlyem: {failures['cold_failures']} cold and {failures['warm_failures']} "
              "warm subset fits failed (recorded in the report)", file=sys.stderr)
    sys.stdout.write(render_text(summarize(report, timings)))
    return EXIT_OK


def cmd_summarize(args):
    try:
        report = _read_json(args.report)
        timings = None
        timing_path = args.timings or _sidecar_paths(args.report)[1]
        if args.timings is not None or os.path.exists(timing_path):
            timings = _read_json(timing_path)
    except OSError as exc:
        return _fail(EXIT_IO, f"cannot read report: {exc}")
    except json.JSONDecodeError as exc:
        return _fail(EXIT_IO, f"malformed report: {exc}")
    try:
        summary = summarize(report, timings)
    except (KeyError, TypeError, ValueError) as exc:
        return _fail(EXIT_INFEASIBLE, f"report does not match the study schema: {exc}")
    if args.json:
        sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    else:
        sys.stdout.write(render_text(summary))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="manlyem", description="Manly-transformed mixture models fitted by EM.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a dataset from a mixture scheme")
    p.add_argument("--scheme", required=True, help=f"scheme JSON path or '{PAPER_SCHEME}'")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a mixture to a CSV dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--G", type=_positive_int, required=True)
    p.add_argument("--algorithm", choices=("gradient", "simplex"), default="gradient")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--warm", help="model or fit-result JSON to start from")
    p.add_argument("--max-iter", type=_positive_int, default=1000)
    p.add_argument("--rel-tol", type=float, default=1e-8)
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("study", help="run the leave-one-out subset study")
    p.add_argument("--config", help="study config JSON (default: desk-scale settings)")
    p.add_argument("--paper-scale", action="store_true", help="100 datasets, n=1000, all subsets")
    p.add_argument("--seed", type=_seed, default=None)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("summarize", help="tabulate a study report")
    p.add_argument("--report", required=True)
    p.add_argument("--timings", help="timings JSON (default: <report>_timings.json if present)")
    p.add_argument("--json", action="store_true", help="emit JSON instead of a text table")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "study" and args.paper_scale and args.config is not None:
        parser.error("--paper-scale and --config are mutually exclusive")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
