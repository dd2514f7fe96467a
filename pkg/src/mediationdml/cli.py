"""Command-line interface: ``estimate``, ``simulate`` and ``verify``.

Exit codes: 0 success, 1 usage error, 2 data or fitting error,
3 failed verification.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .data import Dataset, validate_dataset
from .effects import estimate_effects
from .errors import MediationError, ParseError
from .scores import DEFAULT_TRIM

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
MISSING_TOKENS = frozenset({"", "na", "nan", "null", "."})


class UsageError(Exception):
    pass


# --- canonical JSON ----------------------------------------------------------


def _json_scalar(value) -> str:
    if value is None or isinstance(value, bool):
        return {None: "null", True: "true", False: "false"}[value]
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return "null"
        text = format(value, ".17g")
        if value == int(value) and abs(value) < 1e17 and "e" not in text:
            return text + ".0"
        return text
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def canonical_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with insertion-ordered keys and floats at 17 significant digits.

    Re-parsing the output and serializing again gives identical bytes.
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json_scalar(str(k))}: {canonical_json(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + canonical_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    return _json_scalar(obj)


# --- CSV ingestion -----------------------------------------------------------


@dataclass(frozen=True)
class CsvData:
    dataset: Dataset
    covariates: list[str]
    rows_read: int
    rows_dropped: int


def _parse_number(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"non-numeric value {text!r}", row, column) from None


def read_csv(path: str | Path, outcome: str, treatment: str, mediator: str,
             covariates: list[str] | None = None) -> CsvData:
    """Load the referenced columns of a CSV file with a header row.

    Rows with a missing value in any referenced column are dropped and
    counted. Treatment and mediator cells must be 0 or 1.
    """
    roles = [outcome, treatment, mediator]
    if len(set(roles)) != 3:
        raise UsageError("outcome, treatment and mediator must be distinct columns")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("file is empty") from None
        if len(set(header)) != len(header):
            raise ParseError("duplicate column names in header")
        missing = [c for c in roles + (covariates or []) if c not in header]
        if missing:
            raise UsageError(f"columns not found in header: {', '.join(missing)}")
        if covariates is None:
            covariates = [c for c in header if c not in roles]
        if set(covariates) & set(roles):
            raise UsageError("covariates may not include the outcome, treatment or mediator")
        if not covariates:
            raise UsageError("at least one covariate column is required")
        used = roles + covariates
        pos = [header.index(c) for c in used]
        values, dropped, read = [], 0, 0
        for row_no, record in enumerate(reader, start=1):
            if not record:
                continue
            read += 1
            if len(record) != len(header):
                raise ParseError(f"expected {len(header)} fields, found {len(record)}", row_no)
            cells = [record[i].strip() for i in pos]
            if any(c.lower() in MISSING_TOKENS for c in cells):
                dropped += 1
                continue
            parsed = [_parse_number(c, row_no, name) for c, name in zip(cells, used)]
            for value, name in zip(parsed[1:3], used[1:3]):
                if value not in (0.0, 1.0):
                    raise ParseError(f"value {value!r} is not binary", row_no, name)
            if not all(math.isfinite(v) for v in parsed):
                bad = next(name for v, name in zip(parsed, used) if not math.isfinite(v))
                raise ParseError("non-finite value", row_no, bad)
            values.append(parsed)
    if not values:
        raise ParseError("no complete rows")
    arr = np.asarray(values, dtype=float)
    data = validate_dataset(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3:])
    return CsvData(data, list(covariates), read, dropped)


# --- reports -----------------------------------------------------------------


def estimate_report(result, config: dict, csv_info: CsvData | None = None,
                    timings: dict | None = None) -> dict:
    effects = {
        est: {name: {"estimate": e.estimate, "se": e.se, "p": e.p_value}
              for name, e in rep.effects().items()}
        for est, rep in result.reports.items()
    }
    by_score = {
        label: {"estimate": cf.point, "se": cf.se, "retained": cf.retained_n,
                "trimmed": cf.trimmed_n}
        for label, cf in result.counterfactuals.items()
    }
    common = {est: dict(rep.counterfactuals) for est, rep in result.reports.items()}
    trimming = {
        "threshold": config.get("trim"),
        "estimators": {est: {"trimmed": rep.trimmed_n, "retained": rep.retained_n}
                       for est, rep in result.reports.items()},
    }
    cfg = dict(config)
    if csv_info is not None:
        cfg["covariates"] = csv_info.covariates
        cfg["rows"] = {"read": csv_info.rows_read, "dropped_missing": csv_info.rows_dropped,
                       "used": csv_info.dataset.n}
    return {
        "config": cfg,
        "effects": effects,
        "counterfactuals": {"by_score": by_score, "common_set": common},
        "trimming": trimming,
        "timings": timings,
    }


EFFECT_TITLES = {
    "delta": "total effect",
    "theta1": "direct effect theta(1)",
    "theta0": "direct effect theta(0)",
    "delta1": "indirect effect delta(1)",
    "delta0": "indirect effect delta(0)",
    "gamma0": "controlled direct gamma(0)",
    "gamma1": "controlled direct gamma(1)",
}


def estimate_table(report: dict) -> str:
    lines = []
    for est, effects in report["effects"].items():
        lines.append(f"{est}")
        lines.append(f"  {'effect':<28}{'estimate':>12}{'se':>12}{'p-value':>10}")
        for name, e in effects.items():
            lines.append(f"  {EFFECT_TITLES.get(name, name):<28}{e['estimate']:12.4f}"
                         f"{e['se']:12.4f}{e['p']:10.4f}")
        common = report["counterfactuals"]["common_set"][est]
        trim = report["trimming"]["estimators"][est]
        lines.append(f"  {'E[Y(0,M(0))]':<28}{common['Lambda_0']:12.4f}")
        lines.append(f"  trimmed {trim['trimmed']} of {trim['trimmed'] + trim['retained']}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --- commands ----------------------------------------------------------------


def cmd_estimate(args) -> int:
    if not 0.0 < args.trim < 0.5:
        raise UsageError("--trim must lie in (0, 0.5)")
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    covariates = None
    if args.covariates:
        covariates = [c.strip() for c in args.covariates.split(",") if c.strip()]
    start = time.perf_counter()
    info = read_csv(args.input, args.outcome, args.treatment, args.mediator, covariates)
    loaded = time.perf_counter()
    result = estimate_effects(info.dataset, K=args.folds, seed=args.seed, threshold=args.trim,
                              score=args.score, controlled_m=args.controlled_m)
    done = time.perf_counter()
    config = {
        "command": "estimate",
        "input": str(args.input),
        "outcome": args.outcome,
        "treatment": args.treatment,
        "mediator": args.mediator,
        "folds": args.folds,
        "trim": args.trim,
        "score": args.score,
        "controlled_m": args.controlled_m,
        "seed": args.seed,
        "version": __version__,
    }
    timings = {"load_seconds": loaded - start, "estimate_seconds": done - loaded} \
        if args.timings else None
    report = estimate_report(result, config, info, timings)
    text = canonical_json(report) + "\n" if args.format == "json" else estimate_table(report)
    _emit(text, args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .simulation import SimulationDesign, run_monte_carlo

    try:
        design = SimulationDesign(
            n=args.n, p=args.p, coef_scale=args.scale, sigma_kind=args.sigma,
            replications=args.reps, K=args.folds, threshold=args.trim, base_seed=args.seed,
            mediator_coef=args.mediator_coef, interaction_coef=args.interaction_coef,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    table = run_monte_carlo(design, n_jobs=args.jobs)
    parts = []
    if args.format in ("json", "both"):
        payload = table.to_dict()
        if args.timings:
            payload["timings"] = {"seconds": table.seconds}
        parts.append(canonical_json(payload) + "\n")
    if args.format in ("table", "both"):
        parts.append(table.to_text() + "\n")
    _emit("\n".join(parts), args.output)
    return EXIT_OK if table.valid else EXIT_DATA


def cmd_verify(args) -> int:
    from .properties import format_report, run_all

    suites = run_all(n=args.n, seed=args.seed, inject_nonorthogonal=args.inject_nonorthogonal)
    _emit(format_report(suites, verbose=args.verbose) + "\n", args.output)
    return EXIT_OK if all(s.passed for s in suites) else EXIT_VERIFY


# --- argument parsing --------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, fmt_choices, fmt_default) -> None:
    p.add_argument("--folds", type=int, default=3, help="number of cross-fitting folds")
    p.add_argument("--trim", type=float, default=DEFAULT_TRIM,
                   help="trimming threshold for score denominators")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", choices=fmt_choices, default=fmt_default)
    p.add_argument("--output", help="write to this file instead of stdout")
    p.add_argument("--timings", action="store_true",
                   help="include wall-clock timings (makes output non-reproducible)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mediationdml",
                     description="Double machine learning for causal mediation analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    est = sub.add_parser("estimate", help="estimate effects from a CSV file")
    est.add_argument("--input", required=True)
    est.add_argument("--outcome", required=True)
    est.add_argument("--treatment", required=True)
    est.add_argument("--mediator", required=True)
    est.add_argument("--covariates",
                     help="comma-separated covariate columns (default: all remaining)")
    est.add_argument("--score", choices=("theorem1", "theorem2", "both"), default="both")
    est.add_argument("--controlled-m", type=int, choices=(0, 1), default=None)
    _common(est, ("json", "table"), "json")
    est.set_defaults(func=cmd_estimate)

    sim = sub.add_parser("simulate", help="Monte Carlo study on the synthetic design")
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--p", type=int, default=200)
    sim.add_argument("--scale", type=float, default=0.3)
    sim.add_argument("--reps", type=int, default=250)
    sim.add_argument("--sigma", choices=("toeplitz", "identity"), default="toeplitz")
    sim.add_argument("--mediator-coef", type=float, default=1.0)
    sim.add_argument("--interaction-coef", type=float, default=0.5)
    sim.add_argument("--jobs", type=int, default=1)
    _common(sim, ("json", "table", "both"), "table")
    sim.set_defaults(func=cmd_simulate)

    ver = sub.add_parser("verify", help="run the score property suites")
    ver.add_argument("--n", type=int, default=100_000)
    ver.add_argument("--seed", type=int, default=20240101)
    ver.add_argument("--output")
    ver.add_argument("--verbose", action="store_true")
    ver.add_argument("--inject-nonorthogonal", action="store_true", help=argparse.SUPPRESS)
    ver.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mediationdml: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"mediationdml: error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_DATA
    except (MediationError, np.linalg.LinAlgError) as exc:
        print(f"mediationdml: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
