"""Command-line front end: ``wgcm {test,select,simulate,null-calibration}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 degenerate statistic.
Errors are reported on stderr as one line ``ErrorName:message``.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import os
import sys
import tempfile
from typing import Any, Sequence

import jsonschema

from . import __version__
from .citests import RESULT_SCHEMA, METHODS, MethodConfig, run_test, select_variables
from .datamodel import load_csv
from .errors import (
    DegenerateResiduals,
    DegenerateSplit,
    DimensionMismatch,
    EmptyData,
    IndexOutOfRange,
    MissingColumn,
    MissingFile,
    NonFinite,
    NotDecomposable,
    ParseError,
    TooFewSamples,
    WGCMError,
)
from .regress import RegressorSpec
from .simlab import SimSetting, rejection_rate

log = logging.getLogger("wgcm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 0, 1, 2, 3

DATA_ERRORS = (
    MissingFile, MissingColumn, ParseError, EmptyData, NonFinite, DimensionMismatch,
    TooFewSamples, DegenerateSplit, IndexOutOfRange,
)
DEGENERATE_ERRORS = (DegenerateResiduals, NotDecomposable)

REGRESSORS = {
    "boosted": "boosted_trees",
    "kernel": "kernel_smoother",
    "knn": "knn",
    "mean": "mean_only",
}
CLI_METHODS = [m.replace("_", "-") for m in METHODS]
B_GRID = "0,0.3333333333333333,0.6666666666666666,1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_method_options(p: argparse.ArgumentParser, multi: bool = False) -> None:
    if multi:
        p.add_argument("--methods", type=_names, default=["gcm", "wgcm-fix", "wgcm-est"],
                       help="comma-separated methods (default: gcm,wgcm-fix,wgcm-est)")
    else:
        p.add_argument("--method", choices=CLI_METHODS, default="wgcm-fix")
    p.add_argument("--regressor", choices=sorted(REGRESSORS), default="kernel")
    p.add_argument("--regressor-json", help="full regressor spec as JSON; overrides --regressor")
    p.add_argument("--k0", type=int, default=7)
    p.add_argument("--fraction", type=float, default=0.3)
    p.add_argument("--draws", type=int, default=10_000)
    p.add_argument("--min-weight-samples", type=int, default=20)
    p.add_argument("--seed", type=int, default=0, help="overridden by $WGCM_SEED when set")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wgcm", description="Weighted generalised covariance measure tests.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="test X independent of Y given Z on a CSV file")
    t.add_argument("--csv", required=True)
    t.add_argument("--x", type=_names, required=True)
    t.add_argument("--y", type=_names, required=True)
    t.add_argument("--z", type=_names, required=True)
    _add_method_options(t)
    t.add_argument("--out")
    t.add_argument("--format", choices=["json", "csv"], default="json")
    t.add_argument("--include-sigma", action="store_true", help="add the correlation matrix to the JSON")

    s = sub.add_parser("select", help="Holm-corrected variable selection")
    s.add_argument("--csv", required=True)
    s.add_argument("--y", required=True, help="target column")
    s.add_argument("--x", type=_names, help="predictor columns (default: every other column)")
    _add_method_options(s)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--out")
    s.add_argument("--format", choices=["json", "csv"], default="json")

    for name, help_text in (
        ("simulate", "rejection rates over a grid of synthetic settings"),
        ("null-calibration", "null rejection rates over the (b1, b2) grid"),
    ):
        m = sub.add_parser(name, help=help_text)
        if name == "simulate":
            m.add_argument("--family", choices=["motivating", "s1d", "s10d_add", "s10d_nonadd"],
                           default="motivating")
            m.add_argument("--lam", type=_floats, default=[0.0, 0.5, 1.0])
            m.add_argument("--b1", type=_floats, default=[0.0])
            m.add_argument("--b2", type=_floats, default=[0.0])
            m.add_argument("--c1", type=_floats, help="alternative: adds h(X; c1, c2) to Y")
            m.add_argument("--c2", type=_floats)
        else:
            m.add_argument("--families", type=_names, default=["s1d", "s10d_add", "s10d_nonadd"])
            m.add_argument("--b1", type=_floats, default=_floats(B_GRID))
            m.add_argument("--b2", type=_floats, default=_floats(B_GRID))
        m.add_argument("--n", type=int, default=200)
        m.add_argument("--replicates", type=int, default=100)
        m.add_argument("--alpha", type=float, default=0.05)
        _add_method_options(m, multi=True)
        m.add_argument("--out", help="directory for summary.csv, summary.json and per-replicate CSVs")
    return parser


def _seed(args) -> int:
    env = os.environ.get("WGCM_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"WGCM_SEED must be an integer, got {env!r}")
    return args.seed


def _config(args, method: str) -> MethodConfig:
    if args.regressor_json:
        try:
            reg = RegressorSpec.from_json(args.regressor_json)
        except (ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"bad --regressor-json: {exc}")
    else:
        reg = RegressorSpec(REGRESSORS[args.regressor])
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    if args.min_weight_samples < 1:
        raise UsageError("--min-weight-samples must be >= 1")
    return MethodConfig(
        method=method,
        regressor=reg,
        k0=args.k0,
        fraction=args.fraction,
        draws=args.draws,
        min_weight_samples=args.min_weight_samples,
    )


def write_atomic(path: str | None, text: str) -> None:
    """Write ``text`` to ``path`` (stdout when ``None``) via a temporary file and rename."""
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".wgcm-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(fieldnames: Sequence[str], rows: Sequence[dict[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _json_text(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_test(args) -> int:
    config = _config(args, args.method)
    ds = load_csv(args.csv, args.x, args.y, args.z)
    result = run_test(ds, config, _seed(args), args.threads)
    report = result.to_dict(include_sigma=args.include_sigma)
    jsonschema.validate(report, RESULT_SCHEMA)
    if args.format == "json":
        text = _json_text(report)
    else:
        rows = []
        for entry in result.per_statistic:
            w = entry["weight"]
            rows.append({
                "method": result.method,
                "statistic": repr(result.statistic),
                "p_value": repr(result.p_value),
                "p_bonferroni": "" if result.p_bonferroni is None else repr(result.p_bonferroni),
                "k_total": result.k_total,
                "n_main": result.n_main,
                "j": entry["j"],
                "l": entry["l"],
                "k": entry["k"],
                "t": repr(entry["t"]),
                "weight_form": w["form"],
                "weight_dim": w.get("dim", ""),
                "weight_threshold": repr(w["threshold"]) if "threshold" in w else "",
            })
        text = _csv_text(list(rows[0]), rows)
    write_atomic(args.out, text)
    return EXIT_OK


def cmd_select(args) -> int:
    config = _config(args, args.method)
    if not 0.0 <= args.alpha <= 1.0:
        raise UsageError("--alpha must lie in [0, 1]")
    predictors = args.x
    if predictors is None:
        if not os.path.isfile(args.csv):
            raise MissingFile(args.csv)
        with open(args.csv, newline="", encoding="utf-8") as handle:
            header = [h.strip() for h in next(csv.reader(handle), [])]
        predictors = [h for h in header if h != args.y]
    if len(predictors) < 2:
        raise UsageError("variable selection needs at least two predictor columns")
    ds = load_csv(args.csv, predictors, [args.y], predictors[:1])
    result = select_variables(ds.y[:, 0], ds.x, config, args.alpha, _seed(args), args.threads)
    if args.format == "json":
        report = result.to_dict()
        report["method"] = config.method
        report["variables"] = list(predictors)
        report["selected_names"] = [predictors[j] for j in result.selected]
        text = _json_text(report)
    else:
        rows = [
            {
                "variable": name,
                "raw_p": repr(float(result.raw_p[j])),
                "adjusted_p": repr(float(result.adjusted_p[j])),
                "selected": int(j in result.selected),
                "failed": int(j in result.failed),
            }
            for j, name in enumerate(predictors)
        ]
        text = _csv_text(["variable", "raw_p", "adjusted_p", "selected", "failed"], rows)
    write_atomic(args.out, text)
    return EXIT_OK


SUMMARY_FIELDS = [
    "family", "lam", "b1", "b2", "c1", "c2", "n", "method",
    "replicates", "failed", "reject_count", "rate",
]


def _run_grid(args, settings: list[SimSetting]) -> int:
    if args.replicates < 1:
        raise UsageError("--replicates must be >= 1")
    if not 0.0 <= args.alpha <= 1.0:
        raise UsageError("--alpha must lie in [0, 1]")
    base_seed = _seed(args)
    configs = [_config(args, m) for m in args.methods]
    rows = []
    files: dict[str, str] = {}
    for cell, setting in enumerate(settings):
        for config in configs:
            log.info("cell %d/%d %s %s", cell + 1, len(settings), setting.describe(), config.method)
            result = rejection_rate(
                setting, config, args.alpha, args.replicates, base_seed, args.threads
            )
            c1, c2 = setting.alternative if setting.alternative else ("", "")
            rows.append({
                "family": setting.family,
                "lam": setting.lam,
                "b1": setting.b1,
                "b2": setting.b2,
                "c1": c1,
                "c2": c2,
                "n": setting.n,
                "method": config.method,
                "replicates": args.replicates,
                "failed": result.failed,
                "reject_count": result.reject_count,
                "rate": repr(result.rate),
            })
            files[f"replicates/cell{cell:03d}_{config.method}.csv"] = result.to_csv()
    summary = _csv_text(SUMMARY_FIELDS, rows)
    if args.out is None:
        write_atomic(None, summary)
        return EXIT_OK
    for name, text in files.items():
        write_atomic(os.path.join(args.out, name), text)
    write_atomic(os.path.join(args.out, "summary.json"), _json_text({
        "schema_version": 1,
        "alpha": args.alpha,
        "base_seed": base_seed,
        "rows": rows,
    }))
    write_atomic(os.path.join(args.out, "summary.csv"), summary)
    return EXIT_OK


def cmd_simulate(args) -> int:
    alternatives: list[tuple[float, float] | None] = [None]
    if args.c1 is not None or args.c2 is not None:
        if args.c1 is None or args.c2 is None:
            raise UsageError("--c1 and --c2 must be given together")
        alternatives = list(itertools.product(args.c1, args.c2))
    if args.family == "motivating":
        grid = [dict(lam=lam) for lam in args.lam]
    else:
        grid = [dict(b1=b1, b2=b2) for b1, b2 in itertools.product(args.b1, args.b2)]
    settings = [
        SimSetting(args.family, args.n, alternative=alt, **params)
        for params in grid
        for alt in alternatives
    ]
    return _run_grid(args, settings)


def cmd_null_calibration(args) -> int:
    settings = [
        SimSetting(family, args.n, b1=b1, b2=b2)
        for family in args.families
        for b1, b2 in itertools.product(args.b1, args.b2)
    ]
    return _run_grid(args, settings)


COMMANDS = {
    "test": cmd_test,
    "select": cmd_select,
    "simulate": cmd_simulate,
    "null-calibration": cmd_null_calibration,
}


def _fail(code: int, exc: BaseException) -> int:
    message = " ".join(str(exc).split())
    sys.stderr.write(f"{type(exc).__name__}:{message}\n")
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    logging.basicConfig(
        level=logging.INFO if args.verbose or args.command in ("simulate", "null-calibration") else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except DATA_ERRORS as exc:
        return _fail(EXIT_DATA, exc)
    except DEGENERATE_ERRORS as exc:
        return _fail(EXIT_DEGENERATE, exc)
    except (WGCMError, jsonschema.ValidationError) as exc:
        return _fail(EXIT_USAGE, exc)


if __name__ == "__main__":
    sys.exit(main())
