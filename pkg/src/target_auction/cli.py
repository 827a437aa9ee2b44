"""``target-auction`` command line.

Exit codes: 0 success, 1 input or usage error (JSON on stderr), 2 auction
did not sell, 3 a verified property was violated (report still written).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from ._validation import ValidationError
from .benchmark import SERIES, evaluate_records
from .core import (
    COMMON_THRESHOLD,
    DIVISIBILITY_MODES,
    RAW_THRESHOLD,
    AuctionConfig,
    classify_regime,
    clear_standard,
    clear_with_target,
    schedules_from_pairs,
)
from .data_io import (
    STRATEGIES,
    SyntheticParams,
    atomic_write_text,
    generate_synthetic_dataset,
    load_dataset,
    seo_frame,
)
from .econometrics import (
    MODELS,
    RankDeficientError,
    RegressionSpec,
    fit_ols,
    prepare_regression_frame,
    subsample_filter,
    winsorize_frame,
)
from .strategy import (
    STANDARD,
    TARGET,
    Shaded,
    ValueEnvironment,
    monte_carlo_revenue,
    prop2_sweep,
    verify_prop1,
    write_records_csv,
)

EXIT_OK, EXIT_INPUT, EXIT_NO_SALE, EXIT_VIOLATION = 0, 1, 2, 3


class CLIError(Exception):
    def __init__(self, message, kind="input", **extra):
        super().__init__(message)
        self.kind = kind
        self.extra = extra


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(f"{self.prog}: {message}", kind="usage")


# -- small helpers ---------------------------------------------------------------------

def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _names(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _emit(text, output):
    if output:
        atomic_write_text(output, text)
    else:
        sys.stdout.write(text)


def _existing(path, what="file"):
    p = Path(path)
    if not p.exists():
        raise CLIError(f"{what} not found: {path}")
    return p


def read_config_file(path):
    """``key = value`` lines; ``#`` starts a comment. Keys use flag spelling."""
    out = {}
    for n, line in enumerate(_existing(path, "config file").read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


# -- bids input for `clear` ---------------------------------------------------------------

def read_bids(path):
    """Bids as ``bidder_id,price,quantity`` CSV or ``{"bidder": [[p, q], ...]}`` JSON."""
    p = _existing(path, "bids file")
    text = p.read_text(encoding="utf-8")
    if p.suffix.lower() == ".json":
        try:
            data = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as e:
            raise CLIError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(data, dict):
            raise CLIError(f"{path}: expected an object mapping bidder to [[price, quantity], ...]")
        return {str(k): [tuple(pq) for pq in v] for k, v in data.items()}
    rows = csv.reader(ln for ln in io.StringIO(text) if not ln.startswith("#"))
    header = next(rows, None)
    if header is None:
        return {}
    if [h.strip() for h in header] != ["bidder_id", "price", "quantity"]:
        raise CLIError(f"{path}: header must be bidder_id,price,quantity")
    bids = {}
    for n, row in enumerate(rows, 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise CLIError(f"{path}:{n}: expected 3 fields")
        try:
            bids.setdefault(row[0].strip(), []).append((float(row[1]), float(row[2])))
        except ValueError:
            raise CLIError(f"{path}:{n}: price and quantity must be numbers") from None
    return bids


# -- subcommands ---------------------------------------------------------------------------

def cmd_clear(a):
    bids = read_bids(a.bids)
    cfg = AuctionConfig(a.reserve_price, a.share_cap, a.revenue_target, a.divisibility, a.tol)
    if a.standard:
        out = clear_standard(schedules_from_pairs(bids), cfg)
    else:
        if a.revenue_target is None:
            raise CLIError("--revenue-target is required unless --standard is given")
        out = clear_with_target(schedules_from_pairs(bids), cfg)
    report = out.to_dict()
    if a.revenue_target is not None:
        reg = classify_regime(a.reserve_price, a.share_cap, a.revenue_target, a.threshold, a.scale)
        report["regime"] = {"label": reg.label, "slack": reg.slack}
    _emit(_dump(report), a.output)
    return EXIT_OK if out.cleared else EXIT_NO_SALE


def _environment(a):
    return ValueEnvironment.common_value(a.bidders, a.value_low, a.value_high, a.noise, a.quantity)


def cmd_simulate(a):
    strategy = "truthful" if a.strategy == "truthful" else Shaded(a.first_fraction, a.later_fraction, a.split)
    cfg = AuctionConfig(a.reserve_price, a.share_cap, a.revenue_target, a.divisibility)
    mechs = [TARGET, STANDARD] if a.revenue_target is not None else [STANDARD]
    s = monte_carlo_revenue(_environment(a), cfg, strategy, a.trials, a.seed, mechs,
                            keep_records=bool(a.records), jobs=a.jobs)
    if a.records:
        buf = io.StringIO()
        write_records_csv(s.records, buf)
        atomic_write_text(a.records, buf.getvalue())
    _emit(_dump(s.to_dict()), a.output)
    return EXIT_OK


def cmd_verify(a):
    if a.proposition == "prop1":
        rep = verify_prop1(_environment(a), a.revenue_target, a.reserve_price, a.candidates,
                           a.trials, a.seed, a.tol, a.jobs)
        n_bad = len(rep.violations)
    else:
        rep = prop2_sweep(a.values, a.grid, a.units, a.reserve_price, a.share_cap, a.rival_profiles, a.seed)
        n_bad = len(rep.violations)
    _emit(_dump(rep.to_dict()), a.output)
    return EXIT_VIOLATION if n_bad else EXIT_OK


def cmd_benchmark(a):
    data = _existing(a.data, "data directory")
    seo_res, bid_res, merged = load_dataset(data)
    rep = evaluate_records(merged.records, a.series, a.panels, a.jobs)
    summary = rep.to_dict()
    summary["screening"] = {"seo": seo_res.ledger.to_dict(), "bids": bid_res.ledger.to_dict(),
                            "merge": merged.to_dict()}
    if a.output_dir:
        out = Path(a.output_dir)
        buf = io.StringIO()
        rep.write_csv(buf)
        atomic_write_text(out / "auctions.csv", buf.getvalue())
        atomic_write_text(out / "performance.json", _dump(summary))
    _emit(_dump(summary), a.output)
    return EXIT_OK


_NOT_WINSORIZED = {"exceed_reserve", "below_reserve", "underwriter"}


def cmd_regress(a):
    data = _existing(a.data, "data directory")
    seo_res, _, merged = load_dataset(data)
    df = seo_frame(seo_res.rows, merged.records)
    df = prepare_regression_frame(df, a.threshold, "raw", percent=a.percent)
    sub = subsample_filter(df, a.subsample, a.date_from, a.date_to)
    regressors = tuple(a.regressors) if a.regressors else MODELS[a.model]
    spec = RegressionSpec("discount", regressors, not a.no_industry, "HC1" if a.robust else "classical")
    frame = sub.frame
    if a.winsorize and len(frame):
        cols = [c for c in regressors if c in frame.columns and c not in _NOT_WINSORIZED]
        frame = winsorize_frame(frame, cols, *a.winsorize)
    try:
        res = fit_ols(spec, frame)
    except RankDeficientError as e:
        raise CLIError(str(e), kind="rank_deficient", columns=e.columns) from None
    if a.format == "json":
        body = res.to_dict()
        body["subsample"] = {"description": sub.description, "count": sub.count}
        text = _dump(body)
    else:
        text = f"Subsample: {sub.description} (n={sub.count})\n" + res.to_text() + "\n"
    _emit(text, a.output)
    return EXIT_OK


def cmd_gen_data(a):
    params = SyntheticParams(strategy=a.strategy, later_fraction=a.later_fraction, shaded_share=a.shaded_share)
    ds = generate_synthetic_dataset(a.n, params, a.seed, a.jobs)
    ds.write(a.output_dir)
    _emit(_dump({"auctions": len(ds.seo_rows), "bids": len(ds.bid_rows), "output_dir": str(a.output_dir)}), None)
    return EXIT_OK


# -- parser -------------------------------------------------------------------------------------

def _auction_flags(p, target_required=False, defaults=None):
    d = defaults or {}
    p.add_argument("--reserve-price", type=float, required="reserve_price" not in d,
                   default=d.get("reserve_price"), help="reserve price r")
    p.add_argument("--share-cap", type=float, required="share_cap" not in d,
                   default=d.get("share_cap"), help="maximum shares offered")
    p.add_argument("--revenue-target", type=float, required=target_required and "revenue_target" not in d,
                   default=d.get("revenue_target"), help="revenue target R")


def _env_flags(p):
    g = p.add_argument_group("value environment")
    g.add_argument("--bidders", type=int, default=4)
    g.add_argument("--value-low", type=float, default=8.0, help="common value lower bound")
    g.add_argument("--value-high", type=float, default=12.0, help="common value upper bound")
    g.add_argument("--noise", type=float, default=1.0, help="signal noise half-width")
    g.add_argument("--quantity", type=float, default=None, help="per-bidder demand (default cap/2)")


def _common(p, jobs=False, seed=False):
    p.add_argument("--output", "-o", help="write the report here instead of stdout")
    if seed:
        p.add_argument("--seed", type=int, default=0)
    if jobs:
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")


def build_parser():
    parser = _Parser(prog="target-auction",
                     description="Uniform-price auctions with a revenue target.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="key=value defaults file; flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("clear", help="clear one auction from a bids file")
    p.add_argument("bids", help="CSV (bidder_id,price,quantity) or JSON bids file")
    _auction_flags(p)
    p.add_argument("--standard", action="store_true", help="ignore the target (fixed-supply rule)")
    p.add_argument("--divisibility", choices=DIVISIBILITY_MODES, default="fractional")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--threshold", type=float, default=None,
                   help=f"regime band (default {RAW_THRESHOLD:g} raw file units, {COMMON_THRESHOLD:g} common)")
    p.add_argument("--scale", choices=("raw", "common"), default="common",
                   help="units of the auction flags for regime classification")
    _common(p)
    p.set_defaults(func=cmd_clear)

    p = sub.add_parser("simulate", help="Monte Carlo revenue under both clearing rules")
    _auction_flags(p, defaults={"reserve_price": 5.0, "share_cap": 200.0, "revenue_target": 1000.0})
    _env_flags(p)
    p.add_argument("--strategy", choices=("truthful", "shaded"), default="truthful")
    p.add_argument("--first-fraction", type=float, default=1.0)
    p.add_argument("--later-fraction", type=float, default=0.7)
    p.add_argument("--split", type=float, default=0.5)
    p.add_argument("--divisibility", choices=DIVISIBILITY_MODES, default="fractional")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--records", help="per-trial CSV path")
    _common(p, jobs=True, seed=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="check a proposition by simulation or enumeration")
    vsub = p.add_subparsers(dest="proposition", required=True, parser_class=_Parser)
    p1 = vsub.add_parser("prop1", help="R/r maximises revenue under truthful bids")
    p1.add_argument("--revenue-target", type=float, default=1000.0)
    p1.add_argument("--reserve-price", type=float, default=5.0)
    p1.add_argument("--candidates", type=_floats, default=None, help="comma-separated caps (must include R/r)")
    p1.add_argument("--trials", type=int, default=1000)
    p1.add_argument("--tol", type=float, default=1e-9)
    _env_flags(p1)
    _common(p1, jobs=True, seed=True)
    p1.set_defaults(func=cmd_verify)
    p2 = vsub.add_parser("prop2", help="best responses under both rules, exhaustive")
    p2.add_argument("--values", type=_floats, default=[10.0, 8.0])
    p2.add_argument("--grid", type=_floats, default=[3, 4, 5, 6, 7, 8, 9, 10])
    p2.add_argument("--units", type=int, default=3)
    p2.add_argument("--reserve-price", type=float, default=4.0)
    p2.add_argument("--share-cap", type=float, default=3.0)
    p2.add_argument("--rival-profiles", type=int, default=20)
    _common(p2, seed=True)
    p2.set_defaults(func=cmd_verify)

    p = sub.add_parser("benchmark", help="truthful benchmark and forecast metrics for a dataset")
    p.add_argument("data", help="directory with seo.csv and bids.csv")
    p.add_argument("--series", choices=SERIES, default="curve")
    p.add_argument("--panels", type=int, default=512)
    p.add_argument("--output-dir", help="write auctions.csv and performance.json here")
    _common(p, jobs=True)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("regress", help="discount regression on a dataset")
    p.add_argument("data", help="directory with seo.csv and bids.csv")
    p.add_argument("--model", choices=sorted(MODELS), default="model1")
    p.add_argument("--regressors", type=_names, help="comma-separated columns (overrides --model)")
    p.add_argument("--no-industry", action="store_true", help="omit industry dummies")
    p.add_argument("--robust", action="store_true", help="HC1 standard errors")
    p.add_argument("--winsorize", type=_floats, default=[1.0, 99.0],
                   help="lower,upper percentiles for continuous regressors; empty string disables")
    p.add_argument("--threshold", type=float, default=None, help="regime band (raw file units)")
    p.add_argument("--percent", action="store_true", help="discount in percent")
    p.add_argument("--subsample", choices=("institutional", "mixed"))
    p.add_argument("--date-from")
    p.add_argument("--date-to")
    p.add_argument("--format", choices=("text", "json"), default="text")
    _common(p)
    p.set_defaults(func=cmd_regress)

    p = sub.add_parser("gen-data", help="write a synthetic seo.csv / bids.csv / ledger.jsonl")
    p.add_argument("--n", type=int, default=1154)
    p.add_argument("--strategy", choices=STRATEGIES, default="truthful")
    p.add_argument("--later-fraction", type=float, default=0.7)
    p.add_argument("--shaded-share", type=float, default=0.5)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_gen_data)
    return parser


def _subparser_for(parser, argv_ns):
    """The innermost parser selected by ``argv_ns`` (for applying config defaults)."""
    def find(p, names):
        for action in p._actions:
            if isinstance(action, argparse._SubParsersAction):
                for name in names:
                    if name in action.choices:
                        return find(action.choices[name], names)
        return p
    names = [getattr(argv_ns, "command", None), getattr(argv_ns, "proposition", None)]
    return find(parser, [n for n in names if n])


def _apply_config(parser, ns, argv):
    values = read_config_file(ns.config)
    target = _subparser_for(parser, ns)
    known = {a.dest: a for a in target._actions}
    defaults = {}
    for key, raw in values.items():
        if key not in known:
            raise CLIError(f"unknown config key {key!r}")
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as e:
                raise CLIError(f"config key {key!r}: {e}") from None
        else:
            defaults[key] = raw
        action.required = False
    target.set_defaults(**defaults)
    return parser.parse_args(argv)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        try:
            ns = parser.parse_args(argv)
        except CLIError:
            # required flags may come from the config file
            if "--config" not in argv:
                raise
            pre = _Parser(add_help=False)
            pre.add_argument("--config")
            cfg_ns, _ = pre.parse_known_args(argv)
            ns = argparse.Namespace(config=cfg_ns.config, command=None, proposition=None)
            for tok in argv:
                if tok in ("clear", "simulate", "verify", "benchmark", "regress", "gen-data"):
                    ns.command = tok
                elif ns.command == "verify" and tok in ("prop1", "prop2"):
                    ns.proposition = tok
            ns = _apply_config(parser, ns, argv)
        else:
            if ns.config:
                ns = _apply_config(parser, ns, argv)
        logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if hasattr(ns, "jobs") and ns.jobs < 1:
            raise CLIError("--jobs must be >= 1")
        return ns.func(ns)
    except CLIError as e:
        _error(e.kind, str(e), **e.extra)
    except ValidationError as e:
        _error(type(e).__name__, str(e), **_error_fields(e))
    except OSError as e:
        _error("io", str(e))
    return EXIT_INPUT


def _error_fields(e):
    out = {}
    for attr in ("bidder_id", "columns", "keys"):
        if hasattr(e, attr):
            out[attr] = getattr(e, attr)
    return out


def _error(kind, message, **extra):
    payload = {"error": kind, "message": message, **extra}
    sys.stderr.write(json.dumps(payload, default=str) + "\n")


def main():
    sys.exit(run())


if __name__ == "__main__":  # pragma: no cover
    main()
