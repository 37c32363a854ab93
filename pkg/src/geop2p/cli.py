"""Command-line entry point: ``geop2p run | audit | sweep``."""
from __future__ import annotations

import argparse
import csv
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Optional

from .harness import ChurnPlan, Scenario, ScenarioError, TraceError, audit_trace, run_scenario

# flag -> (Scenario field, parser)
OVERRIDES = {
    "seed": ("seed", int),
    "n": ("n_initial", int),
    "k": ("k", int),
    "theta_h": ("theta_h", int),
    "theta_l": ("theta_l", int),
    "scheme": ("scheme", str),
    "loss": ("loss_rate", float),
    "churn_rate": (None, float),
}


def apply_overrides(sc: Scenario, values: dict) -> Scenario:
    changes = {}
    for flag, v in values.items():
        if v is None:
            continue
        name, _ = OVERRIDES[flag]
        if name is not None:
            changes[name] = v
    out = Scenario.from_dict({**sc.to_dict(), **changes})
    rate = values.get("churn_rate")
    if rate is not None:
        base = out.churn or ChurnPlan(duration=10 * out.refresh_period, quiet=2 * out.refresh_period)
        out.churn = replace(base, join_rate=rate, leave_rate=rate)
    return out


def _add_overrides(p: argparse.ArgumentParser, multi: bool = False) -> None:
    for flag, (_, typ) in OVERRIDES.items():
        opt = "--" + flag.replace("_", "-")
        if multi:
            p.add_argument(opt, dest=flag, type=_listof(typ), metavar="V[,V...]")
        else:
            p.add_argument(opt, dest=flag, type=typ)


def _listof(typ):
    def parse(s):
        return [typ(x) for x in s.split(",") if x]
    parse.__name__ = f"list of {typ.__name__}"
    return parse


def _load(path: str) -> Scenario:
    return Scenario.load(path)


def _cmd_run(args) -> int:
    sc = apply_overrides(_load(args.scenario), {f: getattr(args, f) for f in OVERRIDES})
    os.makedirs(args.out, exist_ok=True)
    run, results = run_scenario(sc, args.trace)
    stem = os.path.join(args.out, sc.name)
    checks = {r.name: {"passed": r.passed, **r.details} for r in results}
    run.write_metrics(stem + ".csv", stem + ".json", extra={"checks": checks})
    for r in results:
        print(r.line())
    print(f"metrics: {stem}.csv {stem}.json")
    return 0 if all(r.passed for r in results) else 1


def _cmd_audit(args) -> int:
    rep = audit_trace(args.trace)
    for line in rep["checks"]:
        print(line)
    print(f"events recorded={rep['events']} replayed={rep['replayed_events']}")
    print(f"sha256 recorded={rep['recorded_sha256']}")
    print(f"sha256 replayed={rep['replayed_sha256']}")
    for i, why in rep["bad_wire"]:
        print(f"line {i}: {why}")
    print("MATCH" if rep["match"] else "MISMATCH")
    return 0 if rep["match"] else 1


def _sweep_cell(args: tuple) -> dict:
    base, cell = args
    row = {k: v for k, v in cell.items()}
    try:
        sc = apply_overrides(base, cell)
        run, results = run_scenario(sc)
    except (ScenarioError, ValueError) as exc:
        row["error"] = str(exc)
        return row
    s = run.summary()
    s.pop("messages", None)
    row.update(s)
    row["checks_passed"] = all(r.passed for r in results)
    row["failed_checks"] = ";".join(r.name for r in results if not r.passed)
    return row


def _cmd_sweep(args) -> int:
    base = _load(args.scenario)
    axes = {f: getattr(args, f) for f in OVERRIDES if getattr(args, f)}
    if not axes:
        print("sweep: give at least one parameter range, e.g. --k 2,4,8", file=sys.stderr)
        return 2
    names = list(axes)
    cells = [dict(zip(names, combo)) for combo in itertools.product(*axes.values())]
    work = [(base, c) for c in cells]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            rows = list(ex.map(_sweep_cell, work))
    else:
        rows = [_sweep_cell(w) for w in work]
    cols = list(dict.fromkeys(k for r in rows for k in r))
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    return 1 if any("error" in r or not r.get("checks_passed", True) for r in rows) else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geop2p", description="Geographic overlay simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run one scenario file")
    r.add_argument("scenario")
    r.add_argument("--out", default=".", help="directory for metrics CSV and JSON")
    r.add_argument("--trace", help="write the event trace here")
    _add_overrides(r)
    r.set_defaults(fn=_cmd_run)

    a = sub.add_parser("audit", help="replay a trace and compare")
    a.add_argument("trace")
    a.set_defaults(fn=_cmd_audit)

    s = sub.add_parser("sweep", help="run a scenario over parameter ranges")
    s.add_argument("scenario")
    s.add_argument("--out", help="CSV path (default stdout)")
    s.add_argument("--jobs", type=int, default=1)
    _add_overrides(s, multi=True)
    s.set_defaults(fn=_cmd_sweep)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except ScenarioError as exc:
        where = getattr(args, "scenario", "")
        print(f"error: {where}: {exc}", file=sys.stderr)
        return 2
    except (TraceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
