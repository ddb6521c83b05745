"""Command-line entry point: ``droidaudit <decode|compare|simulate|table>``.

Exit status is 0 when a command ran to completion (even if individual
records carry error statuses), 1 when an input cannot be read or parsed,
and 2 for bad arguments.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import capture, compare, sigtable, simulator

log = logging.getLogger("droidaudit")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_USAGE = 2


class InputError(Exception):
    """Raised for unreadable inputs; mapped to exit status 1."""


def _readable(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} {path!r} is not a readable file")
    return p


def _load_table(path: str | None) -> sigtable.SignatureTable:
    if path is None:
        return sigtable.load_sample_table()
    try:
        return sigtable.load_table(_readable(path, "table"))
    except sigtable.TableError as exc:
        raise InputError(f"{path}: {type(exc).__name__}: {exc}") from None


def cmd_decode(args: argparse.Namespace, out) -> int:
    table = _load_table(args.table)
    path = _readable(args.input, "capture")
    try:
        entries = capture.decode_capture(path, table, stability_footer=not args.no_stability_footer)
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None
    if args.format == "records":
        for e in entries:
            out.write(json.dumps(capture.entry_record(e), sort_keys=True) + "\n")
    else:
        for e in entries:
            out.write(capture.render_entry(e) + "\n\n")
    out.write(capture.summary_line(entries) + "\n")
    unknown = sum(e.status == "UnknownMethod" for e in entries)
    if unknown:
        # Usually a table built for a different build of the framework.
        built_for = table.meta.get("fingerprint", "an unrecorded build")
        log.warning("%d records had no table entry; the table was built for %s", unknown, built_for)
    return EXIT_OK


def _load_log(path: str, exclude: Sequence[int], arch: str) -> compare.TraceLog:
    try:
        return compare.load_log(_readable(path, "log"), exclude_pids=exclude, arch=arch)
    except (compare.ParseError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def cmd_compare(args: argparse.Namespace, out) -> int:
    a = _load_log(args.a, args.exclude_pid, args.arch)
    b = _load_log(args.b, args.exclude_pid, args.arch)
    if args.offset is not None:
        offset = args.offset
    else:
        try:
            offset = compare.compute_offset(a, b)
        except compare.NoAnchor as exc:
            log.error("%s; pass --offset", exc)
            return EXIT_INPUT
    try:
        result = compare.match_events(a, b, offset, max_skew_ns=args.max_skew)
        ua, ub = compare.uer(result)
    except compare.CompareError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    out.write(
        f"offset={offset}  window={result.window[0]}..{result.window[1]}  id={result.id_key}\n"
        f"matched={result.matched}  unique_a={result.unique_a}  unique_b={result.unique_b}  "
        f"union={result.union}\n"
        f"UER A {100 * ua:.2f}% / B {100 * ub:.2f}%\n"
    )
    if args.csv:
        rec = compare.run_record(args.app or Path(args.a).stem, result)
        csv_path = Path(args.csv)
        existing = compare.read_aggregate_csv(csv_path.read_text()) if csv_path.is_file() else []
        rows = [{"app_id": r["app"], "uer_b_pct": r["FT"], "uer_a_pct": r["WD"]} for r in existing]
        csv_path.write_text(compare.aggregate_csv(rows + [rec]))
    return EXIT_OK


def _sweep_spec(text: str) -> tuple[str, list]:
    name, sep, values = text.partition("=")
    if not sep or not values:
        raise argparse.ArgumentTypeError("expected PARAM=V1,V2,...")
    try:
        parsed = [json.loads(v) for v in values.split(",")]
    except json.JSONDecodeError:
        raise argparse.ArgumentTypeError(f"bad sweep values {values!r}") from None
    return name.strip(), parsed


def cmd_simulate(args: argparse.Namespace, out) -> int:
    try:
        config, workload = simulator.load_simulation(_readable(args.config, "config"))
        if args.sweep:
            param, values = args.sweep
            rows = simulator.sweep(config, workload, args.seed, param, values)
            out.write(simulator.reports_to_csv(rows, param))
        else:
            report = simulator.simulate_buffers(config, workload, args.seed)
            out.write(json.dumps(report.to_record(), sort_keys=True) + "\n")
    except simulator.InvalidConfig as exc:
        raise InputError(f"InvalidConfig: {exc}") from None
    return EXIT_OK


def cmd_table(args: argparse.Namespace, out) -> int:
    if args.action == "sample":
        text = sigtable.sample_table_path().read_text(encoding="utf-8")
        if args.file:
            Path(args.file).write_text(text, encoding="utf-8")
            out.write(f"wrote {args.file}\n")
        else:
            out.write(text)
        return EXIT_OK

    table = _load_table(args.file)
    if args.action == "validate":
        diags = sigtable.validate_table(table)
        for d in diags:
            out.write(f"{d}\n")
        out.write(f"{len(diags)} diagnostics\n")
        return EXIT_OK

    shown = 0
    for sig in table:
        if args.interface and args.interface not in sig.interface_token:
            continue
        params = ", ".join(f"{p.type_name} {p.name}" for p in sig.params)
        out.write(f"{sig.interface_token}  code={sig.code}  {sig.method_name}({params})\n")
        shown += 1
    out.write(f"{shown} entries\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="droidaudit", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("decode", help="decode a capture into an audit log")
    d.add_argument("--input", required=True)
    d.add_argument("--table", help="signature table (default: the bundled sample)")
    d.add_argument("--no-stability-footer", action="store_true")
    d.add_argument("--format", choices=("text", "records"), default="text")
    d.set_defaults(func=cmd_decode)

    c = sub.add_parser("compare", help="match two tracer logs and report UER")
    c.add_argument("--a", required=True, help="log A (WDSys-style)")
    c.add_argument("--b", required=True, help="log B (ftrace-style)")
    c.add_argument("--offset", type=int, help="clock offset ts_a - ts_b in ns")
    c.add_argument("--csv", help="append the run to this aggregate CSV")
    c.add_argument("--app", help="app id for the CSV row")
    c.add_argument("--exclude-pid", type=int, action="append", default=[])
    c.add_argument("--arch", choices=("arm64", "x86_64"), default="arm64")
    c.add_argument("--max-skew", type=int, help="optional bound on |ts_a - ts_b| in ns")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("simulate", help="run the buffer loss simulator")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sweep", type=_sweep_spec, help="PARAM=V1,V2,...")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("table", help="inspect signature tables")
    t.add_argument("action", choices=("validate", "show", "sample"))
    t.add_argument("--file")
    t.add_argument("--interface", help="substring filter for show")
    t.set_defaults(func=cmd_table)
    return p


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args, out)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
