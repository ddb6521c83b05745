"""Completeness comparison of two syscall tracers.

Both logs are normalized to joined :class:`SyscallEvent` records, placed on
one clock through an ``execve`` -> ``mmap`` anchor, restricted to the time
window in which both tracers were running, and matched event by event.
The unique event rate (UER) of a tracer is its count of unmatched events
divided by the union of events seen by either tracer.
"""
from __future__ import annotations

import csv
import io
import json
import re
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .syscalls import Phase, SyscallEvent, join_enter_exit, load_catalog

__all__ = [
    "CompareError",
    "ParseError",
    "NoAnchor",
    "EmptyUnion",
    "TraceLog",
    "MatchResult",
    "parse_ftrace_line",
    "normalize_log",
    "load_log",
    "dump_log",
    "compute_offset",
    "match_events",
    "uer",
    "run_record",
    "aggregate_csv",
    "read_aggregate_csv",
    "summarize",
    "DEFAULT_COMPARE_ARGS",
]

SOURCES = ("wdsys", "ftrace", "generic")
EXCLUDED_SYSCALLS = frozenset({"clone", "clone3"})
# Argument indices that take part in equality; others compare all of the
# syscall's arguments.  mmap's hint address and offset are left out.
DEFAULT_COMPARE_ARGS: dict[str, tuple[int, ...]] = {"mmap": (1, 2, 3, 4)}

_U64 = (1 << 64) - 1


class CompareError(ValueError):
    pass


class ParseError(CompareError):
    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(f"record {index}: {message}" if index is not None else message)


class NoAnchor(CompareError):
    pass


class EmptyUnion(CompareError):
    pass


@dataclass
class TraceLog:
    source: str
    events: list[SyscallEvent]
    clock_base: str = "absolute"
    arch: str = "arm64"
    dropped: dict[str, int] = field(default_factory=dict)
    # False when records only identified the process, so pid == tgid.
    has_tids: bool = True

    def name(self, ev: SyscallEvent) -> str | None:
        return load_catalog().name_for(self.arch, ev.nr)


@dataclass(frozen=True)
class MatchResult:
    matched: int
    unique_a: int
    unique_b: int
    pairs: tuple[tuple[int, int], ...]
    window: tuple[int, int]
    id_key: str = "pid"

    @property
    def total_a(self) -> int:
        return self.matched + self.unique_a

    @property
    def total_b(self) -> int:
        return self.matched + self.unique_b

    @property
    def union(self) -> int:
        return self.matched + self.unique_a + self.unique_b


# ftrace raw_syscalls lines, with or without the record-tgid column:
#   app-1234    [001] .... 12.345678: sys_enter: NR 63 (3, 7ffd, 100, 0, 0, 0)
#   app-1234    ( 1200) [001] d..1 12.345690: sys_exit: NR 63 = 100
_FTRACE = re.compile(
    r"^\s*(?P<comm>.*?)-(?P<tid>\d+)\s+"
    r"(?:\(\s*(?P<tgid>\d+|-+)\)\s+)?"
    r"\[(?P<cpu>\d+)\]\s+"
    r"(?:(?P<flags>\S{4,5})\s+)?"
    r"(?P<sec>\d+)\.(?P<frac>\d+):\s+"
    r"(?P<event>sys_enter|sys_exit):\s+NR\s+(?P<nr>-?\d+)\s*"
    r"(?:\((?P<args>[^)]*)\)|=\s*(?P<ret>-?\d+))"
)


def _ts_ns(sec: str, frac: str) -> int:
    return int(sec) * 1_000_000_000 + int(frac.ljust(9, "0")[:9])


def parse_ftrace_line(line: str) -> SyscallEvent | None:
    """Parse one ftrace ``raw_syscalls`` line; other lines give ``None``."""
    m = _FTRACE.match(line)
    if m is None:
        return None
    tgid = m["tgid"]
    common = dict(
        ts_ns=_ts_ns(m["sec"], m["frac"]),
        pid=int(m["tid"]),
        tgid=int(tgid) if tgid and tgid.isdigit() else None,
        nr=int(m["nr"]),
    )
    if m["event"] == "sys_enter":
        raw = [a.strip() for a in (m["args"] or "").split(",") if a.strip()]
        return SyscallEvent(args=tuple(int(a, 16) for a in raw), phase=Phase.ENTER, **common)
    return SyscallEvent(ret=int(m["ret"]), phase=Phase.EXIT, **common)


def _to_int(value: object) -> int:
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        s = value.strip().lower()
        neg = s.startswith("-")
        s = s.lstrip("+-")
        n = int(s, 16) if s.startswith("0x") else int(s, 10)
        return -n if neg else n
    raise ValueError(f"cannot interpret {value!r} as an integer")


def _harmonize_args(name: str | None, args: Sequence[object]) -> tuple[int, ...]:
    """Render every argument as the 64-bit register value.

    4-byte slots are reduced to 32 bits and sign-extended, so ``-100``,
    ``0xffffff9c`` and ``ffffffffffffff9c`` all become one value.  Only the
    syscall's own arguments are kept (ftrace always prints six).
    """
    spec = load_catalog().specs.get(name) if name else None
    values = [_to_int(a) & _U64 for a in args]
    if spec is None:
        return tuple(values)
    out = []
    for slot, v in zip(spec.argspec, values):
        if slot == "i":
            v &= 0xFFFFFFFF
            if v & 0x80000000:
                v |= _U64 ^ 0xFFFFFFFF
        out.append(v)
    return tuple(out)


def _event_from_record(rec: Mapping, arch: str) -> SyscallEvent:
    cat = load_catalog()
    if "nr" in rec:
        nr = _to_int(rec["nr"])
    elif "syscall" in rec:
        nr = cat.nr_for(arch, rec["syscall"])
        if nr is None:
            raise ValueError(f"unknown syscall {rec['syscall']!r} on {arch}")
    else:
        raise ValueError("record has neither 'nr' nor 'syscall'")
    ts = rec["ts_ns"] if "ts_ns" in rec else round(float(rec["ts"]) * 1e9)
    phase = Phase[str(rec.get("phase", "joined")).upper()]
    ret = rec.get("ret")
    tgid = None if rec.get("tgid") is None else int(rec["tgid"])
    pid = rec.get("pid")
    if pid is None:
        if tgid is None:
            raise ValueError("record has neither 'pid' nor 'tgid'")
        pid = tgid
    return SyscallEvent(
        ts_ns=int(ts),
        pid=int(pid),
        tgid=tgid,
        nr=nr,
        args=tuple(rec.get("args", ())),
        ret=None if ret is None else _to_int(ret),
        phase=phase,
    )


def normalize_log(
    raw: Iterable,
    source: str,
    *,
    arch: str = "arm64",
    exclude_pids: Iterable[int] = (),
    only_traced: bool = True,
) -> TraceLog:
    """Bring native tracer output into the common joined form.

    ``raw`` is an iterable of ftrace text lines (``source="ftrace"``) or of
    JSON objects / JSON lines (``"wdsys"``, ``"generic"``).  Events of the
    excluded (tracer) pids are removed, ftrace enter/exit pairs are joined,
    and with ``only_traced`` syscalls outside the architecture's traced set
    are left out so both tracers are compared on the same syscalls.  Exits
    whose enter precedes the capture carry no arguments and are dropped.
    """
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}")
    excluded = set(exclude_pids)
    cat = load_catalog()
    traced = cat.traced_set(arch)
    events: list[SyscallEvent] = []
    has_tids = True
    for index, item in enumerate(raw):
        try:
            if source == "ftrace":
                if not isinstance(item, str):
                    raise ValueError("ftrace input must be text lines")
                if not item.strip() or item.lstrip().startswith("#"):
                    continue
                ev = parse_ftrace_line(item)
                if ev is None:
                    if "sys_enter" in item or "sys_exit" in item:
                        raise ValueError("malformed raw_syscalls line")
                    continue
            else:
                if isinstance(item, str):
                    if not item.strip():
                        continue
                    item = json.loads(item)
                if not isinstance(item, dict):
                    raise ValueError("record is not an object")
                has_tids = has_tids and item.get("pid") is not None
                ev = _event_from_record(item, arch)
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(str(exc), index) from None
        events.append(ev)

    dropped: dict[str, int] = defaultdict(int)
    kept = []
    for ev in join_enter_exit(events):
        name = cat.name_for(arch, ev.nr)
        if ev.pid in excluded or (ev.tgid is not None and ev.tgid in excluded):
            dropped["excluded_pid"] += 1
        elif only_traced and name not in traced:
            dropped["untraced"] += 1
        elif ev.orphan:
            dropped["orphan_exit"] += 1
        else:
            kept.append(ev if ev.phase is Phase.EXIT else _with_args(ev, _harmonize_args(name, ev.args)))
    kept.sort(key=lambda e: e.ts_ns)
    clock = "boot-relative" if source == "ftrace" else "absolute"
    return TraceLog(source, kept, clock, arch, dict(dropped), has_tids)


def _with_args(ev: SyscallEvent, args: tuple[int, ...]) -> SyscallEvent:
    return SyscallEvent(ev.ts_ns, ev.pid, ev.tgid, ev.nr, args, ev.ret, ev.phase, ev.orphan)


def load_log(path: str | Path, source: str | None = None, **kwargs) -> TraceLog:
    """Load a log file; the source is sniffed when not given."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if source is None:
        first = next((l for l in lines if l.strip() and not l.lstrip().startswith("#")), "")
        if not first.lstrip().startswith("{"):
            source = "ftrace"
        else:
            source = json.loads(first).get("source", "wdsys") if '"source"' in first else "wdsys"
    if source != "ftrace":
        lines = [l for l in lines if not ('"source"' in l and '"ts_ns"' not in l)]
    return normalize_log(lines, source, **kwargs)


def dump_log(log: TraceLog) -> str:
    """Normalized-log format: one JSON object per joined event."""
    out = []
    for ev in log.events:
        rec = {
            "ts_ns": ev.ts_ns,
            "pid": ev.pid,
            "tgid": ev.tgid,
            "nr": ev.nr,
            "syscall": log.name(ev),
            "args": list(ev.args),
            "ret": ev.ret,
            "phase": ev.phase.name.lower(),
        }
        out.append(json.dumps(rec))
    return "".join(line + "\n" for line in out)


def _compare_key(
    log: TraceLog, ev: SyscallEvent, id_key: str, compare_args: Mapping[str, tuple[int, ...]]
) -> tuple:
    name = log.name(ev)
    idx = compare_args.get(name) if name else None
    args = ev.args if idx is None else tuple(ev.args[i] for i in idx if i < len(ev.args))
    ident = ev.pid if id_key == "pid" else (ev.tgid if ev.tgid is not None else ev.pid)
    return (ident, ev.nr, args)


def _id_key(a: TraceLog, b: TraceLog) -> str:
    return "pid" if a.has_tids and b.has_tids else "tgid"


def compute_offset(
    log_a: TraceLog,
    log_b: TraceLog,
    compare_args: Mapping[str, tuple[int, ...]] = DEFAULT_COMPARE_ARGS,
) -> int:
    """Clock offset ``ts_a - ts_b`` from the first mmap that follows an execve.

    Candidates are mmaps issued by a process after its own execve; the
    first such mmap in ``log_a`` that has an identical counterpart (same
    process, arguments and return value) in ``log_b`` is the anchor.
    """
    id_key = _id_key(log_a, log_b)

    def anchors(log: TraceLog) -> list[tuple[tuple, SyscallEvent]]:
        execed: set = set()
        found = []
        for ev in log.events:
            name = log.name(ev)
            key = _compare_key(log, ev, id_key, compare_args)
            if name in ("execve", "execveat"):
                execed.add(key[0])
            elif name == "mmap" and key[0] in execed:
                found.append((key, ev))
        return found

    b_anchors = anchors(log_b)
    for key, ev_a in anchors(log_a):
        for key_b, ev_b in b_anchors:
            if key_b == key and (ev_a.ret is None or ev_b.ret is None or ev_a.ret == ev_b.ret):
                return ev_a.ts_ns - ev_b.ts_ns
    raise NoAnchor("no mmap following an execve appears in both logs")


def match_events(
    log_a: TraceLog,
    log_b: TraceLog,
    offset: int = 0,
    *,
    compare_args: Mapping[str, tuple[int, ...]] = DEFAULT_COMPARE_ARGS,
    max_skew_ns: int | None = None,
) -> MatchResult:
    """First-match pairing of ``log_b`` events against ``log_a``.

    ``offset`` is added to ``log_b`` timestamps.  Only events inside the
    window where both logs have data take part; clone events are ignored.
    For each event of ``log_b`` in order, the earliest unmatched event of
    ``log_a`` with the same process id, syscall and compared arguments is
    taken.  ``max_skew_ns`` optionally bounds the timestamp distance.
    """
    if not log_a.events or not log_b.events:
        raise CompareError("both logs need events")
    id_key = _id_key(log_a, log_b)
    start = max(log_a.events[0].ts_ns, log_b.events[0].ts_ns + offset)
    end = min(log_a.events[-1].ts_ns, log_b.events[-1].ts_ns + offset)

    def selected(log: TraceLog, shift: int) -> list[int]:
        return [
            i
            for i, ev in enumerate(log.events)
            if start <= ev.ts_ns + shift <= end and log.name(ev) not in EXCLUDED_SYSCALLS
        ]

    sel_a = selected(log_a, 0)
    sel_b = selected(log_b, offset)
    candidates: dict[tuple, list[int]] = defaultdict(list)
    for i in sel_a:
        candidates[_compare_key(log_a, log_a.events[i], id_key, compare_args)].append(i)
    cursor: dict[tuple, int] = defaultdict(int)
    taken: set[int] = set()
    pairs = []
    for j in sel_b:
        ev_b = log_b.events[j]
        key = _compare_key(log_b, ev_b, id_key, compare_args)
        pool = candidates.get(key)
        if not pool:
            continue
        if max_skew_ns is None:
            pos = cursor[key]
            if pos < len(pool):
                pairs.append((pool[pos], j))
                cursor[key] = pos + 1
            continue
        for i in pool:
            if i not in taken and abs(log_a.events[i].ts_ns - (ev_b.ts_ns + offset)) <= max_skew_ns:
                taken.add(i)
                pairs.append((i, j))
                break
    matched = len(pairs)
    return MatchResult(
        matched=matched,
        unique_a=len(sel_a) - matched,
        unique_b=len(sel_b) - matched,
        pairs=tuple(pairs),
        window=(start, end),
        id_key=id_key,
    )


def uer(result: MatchResult) -> tuple[float, float]:
    union = result.union
    if union <= 0:
        raise EmptyUnion("no events in either log")
    return result.unique_a / union, result.unique_b / union


def run_record(app_id: str, result: MatchResult) -> dict:
    ua, ub = uer(result)
    return {
        "app_id": app_id,
        "matched": result.matched,
        "unique_a": result.unique_a,
        "unique_b": result.unique_b,
        "uer_a_pct": round(100 * ua, 2),
        "uer_b_pct": round(100 * ub, 2),
    }


def aggregate_csv(records: Sequence[Mapping]) -> str:
    """Per-app table with columns ``#, app, FT, WD``.

    Log A is the WDSys-style tracer and log B the ftrace-style one.
    """
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["#", "app", "FT", "WD"])
    for i, rec in enumerate(records, 1):
        w.writerow([i, rec["app_id"], f"{rec['uer_b_pct']:.2f}", f"{rec['uer_a_pct']:.2f}"])
    return buf.getvalue()


def read_aggregate_csv(text: str) -> list[dict]:
    """Rows with numeric FT/WD; rows whose cells are not numbers are skipped."""
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        try:
            rows.append({"#": row["#"], "app": row["app"], "FT": float(row["FT"]), "WD": float(row["WD"])})
        except (TypeError, ValueError):
            continue
    return rows


def summarize(values: Sequence[float]) -> dict[str, float]:
    vals = list(values)
    return {
        "n": len(vals),
        "mean": statistics.fmean(vals),
        "stdev": statistics.stdev(vals) if len(vals) > 1 else 0.0,
        "min": min(vals),
        "max": max(vals),
    }
