"""Replay of recorded captures into an interleaved audit log.

A capture file holds one JSON object per line::

    {"ts_ns": 1, "pid": 2, "uid": 3, "kind": "txn", "hex": "...",
     "code": 5, "flags": 17, "data_size": 200}

``kind`` is ``"txn"`` (an extracted transaction buffer), ``"ioctl"`` (a
complete write buffer; pointers inside it resolve through an optional
``mem`` map of ``{"0xaddr": "hex bytes"}``) or ``"syscall"`` (``nr``,
``args``, ``ret`` and an optional ``arch``).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .parcel import AuditRecord, ProcessInfo, decode_transaction
from .pipeline import mask_user_address
from .render import render_text, to_record
from .sigtable import SignatureTable
from .syscalls import load_catalog
from .wire import BC_REPLY, BC_TRANSACTION, TransactionRecord, WireError, extract_transaction, iterate_commands

__all__ = [
    "CaptureError",
    "MemoryImage",
    "SyscallEntry",
    "decode_capture_record",
    "decode_capture",
    "read_capture",
    "render_entry",
    "entry_record",
    "summary_line",
]

log = logging.getLogger(__name__)

KINDS = ("ioctl", "txn", "syscall")


class CaptureError(ValueError):
    pass


class MemoryImage:
    """User memory snapshot keyed by (tag-stripped) start address."""

    def __init__(self, regions: Mapping[int, bytes] | None = None):
        self.regions = {mask_user_address(a): bytes(b) for a, b in (regions or {}).items()}

    @classmethod
    def from_json(cls, obj: Mapping[str, str] | None) -> "MemoryImage":
        if not obj:
            return cls()
        return cls({int(k, 0): bytes.fromhex(v) for k, v in obj.items()})

    def __call__(self, addr: int, length: int) -> bytes:
        addr = mask_user_address(addr)
        for base, data in self.regions.items():
            if base <= addr < base + len(data):
                off = addr - base
                return data[off : off + length]
        raise KeyError(addr)


@dataclass
class SyscallEntry:
    ts: int
    pid: int
    uid: int
    nr: int
    name: str | None
    args: tuple[int, ...] = ()
    ret: int | None = None

    status = "OK"


def _error_record(rec: Mapping, status: str, error: str, raw: bytes = b"") -> AuditRecord:
    def num(key: str) -> int:
        try:
            return int(rec.get(key, 0))
        except (TypeError, ValueError):
            return 0

    return AuditRecord(
        ts=num("ts_ns"),
        pid=num("pid"),
        uid=num("uid"),
        code=num("code"),
        flags=num("flags"),
        data_size=num("data_size"),
        raw_buffer=raw,
        status=status,
        error=error,
    )


def decode_capture_record(
    rec: Mapping, table: SignatureTable, *, stability_footer: bool = True
) -> list[AuditRecord | SyscallEntry]:
    """Decode one capture record.

    Returns one entry per transaction found (``ioctl`` buffers may batch
    several) and exactly one error-status record when nothing decodes.
    """
    if not isinstance(rec, Mapping):
        return [_error_record({}, "BadRecord", "capture record is not an object")]
    kind = rec.get("kind")
    if kind not in KINDS:
        return [_error_record(rec, "BadRecord", f"unknown kind {kind!r}")]
    try:
        proc = ProcessInfo(int(rec["pid"]), int(rec["uid"]), int(rec["ts_ns"]))
    except (KeyError, TypeError, ValueError) as exc:
        return [_error_record(rec, "BadRecord", f"missing or invalid field: {exc}")]

    if kind == "syscall":
        try:
            arch = rec.get("arch", "arm64")
            nr = int(rec["nr"])
            name = load_catalog().name_for(arch, nr)
            ret = rec.get("ret")
            return [
                SyscallEntry(
                    proc.ts, proc.pid, proc.uid, nr, name,
                    tuple(int(a, 0) if isinstance(a, str) else int(a) for a in rec.get("args", ())),
                    None if ret is None else int(ret),
                )
            ]
        except (KeyError, TypeError, ValueError) as exc:
            return [_error_record(rec, "BadRecord", f"bad syscall record: {exc}")]

    try:
        raw = bytes.fromhex(rec.get("hex", ""))
    except (TypeError, ValueError) as exc:
        return [_error_record(rec, "BadRecord", f"bad hex: {exc}")]

    if kind == "txn":
        try:
            txn = TransactionRecord(
                target_handle=0,
                cookie=0,
                code=int(rec["code"]),
                flags=int(rec.get("flags", 0)),
                sender_pid=proc.pid,
                sender_euid=proc.uid,
                data_size=int(rec.get("data_size", len(raw))),
                offsets_size=0,
                buffer=raw,
            )
        except (KeyError, TypeError, ValueError) as exc:
            return [_error_record(rec, "BadRecord", f"bad txn record: {exc}", raw)]
        return [decode_transaction(txn, table, proc, stability_footer=stability_footer)]

    try:
        memory = MemoryImage.from_json(rec.get("mem"))
    except (AttributeError, TypeError, ValueError) as exc:
        return [_error_record(rec, "BadRecord", f"bad mem map: {exc}", raw)]
    out: list[AuditRecord | SyscallEntry] = []
    for cmd in iterate_commands(raw):
        if cmd.error:
            out.append(_error_record(rec, cmd.error, f"{cmd.name} at offset {cmd.offset} is cut short", raw))
            break
        if cmd.code not in (BC_TRANSACTION, BC_REPLY):
            continue
        try:
            txn = extract_transaction(cmd, memory)
        except WireError as exc:
            out.append(_error_record(rec, type(exc).__name__, str(exc), raw))
            continue
        out.append(decode_transaction(txn, table, proc, stability_footer=stability_footer))
    if not out:
        out.append(_error_record(rec, "NoTransaction", "write buffer carries no BC_TRANSACTION", raw))
    return out


def read_capture(lines: Iterable[str]) -> Iterator[Mapping | None]:
    """Parse capture lines; unparsable lines yield ``None`` so they still count."""
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            log.warning("capture line %d: %s", lineno, exc)
            yield None


def decode_capture(
    path_or_lines: str | Path | Iterable[str],
    table: SignatureTable,
    *,
    stability_footer: bool = True,
) -> list[AuditRecord | SyscallEntry]:
    """Decode a whole capture, time-ordered (stable for equal timestamps)."""
    if isinstance(path_or_lines, (str, Path)):
        lines: Iterable[str] = Path(path_or_lines).read_text(encoding="utf-8").splitlines()
    else:
        lines = path_or_lines
    entries: list[AuditRecord | SyscallEntry] = []
    for rec in read_capture(lines):
        if rec is None:
            entries.append(_error_record({}, "BadRecord", "line is not valid JSON"))
        else:
            entries.extend(decode_capture_record(rec, table, stability_footer=stability_footer))
    entries.sort(key=lambda e: e.ts)
    return entries


def render_entry(entry: AuditRecord | SyscallEntry) -> str:
    if isinstance(entry, SyscallEntry):
        name = entry.name or f"syscall_{entry.nr}"
        args = ", ".join(f"0x{a & 0xFFFFFFFFFFFFFFFF:x}" for a in entry.args)
        ret = "?" if entry.ret is None else str(entry.ret)
        return f"pid={entry.pid}  uid={entry.uid}  ts={entry.ts}\n{name}({args}) = {ret}"
    return render_text(entry)


def entry_record(entry: AuditRecord | SyscallEntry) -> dict:
    if isinstance(entry, SyscallEntry):
        return {
            "ts": entry.ts,
            "pid": entry.pid,
            "uid": entry.uid,
            "syscall": entry.name,
            "nr": entry.nr,
            "args": list(entry.args),
            "ret": entry.ret,
            "status": "OK",
        }
    return to_record(entry)


def summary_line(entries: list[AuditRecord | SyscallEntry]) -> str:
    counts: dict[str, int] = {}
    for e in entries:
        counts[e.status] = counts.get(e.status, 0) + 1
    detail = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()))
    return f"{len(entries)} records" + (f" ({detail})" if detail else "")
