"""Traced syscall catalog, compact event encoding and enter/exit joining.

Compact record layout (all integers little-endian)::

    u8       type code: 0 = resync, else 1 + 3*index + phase
    uvarint  timestamp delta in units of the clock granularity
    uvarint  pid
    uvarint  tgid + 1 (0 when the tracer did not report a tgid)
    args     enter/joined only: one slot per argument of the syscall,
             8 bytes for pointer-sized values, 4 bytes for int/flag values
    zigzag   exit/joined only: return value

``index`` is the position of the syscall in the sorted traced set of the
architecture, so 81 syscalls x 3 phases still fit in one byte.  A resync
record carries an absolute timestamp (uvarint, granularity units) and is
immediately followed by the event it precedes.
"""
from __future__ import annotations

import csv
import enum
import functools
import io
import struct
from dataclasses import dataclass, replace
from importlib import resources
from typing import Iterable, Iterator, Sequence

__all__ = [
    "ARCHES",
    "Phase",
    "SyscallSpec",
    "Catalog",
    "SyscallEvent",
    "CodecError",
    "UntracedSyscall",
    "DeltaOverflow",
    "UnknownTypeCode",
    "Truncated",
    "ArgumentOverflow",
    "load_catalog",
    "traced_set",
    "is_relevant",
    "encode_event",
    "decode_event",
    "EventEncoder",
    "EventDecoder",
    "join_enter_exit",
    "DEFAULT_GRANULARITY_NS",
]

ARCHES = ("arm64", "x86_64")
DEFAULT_GRANULARITY_NS = 1_000
MAX_DELTA = (1 << 32) - 1

# fcntl commands that duplicate descriptors: F_DUPFD, F_DUPFD_CLOEXEC.
_FCNTL_DUP_CMDS = frozenset({0, 1030})


class Phase(enum.IntEnum):
    ENTER = 0
    EXIT = 1
    JOINED = 2


@dataclass(frozen=True)
class SyscallSpec:
    name: str
    arm64_nr: int | None
    x86_64_nr: int | None
    traced_on: frozenset[str]
    priority_class: int
    argspec: str

    def nr(self, arch: str) -> int | None:
        return self.arm64_nr if arch == "arm64" else self.x86_64_nr

    @property
    def nargs(self) -> int:
        return len(self.argspec)


class Catalog:
    """Immutable view over the checked-in syscall catalog."""

    def __init__(self, specs: Iterable[SyscallSpec]):
        self.specs: dict[str, SyscallSpec] = {s.name: s for s in specs}
        self._by_nr: dict[str, dict[int, SyscallSpec]] = {}
        for arch in ARCHES:
            table: dict[int, SyscallSpec] = {}
            for s in self.specs.values():
                nr = s.nr(arch)
                if nr is None:
                    continue
                # x86_64 lists both pread and pread64 on one number; the
                # name traced on both architectures is the canonical one.
                prev = table.get(nr)
                if prev is None or len(s.traced_on) > len(prev.traced_on):
                    table[nr] = s
            self._by_nr[arch] = table
        self._names = {arch: sorted(self.traced_set(arch)) for arch in ARCHES}
        self._index = {arch: {n: i for i, n in enumerate(names)} for arch, names in self._names.items()}

    def __getitem__(self, name: str) -> SyscallSpec:
        return self.specs[name]

    def __contains__(self, name: object) -> bool:
        return name in self.specs

    def by_nr(self, arch: str, nr: int) -> SyscallSpec | None:
        return self._by_nr[_check_arch(arch)].get(nr)

    def name_for(self, arch: str, nr: int) -> str | None:
        spec = self.by_nr(arch, nr)
        return spec.name if spec else None

    def nr_for(self, arch: str, name: str) -> int | None:
        spec = self.specs.get(name)
        return spec.nr(_check_arch(arch)) if spec else None

    def traced_set(self, arch: str) -> frozenset[str]:
        arch = _check_arch(arch)
        return frozenset(n for n, s in self.specs.items() if arch in s.traced_on)

    def type_index(self, arch: str, name: str) -> int | None:
        return self._index[_check_arch(arch)].get(name)

    def name_at(self, arch: str, index: int) -> str | None:
        names = self._names[_check_arch(arch)]
        return names[index] if 0 <= index < len(names) else None


def _check_arch(arch: str) -> str:
    if arch not in ARCHES:
        raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHES}")
    return arch


def _parse_catalog(text: str) -> list[SyscallSpec]:
    rows = csv.DictReader(io.StringIO("".join(l for l in text.splitlines(True) if not l.startswith("#"))))
    specs = []
    for row in rows:
        arm = int(row["arm64_nr"]) if row["arm64_nr"] else None
        x86 = int(row["x86_64_nr"]) if row["x86_64_nr"] else None
        traced = frozenset(ARCHES if row["traced"] == "both" else (row["traced"],))
        for arch in traced:
            if (arm if arch == "arm64" else x86) is None:
                raise ValueError(f"{row['name']} traced on {arch} without a syscall number")
        specs.append(SyscallSpec(row["name"], arm, x86, traced, int(row["priority"]), row["args"] or ""))
    return specs


@functools.lru_cache(maxsize=None)
def load_catalog() -> Catalog:
    text = (resources.files("droidaudit") / "data" / "syscalls.csv").read_text(encoding="utf-8")
    return Catalog(_parse_catalog(text))


def traced_set(arch: str) -> frozenset[str]:
    return load_catalog().traced_set(arch)


@dataclass(frozen=True)
class SyscallEvent:
    ts_ns: int
    pid: int
    tgid: int | None
    nr: int
    args: tuple[int, ...] = ()
    ret: int | None = None
    phase: Phase = Phase.JOINED
    orphan: bool = False

    def __post_init__(self):
        if self.phase is Phase.JOINED and self.ret is None:
            raise ValueError("joined events carry a return value")


def is_relevant(name: str, args: Sequence[int]) -> bool:
    """fcntl is traced but only descriptor-duplicating commands matter."""
    if name == "fcntl":
        return len(args) > 1 and args[1] in _FCNTL_DUP_CMDS
    return True


class CodecError(ValueError):
    pass


class UntracedSyscall(CodecError):
    pass


class DeltaOverflow(CodecError):
    pass


class UnknownTypeCode(CodecError):
    pass


class Truncated(CodecError):
    pass


class ArgumentOverflow(CodecError):
    pass


def _uvarint(n: int) -> bytes:
    if n < 0:
        raise ValueError("uvarint of negative value")
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _read_uvarint(data: bytes, pos: int) -> tuple[int, int]:
    shift = result = 0
    while True:
        if pos >= len(data):
            raise Truncated("varint runs past end of input")
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise CodecError("varint too long")


def _zigzag(n: int) -> int:
    return (n << 1) if n >= 0 else ((-n) << 1) - 1


def _unzigzag(n: int) -> int:
    return (n >> 1) if not n & 1 else -((n + 1) >> 1)


_U64 = (1 << 64) - 1


def _pack_args(spec: SyscallSpec, args: Sequence[int]) -> bytes:
    if len(args) < spec.nargs:
        raise ValueError(f"{spec.name} takes {spec.nargs} arguments, got {len(args)}")
    out = bytearray()
    for slot, value in zip(spec.argspec, args):
        if not 0 <= value <= _U64:
            raise ArgumentOverflow(f"{spec.name}: argument {value} is not a 64-bit register value")
        if slot == "p":
            out += struct.pack("<Q", value)
            continue
        # 4-byte slots hold C ints; a register value is accepted if it is a
        # zero-extended u32 with bit 31 clear or a sign-extended negative.
        if value < 1 << 31:
            out += struct.pack("<I", value)
        elif value >= _U64 + 1 - (1 << 31):
            out += struct.pack("<I", value & 0xFFFFFFFF)
        else:
            raise ArgumentOverflow(f"{spec.name}: argument {value:#x} does not fit a 4-byte slot")
    return bytes(out)


def _unpack_args(spec: SyscallSpec, data: bytes, pos: int) -> tuple[tuple[int, ...], int]:
    args = []
    for slot in spec.argspec:
        size = 8 if slot == "p" else 4
        if pos + size > len(data):
            raise Truncated(f"{spec.name}: argument slot runs past end of input")
        if slot == "p":
            (v,) = struct.unpack_from("<Q", data, pos)
        else:
            (v,) = struct.unpack_from("<i", data, pos)
            v &= _U64
        args.append(v)
        pos += size
    return tuple(args), pos


def encode_event(
    ev: SyscallEvent,
    prev_ts: int,
    granularity_ns: int = DEFAULT_GRANULARITY_NS,
    arch: str = "arm64",
) -> bytes:
    """Encode one event relative to the previous event's timestamp.

    Raises :class:`DeltaOverflow` when the quantized delta is negative or
    exceeds 32 bits; :class:`EventEncoder` turns that into a resync record.
    """
    cat = load_catalog()
    spec = cat.by_nr(arch, ev.nr)
    index = cat.type_index(arch, spec.name) if spec else None
    if index is None:
        raise UntracedSyscall(f"syscall {ev.nr} is not traced on {arch}")
    delta = ev.ts_ns // granularity_ns - prev_ts // granularity_ns
    if not 0 <= delta <= MAX_DELTA:
        raise DeltaOverflow(f"timestamp delta {delta} units out of range")
    out = bytearray([1 + 3 * index + int(ev.phase)])
    out += _uvarint(delta)
    out += _uvarint(ev.pid)
    out += _uvarint(0 if ev.tgid is None else ev.tgid + 1)
    if ev.phase in (Phase.ENTER, Phase.JOINED):
        out += _pack_args(spec, ev.args)
    if ev.phase in (Phase.EXIT, Phase.JOINED):
        if ev.ret is None:
            raise ValueError("exit events carry a return value")
        out += _uvarint(_zigzag(ev.ret))
    return bytes(out)


def encode_resync(ts_ns: int, granularity_ns: int = DEFAULT_GRANULARITY_NS) -> bytes:
    return b"\x00" + _uvarint(ts_ns // granularity_ns)


def decode_event(
    data: bytes,
    prev_ts: int,
    granularity_ns: int = DEFAULT_GRANULARITY_NS,
    arch: str = "arm64",
    offset: int = 0,
) -> tuple[SyscallEvent, int]:
    """Decode one event (and a leading resync record, if any).

    Returns the event, whose timestamp is quantized to the granularity, and
    the offset just past it.
    """
    pos = offset
    if pos >= len(data):
        raise Truncated("no event at offset")
    base = prev_ts // granularity_ns
    if data[pos] == 0:
        base, pos = _read_uvarint(data, pos + 1)
        if pos >= len(data):
            raise Truncated("resync record without a following event")
    type_code = data[pos]
    cat = load_catalog()
    index, phase = divmod(type_code - 1, 3)
    name = cat.name_at(arch, index) if type_code else None
    if name is None:
        raise UnknownTypeCode(f"type code {type_code} is not assigned on {arch}")
    spec = cat[name]
    delta, pos = _read_uvarint(data, pos + 1)
    pid, pos = _read_uvarint(data, pos)
    tgid1, pos = _read_uvarint(data, pos)
    phase = Phase(phase)
    args: tuple[int, ...] = ()
    ret = None
    if phase in (Phase.ENTER, Phase.JOINED):
        args, pos = _unpack_args(spec, data, pos)
    if phase in (Phase.EXIT, Phase.JOINED):
        zz, pos = _read_uvarint(data, pos)
        ret = _unzigzag(zz)
    ev = SyscallEvent(
        ts_ns=(base + delta) * granularity_ns,
        pid=pid,
        tgid=None if tgid1 == 0 else tgid1 - 1,
        nr=spec.nr(arch),
        args=args,
        ret=ret,
        phase=phase,
    )
    return ev, pos


class EventEncoder:
    """Stateful encoder for one event stream."""

    def __init__(self, arch: str = "arm64", granularity_ns: int = DEFAULT_GRANULARITY_NS, start_ts: int = 0):
        self.arch = _check_arch(arch)
        self.granularity_ns = granularity_ns
        self.prev_ts = start_ts
        self.resyncs = 0

    def encode(self, ev: SyscallEvent) -> bytes:
        try:
            out = encode_event(ev, self.prev_ts, self.granularity_ns, self.arch)
        except DeltaOverflow:
            self.resyncs += 1
            out = encode_resync(ev.ts_ns, self.granularity_ns) + encode_event(
                ev, ev.ts_ns, self.granularity_ns, self.arch
            )
        self.prev_ts = ev.ts_ns
        return out

    def encode_all(self, events: Iterable[SyscallEvent]) -> bytes:
        return b"".join(self.encode(ev) for ev in events)


class EventDecoder:
    def __init__(self, arch: str = "arm64", granularity_ns: int = DEFAULT_GRANULARITY_NS, start_ts: int = 0):
        self.arch = _check_arch(arch)
        self.granularity_ns = granularity_ns
        self.prev_ts = start_ts

    def iter_decode(self, data: bytes) -> Iterator[SyscallEvent]:
        pos = 0
        while pos < len(data):
            ev, pos = decode_event(data, self.prev_ts, self.granularity_ns, self.arch, pos)
            self.prev_ts = ev.ts_ns
            yield ev


def join_enter_exit(events: Iterable[SyscallEvent]) -> list[SyscallEvent]:
    """Pair enter and exit events per pid.

    An exit joins the most recent unjoined enter with the same syscall
    number on the same pid.  The joined event takes the position and
    timestamp of its enter.  Leftover enters are returned unchanged (ret
    pending); exits without an enter come back flagged ``orphan``.  Events
    that are already joined pass through.
    """
    slots: list[SyscallEvent | None] = []
    open_enters: dict[tuple[int, int], list[int]] = {}
    for ev in events:
        if ev.phase is Phase.ENTER:
            open_enters.setdefault((ev.pid, ev.nr), []).append(len(slots))
            slots.append(ev)
        elif ev.phase is Phase.EXIT:
            stack = open_enters.get((ev.pid, ev.nr))
            if stack:
                i = stack.pop()
                enter = slots[i]
                slots[i] = replace(
                    enter,
                    tgid=enter.tgid if enter.tgid is not None else ev.tgid,
                    ret=ev.ret,
                    phase=Phase.JOINED,
                )
            else:
                slots.append(replace(ev, orphan=True))
        else:
            slots.append(ev)
    return [ev for ev in slots if ev is not None]
