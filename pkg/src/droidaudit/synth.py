"""Seeded generator of paired tracer logs with known ground truth.

One true syscall stream is drawn per app and each event is assigned to
"both tracers", "A only" or "B only".  Log A is rendered as WDSys-style
JSON lines on an absolute clock, log B as ftrace ``raw_syscalls`` text on a
boot-relative clock with enter/exit lines.  The rendering differences
(decimal vs. hex arguments, sign handling of 32-bit slots, six printed
argument slots, tracer self-events, clone calls, untraced syscalls) are the
ones the compare pipeline has to undo.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass

from .syscalls import load_catalog

__all__ = ["SynthPair", "synth_pair", "worked_example_pair"]

ORDINARY = ("read", "write", "openat", "close", "mmap", "mprotect", "fcntl", "sendto", "recvfrom", "pread64")
UNTRACED_NR = {"arm64": 172, "x86_64": 39}  # getpid
_U64 = (1 << 64) - 1


@dataclass
class SynthPair:
    a_lines: list[str]
    b_lines: list[str]
    matched: int
    unique_a: int
    unique_b: int
    tracer_pids: tuple[int, ...]
    boot_offset_ns: int

    @property
    def union(self) -> int:
        return self.matched + self.unique_a + self.unique_b

    @property
    def uer_a(self) -> float:
        return self.unique_a / self.union

    @property
    def uer_b(self) -> float:
        return self.unique_b / self.union


@dataclass
class _Event:
    ts: int
    pid: int
    tgid: int
    name: str
    args: tuple[int, ...]
    ret: int
    where: str  # "both", "a", "b"


def _random_args(rng: random.Random, name: str) -> tuple[int, ...]:
    out = []
    for slot in load_catalog()[name].argspec:
        if slot == "p":
            out.append(rng.randrange(0x7000000000, 0x7FFFFFFFFF) & ~0x7)
        elif rng.random() < 0.1:
            out.append(-100)  # AT_FDCWD style negative int
        else:
            out.append(rng.randrange(0, 4096))
    return tuple(out)


def _wd_line(ev: _Event, arch: str, rng: random.Random) -> str:
    # WDSys prints decimal integers, negative ints signed, pointers as hex strings.
    spec = load_catalog()[ev.name]
    args: list[object] = []
    for slot, v in zip(spec.argspec, ev.args):
        args.append(f"0x{v & _U64:x}" if slot == "p" else v)
    rec = {
        "ts_ns": ev.ts,
        "pid": ev.pid,
        "tgid": ev.tgid,
        "syscall": ev.name if rng.random() < 0.5 else None,
        "nr": load_catalog().nr_for(arch, ev.name),
        "args": args,
        "ret": ev.ret,
    }
    if rec["syscall"] is None:
        del rec["syscall"]
    else:
        del rec["nr"]
    return json.dumps(rec)


def _ft_ts(ns: int) -> str:
    return f"{ns // 1_000_000_000}.{(ns % 1_000_000_000) // 1000:06d}"


def _ft_lines(ev: _Event, arch: str, boot: int, rng: random.Random, comm: str) -> list[tuple[int, str]]:
    nr = load_catalog().nr_for(arch, ev.name) if ev.name else UNTRACED_NR[arch]
    regs = []
    spec_slots = load_catalog()[ev.name].argspec if ev.name else ""
    for i in range(6):
        if i < len(ev.args):
            v = ev.args[i]
            # A 32-bit store leaves the upper half clear half of the time.
            if i < len(spec_slots) and spec_slots[i] == "i" and v < 0 and rng.random() < 0.5:
                v &= 0xFFFFFFFF
            regs.append(f"{v & _U64:x}")
        else:
            regs.append(f"{rng.getrandbits(32):x}")
    t_enter = ev.ts - boot
    t_exit = t_enter + 1000 + rng.randrange(0, 4000)
    head = f"{comm}-{ev.pid} ({ev.tgid:>5}) [00{rng.randrange(8)}] ...."
    return [
        (t_enter, f"{head} {_ft_ts(t_enter)}: sys_enter: NR {nr} ({', '.join(regs)})"),
        (t_exit, f"{head} {_ft_ts(t_exit)}: sys_exit: NR {nr} = {ev.ret}"),
    ]


def synth_pair(
    seed: int,
    n_events: int = 2000,
    p_a_only: float = 0.3775,
    p_b_only: float = 0.0427,
    *,
    arch: str = "arm64",
    threads: int = 4,
) -> SynthPair:
    """Draw one app's paired logs; ``matched``/``unique_*`` are the truth."""
    if not 0 <= p_a_only + p_b_only < 1:
        raise ValueError("category probabilities must leave room for shared events")
    rng = random.Random(seed)
    tgid = rng.randrange(2000, 30000)
    tids = [tgid] + [tgid + 1 + k for k in range(threads - 1)]
    tracer_pids = (tgid - 7, tgid - 6)
    boot = rng.randrange(1_600_000_000, 1_800_000_000) * 1_000_000_000
    t = boot + 1000 * rng.randrange(10**6, 10**9)
    events: list[_Event] = []

    def add(name: str, where: str, pid: int = tgid, args: tuple[int, ...] | None = None, ret: int | None = None) -> None:
        nonlocal t
        # Microsecond steps: ftrace prints microseconds.
        t += 1000 * rng.randrange(20, 200)
        if args is None:
            # The serial in the first slot keeps every event's key distinct,
            # so the ground truth has no ambiguous pairings.
            args = (len(events) + 1,) + _random_args(rng, name)[1:]
        if ret is None:
            ret = rng.choice((0, 0, rng.randrange(1, 4096), -rng.randrange(1, 40)))
        events.append(_Event(t, pid, tgid, name, args, ret, where))

    # Clock anchor: exec, then the loader's first mapping.
    add("execve", "both")
    anchor = _random_args(rng, "mmap")
    add("mmap", "both", args=anchor, ret=(anchor[0] or 0x7F00000000) | 0x1000)
    for _ in range(n_events):
        r = rng.random()
        where = "a" if r < p_a_only else "b" if r < p_a_only + p_b_only else "both"
        add(rng.choice(ORDINARY), where, pid=rng.choice(tids))
        if rng.random() < 0.03:
            add("clone", rng.choice(("both", "a", "b")), pid=rng.choice(tids))
    add("close", "both")

    a_lines: list[str] = []
    b_timed: list[tuple[int, str]] = []
    comm = f"app{seed % 1000}"
    for ev in events:
        if ev.where in ("both", "a"):
            a_lines.append(_wd_line(ev, arch, rng))
        if ev.where in ("both", "b"):
            b_timed.extend(_ft_lines(ev, arch, boot, rng, comm))
    # Tracer self-activity and syscalls outside the traced set.
    for k in range(20):
        tp = rng.choice(tracer_pids)
        ts = events[1 + k * (len(events) - 2) // 20].ts + 7
        noise = _Event(ts, tp, tp, "write", _random_args(rng, "write"), 8, "both")
        a_lines.append(_wd_line(noise, arch, rng))
        b_timed.extend(_ft_lines(noise, arch, boot, rng, "tracer"))
        b_timed.extend(_ft_lines(_Event(ts + 11, tids[0], tgid, "", (), tgid, "b"), arch, boot, rng, comm))
    b_timed.sort(key=lambda x: x[0])

    truth = [e for e in events if e.name != "clone"]
    return SynthPair(
        a_lines=a_lines,
        b_lines=["# tracer: nop", "#"] + [line for _, line in b_timed],
        matched=sum(e.where == "both" for e in truth),
        unique_a=sum(e.where == "a" for e in truth),
        unique_b=sum(e.where == "b" for e in truth),
        tracer_pids=tracer_pids,
        boot_offset_ns=boot,
    )


def worked_example_pair(matched: int = 40, unique_a: int = 50, unique_b: int = 10) -> tuple[list[str], list[str]]:
    """Deterministic normalized-format logs with exact category counts."""
    a: list[str] = []
    b: list[str] = []
    cat = load_catalog()

    def rec(ts: int, name: str, args: list[int], ret: int) -> str:
        return json.dumps({"ts_ns": ts, "pid": 100, "tgid": 100, "nr": cat.nr_for("arm64", name), "args": args, "ret": ret})

    ts = 1000
    a.append(rec(ts, "execve", [1, 2, 3], 0))
    b.append(rec(ts - 600, "execve", [1, 2, 3], 0))
    shared = matched - 2
    if shared < 0:
        raise ValueError("the anchor needs at least two matched events")
    ts += 10
    a.append(rec(ts, "mmap", [0, 4096, 3, 2, 5, 0], 0x7000))
    b.append(rec(ts - 600, "mmap", [0, 4096, 3, 2, 5, 0], 0x7000))
    kinds = ["both"] * shared + ["a"] * unique_a + ["b"] * unique_b
    # Interleave deterministically; keep a shared event last so the window covers all.
    kinds = kinds[1:] + kinds[:1] if shared else kinds
    for i, kind in enumerate(kinds):
        ts += 10
        line_a = rec(ts, "write", [1, 0x1000 + i, i + 1], i + 1)
        line_b = rec(ts - 600, "write", [1, 0x1000 + i, i + 1], i + 1)
        if kind in ("both", "a"):
            a.append(line_a)
        if kind in ("both", "b"):
            b.append(line_b)
    return a, b
