"""Discrete-event model of the per-CPU cache -> shared ring -> reader path.

Time is virtual and measured in milliseconds.  Within each millisecond the
arrivals are processed in time order: an event goes into its CPU's cache,
and a cache that reaches ``flush_threshold`` is flushed into the ring.  At
the end of the millisecond every non-empty cache is flushed and the reader
drains up to ``consumer_drain_rate`` events (fractional rates carry over).
After the last arrival the caches are flushed once more and the reader
empties the ring.

Ring policies:

``overwrite``
    Events enter the ring one by one; a full ring evicts its oldest entry.
``drop``
    A flush is all-or-nothing; if the batch does not fit, it is dropped.
    With ``priorities`` enabled, the ring and the batch are pooled instead
    and the lowest-priority events (highest class number, newest first
    within a class) are discarded until the pool fits.
"""
from __future__ import annotations

import csv
import io
import json
import math
import random
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

__all__ = [
    "InvalidConfig",
    "BufferConfig",
    "Workload",
    "LossReport",
    "simulate_buffers",
    "sweep",
    "generate_arrivals",
    "load_simulation",
    "reports_to_csv",
]

POLICIES = ("overwrite", "drop")
DEFAULT_PRIORITY_MIX = (0.1, 0.3, 0.6)


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class BufferConfig:
    cpu_count: int = 1
    cache_capacity: int = 1
    ring_capacity: int = 1024
    policy: str = "overwrite"
    consumer_drain_rate: float = 100.0
    flush_threshold: int | None = None
    priorities: bool = False

    @property
    def threshold(self) -> int:
        return self.cache_capacity if self.flush_threshold is None else self.flush_threshold

    def validate(self) -> None:
        if self.policy not in POLICIES:
            raise InvalidConfig(f"policy must be one of {POLICIES}, got {self.policy!r}")
        for name in ("cpu_count", "cache_capacity", "ring_capacity"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise InvalidConfig(f"{name} must be a positive integer, got {value!r}")
        if not self.consumer_drain_rate > 0:
            raise InvalidConfig("consumer_drain_rate must be positive")
        if not 1 <= self.threshold <= self.cache_capacity:
            raise InvalidConfig("flush_threshold must be between 1 and cache_capacity")
        if self.threshold > self.ring_capacity:
            raise InvalidConfig("flush_threshold larger than ring_capacity can never be flushed")


@dataclass(frozen=True)
class Workload:
    """Per-CPU arrival rates (events/ms) plus instantaneous bursts.

    ``bursts`` holds ``(time_ms, cpu, count)`` triples.  ``arrival`` is
    ``"uniform"`` (evenly spaced, deterministic) or ``"poisson"`` (seeded).
    """

    duration_ms: float = 0.0
    rates: tuple[float, ...] = ()
    bursts: tuple[tuple[float, int, int], ...] = ()
    arrival: str = "uniform"
    priority_mix: tuple[float, ...] = DEFAULT_PRIORITY_MIX

    def validate(self, cpu_count: int) -> None:
        if self.duration_ms < 0:
            raise InvalidConfig("duration_ms must not be negative")
        if self.arrival not in ("uniform", "poisson"):
            raise InvalidConfig(f"unknown arrival process {self.arrival!r}")
        if len(self.rates) > cpu_count:
            raise InvalidConfig(f"{len(self.rates)} rates given for {cpu_count} CPUs")
        if any(r < 0 for r in self.rates):
            raise InvalidConfig("rates must not be negative")
        for t, cpu, count in self.bursts:
            if t < 0 or not 0 <= cpu < cpu_count or count < 0:
                raise InvalidConfig(f"bad burst {(t, cpu, count)}")
        if not self.priority_mix or any(w < 0 for w in self.priority_mix) or sum(self.priority_mix) <= 0:
            raise InvalidConfig("priority_mix needs non-negative weights with a positive sum")


@dataclass
class LossReport:
    produced: int = 0
    delivered: int = 0
    lost_overwritten: int = 0
    lost_dropped: int = 0
    lost_by_priority: dict[int, int] = field(default_factory=dict)
    max_ring_occupancy: int = 0
    delivered_ids: list[int] = field(default_factory=list, repr=False)

    @property
    def lost(self) -> int:
        return self.lost_overwritten + self.lost_dropped

    def check(self) -> None:
        if self.produced != self.delivered + self.lost:
            raise AssertionError(f"conservation violated: {self}")

    def to_record(self) -> dict:
        rec = {k: v for k, v in asdict(self).items() if k not in ("lost_by_priority", "delivered_ids")}
        rec["lost"] = self.lost
        for cls in sorted(self.lost_by_priority):
            rec[f"lost_p{cls}"] = self.lost_by_priority[cls]
        return rec


def generate_arrivals(workload: Workload, seed: int) -> list[tuple[float, int, int]]:
    """Return ``(time_ms, cpu, priority_class)`` sorted by time then CPU."""
    rng = random.Random(seed)
    arrivals: list[tuple[float, int, int, int]] = []
    n = 0
    for cpu, rate in enumerate(workload.rates):
        if rate <= 0:
            continue
        if workload.arrival == "uniform":
            for k in range(math.floor(workload.duration_ms * rate + 1e-9)):
                arrivals.append((k / rate, cpu, n, 0))
                n += 1
        else:
            t = rng.expovariate(rate)
            while t < workload.duration_ms:
                arrivals.append((t, cpu, n, 0))
                n += 1
                t += rng.expovariate(rate)
    for t, cpu, count in workload.bursts:
        for _ in range(count):
            arrivals.append((float(t), cpu, n, 0))
            n += 1
    arrivals.sort()
    classes = list(range(len(workload.priority_mix)))
    drawn = rng.choices(classes, weights=workload.priority_mix, k=len(arrivals))
    return [(t, cpu, cls) for (t, cpu, _, _), cls in zip(arrivals, drawn)]


class _Ring:
    def __init__(self, cfg: BufferConfig, report: LossReport):
        self.cfg = cfg
        self.report = report
        self.q: deque[tuple[int, int]] = deque()

    def _lose(self, ev: tuple[int, int], how: str) -> None:
        if how == "overwritten":
            self.report.lost_overwritten += 1
        else:
            self.report.lost_dropped += 1
        by = self.report.lost_by_priority
        by[ev[1]] = by.get(ev[1], 0) + 1

    def flush(self, batch: list[tuple[int, int]]) -> None:
        if not batch:
            return
        cap = self.cfg.ring_capacity
        q = self.q
        if self.cfg.policy == "overwrite":
            for ev in batch:
                if len(q) >= cap:
                    self._lose(q.popleft(), "overwritten")
                q.append(ev)
        elif len(q) + len(batch) <= cap:
            q.extend(batch)
        elif not self.cfg.priorities:
            for ev in batch:
                self._lose(ev, "dropped")
        else:
            pool = list(q) + batch
            excess = len(pool) - cap
            victims = set(sorted(pool, key=lambda e: (-e[1], -e[0]))[:excess])
            for ev in pool:
                if ev in victims:
                    self._lose(ev, "dropped")
            self.q = q = deque(sorted(ev for ev in pool if ev not in victims))
        self.report.max_ring_occupancy = max(self.report.max_ring_occupancy, len(q))

    def drain(self, n: int, record_ids: bool) -> None:
        q = self.q
        take = min(n, len(q))
        for _ in range(take):
            ev = q.popleft()
            if record_ids:
                self.report.delivered_ids.append(ev[0])
        self.report.delivered += take


def simulate_buffers(
    config: BufferConfig, workload: Workload, seed: int = 0, *, record_ids: bool = False
) -> LossReport:
    config.validate()
    workload.validate(config.cpu_count)
    arrivals = generate_arrivals(workload, seed)
    report = LossReport(produced=len(arrivals))
    ring = _Ring(config, report)
    caches: list[list[tuple[int, int]]] = [[] for _ in range(config.cpu_count)]
    threshold = config.threshold

    def flush_all() -> None:
        for cache in caches:
            if cache:
                ring.flush(cache[:])
                cache.clear()

    budget = 0.0
    i = 0
    tick = 1
    last = arrivals[-1][0] if arrivals else 0.0
    while i < len(arrivals) or tick <= last:
        while i < len(arrivals) and arrivals[i][0] < tick:
            _, cpu, cls = arrivals[i]
            cache = caches[cpu]
            cache.append((i, cls))
            if len(cache) >= threshold:
                ring.flush(cache[:])
                cache.clear()
            i += 1
        flush_all()
        budget += config.consumer_drain_rate
        n = int(budget)
        budget -= n
        ring.drain(n, record_ids)
        tick += 1
    flush_all()
    ring.drain(len(ring.q), record_ids)
    report.check()
    return report


def sweep(
    config: BufferConfig, workload: Workload, seed: int, param: str, values: Sequence
) -> list[tuple[object, LossReport]]:
    if param not in BufferConfig.__dataclass_fields__:
        raise InvalidConfig(f"cannot sweep unknown parameter {param!r}")
    out = []
    for v in values:
        cfg = BufferConfig(**{**asdict(config), param: v})
        out.append((v, simulate_buffers(cfg, workload, seed)))
    return out


def _parse(obj: dict) -> tuple[BufferConfig, Workload]:
    try:
        buf = dict(obj.get("buffer", {}))
        wl = dict(obj.get("workload", {}))
        config = BufferConfig(**buf)
        workload = Workload(
            duration_ms=float(wl.get("duration_ms", 0.0)),
            rates=tuple(float(r) for r in wl.get("rates", ())),
            bursts=tuple((float(t), int(c), int(n)) for t, c, n in wl.get("bursts", ())),
            arrival=wl.get("arrival", "uniform"),
            priority_mix=tuple(float(w) for w in wl.get("priority_mix", DEFAULT_PRIORITY_MIX)),
        )
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad simulation config: {exc}") from None
    config.validate()
    workload.validate(config.cpu_count)
    return config, workload


def load_simulation(path: str | Path) -> tuple[BufferConfig, Workload]:
    """Read a JSON file with ``buffer`` and ``workload`` sections."""
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path}: {exc}") from None
    if not isinstance(obj, dict):
        raise InvalidConfig(f"{path}: expected a JSON object")
    return _parse(obj)


def reports_to_csv(rows: Sequence[tuple[object, LossReport]], param: str) -> str:
    buf = io.StringIO()
    records = [{param: v, **r.to_record()} for v, r in rows]
    fields: list[str] = []
    for rec in records:
        fields.extend(k for k in rec if k not in fields)
    writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow({k: rec.get(k, 0) for k in fields})
    return buf.getvalue()
