"""Userspace event-path helpers: chunk reassembly and MTE address masking.

Large buffer reads reach userspace as several perf events; each carries an
event id, its chunk index and the chunk count.  The ring-buffer loss
simulator lives in :mod:`droidaudit.simulator`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

__all__ = [
    "MTE_ADDRESS_MASK",
    "mask_user_address",
    "ChunkRecord",
    "ReassemblyError",
    "ConflictingTotal",
    "DuplicateChunk",
    "Reassembler",
    "ReassemblyResult",
    "reassemble_chunks",
    "split_chunks",
]

MTE_ADDRESS_MASK = 0xFFFFFFFFFF


def mask_user_address(addr: int) -> int:
    """Strip pointer tag bits before a raw user-memory read (low 40 bits kept)."""
    return addr & MTE_ADDRESS_MASK


class ChunkRecord(NamedTuple):
    event_id: int
    seq: int
    total: int
    data: bytes


class ReassemblyError(ValueError):
    pass


class ConflictingTotal(ReassemblyError):
    pass


class DuplicateChunk(ReassemblyError):
    pass


@dataclass
class _Pending:
    total: int
    parts: dict[int, bytes] = field(default_factory=dict)


class Reassembler:
    """Collects chunks until every index of an event has arrived.

    Not thread-safe: concurrent producers must serialize calls to
    :meth:`submit`.  The call that supplies the last missing chunk returns
    the complete payload; every other call returns ``None``.
    """

    def __init__(self) -> None:
        self._pending: dict[int, _Pending] = {}
        self._done: set[int] = set()

    def submit(self, chunk: ChunkRecord) -> bytes | None:
        event_id, seq, total, data = chunk
        if total < 1 or not 0 <= seq < total:
            raise ReassemblyError(f"event {event_id}: chunk {seq} outside 0..{total - 1}")
        if event_id in self._done:
            # Late copy of an already emitted event; emitting again would duplicate it.
            return None
        entry = self._pending.setdefault(event_id, _Pending(total))
        if entry.total != total:
            raise ConflictingTotal(f"event {event_id}: total {total} conflicts with {entry.total}")
        if seq in entry.parts:
            if entry.parts[seq] != data:
                raise DuplicateChunk(f"event {event_id}: chunk {seq} seen with different bytes")
            return None
        entry.parts[seq] = bytes(data)
        if len(entry.parts) < total:
            return None
        del self._pending[event_id]
        self._done.add(event_id)
        return b"".join(entry.parts[i] for i in range(total))

    def incomplete(self) -> dict[int, set[int]]:
        """Missing chunk indices of every event that has not completed."""
        return {
            eid: set(range(p.total)) - set(p.parts) for eid, p in sorted(self._pending.items())
        }


class ReassemblyResult(NamedTuple):
    events: list[tuple[int, bytes]]
    incomplete: dict[int, set[int]]


def reassemble_chunks(chunks: Iterable[ChunkRecord]) -> ReassemblyResult:
    r = Reassembler()
    events = []
    for chunk in chunks:
        payload = r.submit(ChunkRecord(*chunk))
        if payload is not None:
            events.append((chunk[0], payload))
    return ReassemblyResult(events, r.incomplete())


def split_chunks(event_id: int, payload: bytes, chunk_size: int) -> list[ChunkRecord]:
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    pieces = [payload[i : i + chunk_size] for i in range(0, len(payload), chunk_size)] or [b""]
    return [ChunkRecord(event_id, i, len(pieces), p) for i, p in enumerate(pieces)]
