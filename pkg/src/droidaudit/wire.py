"""Binder ``BINDER_WRITE_READ`` wire structures (64-bit little-endian layout).

The write buffer of a ``binder_write_read`` is a stream of 32-bit command
words, each followed by the payload whose size is encoded in the word
itself (ioctl encoding).  Only ``BC_TRANSACTION`` payloads are decoded
further; everything else is recognized and passed through.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Iterator

__all__ = [
    "WireError",
    "TruncatedInput",
    "BadPayloadSize",
    "UnresolvableData",
    "BinderWriteRead",
    "BinderCommand",
    "TransactionRecord",
    "ioc",
    "io",
    "iow",
    "ior",
    "ioc_size",
    "BC",
    "BC_NAMES",
    "BC_TRANSACTION",
    "BC_REPLY",
    "parse_write_read",
    "pack_write_read",
    "iterate_commands",
    "extract_transaction",
    "pack_transaction_data",
]


class WireError(ValueError):
    """Base class for binder wire-format errors."""


class TruncatedInput(WireError):
    pass


class BadPayloadSize(WireError):
    pass


class UnresolvableData(WireError):
    pass


# asm-generic/ioctl.h
_IOC_NRBITS = 8
_IOC_TYPEBITS = 8
_IOC_SIZEBITS = 14
_IOC_NRSHIFT = 0
_IOC_TYPESHIFT = _IOC_NRSHIFT + _IOC_NRBITS
_IOC_SIZESHIFT = _IOC_TYPESHIFT + _IOC_TYPEBITS
_IOC_DIRSHIFT = _IOC_SIZESHIFT + _IOC_SIZEBITS

IOC_NONE = 0
IOC_WRITE = 1
IOC_READ = 2


def ioc(direction: int, kind: int | str, nr: int, size: int) -> int:
    if isinstance(kind, str):
        kind = ord(kind)
    return (
        (direction << _IOC_DIRSHIFT)
        | (kind << _IOC_TYPESHIFT)
        | (nr << _IOC_NRSHIFT)
        | (size << _IOC_SIZESHIFT)
    )


def io(kind: int | str, nr: int) -> int:
    return ioc(IOC_NONE, kind, nr, 0)


def iow(kind: int | str, nr: int, size: int) -> int:
    return ioc(IOC_WRITE, kind, nr, size)


def ior(kind: int | str, nr: int, size: int) -> int:
    return ioc(IOC_READ, kind, nr, size)


def ioc_size(code: int) -> int:
    return (code >> _IOC_SIZESHIFT) & ((1 << _IOC_SIZEBITS) - 1)


def ioc_type(code: int) -> int:
    return (code >> _IOC_TYPESHIFT) & ((1 << _IOC_TYPEBITS) - 1)


def ioc_nr(code: int) -> int:
    return (code >> _IOC_NRSHIFT) & ((1 << _IOC_NRBITS) - 1)


# Payload struct sizes on a 64-bit kernel.
_SZ_TXN_DATA = 64
_SZ_TXN_DATA_SG = 72
_SZ_PTR_COOKIE = 16
_SZ_HANDLE_COOKIE = 12  # __packed
_SZ_PRI_DESC = 8

BC = {
    "BC_TRANSACTION": iow("c", 0, _SZ_TXN_DATA),
    "BC_REPLY": iow("c", 1, _SZ_TXN_DATA),
    "BC_ACQUIRE_RESULT": iow("c", 2, 4),
    "BC_FREE_BUFFER": iow("c", 3, 8),
    "BC_INCREFS": iow("c", 4, 4),
    "BC_ACQUIRE": iow("c", 5, 4),
    "BC_RELEASE": iow("c", 6, 4),
    "BC_DECREFS": iow("c", 7, 4),
    "BC_INCREFS_DONE": iow("c", 8, _SZ_PTR_COOKIE),
    "BC_ACQUIRE_DONE": iow("c", 9, _SZ_PTR_COOKIE),
    "BC_ATTEMPT_ACQUIRE": iow("c", 10, _SZ_PRI_DESC),
    "BC_REGISTER_LOOPER": io("c", 11),
    "BC_ENTER_LOOPER": io("c", 12),
    "BC_EXIT_LOOPER": io("c", 13),
    "BC_REQUEST_DEATH_NOTIFICATION": iow("c", 14, _SZ_HANDLE_COOKIE),
    "BC_CLEAR_DEATH_NOTIFICATION": iow("c", 15, _SZ_HANDLE_COOKIE),
    "BC_DEAD_BINDER_DONE": iow("c", 16, 8),
    "BC_TRANSACTION_SG": iow("c", 17, _SZ_TXN_DATA_SG),
    "BC_REPLY_SG": iow("c", 18, _SZ_TXN_DATA_SG),
    "BC_REQUEST_FREEZE_NOTIFICATION": iow("c", 19, _SZ_HANDLE_COOKIE),
    "BC_CLEAR_FREEZE_NOTIFICATION": iow("c", 20, _SZ_HANDLE_COOKIE),
    "BC_FREEZE_NOTIFICATION_DONE": iow("c", 21, 8),
}
BC_NAMES = {code: name for name, code in BC.items()}
BC_TRANSACTION = BC["BC_TRANSACTION"]
BC_REPLY = BC["BC_REPLY"]

_BWR = struct.Struct("<6Q")
_TXN = struct.Struct("<QQIIiIQQQQ")
assert _BWR.size == 48 and _TXN.size == _SZ_TXN_DATA


@dataclass(frozen=True)
class BinderWriteRead:
    write_size: int
    write_consumed: int
    write_buffer_addr: int
    read_size: int
    read_consumed: int
    read_buffer_addr: int

    def pack(self) -> bytes:
        return pack_write_read(self)


def parse_write_read(data: bytes) -> BinderWriteRead:
    """Read the 48-byte ``binder_write_read`` header; trailing bytes are ignored."""
    if len(data) < _BWR.size:
        raise TruncatedInput(f"binder_write_read needs {_BWR.size} bytes, got {len(data)}")
    return BinderWriteRead(*_BWR.unpack_from(data))


def pack_write_read(bwr: BinderWriteRead) -> bytes:
    return _BWR.pack(
        bwr.write_size,
        bwr.write_consumed,
        bwr.write_buffer_addr,
        bwr.read_size,
        bwr.read_consumed,
        bwr.read_buffer_addr,
    )


@dataclass(frozen=True)
class BinderCommand:
    """One entry of the write-buffer command stream.

    ``known`` is False for command words not in :data:`BC_NAMES`; such
    commands are still yielded with the payload their size field declares.
    ``error`` is set (to ``"TruncatedCommand"``) on the final record when the
    declared payload runs past the buffer end; ``payload`` then holds only
    the bytes that were present.
    """

    code: int
    payload: bytes
    offset: int = 0
    error: str | None = None

    @property
    def name(self) -> str:
        return BC_NAMES.get(self.code, f"UNKNOWN(0x{self.code:08x})")

    @property
    def known(self) -> bool:
        return self.code in BC_NAMES

    @property
    def consumed(self) -> int:
        return 4 + len(self.payload)


def iterate_commands(write_buffer: bytes) -> Iterator[BinderCommand]:
    """Walk the write buffer the way ``binder_thread_write()`` does.

    Iteration starts at offset 0 of ``write_buffer``; callers holding a live
    capture with a nonzero ``write_consumed`` should slice first.
    """
    pos = 0
    end = len(write_buffer)
    while pos < end:
        if end - pos < 4:
            yield BinderCommand(0, bytes(write_buffer[pos:]), pos, "TruncatedCommand")
            return
        (code,) = struct.unpack_from("<I", write_buffer, pos)
        size = ioc_size(code)
        start = pos + 4
        if start + size > end:
            yield BinderCommand(code, bytes(write_buffer[start:]), pos, "TruncatedCommand")
            return
        yield BinderCommand(code, bytes(write_buffer[start : start + size]), pos)
        pos = start + size


@dataclass(frozen=True)
class TransactionRecord:
    target_handle: int
    cookie: int
    code: int
    flags: int
    sender_pid: int
    sender_euid: int
    data_size: int
    offsets_size: int
    buffer: bytes
    offsets: bytes = b""
    buffer_addr: int = 0
    offsets_addr: int = 0


DataResolver = Callable[[int, int], bytes]


def pack_transaction_data(
    *,
    target: int = 0,
    cookie: int = 0,
    code: int = 0,
    flags: int = 0,
    sender_pid: int = 0,
    sender_euid: int = 0,
    data_size: int = 0,
    offsets_size: int = 0,
    buffer_addr: int = 0,
    offsets_addr: int = 0,
) -> bytes:
    """Serialize a 64-bit ``binder_transaction_data``."""
    return _TXN.pack(
        target,
        cookie,
        code,
        flags,
        sender_pid,
        sender_euid,
        data_size,
        offsets_size,
        buffer_addr,
        offsets_addr,
    )


def unpack_transaction_data(payload: bytes) -> dict[str, int]:
    if len(payload) != _TXN.size:
        raise BadPayloadSize(f"binder_transaction_data is {_TXN.size} bytes, got {len(payload)}")
    names = (
        "target",
        "cookie",
        "code",
        "flags",
        "sender_pid",
        "sender_euid",
        "data_size",
        "offsets_size",
        "buffer_addr",
        "offsets_addr",
    )
    return dict(zip(names, _TXN.unpack(payload)))


def extract_transaction(cmd: BinderCommand, data_resolver: DataResolver) -> TransactionRecord:
    """Materialize a ``BC_TRANSACTION`` into a :class:`TransactionRecord`.

    ``data_resolver(address, length)`` supplies the user memory behind the
    buffer and offsets pointers; it should raise ``KeyError`` or return
    short data when the bytes are not available.
    """
    if cmd.code not in (BC_TRANSACTION, BC_REPLY):
        raise BadPayloadSize(f"{cmd.name} does not carry binder_transaction_data")
    f = unpack_transaction_data(cmd.payload)
    if f["offsets_size"] % 8:
        raise BadPayloadSize(f"offsets_size {f['offsets_size']} is not a multiple of 8")
    buffer = _resolve(data_resolver, f["buffer_addr"], f["data_size"], "buffer")
    offsets = _resolve(data_resolver, f["offsets_addr"], f["offsets_size"], "offsets")
    return TransactionRecord(
        target_handle=f["target"] & 0xFFFFFFFF,
        cookie=f["cookie"],
        code=f["code"],
        flags=f["flags"],
        sender_pid=f["sender_pid"],
        sender_euid=f["sender_euid"],
        data_size=f["data_size"],
        offsets_size=f["offsets_size"],
        buffer=buffer,
        offsets=offsets,
        buffer_addr=f["buffer_addr"],
        offsets_addr=f["offsets_addr"],
    )


def _resolve(resolver: DataResolver, addr: int, length: int, what: str) -> bytes:
    if length == 0:
        return b""
    try:
        data = resolver(addr, length)
    except (KeyError, LookupError) as exc:
        raise UnresolvableData(f"{what} at 0x{addr:x} ({length} bytes) unavailable") from exc
    if data is None or len(data) < length:
        have = 0 if data is None else len(data)
        raise UnresolvableData(f"{what} at 0x{addr:x}: need {length} bytes, have {have}")
    return bytes(data[:length])
