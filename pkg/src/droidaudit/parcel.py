"""Signature-driven decoding of call parcels.

A call parcel starts with a 12-byte header (strict-mode policy, work-source
uid, header magic), then the interface token as a length-prefixed UTF-16LE
string, then the marshaled arguments.  Arguments are decoded in the order
given by the method signature; the object-offset array is not consulted.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Any, NamedTuple

from .sigtable import ArgKind, ArgType, MethodSignature, SignatureTable, parse_type
from .wire import TransactionRecord

__all__ = [
    "ParcelError",
    "TruncatedHeader",
    "InvalidToken",
    "TruncatedString",
    "NegativeLength",
    "TruncatedPrimitive",
    "TruncatedObject",
    "MalformedObject",
    "UnsupportedType",
    "ParcelCursor",
    "InterfaceHeader",
    "FlatBinderObject",
    "BINDER_TYPES",
    "pack_chars",
    "pad4",
    "read_interface_header",
    "read_string16",
    "read_primitive",
    "read_flat_binder_object",
    "read_typed_object",
    "read_value",
    "Param",
    "ProcessInfo",
    "AuditRecord",
    "decode_transaction",
]


class ParcelError(ValueError):
    """Base class; ``status`` is the name used in audit records."""

    @property
    def status(self) -> str:
        return type(self).__name__


class TruncatedHeader(ParcelError):
    pass


class InvalidToken(ParcelError):
    pass


class TruncatedString(ParcelError):
    pass


class NegativeLength(ParcelError):
    pass


class TruncatedPrimitive(ParcelError):
    pass


class TruncatedObject(ParcelError):
    pass


class MalformedObject(ParcelError):
    pass


class UnsupportedType(ParcelError):
    pass


def pack_chars(c1: str, c2: str, c3: str, c4: int) -> int:
    return (ord(c1) << 24) | (ord(c2) << 16) | (ord(c3) << 8) | c4


_FLAT_BINDER_TYPES = {
    pack_chars("s", "b", "*", 0x85): "BINDER",
    pack_chars("w", "b", "*", 0x85): "WEAK_BINDER",
    pack_chars("s", "h", "*", 0x85): "HANDLE",
    pack_chars("w", "h", "*", 0x85): "WEAK_HANDLE",
}
# Recognized, but carry file descriptors or pointers we do not follow.
_INDIRECT_TYPES = {
    pack_chars("f", "d", "*", 0x85): "FD",
    pack_chars("f", "d", "a", 0x85): "FDA",
    pack_chars("p", "t", "*", 0x85): "PTR",
}
BINDER_TYPES = {**_FLAT_BINDER_TYPES, **_INDIRECT_TYPES}
BINDER_TYPE_CODES = {name: code for code, name in BINDER_TYPES.items()}

HEADER_SIZE = 12


def pad4(n: int) -> int:
    return (n + 3) & ~3


class ParcelCursor:
    """Read position over an immutable parcel buffer.

    Reads are atomic: a read that fails leaves ``position`` where it was.
    """

    __slots__ = ("buffer", "position")

    def __init__(self, buffer: bytes, position: int = 0):
        if not 0 <= position <= len(buffer):
            raise ValueError("position outside buffer")
        self.buffer = bytes(buffer)
        self.position = position

    @property
    def remaining(self) -> int:
        return len(self.buffer) - self.position

    def peek(self, fmt: str, offset: int = 0) -> tuple:
        return struct.unpack_from(fmt, self.buffer, self.position + offset)

    def __repr__(self) -> str:
        return f"ParcelCursor(position={self.position}, size={len(self.buffer)})"


@dataclass(frozen=True)
class InterfaceHeader:
    strict_mode_policy: int
    work_source_uid: int
    header_magic: int
    token: str


@dataclass(frozen=True)
class FlatBinderObject:
    type_tag: int
    flags: int
    handle_or_ptr: int
    cookie: int
    stability: int | None = None

    @property
    def type_name(self) -> str:
        return BINDER_TYPES.get(self.type_tag, f"0x{self.type_tag:08x}")

    @property
    def is_null(self) -> bool:
        return self.type_name == "BINDER" and self.handle_or_ptr == 0


def read_interface_header(cursor: ParcelCursor) -> InterfaceHeader:
    if cursor.remaining < HEADER_SIZE + 4:
        raise TruncatedHeader(f"need {HEADER_SIZE + 4} bytes for header, have {cursor.remaining}")
    policy, work_uid, magic, nchars = cursor.peek("<IIII")
    avail = cursor.remaining - HEADER_SIZE - 4
    if nchars > avail // 2:
        raise InvalidToken(f"token length {nchars} exceeds remaining {avail} bytes")
    region = pad4(2 * nchars + 2)
    if region > avail:
        raise TruncatedHeader(f"token region needs {region} bytes, have {avail}")
    start = cursor.position + HEADER_SIZE + 4
    raw = cursor.buffer[start : start + 2 * nchars]
    try:
        token = raw.decode("utf-16-le")
    except UnicodeDecodeError as exc:
        raise InvalidToken(f"token is not valid UTF-16LE: {exc}") from None
    cursor.position = start + region
    return InterfaceHeader(policy, work_uid, magic, token)


def read_string16(cursor: ParcelCursor) -> str | None:
    """``Parcel.writeString()`` layout: int32 length, UTF-16LE, NUL, pad to 4."""
    if cursor.remaining < 4:
        raise TruncatedString(f"need 4 bytes for string length, have {cursor.remaining}")
    (length,) = cursor.peek("<i")
    if length == -1:
        cursor.position += 4
        return None
    if length < -1:
        raise NegativeLength(f"string length {length}")
    size = 4 + pad4(2 * length + 2)
    if size > cursor.remaining:
        raise TruncatedString(f"string of {length} chars needs {size} bytes, have {cursor.remaining}")
    start = cursor.position + 4
    value = cursor.buffer[start : start + 2 * length].decode("utf-16-le", "surrogatepass")
    cursor.position += size
    return value


_PRIMITIVE_FORMATS = {
    ArgKind.INT: "<i",
    ArgKind.BOOLEAN: "<i",
    ArgKind.LONG: "<q",
    ArgKind.DOUBLE: "<d",
}


def read_primitive(cursor: ParcelCursor, kind: ArgKind | ArgType) -> int | bool | float:
    if isinstance(kind, ArgType):
        kind = kind.kind
    fmt = _PRIMITIVE_FORMATS.get(kind)
    if fmt is None:
        raise ValueError(f"{kind} is not a primitive kind")
    size = struct.calcsize(fmt)
    if cursor.remaining < size:
        raise TruncatedPrimitive(f"{kind.value} needs {size} bytes, have {cursor.remaining}")
    (value,) = cursor.peek(fmt)
    cursor.position += size
    if kind is ArgKind.BOOLEAN:
        return value != 0
    return value


_FBO = struct.Struct("<IIQQ")


def read_flat_binder_object(cursor: ParcelCursor, expect_stability: bool = True) -> FlatBinderObject:
    size = _FBO.size + (4 if expect_stability else 0)
    if cursor.remaining < size:
        raise TruncatedObject(f"flat binder object needs {size} bytes, have {cursor.remaining}")
    tag, flags, handle, cookie = cursor.peek(_FBO.format)
    if tag in _INDIRECT_TYPES:
        raise UnsupportedType(f"binder object of type {_INDIRECT_TYPES[tag]} is not followed")
    if tag not in _FLAT_BINDER_TYPES:
        raise MalformedObject(f"unrecognized binder object type 0x{tag:08x}")
    stability = cursor.peek("<I", _FBO.size)[0] if expect_stability else None
    cursor.position += size
    return FlatBinderObject(tag, flags, handle, cookie, stability)


def read_typed_object(
    cursor: ParcelCursor, inner_name: str = "", expect_stability: bool = True
) -> FlatBinderObject | None:
    """``writeTypedObject()``: int32 nullness marker, then the object if 1."""
    if cursor.remaining < 4:
        raise TruncatedObject(f"need 4 bytes for nullness marker of {inner_name or 'object'}")
    (marker,) = cursor.peek("<I")
    if marker == 0:
        cursor.position += 4
        return None
    if marker != 1:
        raise MalformedObject(f"nullness marker {marker:#x} for {inner_name or 'object'}")
    start = cursor.position
    cursor.position += 4
    try:
        return read_flat_binder_object(cursor, expect_stability)
    except ParcelError:
        cursor.position = start
        raise


def read_value(cursor: ParcelCursor, argtype: ArgType, stability_footer: bool = True) -> Any:
    kind = argtype.kind
    if kind in _PRIMITIVE_FORMATS:
        return read_primitive(cursor, kind)
    if kind is ArgKind.STRING16:
        return read_string16(cursor)
    if kind is ArgKind.STRONG_BINDER:
        return read_flat_binder_object(cursor, stability_footer)
    if kind is ArgKind.TYPED_OBJECT:
        return read_typed_object(cursor, argtype.name, stability_footer)
    raise UnsupportedType(f"type {argtype.name!r} cannot be decoded")


class Param(NamedTuple):
    name: str
    type_name: str
    value: Any


class ProcessInfo(NamedTuple):
    pid: int
    uid: int
    ts: int = 0


@dataclass
class AuditRecord:
    """One Binder transaction as it lands in the audit log.

    ``status`` is ``"OK"`` for a complete decode, ``"UnknownMethod"`` when
    the table has no signature, or the name of the parcel error that stopped
    decoding.  Partial records keep the arguments decoded so far and always
    keep the raw buffer.
    """

    ts: int
    pid: int
    uid: int
    code: int
    flags: int
    data_size: int
    raw_buffer: bytes
    interface: str | None = None
    method_name: str | None = None
    params: list[Param] = field(default_factory=list)
    status: str = "OK"
    error: str | None = None
    consumed: int = 0
    header: InterfaceHeader | None = None

    @property
    def method_code(self) -> int:
        return self.code

    @property
    def ok(self) -> bool:
        return self.status == "OK"


def decode_transaction(
    txn: TransactionRecord,
    table: SignatureTable,
    proc: ProcessInfo,
    *,
    stability_footer: bool = True,
) -> AuditRecord:
    """Decode ``txn.buffer`` against ``table``; never raises on bad input."""
    record = AuditRecord(
        ts=proc.ts,
        pid=proc.pid,
        uid=proc.uid,
        code=txn.code,
        flags=txn.flags,
        data_size=txn.data_size,
        raw_buffer=bytes(txn.buffer),
    )
    cursor = ParcelCursor(txn.buffer)
    try:
        header = read_interface_header(cursor)
    except ParcelError as exc:
        record.status, record.error = exc.status, str(exc)
        return record
    record.header = header
    record.interface = header.token
    record.consumed = cursor.position

    sig = table.lookup(header.token, txn.code)
    if sig is None:
        record.status = "UnknownMethod"
        record.error = f"no signature for {header.token} code {txn.code}"
        return record
    record.method_name = sig.method_name
    _decode_params(cursor, sig, record, stability_footer)
    return record


def _decode_params(
    cursor: ParcelCursor, sig: MethodSignature, record: AuditRecord, stability_footer: bool
) -> None:
    for spec in sig.params:
        argtype = parse_type(spec.type_name)
        try:
            value = read_value(cursor, argtype, stability_footer)
        except ParcelError as exc:
            record.status, record.error = exc.status, f"{spec.name}: {exc}"
            break
        # Every parcel write is padded to 4 bytes.
        cursor.position = min(pad4(cursor.position), len(cursor.buffer))
        record.params.append(Param(spec.name, spec.type_name, value))
        record.consumed = cursor.position
    record.consumed = cursor.position
    if record.status == "OK" and cursor.position != len(cursor.buffer):
        record.status = "TrailingBytes"
        record.error = f"{len(cursor.buffer) - cursor.position} bytes left after last argument"
