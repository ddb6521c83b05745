"""Text and flat-record renderings of audit records."""
from __future__ import annotations

import json
from typing import Any

from .parcel import AuditRecord, FlatBinderObject, Param
from .sigtable import ArgKind, parse_type

__all__ = ["format_value", "render_text", "to_record", "value_to_json"]


def format_value(param: Param) -> str:
    value = param.value
    if value is None:
        return "null"
    kind = parse_type(param.type_name).kind
    if isinstance(value, FlatBinderObject):
        return _format_fbo(value)
    if kind is ArgKind.BOOLEAN:
        return "1" if value else "0"
    if kind is ArgKind.LONG:
        return f"0x{value & 0xFFFFFFFFFFFFFFFF:016x}"
    if kind is ArgKind.STRING16:
        return json.dumps(value, ensure_ascii=False)
    return str(value)


def _format_fbo(obj: FlatBinderObject) -> str:
    if obj.is_null:
        return "null"
    ref = "handle" if obj.type_name in ("HANDLE", "WEAK_HANDLE") else "ptr"
    parts = [obj.type_name, f"flags=0x{obj.flags:x}", f"{ref}=0x{obj.handle_or_ptr:x}"]
    if obj.stability is not None:
        parts.append(f"stability={obj.stability}")
    return "<" + ", ".join(parts) + ">"


def render_text(record: AuditRecord) -> str:
    lines = [
        f"pid={record.pid}  uid={record.uid}  flags={record.flags}  data_size={record.data_size}",
        f"iface={record.interface if record.interface is not None else '?'}  code={record.code}",
    ]
    if record.method_name is not None:
        args = ", ".join(f"{p.type_name} {p.name}={format_value(p)}" for p in record.params)
        lines.append(f"{record.method_name}({args})")
    if record.status != "OK":
        lines.append(f"status={record.status}  error={record.error}")
        lines.append(f"raw={record.raw_buffer.hex()}")
    return "\n".join(lines)


def value_to_json(value: Any) -> Any:
    if isinstance(value, FlatBinderObject):
        return {
            "type": value.type_name,
            "flags": value.flags,
            "handle": value.handle_or_ptr,
            "cookie": value.cookie,
            "stability": value.stability,
        }
    return value


def to_record(record: AuditRecord) -> dict:
    """Flat record carrying the logged attributes of a binder event."""
    return {
        "ts": record.ts,
        "pid": record.pid,
        "uid": record.uid,
        "code": record.code,
        "target_flags": record.flags,
        "data_size": record.data_size,
        "interface": record.interface,
        "method_code": record.method_code,
        "method_name": record.method_name,
        "params": [
            {"name": p.name, "type": p.type_name, "value": value_to_json(p.value)}
            for p in record.params
        ],
        "status": record.status,
        "error": record.error,
        "raw_buffer_hex": record.raw_buffer.hex(),
    }
