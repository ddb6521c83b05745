"""Method-signature table: (interface token, transaction code) -> typed signature.

The table is produced on the device by a reflection-based dumper and stored
as newline-delimited JSON::

    {"meta": {"device": "...", "fingerprint": "...", "date": "..."}}
    {"iface": "com.android.internal.telephony.ISms", "code": 5,
     "name": "sendTextForSubscriber",
     "params": [{"name": "subId", "type": "int"}, ...]}

The metadata line is optional and, if present, must come first.
"""
from __future__ import annotations

import enum
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator

__all__ = [
    "ArgKind",
    "ArgType",
    "parse_type",
    "ParamSpec",
    "MethodSignature",
    "SignatureTable",
    "TableError",
    "ParseError",
    "DuplicateEntry",
    "Diagnostic",
    "load_table",
    "loads_table",
    "save_table",
    "dumps_table",
    "lookup",
    "validate_table",
    "sample_table_path",
    "load_sample_table",
    "FIRST_CALL_TRANSACTION",
    "table_from_signatures",
]

FIRST_CALL_TRANSACTION = 1


class ArgKind(enum.Enum):
    INT = "int"
    BOOLEAN = "boolean"
    DOUBLE = "double"
    LONG = "long"
    STRING16 = "String"
    STRONG_BINDER = "IBinder"
    TYPED_OBJECT = "TypedObject"
    UNSUPPORTED = "Unsupported"


_PRIMITIVES = {
    "int": ArgKind.INT,
    "boolean": ArgKind.BOOLEAN,
    "double": ArgKind.DOUBLE,
    "long": ArgKind.LONG,
    "String": ArgKind.STRING16,
    "IBinder": ArgKind.STRONG_BINDER,
}

# Parcelables whose wire form is not a single flat binder object, plus
# primitives outside the decoder's vocabulary.
_UNSUPPORTED_NAMES = frozenset(
    {
        "byte", "char", "short", "float",
        "Bundle", "PersistableBundle", "Intent", "Uri", "ComponentName",
        "ParcelFileDescriptor", "FileDescriptor", "CharSequence", "Object",
        "List", "ArrayList", "Map", "HashMap", "Parcel", "Parcelable",
    }
)  # fmt: skip

_IDENT = re.compile(r"^[A-Za-z_$][\w$]*(\.[A-Za-z_$][\w$]*)*$")
_AIDL_INTERFACE = re.compile(r"^I[A-Z]\w*$")


@dataclass(frozen=True)
class ArgType:
    kind: ArgKind
    name: str

    @property
    def supported(self) -> bool:
        return self.kind is not ArgKind.UNSUPPORTED


def parse_type(type_name: str) -> ArgType:
    """Map a Java type name from the table onto a decoder kind.

    Qualified names are reduced to their simple name.  ``IBinder`` and AIDL
    interface names (``I`` + capital) take the strong-binder path; any other
    plain class name is treated as a typed object (nullness marker + flat
    binder object), unless it is a known non-binder parcelable.
    """
    name = type_name.strip()
    if not name or not _IDENT.match(name):
        return ArgType(ArgKind.UNSUPPORTED, name)
    simple = name.rsplit(".", 1)[-1]
    if simple in _PRIMITIVES:
        return ArgType(_PRIMITIVES[simple], simple)
    if simple in _UNSUPPORTED_NAMES or simple[0].islower():
        return ArgType(ArgKind.UNSUPPORTED, simple)
    if _AIDL_INTERFACE.match(simple):
        return ArgType(ArgKind.STRONG_BINDER, simple)
    return ArgType(ArgKind.TYPED_OBJECT, simple)


@dataclass(frozen=True)
class ParamSpec:
    name: str
    type_name: str

    @property
    def type(self) -> ArgType:
        return parse_type(self.type_name)


@dataclass(frozen=True)
class MethodSignature:
    interface_token: str
    code: int
    method_name: str
    params: tuple[ParamSpec, ...] = ()

    @property
    def types(self) -> list[ArgType]:
        return [p.type for p in self.params]

    def to_json(self) -> dict:
        return {
            "iface": self.interface_token,
            "code": self.code,
            "name": self.method_name,
            "params": [{"name": p.name, "type": p.type_name} for p in self.params],
        }


class TableError(Exception):
    pass


class ParseError(TableError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DuplicateEntry(TableError):
    def __init__(self, token: str, code: int, line: int | None = None):
        self.token, self.code, self.line = token, code, line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate entry for {token} code {code}{where}")


@dataclass
class SignatureTable:
    """Lookup table keyed by (interface token, code).

    Built with :meth:`add`; treat it as read-only once loaded.
    """

    entries: dict[tuple[str, int], MethodSignature] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, sig: MethodSignature) -> None:
        key = (sig.interface_token, sig.code)
        if key in self.entries:
            raise DuplicateEntry(*key)
        self.entries[key] = sig

    def lookup(self, token: str, code: int) -> MethodSignature | None:
        return self.entries.get((token, code))

    def interfaces(self) -> list[str]:
        return sorted({tok for tok, _ in self.entries})

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[MethodSignature]:
        return iter(sorted(self.entries.values(), key=lambda s: (s.interface_token, s.code)))


def lookup(table: SignatureTable, token: str, code: int) -> MethodSignature | None:
    return table.lookup(token, code)


def _entry_from_json(obj: object, line: int) -> MethodSignature:
    if not isinstance(obj, dict):
        raise ParseError("record is not an object", line)
    try:
        token = obj["iface"]
        code = obj["code"]
        name = obj["name"]
        params = obj.get("params", [])
    except KeyError as exc:
        raise ParseError(f"missing field {exc.args[0]!r}", line) from None
    if not isinstance(token, str) or not isinstance(name, str):
        raise ParseError("'iface' and 'name' must be strings", line)
    if isinstance(code, bool) or not isinstance(code, int) or code < FIRST_CALL_TRANSACTION:
        raise ParseError(f"'code' must be an integer >= {FIRST_CALL_TRANSACTION}", line)
    if not isinstance(params, list):
        raise ParseError("'params' must be a list", line)
    specs = []
    for i, p in enumerate(params):
        if not isinstance(p, dict) or not isinstance(p.get("type"), str):
            raise ParseError(f"param {i} needs a string 'type'", line)
        specs.append(ParamSpec(str(p.get("name", f"arg{i}")), p["type"]))
    return MethodSignature(token, code, name, tuple(specs))


def loads_table(text: str) -> SignatureTable:
    table = SignatureTable()
    seen_entry = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON at column {exc.colno}: {exc.msg}", lineno) from None
        if isinstance(obj, dict) and "meta" in obj:
            if seen_entry or table.meta:
                raise ParseError("metadata record must be the first record", lineno)
            if not isinstance(obj["meta"], dict):
                raise ParseError("'meta' must be an object", lineno)
            table.meta = dict(obj["meta"])
            continue
        sig = _entry_from_json(obj, lineno)
        seen_entry = True
        try:
            table.add(sig)
        except DuplicateEntry:
            raise DuplicateEntry(sig.interface_token, sig.code, lineno) from None
    return table


def load_table(path: str | Path) -> SignatureTable:
    return loads_table(Path(path).read_text(encoding="utf-8"))


def dumps_table(table: SignatureTable) -> str:
    lines = []
    if table.meta:
        lines.append(json.dumps({"meta": table.meta}, sort_keys=True))
    lines.extend(json.dumps(sig.to_json()) for sig in table)
    return "".join(line + "\n" for line in lines)


def save_table(table: SignatureTable, path: str | Path) -> None:
    Path(path).write_text(dumps_table(table), encoding="utf-8")


@dataclass(frozen=True)
class Diagnostic:
    kind: str  # "Unsupported" | "EmptyName" | "CodeGap"
    interface: str
    code: int | None
    detail: str

    def __str__(self) -> str:
        where = self.interface if self.code is None else f"{self.interface}#{self.code}"
        return f"{self.kind}: {where}: {self.detail}"


def validate_table(table: SignatureTable) -> list[Diagnostic]:
    """Informational checks; an empty list means the table is well formed.

    Code gaps are reported only between the lowest and highest code present
    for an interface, since dumps routinely cover a subset of methods.
    """
    diags: list[Diagnostic] = []
    codes: dict[str, list[int]] = defaultdict(list)
    for sig in table:
        codes[sig.interface_token].append(sig.code)
        if not sig.method_name:
            diags.append(Diagnostic("EmptyName", sig.interface_token, sig.code, "empty method name"))
        for p in sig.params:
            if not p.type.supported:
                diags.append(
                    Diagnostic(
                        "Unsupported",
                        sig.interface_token,
                        sig.code,
                        f"parameter {p.name!r} has unsupported type {p.type_name!r}",
                    )
                )
    for iface, present in sorted(codes.items()):
        missing = sorted(set(range(min(present), max(present) + 1)) - set(present))
        if missing:
            diags.append(Diagnostic("CodeGap", iface, None, f"missing codes {missing}"))
    return diags


def sample_table_path():
    return resources.files("droidaudit") / "data" / "sample_table.ndjson"


def load_sample_table() -> SignatureTable:
    return loads_table(sample_table_path().read_text(encoding="utf-8"))


def table_from_signatures(sigs: Iterable[MethodSignature], meta: dict | None = None) -> SignatureTable:
    table = SignatureTable(meta=dict(meta or {}))
    for sig in sigs:
        table.add(sig)
    return table
