"""Reference parcel writer used as a test oracle.

Written from the platform Parcel write rules, independently of the
decoder: every write is padded to 4 bytes, String16 is an int32 char count
(-1 for null) followed by UTF-16LE text and a 16-bit terminator, typed
objects carry an int32 nullness marker, and flat binder objects are
type/flags/handle/cookie optionally followed by a stability word.
"""
import struct

STRICT_MODE = 0x80000000
WORK_SOURCE_UNSET = 0xFFFFFFFF
SYST = int.from_bytes(b"SYST", "big")  # stored little-endian -> "TSYS" on the wire


def _tag(c1, c2, c3, c4):
    return (ord(c1) << 24) | (ord(c2) << 16) | (ord(c3) << 8) | c4


HANDLE = _tag("s", "h", "*", 0x85)
BINDER = _tag("s", "b", "*", 0x85)
WEAK_HANDLE = _tag("w", "h", "*", 0x85)
WEAK_BINDER = _tag("w", "b", "*", 0x85)


class ParcelWriter:
    def __init__(self, stability=True):
        self.data = bytearray()
        self.stability = stability

    def _pad(self):
        while len(self.data) % 4:
            self.data.append(0)

    def write_int32(self, v):
        self.data += struct.pack("<i", v)

    def write_uint32(self, v):
        self.data += struct.pack("<I", v)

    def write_int64(self, v):
        self.data += struct.pack("<q", v)

    def write_double(self, v):
        self.data += struct.pack("<d", v)

    def write_bool(self, v):
        self.write_int32(1 if v else 0)

    def write_string16(self, s):
        if s is None:
            self.write_int32(-1)
            return
        units = s.encode("utf-16-le", "surrogatepass")
        self.write_int32(len(units) // 2)
        self.data += units + b"\x00\x00"
        self._pad()

    def write_interface_token(self, token, policy=STRICT_MODE, work_uid=WORK_SOURCE_UNSET, magic=SYST):
        self.write_uint32(policy)
        self.write_uint32(work_uid)
        self.write_uint32(magic)
        self.write_string16(token)

    def write_flat_binder(self, type_tag, flags, handle, cookie=0, stability=12):
        self.data += struct.pack("<IIQQ", type_tag, flags, handle, cookie)
        if self.stability:
            self.write_uint32(stability)

    def write_strong_binder(self, obj):
        """``obj`` is None or (type_tag, flags, handle, cookie, stability)."""
        if obj is None:
            self.write_flat_binder(BINDER, 0, 0, 0, 0)
        else:
            self.write_flat_binder(*obj)

    def write_typed_object(self, obj):
        if obj is None:
            self.write_int32(0)
        else:
            self.write_int32(1)
            self.write_flat_binder(*obj)

    def bytes(self):
        return bytes(self.data)
