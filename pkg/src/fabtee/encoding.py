"""Canonical, injective binary encoding.

Every value that is hashed, signed, sealed or passed across an enclave boundary
goes through :func:`encode`.  The format is a tagged, length-prefixed tree; the
bit-exact layout is documented in ``docs/encoding.md``.  :func:`decode` rejects
any input that :func:`encode` would not have produced, so
``encode(decode(b)) == b`` whenever decoding succeeds.
"""

from __future__ import annotations

import dataclasses
import struct
from typing import Any

from .errors import EncodingError

T_NONE = 0x00
T_FALSE = 0x01
T_TRUE = 0x02
T_INT = 0x03
T_BYTES = 0x04
T_STR = 0x05
T_LIST = 0x06
T_MAP = 0x07
T_RECORD = 0x08
T_ABSENT = 0x09

_U32 = struct.Struct(">I")


class _Absent:
    """Distinguished marker for a key that has no committed value."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "ABSENT"

    def __bool__(self) -> bool:
        return False

    def __reduce__(self):
        return (_Absent, ())


ABSENT = _Absent()

_RECORDS: dict[str, type] = {}


def record(cls):
    """Register a dataclass so it can be encoded and decoded by name."""
    if not dataclasses.is_dataclass(cls):
        raise TypeError(f"{cls.__name__} is not a dataclass")
    if cls.__name__ in _RECORDS and _RECORDS[cls.__name__] is not cls:
        raise TypeError(f"duplicate record name {cls.__name__}")
    _RECORDS[cls.__name__] = cls
    return cls


def _len(n: int) -> bytes:
    if n >= 1 << 32:
        raise EncodingError("length exceeds u32")
    return _U32.pack(n)


def _int_bytes(n: int) -> bytes:
    return n.to_bytes(n.bit_length() // 8 + 1, "big", signed=True)


def _enc(x: Any, out: list[bytes]) -> None:
    if x is None:
        out.append(b"\x00")
    elif x is ABSENT:
        out.append(b"\x09")
    elif x is True:
        out.append(b"\x02")
    elif x is False:
        out.append(b"\x01")
    elif isinstance(x, int):
        b = _int_bytes(x)
        out += (b"\x03", _len(len(b)), b)
    elif isinstance(x, (bytes, bytearray, memoryview)):
        b = bytes(x)
        out += (b"\x04", _len(len(b)), b)
    elif isinstance(x, str):
        b = x.encode("utf-8")
        out += (b"\x05", _len(len(b)), b)
    elif isinstance(x, (list, tuple)):
        out += (b"\x06", _len(len(x)))
        for item in x:
            _enc(item, out)
    elif isinstance(x, dict):
        items = sorted((encode(k), encode(v)) for k, v in x.items())
        out += (b"\x07", _len(len(items)))
        for k, v in items:
            out += (k, v)
    elif dataclasses.is_dataclass(x) and type(x).__name__ in _RECORDS:
        name = type(x).__name__.encode()
        fields = dataclasses.fields(x)
        out += (b"\x08", _len(len(name)), name, _len(len(fields)))
        for f in fields:
            _enc(getattr(x, f.name), out)
    else:
        raise EncodingError(f"cannot encode {type(x).__name__}")


def encode(x: Any) -> bytes:
    out: list[bytes] = []
    _enc(x, out)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise EncodingError("truncated input")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def _dec(r: _Reader, depth: int) -> Any:
    if depth > 64:
        raise EncodingError("nesting too deep")
    tag = r.take(1)[0]
    if tag == T_NONE:
        return None
    if tag == T_ABSENT:
        return ABSENT
    if tag == T_TRUE:
        return True
    if tag == T_FALSE:
        return False
    if tag == T_INT:
        b = r.take(r.u32())
        if not b:
            raise EncodingError("empty integer")
        n = int.from_bytes(b, "big", signed=True)
        if _int_bytes(n) != b:
            raise EncodingError("non-minimal integer")
        return n
    if tag == T_BYTES:
        return r.take(r.u32())
    if tag == T_STR:
        try:
            return r.take(r.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise EncodingError("invalid utf-8") from None
    if tag == T_LIST:
        n = r.u32()
        return tuple(_dec(r, depth + 1) for _ in range(n))
    if tag == T_MAP:
        n = r.u32()
        result = {}
        prev = None
        for _ in range(n):
            start = r.pos
            k = _dec(r, depth + 1)
            kb = r.data[start:r.pos]
            start = r.pos
            v = _dec(r, depth + 1)
            pair = (kb, r.data[start:r.pos])
            if prev is not None and pair <= prev:
                raise EncodingError("map entries not in canonical order")
            prev = pair
            try:
                result[k] = v
            except TypeError:
                raise EncodingError("unhashable map key") from None
        return result
    if tag == T_RECORD:
        name = r.take(r.u32()).decode("utf-8", errors="replace")
        cls = _RECORDS.get(name)
        if cls is None:
            raise EncodingError(f"unknown record {name!r}")
        n = r.u32()
        fields = dataclasses.fields(cls)
        if n != len(fields):
            raise EncodingError(f"{name}: expected {len(fields)} fields, got {n}")
        values = [_dec(r, depth + 1) for _ in range(n)]
        try:
            return cls(*values)
        except (TypeError, ValueError) as exc:
            raise EncodingError(f"{name}: {exc}") from None
    raise EncodingError(f"unknown tag 0x{tag:02x}")


def decode(data: bytes) -> Any:
    r = _Reader(bytes(data))
    value = _dec(r, 0)
    if r.pos != len(r.data):
        raise EncodingError("trailing bytes")
    return value


def decode_as(data: bytes, cls: type):
    value = decode(data)
    if not isinstance(value, cls):
        raise EncodingError(f"expected {cls.__name__}, got {type(value).__name__}")
    return value
