"""Minimal SAS transport (XPORT v5) writer used to author test fixtures.

Written from the published SAS transport record layout, independent of the
Rust reader under test. Supports numeric (8-byte IBM float) and character
variables, missing sentinels, and the standard 80-byte record padding.
"""

import math
import struct

RECORD = 80


def _pad(text, width, fill=b" "):
    raw = text.encode("ascii") if isinstance(text, str) else text
    if len(raw) > width:
        raise ValueError(f"field {raw!r} wider than {width}")
    return raw + fill * (width - len(raw))


def _header(kind, tail="000000000000000000000000000000"):
    rec = f"HEADER RECORD*******{kind:<8}HEADER RECORD!!!!!!!{tail}".ljust(RECORD)
    return rec.encode("ascii")


def ibm_encode(value):
    """Encode a Python float as an 8-byte IBM System/360 double.

    Truncates the mantissa to 56 bits (exact for IEEE doubles whose
    significand fits after hex normalization). Missing values are given as
    one-character strings: '.', 'A'..'Z', '_'.
    """
    if isinstance(value, str):
        code = value.encode("ascii")
        if len(code) != 1:
            raise ValueError("missing code must be a single character")
        return code + b"\x00" * 7
    if value == 0.0:
        return b"\x00" * 8
    if math.isnan(value) or math.isinf(value):
        raise ValueError("non-finite values are not representable")
    sign = 0x80 if value < 0 else 0
    mant, exp2 = math.frexp(abs(value))  # abs = mant * 2**exp2, mant in [0.5, 1)
    # abs = fraction * 16**exp16 with fraction in [1/16, 1)
    exp16 = -((-exp2) // 4)  # ceil(exp2 / 4)
    shift = 4 * exp16 - exp2  # 0..3
    fraction = mant / (2 ** shift)
    integer = int(fraction * (1 << 56))
    if integer >= (1 << 56):
        integer >>= 4
        exp16 += 1
    biased = exp16 + 64
    if not 0 <= biased <= 127:
        raise ValueError("exponent out of IBM range")
    return bytes([sign | biased]) + integer.to_bytes(7, "big")


def _namestr(index, name, label, is_numeric, length, position):
    return b"".join(
        [
            struct.pack(">hhhh", 1 if is_numeric else 2, 0, length, index + 1),
            _pad(name.upper(), 8),
            _pad(label, 40),
            _pad("", 8),  # nform
            struct.pack(">hhh", 0, 0, 0),  # nfl, nfd, nfj
            b"\x00\x00",  # nfill
            _pad("", 8),  # niform
            struct.pack(">hh", 0, 0),
            struct.pack(">i", position),
            b"\x00" * 52,
        ]
    )


def write_xport(path, dataset, columns, rows, created="01JAN24:00:00:00"):
    """columns: list of (name, label, kind, length) with kind 'num' or 'char'."""
    out = bytearray()
    out += _header("LIBRARY")
    out += (
        _pad("SAS", 8) + _pad("SAS", 8) + _pad("SASLIB", 8) + _pad("9.4", 8)
        + _pad("X64_10PR", 8) + _pad("", 24) + _pad(created, 16)
    )
    out += _pad(created, 16) + _pad("", 64)
    out += _header("MEMBER", "000000000000000001600000000140")
    out += _header("DSCRPTR")
    out += (
        _pad("SAS", 8) + _pad(dataset.upper(), 8) + _pad("SASDATA", 8)
        + _pad("9.4", 8) + _pad("X64_10PR", 8) + _pad("", 24) + _pad(created, 16)
    )
    out += _pad(created, 16) + _pad("", 16) + _pad("", 40) + _pad("", 8)
    out += _header("NAMESTR", f"000000{len(columns):04d}00000000000000000000")
    names = bytearray()
    position = 0
    for i, (name, label, kind, length) in enumerate(columns):
        names += _namestr(i, name, label, kind == "num", length, position)
        position += length
    names += b" " * ((-len(names)) % RECORD)
    out += names
    out += _header("OBS")
    body = bytearray()
    for row in rows:
        for (name, _label, kind, length), value in zip(columns, row):
            if kind == "num":
                body += ibm_encode(value)[:length]
            else:
                body += _pad(value, length)
    body += b" " * ((-len(body)) % RECORD)
    out += body
    with open(path, "wb") as fh:
        fh.write(out)
    return bytes(out)
