"""Shared numeric plumbing: the millisecond time base and binary size units.

Simulated time is kept as non-negative integer milliseconds everywhere
inside the package; seconds (int, float, decimal string or Fraction) are
accepted at the boundaries and converted exactly.  Sizes are integer bytes
with KB/MB/GB meaning the 1024-based units.
"""
from __future__ import annotations

import re
from fractions import Fraction

Seconds = "int | float | str | Fraction"

KB = 1024
MB = 1024 * KB
GB = 1024 * MB

_SIZE_UNITS = {"B": 1, "KB": KB, "MB": MB, "GB": GB}
_SIZE_RE = re.compile(r"^\s*([0-9]+(?:\.[0-9]+)?)\s*(B|KB|MB|GB)?\s*(/s)?\s*$")


def as_fraction(value) -> Fraction:
    """Exact rational view of a seconds-like value.

    Floats are read through their decimal repr so that 0.1 means 1/10,
    not the nearest binary double.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("boolean is not a duration")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(str(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot interpret {value!r} as seconds")


def to_millis(seconds) -> int:
    """Seconds to integer milliseconds, rounding half-up."""
    return int(as_fraction(seconds) * 1000 + Fraction(1, 2))


def millis_to_text(ms: int) -> str:
    """Fixed-point rendering (three decimals) used by traces and tables."""
    sign = "-" if ms < 0 else ""
    ms = abs(ms)
    return f"{sign}{ms // 1000}.{ms % 1000:03d}"


def parse_size(text: str, *, where: str = "size") -> int:
    """'12 MB' / '50 KB' / '1024' -> integer bytes (binary units)."""
    m = _SIZE_RE.match(text)
    if not m or m.group(3):
        raise ValueError(f"bad {where}: {text!r}")
    amount = Fraction(m.group(1)) * _SIZE_UNITS[m.group(2) or "B"]
    if amount.denominator != 1:
        raise ValueError(f"bad {where}: {text!r} is not a whole number of bytes")
    return int(amount)


def parse_rate(text: str, *, where: str = "rate") -> Fraction:
    """'10 MB/s' (or a bare bytes-per-second number) -> Fraction bytes/s."""
    m = _SIZE_RE.match(text)
    if not m:
        raise ValueError(f"bad {where}: {text!r}")
    rate = Fraction(m.group(1)) * _SIZE_UNITS[m.group(2) or "B"]
    if rate <= 0:
        raise ValueError(f"bad {where}: {text!r} must be positive")
    return rate


def fmt_quantity(value) -> str:
    """Stable one-token rendering of numbers for trace details and tables."""
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return repr(float(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)
