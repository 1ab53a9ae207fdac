"""Exact rational parsing and formatting.

All market data travel as `fractions.Fraction`; text form is "p/q" (or a bare
integer string).  Floats are rejected everywhere so that file round-trips stay
bit-exact.
"""

from __future__ import annotations

from fractions import Fraction

Rat = Fraction


def rat(value) -> Fraction:
    """Coerce an int, Fraction, or "p/q" string to an exact Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError(f"not a rational: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        text = value.strip()
        if "/" in text:
            num, _, den = text.partition("/")
            return Fraction(int(num), int(den))
        return Fraction(int(text))
    raise TypeError(f"not a rational: {value!r} (floats are not accepted)")


def rat_str(x: Fraction) -> str:
    """Canonical text form: "p/q", or "n" when the denominator is 1."""
    x = Fraction(x)
    if x.denominator == 1:
        return str(x.numerator)
    return f"{x.numerator}/{x.denominator}"
