"""Unit-bearing config values: ``"0.2 kPa/mm"`` -> ``2e5`` Pa/m (SI).

A quantity string is a number followed by a product/quotient of unit
symbols, e.g. ``"5e-3 kPa*s/mm"`` or ``"38.3 ml/s"``. Bare numbers are
taken as SI. Each field declares its dimension so that a stiffness given
in kPa is rejected instead of silently misread.
"""

from __future__ import annotations

import re

from .windkessel import MMHG

# dimension exponents over (kg, m, s)
_PRESSURE = (1, -1, -2)
UNITS = {
    "m": (1.0, (0, 1, 0)),
    "cm": (1e-2, (0, 1, 0)),
    "mm": (1e-3, (0, 1, 0)),
    "um": (1e-6, (0, 1, 0)),
    "s": (1.0, (0, 0, 1)),
    "ms": (1e-3, (0, 0, 1)),
    "kg": (1.0, (1, 0, 0)),
    "g": (1e-3, (1, 0, 0)),
    "Pa": (1.0, _PRESSURE),
    "kPa": (1e3, _PRESSURE),
    "MPa": (1e6, _PRESSURE),
    "mmHg": (MMHG, _PRESSURE),
    "N": (1.0, (1, 1, -2)),
    "ml": (1e-6, (0, 3, 0)),
    "mL": (1e-6, (0, 3, 0)),
    "l": (1e-3, (0, 3, 0)),
    "L": (1e-3, (0, 3, 0)),
}

DIMENSIONS = {
    "dimensionless": (0, 0, 0),
    "length": (0, 1, 0),
    "time": (0, 0, 1),
    "rate": (0, 0, -1),
    "pressure": _PRESSURE,
    "stiffness": (1, -2, -2),  # Pa/m
    "damping": (1, -2, -1),  # Pa s/m
    "viscosity": (1, -1, -1),  # Pa s
    "density": (1, -3, 0),
    "volume": (0, 3, 0),
    "flow": (0, 3, -1),
    "inertance": (1, -4, 0),  # kg/m^4
    "compliance": (-1, 4, 2),  # m^4 s^2/kg
    "resistance": (1, -4, -1),  # kg/(m^4 s)
}

_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")
_TOKEN = re.compile(r"([A-Za-z]+)(?:\^?(-?\d+))?")


class UnitError(ValueError):
    pass


def parse_unit(expr: str):
    """Return ``(factor, dims)`` of a unit expression like ``kPa*s/mm``."""
    expr = expr.replace("·", "*").replace(" ", "*")
    factor, dims = 1.0, [0, 0, 0]
    parts = expr.split("/")
    for k, part in enumerate(parts):
        sign = 1 if k == 0 else -1
        for tok in filter(None, part.split("*")):
            if tok == "1":
                continue
            m = _TOKEN.fullmatch(tok)
            if m is None or m.group(1) not in UNITS:
                raise UnitError(f"unknown unit {tok!r} in {expr!r}")
            f, dm = UNITS[m.group(1)]
            power = sign * int(m.group(2) or 1)
            factor *= f**power
            dims = [a + power * b for a, b in zip(dims, dm)]
    return factor, tuple(dims)


def to_si(value, dimension: str):
    """Convert a number or a quantity string to SI, checking its dimension."""
    if isinstance(value, bool):
        raise UnitError(f"expected a {dimension} quantity, got a boolean")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise UnitError(f"expected a {dimension} quantity, got {value!r}")
    m = _NUM.match(value)
    if m is None:
        raise UnitError(f"cannot read quantity {value!r}")
    number, unit = float(m.group(1)), m.group(2)
    if not unit:
        return number
    factor, dims = parse_unit(unit)
    want = DIMENSIONS[dimension]
    if dims != want:
        raise UnitError(f"unit mismatch: {value!r} is not a {dimension}")
    return number * factor
