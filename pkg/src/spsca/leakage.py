"""Flip-flop leakage table and the per-cell static power model.

Leakages are dimensionless normalized currents.  The shipped table values are
taken as the X2 (reference) drive strength; leakage and area scale linearly
with ``multiplier / 2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from itertools import product
from types import MappingProxyType
from typing import Mapping

import numpy as np

LIBRARY_FORMAT = "spsca-cell-library"
LIBRARY_VERSION = 1


class LibraryError(ValueError):
    """Raised for a cell-library document that violates the schema."""


class CellType(str, Enum):
    LVT = "LVT"
    RVT = "RVT"
    HVT = "HVT"

    @property
    def index(self) -> int:
        return _CELL_ORDER.index(self)


_CELL_ORDER = (CellType.LVT, CellType.RVT, CellType.HVT)


class DriveStrength(Enum):
    X2 = 2
    X4 = 4
    X8 = 8

    @property
    def multiplier(self) -> int:
        return self.value

    @property
    def scale(self) -> float:
        """Factor relative to the X2 reference strength."""
        return self.value / 2

    @classmethod
    def parse(cls, text) -> "DriveStrength":
        if isinstance(text, DriveStrength):
            return text
        if isinstance(text, int) and not isinstance(text, bool):
            text = f"X{text}"
        try:
            return cls[str(text).upper()]
        except KeyError:
            raise ValueError(f"unknown drive strength {text!r}") from None


@dataclass(frozen=True)
class PinState:
    clk: int
    d: int
    q: int

    def __post_init__(self):
        for name in ("clk", "d", "q"):
            if getattr(self, name) not in (0, 1):
                raise ValueError(f"PinState.{name} must be 0 or 1")

    @property
    def code(self) -> str:
        return f"{self.clk}{self.d}{self.q}"


ALL_PIN_STATES = tuple(PinState(c, d, q) for c, d, q in product((0, 1), repeat=3))

# Normalized D-FF leakage currents of a commercial 28nm library, rows in
# (CLK, D, Q) order 000..111.
_DEFAULT_LEAKAGE = {
    CellType.LVT: (112.8, 136.0, 129.3, 118.3, 138.1, 125.0, 131.5, 93.5),
    CellType.RVT: (9.0, 10.1, 10.1, 9.2, 10.2, 9.1, 9.7, 7.1),
    CellType.HVT: (1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0),
}
DEFAULT_FF_AREA = 1.0
DEFAULT_MUX_AREA = 0.35
DEFAULT_MUX_LEAKAGE = 0.5


def _key(cell: CellType, pins: PinState) -> str:
    return f"{cell.value}.{pins.code}"


@dataclass(frozen=True, eq=False)
class LeakageTable:
    """Immutable leakage and area constants for the three cell flavors.

    ``leakage`` is keyed ``"<CELL>.<clk><d><q>"`` and ``area`` is keyed
    ``"<CELL>.<STRENGTH>"``.
    """

    leakage: Mapping[str, float]
    area: Mapping[str, float]
    mux_leakage: float = DEFAULT_MUX_LEAKAGE
    mux_area: float = DEFAULT_MUX_AREA
    _values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        leakage = {k: float(v) for k, v in self.leakage.items()}
        area = {k: float(v) for k, v in self.area.items()}
        _validate(leakage, area, self.mux_leakage, self.mux_area)
        object.__setattr__(self, "leakage", MappingProxyType(leakage))
        object.__setattr__(self, "area", MappingProxyType(area))
        values = np.empty((3, 2, 2, 2))
        for cell, pins in product(_CELL_ORDER, ALL_PIN_STATES):
            values[cell.index, pins.clk, pins.d, pins.q] = leakage[_key(cell, pins)]
        values.setflags(write=False)
        object.__setattr__(self, "_values", values)

    def value(self, cell: CellType, pins: PinState) -> float:
        return self.leakage[_key(CellType(cell), pins)]

    def ff_area(self, cell: CellType, strength: DriveStrength) -> float:
        return self.area[f"{CellType(cell).value}.{strength.name}"]

    @property
    def values(self) -> np.ndarray:
        """Read-only array indexed ``[cell.index, clk, d, q]``."""
        return self._values

    def scaled(self, factor: float) -> "LeakageTable":
        """Copy with every leakage entry (including the mux term) scaled."""
        return LeakageTable(
            leakage={k: v * factor for k, v in self.leakage.items()},
            area=dict(self.area),
            mux_leakage=self.mux_leakage * factor,
            mux_area=self.mux_area,
        )

    def __eq__(self, other):
        if not isinstance(other, LeakageTable):
            return NotImplemented
        return (dict(self.leakage) == dict(other.leakage)
                and dict(self.area) == dict(other.area)
                and self.mux_leakage == other.mux_leakage
                and self.mux_area == other.mux_area)

    __hash__ = None

    def __reduce__(self):
        return (LeakageTable, (dict(self.leakage), dict(self.area),
                               self.mux_leakage, self.mux_area))

    def to_dict(self) -> dict:
        return {
            "format": LIBRARY_FORMAT,
            "version": LIBRARY_VERSION,
            "leakage": {_key(c, p): self.leakage[_key(c, p)]
                        for c, p in product(_CELL_ORDER, ALL_PIN_STATES)},
            "area": {f"{c.value}.{s.name}": self.area[f"{c.value}.{s.name}"]
                     for c, s in product(_CELL_ORDER, DriveStrength)},
            "mux": {"leakage": self.mux_leakage, "area": self.mux_area},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _validate(leakage, area, mux_leakage, mux_area):
    for cell, pins in product(_CELL_ORDER, ALL_PIN_STATES):
        key = _key(cell, pins)
        if key not in leakage:
            raise LibraryError(f"leakage entry {key} is missing")
        if not np.isfinite(leakage[key]) or leakage[key] < 0:
            raise LibraryError(f"leakage entry {key} must be a nonnegative number")
    for pins in ALL_PIN_STATES:
        lvt, rvt, hvt = (leakage[_key(c, pins)] for c in _CELL_ORDER)
        if not lvt > rvt > hvt:
            raise LibraryError(
                f"ordering LVT > RVT > HVT violated at pin state {pins.code}: "
                f"{lvt} / {rvt} / {hvt}")
    for cell, strength in product(_CELL_ORDER, DriveStrength):
        key = f"{cell.value}.{strength.name}"
        if key not in area:
            raise LibraryError(f"area entry {key} is missing")
        if not np.isfinite(area[key]) or area[key] <= 0:
            raise LibraryError(f"area entry {key} must be a positive number")
    if not np.isfinite(mux_leakage) or mux_leakage < 0:
        raise LibraryError("mux.leakage must be a nonnegative number")
    if not np.isfinite(mux_area) or mux_area <= 0:
        raise LibraryError("mux.area must be a positive number")


def _builtin_table() -> LeakageTable:
    leakage = {_key(c, p): _DEFAULT_LEAKAGE[c][i]
               for c in _CELL_ORDER for i, p in enumerate(ALL_PIN_STATES)}
    area = {f"{c.value}.{s.name}": DEFAULT_FF_AREA * s.scale
            for c, s in product(_CELL_ORDER, DriveStrength)}
    return LeakageTable(leakage, area, DEFAULT_MUX_LEAKAGE, DEFAULT_MUX_AREA)


def default_table() -> LeakageTable:
    """The shipped library, read from package data with a built-in fallback."""
    try:
        text = resources.files("spsca").joinpath("data/default_library.json").read_text("utf-8")
    except (FileNotFoundError, ModuleNotFoundError, OSError):
        return _builtin_table()
    return load_table(text)


def _number(section: dict, key: str, where: str) -> float:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise LibraryError(f"{where} entry {key} is not numeric: {value!r}")
    return float(value)


def load_table(text: str) -> LeakageTable:
    """Parse a cell-library JSON document into a validated table."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise LibraryError(f"library is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise LibraryError("library document must be a JSON object")
    if doc.get("format", LIBRARY_FORMAT) != LIBRARY_FORMAT:
        raise LibraryError(f"unexpected format tag {doc.get('format')!r}")
    for section in ("leakage", "area", "mux"):
        if not isinstance(doc.get(section), dict):
            raise LibraryError(f"section {section!r} is missing")
    leakage = {}
    for cell, pins in product(_CELL_ORDER, ALL_PIN_STATES):
        key = _key(cell, pins)
        if key not in doc["leakage"]:
            raise LibraryError(f"leakage entry {key} is missing")
        leakage[key] = _number(doc["leakage"], key, "leakage")
    area = {}
    for cell, strength in product(_CELL_ORDER, DriveStrength):
        key = f"{cell.value}.{strength.name}"
        if key not in doc["area"]:
            raise LibraryError(f"area entry {key} is missing")
        area[key] = _number(doc["area"], key, "area")
    for key in ("leakage", "area"):
        if key not in doc["mux"]:
            raise LibraryError(f"mux entry {key} is missing")
    return LeakageTable(leakage, area,
                        _number(doc["mux"], "leakage", "mux"),
                        _number(doc["mux"], "area", "mux"))


def read_table(path) -> LeakageTable:
    with open(path, encoding="utf-8") as fh:
        return load_table(fh.read())


def ff_leakage(table: LeakageTable, cell: CellType, strength: DriveStrength,
               pins: PinState) -> float:
    return table.value(cell, pins) * strength.scale
