"""Bit-level cell assignments for the 128 AES state-register flip-flops."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Union

import numpy as np

from .leakage import CellType, DriveStrength, LeakageTable
from .validation import check_seed

N_BYTES = 16
N_BITS = 128
PRIMITIVE_COUNTS = (0, 2, 4, 6, 8)
CONFIG_FORMAT = "spsca-design"


@dataclass(frozen=True)
class Plain:
    cell: CellType
    strength: DriveStrength = DriveStrength.X2


@dataclass(frozen=True)
class Primitive:
    """Countermeasure primitive: one or two LVT flip-flop paths behind a CTL mux.

    ``strengths[0]`` is the path selected by CTL=0.
    """

    strengths: tuple

    def __post_init__(self):
        strengths = tuple(DriveStrength.parse(s) for s in self.strengths)
        if len(strengths) not in (1, 2):
            raise ValueError("a primitive has 1 or 2 paths")
        object.__setattr__(self, "strengths", strengths)

    @property
    def paths(self) -> int:
        return len(self.strengths)

    @property
    def cell(self) -> CellType:
        return CellType.LVT


BitCell = Union[Plain, Primitive]


class StrengthPolicy(str, Enum):
    # one strength drawn for the whole half
    CONSTANT_RANDOM = "constant-random"
    # independent draw per flip-flop (and per path inside primitives)
    PER_FF_RANDOM = "per-ff-random"
    # one strength drawn per design, shared by every half with this policy
    DESIGN_CONSTANT = "design-constant"
    FIXED_X2 = "fixed-x2"


@dataclass(frozen=True)
class DesignSpec:
    half_a_count: int = 0
    half_b_count: int = 0
    half_a_strength_policy: StrengthPolicy = StrengthPolicy.FIXED_X2
    half_b_strength_policy: StrengthPolicy = StrengthPolicy.FIXED_X2
    half_a_paths: int = 1
    half_b_paths: int = 1
    baseline_cell_mix: float = 0.0
    seed: int = 0
    strengths: tuple = (DriveStrength.X2, DriveStrength.X4, DriveStrength.X8)

    def __post_init__(self):
        for name in ("half_a_count", "half_b_count"):
            v = getattr(self, name)
            if v not in PRIMITIVE_COUNTS:
                raise ValueError(f"{name} must be one of {PRIMITIVE_COUNTS}, got {v}")
        for name in ("half_a_paths", "half_b_paths"):
            if getattr(self, name) not in (1, 2):
                raise ValueError(f"{name} must be 1 or 2")
        if not 0.0 <= float(self.baseline_cell_mix) <= 1.0:
            raise ValueError("baseline_cell_mix must lie in [0, 1]")
        object.__setattr__(self, "half_a_strength_policy", StrengthPolicy(self.half_a_strength_policy))
        object.__setattr__(self, "half_b_strength_policy", StrengthPolicy(self.half_b_strength_policy))
        object.__setattr__(self, "strengths", tuple(DriveStrength.parse(s) for s in self.strengths))
        if not self.strengths:
            raise ValueError("strengths must not be empty")
        object.__setattr__(self, "seed", check_seed(self.seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["half_a_strength_policy"] = self.half_a_strength_policy.value
        d["half_b_strength_policy"] = self.half_b_strength_policy.value
        d["strengths"] = [s.name for s in self.strengths]
        return d


@dataclass(frozen=True)
class StateRegisterConfig:
    """128 bit cells; bit ``8 * j + i`` is bit ``i`` of state byte ``j``."""

    bits: tuple
    label: str = ""
    provenance: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        bits = tuple(self.bits)
        if len(bits) != N_BITS:
            raise ValueError(f"a state register config has {N_BITS} bits, got {len(bits)}")
        for b in bits:
            if not isinstance(b, (Plain, Primitive)):
                raise TypeError(f"unexpected bit cell {b!r}")
        object.__setattr__(self, "bits", bits)

    def byte(self, j: int) -> tuple:
        return self.bits[8 * j:8 * j + 8]

    def bit(self, j: int, i: int) -> BitCell:
        return self.bits[8 * j + i]

    def count(self, kind=None, cell: CellType | None = None) -> int:
        n = 0
        for b in self.bits:
            if kind is not None and not isinstance(b, kind):
                continue
            if cell is not None and b.cell != cell:
                continue
            n += 1
        return n

    def primitives_per_byte(self) -> list:
        return [sum(isinstance(b, Primitive) for b in self.byte(j)) for j in range(N_BYTES)]

    def to_dict(self) -> dict:
        records = []
        for idx, b in enumerate(self.bits):
            rec = {"byte": idx // 8, "bit": idx % 8}
            if isinstance(b, Plain):
                rec.update(kind="plain", cell=b.cell.value, paths=0,
                           strengths=[b.strength.name])
            else:
                rec.update(kind="primitive", cell=CellType.LVT.value, paths=b.paths,
                           strengths=[s.name for s in b.strengths])
            records.append(rec)
        return {"format": CONFIG_FORMAT, "version": 1, "label": self.label,
                "provenance": self.provenance, "bits": records}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "StateRegisterConfig":
        if doc.get("format") != CONFIG_FORMAT:
            raise ValueError(f"not a design document (format={doc.get('format')!r})")
        bits: list = [None] * N_BITS
        for rec in doc["bits"]:
            idx = 8 * int(rec["byte"]) + int(rec["bit"])
            if not 0 <= idx < N_BITS or bits[idx] is not None:
                raise ValueError(f"bad or duplicate bit record {rec}")
            strengths = [DriveStrength.parse(s) for s in rec["strengths"]]
            if rec["kind"] == "plain":
                bits[idx] = Plain(CellType(rec["cell"]), strengths[0])
            elif rec["kind"] == "primitive":
                if rec.get("cell", "LVT") != "LVT":
                    raise ValueError("primitive flip-flops are always LVT")
                if int(rec["paths"]) != len(strengths):
                    raise ValueError(f"paths/strengths mismatch in {rec}")
                bits[idx] = Primitive(tuple(strengths))
            else:
                raise ValueError(f"unknown bit kind {rec['kind']!r}")
        if any(b is None for b in bits):
            raise ValueError("design document does not cover all 128 bits")
        return cls(tuple(bits), doc.get("label", ""), doc.get("provenance", {}))

    @classmethod
    def loads(cls, text: str) -> "StateRegisterConfig":
        return cls.from_dict(json.loads(text))


def uniform_config(cell: BitCell, label: str = "") -> StateRegisterConfig:
    return StateRegisterConfig((cell,) * N_BITS, label or f"uniform {cell}")


def _alternating_non_lvt(rng: np.random.Generator, n: int) -> list:
    # RVT first so odd counts give the extra bit to RVT
    cells = [CellType.RVT if k % 2 == 0 else CellType.HVT for k in range(n)]
    return [cells[k] for k in rng.permutation(n)]


def generate_design(spec: DesignSpec) -> StateRegisterConfig:
    """Draw a randomized design following ``spec`` (deterministic given its seed)."""
    rng = np.random.default_rng(spec.seed)
    half_a = np.sort(rng.choice(N_BYTES, size=N_BYTES // 2, replace=False))
    in_a = np.zeros(N_BYTES, dtype=bool)
    in_a[half_a] = True

    choices = spec.strengths
    design_strength = choices[rng.integers(len(choices))]
    half_strength = {h: choices[rng.integers(len(choices))] for h in ("a", "b")}

    def strength_drawer(half: str):
        policy = spec.half_a_strength_policy if half == "a" else spec.half_b_strength_policy
        if policy is StrengthPolicy.PER_FF_RANDOM:
            return lambda: choices[rng.integers(len(choices))]
        fixed = {StrengthPolicy.CONSTANT_RANDOM: half_strength[half],
                 StrengthPolicy.DESIGN_CONSTANT: design_strength,
                 StrengthPolicy.FIXED_X2: DriveStrength.X2}[policy]
        return lambda: fixed

    # primitive positions per byte, then plain flavors over all non-primitive bits
    is_prim = np.zeros((N_BYTES, 8), dtype=bool)
    for j in range(N_BYTES):
        count = spec.half_a_count if in_a[j] else spec.half_b_count
        is_prim[j, rng.choice(8, size=count, replace=False)] = True
    plain_slots = [(j, i) for j in range(N_BYTES) for i in range(8) if not is_prim[j, i]]
    n_lvt = int(round(spec.baseline_cell_mix * len(plain_slots)))
    flavors = {plain_slots[k]: CellType.LVT
               for k in rng.permutation(len(plain_slots))[:n_lvt]}
    for j in range(N_BYTES):
        rest = [(j, i) for i in range(8) if not is_prim[j, i] and (j, i) not in flavors]
        for slot, cell in zip(rest, _alternating_non_lvt(rng, len(rest))):
            flavors[slot] = cell

    draw = {"a": strength_drawer("a"), "b": strength_drawer("b")}
    bits = []
    for j in range(N_BYTES):
        half = "a" if in_a[j] else "b"
        paths = spec.half_a_paths if half == "a" else spec.half_b_paths
        for i in range(8):
            if is_prim[j, i]:
                bits.append(Primitive(tuple(draw[half]() for _ in range(paths))))
            else:
                bits.append(Plain(flavors[(j, i)], draw[half]()))
    label = (f"design a={spec.half_a_count} b={spec.half_b_count} "
             f"paths={spec.half_a_paths}/{spec.half_b_paths} seed={spec.seed}")
    provenance = {"generator": "generate_design", "spec": spec.to_dict(),
                  "half_a_bytes": [int(j) for j in half_a]}
    return StateRegisterConfig(tuple(bits), label, provenance)


def generate_baseline(lvt_bits_per_byte: int, seed: int) -> StateRegisterConfig:
    """Baseline (no primitives): exactly ``lvt_bits_per_byte`` LVT bits per byte, all X2."""
    if not 0 <= int(lvt_bits_per_byte) <= 8:
        raise ValueError(f"lvt_bits_per_byte must be in 0..8, got {lvt_bits_per_byte}")
    seed = check_seed(seed)
    rng = np.random.default_rng(seed)
    n_lvt = int(lvt_bits_per_byte)
    bits = []
    for _ in range(N_BYTES):
        cells = [CellType.LVT] * n_lvt + _alternating_non_lvt(rng, 8 - n_lvt)
        perm = rng.permutation(8)
        bits.extend(Plain(cells[k], DriveStrength.X2) for k in perm)
    return StateRegisterConfig(
        tuple(bits), f"baseline lvt={n_lvt} seed={seed}",
        {"generator": "generate_baseline", "lvt_bits_per_byte": n_lvt, "seed": seed})


@dataclass(frozen=True)
class AreaReport:
    absolute: float
    baseline: float
    overhead: float


def bit_area(cell: BitCell, table: LeakageTable) -> float:
    if isinstance(cell, Plain):
        return table.ff_area(cell.cell, cell.strength)
    area = sum(table.ff_area(CellType.LVT, s) for s in cell.strengths)
    if cell.paths == 2:
        area += table.mux_area
    return area


def area(config: StateRegisterConfig, table: LeakageTable,
         baseline: StateRegisterConfig | None = None) -> AreaReport:
    """Relative state-register area, with overhead against ``baseline``.

    Without a baseline the config is compared against itself.
    """
    absolute = sum(bit_area(b, table) for b in config.bits)
    ref = absolute if baseline is None else sum(bit_area(b, table) for b in baseline.bits)
    return AreaReport(absolute=absolute, baseline=ref, overhead=absolute / ref)

