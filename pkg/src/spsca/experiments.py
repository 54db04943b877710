"""Study orchestration: baseline LVT sweep, primitive grids and the summary table.

Every NTTD cell is an independent job whose seeds are derived from the
master seed and the cell coordinates, so results do not depend on the
number of workers or the execution order.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .design import (PRIMITIVE_COUNTS, DesignSpec, StateRegisterConfig, StrengthPolicy,
                     area, generate_baseline, generate_design)
from .leakage import LeakageTable, default_table, read_table
from .sampling import SamplingPlan, estimate_nttd
from .simulate import SimOptions, generate_traces
from .validation import check_block


class Study(str, Enum):
    BASELINE_SWEEP = "baseline-sweep"
    GRID_LVT_ONLY = "grid-lvt-only"
    GRID_LVT_STRENGTH = "grid-lvt-strength"
    CUSTOM = "custom"


class GridMode(str, Enum):
    LVT_ONLY = "lvt-only"
    LVT_STRENGTH = "lvt-strength"


_STUDY_CODE = {Study.BASELINE_SWEEP: 1, Study.GRID_LVT_ONLY: 2,
               Study.GRID_LVT_STRENGTH: 3, Study.CUSTOM: 4}
_PURPOSE_DESIGN, _PURPOSE_POOL, _PURPOSE_KEY, _PURPOSE_PLAN = 0, 1, 2, 3


@dataclass
class ExperimentConfig:
    """Study parameters. Defaults are desk scale; larger pools and trial counts are plain overrides."""

    study: Study = Study.BASELINE_SWEEP
    datasets: int = 3
    pool_size: int = 50_000
    coarse_trials: int = 16
    thorough_trials: int = 64
    success_threshold: float = 0.90
    coarse_steps: int = 20
    coarse_min: int = 20
    refine_points: int = 8
    spacing: str = "log"
    clk_level: int = 0
    noise_sigma: float = 0.0
    background_offset: float = 0.0
    key: str = "random:0"
    seed: int = 0
    models: tuple = ("HD", "HW")
    lvt_counts: tuple = tuple(range(9))
    grid_counts: tuple = PRIMITIVE_COUNTS
    grid_cells: tuple | None = None
    library: str | None = None
    output_dir: str = "out"
    workers: int = 1

    def __post_init__(self):
        self.study = Study(self.study)
        self.models = tuple(str(m).upper() for m in self.models)
        self.lvt_counts = tuple(int(v) for v in self.lvt_counts)
        self.grid_counts = tuple(int(v) for v in self.grid_counts)
        if self.grid_cells is not None:
            self.grid_cells = tuple((int(a), int(b)) for a, b in self.grid_cells)
        if self.datasets < 1:
            raise ValueError("datasets must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not self.models or any(m not in ("HD", "HW") for m in self.models):
            raise ValueError(f"models must be drawn from HD/HW, got {self.models}")
        self.plan(0)

    def plan(self, seed: int) -> SamplingPlan:
        return SamplingPlan(pool_size=self.pool_size, coarse_trials=self.coarse_trials,
                            thorough_trials=self.thorough_trials,
                            success_threshold=self.success_threshold,
                            coarse_steps=self.coarse_steps,
                            coarse_min=min(self.coarse_min, self.pool_size),
                            refine_points=self.refine_points, spacing=self.spacing,
                            seed=seed)

    def table(self) -> LeakageTable:
        return default_table() if self.library is None else read_table(self.library)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["study"] = self.study.value
        d["models"] = list(self.models)
        d["lvt_counts"] = list(self.lvt_counts)
        d["grid_counts"] = list(self.grid_counts)
        if self.grid_cells is not None:
            d["grid_cells"] = [list(c) for c in self.grid_cells]
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def derive_seed(master: int, *path: int) -> int:
    ss = np.random.SeedSequence(master, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def resolve_key(spec: str, dataset: int = 0) -> bytes:
    """``"random:<seed>"`` draws a per-dataset key; anything else is parsed as hex."""
    if spec.startswith("random:"):
        seed = int(spec.split(":", 1)[1])
        rng = np.random.default_rng(derive_seed(seed, _PURPOSE_KEY, dataset))
        return rng.integers(0, 256, size=16, dtype=np.uint8).tobytes()
    return check_block(spec, "key").tobytes()


# ---------------------------------------------------------------- cell jobs

@dataclass(frozen=True)
class CellJob:
    study: Study
    dataset: int
    coords: tuple
    key: bytes
    design_seed: int
    pool_seed: int
    plan_seed: int
    spec: DesignSpec | None = None
    lvt_bits: int | None = None


@dataclass(frozen=True)
class CellResult:
    study: str
    dataset: int
    coords: tuple
    nttd: dict                 # model -> int | None
    best_model: str | None
    design_seed: int
    pool_seed: int
    plan_seed: int
    key: str
    area: float
    overhead: float
    config_label: str

    @property
    def best_nttd(self):
        return None if self.best_model is None else self.nttd[self.best_model]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coords"] = list(self.coords)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CellResult":
        d = dict(d)
        d["coords"] = tuple(d["coords"])
        return cls(**d)


def _best(nttd: dict):
    disclosed = [(v, m) for m, v in nttd.items() if v is not None]
    if not disclosed:
        return None
    return min(disclosed)[1]


def _job_config(job: CellJob) -> StateRegisterConfig:
    if job.spec is not None:
        return generate_design(replace(job.spec, seed=job.design_seed))
    return generate_baseline(job.lvt_bits, job.design_seed)


def _reference_config() -> StateRegisterConfig:
    # plain X2 register bank without primitives; area 128 under default constants
    return generate_baseline(0, 0)


def run_cell(job: CellJob, cfg: ExperimentConfig) -> CellResult:
    table = cfg.table()
    config = _job_config(job)
    options = SimOptions(cfg.clk_level, cfg.noise_sigma, cfg.background_offset, job.pool_seed)
    traces = generate_traces(config, table, job.key, cfg.pool_size, options)
    plan = cfg.plan(job.plan_seed)
    nttd = {m: estimate_nttd(traces, plan, m).nttd for m in cfg.models}
    report = area(config, table, _reference_config())
    return CellResult(study=job.study.value, dataset=job.dataset, coords=tuple(job.coords),
                      nttd=nttd, best_model=_best(nttd), design_seed=job.design_seed,
                      pool_seed=job.pool_seed, plan_seed=job.plan_seed, key=job.key.hex(),
                      area=report.absolute, overhead=report.overhead,
                      config_label=config.label)


def _run_job(args):
    job, cfg = args
    return run_cell(job, cfg)


def run_jobs(jobs, cfg: ExperimentConfig) -> list:
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(_run_job, [(j, cfg) for j in jobs]))
    return [run_cell(j, cfg) for j in jobs]


def _dataset_seeds(cfg: ExperimentConfig, study: Study, dataset: int, coords) -> dict:
    code = _STUDY_CODE[study]
    return {
        "design_seed": derive_seed(cfg.seed, code, _PURPOSE_DESIGN, dataset, *coords),
        # shared by all cells of a dataset so the encryptions are reused
        "pool_seed": derive_seed(cfg.seed, code, _PURPOSE_POOL, dataset),
        "plan_seed": derive_seed(cfg.seed, code, _PURPOSE_PLAN, dataset, *coords),
    }


# ---------------------------------------------------------------- output helpers

def atomic_write(path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}" if not v.is_integer() or abs(v) >= 1e15 else str(int(v))
    return str(v)


def _mean_censored(values) -> tuple:
    """Mean over disclosed entries plus the number of censored (not-disclosed) ones."""
    disclosed = [v for v in values if v is not None]
    censored = len(values) - len(disclosed)
    return (float(np.mean(disclosed)) if disclosed else None), censored


# ---------------------------------------------------------------- baseline sweep

@dataclass
class BaselineCurve:
    cells: list
    lvt_counts: tuple
    pool_size: int

    def mean_nttd(self, lvt: int):
        return _mean_censored([c.best_nttd for c in self.cells if c.coords == (lvt,)])

    def points(self) -> list:
        """``(lvt, mean_nttd, censored, n_datasets)`` per LVT count."""
        out = []
        for lvt in self.lvt_counts:
            mean, censored = self.mean_nttd(lvt)
            n = sum(1 for c in self.cells if c.coords == (lvt,))
            out.append((lvt, mean, censored, n))
        return out

    def runs_csv(self) -> str:
        models = sorted({m for c in self.cells for m in c.nttd})
        rows = [[c.dataset, c.coords[0], *[_fmt(c.nttd.get(m)) for m in models],
                 c.best_model or "", _fmt(c.best_nttd), c.design_seed, c.pool_seed,
                 c.plan_seed, c.key, _fmt(c.area)] for c in self.cells]
        header = ["dataset", "lvt_bits_per_byte", *[f"nttd_{m}" for m in models],
                  "best_model", "best_nttd", "design_seed", "pool_seed", "plan_seed",
                  "key", "area"]
        return _csv(rows, header)

    def curve_csv(self) -> str:
        rows = [[lvt, _fmt(mean), censored, n, self.pool_size]
                for lvt, mean, censored, n in self.points()]
        return _csv(rows, ["lvt_bits_per_byte", "mean_nttd", "censored", "datasets",
                           "pool_size"])

    def plot_data(self) -> str:
        lines = ["# lvt_bits_per_byte mean_nttd (NaN = not disclosed within pool)"]
        for lvt, mean, _, _ in self.points():
            lines.append(f"{lvt} {'NaN' if mean is None else _fmt(mean)}")
        return "\n".join(lines) + "\n"


_GNUPLOT = """set terminal pngcairo size 800,500
set output '{stem}.png'
set logscale y
set xlabel 'LVT cells per state-register byte'
set ylabel 'traces to disclosure (90% success)'
set grid
plot '{stem}.dat' using 1:2 with linespoints title 'mean NTTD'
"""


def run_baseline_sweep(cfg: ExperimentConfig, write: bool = True) -> BaselineCurve:
    jobs = []
    for d in range(cfg.datasets):
        key = resolve_key(cfg.key, d)
        for lvt in cfg.lvt_counts:
            seeds = _dataset_seeds(cfg, Study.BASELINE_SWEEP, d, (lvt,))
            jobs.append(CellJob(Study.BASELINE_SWEEP, d, (lvt,), key, lvt_bits=lvt, **seeds))
    curve = BaselineCurve(run_jobs(jobs, cfg), cfg.lvt_counts, cfg.pool_size)
    if write:
        out = Path(cfg.output_dir)
        atomic_write(out / "baseline_runs.csv", curve.runs_csv())
        atomic_write(out / "baseline_curve.csv", curve.curve_csv())
        atomic_write(out / "baseline_curve.dat", curve.plot_data())
        atomic_write(out / "baseline_curve.gp", _GNUPLOT.format(stem="baseline_curve"))
    return curve


# ---------------------------------------------------------------- grids

def grid_cells(mode: GridMode, counts=PRIMITIVE_COUNTS) -> list:
    """Populated ``(half_a, half_b)`` cells; the LVT-only grid keeps ``a > b`` only."""
    if GridMode(mode) is GridMode.LVT_ONLY:
        return [(a, b) for a in counts for b in counts if a > b]
    return [(a, b) for a in counts for b in counts]


def grid_spec(mode: GridMode, a: int, b: int) -> DesignSpec:
    if GridMode(mode) is GridMode.LVT_ONLY:
        return DesignSpec(a, b, StrengthPolicy.DESIGN_CONSTANT, StrengthPolicy.DESIGN_CONSTANT,
                          half_a_paths=1, half_b_paths=1, baseline_cell_mix=0.0)
    return DesignSpec(a, b, StrengthPolicy.CONSTANT_RANDOM, StrengthPolicy.PER_FF_RANDOM,
                      half_a_paths=1, half_b_paths=2, baseline_cell_mix=0.0)


@dataclass
class GridResult:
    mode: GridMode
    cells: list
    counts: tuple
    datasets: int
    pool_size: int
    populated: tuple = field(default=())

    def cell(self, dataset: int, a: int, b: int):
        for c in self.cells:
            if c.dataset == dataset and c.coords == (a, b):
                return c
        return None

    def dataset_matrix(self, dataset: int) -> dict:
        return {(a, b): self.cell(dataset, a, b) for a, b in self.populated}

    def average(self, a: int, b: int) -> tuple:
        return _mean_censored([c.best_nttd for c in self.cells if c.coords == (a, b)])

    def nttd(self, dataset: int, a: int, b: int):
        c = self.cell(dataset, a, b)
        return None if c is None else c.best_nttd

    def cells_csv(self) -> str:
        rows = [[c.dataset, c.coords[0], c.coords[1], _fmt(self.nttd(c.dataset, *c.coords)),
                 int(self.nttd(c.dataset, *c.coords) is not None), _fmt(c.area),
                 f"{c.overhead:.6f}", c.design_seed, c.pool_seed, c.plan_seed, c.key]
                for c in self.cells]
        return _csv(rows, ["dataset", "half_a", "half_b", "nttd", "disclosed", "area",
                           "overhead", "design_seed", "pool_seed", "plan_seed", "key"])

    def average_csv(self) -> str:
        rows = []
        for a, b in self.populated:
            mean, censored = self.average(a, b)
            areas = [c.area for c in self.cells if c.coords == (a, b)]
            overheads = [c.overhead for c in self.cells if c.coords == (a, b)]
            rows.append([a, b, _fmt(mean), censored, len(areas), _fmt(float(np.mean(areas))),
                         f"{float(np.mean(overheads)):.6f}"])
        return _csv(rows, ["half_a", "half_b", "mean_nttd", "censored", "datasets",
                           "mean_area", "mean_overhead"])

    def matrix_csv(self) -> str:
        """Table-style layout: rows = half A count, columns = half B count."""
        rows = []
        for a in self.counts:
            row = [a]
            for b in self.counts:
                if (a, b) not in self.populated:
                    row.append("---")
                    continue
                mean, censored = self.average(a, b)
                row.append(f">{self.pool_size}" if mean is None else f"{mean:.0f}")
            rows.append(row)
        return _csv(rows, ["half_a\\half_b", *self.counts])

    def to_dict(self) -> dict:
        return {"format": "spsca-grid", "version": 1, "mode": GridMode(self.mode).value,
                "counts": list(self.counts), "datasets": self.datasets,
                "pool_size": self.pool_size, "populated": [list(p) for p in self.populated],
                "cells": [c.to_dict() for c in self.cells]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "GridResult":
        if d.get("format") != "spsca-grid":
            raise ValueError("not a grid result document")
        return cls(GridMode(d["mode"]), [CellResult.from_dict(c) for c in d["cells"]],
                   tuple(d["counts"]), d["datasets"], d["pool_size"],
                   tuple(tuple(p) for p in d["populated"]))

    @classmethod
    def loads(cls, text: str) -> "GridResult":
        return cls.from_dict(json.loads(text))


def run_grid(cfg: ExperimentConfig, mode: GridMode, write: bool = True) -> GridResult:
    mode = GridMode(mode)
    study = Study.GRID_LVT_ONLY if mode is GridMode.LVT_ONLY else Study.GRID_LVT_STRENGTH
    populated = grid_cells(mode, cfg.grid_counts)
    if cfg.grid_cells is not None:
        wanted = set(cfg.grid_cells)
        populated = [c for c in populated if c in wanted]
    jobs = []
    for d in range(cfg.datasets):
        key = resolve_key(cfg.key, d)
        for a, b in populated:
            seeds = _dataset_seeds(cfg, study, d, (a, b))
            jobs.append(CellJob(study, d, (a, b), key, spec=grid_spec(mode, a, b), **seeds))
    result = GridResult(mode, run_jobs(jobs, cfg), cfg.grid_counts, cfg.datasets,
                        cfg.pool_size, tuple(populated))
    if write:
        out = Path(cfg.output_dir)
        stem = f"grid_{mode.value}"
        atomic_write(out / f"{stem}_cells.csv", result.cells_csv())
        atomic_write(out / f"{stem}_average.csv", result.average_csv())
        atomic_write(out / f"{stem}_matrix.csv", result.matrix_csv())
        atomic_write(out / f"{stem}.json", result.dumps())
    return result


# ---------------------------------------------------------------- summary

@dataclass(frozen=True)
class SummaryRow:
    label: str
    area: float
    overhead: float
    nttd: float | None
    nttd_per_area: float | None
    ratio: str
    pool_size: int


@dataclass
class SummaryReport:
    rows: list

    def csv(self) -> str:
        out = [[r.label, f"{r.area:.4f}", f"{r.overhead:.4f}",
                f">{r.pool_size}" if r.nttd is None else f"{r.nttd:.0f}",
                "" if r.nttd_per_area is None else f"{r.nttd_per_area:.4f}", r.ratio]
               for r in self.rows]
        return _csv(out, ["design", "area", "overhead", "nttd", "nttd_per_area",
                          "resilience_ratio"])


def emit_summary(entries) -> SummaryReport:
    """Build the NTTD/area table; ``entries[0]`` is the baseline.

    Each entry is ``(label, area, nttd_or_None, pool_size)``.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("emit_summary needs at least one result")
    base_label, base_area, base_nttd, _ = entries[0]
    rows = []
    for label, a, nttd, pool in entries:
        if base_nttd is None:
            ratio = "n/a"
        elif nttd is None:
            ratio = f">{pool / base_nttd:.2f}"
        else:
            ratio = f"{nttd / base_nttd:.2f}"
        rows.append(SummaryRow(label, a, a / base_area, nttd,
                               None if nttd is None else nttd / a, ratio, pool))
    return SummaryReport(rows)


def summary_from_results(baseline: BaselineCurve, grids, baseline_lvt: int | None = None,
                         table: LeakageTable | None = None) -> SummaryReport:
    """Baseline = the most resilient sweep point unless ``baseline_lvt`` is given;
    each grid contributes its highest mean-NTTD cell."""
    table = default_table() if table is None else table
    points = [(lvt, m) for lvt, m, _, _ in baseline.points() if m is not None]
    if baseline_lvt is None:
        if not points:
            raise ValueError("no disclosed baseline point")
        baseline_lvt = max(points, key=lambda p: p[1])[0]
    base_mean, _ = baseline.mean_nttd(baseline_lvt)
    base_area = area(_reference_config(), table).absolute
    entries = [(f"baseline (LVT/byte={baseline_lvt})", base_area, base_mean,
                baseline.pool_size)]
    for grid in grids:
        best = None
        for a, b in grid.populated:
            mean, censored = grid.average(a, b)
            score = math.inf if mean is None else mean
            if best is None or score > best[0]:
                best = (score, a, b, mean)
        _, a, b, mean = best
        areas = [c.area for c in grid.cells if c.coords == (a, b)]
        entries.append((f"{GridMode(grid.mode).value} ({a},{b})", float(np.mean(areas)),
                        mean, grid.pool_size))
    return emit_summary(entries)


def read_baseline_runs(text: str, pool_size: int) -> BaselineCurve:
    """Rebuild a :class:`BaselineCurve` from ``baseline_runs.csv``."""
    reader = csv.DictReader(io.StringIO(text))
    cells = []
    lvts = []
    for row in reader:
        nttd = {k[5:]: (int(v) if v else None) for k, v in row.items() if k.startswith("nttd_")}
        lvt = int(row["lvt_bits_per_byte"])
        if lvt not in lvts:
            lvts.append(lvt)
        cells.append(CellResult("baseline-sweep", int(row["dataset"]), (lvt,), nttd,
                                row["best_model"] or None, int(row["design_seed"]),
                                int(row["pool_seed"]), int(row["plan_seed"]), row["key"],
                                float(row["area"]), 1.0, ""))
    return BaselineCurve(cells, tuple(lvts), pool_size)
