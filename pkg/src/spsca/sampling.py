"""Success-rate estimation by subsampling, and two-phase NTTD search."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from .cpa import CpaKernel, PowerModel
from .validation import check_seed

log = logging.getLogger(__name__)

MIN_TRACES = 2


@dataclass(frozen=True)
class SamplingPlan:
    """Parameters of the coarse/thorough search.

    The coarse grid has ``coarse_steps`` points from ``coarse_min`` up to
    ``pool_size`` (log or linear spacing); the thorough phase scans
    ``refine_points`` evenly spaced counts inside the bracket.
    """

    pool_size: int
    coarse_trials: int = 64
    thorough_trials: int = 640
    success_threshold: float = 0.90
    coarse_steps: int = 20
    coarse_min: int = 1000
    refine_points: int = 8
    spacing: str = "log"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.success_threshold <= 1.0:
            raise ValueError("success_threshold must lie in (0, 1]")
        if self.coarse_trials < 1 or self.thorough_trials < 1:
            raise ValueError("trial counts must be >= 1")
        if self.coarse_steps < 1 or self.refine_points < 1:
            raise ValueError("coarse_steps and refine_points must be >= 1")
        if self.spacing not in ("log", "linear"):
            raise ValueError("spacing must be 'log' or 'linear'")
        if self.pool_size < MIN_TRACES:
            raise ValueError(f"pool_size must be >= {MIN_TRACES}")
        if not MIN_TRACES <= self.coarse_min <= self.pool_size:
            raise ValueError(f"coarse_min must lie in [{MIN_TRACES}, pool_size]")
        object.__setattr__(self, "seed", check_seed(self.seed))

    def coarse_grid(self) -> list:
        lo, hi, k = self.coarse_min, self.pool_size, self.coarse_steps
        if k == 1 or lo == hi:
            return [hi]
        if self.spacing == "log":
            pts = np.geomspace(lo, hi, k)
        else:
            pts = np.linspace(lo, hi, k)
        grid = sorted({int(round(x)) for x in pts})
        grid[-1] = hi
        return grid

    def refined_grid(self, lo: int, hi: int) -> list:
        """Counts in ``(lo, hi]``; the last point is always ``hi``."""
        pts = np.linspace(lo, hi, self.refine_points + 1)[1:]
        grid = sorted({max(MIN_TRACES, int(round(x))) for x in pts if round(x) > lo} | {hi})
        return grid

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SuccessPoint:
    n: int
    trials: int
    successes: int
    phase: str = ""

    @property
    def rate(self) -> float:
        return self.successes / self.trials


@dataclass(frozen=True)
class NttdEstimate:
    nttd: int | None
    success_curve: tuple
    plan: SamplingPlan
    model: str = "HD"
    warnings: tuple = field(default=())

    @property
    def disclosed(self) -> bool:
        return self.nttd is not None

    def label(self) -> str:
        return str(self.nttd) if self.disclosed else f">{self.plan.pool_size}"

    def curve_csv(self) -> str:
        return success_curve_csv(self.success_curve)


def success_curve_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "trials", "successes", "rate", "phase"])
    for p in points:
        w.writerow([p.n, p.trials, p.successes, f"{p.rate:.6f}", p.phase])
    return buf.getvalue()


class CpaTrialPool:
    """Adapter exposing ``succeeds(indices)`` for a trace set and power model."""

    def __init__(self, traces, model="HD"):
        self.model = PowerModel.parse(model)
        self.kernel = CpaKernel(traces.ciphertexts, traces.power, self.model)
        self.key = traces.last_round_key
        self.n_traces = len(traces)

    def __len__(self):
        return self.n_traces

    def succeeds(self, idx) -> bool:
        return self.kernel.succeeds(idx, self.key)


def _as_pool(pool, model):
    if hasattr(pool, "succeeds"):
        return pool
    return CpaTrialPool(pool, model)


def trial_indices(pool_size: int, n: int, seed: int, trial: int) -> np.ndarray:
    """Trace indices of one trial; the substream is keyed by ``(seed, n, trial)``."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, n, trial]))
    if n == pool_size:
        return np.arange(pool_size)
    return np.sort(rng.choice(pool_size, size=n, replace=False))


def success_rate(pool, n: int, trials: int, model="HD", seed: int = 0,
                 phase: str = "") -> SuccessPoint:
    """Attack ``trials`` random size-``n`` subsamples (without replacement)."""
    pool = _as_pool(pool, model)
    size = len(pool)
    if not MIN_TRACES <= n <= size:
        raise ValueError(f"n={n} must lie in [{MIN_TRACES}, pool size {size}]")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if n == size:
        # every trial sees the identical pool
        ok = int(pool.succeeds(np.arange(size)))
        return SuccessPoint(n, trials, ok * trials, phase)
    wins = sum(bool(pool.succeeds(trial_indices(size, n, seed, t))) for t in range(trials))
    return SuccessPoint(n, trials, wins, phase)


def _meets(point: SuccessPoint, threshold: float) -> bool:
    # inclusive; integer test avoids float rounding at e.g. 576/640
    return point.successes >= math.ceil(threshold * point.trials - 1e-9)


def _noise_warnings(points) -> list:
    out = []
    by_phase: dict = {}
    for p in points:
        by_phase.setdefault(p.phase, []).append(p)
    for phase, pts in by_phase.items():
        pts = sorted(pts, key=lambda p: p.n)
        for prev, cur in zip(pts, pts[1:]):
            q = prev.rate
            se = math.sqrt(max(q * (1 - q), 1e-12) / cur.trials)
            if prev.rate - cur.rate > 3 * se:
                out.append(f"{phase}: success rate drops from {prev.rate:.3f} at n={prev.n} "
                           f"to {cur.rate:.3f} at n={cur.n}")
    return out


def estimate_nttd(pool, plan: SamplingPlan, model="HD") -> NttdEstimate:
    """Smallest trace count whose thorough success rate meets the threshold.

    Coarse points are scanned upward until one meets the threshold; the
    bracket below it is then scanned with thorough trials.  If no refined
    point qualifies, the coarse scan resumes above the bracket.
    """
    model = PowerModel.parse(model) if not hasattr(pool, "succeeds") else model
    pool = _as_pool(pool, model)
    if len(pool) < plan.pool_size:
        raise ValueError(f"pool holds {len(pool)} traces, plan expects {plan.pool_size}")
    grid = plan.coarse_grid()
    curve = []
    nttd = None
    lo = MIN_TRACES - 1
    for c in grid:
        point = success_rate(pool, c, plan.coarse_trials, model, plan.seed, "coarse")
        curve.append(point)
        if not _meets(point, plan.success_threshold):
            lo = c
            continue
        for n in plan.refined_grid(lo, c):
            fine = success_rate(pool, n, plan.thorough_trials, model, plan.seed, "thorough")
            curve.append(fine)
            if _meets(fine, plan.success_threshold):
                nttd = n
                break
        if nttd is not None:
            break
        lo = c
    notes = _noise_warnings(curve)
    for note in notes:
        log.warning(note)
    model_name = model.value if isinstance(model, PowerModel) else str(model)
    return NttdEstimate(nttd, tuple(curve), plan, model_name, tuple(notes))


@dataclass(frozen=True)
class ModelComparison:
    hw: NttdEstimate
    hd: NttdEstimate

    @property
    def winner(self) -> str | None:
        if not (self.hw.disclosed or self.hd.disclosed):
            return None
        if not self.hw.disclosed:
            return "HD"
        if not self.hd.disclosed:
            return "HW"
        if self.hw.nttd == self.hd.nttd:
            return "tie"
        return "HD" if self.hd.nttd < self.hw.nttd else "HW"

    @property
    def best(self) -> NttdEstimate:
        return self.hw if self.winner == "HW" else self.hd


def compare_models(pool, plan: SamplingPlan) -> ModelComparison:
    return ModelComparison(hw=estimate_nttd(pool, plan, "HW"), hd=estimate_nttd(pool, plan, "HD"))


class NTTDEstimator(BaseEstimator):
    """Estimator wrapper: ``fit(traces)`` sets ``nttd_``, ``success_curve_`` and ``disclosed_``."""

    def __init__(self, model="HD", coarse_trials=64, thorough_trials=640,
                 success_threshold=0.90, coarse_steps=20, coarse_min=1000,
                 refine_points=8, spacing="log", seed=0):
        self.model = model
        self.coarse_trials = coarse_trials
        self.thorough_trials = thorough_trials
        self.success_threshold = success_threshold
        self.coarse_steps = coarse_steps
        self.coarse_min = coarse_min
        self.refine_points = refine_points
        self.spacing = spacing
        self.seed = seed

    def _plan(self, pool_size: int) -> SamplingPlan:
        return SamplingPlan(pool_size=pool_size, coarse_trials=self.coarse_trials,
                            thorough_trials=self.thorough_trials,
                            success_threshold=self.success_threshold,
                            coarse_steps=self.coarse_steps,
                            coarse_min=min(self.coarse_min, pool_size),
                            refine_points=self.refine_points, spacing=self.spacing,
                            seed=self.seed)

    def fit(self, X, y=None):
        plan = self._plan(len(X))
        self.estimate_ = estimate_nttd(X, plan, self.model)
        self.nttd_ = self.estimate_.nttd
        self.disclosed_ = self.estimate_.disclosed
        self.success_curve_ = self.estimate_.success_curve
        return self


def with_pool_size(plan: SamplingPlan, pool_size: int) -> SamplingPlan:
    return replace(plan, pool_size=pool_size, coarse_min=min(plan.coarse_min, pool_size))
