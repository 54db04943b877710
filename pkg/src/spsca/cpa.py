"""Last-round correlation power analysis.

For ciphertext byte ``j`` and last-round key guess ``k`` the recovered
pre-final-round byte is ``v = inv_sbox(ct[j] ^ k)``; it sits at state position
``m = shift_rows_origin(j)``, the flip-flop that currently holds ``ct[m]``.

* HW model: ``hw(v)``
* HD model: ``hd(ct[m], v)``

Correlation sums are computed either from the explicit ``(n, 256)``
hypothesis matrix or, for large trace counts, from per-byte histograms of
``(ct[j], ct[m])`` pairs; both give the same Pearson coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator

from . import aes
from .validation import check_block, check_blocks, check_byte_index, check_power

# Above this many traces the histogram route is cheaper (measured on one core).
BINNED_MIN_TRACES = 6000


class PowerModel(str, Enum):
    HW = "HW"
    HD = "HD"

    @classmethod
    def parse(cls, value) -> "PowerModel":
        try:
            return cls(str(value.value if isinstance(value, Enum) else value).upper())
        except ValueError:
            raise ValueError(f"unknown power model {value!r} (expected HW or HD)") from None


def pearson_ex(x, y) -> tuple:
    """Two-pass Pearson coefficient; returns ``(r, degenerate)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValueError("pearson needs at least 2 samples")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0, True
    return float(dx @ dy) / np.sqrt(sxx * syy), False


def pearson(x, y) -> float:
    return pearson_ex(x, y)[0]


class StreamingPearson:
    """Chunked single-pass Pearson accumulator (pairwise merge of moments)."""

    def __init__(self):
        self.n = 0
        self.mean_x = 0.0
        self.mean_y = 0.0
        self.m2_x = 0.0
        self.m2_y = 0.0
        self.c_xy = 0.0

    def update(self, x, y) -> "StreamingPearson":
        x = np.asarray(x, dtype=np.float64).ravel()
        y = np.asarray(y, dtype=np.float64).ravel()
        if x.shape != y.shape:
            raise ValueError("chunk length mismatch")
        m = len(x)
        if m == 0:
            return self
        mx, my = x.mean(), y.mean()
        dx, dy = x - mx, y - my
        n = self.n + m
        delta_x = mx - self.mean_x
        delta_y = my - self.mean_y
        w = self.n * m / n
        self.m2_x += float(dx @ dx) + delta_x * delta_x * w
        self.m2_y += float(dy @ dy) + delta_y * delta_y * w
        self.c_xy += float(dx @ dy) + delta_x * delta_y * w
        self.mean_x += delta_x * m / n
        self.mean_y += delta_y * m / n
        self.n = n
        return self

    def result(self) -> float:
        if self.n < 2:
            raise ValueError("pearson needs at least 2 samples")
        if self.m2_x == 0.0 or self.m2_y == 0.0:
            return 0.0
        return self.c_xy / np.sqrt(self.m2_x * self.m2_y)


@lru_cache(maxsize=None)
def _tables():
    a = np.arange(256)
    v = aes.INV_SBOX[a[:, None] ^ a[None, :]]             # v[a, k]
    hwv = aes.HW8[v].astype(np.float64)                    # hw(v[a, k])
    hdb = aes.HW8[a[:, None] ^ a[None, :]].astype(np.float64)  # hd(b, c)
    return v.astype(np.intp), hwv, hdb, hdb * hdb


@lru_cache(maxsize=None)
def _hd_cube():
    v, _, _, _ = _tables()
    b = np.arange(256)
    return aes.HW8[b[None, :, None] ^ v[:, None, :]]       # [a, b, k], uint8


def hypothesis(model, ciphertext, j: int, k: int) -> int:
    model = PowerModel.parse(model)
    ct = check_block(ciphertext, "ciphertext")
    j = check_byte_index(j)
    if not 0 <= int(k) <= 255:
        raise ValueError(f"key guess {k} out of range 0..255")
    v = aes.INV_SBOX[int(ct[j]) ^ int(k)]
    if model is PowerModel.HW:
        return int(aes.HW8[v])
    return int(aes.HW8[int(ct[aes.SHIFT_ROWS[j]]) ^ int(v)])


def hypothesis_matrix(model, ciphertexts, j: int) -> np.ndarray:
    """``(n, 256)`` uint8 hypotheses for byte ``j`` under every key guess."""
    model = PowerModel.parse(model)
    ct = check_blocks(ciphertexts, "ciphertexts")
    j = check_byte_index(j)
    v, _, _, _ = _tables()
    vals = v[ct[:, j]]
    if model is PowerModel.HW:
        return aes.HW8[vals]
    return aes.HW8[ct[:, aes.SHIFT_ROWS[j]][:, None] ^ vals]


class CpaKernel:
    """Correlation engine over a fixed trace pool, reusable across subsamples."""

    def __init__(self, ciphertexts, power, model="HD", binned_min: int = BINNED_MIN_TRACES):
        self.model = PowerModel.parse(model)
        ct = check_blocks(ciphertexts, "ciphertexts")
        self.power = check_power(power, len(ct))
        self.n_traces = len(ct)
        # global centering keeps the binned sums well conditioned; PCC is unaffected
        self._p = self.power - self.power.mean() if self.n_traces else self.power
        self._a = np.ascontiguousarray(ct.T)                      # (16, n)
        self._b = np.ascontiguousarray(ct[:, aes.SHIFT_ROWS].T)   # (16, n), ct[m]
        self._pair = None
        self.binned_min = binned_min

    def _pairs(self):
        if self._pair is None:
            self._pair = (self._a.astype(np.int32) << 8) | self._b
        return self._pair

    def _centered(self, idx):
        p = self._p if idx is None else self._p[idx]
        pc = p - p.mean()
        return pc, float(pc @ pc)

    def _sums(self, j, idx, pc):
        """Per-guess sums of h, h^2 and h * pc for byte ``j``."""
        v, hwv, hdb, hdb2 = _tables()
        a = self._a[j] if idx is None else self._a[j][idx]
        n = len(pc)
        if self.model is PowerModel.HW:
            counts = np.bincount(a, minlength=256).astype(np.float64)
            spow = np.bincount(a, weights=pc, minlength=256)
            return counts @ hwv, counts @ (hwv * hwv), spow @ hwv
        if n < self.binned_min:
            b = self._b[j] if idx is None else self._b[j][idx]
            h = _hd_cube()[a, b]
            sum_h = h.sum(axis=0, dtype=np.int64).astype(np.float64)
            sum_h2 = (h.astype(np.uint16) ** 2).sum(axis=0, dtype=np.int64).astype(np.float64)
            return sum_h, sum_h2, pc @ h.astype(np.float64)
        cell = self._pairs()[j] if idx is None else self._pairs()[j][idx]
        counts = np.bincount(cell, minlength=65536).astype(np.float64).reshape(256, 256)
        spow = np.bincount(cell, weights=pc, minlength=65536).reshape(256, 256)
        g = np.vstack([counts, spow]) @ hdb          # [count; power] x hd(b, c)
        g2 = counts @ hdb2
        sum_h = np.take_along_axis(g[:256], v, axis=1).sum(axis=0)
        sum_hp = np.take_along_axis(g[256:], v, axis=1).sum(axis=0)
        sum_h2 = np.take_along_axis(g2, v, axis=1).sum(axis=0)
        return sum_h, sum_h2, sum_hp

    def byte_scores(self, j: int, idx=None, _centered=None) -> np.ndarray:
        pc, spp = self._centered(idx) if _centered is None else _centered
        if spp <= 0.0:
            return np.zeros(256)
        n = len(pc)
        sum_h, sum_h2, sum_hp = self._sums(j, idx, pc)
        var_h = sum_h2 - sum_h * sum_h / n
        with np.errstate(invalid="ignore", divide="ignore"):
            r = sum_hp / np.sqrt(var_h * spp)
        r[~(var_h > 1e-9)] = 0.0
        return np.clip(r, -1.0, 1.0)

    def scores(self, idx=None) -> tuple:
        """``(pcc, degenerate)`` with ``pcc`` of shape ``(16, 256)``."""
        if (self.n_traces if idx is None else len(idx)) < 2:
            raise ValueError("an attack needs at least 2 traces")
        centered = self._centered(idx)
        if centered[1] <= 0.0:
            return np.zeros((16, 256)), True
        return np.stack([self.byte_scores(j, idx, centered) for j in range(16)]), False

    def succeeds(self, idx, last_round_key) -> bool:
        """True when every byte's best guess matches; stops at the first miss."""
        key = check_block(last_round_key, "last_round_key")
        centered = self._centered(idx)
        if centered[1] <= 0.0:
            return False
        for j in range(16):
            if int(np.argmax(np.abs(self.byte_scores(j, idx, centered)))) != int(key[j]):
                return False
        return True


@dataclass(frozen=True)
class CpaScores:
    pcc: np.ndarray
    best_guess: bytes
    margin: np.ndarray

    @classmethod
    def from_pcc(cls, pcc: np.ndarray) -> "CpaScores":
        mag = np.abs(pcc)
        best = np.argmax(mag, axis=1)          # first maximum = lowest key value
        top2 = np.sort(mag, axis=1)[:, -2:]
        return cls(pcc=pcc, best_guess=bytes(best.astype(np.uint8)),
                   margin=top2[:, 1] - top2[:, 0])


@dataclass(frozen=True)
class AttackResult:
    scores: CpaScores
    recovered_key: bytes
    success: bool
    degenerate: bool
    model: PowerModel
    n_traces: int
    true_last_round_key: bytes | None = None

    @property
    def cipher_key(self) -> bytes:
        """Cipher key obtained by running the key schedule backwards."""
        return aes.invert_key_schedule(self.recovered_key).tobytes()

    def report(self, top: int = 5) -> dict:
        mag = np.abs(self.scores.pcc)
        rows = []
        for j in range(16):
            order = np.argsort(-mag[j], kind="stable")[:top]
            rows.append({
                "byte": j,
                "best_guess": f"{self.recovered_key[j]:02x}",
                "top": [{"guess": f"{int(k):02x}", "abs_pcc": float(mag[j, k])} for k in order],
                "margin": float(self.scores.margin[j]),
                "correct": None if self.true_last_round_key is None
                else self.recovered_key[j] == self.true_last_round_key[j],
            })
        return {"format": "spsca-attack-report", "version": 1, "model": self.model.value,
                "n_traces": self.n_traces, "degenerate": self.degenerate,
                "success": self.success, "recovered_last_round_key": self.recovered_key.hex(),
                "bytes": rows}

    def dumps(self) -> str:
        return json.dumps(self.report(), indent=2) + "\n"


def attack_arrays(ciphertexts, power, model="HD", last_round_key=None) -> AttackResult:
    model = PowerModel.parse(model)
    kernel = CpaKernel(ciphertexts, power, model)
    pcc, degenerate = kernel.scores()
    scores = CpaScores.from_pcc(pcc)
    true = None if last_round_key is None else check_block(last_round_key).tobytes()
    success = (not degenerate) and true is not None and scores.best_guess == true
    return AttackResult(scores, scores.best_guess, success, degenerate, model,
                        kernel.n_traces, true)


def attack(traces, model="HD") -> AttackResult:
    """Attack a :class:`~spsca.simulate.TraceSet`; success is judged on the last-round key."""
    if len(traces) < 2:
        raise ValueError("an attack needs at least 2 traces")
    return attack_arrays(traces.ciphertexts, traces.power, model, traces.last_round_key)


class CPA(BaseEstimator):
    """Correlation power analysis as an estimator.

    ``fit(ciphertexts, power)`` recovers the last-round key; ``predict``
    returns the per-byte leakage hypotheses under that key.
    """

    def __init__(self, model="HD"):
        self.model = model

    def fit(self, X, y):
        X = check_blocks(X, "ciphertexts")
        y = check_power(y, len(X))
        if len(X) < 2:
            raise ValueError("an attack needs at least 2 traces")
        kernel = CpaKernel(X, y, self.model)
        pcc, self.degenerate_ = kernel.scores()
        scores = CpaScores.from_pcc(pcc)
        self.pcc_ = pcc
        self.best_guess_ = np.frombuffer(scores.best_guess, dtype=np.uint8).copy()
        self.margin_ = scores.margin
        self.last_round_key_ = scores.best_guess
        self.n_features_in_ = 16
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "best_guess_"):
            raise ValueError("CPA instance is not fitted yet")
        X = check_blocks(X, "ciphertexts")
        return np.stack([hypothesis_matrix(self.model, X, j)[:, self.best_guess_[j]]
                         for j in range(16)], axis=1)

    @property
    def cipher_key_(self) -> bytes:
        return aes.invert_key_schedule(self.last_round_key_).tobytes()
