"""Static-power trace simulation for the AES state registers.

The sampled instant is the halted final-round cycle: every flip-flop sees
``D`` = its ciphertext bit and ``Q`` = its pre-final-round state bit.  A
two-path primitive routes the incoming bit to the path chosen by a random CTL
bit while the other path holds ``Q`` through its feedback loop (``D = Q``).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import aes
from .design import Plain, Primitive, StateRegisterConfig
from .leakage import CellType, LeakageTable, default_table
from .validation import check_block, check_blocks, check_seed

# Random streams are drawn in fixed-size chunks so results do not depend on
# how trace generation is split across workers.
CHUNK = 8192
_STREAM_PLAINTEXT, _STREAM_CTL, _STREAM_NOISE = 0, 1, 2


@dataclass(frozen=True)
class SimOptions:
    clk_level: int = 0
    noise_sigma: float = 0.0
    background_offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.clk_level not in (0, 1):
            raise ValueError("clk_level must be 0 or 1")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.background_offset >= 0:
            raise ValueError("background_offset must be >= 0")
        object.__setattr__(self, "seed", check_seed(self.seed))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class TraceSet:
    key: np.ndarray
    plaintexts: np.ndarray
    ciphertexts: np.ndarray
    pre_final_states: np.ndarray
    power: np.ndarray
    options: SimOptions = SimOptions()
    config_label: str = ""

    def __post_init__(self):
        self.key = check_block(self.key, "key")
        self.plaintexts = check_blocks(self.plaintexts, "plaintexts")
        self.ciphertexts = check_blocks(self.ciphertexts, "ciphertexts")
        self.pre_final_states = check_blocks(self.pre_final_states, "pre_final_states")
        self.power = np.asarray(self.power, dtype=np.float64)
        n = len(self.plaintexts)
        if not (len(self.ciphertexts) == len(self.pre_final_states) == len(self.power) == n):
            raise ValueError("trace set fields have different lengths")

    def __len__(self) -> int:
        return len(self.power)

    @property
    def last_round_key(self) -> np.ndarray:
        return aes.key_schedule(self.key)[10]

    def subset(self, idx) -> "TraceSet":
        return TraceSet(self.key, self.plaintexts[idx], self.ciphertexts[idx],
                        self.pre_final_states[idx], self.power[idx], self.options,
                        self.config_label)

    def with_power(self, power) -> "TraceSet":
        return TraceSet(self.key, self.plaintexts, self.ciphertexts,
                        self.pre_final_states, power, self.options, self.config_label)


def _stream(seed: int, stream: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream, chunk)))


def _bit_leakage(table: LeakageTable, cell: CellType, strength, clk: int, d: int, q: int) -> float:
    return float(table.values[cell.index, clk, d, q]) * strength.scale


def _bit_contribution(cell, table, clk, d, q, ctl) -> float:
    if isinstance(cell, Plain):
        return _bit_leakage(table, cell.cell, cell.strength, clk, d, q)
    if cell.paths == 1:
        return _bit_leakage(table, CellType.LVT, cell.strengths[0], clk, d, q) + table.mux_leakage
    active, held = (cell.strengths[0], cell.strengths[1]) if ctl == 0 else \
        (cell.strengths[1], cell.strengths[0])
    return (_bit_leakage(table, CellType.LVT, active, clk, d, q)
            + _bit_leakage(table, CellType.LVT, held, clk, q, q)
            + table.mux_leakage)


def two_path_positions(config: StateRegisterConfig) -> list:
    """Bit indices of two-path primitives, in the order CTL bits are drawn."""
    return [k for k, b in enumerate(config.bits) if isinstance(b, Primitive) and b.paths == 2]


def simulate_one(config: StateRegisterConfig, table: LeakageTable, rt: aes.RoundTrace,
                 options: SimOptions = SimOptions(), rng: np.random.Generator | None = None,
                 ctl=None, noise: float | None = None) -> float:
    """Static power of one encryption, evaluated bit by bit.

    ``ctl`` gives one CTL bit per two-path primitive (see
    :func:`two_path_positions`); missing CTL bits and noise are drawn from
    ``rng``.
    """
    pre = check_block(rt.pre_final_state)
    ct = check_block(rt.ciphertext)
    twopath = two_path_positions(config)
    if rng is None:
        rng = np.random.default_rng(options.seed)
    if ctl is None:
        ctl = rng.integers(0, 2, size=len(twopath))
    if len(ctl) != len(twopath):
        raise ValueError(f"expected {len(twopath)} CTL bits, got {len(ctl)}")
    ctl_of = dict(zip(twopath, (int(c) for c in ctl)))
    if noise is None:
        noise = float(rng.normal(0.0, options.noise_sigma)) if options.noise_sigma > 0 else 0.0
    total = options.background_offset
    for k, cell in enumerate(config.bits):
        j, i = divmod(k, 8)
        d = (int(ct[j]) >> i) & 1
        q = (int(pre[j]) >> i) & 1
        total += _bit_contribution(cell, table, options.clk_level, d, q, ctl_of.get(k, 0))
    return total + noise


def byte_tables(config: StateRegisterConfig, table: LeakageTable, clk_level: int = 0):
    """Precompute the data-dependent part of the power model.

    Returns ``(lut, deltas)``: ``lut[j, 256 * d + q]`` is the CTL=0 power of
    byte ``j`` for ciphertext byte ``d`` and state byte ``q``; ``deltas`` lists
    ``(j, i, delta)`` per two-path primitive, where ``delta[2 * d + q]`` is the
    change in power when its CTL bit is 1.
    """
    vals = table.values[:, clk_level]
    byte_vals = np.arange(256)
    dbits = (byte_vals[:, None] >> np.arange(8)) & 1  # (256, 8)
    lut = np.zeros((16, 256, 256))
    deltas = []
    for j in range(16):
        for i in range(8):
            cell = config.bit(j, i)
            d = dbits[:, i][:, None]
            q = dbits[:, i][None, :]
            if isinstance(cell, Plain):
                contrib = vals[cell.cell.index][d, q] * cell.strength.scale
            else:
                lvt = vals[CellType.LVT.index]
                s0 = cell.strengths[0].scale
                contrib = lvt[d, q] * s0 + table.mux_leakage
                if cell.paths == 2:
                    s1 = cell.strengths[1].scale
                    contrib = contrib + lvt[q, q] * s1
                    dd, qq = np.meshgrid([0, 1], [0, 1], indexing="ij")
                    delta = ((s1 - s0) * (lvt[dd, qq] - lvt[qq, qq])).reshape(4)
                    deltas.append((j, i, delta))
            lut[j] += np.broadcast_to(contrib, (256, 256))
    return lut.reshape(16, 65536), deltas


def _power_chunk(lut, deltas, ct, pre, options: SimOptions, chunk_index: int) -> np.ndarray:
    n = len(ct)
    idx = ct.astype(np.intp) * 256 + pre
    power = np.full(n, float(options.background_offset))
    for j in range(16):
        power += lut[j][idx[:, j]]
    if deltas:
        rng = _stream(options.seed, _STREAM_CTL, chunk_index)
        ctl = rng.integers(0, 2, size=(n, len(deltas)), dtype=np.uint8)
        for p, (j, i, delta) in enumerate(deltas):
            sel = (((ct[:, j] >> i) & 1) << 1) | ((pre[:, j] >> i) & 1)
            power += ctl[:, p] * delta[sel]
    if options.noise_sigma > 0:
        power += _stream(options.seed, _STREAM_NOISE, chunk_index).normal(
            0.0, options.noise_sigma, size=n)
    return power


def draw_ctl(config: StateRegisterConfig, options: SimOptions, n: int) -> np.ndarray:
    """CTL bits used by :func:`generate_traces` for the first ``n`` traces."""
    p = len(two_path_positions(config))
    out = []
    for c in range(-(-n // CHUNK)):
        m = min(CHUNK, n - c * CHUNK)
        if p:
            out.append(_stream(options.seed, _STREAM_CTL, c).integers(
                0, 2, size=(m, p), dtype=np.uint8))
        else:
            out.append(np.zeros((m, 0), dtype=np.uint8))
    return np.concatenate(out) if out else np.zeros((0, p), dtype=np.uint8)


def draw_noise(options: SimOptions, n: int) -> np.ndarray:
    if options.noise_sigma == 0:
        return np.zeros(n)
    return np.concatenate([
        _stream(options.seed, _STREAM_NOISE, c).normal(
            0.0, options.noise_sigma, size=min(CHUNK, n - c * CHUNK))
        for c in range(-(-n // CHUNK))])


def draw_plaintexts(seed: int, n: int) -> np.ndarray:
    chunks = [_stream(seed, _STREAM_PLAINTEXT, c).integers(
        0, 256, size=(min(CHUNK, n - c * CHUNK), 16), dtype=np.uint8)
        for c in range(-(-n // CHUNK))]
    return np.concatenate(chunks) if chunks else np.zeros((0, 16), dtype=np.uint8)


def _chunk_job(args):
    lut, deltas, ct, pre, options, c = args
    return _power_chunk(lut, deltas, ct, pre, options, c)


def simulate_power(config: StateRegisterConfig, table: LeakageTable, ciphertexts,
                   pre_final_states, options: SimOptions = SimOptions(),
                   workers: int = 1) -> np.ndarray:
    """Vectorized static power for a batch of encryptions (trace ``t`` uses substream ``t // CHUNK``)."""
    ct = check_blocks(ciphertexts, "ciphertexts")
    pre = check_blocks(pre_final_states, "pre_final_states")
    lut, deltas = byte_tables(config, table, options.clk_level)
    n = len(ct)
    jobs = [(lut, deltas, ct[s:s + CHUNK], pre[s:s + CHUNK], options, s // CHUNK)
            for s in range(0, n, CHUNK)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk_job, jobs))
    else:
        parts = [_chunk_job(job) for job in jobs]
    return np.concatenate(parts) if parts else np.zeros(0)


_AES_CACHE: dict = {}


def encrypt_pool(key, seed: int, n: int):
    """Plaintexts, pre-final states and ciphertexts of the seed's stream (cached)."""
    k = (check_block(key, "key").tobytes(), int(seed), int(n))
    if k not in _AES_CACHE:
        pts = draw_plaintexts(seed, n)
        pre, ct = aes.encrypt_batch(key, pts)
        for arr in (pts, pre, ct):
            arr.setflags(write=False)
        _AES_CACHE.clear()
        _AES_CACHE[k] = (pts, pre, ct)
    return _AES_CACHE[k]


def generate_traces(config: StateRegisterConfig, table: LeakageTable | None, key, n: int,
                    options: SimOptions = SimOptions(), workers: int = 1) -> TraceSet:
    if n < 1:
        raise ValueError("n must be >= 1")
    table = default_table() if table is None else table
    pts, pre, ct = encrypt_pool(key, options.seed, n)
    power = simulate_power(config, table, ct, pre, options, workers=workers)
    return TraceSet(key, pts, ct, pre, power, options, config.label)


class StaticPowerSimulator(BaseEstimator, TransformerMixin):
    """Transformer mapping plaintexts to simulated static-power samples.

    ``fit`` only validates parameters; ``transform`` encrypts each plaintext
    under ``key`` and returns the power vector.
    """

    def __init__(self, config=None, key="000102030405060708090a0b0c0d0e0f", table=None,
                 clk_level=0, noise_sigma=0.0, background_offset=0.0, seed=0):
        self.config = config
        self.key = key
        self.table = table
        self.clk_level = clk_level
        self.noise_sigma = noise_sigma
        self.background_offset = background_offset
        self.seed = seed

    def fit(self, X=None, y=None):
        if not isinstance(self.config, StateRegisterConfig):
            raise ValueError("config must be a StateRegisterConfig")
        self.key_ = check_block(self.key, "key")
        self.table_ = default_table() if self.table is None else self.table
        self.options_ = SimOptions(self.clk_level, self.noise_sigma,
                                   self.background_offset, self.seed)
        self.n_features_in_ = 16
        return self

    def transform(self, X):
        if not hasattr(self, "options_"):
            self.fit()
        pts = check_blocks(X, "plaintexts")
        pre, ct = aes.encrypt_batch(self.key_, pts)
        return simulate_power(self.config, self.table_, ct, pre, self.options_)

    def simulate(self, n: int) -> TraceSet:
        if not hasattr(self, "options_"):
            self.fit()
        return generate_traces(self.config, self.table_, self.key_, n, self.options_)
