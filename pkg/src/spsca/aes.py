"""Bit-exact AES-128 encryption with access to the final-round input state.

Byte indexing convention, used by every module in this package: a block is
16 octets in serialized order, and byte ``j`` is the j-th byte of the block
as transmitted.  In AES state terms byte ``j`` sits at row ``j % 4`` and
column ``j // 4`` (column-major).  Bit ``i`` of a byte is ``(byte >> i) & 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_block, check_blocks


def _build_sbox() -> np.ndarray:
    # multiplicative inverse in GF(2^8) followed by the affine map
    exp = [0] * 512
    log = [0] * 256
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x ^= (x << 1) ^ (0x11B if x & 0x80 else 0)
        x &= 0xFF
    for i in range(255, 512):
        exp[i] = exp[i - 255]
    box = np.zeros(256, dtype=np.uint8)
    for a in range(256):
        inv = 0 if a == 0 else exp[255 - log[a]]
        s = inv
        for shift in range(1, 5):
            s ^= ((inv << shift) | (inv >> (8 - shift))) & 0xFF
        box[a] = s ^ 0x63
    return box


SBOX = _build_sbox()
INV_SBOX = np.zeros(256, dtype=np.uint8)
INV_SBOX[SBOX] = np.arange(256, dtype=np.uint8)
SBOX.setflags(write=False)
INV_SBOX.setflags(write=False)

HW8 = np.array([bin(v).count("1") for v in range(256)], dtype=np.uint8)
HW8.setflags(write=False)

_XTIME = np.array([((v << 1) ^ (0x1B if v & 0x80 else 0)) & 0xFF for v in range(256)],
                  dtype=np.uint8)
_RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)

# SHIFT_ROWS[j] is the pre-ShiftRows position that lands at position j
SHIFT_ROWS = np.array([(j % 4) + 4 * (((j // 4) + (j % 4)) % 4) for j in range(16)],
                      dtype=np.intp)
INV_SHIFT_ROWS = np.argsort(SHIFT_ROWS)
SHIFT_ROWS.setflags(write=False)
INV_SHIFT_ROWS.setflags(write=False)


@dataclass(frozen=True)
class RoundTrace:
    """State entering the final round together with the resulting ciphertext."""

    pre_final_state: bytes
    ciphertext: bytes


def sbox(x: int) -> int:
    return int(SBOX[_octet(x)])


def inv_sbox(x: int) -> int:
    return int(INV_SBOX[_octet(x)])


def hw(x: int) -> int:
    return int(HW8[_octet(x)])


def hd(a: int, b: int) -> int:
    return int(HW8[_octet(a) ^ _octet(b)])


def _octet(x) -> int:
    x = int(x)
    if not 0 <= x <= 0xFF:
        raise ValueError(f"value {x} is not an octet")
    return x


def shift_rows_origin(j: int) -> int:
    """Pre-ShiftRows byte position that ShiftRows moves to position ``j``."""
    if not 0 <= int(j) <= 15:
        raise ValueError(f"byte index {j} out of range 0..15")
    return int(SHIFT_ROWS[int(j)])


def key_schedule(key) -> np.ndarray:
    """Expand a 16-byte key into the 11 round keys, shape ``(11, 16)``."""
    w = [list(check_block(key)[4 * i:4 * i + 4]) for i in range(4)]
    for i in range(4, 44):
        t = list(w[i - 1])
        if i % 4 == 0:
            t = t[1:] + t[:1]
            t = [int(SBOX[v]) for v in t]
            t[0] ^= _RCON[i // 4 - 1]
        w.append([a ^ b for a, b in zip(w[i - 4], t)])
    return np.array(w, dtype=np.uint8).reshape(11, 16)


def invert_key_schedule(round_key, round_index: int = 10) -> np.ndarray:
    """Recover the cipher key from any single round key (default: the last)."""
    if not 0 <= round_index <= 10:
        raise ValueError("round_index must be in 0..10")
    words = [list(w) for w in check_block(round_key).reshape(4, 4)]
    for r in range(round_index, 0, -1):
        prev = [None] * 4
        for c in (3, 2, 1):
            prev[c] = [a ^ b for a, b in zip(words[c], words[c - 1])]
        t = prev[3][1:] + prev[3][:1]
        t = [int(SBOX[v]) for v in t]
        t[0] ^= _RCON[r - 1]
        prev[0] = [a ^ b for a, b in zip(words[0], t)]
        words = prev
    return np.array(words, dtype=np.uint8).reshape(16)


def _mix_columns(state: np.ndarray) -> np.ndarray:
    s = state.reshape(-1, 4, 4)  # (n, column, row)
    a0, a1, a2, a3 = s[:, :, 0], s[:, :, 1], s[:, :, 2], s[:, :, 3]
    total = a0 ^ a1 ^ a2 ^ a3
    out = np.empty_like(s)
    out[:, :, 0] = a0 ^ total ^ _XTIME[a0 ^ a1]
    out[:, :, 1] = a1 ^ total ^ _XTIME[a1 ^ a2]
    out[:, :, 2] = a2 ^ total ^ _XTIME[a2 ^ a3]
    out[:, :, 3] = a3 ^ total ^ _XTIME[a3 ^ a0]
    return out.reshape(-1, 16)


def final_round(pre_final_state, last_round_key) -> np.ndarray:
    """SubBytes, ShiftRows and AddRoundKey (no MixColumns) on one or more states."""
    state = np.asarray(pre_final_state, dtype=np.uint8)
    rk = check_block(last_round_key)
    return SBOX[state][..., SHIFT_ROWS] ^ rk


def encrypt_batch(key, plaintexts, round_keys: np.ndarray | None = None):
    """Encrypt many blocks at once.

    Returns ``(pre_final_states, ciphertexts)``, both ``(n, 16)`` uint8.
    """
    rks = key_schedule(key) if round_keys is None else round_keys
    state = check_blocks(plaintexts) ^ rks[0]
    for r in range(1, 10):
        state = _mix_columns(SBOX[state][:, SHIFT_ROWS]) ^ rks[r]
    return state, final_round(state, rks[10])


def encrypt(key, plaintext) -> RoundTrace:
    pre, ct = encrypt_batch(key, check_block(plaintext)[None, :])
    return RoundTrace(pre_final_state=pre[0].tobytes(), ciphertext=ct[0].tobytes())
