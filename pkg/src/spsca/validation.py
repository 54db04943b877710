"""Input validation helpers shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np


def check_block(block, name: str = "block") -> np.ndarray:
    """Coerce a 16-byte block given as bytes, hex string or int sequence.

    Returns a read-only ``(16,)`` uint8 array.
    """
    if isinstance(block, str):
        text = block.strip().replace(" ", "")
        try:
            block = bytes.fromhex(text)
        except ValueError as exc:
            raise ValueError(f"{name}: not a hex string: {block!r}") from exc
    if isinstance(block, (bytes, bytearray, memoryview)):
        arr = np.frombuffer(bytes(block), dtype=np.uint8)
    else:
        raw = np.asarray(block)
        if raw.dtype.kind not in "iu":
            raise ValueError(f"{name}: expected integer octets, got dtype {raw.dtype}")
        if raw.size and (raw.min() < 0 or raw.max() > 255):
            raise ValueError(f"{name}: values must be octets")
        arr = raw.astype(np.uint8)
    if arr.shape != (16,):
        raise ValueError(f"{name}: expected 16 octets, got shape {arr.shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def check_blocks(blocks, name: str = "blocks") -> np.ndarray:
    """Coerce a batch of blocks to a ``(n, 16)`` uint8 array."""
    arr = np.asarray(blocks)
    if arr.ndim == 1 and arr.dtype.kind in "OSU":
        arr = np.stack([check_block(b, name) for b in arr])
    if arr.dtype.kind not in "iu":
        raise ValueError(f"{name}: expected integer octets, got dtype {arr.dtype}")
    if arr.ndim != 2 or arr.shape[1] != 16:
        raise ValueError(f"{name}: expected shape (n, 16), got {arr.shape}")
    if arr.dtype != np.uint8:
        if arr.size and (arr.min() < 0 or arr.max() > 255):
            raise ValueError(f"{name}: values must be octets")
        arr = arr.astype(np.uint8)
    return arr


def check_power(power, n: int | None = None, name: str = "power") -> np.ndarray:
    arr = np.asarray(power, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"{name}: expected a 1-d vector, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name}: length {arr.shape[0]} does not match {n} traces")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_byte_index(j) -> int:
    j = int(j)
    if not 0 <= j <= 15:
        raise ValueError(f"byte index {j} out of range 0..15")
    return j


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed {seed} must be a 64-bit unsigned integer")
    return seed
