"""Binary trace files with a JSON sidecar, plus CSV export.

Layout (little endian): magic ``SPSCATRC``, ``uint16`` version, ``uint64``
trace count, 16-byte key, then one 40-byte record per trace holding the
plaintext, the ciphertext and the power sample as ``float64``.  Pre-final
states are recomputed on load, and the stored ciphertexts are checked
against a fresh encryption.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from . import aes
from .experiments import atomic_write
from .simulate import SimOptions, TraceSet

MAGIC = b"SPSCATRC"
VERSION = 1
_HEADER = struct.Struct("<8sHQ16s")
_RECORD = np.dtype([("pt", "u1", 16), ("ct", "u1", 16), ("power", "<f8")])


class TraceFileError(ValueError):
    pass


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_traces(path, traces: TraceSet, extra: dict | None = None) -> Path:
    path = Path(path)
    rec = np.empty(len(traces), dtype=_RECORD)
    rec["pt"] = traces.plaintexts
    rec["ct"] = traces.ciphertexts
    rec["power"] = traces.power
    header = _HEADER.pack(MAGIC, VERSION, len(traces), traces.key.tobytes())
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            fh.write(header)
            fh.write(rec.tobytes())
        tmp.replace(path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    meta = {"format": "spsca-traces", "version": VERSION, "n_traces": len(traces),
            "key": traces.key.tobytes().hex(), "options": traces.options.to_dict(),
            "config_label": traces.config_label, **(extra or {})}
    atomic_write(sidecar_path(path), json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return path


def read_traces(path) -> TraceSet:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise TraceFileError(f"{path}: truncated header")
    magic, version, n, key = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise TraceFileError(f"{path}: not a trace file")
    if version != VERSION:
        raise TraceFileError(f"{path}: unsupported version {version}")
    body = raw[_HEADER.size:]
    if len(body) != n * _RECORD.itemsize:
        raise TraceFileError(f"{path}: expected {n} records, found {len(body)} bytes")
    rec = np.frombuffer(body, dtype=_RECORD)
    pts = np.ascontiguousarray(rec["pt"])
    ct = np.ascontiguousarray(rec["ct"])
    pre, expect = aes.encrypt_batch(key, pts)
    bad = np.flatnonzero(np.any(expect != ct, axis=1))
    if bad.size:
        raise TraceFileError(f"{path}: ciphertext of trace {int(bad[0])} does not match the key")
    options, label = SimOptions(), ""
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        options = SimOptions(**meta.get("options", {}))
        label = meta.get("config_label", "")
    return TraceSet(np.frombuffer(key, dtype=np.uint8), pts, ct, pre,
                    np.array(rec["power"], dtype=np.float64), options, label)


def export_csv(path, traces: TraceSet) -> Path:
    """Columns: ``index, plaintext, ciphertext, pre_final_state, power`` (hex blocks)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "plaintext", "ciphertext", "pre_final_state", "power"])
        for i in range(len(traces)):
            w.writerow([i, traces.plaintexts[i].tobytes().hex(),
                        traces.ciphertexts[i].tobytes().hex(),
                        traces.pre_final_states[i].tobytes().hex(),
                        repr(float(traces.power[i]))])
    return path
