"""Symbol-trace files for debugging the packed channel vector.

Layout: the 8-byte magic ``RJSCCSYM``, a little-endian uint32 header length,
a UTF-8 JSON header (ROI position, grid, k, tau, C_m, per-feature layout),
then the complex payload as little-endian float32 (re, im) pairs.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from roijscc.bandwidth import LinkConfig, PackedSymbols
from roijscc.errors import ProtocolError

MAGIC = b"RJSCCSYM"
VERSION = 1


@dataclass(frozen=True)
class SymbolTrace:
    header: dict
    symbols: np.ndarray  # complex64


def write_trace(path: str | Path, packed: PackedSymbols, gamma, cfg: LinkConfig) -> Path:
    values = packed.values
    if hasattr(values, "detach"):
        values = values.detach().cpu().numpy()
    values = np.asarray(values, dtype=np.complex64)
    header = {
        "version": VERSION,
        "gamma": [int(gamma[0]), int(gamma[1])],
        "grid": [cfg.grid.n_h, cfg.grid.n_w],
        "feature_grid": [cfg.feat_h, cfg.feat_w],
        "k": cfg.k,
        "tau": cfg.tau,
        "adaptive": cfg.adaptive,
        "c_m": cfg.c_m,
        "layout": packed.layout[:, 1].tolist(),
        "n_symbols": int(values.shape[0]),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = np.empty(2 * values.shape[0], dtype="<f4")
    payload[0::2] = values.real
    payload[1::2] = values.imag
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload.tobytes())
    return path


def read_trace(path: str | Path) -> SymbolTrace:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ProtocolError(f"{path} is not a symbol trace")
    (size,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + size].decode())
    payload = np.frombuffer(raw[12 + size:], dtype="<f4")
    if payload.size != 2 * header["n_symbols"]:
        raise ProtocolError(f"trace payload has {payload.size // 2} symbols, header says {header['n_symbols']}")
    symbols = (payload[0::2] + 1j * payload[1::2]).astype(np.complex64)
    return SymbolTrace(header, symbols)
