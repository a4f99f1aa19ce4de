"""Field files, diagnostics CSV streams, checkpoints and JSON reports.

Field format: a 32-byte little-endian header (magic ``BFLD``, version u32,
grid_n u32, pad u32, side f64, reserved f64) followed by grid_n * grid_n
float64 triples in row-major (i, j) order.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .torus import TorusSpec

MAGIC = b"BFLD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


def write_field(path: str | Path, u: np.ndarray, spec: TorusSpec) -> None:
    u = np.asarray(u, dtype="<f8")
    if u.shape != (3, spec.n, spec.n):
        raise ValueError("field shape does not match the grid")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, spec.n, 0, float(spec.side), 0.0))
        fh.write(np.ascontiguousarray(np.moveaxis(u, 0, -1)).tobytes())


def read_field(path: str | Path) -> tuple[np.ndarray, TorusSpec]:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, n, _, side, _ = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a field file")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported field version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != 3 * n * n:
        raise ValueError(f"{path}: truncated field data")
    u = np.ascontiguousarray(np.moveaxis(data.reshape(n, n, 3), -1, 0), dtype=float)
    return u, TorusSpec(n, side)


def write_field_csv(path: str | Path, u: np.ndarray, spec: TorusSpec) -> None:
    """Lossless text export (repr of every float) for small grids."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "u0", "u1", "u2"])
        for i in range(spec.n):
            for j in range(spec.n):
                w.writerow([i, j] + [repr(float(u[c, i, j])) for c in range(3)])


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else str(x)
    return str(x)


class DiagnosticsWriter:
    """Streams DiagnosticsRecord rows to CSV; floats are written with repr so runs compare bitwise."""

    def __init__(self, path: str | Path, columns: list[str], meta: dict | None = None, append: bool = False):
        self.path = Path(path)
        self.columns = columns
        mode = "a" if append and self.path.exists() else "w"
        self._fh = open(self.path, mode, newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        if mode == "w":
            if meta:
                self._fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
            self._w.writerow(columns)

    def __call__(self, record) -> None:
        d = asdict(record)
        self._w.writerow([_fmt(d[c]) for c in self.columns])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_diagnostics(path: str | Path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    head, body = rows[0], rows[1:]
    out = {}
    for k, name in enumerate(head):
        col = [r[k] for r in body]
        try:
            out[name] = np.array([float(x) for x in col])
        except ValueError:
            out[name] = np.array(col)
    return out


def _hex(x: float) -> str:
    return float(x).hex()


def save_checkpoint(directory: str | Path, state, tag: str = "checkpoint") -> Path:
    """Field file plus a JSON sidecar with mu, ledgers and stepping state (floats stored exactly)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_field(d / f"{tag}.bfld", state.u, state.spec)
    meta = {
        "version": __version__,
        "mu": _hex(state.mu), "mu0": _hex(state.mu0), "mu_ref": _hex(state.ms.mu_ref),
        "b": [_hex(state.ms.b[0]), _hex(state.ms.b[1])],
        "t": _hex(state.t), "dt": _hex(state.dt), "energy": _hex(state.energy),
        "dist_u": _hex(state.dist_u), "dist_g": _hex(state.dist_g),
        "phase": state.phase, "step_count": state.step_count,
        "profile": state.ms.profile.to_dict(),
    }
    (d / f"{tag}.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return d / f"{tag}.json"


def load_checkpoint_meta(directory: str | Path, tag: str = "checkpoint") -> tuple[np.ndarray, TorusSpec, dict]:
    d = Path(directory)
    u, spec = read_field(d / f"{tag}.bfld")
    raw = json.loads((d / f"{tag}.json").read_text())
    meta = dict(raw)
    for key in ("mu", "mu0", "mu_ref", "t", "dt", "energy", "dist_u", "dist_g"):
        meta[key] = float.fromhex(raw[key])
    meta["b"] = tuple(float.fromhex(x) for x in raw["b"])
    return u, spec, meta


def write_json(path: str | Path, payload: dict) -> None:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        raise TypeError(f"cannot serialise {type(o).__name__}")

    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=default))
