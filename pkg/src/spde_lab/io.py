"""Persistence: flat binary fields, CSV/JSON reports and checksummed manifests.

Binary layout (little-endian)::

    8 bytes   magic  b"SPDELAB1"
    4 bytes   uint32 length n of the header
    n bytes   UTF-8 JSON header (sorted keys)
    rest      float64 data, row-major, shape given by header["shape"]
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from pathlib import Path

import numpy as np

from .correlation import CorrelationModel
from .errors import DomainError
from .grid import Grid
from .mild import SolutionField
from .noise import NoiseIncrements

MAGIC = b"SPDELAB1"
SCHEMA_VERSION = 1
_DTYPE = np.dtype("<f8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(doc) -> str:
    """Canonical JSON: sorted keys, non-finite floats as strings."""
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2)


def write_json(path, doc) -> Path:
    path = Path(path)
    path.write_text(dumps(doc) + "\n")
    return path


def write_csv(path, header, rows) -> Path:
    """RFC-4180 CSV with ``repr`` floats so values round-trip exactly."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_array(path, data: np.ndarray, header: dict) -> Path:
    data = np.ascontiguousarray(data, dtype=_DTYPE)
    head = dict(header, shape=list(data.shape), dtype="<f8", schema=SCHEMA_VERSION)
    blob = json.dumps(_jsonable(head), sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(data.tobytes(order="C"))
    return path


def read_array(path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise DomainError(f"{path}: not a spde_lab field file")
    (n,) = struct.unpack("<I", raw[8:12])
    head = json.loads(raw[12:12 + n])
    data = np.frombuffer(raw, dtype=_DTYPE, offset=12 + n).reshape(head["shape"])
    return data.copy(), head


def write_noise(path, noise: NoiseIncrements) -> Path:
    return write_array(path, noise.data, dict(noise.header(), kind="noise",
                                              clipped_mass=noise.clipped_mass))


def read_noise(path) -> NoiseIncrements:
    data, h = read_array(path)
    if h.get("kind") != "noise":
        raise DomainError(f"{path}: not a noise file")
    g = Grid(h["d"], h["N"], h["L"], h["dt"], h["n_steps"])
    return NoiseIncrements(data, g, CorrelationModel.from_dict(h["model"]), h["seed"],
                           h["method"], h["version"], h.get("clipped_mass", 0.0))


def write_solution(path, sol: SolutionField) -> Path:
    """Field file plus a ``.json`` provenance sidecar."""
    g = sol.grid
    head = {"kind": "solution", "d": g.d, "N": g.N, "L": g.L, "dt": g.dt,
            "n_steps": g.n_steps}
    path = write_array(path, sol.values, head)
    write_json(path.with_suffix(path.suffix + ".json"), sol.provenance)
    return path


def read_solution(path) -> SolutionField:
    data, h = read_array(path)
    if h.get("kind") != "solution":
        raise DomainError(f"{path}: not a solution file")
    side = Path(str(path) + ".json")
    prov = json.loads(side.read_text()) if side.exists() else {}
    return SolutionField(data, Grid(h["d"], h["N"], h["L"], h["dt"], h["n_steps"]), prov)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, files, extra: dict | None = None) -> Path:
    """``manifest.json`` listing each file (relative path, bytes, sha256), sorted."""
    out_dir = Path(out_dir)
    entries = []
    for f in sorted({Path(f).resolve() for f in files}):
        entries.append({"path": f.relative_to(out_dir.resolve()).as_posix(),
                        "bytes": f.stat().st_size, "sha256": sha256(f)})
    doc = {"schema": SCHEMA_VERSION, "files": entries}
    if extra:
        doc.update(extra)
    return write_json(out_dir / "manifest.json", doc)
