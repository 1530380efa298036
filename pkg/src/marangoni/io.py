"""Serialization helpers: canonical JSON (floats as shortest round-trip
repr), config digests, flat tables and binary snapshots with a JSON sidecar."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np


def _plain(obj):
    """Recursively convert numpy and complex values into JSON-ready Python objects."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    return obj


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"nan"'
    if math.isinf(x):
        return '"inf"' if x > 0 else '"-inf"'
    # shortest repr that round-trips exactly
    return repr(float(x))


def _dump(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}{json.dumps(k)}: {_dump(obj[k], indent, level + 1)}' for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_dump(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _dump(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    return json.dumps(obj)


def canonical_json(obj, indent: int = 1) -> str:
    """Deterministic JSON text: sorted keys, floats as shortest round-trip repr."""
    return _dump(_plain(obj), indent, 0) + "\n"


def config_digest(obj) -> str:
    """SHA-256 of the compact canonical form of a config document."""
    text = canonical_json(obj, indent=0).replace("\n", "")
    return hashlib.sha256(text.encode()).hexdigest()


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj))
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_table(path, header, rows) -> Path:
    """Whitespace-free CSV with round-trip float formatting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if not isinstance(v, str) else v for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table(path) -> tuple[list[str], np.ndarray]:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]) if len(lines) > 1 else np.zeros((0, len(header)))
    return header, data


def write_snapshot(prefix, arrays: dict, descriptor: dict) -> tuple[Path, Path]:
    """Flat little-endian float64 binary of the named arrays plus a sidecar
    JSON holding their shapes, offsets and the given descriptor."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    binpath = prefix.with_suffix(".bin")
    layout, offset = [], 0
    with open(binpath, "wb") as fh:
        for name in sorted(arrays):
            a = np.ascontiguousarray(arrays[name], dtype="<f8")
            fh.write(a.tobytes())
            layout.append({"name": name, "shape": list(a.shape), "offset": offset})
            offset += a.nbytes
    side = dict(descriptor, arrays=layout, dtype="<f8")
    jpath = write_json(prefix.with_suffix(".json"), side)
    return binpath, jpath


def read_snapshot(prefix) -> tuple[dict, dict]:
    prefix = Path(prefix)
    side = read_json(prefix.with_suffix(".json"))
    raw = prefix.with_suffix(".bin").read_bytes()
    out = {}
    for item in side["arrays"]:
        n = int(np.prod(item["shape"])) if item["shape"] else 1
        a = np.frombuffer(raw, dtype="<f8", count=n, offset=item["offset"])
        out[item["name"]] = a.reshape(item["shape"]).copy()
    return out, side
