"""JSON and delimiter-separated output with lossless float formatting."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import IoFailure


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(bool(obj) if obj is not None else None)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return json.dumps(None)
        return format(v, ".17g") if v != int(v) or abs(v) >= 1e16 else format(v, ".1f")
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
               for v in seq):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in seq) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj, indent: int = 2) -> str:
    """JSON text; non-integral floats carry 17 significant digits, non-finite become null."""
    return _encode(obj, indent, 0) + "\n"


def dump_json(obj, path) -> None:
    try:
        Path(path).write_text(dumps_json(obj))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def write_table(path, columns, rows) -> None:
    """Comma-separated table with a header row; floats at 17 significant digits."""
    try:
        with open(path, "w") as fh:
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(v if isinstance(v, str) else format(float(v), ".17g")
                                  for v in row) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
