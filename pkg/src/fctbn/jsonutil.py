"""Deterministic JSON serialization for run artifacts.

Every JSON document this package writes (models, metadata, manifests,
diagnostics) goes through :func:`dump_json` so that identical inputs produce
byte-identical files: keys are emitted in sorted order and floats are written
with 17 significant digits, which round-trips IEEE doubles exactly.
"""

import json
import numbers

import numpy as np


def _format_float(x: float) -> str:
    if not np.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x!r}")
    return format(float(x), ".17g")


def _emit(obj, out: list, indent: int) -> None:
    pad = "  " * indent
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, numbers.Integral):
        out.append(str(int(obj)))
    elif isinstance(obj, numbers.Real):
        out.append(_format_float(float(obj)))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        keys = sorted(obj)
        for pos, key in enumerate(keys):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be strings, got {key!r}")
            out.append(pad + "  " + json.dumps(key) + ": ")
            _emit(obj[key], out, indent + 1)
            out.append(",\n" if pos < len(keys) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        if not items:
            out.append("[]")
            return
        out.append("[\n")
        for pos, item in enumerate(items):
            out.append(pad + "  ")
            _emit(item, out, indent + 1)
            out.append(",\n" if pos < len(items) - 1 else "\n")
        out.append(pad + "]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} to JSON")


def dump_json(obj) -> str:
    """Render ``obj`` as a deterministic JSON document (trailing newline)."""
    out: list = []
    _emit(obj, out, 0)
    out.append("\n")
    return "".join(out)


def load_json(text: str):
    return json.loads(text)
