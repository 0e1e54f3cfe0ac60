"""Canonical JSON: sorted keys, fixed 17-significant-digit floats, no whitespace drift.

The standard ``json`` encoder offers no hook for float formatting, so the
writer here walks the structure itself. Reading goes through ``json.loads``.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any

import numpy as np


def _float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"non-finite float not representable in canonical JSON: {x!r}")
    s = format(x, ".17g")
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _emit(obj: Any, out: list[str], indent: int | None, level: int) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, np.ndarray):
        _emit(obj.tolist(), out, indent, level)
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        keys = sorted(obj, key=str)
        out.append("{")
        for i, k in enumerate(keys):
            if i:
                out.append(",")
            if indent is not None:
                out.append("\n" + " " * (indent * (level + 1)))
            out.append(json.dumps(str(k), ensure_ascii=False))
            out.append(": " if indent is not None else ":")
            _emit(obj[k], out, indent, level + 1)
        if indent is not None:
            out.append("\n" + " " * (indent * level))
        out.append("}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        # Numeric rows stay on one line even when indenting.
        flat = indent is None or all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj)
        out.append("[")
        for i, v in enumerate(obj):
            if i:
                out.append(",")
            if not flat:
                out.append("\n" + " " * (indent * (level + 1)))
            _emit(v, out, indent, level + 1)
        if not flat:
            out.append("\n" + " " * (indent * level))
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} to canonical JSON")


def dumps(obj: Any, indent: int | None = None) -> str:
    out: list[str] = []
    _emit(obj, out, indent, 0)
    return "".join(out)


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def digest(obj: Any) -> str:
    return sha256_hex(dumps(obj))


def write_json(path: str | Path, obj: Any, indent: int | None = 1) -> None:
    Path(path).write_text(dumps(obj, indent=indent) + "\n", encoding="utf-8")


def read_json(path: str | Path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))
