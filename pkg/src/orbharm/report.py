"""Validation reports and deterministic JSON/CSV output."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


@dataclass
class ValidationReport:
    """Flat list of named check entries; passes iff every entry passes."""

    subject: str
    entries: list[dict] = field(default_factory=list)

    def add(self, check: str, passed: bool, residual: float | None = None, **info) -> dict:
        entry = {"check": check, "passed": bool(passed)}
        if residual is not None:
            entry["residual"] = float(residual)
        entry.update(info)
        self.entries.append(entry)
        return entry

    @property
    def passed(self) -> bool:
        return all(e["passed"] for e in self.entries)

    def failures(self) -> list[dict]:
        return [e for e in self.entries if not e["passed"]]

    def max_residual(self, check: str | None = None) -> float:
        vals = [e["residual"] for e in self.entries
                if "residual" in e and (check is None or e["check"] == check)]
        return max(vals) if vals else 0.0

    def to_dict(self) -> dict:
        return {"subject": self.subject, "passed": self.passed, "entries": self.entries}


def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return '"NaN"'
    if math.isinf(x):
        return '"Infinity"' if x > 0 else '"-Infinity"'
    return format(x, ".17g")


def to_jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if hasattr(obj, "to_dict"):
        return to_jsonable(obj.to_dict())
    return obj


def dumps(obj: Any, indent: int = 2) -> str:
    """JSON with every float printed at 17 significant digits and sorted keys."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if o is None:
            return "null"
        if o is True:
            return "true"
        if o is False:
            return "false"
        if isinstance(o, int):
            return str(o)
        if isinstance(o, float):
            return _fmt_float(o)
        if isinstance(o, str):
            import json
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{enc(str(k), level)}: {enc(o[k], level + 1)}" for k in sorted(o)]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in o):
                return "[" + ", ".join(enc(v, level) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialise {type(o).__name__}")

    return enc(to_jsonable(obj), 0) + "\n"


def write_json(path: str | Path, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")
    return path


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[float]],
              comment: str | None = None) -> Path:
    """Write a numeric CSV. ``comment`` becomes a leading ``#`` line (units, grid metadata)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    if comment:
        lines.append("# " + comment)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(format(float(v), ".17g") if not isinstance(v, str) else v for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
