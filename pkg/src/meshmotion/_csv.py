"""Deterministic delimited output: fixed row order, 17 significant digits."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path, header: list, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path) -> list:
    """Rows as dicts keyed by the header; all values come back as strings."""
    text = Path(path).read_text(encoding="utf-8").strip().split("\n")
    header = text[0].split(",")
    return [dict(zip(header, line.split(","))) for line in text[1:]]
