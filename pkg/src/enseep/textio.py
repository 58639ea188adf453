"""CSV and JSON table emission.

One dialect everywhere: comma separators, header row, LF line endings,
reals printed with 9 significant digits. JSON siblings carry the same
data at full float fidelity plus metadata, and are preferred as inputs
to downstream commands.
"""
from __future__ import annotations

import json
from pathlib import Path

from .errors import BundleIOError, ValidationError


def fmt(value: float) -> str:
    """Format a real with 9 significant digits."""
    return f"{float(value):.9g}"


def write_csv(path: str | Path, header: list[str], rows: list[list[str]]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise BundleIOError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.split("\n") if ln]
    if not lines:
        raise ValidationError(f"{path}: empty CSV")
    header = lines[0].split(",")
    rows = [ln.split(",") for ln in lines[1:]]
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValidationError(f"{path}: row {i + 1} has {len(row)} fields, "
                                  f"header has {len(header)}")
    return header, rows


def write_json(path: str | Path, doc: dict) -> None:
    Path(path).write_text(
        json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_json(path: str | Path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise BundleIOError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc
