"""Atomic persistence of CSV time series and replay sidecars."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from vee_coherence.dynamics import TrajectoryRecord

UNDEFINED_TOKEN = "NA"
BASE_COLUMNS = ("t_fs", "rho_gg", "rho_11", "rho_22", "rho_tt", "re_rho12", "im_rho12", "abs_rho12", "C")
STDERR_COLUMNS = ("stderr_re_rho12", "stderr_im_rho12", "stderr_abs_rho12")


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_path, path)
    finally:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)


def atomic_write_yaml(path: Path, data: dict[str, Any]) -> None:
    atomic_write_text(path, yaml.safe_dump(data, sort_keys=False, allow_unicode=True))


def read_yaml(path: Path) -> dict[str, Any]:
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ValueError(f"{path} is not valid YAML") from exc
    if not isinstance(data, dict):
        raise ValueError(f"{path} must hold a YAML mapping")
    return data


def render_csv(record: TrajectoryRecord, stderr: Optional[dict[str, np.ndarray]] = None) -> str:
    columns = list(BASE_COLUMNS)
    if stderr is not None:
        columns.extend(STDERR_COLUMNS)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    series = [
        record.times,
        record.rhogg,
        record.rho11,
        record.rho22,
        record.rhott,
        record.rho12.real,
        record.rho12.imag,
        record.abs_rho12,
        record.C,
    ]
    if stderr is not None:
        series.extend(stderr[name] for name in STDERR_COLUMNS)
    for row in zip(*series):
        writer.writerow([_format_number(value) for value in row])
    return buffer.getvalue()


def write_csv(path: Path, record: TrajectoryRecord, stderr: Optional[dict[str, np.ndarray]] = None) -> str:
    text = render_csv(record, stderr)
    atomic_write_text(path, text)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with path.open("r", encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def check_csv_schema(path: Path, n_points: int, with_stderr: bool = False) -> list[str]:
    """Returns a list of schema problems; empty when the file conforms."""
    header, rows = read_csv(path)
    problems: list[str] = []
    expected = list(BASE_COLUMNS) + (list(STDERR_COLUMNS) if with_stderr else [])
    if header != expected:
        problems.append(f"header {header} != {expected}")
    if len(rows) != n_points:
        problems.append(f"{len(rows)} rows, expected {n_points}")
    c_index = BASE_COLUMNS.index("C")
    for number, row in enumerate(rows):
        for index, cell in enumerate(row):
            if index == c_index and cell == UNDEFINED_TOKEN:
                continue
            try:
                value = float(cell)
            except ValueError:
                problems.append(f"row {number} column {index}: {cell!r} is not a number")
                continue
            if not math.isfinite(value):
                problems.append(f"row {number} column {index}: non-finite value")
    return problems


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _format_number(value: Any) -> str:
    number = float(value)
    if math.isnan(number):
        return UNDEFINED_TOKEN
    return repr(number)
