"""Run metrics: per-round records, a config echo, and a summary block.

A run serializes to a single CSV file.  Lines starting with ``#`` carry the
resolved configuration (before the column header) and the summary (after the
last record), so a run is reconstructible from its output alone.  All floats
are written with ``repr`` and files are written atomically, which makes two
runs of the same configuration byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import os
import tempfile
from dataclasses import dataclass, field, fields

import numpy as np

_MAGIC = "# gradsketch-metrics v1"


@dataclass
class RoundRecord:
    """One row per round; ``t=0`` is the initial state with no traffic.

    ``support_size`` is the l0 size of the broadcast update and
    ``union_size`` the transmitted-support union (they differ only for the
    local top-k baseline).  Byte counts come from actually serialized
    messages: ``bytes_up`` per worker, ``bytes_down`` for the broadcast, and
    ``bytes_request`` for the excluded-by-convention index request.
    ``support_hash`` fingerprints the update indices for invariance checks.
    """

    t: int
    train_loss: float
    test_metric: float
    support_size: int = 0
    union_size: int = 0
    up_sketch_elems: int = 0
    up_exact_elems: int = 0
    down_update_elems: int = 0
    bytes_up: int = 0
    bytes_down: int = 0
    bytes_request: int = 0
    support_hash: str = "-"


_COLUMNS = [f.name for f in fields(RoundRecord)]
_INT_COLUMNS = {
    "t",
    "support_size",
    "union_size",
    "up_sketch_elems",
    "up_exact_elems",
    "down_update_elems",
    "bytes_up",
    "bytes_down",
    "bytes_request",
}


def support_fingerprint(indices: np.ndarray) -> str:
    """Short stable hash of an update support, for cross-run comparisons."""
    digest = hashlib.sha256(np.asarray(indices, dtype="<i8").tobytes())
    return digest.hexdigest()[:12]


@dataclass
class RunMetrics:
    """Everything a run reports: config echo, per-round rows, summary."""

    config_echo: dict[str, str] = field(default_factory=dict)
    records: list[RoundRecord] = field(default_factory=list)
    summary: dict[str, object] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        if name not in _COLUMNS:
            raise KeyError(f"unknown metrics column {name!r}")
        return np.array([getattr(rec, name) for rec in self.records])


def _format_value(value: object) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_metrics_csv(path: str, metrics: RunMetrics) -> None:
    """Write a run atomically (temp file + rename in the target directory)."""
    directory = os.path.dirname(os.path.abspath(path))
    handle = tempfile.NamedTemporaryFile(
        "w", dir=directory, prefix=".metrics-", suffix=".tmp", delete=False, newline=""
    )
    try:
        with handle as fh:
            fh.write(_MAGIC + "\n")
            for key, value in metrics.config_echo.items():
                fh.write(f"# config {key} = {_format_value(value)}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_COLUMNS)
            for rec in metrics.records:
                writer.writerow([_format_value(getattr(rec, name)) for name in _COLUMNS])
            for key, value in metrics.summary.items():
                fh.write(f"# summary {key} = {_format_value(value)}\n")
        os.replace(handle.name, path)
    except BaseException:
        os.unlink(handle.name)
        raise


class MetricsFormatError(ValueError):
    """Raised when a metrics file does not parse."""


def _parse_comment(line: str, kind: str, path: str, lineno: int) -> tuple[str, str]:
    body = line[len(f"# {kind} "):]
    key, sep, value = body.partition(" = ")
    if not sep or not key:
        raise MetricsFormatError(f"{path}:{lineno}: malformed {kind} line {line!r}")
    return key, value


def read_metrics_csv(path: str) -> RunMetrics:
    """Parse a file written by ``write_metrics_csv`` back into RunMetrics.

    Summary values come back as floats when they parse as such, otherwise as
    the raw strings; config values stay strings.
    """
    metrics = RunMetrics()
    header: list[str] | None = None
    with open(path, "r", encoding="utf-8", newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != _MAGIC:
            raise MetricsFormatError(f"{path}: not a metrics file (missing {_MAGIC!r})")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# config "):
                key, value = _parse_comment(line, "config", path, lineno)
                metrics.config_echo[key] = value
                continue
            if line.startswith("# summary "):
                key, value = _parse_comment(line, "summary", path, lineno)
                try:
                    metrics.summary[key] = float(value)
                except ValueError:
                    metrics.summary[key] = value
                continue
            if line.startswith("#"):
                raise MetricsFormatError(f"{path}:{lineno}: unrecognized comment {line!r}")
            row = next(csv.reader([line]))
            if header is None:
                header = row
                if header != _COLUMNS:
                    raise MetricsFormatError(f"{path}:{lineno}: unexpected columns {header}")
                continue
            if len(row) != len(_COLUMNS):
                raise MetricsFormatError(f"{path}:{lineno}: row has {len(row)} fields, expected {len(_COLUMNS)}")
            values: dict[str, object] = {}
            for name, token in zip(_COLUMNS, row):
                if name in _INT_COLUMNS:
                    values[name] = int(token)
                elif name == "support_hash":
                    values[name] = token
                else:
                    values[name] = float(token)
            metrics.records.append(RoundRecord(**values))
    if header is None:
        raise MetricsFormatError(f"{path}: no column header found")
    return metrics
