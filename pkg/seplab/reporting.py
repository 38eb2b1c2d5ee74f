"""JSON and CSV report files and run manifests.

Reals are written with 17 significant digits so every value read back is
bit-identical to the one written. NaN and infinities become `null` in JSON
and empty cells in CSV. Field order is the order of the report's own
`to_dict`/`row` output.
"""

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import __version__
from .errors import DataFormatError, RejectedInputError
from .separation import SeparationReport
from .training import HISTORY_COLUMNS, REPORT_COLUMNS, ExperimentReport, HistoryRow

logger = logging.getLogger(__name__)

PathLike = Union[str, "os.PathLike[str]"]


def format_real(value: float) -> str:
    return format(value, ".17g")


def to_document(value: Any) -> Any:
    """Plain JSON-like structure of a report object."""
    if isinstance(value, ExperimentReport):
        return value.row()
    if hasattr(value, "to_dict"):
        return to_document(value.to_dict())
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return to_document(dataclasses.asdict(value))
    if isinstance(value, Mapping):
        return {str(k): to_document(v) for k, v in value.items()}
    if isinstance(value, np.ndarray):
        return to_document(value.tolist())
    if isinstance(value, (list, tuple)):
        return [to_document(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _encode(value: Any, level: int = 0) -> str:
    pad = "  " * (level + 1)
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_real(value) if math.isfinite(value) else "null"
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, Mapping):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, level + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * level + "}"
    if isinstance(value, list):
        if not value:
            return "[]"
        items = [f"{pad}{_encode(v, level + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + "\n" + "  " * level + "]"
    raise RejectedInputError(f"cannot serialize {type(value).__name__}")


def dumps(value: Any) -> str:
    return _encode(to_document(value)) + "\n"


def to_rows(value: Any) -> Tuple[Sequence[str], List[Dict[str, Any]]]:
    """(columns, rows) of the CSV rendering of a report."""
    if isinstance(value, SeparationReport):
        rows = [r.to_dict() for r in value.records]
        columns = [f.name for f in dataclasses.fields(value.records[0])] if rows else []
        return columns, rows
    if isinstance(value, ExperimentReport):
        return REPORT_COLUMNS, [value.row()]
    if isinstance(value, Mapping):
        return list(value), [dict(value)]
    rows = list(value)
    if not rows:
        return [], []
    if isinstance(rows[0], HistoryRow):
        return HISTORY_COLUMNS, [dataclasses.asdict(r) for r in rows]
    documents = [to_document(r) for r in rows]
    if not all(isinstance(d, Mapping) for d in documents):
        raise RejectedInputError("CSV reports need one mapping per row")
    return list(documents[0]), documents


def _cell(value: Any) -> str:
    value = to_document(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_real(value) if math.isfinite(value) else ""
    return str(value)


def write_report(value: Any, path: PathLike, format: str = "json") -> None:
    """Write a report object as JSON or CSV.

    Raises:
        RejectedInputError: Unknown format or unserializable value.
        DataFormatError: The file could not be written.
    """
    if format not in ("json", "csv"):
        raise RejectedInputError(f"unknown report format {format!r}")
    try:
        with open(path, "w", newline="") as file:
            if format == "json":
                file.write(dumps(value))
            else:
                columns, rows = to_rows(value)
                if columns:
                    writer = csv.writer(file, lineterminator="\n")
                    writer.writerow(columns)
                    writer.writerows([[_cell(row.get(c)) for c in columns] for row in rows])
    except OSError as e:
        raise DataFormatError(f"cannot write report: {e.strerror or e}", field="path", path=str(path)) from e
    logger.debug("Wrote %s report %s", format, path)


def read_report(path: PathLike) -> Any:
    """Parse a report written by `write_report` (JSON document or list of CSV rows)."""
    try:
        with open(path, "r", newline="") as file:
            if str(path).endswith(".csv"):
                return list(csv.DictReader(file))
            return json.load(file)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"invalid JSON: {e.msg}", field="json", path=str(path)) from None


def histogram_rows(bins: Iterable[Tuple[float, int]]) -> List[Dict[str, Any]]:
    return [{"bin_start": start, "count": count} for start, count in bins]


# MANIFESTS


def file_digest(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as file:
        for chunk in iter(lambda: file.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to recompute the outputs of one command."""

    command: str
    config: Dict[str, Any]
    seeds: Dict[str, int] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    version: str = __version__
    duration_seconds: float = 0.0

    def add_input(self, path: Optional[PathLike]) -> None:
        if path is not None:
            self.inputs[str(path)] = file_digest(path)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "version": self.version,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "duration_seconds": self.duration_seconds,
        }


def manifest_path(output: PathLike) -> str:
    return f"{os.fspath(output)}.manifest.json"


def write_manifest(manifest: RunManifest, output: PathLike) -> str:
    path = manifest_path(output)
    write_report(manifest, path, "json")
    return path
