import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

import numpy as np

from leb.deloc import TrialRecord

__all__ = [
    "CSV_COLUMNS",
    "ExperimentManifest",
    "format_float",
    "records_to_csv",
    "sha256",
    "to_jsonable",
    "write_atomic",
    "write_csv",
    "write_json",
]

CSV_COLUMNS = ("trial", "n", "statistic", "bound", "violated")


def format_float(value: float) -> str:
    """17 significant digits, enough to round-trip a double."""
    return f"{value:.17g}"


def records_to_csv(records: Iterable[TrialRecord]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for record in records:
        writer.writerow(
            [
                record.trial,
                record.n,
                format_float(record.statistic),
                format_float(record.bound),
                int(record.violated),
            ]
        )
    return buffer.getvalue()


def to_jsonable(value: Any) -> Any:
    """Converts numpy scalars and arrays, complex numbers and non-finite floats for json."""
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (complex, np.complexfloating)):
        return {"real": to_jsonable(value.real), "imag": to_jsonable(value.imag)}
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def write_atomic(path: Union[str, Path], text: str) -> Path:
    """Writes through a temporary file in the same directory, then renames it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
    return path


def write_csv(path: Union[str, Path], records: Iterable[TrialRecord]) -> Path:
    return write_atomic(path, records_to_csv(records))


def write_json(path: Union[str, Path], data: Any) -> Path:
    return write_atomic(path, json.dumps(to_jsonable(data), indent=2, sort_keys=True) + "\n")


def sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class ExperimentManifest:
    """Everything needed to re-run a command and check its outputs.

    `reports` maps each report file name (relative to the manifest) to its SHA-256 digest. The
    wall-clock time is informational and is excluded from every report file.

    """

    command: str
    config: Dict[str, Any]
    calibration: Optional[Dict[str, Any]]
    seed: int
    version: str
    reports: Dict[str, str] = field(default_factory=dict)
    results: Dict[str, Any] = field(default_factory=dict)
    wall_clock: float = 0.0

    def add_report(self, path: Path) -> None:
        self.reports[path.name] = sha256(path)

    def save(self, path: Union[str, Path]) -> Path:
        return write_json(path, asdict(self))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentManifest":
        return cls(**json.loads(Path(path).read_text("utf-8")))
