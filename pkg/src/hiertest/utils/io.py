import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence

import numpy as np

from hiertest import __version__
from hiertest.core.exception import AppException


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_jsonable(v) for v in obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        # JSON has no infinities
        return value if math.isfinite(value) else str(value)
    return obj


def _fmt(value: Any) -> str:
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def config_hash(config: Any) -> str:
    payload = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def make_manifest(command: str, config: Any, seed: Optional[int] = None) -> dict:
    return {
        "tool": "hiertest",
        "version": __version__,
        "command": command,
        "config_sha256": config_hash(config),
        "seed": seed,
    }


def atomic_write_text(path: Path, text: str) -> Path:
    """Write through a temporary file in the target directory, then rename over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as e:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise AppException(f"could not write {path}", detail=str(e)) from e
    return path


def dump_json(payload: Any, manifest: dict) -> str:
    return json.dumps({"manifest": _jsonable(manifest), "result": _jsonable(payload)}, indent=2, sort_keys=False) + "\n"


def dump_csv(header: Sequence[str], rows: Iterable[Sequence[Any]], manifest: dict) -> str:
    buf = io.StringIO()
    for key, value in manifest.items():
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_json(path: Path, payload: Any, manifest: dict) -> Path:
    return atomic_write_text(path, dump_json(payload, manifest))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]], manifest: dict) -> Path:
    return atomic_write_text(path, dump_csv(header, rows, manifest))


def read_csv_rows(path: Path) -> List[List[str]]:
    """Data rows (header included) of a file written by `write_csv`, manifest comments skipped."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return [row for row in csv.reader(line for line in fh if not line.startswith("#"))]
