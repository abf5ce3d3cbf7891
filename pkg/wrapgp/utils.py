"""
File helpers shared by the command line and the model/geodesic exporters.

All writes go to a temporary file in the target directory first and are then
renamed, so an interrupted run never leaves a truncated artifact behind.
"""

import hashlib
import json
import os
import tempfile
from typing import Any

import numpy as np
from astropy.table import Table

__all__ = [
    "atomic_write_text",
    "dumps_json",
    "write_json",
    "read_json",
    "write_table_csv",
    "digest",
]


def atomic_write_text(path: str, text: str) -> str:
    """Write text to `path` atomically and return the absolute path."""
    path = os.path.abspath(path)
    dirname = os.path.dirname(path)
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def _to_builtin(obj: Any) -> Any:
    """numpy scalars / arrays --> python floats / lists"""
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def dumps_json(obj: Any) -> str:
    """Serialize to JSON. Floats use repr, so every stored value round-trips."""
    return json.dumps(obj, default=_to_builtin, sort_keys=True, indent=1)


def write_json(path: str, obj: Any) -> str:
    return atomic_write_text(path, dumps_json(obj) + "\n")


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise FileNotFoundError(f"File {path} does not exist.")
    with open(path, "r") as f:
        return json.load(f)


def write_table_csv(path: str, table: Table) -> str:
    """Write an astropy Table as CSV with 17 significant digits."""
    table = table.copy(copy_data=False)
    for name in table.colnames:
        if table[name].dtype.kind == "f":
            table[name].format = "%.17g"
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".tmp-", suffix=".csv")
    os.close(fd)
    try:
        table.write(tmp, format="ascii.csv", overwrite=True)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return os.path.abspath(path)


def digest(obj: Any) -> str:
    """SHA-256 of the canonical JSON of `obj`."""
    s = json.dumps(obj, default=_to_builtin, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(s.encode()).hexdigest()
