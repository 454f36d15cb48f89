"""On-disk store: delimited tables plus JSON manifests with content hashes."""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from panelclim.errors import DataError

FLOAT_FORMAT = "%.10g"
MANIFEST = "manifest.json"


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_table(df: pd.DataFrame, path: str | Path) -> str:
    """Write ``df`` as CSV with 10 significant digits; return its sha256."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return file_hash(path)


def read_table(path: str | Path, **kwargs) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing table {path}")
    kwargs.setdefault("keep_default_na", True)
    return pd.read_csv(path, **kwargs)


def to_jsonable(obj: Any) -> Any:
    """Recursively convert numpy / pandas objects; floats keep 10 significant digits."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
        return float(FLOAT_FORMAT % x)
    return obj


def write_json(obj: Any, path: str | Path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"
    path.write_text(text, encoding="utf-8")
    return text_hash(text)


def read_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def update_manifest(store: str | Path, stage: str, tables: dict[str, dict], meta: dict | None = None) -> None:
    """Merge one stage's table records (rows, hash, drops) into ``store/manifest.json``."""
    store = Path(store)
    path = store / MANIFEST
    manifest = read_json(path) if path.exists() else {"tables": {}, "stages": {}}
    manifest["tables"].update(tables)
    manifest["stages"][stage] = meta or {}
    write_json(manifest, path)


def load_manifest(store: str | Path) -> dict:
    return read_json(Path(store) / MANIFEST)
