"""CSV tables with a ``#`` metadata header, mirrored as JSON."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


def _cell(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


def render_csv(rows: Sequence[Mapping], metadata: Mapping) -> str:
    buf = io.StringIO()
    for k, v in metadata.items():
        buf.write(f"# {k}: {json.dumps(v, sort_keys=True)}\n")
    columns: list[str] = []
    for r in rows:
        columns.extend(c for c in r if c not in columns)
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", restval="")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(v) for k, v in r.items()})
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, np.generic):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def write_table(out_dir, name: str, rows: Sequence[Mapping], metadata: Mapping) -> tuple[Path, Path]:
    """Write ``<name>.csv`` and ``<name>.json`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{name}.csv"
    json_path = out_dir / f"{name}.json"
    csv_path.write_text(render_csv(rows, metadata), encoding="utf-8")
    doc = {"metadata": dict(metadata), "rows": [dict(r) for r in rows]}
    json_path.write_text(json.dumps(_jsonable(doc), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path
