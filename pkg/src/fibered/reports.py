"""JSON/CSV serialization shared by diagnostics and the command line."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, is_dataclass, fields as dc_fields

import numpy as np

VERDICTS = ("pass", "fail", "hypothesis-not-met", "skipped")


def jsonable(obj):
    """Convert numpy scalars/arrays, dataclasses and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dc_fields(obj)}
    return obj


def canonical_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":"))


def digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


@dataclass
class Report:
    name: str
    inputs: dict
    metrics: dict
    verdict: str
    tolerances: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")

    @property
    def inputs_digest(self) -> str:
        return digest(self.inputs)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "inputs_digest": self.inputs_digest,
            "metrics": jsonable(self.metrics),
            "verdict": self.verdict,
            "tolerances": jsonable(self.tolerances),
        }

    def write(self, out_dir) -> list:
        """Write ``<name>.json`` and, if there are rows, ``<name>.csv``; returns the paths."""
        os.makedirs(out_dir, exist_ok=True)
        paths = [os.path.join(out_dir, f"{self.name}.json")]
        with open(paths[0], "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
        if self.rows:
            paths.append(os.path.join(out_dir, f"{self.name}.csv"))
            write_rows(paths[1], self.rows)
        return paths


def write_rows(path, rows: list) -> None:
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: jsonable(r.get(k)) for k in keys})
