"""
Serialization of result tables and the run manifest.

Tables are lists of row dicts turned into pandas DataFrames. CSV floats use
17 significant digits so every double round-trips; JSON holds one object
per row under a top-level array.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.json"
# Excel limits sheet names to 31 characters
MAX_SHEET_NAME = 31


def to_frame(rows, columns=None) -> pd.DataFrame:
    """Rows as a DataFrame; listed columns first, in order, then any extras as they appear."""
    df = pd.DataFrame(list(rows))
    if columns:
        head = [c for c in columns if c in df.columns]
        df = df[head + [c for c in df.columns if c not in head]]
    return df


def _plain(value):
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None if np.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def frame_to_csv(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def frame_to_json(df: pd.DataFrame) -> str:
    records = [{k: _plain(v) for k, v in row.items()} for row in df.to_dict(orient="records")]
    return json.dumps(records, indent=1) + "\n"


def write_table(df: pd.DataFrame, path: str, fmt: str = "csv", sheet_name: str = "results") -> str:
    """Writes one table; returns the path written."""
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(frame_to_csv(df))
    elif fmt == "json":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(frame_to_json(df))
    elif fmt == "xlsx":
        with pd.ExcelWriter(path, engine="openpyxl") as writer:
            df.to_excel(writer, sheet_name=sheet_name[:MAX_SHEET_NAME], index=False)
    else:
        raise ValueError(f"unknown output format '{fmt}'")
    logger.info("Wrote %d rows to %s", len(df), path)
    return path


def sibling_path(path: str, suffix: str) -> str:
    """'out/w.csv' + 'paths' -> 'out/w.paths.csv'."""
    stem, ext = os.path.splitext(path)
    return f"{stem}.{suffix}{ext}"


def read_table(path: str) -> pd.DataFrame:
    ext = os.path.splitext(path)[1].lower()
    if ext == ".csv":
        return pd.read_csv(path)
    if ext == ".json":
        with open(path, encoding="utf-8") as fh:
            return pd.DataFrame(json.load(fh))
    if ext == ".xlsx":
        return pd.read_excel(path, engine="openpyxl")
    raise ValueError(f"not a result table: {path}")


@dataclass
class RunManifest:
    config_sha256: str
    version: str
    seed: int
    subcommand: str
    threads: int
    wall_clock_seconds: float = 0.0
    outputs: list = field(default_factory=list)
    verdict: str | None = None

    def to_dict(self) -> dict:
        data = asdict(self)
        if data["verdict"] is None:
            del data["verdict"]
        return data

    def write(self, folder: str) -> str:
        os.makedirs(folder or ".", exist_ok=True)
        path = os.path.join(folder, MANIFEST_NAME)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def read(cls, folder: str) -> "RunManifest":
        with open(os.path.join(folder, MANIFEST_NAME), encoding="utf-8") as fh:
            return cls(**json.load(fh))


def run_tables(folder: str) -> dict[str, pd.DataFrame]:
    """Every table listed in a run's manifest, keyed by file stem."""
    manifest = RunManifest.read(folder)
    tables = {}
    for name in manifest.outputs:
        path = os.path.join(folder, name)
        if not os.path.exists(path):
            logger.warning("Manifest lists %s but it is missing", path)
            continue
        tables[os.path.splitext(os.path.basename(name))[0]] = read_table(path)
    return tables


def manifest_frame(manifest: RunManifest) -> pd.DataFrame:
    """Field/value table of the manifest; always carries the verdict field."""
    data = asdict(manifest)
    data["outputs"] = ", ".join(data["outputs"])
    return pd.DataFrame({"field": list(data), "value": [str(v) for v in data.values()]})


def build_workbook(folder: str, path: str) -> str:
    """One workbook per run: a manifest sheet plus one sheet per table."""
    manifest = RunManifest.read(folder)
    tables = run_tables(folder)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        manifest_frame(manifest).to_excel(writer, sheet_name="manifest", index=False)
        used = {"manifest"}
        for name, df in tables.items():
            sheet = name.replace(".", "_")[:MAX_SHEET_NAME]
            base, i = sheet, 1
            while sheet in used:
                suffix = f"_{i}"
                sheet = base[: MAX_SHEET_NAME - len(suffix)] + suffix
                i += 1
            used.add(sheet)
            df.to_excel(writer, sheet_name=sheet, index=False)
    return path
