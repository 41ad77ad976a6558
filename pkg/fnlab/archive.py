"""
Loads finished run tables into a SQL database for later comparison.
"""

import logging
import os
import re
import time

import pandas as pd
from sqlalchemy import create_engine, text
from sqlalchemy.engine import Engine
from sqlalchemy.exc import OperationalError

from .reports import RunManifest, manifest_frame, run_tables

logger = logging.getLogger(__name__)

DEFAULT_ARCHIVE_URL = "sqlite:///outputs/archive.db"
ARCHIVE_URL_ENV = "FNL_ARCHIVE_URL"
MANIFEST_TABLE = "runs"
# Common identifier limit (64) minus room for a "_10" suffix
MAX_COL_LENGTH = 61


def archive_url(url: str | None = None) -> str:
    return url or os.environ.get(ARCHIVE_URL_ENV) or DEFAULT_ARCHIVE_URL


def wait_for_db(engine: Engine, retries: int = 5, wait_time: float = 2.0) -> bool:
    """Retries a trivial query until the database answers."""
    for i in range(retries):
        try:
            with engine.connect() as conn:
                conn.execute(text("SELECT 1"))
            return True
        except OperationalError:
            logger.warning("Database not ready, retrying in %gs (%d/%d)", wait_time, i + 1, retries)
            time.sleep(wait_time)
    return False


def clean_columns(cols) -> list[str]:
    """Lowercase identifiers with runs of other characters collapsed to '_', truncated."""
    cleaned = []
    for col in cols:
        name = re.sub(r"[^0-9a-z_]+", "_", str(col).lower()).strip("_") or "col"
        cleaned.append(name[:MAX_COL_LENGTH])
    return cleaned


def deduplicate_columns(df: pd.DataFrame) -> pd.DataFrame:
    """['a', 'a'] -> ['a', 'a_1']."""
    new_cols, counts = [], {}
    for col in df.columns:
        seen = counts.get(col, 0)
        new_cols.append(f"{col}_{seen}" if seen else col)
        counts[col] = seen + 1
    df.columns = new_cols
    return df


def table_name(stem: str) -> str:
    return clean_columns([stem])[0]


def archive_run(folder: str, url: str | None = None) -> dict[str, int]:
    """
    Appends every table of a run, tagged with the run's config hash and seed,
    plus one manifest row.

    Returns:
        Row counts per table written.
    """
    url = archive_url(url)
    if url.startswith("sqlite:///"):
        db_dir = os.path.dirname(url[len("sqlite:///"):])
        if db_dir:
            os.makedirs(db_dir, exist_ok=True)
    engine = create_engine(url)
    if not wait_for_db(engine):
        raise ConnectionError(f"could not reach the archive database at {url}")

    manifest = RunManifest.read(folder)
    written = {}
    for stem, df in run_tables(folder).items():
        df = df.copy()
        df.insert(0, "config_sha256", manifest.config_sha256)
        df.insert(1, "seed", manifest.seed)
        df.columns = clean_columns(df.columns)
        df = deduplicate_columns(df)
        name = table_name(f"{manifest.subcommand}_{stem}")
        df.to_sql(name, engine, if_exists="append", index=False)
        written[name] = len(df)
        logger.info("Archived %d rows into %s", len(df), name)

    meta = manifest_frame(manifest).set_index("field").T.reset_index(drop=True)
    meta.columns = clean_columns(meta.columns)
    meta.to_sql(MANIFEST_TABLE, engine, if_exists="append", index=False)
    written[MANIFEST_TABLE] = 1
    return written
