"""
Script to append the tables of finished run directories to the results
archive database (SQLite by default, any SQLAlchemy URL otherwise).

    python archive_runs.py outputs/ [--url sqlite:///outputs/archive.db]
"""

import argparse
import sys

try:
    from sqlalchemy.exc import SQLAlchemyError

    from fnlab.archive import archive_run, archive_url
except ImportError as e:
    print(f"Import Error: {e}")
    print("Please ensure 'sqlalchemy' is installed: pip install -r requirements.txt")
    sys.exit(1)


def load_runs_to_db(run_dirs, url=None):
    """Archives each run directory; returns the number that failed."""
    url = archive_url(url)
    print(f"Archiving {len(run_dirs)} run(s) into '{url}'...")
    failures = 0
    for run_dir in run_dirs:
        try:
            written = archive_run(run_dir, url)
        except FileNotFoundError as e:
            print(f"Error: {e}")
            failures += 1
            continue
        except (SQLAlchemyError, ConnectionError) as e:
            print(f"Error during database write for '{run_dir}': {e}")
            failures += 1
            continue
        for table, count in written.items():
            print(f"  ...{count} rows into '{table}'")
    print("\nArchive complete!" if not failures else f"\n{failures} run(s) could not be archived.")
    return failures


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Append run tables to the results archive")
    parser.add_argument("run_dirs", nargs="+")
    parser.add_argument("--url", help="SQLAlchemy URL (default: $FNL_ARCHIVE_URL or sqlite:///outputs/archive.db)")
    args = parser.parse_args()
    sys.exit(1 if load_runs_to_db(args.run_dirs, args.url) else 0)
