"""Rewrite the frozen traces after an intentional change to the dynamics.

    python3 tests/golden/regenerate.py
"""

import gzip
import warnings
from pathlib import Path

from lqm.engine import run
from lqm.io import trace_to_csv
from lqm.network import CflWarning
from lqm.scenarios import BUILTINS

HERE = Path(__file__).parent

if __name__ == "__main__":
    warnings.simplefilter("ignore", CflWarning)
    for name, factory in sorted(BUILTINS.items()):
        text = trace_to_csv(run(factory()))
        # mtime=0 keeps the archive bytes stable across regenerations
        with gzip.GzipFile(HERE / f"{name}.csv.gz", "wb", mtime=0) as fh:
            fh.write(text.encode())
        print(name, len(text.splitlines()) - 2, "rows")
