"""Reproduce the full 60-run evaluation grid and print the summary.

The grid is six level situations under the SCL-only baseline plus all nine
combinations of fixed gain K in {0.3, 0.5, 0.7} and CCL threshold in
{0.3, 0.5, 0.7}.  Everything is seeded and deterministic; a second run
yields byte-identical output.
"""

import tempfile
import time
from pathlib import Path

from soclander.harness import GridSpec, run_grid

out = Path(tempfile.mkdtemp(prefix="soclander_grid_"))
t0 = time.perf_counter()
result = run_grid(GridSpec(), out_dir=out)
elapsed = time.perf_counter() - t0

print(result.summary)
print(f"(ran in {elapsed:.2f} s; per-run trace CSVs and summary files in {out})")
