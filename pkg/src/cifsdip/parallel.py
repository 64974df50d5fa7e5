"""Order-preserving job map over a process pool."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor


def map_jobs(fn, jobs, workers: int = 1) -> list:
    """Apply ``fn`` to every job; results come back in job order."""
    jobs = list(jobs)
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    workers = min(workers, len(jobs), os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))
