"""Chunked data-parallel execution over 3D index space.

Work is partitioned into cubic blocks of ``chunk`` voxels per side (clipped at
volume borders). Workers receive contiguous runs of blocks and write disjoint
output regions, so results never depend on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

from .errors import ParameterError

Block = tuple[slice, slice, slice]

DEFAULT_CHUNK = 32


def iter_blocks(dims: Sequence[int], chunk: int) -> list[Block]:
    """Cubic blocks of side ``chunk`` covering ``dims``, in x-major order."""
    if chunk < 1:
        raise ParameterError(f"chunk must be >= 1, got {chunk}")
    nx, ny, nz = dims
    blocks = []
    for x0 in range(0, nx, chunk):
        sx = slice(x0, min(x0 + chunk, nx))
        for y0 in range(0, ny, chunk):
            sy = slice(y0, min(y0 + chunk, ny))
            for z0 in range(0, nz, chunk):
                blocks.append((sx, sy, slice(z0, min(z0 + chunk, nz))))
    return blocks


def run_blocks(blocks: Sequence[Block], fn: Callable[[Block], None], workers: int = 1) -> None:
    """Apply ``fn`` to every block, striping contiguous runs across ``workers`` threads."""
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")
    if workers == 1 or len(blocks) <= 1:
        for block in blocks:
            fn(block)
        return

    def run_stripe(stripe: Sequence[Block]) -> None:
        for block in stripe:
            fn(block)

    n = len(blocks)
    bounds = [n * i // workers for i in range(workers + 1)]
    stripes = [blocks[bounds[i] : bounds[i + 1]] for i in range(workers) if bounds[i] < bounds[i + 1]]
    with ThreadPoolExecutor(max_workers=len(stripes)) as pool:
        for future in [pool.submit(run_stripe, stripe) for stripe in stripes]:
            future.result()


def split_ranges(n: int, parts: int) -> list[tuple[int, int]]:
    """Split ``range(n)`` into at most ``parts`` contiguous non-empty intervals."""
    parts = max(1, min(parts, n)) if n > 0 else 1
    bounds = [n * i // parts for i in range(parts + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(parts) if bounds[i] < bounds[i + 1]]


def run_ranges(n: int, fn: Callable[[int, int], None], workers: int = 1) -> None:
    """Apply ``fn(start, stop)`` over a partition of ``range(n)`` into worker stripes."""
    if workers < 1:
        raise ParameterError(f"workers must be >= 1, got {workers}")
    ranges = split_ranges(n, workers)
    if workers == 1 or len(ranges) <= 1:
        for start, stop in ranges:
            fn(start, stop)
        return
    with ThreadPoolExecutor(max_workers=len(ranges)) as pool:
        for future in [pool.submit(fn, start, stop) for start, stop in ranges]:
            future.result()
