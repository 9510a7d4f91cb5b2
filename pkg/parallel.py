# parallel.py
from concurrent.futures import ThreadPoolExecutor

from config import Config


def row_tiles(height, tile_rows=None):
    """Fixed row bands; the split never depends on the worker count"""
    tile_rows = tile_rows or Config.TILE_ROWS
    return [(r0, min(r0 + tile_rows, height)) for r0 in range(0, height, tile_rows)]


def parallel_map(fn, items, workers=None):
    """Ordered map over items with a thread pool (numpy releases the GIL)"""
    workers = workers or Config.WORKERS
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
