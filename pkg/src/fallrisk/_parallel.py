import os
from concurrent.futures import ThreadPoolExecutor


def default_threads():
    return os.cpu_count() or 1


def map_ordered(fn, items, threads=1):
    """``list(map(fn, items))``, optionally on a thread pool.

    Results always come back in input order, so reductions over them do not
    depend on the thread count.
    """
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
