"""
utils_parallel.py - run independent rollouts on a bounded thread pool.

The pool size comes from DBGNN_THREADS. Results keep the input order, so
outputs do not depend on the thread count.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

# Import functions from local modules
from utils.utils_config import get_threads
from utils.utils_logger import logger

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(
    fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None
) -> list[R]:
    """Ordered map; the first exception raised by fn propagates."""
    items = list(items)
    workers = min(threads or get_threads(), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    logger.debug(f"Running {len(items)} tasks on {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
