import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from dotenv import load_dotenv

from hiertest.core.exception import ConfigError

load_dotenv()

T = TypeVar("T")
R = TypeVar("R")


def worker_count(requested: Optional[int] = None) -> int:
    """Threads to use: `requested`, capped by HIERTEST_THREADS when set."""
    raw = os.getenv("HIERTEST_THREADS")
    cap = None
    if raw:
        try:
            cap = int(raw)
        except ValueError as exc:
            raise ConfigError(f"HIERTEST_THREADS must be an integer, got {raw!r}", field="HIERTEST_THREADS") from exc
        if cap < 1:
            raise ConfigError("HIERTEST_THREADS must be at least 1", field="HIERTEST_THREADS")
    n = requested if requested is not None else (cap or os.cpu_count() or 1)
    return max(1, min(n, cap) if cap else n)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> List[R]:
    """Map in input order; results never depend on the worker count."""
    items = list(items)
    n = worker_count(workers)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
