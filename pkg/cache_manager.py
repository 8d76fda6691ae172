"""
cache_manager.py — Bounded in-memory memo for numerical building blocks
----------------------------------------------------------------------
Keeps quadrature rules and photon waiting-time tables around between
calls so repeated evaluations at the same settings skip the setup work.
"""

import functools
import hashlib
import json
import logging
import threading
from collections import OrderedDict
from typing import Any, Callable, Dict, Optional

import numpy as np

logger = logging.getLogger("coherence.cache")

# ============================================================
# CACHE CONFIGURATION
# ============================================================

MAX_CACHE_SIZE = 256  # entries; waiting-time tables are a few kB each


class NumericCache:
    """LRU cache with hit/miss accounting, safe to share between worker threads."""

    def __init__(self, max_size: int = MAX_CACHE_SIZE):
        if max_size < 1:
            raise ValueError("max_size must be >= 1")
        self._entries: "OrderedDict[str, Any]" = OrderedDict()
        self._max_size = max_size
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key: str) -> Optional[Any]:
        with self._lock:
            value = self._entries.get(key)
            if value is None:
                self.misses += 1
                return None
            self._entries.move_to_end(key)
            self.hits += 1
            return value

    def set(self, key: str, value: Any) -> None:
        with self._lock:
            self._entries[key] = value
            self._entries.move_to_end(key)
            while len(self._entries) > self._max_size:
                evicted, _ = self._entries.popitem(last=False)
                logger.debug(f"Cache evicted key: {evicted[:8]}...")

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            self.hits = 0
            self.misses = 0

    def size(self) -> int:
        with self._lock:
            return len(self._entries)

    @property
    def max_size(self) -> int:
        return self._max_size


# Global cache instance
_global_cache = NumericCache()


# ============================================================
# CACHE KEY GENERATION
# ============================================================

def _canonical(value: Any) -> Any:
    """Turn arguments into JSON-stable values (floats kept at full precision)."""
    if isinstance(value, np.ndarray):
        return {"ndarray": value.dtype.str, "shape": list(value.shape), "data": value.tobytes().hex()}
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _canonical(v) for k, v in sorted(value.items())}
    if hasattr(value, "__dataclass_fields__"):
        return {"type": type(value).__name__,
                "fields": {name: _canonical(getattr(value, name)) for name in value.__dataclass_fields__}}
    if hasattr(value, "value") and hasattr(value, "name"):  # Enum
        return _canonical(value.value)
    return value


def generate_cache_key(*args, **kwargs) -> str:
    """Generate a unique cache key from arguments."""
    key_data = {
        "args": _canonical(args),
        "kwargs": _canonical(kwargs),
    }
    key_str = json.dumps(key_data, sort_keys=True, default=repr)
    return hashlib.md5(key_str.encode()).hexdigest()


# ============================================================
# PUBLIC API
# ============================================================

def get_cached(key: str) -> Optional[Any]:
    value = _global_cache.get(key)
    if value is not None:
        logger.debug(f"Cache hit for key: {key[:8]}...")
    return value


def set_cached(key: str, value: Any) -> None:
    _global_cache.set(key, value)


def clear_cache() -> None:
    """Clear all cached data and reset the counters."""
    _global_cache.clear()
    logger.info("Numeric cache cleared")


def get_cache_stats() -> Dict[str, int]:
    return {
        "size": _global_cache.size(),
        "max_size": _global_cache.max_size,
        "hits": _global_cache.hits,
        "misses": _global_cache.misses,
    }


# ============================================================
# DECORATOR FOR CACHING FUNCTION RESULTS
# ============================================================

def memoize(func: Callable) -> Callable:
    """
    Cache a pure function's results in the global numeric cache.

    Returned arrays are shared between callers, so memoized functions
    must return read-only arrays.

    Example usage:
        @memoize
        def hermite_rule(n):
            return roots_hermite(n)
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        cache_key = generate_cache_key(func.__module__, func.__qualname__, *args, **kwargs)
        cached_value = get_cached(cache_key)
        if cached_value is not None:
            return cached_value
        result = func(*args, **kwargs)
        set_cached(cache_key, result)
        return result

    return wrapper
