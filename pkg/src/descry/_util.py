"""Internal helpers: seed derivation, deterministic parallel map, formatting."""

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np


def derive_seed(seed, *parts):
    """Stable 63-bit seed derived by hashing (seed, *parts).

    Guarantees identical per-task seeds regardless of execution order or
    parallelism degree.
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(repr(int(seed)).encode())
    for p in parts:
        h.update(b"/")
        h.update(repr(p).encode())
    return int.from_bytes(h.digest(), "big") & (2**63 - 1)


def rng_for(seed, *parts):
    return np.random.default_rng(derive_seed(seed, *parts))


def thread_cap():
    """Parallelism cap from DESCRY_THREADS (default 1: sequential)."""
    raw = os.environ.get("DESCRY_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def parallel_map(fn, items):
    """Map fn over items, optionally threaded, with order-stable results.

    Results are written by index, so the output is independent of the
    parallelism degree. Workers must be pure given their item.
    """
    items = list(items)
    cap = min(thread_cap(), len(items)) if items else 1
    if cap <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    out = [None] * len(items)

    def run(i):
        out[i] = fn(items[i])

    with ThreadPoolExecutor(max_workers=cap) as ex:
        list(ex.map(run, range(len(items))))
    return out


def fmt_number(x):
    """Shortest round-trip decimal for floats; plain digits for integrals."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    f = float(x)
    if f == int(f) and abs(f) < 1e16:
        return str(int(f))
    return repr(f)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None   # strict JSON has no NaN/inf
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def canonical_json(obj):
    """Deterministic JSON text: sorted keys, shortest round-trip floats,
    non-finite numbers as null."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(obj))
        fh.write("\n")
