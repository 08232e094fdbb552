"""Small shared helpers: seeded RNG streams, deterministic parallel maps, output formatting."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, Sequence

import numpy as np


def derive_rng(base_seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for a named work item.

    Streams are keyed by (base_seed, *stream) through SeedSequence, so the
    draws for item i never depend on how many other items exist or on the
    order they are processed in.
    """
    return np.random.default_rng(np.random.SeedSequence([int(base_seed), *map(int, stream)]))


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Map fn over items, optionally on a thread pool, preserving order.

    Results are identical to [fn(x) for x in items] regardless of thread
    count; threads only help when fn releases the GIL (BLAS/LAPACK calls).
    """
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def fmt_float(x: float) -> str:
    """Shortest decimal string that round-trips a float64 exactly."""
    return f"{float(x):.17g}"


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], meta: dict | None = None) -> None:
    """Write a CSV with '# key=value' comment lines, LF endings, round-trip floats."""
    with open(path, "w", newline="\n") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fields = [fmt_float(v) if isinstance(v, (float, np.floating)) else str(v) for v in row]
            fh.write(",".join(fields) + "\n")


def write_json(path, obj: dict, meta: dict | None = None) -> None:
    """Write JSON with sorted keys and a _meta block, deterministically."""
    payload = dict(obj)
    if meta:
        payload["_meta"] = dict(meta)
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x: Any):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)!r}")


def weighted_quantile(values: np.ndarray, weights: np.ndarray, p) -> np.ndarray | float:
    """Quantile of a weighted sample, midpoint convention.

    Sorts by value, places each atom at its cumulative-weight midpoint and
    interpolates linearly between atoms; reduces to the usual linear sample
    quantile for equal weights as the sample grows.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape or values.ndim != 1 or values.size == 0:
        raise ValueError("values and weights must be matching non-empty 1-d arrays")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and non-negative")
    total = weights.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    order = np.argsort(values, kind="stable")
    v = values[order]
    w = weights[order] / total
    mid = np.cumsum(w) - 0.5 * w
    return np.interp(p, mid, v, left=v[0], right=v[-1])
