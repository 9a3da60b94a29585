"""Gather/scatter array kernels with a numba fast path and a numpy fallback.

The graph encoder spends most of its time routing per-edge rows between node
and edge order (gather rows, scatter-add rows, segmented reductions).  Those
three primitives live here behind a backend switch:

* ``numba``: serial ``@njit`` loops, compiled once and cached on disk.
* ``numpy``: ``np.add.at`` / ``np.maximum.at`` based equivalents.

The backend is picked at import time from the ``RMNP_BACKEND`` environment
variable (default ``numba`` when importable, otherwise ``numpy``) and can be
changed at runtime with :func:`set_backend`; the bundled benchmark uses that
to time both paths on identical inputs.  All loops are serial so accumulation
order, and therefore floating-point output, is identical across runs and
backends.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        return wrap


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


@njit(cache=True)
def _scatter_add_rows_nb(out, index, rows):
    for i in range(index.shape[0]):
        j = index[i]
        for k in range(rows.shape[1]):
            out[j, k] += rows[i, k]


@njit(cache=True)
def _segment_sum_nb(out, values, segments):
    for i in range(segments.shape[0]):
        s = segments[i]
        for k in range(values.shape[1]):
            out[s, k] += values[i, k]


@njit(cache=True)
def _segment_max_nb(out, values, segments):
    for i in range(segments.shape[0]):
        s = segments[i]
        if values[i] > out[s]:
            out[s] = values[i]


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _scatter_add_rows_np(out, index, rows):
    np.add.at(out, index, rows)


def _segment_sum_np(out, values, segments):
    np.add.at(out, segments, values)


def _segment_max_np(out, values, segments):
    np.maximum.at(out, segments, values)


_IMPLS = {
    "numba": (_scatter_add_rows_nb, _segment_sum_nb, _segment_max_nb),
    "numpy": (_scatter_add_rows_np, _segment_sum_np, _segment_max_np),
}

_active = "numpy"


def available_backends() -> tuple[str, ...]:
    """Backends usable in this process."""
    return ("numba", "numpy") if _HAVE_NUMBA else ("numpy",)


def get_backend() -> str:
    """Name of the backend currently in use."""
    return _active


def set_backend(name: str) -> None:
    """Select the kernel backend.

    Args:
        name: ``"numba"`` or ``"numpy"``.

    Raises:
        ValueError: unknown backend name.
        RuntimeError: ``"numba"`` requested but numba is not importable.
    """
    global _active
    if name not in _IMPLS:
        raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    _active = name


def _as_index(index, n_rows: int) -> np.ndarray:
    index = np.ascontiguousarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ValueError("index must be one-dimensional")
    if index.size and (index.min() < 0 or index.max() >= n_rows):
        raise ValueError(f"index out of range [0, {n_rows})")
    return index


def scatter_add_rows(index: np.ndarray, rows: np.ndarray, n_out: int) -> np.ndarray:
    """Accumulate ``rows[i]`` into ``out[index[i]]``; duplicate indices add.

    Args:
        index: (E,) destination row per input row.
        rows: (E, d) values to accumulate.
        n_out: number of output rows.

    Returns:
        (n_out, d) array of sums, zero where no row lands.
    """
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if rows.ndim != 2:
        raise ValueError("rows must be two-dimensional")
    index = _as_index(index, n_out)
    if index.shape[0] != rows.shape[0]:
        raise ValueError("index and rows length mismatch")
    out = np.zeros((n_out, rows.shape[1]), dtype=np.float64)
    _IMPLS[_active][0](out, index, rows)
    return out


def segment_sum(values: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    """Sum (E, d) ``values`` into ``n_segments`` groups given by ``segments``."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("values must be two-dimensional")
    segments = _as_index(segments, n_segments)
    if segments.shape[0] != values.shape[0]:
        raise ValueError("segments and values length mismatch")
    out = np.zeros((n_segments, values.shape[1]), dtype=np.float64)
    _IMPLS[_active][1](out, values, segments)
    return out


def segment_max(values: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    """Per-segment maximum of a 1-D array; empty segments yield 0.0.

    The zero default keeps downstream ``exp(x - max)`` finite; callers here
    only ever reduce over non-empty segments (every node carries a self loop).
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise ValueError("values must be one-dimensional")
    segments = _as_index(segments, n_segments)
    if segments.shape[0] != values.shape[0]:
        raise ValueError("segments and values length mismatch")
    out = np.full(n_segments, -np.inf, dtype=np.float64)
    _IMPLS[_active][2](out, values, segments)
    out[np.isneginf(out)] = 0.0
    return out


def _initial_backend() -> str:
    requested = os.environ.get("RMNP_BACKEND", "numba").strip().lower()
    if requested not in _IMPLS:
        warnings.warn(
            f"RMNP_BACKEND={requested!r} not recognized; using numpy",
            RuntimeWarning,
            stacklevel=2,
        )
        return "numpy"
    if requested == "numba" and not _HAVE_NUMBA:
        if "RMNP_BACKEND" in os.environ:
            warnings.warn(
                "RMNP_BACKEND=numba but numba is unavailable; using numpy",
                RuntimeWarning,
                stacklevel=2,
            )
        return "numpy"
    return requested


_active = _initial_backend()
