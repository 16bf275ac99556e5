"""Input checks shared by the estimator wrappers."""

from __future__ import annotations

import numbers

import numpy as np

from .simkit import PilotMatrix, ReceivedSignals


def check_signals(y) -> ReceivedSignals:
    """Accept a ``ReceivedSignals`` or a complex ``(K, L, M)`` array."""
    if isinstance(y, ReceivedSignals):
        return y
    arr = np.asarray(y)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected signals of shape (K, L, M), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.number):
        raise TypeError("signals must be numeric")
    if not np.all(np.isfinite(arr)):
        raise ValueError("signals contain NaN or infinity")
    return ReceivedSignals(y=arr.astype(complex))


def check_pilots(s) -> PilotMatrix:
    """Accept a ``PilotMatrix`` or a complex ``(L, N)`` array."""
    if isinstance(s, PilotMatrix):
        return s
    if s is None:
        raise ValueError("pilots must be provided")
    arr = np.asarray(s)
    if arr.ndim != 2 or not np.all(np.isfinite(arr)):
        raise ValueError("pilots must be a finite (L, N) array")
    return PilotMatrix(arr.astype(complex))


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_positive_float(value, name: str, allow_none: bool = False):
    if value is None and allow_none:
        return None
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_consistent(signals: ReceivedSignals, pilots: PilotMatrix) -> None:
    if signals.L != pilots.L:
        raise ValueError(f"signals have {signals.L} pilot symbols but pilots have {pilots.L}")
