"""Time standardization and Legendre design matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class RangeViolationError(ValueError):
    """A raw measurement time falls outside the standardization range."""


class InvalidOrderError(ValueError):
    """Requested basis order is not a positive integer."""


@dataclass(frozen=True)
class TimeGrid:
    """One subject's measurement times, raw and mapped onto [-1, 1]."""

    raw_times: np.ndarray
    standardized_times: np.ndarray
    range: tuple[float, float]

    def __len__(self) -> int:
        return len(self.raw_times)

    @property
    def gaps(self) -> np.ndarray:
        """Spacing between consecutive standardized times."""
        return np.diff(self.standardized_times)

    def to_raw(self, s) -> np.ndarray:
        t_min, t_max = self.range
        return (np.asarray(s, dtype=float) + 1.0) * (t_max - t_min) / 2.0 + t_min


@dataclass(frozen=True)
class LegendreBasis:
    order: int
    matrix: np.ndarray


def standardize_times(raw, range: tuple[float, float], subject=None) -> TimeGrid:
    """Map raw times affinely onto [-1, 1] using a shared ``(t_min, t_max)``.

    ``subject`` is only used to label errors.
    """
    t_min, t_max = float(range[0]), float(range[1])
    if not t_min < t_max:
        raise ValueError(f"invalid time range ({t_min}, {t_max}): need t_min < t_max")
    raw = np.asarray(raw, dtype=float).reshape(-1)
    who = "" if subject is None else f"subject {subject}: "
    bad = (raw < t_min) | (raw > t_max) | ~np.isfinite(raw)
    if np.any(bad):
        value = raw[np.argmax(bad)]
        raise RangeViolationError(f"{who}time {value!r} outside range [{t_min}, {t_max}]")
    if np.any(np.diff(raw) <= 0):
        raise ValueError(f"{who}times must be strictly increasing")
    s = 2.0 * (raw - t_min) / (t_max - t_min) - 1.0
    # guard against 1 ulp overshoot at the endpoints
    s = np.clip(s, -1.0, 1.0)
    return TimeGrid(raw_times=raw, standardized_times=s, range=(t_min, t_max))


def legendre_values(s, order: int) -> np.ndarray:
    """Evaluate P_0..P_{order-1} at standardized times ``s``.

    Returns an array of shape ``(len(s), order)``. Degrees up to 3 use the
    closed forms, higher degrees the Bonnet recursion
    ``(k+1) P_{k+1} = (2k+1) s P_k - k P_{k-1}``.
    """
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)) or order < 1:
        raise InvalidOrderError(f"basis order must be an integer >= 1, got {order!r}")
    s = np.asarray(s, dtype=float).reshape(-1)
    out = np.empty((s.shape[0], order))
    out[:, 0] = 1.0
    if order > 1:
        out[:, 1] = s
    if order > 2:
        out[:, 2] = 0.5 * (3.0 * s**2 - 1.0)
    if order > 3:
        out[:, 3] = 0.5 * (5.0 * s**3 - 3.0 * s)
    for k in range(3, order - 1):
        out[:, k + 1] = ((2 * k + 1) * s * out[:, k] - k * out[:, k - 1]) / (k + 1)
    return out


def legendre_design(grid: TimeGrid, order: int) -> LegendreBasis:
    return LegendreBasis(order=int(order), matrix=legendre_values(grid.standardized_times, order))
