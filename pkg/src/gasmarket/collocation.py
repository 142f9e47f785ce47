"""Uniform circular time grid, quadrature and forward-difference operator."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class CollocationGrid:
    horizon: float
    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ValueError(f"need at least 2 collocation points, got {self.n_points}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def spacing(self) -> float:
        return self.horizon / self.n_points

    @property
    def points(self) -> np.ndarray:
        return self.horizon * np.arange(self.n_points) / self.n_points

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_points, self.spacing)


def build_grid(horizon: float, n_points: int) -> CollocationGrid:
    return CollocationGrid(float(horizon), int(n_points))


def diff_matrix(grid: CollocationGrid) -> sp.csr_matrix:
    """Circular forward difference: (y[k+1] - y[k]) * N/T with y[N] == y[0]."""
    n = grid.n_points
    c = n / grid.horizon
    k = np.arange(n)
    rows = np.concatenate([k, k])
    cols = np.concatenate([k, (k + 1) % n])
    data = np.concatenate([np.full(n, -c), np.full(n, c)])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def interpolate(values, grid: CollocationGrid, t):
    """Piecewise-linear circular interpolant of grid values (last axis = time)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(t >= grid.horizon):
        raise ValueError("interpolation time outside [0, T)")
    values = np.asarray(values, dtype=float)
    n = grid.n_points
    pos = t / grid.spacing
    k = np.minimum(np.floor(pos).astype(int), n - 1)
    frac = pos - k
    return values[..., k] + (values[..., (k + 1) % n] - values[..., k]) * frac


def periodic_interpolator(values, grid: CollocationGrid) -> Callable:
    """Callable interpolant accepting any real time, wrapped onto the circle."""
    def f(t):
        return interpolate(values, grid, np.mod(t, grid.horizon))
    return f


def sample_hourly(series, times, hour_length: float):
    """Left-constant lookup of block-wise (hourly) data at the given times.

    ``series`` is a scalar or an array whose last axis indexes hours.
    """
    series = np.asarray(series, dtype=float)
    times = np.asarray(times, dtype=float)
    if series.ndim == 0:
        return np.full(times.shape, float(series))
    nh = series.shape[-1]
    idx = np.floor(times / hour_length + 1e-9).astype(int)
    if np.any(idx < 0) or np.any(idx >= nh):
        raise ValueError("sample time outside the data horizon")
    return series[..., idx]


def extend_horizon(h: Callable, horizon: float, tau: float) -> Callable:
    """Periodic extension of ``h`` from [0, T] onto [0, T + tau].

    On [T, T + tau] the result ramps linearly from ``h(T)`` back to ``h(0)``;
    on [0, T] it equals ``h``.
    """
    if not tau > 0:
        raise ValueError("extension length must be positive")
    h0 = np.asarray(h(0.0), dtype=float)
    hT = np.asarray(h(horizon), dtype=float)

    def ext(t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            if t <= horizon:
                return h(float(t))
            return hT + (h0 - hT) * (t - horizon) / tau
        return np.stack([np.asarray(ext(float(s))) for s in t], axis=-1)

    return ext


def extended_hourly(series, times, horizon: float, tau: float, hour_length: float):
    """Hourly block data sampled on ``times``, linearly closed over [T, T + tau].

    The value at T is taken as the last block's value.
    """
    series = np.asarray(series, dtype=float)
    times = np.asarray(times, dtype=float)
    if series.ndim == 0:
        return np.full(times.shape, float(series))
    inside = times < horizon - 1e-9 * max(horizon, 1.0)
    out = np.empty(series.shape[:-1] + times.shape)
    out[..., inside] = sample_hourly(series, times[inside], hour_length)
    if np.any(~inside):
        te = times[~inside]
        h0, hT = series[..., :1], series[..., -1:]
        with np.errstate(invalid="ignore"):
            ramp = hT + (h0 - hT) * (te - horizon) / tau
        # unbounded limits stay unbounded on the ramp
        out[..., ~inside] = np.where(h0 == hT, h0, ramp)
    return out
