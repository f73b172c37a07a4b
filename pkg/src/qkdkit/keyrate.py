"""Binary entropy, asymptotic secret key rate, intensity optimization, sweeps.

The rate per pulse is

    R = max(0, 1/2 * (Q_z1 * (1 - h(e_x1)) - f_ec * Q_z * h(e_z)))

where ``f_ec >= 1`` multiplies the error-correction term (``f_ec = 1``
recovers the bare formula).  The signal intensity is optimized per distance
with a deterministic coarse log-grid scan followed by golden-section
refinement, so repeated sweeps are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import xlogy

from .channel import (
    ChannelParams,
    ZStats,
    channel_stats,
    conditional_virtual_yields,
    single_photon_gain,
    zbasis_gain_error_weight,
)
from .errors import ValidationError

_LN2 = math.log(2.0)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

DEFAULT_F_EC = 1.22
DEFAULT_ALPHA_BOUNDS = (1e-4, 1.0)
DEFAULT_ALPHA_TOL = 1e-4
COARSE_GRID_POINTS = 64


def binary_entropy(x):
    """Binary Shannon entropy ``h(x)`` in bits; ``h(0) = h(1) = 0`` exactly.

    Accepts scalars or arrays in [0, 1].
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValidationError("binary_entropy argument must lie in [0, 1]")
    h = -(xlogy(arr, arr) + xlogy(1.0 - arr, 1.0 - arr)) / _LN2
    if np.isscalar(x) or arr.ndim == 0:
        return float(h)
    return h


def secret_key_rate(stats: ZStats, f_ec: float = DEFAULT_F_EC) -> float:
    """Asymptotic secret key rate per pulse, clamped at zero."""
    if f_ec < 1.0:
        raise ValidationError(f"error-correction efficiency must be >= 1, got {f_ec!r}")
    rate = 0.5 * (
        stats.q_z1 * (1.0 - binary_entropy(stats.e_x1))
        - f_ec * stats.q_z * binary_entropy(stats.e_z)
    )
    return max(rate, 0.0)


def _rates_for_alphas(
    params: ChannelParams, alphas: np.ndarray, f_ec: float
) -> np.ndarray:
    """Vectorized key rate over intensities at fixed channel parameters."""
    yields = conditional_virtual_yields(params)
    denominator = float(yields.sum())
    if denominator <= 0.0:
        return np.zeros_like(alphas)
    e_x1 = float(yields[1, 0] + yields[0, 1]) / denominator
    pa_factor = 1.0 - binary_entropy(e_x1)
    q_z1 = single_photon_gain(params, alphas)
    gain, weight = zbasis_gain_error_weight(params, alphas)
    e_z = np.where(gain > 0.0, weight / np.where(gain > 0.0, gain, 1.0), 0.0)
    rate = 0.5 * (q_z1 * pa_factor - f_ec * gain * binary_entropy(e_z))
    return np.maximum(rate, 0.0)


@dataclass(frozen=True)
class OptimizeResult:
    """Best intensity found and the rate there."""

    alpha: float
    rate: float
    zero_rate: bool


def optimize_alpha(
    params: ChannelParams,
    bounds: tuple[float, float] = DEFAULT_ALPHA_BOUNDS,
    tol: float = DEFAULT_ALPHA_TOL,
    f_ec: float = DEFAULT_F_EC,
) -> OptimizeResult:
    """Maximize the key rate over the signal intensity.

    Scans a 64-point logarithmic grid over ``bounds``, then refines the
    bracketing interval around the grid argmax by golden-section search to a
    relative width of ``tol``.  The returned rate is never below any coarse
    grid value.  ``params.alpha`` is ignored.

    Returns:
        zero_rate is True when the rate is non-positive on the whole grid;
        the grid argmax is still reported as ``alpha``.
    """
    lo, hi = bounds
    if not (0.0 < lo < hi):
        raise ValidationError(f"bounds must satisfy 0 < lo < hi, got {bounds!r}")
    if tol <= 0.0:
        raise ValidationError("tol must be > 0")
    grid = np.geomspace(lo, hi, COARSE_GRID_POINTS)
    rates = _rates_for_alphas(params, grid, f_ec)
    best_idx = int(np.argmax(rates))
    if rates[best_idx] <= 0.0:
        return OptimizeResult(alpha=float(grid[best_idx]), rate=0.0, zero_rate=True)

    def rate_at(alpha: float) -> float:
        return float(_rates_for_alphas(params, np.array([alpha]), f_ec)[0])

    best_alpha = float(grid[best_idx])
    best_rate = float(rates[best_idx])
    a = float(grid[max(best_idx - 1, 0)])
    b = float(grid[min(best_idx + 1, COARSE_GRID_POINTS - 1)])
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = rate_at(c), rate_at(d)
    while (b - a) > tol * max(a, lo):
        if fc > best_rate:
            best_alpha, best_rate = c, fc
        if fd > best_rate:
            best_alpha, best_rate = d, fd
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = rate_at(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = rate_at(d)
    for alpha, rate in ((c, fc), (d, fd)):
        if rate > best_rate:
            best_alpha, best_rate = float(alpha), float(rate)
    return OptimizeResult(alpha=best_alpha, rate=best_rate, zero_rate=False)


@dataclass(frozen=True)
class RatePoint:
    """Per-distance sweep record."""

    distance_km: float
    alpha_opt: float
    q_z: float
    e_z: float
    q_z1: float
    e_x1: float
    rate: float

    def __post_init__(self) -> None:
        if self.rate < 0.0:
            raise ValidationError("rate must be clamped at zero")
        if not self.alpha_opt > 0.0:
            raise ValidationError("alpha_opt must be positive")
        for name in ("q_z", "e_z", "q_z1", "e_x1"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValidationError(f"{name} = {value!r} is not a probability")


def sweep(
    distances: Sequence[float],
    delta: float,
    params: ChannelParams,
    f_ec: float = DEFAULT_F_EC,
    bounds: tuple[float, float] = DEFAULT_ALPHA_BOUNDS,
    tol: float = DEFAULT_ALPHA_TOL,
    alpha: float | None = None,
) -> list[RatePoint]:
    """Evaluate the (optimized) key rate at each distance.

    Pointwise and deterministic: the output is independent of the ordering
    of ``distances``.  Passing ``alpha`` skips optimization and evaluates at
    that fixed intensity.
    """
    points = []
    for distance in distances:
        if distance < 0.0:
            raise ValidationError("distances must be non-negative")
        at_distance = params.at(distance_km=float(distance), delta=float(delta))
        if alpha is None:
            result = optimize_alpha(at_distance, bounds=bounds, tol=tol, f_ec=f_ec)
            alpha_opt, rate = result.alpha, result.rate
        else:
            alpha_opt = float(alpha)
            rate = float(_rates_for_alphas(at_distance, np.array([alpha_opt]), f_ec)[0])
        stats = channel_stats(at_distance.at(alpha=alpha_opt))
        points.append(
            RatePoint(
                distance_km=float(distance),
                alpha_opt=alpha_opt,
                q_z=stats.q_z,
                e_z=stats.e_z,
                q_z1=stats.q_z1,
                e_x1=stats.e_x1,
                rate=rate,
            )
        )
    return points
