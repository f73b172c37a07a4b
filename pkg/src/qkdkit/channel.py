"""Analytic fiber-channel model: loss, dark counts, gains and error rates.

Models a phase-coded weak-coherent-pulse system with an imperfect phase
modulator (shared relative error ``delta`` on both ends, so the effective
error in the parameter-estimation basis is ``3*delta/2``) and threshold
detectors with dark counts.  Double clicks are assigned a random bit.

The X-basis single-photon statistics are expressed through the conditional
yields of the virtual states, whose squared overlaps come from
:func:`qkdkit.qstate.virtual_amplitudes`; because channel loss multiplies
all of them uniformly, the single-photon phase error rate is independent of
distance whenever dark counts are negligible.

The helpers taking an explicit ``alpha`` argument are NumPy-vectorized over
it so the intensity optimizer can evaluate dense grids cheaply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .errors import UndefinedRateError, ValidationError
from .qstate import virtual_amplitudes

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class ChannelParams:
    """Physical parameters of the simulated link.

    Attributes:
        dark_count: dark count probability per detector per gate.
        det_eff: overall transmittance of Bob's detection apparatus, (0, 1].
        atten_db_per_km: fiber loss coefficient in dB/km.
        distance_km: channel length in km.
        delta: relative phase modulation error (>= 0).
        alpha: per-mode mean photon number of the coherent signal (> 0).
    """

    dark_count: float = 0.5e-7
    det_eff: float = 0.15
    atten_db_per_km: float = 0.21
    distance_km: float = 0.0
    delta: float = 0.0
    alpha: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 <= self.dark_count < 1.0):
            raise ValidationError(f"dark_count must be in [0, 1), got {self.dark_count!r}")
        if not (0.0 < self.det_eff <= 1.0):
            raise ValidationError(f"det_eff must be in (0, 1], got {self.det_eff!r}")
        if self.atten_db_per_km < 0.0:
            raise ValidationError("atten_db_per_km must be >= 0")
        if self.distance_km < 0.0:
            raise ValidationError("distance_km must be >= 0")
        # both ends modulate, so the virtual-state overlap formulas see
        # 3*delta/2, which must stay below pi
        if not (0.0 <= self.delta < 2.0 * math.pi / 3.0):
            raise ValidationError(f"delta must be in [0, 2*pi/3), got {self.delta!r}")
        if not (self.alpha > 0.0):
            raise ValidationError(f"alpha must be > 0, got {self.alpha!r}")

    def at(self, **kwargs) -> "ChannelParams":
        """Copy with some fields replaced."""
        return replace(self, **kwargs)


@dataclass(frozen=True)
class ZStats:
    """Gains and error rates entering the key-rate formula.

    ``q_z``/``e_z``: overall Z-basis gain and bit error rate.
    ``q_z1``/``e_x1``: single-photon gain and phase error rate.
    """

    q_z: float
    e_z: float
    q_z1: float
    e_x1: float

    def __post_init__(self) -> None:
        for name in ("q_z", "e_z", "q_z1", "e_x1"):
            value = getattr(self, name)
            if not (math.isfinite(value) and 0.0 <= value <= 1.0):
                raise ValidationError(f"{name} = {value!r} is not a probability")
        if self.q_z1 > self.q_z + 1e-12:
            raise ValidationError("single-photon gain exceeds the overall gain")


def total_loss(params: ChannelParams) -> float:
    """Total loss ``L = 1 - det_eff * 10^(-atten*distance/10)``, in [0, 1]."""
    transmittance = params.det_eff * 10.0 ** (
        -params.atten_db_per_km * params.distance_km / 10.0
    )
    return 1.0 - transmittance


def conditional_virtual_yields(params: ChannelParams) -> np.ndarray:
    """Conditional X-basis yields ``Y[s, j]`` of the two virtual states.

    A transmitted photon clicks detector ``s`` with probability
    ``C[s, j](3*delta/2)**2``; a dark count fires the empty detector with
    probability ``e_d``; double clicks are split evenly between the bits.
    """
    loss = total_loss(params)
    e_d = params.dark_count
    arrived = (1.0 - loss) * virtual_amplitudes(1.5 * params.delta) ** 2
    return arrived * (1.0 - e_d / 2.0) + e_d * (1.0 - e_d / 2.0) + arrived[::-1, :] * e_d


def virtual_priors(delta: float) -> np.ndarray:
    """Weights ``P(j_x) = [1 + (-1)^j sin(delta/2)]/2`` of the virtual states."""
    s = math.sin(delta / 2.0)
    return np.array([(1.0 + s) / 2.0, (1.0 - s) / 2.0])


def single_photon_gain(params: ChannelParams, alpha: ArrayLike | None = None) -> ArrayLike:
    """Single-photon Z-basis gain; vectorized over ``alpha``."""
    if alpha is None:
        alpha = params.alpha
    yields = conditional_virtual_yields(params)
    weighted = float((yields * virtual_priors(params.delta)[np.newaxis, :]).sum())
    return 0.5 * np.exp(-2.0 * alpha) * alpha * weighted


def single_photon_stats(params: ChannelParams) -> tuple[float, float]:
    """Return ``(Q_z1, e_x1)`` for the single-photon signal components."""
    yields = conditional_virtual_yields(params)
    denominator = float(yields.sum())
    if denominator <= 0.0:
        raise UndefinedRateError("no single-photon detections (total loss, no darks)")
    e_x1 = float(yields[1, 0] + yields[0, 1]) / denominator
    return float(single_photon_gain(params)), e_x1


def zbasis_click_probs(
    params: ChannelParams, alpha: ArrayLike | None = None
) -> tuple[ArrayLike, ArrayLike, ArrayLike, ArrayLike]:
    """Per-detector click probabilities ``(P00, P10, P01, P11)``.

    ``P[s|j]`` is the probability detector ``s`` fires when bit ``j`` was
    sent with intensity ``alpha``; vectorized over ``alpha``.
    """
    if alpha is None:
        alpha = params.alpha
    loss = total_loss(params)
    e_d = params.dark_count
    signal = alpha * (1.0 - loss)
    half = params.delta / 2.0
    p00 = e_d + (1.0 - e_d) * (1.0 - np.exp(-signal))
    p10 = e_d + np.zeros_like(np.asarray(alpha, dtype=float))
    p01 = e_d + (1.0 - e_d) * (1.0 - np.exp(-signal * math.sin(half) ** 2))
    p11 = e_d + (1.0 - e_d) * (1.0 - np.exp(-signal * math.cos(half) ** 2))
    if np.isscalar(alpha):
        return float(p00), float(p10), float(p01), float(p11)
    return p00, p10, p01, p11


def zbasis_gain_error_weight(
    params: ChannelParams, alpha: ArrayLike | None = None
) -> tuple[ArrayLike, ArrayLike]:
    """Overall gain ``Q_z`` and error weight ``w_z``; vectorized over ``alpha``.

    Per sent bit, the detection probability is the inclusive-or of the two
    detectors and the error weight counts wrong-detector-only clicks plus
    half of the double clicks (random assignment).
    """
    p00, p10, p01, p11 = zbasis_click_probs(params, alpha)
    gain = 0.5 * (p00 + p10 - p00 * p10) + 0.5 * (p01 + p11 - p01 * p11)
    weight = 0.5 * ((1.0 - p00) * p10 + 0.5 * p00 * p10) + 0.5 * (
        p01 * (1.0 - p11) + 0.5 * p01 * p11
    )
    return gain, weight


def zbasis_stats(params: ChannelParams) -> tuple[float, float]:
    """Return ``(Q_z, e_z)`` for the key basis."""
    gain, weight = zbasis_gain_error_weight(params)
    gain = float(gain)
    if gain <= 0.0:
        raise UndefinedRateError("Z-basis gain is zero; bit error rate undefined")
    return gain, float(weight) / gain


def channel_stats(params: ChannelParams) -> ZStats:
    """Assemble the full :class:`ZStats` record for one parameter point."""
    q_z, e_z = zbasis_stats(params)
    q_z1, e_x1 = single_photon_stats(params)
    return ZStats(q_z=q_z, e_z=e_z, q_z1=q_z1, e_x1=e_x1)
