"""Event-level i.i.d. protocol simulation against Kraus channels and POVMs.

The exact per-pulse outcome probabilities are plain traces, so
:func:`exact_yields` doubles as the brute-force oracle for every estimator
test.  :func:`run_protocol` samples those probabilities pulse by pulse with
a seeded PCG64 generator; sampling is chunked but the per-pulse draws are
independent, so counts are deterministic per seed.

Dark counts and double-click randomization are represented as an affine
mixing of the per-cell outcome probabilities (an :class:`OutcomeMixer`)
rather than extra Kraus operators; :func:`fiber_experiment` assembles the
sources/channel/POVM/mixer quadruple whose exact yields reproduce the
analytic fiber model term by term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import estimator
from .channel import ChannelParams, total_loss
from .errors import UndefinedRateError, ValidationError
from .estimator import YieldTable
from .qstate import (
    ID2,
    QubitState,
    SourceSet,
    _KETS,
    three_state_sources,
)

DEFAULT_BASIS_PROBS = {"x": 0.5, "z": 0.5}
_CHUNK = 1 << 20
_OUTCOMES = (0, 1, "f")


@dataclass(frozen=True)
class KrausChannel:
    """A (possibly trace-decreasing) qubit channel ``rho -> sum_k A rho A+``.

    The completeness deficit ``I - sum_k A+ A`` must be PSD; its weight is
    the probability the signal is lost before Bob's measurement.
    """

    operators: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        ops = tuple(np.asarray(op, dtype=complex) for op in self.operators)
        if not ops:
            raise ValidationError("channel needs at least one Kraus operator")
        for op in ops:
            if op.shape != (2, 2) or not np.all(np.isfinite(op)):
                raise ValidationError("Kraus operators must be finite 2x2 matrices")
            op.setflags(write=False)
        gram = sum(op.conj().T @ op for op in ops)
        if np.linalg.eigvalsh(gram).max() > 1.0 + 1e-10:
            raise ValidationError("channel is not trace-non-increasing")
        object.__setattr__(self, "operators", ops)

    def apply(self, state: QubitState) -> np.ndarray:
        """Sub-normalized output matrix; its trace is the arrival probability."""
        rho = state.density
        return sum(op @ rho @ op.conj().T for op in self.operators)

    def deficit(self) -> np.ndarray:
        return ID2 - sum(op.conj().T @ op for op in self.operators)

    def with_extra_loss(self, ell: float) -> "KrausChannel":
        """Compose with uniform loss: every outcome probability scales by 1-ell."""
        if not (0.0 <= ell < 1.0):
            raise ValidationError(f"loss fraction must be in [0, 1), got {ell!r}")
        factor = math.sqrt(1.0 - ell)
        return KrausChannel(tuple(factor * op for op in self.operators))


@dataclass(frozen=True)
class BobPovm:
    """Bob's two-basis measurement with a shared inconclusive element.

    Holding a single ``m_f`` makes the basis-independent-efficiency
    assumption true by construction.
    """

    x: tuple[np.ndarray, np.ndarray]
    z: tuple[np.ndarray, np.ndarray]
    m_f: np.ndarray

    def __post_init__(self) -> None:
        m_f = np.asarray(self.m_f, dtype=complex)
        elements = {"x": self.x, "z": self.z}
        for basis, (m0, m1) in elements.items():
            m0 = np.asarray(m0, dtype=complex)
            m1 = np.asarray(m1, dtype=complex)
            for name, op in (("m0", m0), ("m1", m1), ("m_f", m_f)):
                if op.shape != (2, 2):
                    raise ValidationError(f"{name} must be 2x2")
                if np.linalg.eigvalsh((op + op.conj().T) / 2.0).min() < -1e-10:
                    raise ValidationError(f"{name} is not positive semidefinite")
            if np.abs(m0 + m1 + m_f - ID2).max() > 1e-10:
                raise ValidationError(f"basis {basis!r} elements do not sum to identity")
        object.__setattr__(self, "x", (np.array(self.x[0]), np.array(self.x[1])))
        object.__setattr__(self, "z", (np.array(self.z[0]), np.array(self.z[1])))
        object.__setattr__(self, "m_f", np.array(m_f))

    def elements(self, basis: str) -> tuple[np.ndarray, np.ndarray]:
        if basis == "x":
            return self.x
        if basis == "z":
            return self.z
        raise ValidationError(f"unknown basis {basis!r}")


@dataclass(frozen=True)
class OutcomeMixer:
    """Affine map on per-cell outcome probabilities ``(p0, p1, p_f)``.

    Columns sum to one, so total probability is conserved; entries may be
    slightly negative only through the documented dark-count redistribution.
    """

    matrix: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.shape != (3, 3):
            raise ValidationError("mixer must be 3x3")
        if np.abs(matrix.sum(axis=0) - 1.0).max() > 1e-12:
            raise ValidationError("mixer columns must sum to 1")
        matrix = np.array(matrix)
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    def apply(self, probs: np.ndarray) -> np.ndarray:
        return self.matrix @ probs


def dark_count_mixer(e_d: float) -> OutcomeMixer:
    """Dark-count/double-click mixing of the conclusive outcome probabilities.

    Mixed(p_s) = p_s*(1 - e_d/2) + e_d*(1 - e_d/2) + p_{s^1}*e_d, with the
    constant distributed over (p0, p1, pf) using p0 + p1 + pf = 1.
    """
    if not (0.0 <= e_d < 1.0):
        raise ValidationError(f"dark count rate must be in [0, 1), got {e_d!r}")
    keep = (1.0 - e_d / 2.0) * (1.0 + e_d)
    cross = e_d * (2.0 - e_d / 2.0)
    from_f = e_d * (1.0 - e_d / 2.0)
    matrix = np.array(
        [
            [keep, cross, from_f],
            [cross, keep, from_f],
            [1.0 - keep - cross, 1.0 - keep - cross, 1.0 - 2.0 * from_f],
        ]
    )
    return OutcomeMixer(matrix=matrix)


@dataclass(frozen=True)
class TrialRecord:
    """Counts of one finite protocol run, keyed ``(label, basis, outcome)``."""

    counts: Mapping[tuple[str, str, object], int]
    n_pulses: int
    rng_seed: int

    def __post_init__(self) -> None:
        counts = dict(self.counts)
        if any(c < 0 for c in counts.values()):
            raise ValidationError("counts must be non-negative")
        if sum(counts.values()) != self.n_pulses:
            raise ValidationError("counts must sum to n_pulses")
        object.__setattr__(self, "counts", counts)


@dataclass(frozen=True)
class TrialEstimate:
    """Phase-error estimate from one trial with its first-order standard error."""

    e_x: float
    std_err: float


def _random_unitary(rng: np.random.Generator) -> np.ndarray:
    raw = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    q, r = np.linalg.qr(raw)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_channel(seed: int) -> KrausChannel:
    """Seeded random qubit channel with loss weight up to 0.9."""
    rng = np.random.default_rng(seed)
    n_ops = int(rng.integers(1, 5))
    ops = [rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2)) for _ in range(n_ops)]
    loss = float(rng.uniform(0.0, 0.9))
    gram = sum(op.conj().T @ op for op in ops)
    top = np.linalg.eigvalsh(gram).max()
    scale = math.sqrt((1.0 - loss) / top)
    return KrausChannel(tuple(scale * op for op in ops))


def random_povm(seed: int, max_inconclusive: float = 0.8) -> BobPovm:
    """Seeded random two-basis POVM with a shared inconclusive element.

    The inconclusive element is drawn first; the remainder is split between
    the two outcomes of each basis by a randomly rotated projective split,
    so completeness and basis independence hold by construction.
    """
    rng = np.random.default_rng(seed)
    u = _random_unitary(rng)
    m_f = u @ np.diag(rng.uniform(0.0, max_inconclusive, size=2)) @ u.conj().T
    evals, evecs = np.linalg.eigh(ID2 - m_f)
    root = evecs @ np.diag(np.sqrt(np.clip(evals, 0.0, None))) @ evecs.conj().T
    elements = {}
    for basis in ("x", "z"):
        ub = _random_unitary(rng)
        split = ub @ np.diag([1.0, 0.0]) @ ub.conj().T
        elements[basis] = (root @ split @ root, root @ (ID2 - split) @ root)
    return BobPovm(x=elements["x"], z=elements["z"], m_f=m_f)


def _cell_probs(
    sources: SourceSet,
    channel: KrausChannel,
    povm: BobPovm,
    mixer: OutcomeMixer | None,
) -> dict[tuple[str, str], np.ndarray]:
    """Conditional outcome probabilities ``(p0, p1, pf)`` per (label, basis)."""
    probs = {}
    for label, state, _ in sources.entries:
        evolved = channel.apply(state)
        for basis in ("x", "z"):
            m0, m1 = povm.elements(basis)
            p0 = float(np.trace(evolved @ m0).real)
            p1 = float(np.trace(evolved @ m1).real)
            cell = np.array([p0, p1, 1.0 - p0 - p1])
            if mixer is not None:
                cell = mixer.apply(cell)
            probs[label, basis] = cell
    return probs


def exact_yields(
    sources: SourceSet,
    channel: KrausChannel,
    povm: BobPovm,
    basis_probs: Mapping[str, float] | None = None,
    mixer: OutcomeMixer | None = None,
) -> YieldTable:
    """Exact joint yields ``P(label) P(basis) Tr(channel(rho) M)``.

    Machine-precision; the oracle every estimator test is checked against.
    An optional mixer post-composes the conclusive-outcome probabilities.
    """
    basis_probs = dict(DEFAULT_BASIS_PROBS if basis_probs is None else basis_probs)
    cells = _cell_probs(sources, channel, povm, mixer)
    yields = {}
    for label, _, prior in sources.entries:
        for basis, bp in basis_probs.items():
            cell = cells[label, basis]
            for outcome in (0, 1):
                yields[basis, outcome, label] = prior * bp * float(cell[outcome])
    priors = {label: prior for label, _, prior in sources.entries}
    return YieldTable(yields, priors, basis_probs)


def run_protocol(
    n_pulses: int,
    sources: SourceSet,
    channel: KrausChannel,
    povm: BobPovm,
    seed: int,
    basis_probs: Mapping[str, float] | None = None,
    mixer: OutcomeMixer | None = None,
) -> TrialRecord:
    """Sample ``n_pulses`` i.i.d. protocol rounds.

    Each pulse draws Alice's label from the priors, Bob's basis, then the
    outcome from the exact per-cell probabilities.  Deterministic per seed.
    """
    if n_pulses < 1:
        raise ValidationError(f"n_pulses must be >= 1, got {n_pulses!r}")
    basis_probs = dict(DEFAULT_BASIS_PROBS if basis_probs is None else basis_probs)
    bases = sorted(basis_probs)
    labels = list(sources.labels)
    prior_cdf = np.cumsum([sources.prior(label) for label in labels])
    basis_cdf = np.cumsum([basis_probs[b] for b in bases])
    if abs(basis_cdf[-1] - 1.0) > 1e-12:
        raise ValidationError("basis probabilities must sum to 1")

    cells = _cell_probs(sources, channel, povm, mixer)
    outcome_cdf = np.empty((len(labels) * len(bases), 3))
    for i, label in enumerate(labels):
        for k, basis in enumerate(bases):
            cell = np.clip(cells[label, basis], 0.0, None)
            outcome_cdf[i * len(bases) + k] = np.cumsum(cell / cell.sum())

    rng = np.random.default_rng(seed)
    totals = np.zeros(len(labels) * len(bases) * 3, dtype=np.int64)
    remaining = n_pulses
    while remaining > 0:
        m = min(remaining, _CHUNK)
        remaining -= m
        label_idx = np.searchsorted(prior_cdf, rng.random(m), side="right")
        basis_idx = np.searchsorted(basis_cdf, rng.random(m), side="right")
        cell_idx = label_idx * len(bases) + basis_idx
        draws = rng.random(m)
        outcome_idx = (draws[:, None] > outcome_cdf[cell_idx, :2]).sum(axis=1)
        totals += np.bincount(cell_idx * 3 + outcome_idx, minlength=totals.size)

    counts = {}
    for i, label in enumerate(labels):
        for k, basis in enumerate(bases):
            for o, outcome in enumerate(_OUTCOMES):
                counts[label, basis, outcome] = int(totals[(i * len(bases) + k) * 3 + o])
    return TrialRecord(counts=counts, n_pulses=n_pulses, rng_seed=seed)


def empirical_yields(
    trial: TrialRecord,
    sources: SourceSet,
    basis_probs: Mapping[str, float] | None = None,
) -> YieldTable:
    """Empirical joint yield table (count fractions) of a trial.

    Consistency checks get a ~6-sigma statistical slack.
    """
    basis_probs = dict(DEFAULT_BASIS_PROBS if basis_probs is None else basis_probs)
    n = trial.n_pulses
    yields = {}
    for (label, basis, outcome), count in trial.counts.items():
        if outcome == "f":
            continue
        yields[basis, outcome, label] = count / n
    priors = {label: sources.prior(label) for label in sources.labels}
    slack = 6.0 * math.sqrt(0.25 / n) + 1e-9
    return YieldTable(yields, priors, basis_probs, consistency_tol=slack)


# Yield-table cells entering the closed-form three-state estimate, with their
# coefficients in the numerator and denominator of the error ratio.
_EX_CELLS = (
    (("x", 0, "0z"), 1.0, 1.0),
    (("x", 0, "1z"), 1.0, 1.0),
    (("x", 0, "0x"), -1.0, 0.0),
    (("x", 1, "0z"), 0.0, 1.0),
    (("x", 1, "1z"), 0.0, 1.0),
    (("x", 1, "0x"), 1.0, 0.0),
)


def estimate_from_trial(
    trial: TrialRecord,
    sources: SourceSet,
    basis_probs: Mapping[str, float] | None = None,
) -> TrialEstimate:
    """Three-state phase-error estimate from counts, with a delta-method error.

    Negative predicted virtual yields are clamped to zero at this layer (the
    exact-arithmetic estimator stays strict); the standard error propagates
    the multinomial covariance of the count fractions through the ratio.
    """
    table = empirical_yields(trial, sources, basis_probs)
    e_x = estimator.phase_error_three_state(table, negativity_tol=math.inf)

    n = trial.n_pulses
    fractions = np.array([table.get(*key) for key, _, _ in _EX_CELLS])
    num_coeff = np.array([a for _, a, _ in _EX_CELLS])
    den_coeff = np.array([d for _, _, d in _EX_CELLS])
    numerator = float(num_coeff @ fractions)
    denominator = float(den_coeff @ fractions)
    if denominator <= 0.0:
        raise UndefinedRateError("no X-basis detections in trial")
    grad = (num_coeff * denominator - numerator * den_coeff) / denominator**2
    cov = (np.diag(fractions) - np.outer(fractions, fractions)) / n
    variance = float(grad @ cov @ grad)
    return TrialEstimate(e_x=e_x, std_err=math.sqrt(max(variance, 0.0)))


@dataclass(frozen=True)
class FiberExperiment:
    """Sources, channel, POVM and mixer reproducing the analytic fiber model."""

    sources: SourceSet
    channel: KrausChannel
    povm: BobPovm
    mixer: OutcomeMixer


def fiber_experiment(params: ChannelParams) -> FiberExperiment:
    """Single-photon equivalent of the analytic fiber model.

    Perfect three-state sources, a uniform-loss channel, and an X
    measurement rotated in the X-Z plane so the arrival click probabilities
    equal the analytic virtual-yield coefficients (both modulation errors
    are attributed to the measurement side); dark counts enter through the
    outcome mixer.  With these pieces the closed-form three-state estimator
    applied to the observed counts converges to the analytic single-photon
    phase error rate.
    """
    loss = total_loss(params)
    channel = KrausChannel((math.sqrt(1.0 - loss) * ID2,))
    angle = 3.0 * params.delta / 8.0
    m0 = math.cos(angle) * _KETS["0x"] + math.sin(angle) * _KETS["1x"]
    m1 = -math.sin(angle) * _KETS["0x"] + math.cos(angle) * _KETS["1x"]
    povm = BobPovm(
        x=(np.outer(m0, m0.conj()), np.outer(m1, m1.conj())),
        z=(
            np.outer(_KETS["0z"], _KETS["0z"].conj()),
            np.outer(_KETS["1z"], _KETS["1z"].conj()),
        ),
        m_f=np.zeros((2, 2), dtype=complex),
    )
    return FiberExperiment(
        sources=three_state_sources(),
        channel=channel,
        povm=povm,
        mixer=dark_count_mixer(params.dark_count),
    )
