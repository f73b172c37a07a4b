"""Phase-error-rate estimation from basis-mismatch statistics.

The observed joint detection probabilities of each sent state are linear in
the Bloch vector of that state, with coefficients given by the transmission
rates of the identity and Pauli operators.  Solving the resulting small
linear system (3x3 planar, 4x4 full, 9x9 for the two-party scheme) recovers
those rates exactly and with them the detection statistics of *any* state,
in particular the virtual states that define the phase error rate.  Because
the recovered quantities are ratios of homogeneous linear forms, uniform
channel loss cancels: the estimate is loss-tolerant.

All solvers use an SVD factorization: it supplies the conditioning check
(smallest/largest singular value) and a numerically robust solve in one go.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    InconsistentYieldsError,
    PlanarityError,
    UndefinedRateError,
    ValidationError,
    WellPosednessError,
)
from .qstate import BlochVector, QubitState, SourceSet, VirtualEnsemble

#: smallest/largest singular value below this ratio means ill-posed sources.
SINGULARITY_THRESHOLD = 1e-9
#: predicted yields may undershoot zero by at most this much.
NEGATIVITY_TOL = 1e-9
#: maximum relative residual accepted from a linear solve.
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class YieldTable:
    """Detection probabilities keyed by ``(bob_basis, outcome, alice_label)``.

    Attributes:
        yields: map ``(basis, outcome, label) -> probability``; outcomes are
            the conclusive bits 0 and 1 (the remainder of each cell is the
            inconclusive event).
        priors: ``label -> P(label)`` for Alice's choice.
        basis_probs: ``basis -> probability`` for Bob's choice.
        joint: True when entries are joint probabilities
            ``P(label) * P(basis) * P(outcome | label, basis)``; False when
            they are conditional on (label, basis).
        consistency_tol: slack allowed in the prior-consistency checks.
            Exact tables use the default; finite-sample tables pass a
            statistical slack.
    """

    yields: Mapping[tuple[str, int, str], float]
    priors: Mapping[str, float]
    basis_probs: Mapping[str, float]
    joint: bool = True
    consistency_tol: float = 1e-9

    def __post_init__(self) -> None:
        object.__setattr__(self, "yields", dict(self.yields))
        object.__setattr__(self, "priors", dict(self.priors))
        object.__setattr__(self, "basis_probs", dict(self.basis_probs))
        tol = self.consistency_tol
        for key, value in self.yields.items():
            basis, outcome, label = key
            if outcome not in (0, 1):
                raise ValidationError(f"outcome must be 0 or 1, got {outcome!r}")
            if not (math.isfinite(value) and -tol <= value <= 1.0 + tol):
                raise ValidationError(f"yield {key} = {value!r} is not a probability")
        for label, prior in self.priors.items():
            if not (0.0 < prior <= 1.0):
                raise ValidationError(f"prior for {label!r} must be in (0, 1]")
        if abs(sum(self.priors.values()) - 1.0) > max(tol, 1e-9):
            raise ValidationError("priors must sum to 1")
        for basis, prob in self.basis_probs.items():
            if not (0.0 < prob <= 1.0):
                raise ValidationError(f"basis probability for {basis!r} must be in (0, 1]")
        if self.joint:
            totals: dict[tuple[str, str], float] = {}
            for (basis, _, label), value in self.yields.items():
                cap = self.priors.get(label, 1.0) * self.basis_probs.get(basis, 1.0)
                if value > cap + tol:
                    raise ValidationError(
                        f"joint yield for ({basis}, {label}) exceeds its prior weight"
                    )
                totals[basis, label] = totals.get((basis, label), 0.0) + value
            for (basis, label), total in totals.items():
                cap = self.priors.get(label, 1.0) * self.basis_probs.get(basis, 1.0)
                if total > cap + tol:
                    raise ValidationError(
                        f"conclusive yields for ({basis}, {label}) exceed the prior weight"
                    )

    def get(self, basis: str, outcome: int, label: str) -> float:
        try:
            return self.yields[basis, outcome, label]
        except KeyError:
            raise ValidationError(
                f"missing yield entry (basis={basis!r}, outcome={outcome}, label={label!r})"
            ) from None

    def weight(self, basis: str, label: str) -> float:
        """The joint prefactor ``P(label) * P(basis)``."""
        if label not in self.priors:
            raise ValidationError(f"no prior recorded for label {label!r}")
        if basis not in self.basis_probs:
            raise ValidationError(f"no probability recorded for basis {basis!r}")
        return self.priors[label] * self.basis_probs[basis]

    def to_conditional(self) -> "YieldTable":
        if not self.joint:
            return self
        converted = {
            key: value / self.weight(key[0], key[2]) for key, value in self.yields.items()
        }
        return YieldTable(converted, self.priors, self.basis_probs, joint=False,
                          consistency_tol=self.consistency_tol)

    def to_joint(self) -> "YieldTable":
        if self.joint:
            return self
        converted = {
            key: value * self.weight(key[0], key[2]) for key, value in self.yields.items()
        }
        return YieldTable(converted, self.priors, self.basis_probs, joint=True,
                          consistency_tol=self.consistency_tol)

    def scaled(self, factor: float) -> "YieldTable":
        """Uniformly rescale all yields (extra loss leaves estimates unchanged)."""
        if not (0.0 < factor <= 1.0):
            raise ValidationError("scale factor must be in (0, 1]")
        scaled = {key: value * factor for key, value in self.yields.items()}
        return YieldTable(scaled, self.priors, self.basis_probs, joint=self.joint,
                          consistency_tol=self.consistency_tol)


@dataclass(frozen=True)
class TransmissionFunctional:
    """Solved transmission rates ``q_t = Tr(D sigma_t)/2`` for one outcome.

    ``q`` maps ``t in {id, x, z}`` (planar) or ``{id, x, y, z}`` (full) to a
    real coefficient.  The predicted conditional yield of a state with Bloch
    vector ``p`` is ``q_id + p . q``, which must be non-negative for every
    valid state; that bounds the Pauli part by ``q_id``.
    """

    outcome: int
    q: Mapping[str, float]
    planar: bool

    def __post_init__(self) -> None:
        keys = ("id", "x", "z") if self.planar else ("id", "x", "y", "z")
        if set(self.q.keys()) != set(keys):
            raise ValidationError(f"functional must have coefficients {keys}")
        object.__setattr__(self, "q", dict(self.q))
        q_id = self.q["id"]
        if not (-NEGATIVITY_TOL <= q_id <= 1.0 + NEGATIVITY_TOL):
            raise InconsistentYieldsError(
                f"identity transmission rate {q_id!r} outside [0, 1]"
            )
        pauli = [self.q[k] for k in keys[1:]]
        if math.hypot(*pauli) > q_id + NEGATIVITY_TOL:
            raise InconsistentYieldsError(
                "functional predicts negative yields for some valid state"
            )

    def evaluate(self, bloch: BlochVector) -> float:
        """Predicted conditional yield ``q_id + p . q`` for one state."""
        if self.planar:
            if not bloch.is_planar:
                raise PlanarityError(
                    "planar functional applied to a state with p_y != 0"
                )
            return self.q["id"] + bloch.px * self.q["x"] + bloch.pz * self.q["z"]
        return (
            self.q["id"]
            + bloch.px * self.q["x"]
            + bloch.py * self.q["y"]
            + bloch.pz * self.q["z"]
        )


@dataclass(frozen=True)
class TwoQubitFunctional:
    """Solved two-party rates ``q[s, t] = Tr(D sigma_s x sigma_t)/4``.

    Indices run over ``(id, x, z)`` for each party; only planar product
    states can be predicted.
    """

    q: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        if q.shape != (3, 3):
            raise ValidationError("two-qubit functional must be 3x3 over (id, x, z)")
        arr = np.array(q)
        arr.setflags(write=False)
        object.__setattr__(self, "q", arr)
        if not (-NEGATIVITY_TOL <= q[0, 0] <= 1.0 + NEGATIVITY_TOL):
            raise InconsistentYieldsError(
                f"identity-identity rate {q[0, 0]!r} outside [0, 1]"
            )

    def evaluate(self, bloch_a: BlochVector, bloch_b: BlochVector) -> float:
        """Predicted conditional yield for a planar product state."""
        for bloch in (bloch_a, bloch_b):
            if not bloch.is_planar:
                raise PlanarityError("two-qubit functional requires planar states")
        va = bloch_a.as_array(planar=True)
        vb = bloch_b.as_array(planar=True)
        return float(va @ self.q @ vb)


@dataclass(frozen=True)
class ConditioningReport:
    """Result of a well-posedness check on a set of source states."""

    well_posed: bool
    condition_number: float
    singular_values: tuple[float, ...]
    reason: str | None = None


def check_well_posed(blochs: Sequence[BlochVector]) -> ConditioningReport:
    """Check that the source Bloch vectors determine the linear system.

    Three states use the planar components ``(1, px, pz)``; four states use
    the full ``(1, px, py, pz)``.  Well-posed means the smallest singular
    value of the design matrix exceeds ``1e-9`` times the largest.
    """
    n = len(blochs)
    if n not in (3, 4):
        raise ValidationError(f"need 3 or 4 source states, got {n}")
    full = np.array([b.as_array() for b in blochs])
    for i in range(n):
        for j in range(i + 1, n):
            if np.abs(full[i] - full[j]).max() <= 1e-12:
                singular = np.linalg.svd(_design_matrix(blochs), compute_uv=False)
                return ConditioningReport(
                    well_posed=False,
                    condition_number=math.inf,
                    singular_values=tuple(singular),
                    reason="duplicate-states",
                )
    singular = np.linalg.svd(_design_matrix(blochs), compute_uv=False)
    smax, smin = float(singular[0]), float(singular[-1])
    if smin <= SINGULARITY_THRESHOLD * smax:
        cond = math.inf if smin == 0.0 else smax / smin
        return ConditioningReport(
            well_posed=False,
            condition_number=cond,
            singular_values=tuple(singular),
            reason="rank-deficient",
        )
    return ConditioningReport(
        well_posed=True,
        condition_number=smax / smin,
        singular_values=tuple(singular),
    )


def _design_matrix(blochs: Sequence[BlochVector]) -> np.ndarray:
    planar = len(blochs) == 3
    return np.array([b.as_array(planar=planar) for b in blochs])


def _svd_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(matrix)
    if s[-1] <= SINGULARITY_THRESHOLD * s[0]:
        raise WellPosednessError("design matrix is numerically singular")
    x = vt.T @ ((u.T @ rhs) / s)
    residual = np.abs(matrix @ x - rhs).max()
    if residual > RESIDUAL_TOL * max(1.0, np.abs(rhs).max()):
        raise InconsistentYieldsError(
            f"linear solve residual {residual!r} exceeds tolerance"
        )
    return x


def solve_functional(
    yields: YieldTable,
    sources: SourceSet,
    outcome: int,
    basis: str = "x",
) -> TransmissionFunctional:
    """Solve the transmission rates for one of Bob's outcomes.

    The equation for source ``j`` is
    ``Y(basis, outcome, j) = P(j) P(basis) (q_id + p_j . q)``.  Three sources
    must lie in the X-Z plane and give the planar system; four sources give
    the full system.

    Raises:
        WellPosednessError: sources do not span the system.
        InconsistentYieldsError: the solved rates would predict negative
            yields beyond ``1e-9`` (the data fit no physical map).
    """
    table = yields.to_joint()
    blochs = sources.blochs()
    n = len(blochs)
    if n not in (3, 4):
        raise ValidationError(f"need 3 or 4 sources, got {n}")
    planar = n == 3
    if planar:
        for label, bloch in zip(sources.labels, blochs):
            if not bloch.is_planar:
                raise PlanarityError(
                    f"source {label!r} has p_y != 0; the 3-state solver is planar"
                )
    report = check_well_posed(blochs)
    if not report.well_posed:
        raise WellPosednessError(f"ill-posed sources ({report.reason})")
    for label in sources.labels:
        table_prior = table.priors.get(label)
        if table_prior is not None and abs(table_prior - sources.prior(label)) > 1e-9:
            raise ValidationError(
                f"prior mismatch for {label!r} between yield table and sources"
            )
    rhs = np.array(
        [
            table.get(basis, outcome, label) / table.weight(basis, label)
            for label in sources.labels
        ]
    )
    coeffs = _svd_solve(_design_matrix(blochs), rhs)
    keys = ("id", "x", "z") if planar else ("id", "x", "y", "z")
    return TransmissionFunctional(
        outcome=outcome, q=dict(zip(keys, coeffs)), planar=planar
    )


def predict_yield(
    functional: TransmissionFunctional,
    state: QubitState | BlochVector,
    prior: float,
) -> float:
    """Joint detection probability ``prior * (q_id + p . q)`` for any state.

    ``prior`` is the joint prefactor of the prediction (state prior times
    basis probability for joint yields).
    """
    if not (0.0 <= prior <= 1.0):
        raise ValidationError(f"prior must be in [0, 1], got {prior!r}")
    bloch = state.bloch() if isinstance(state, QubitState) else state
    return prior * functional.evaluate(bloch)


def _finalize_rate(value: float, negativity_tol: float) -> float:
    if value < -negativity_tol or value > 1.0 + negativity_tol:
        raise InconsistentYieldsError(
            f"error rate {value!r} violates physicality beyond tolerance"
        )
    return min(max(value, 0.0), 1.0)


def phase_error_three_state(
    yields: YieldTable, *, negativity_tol: float = NEGATIVITY_TOL
) -> float:
    """Closed-form phase error rate of the perfect three-state protocol.

    Requires joint X-outcome yields for labels ``0z, 1z, 0x`` sent with
    uniform (state, basis) priors.  The unsent state's yields follow from
    ``Y(s, 1x) = Y(s, 0z) + Y(s, 1z) - Y(s, 0x)``.

    Args:
        yields: table containing all six X-basis entries.
        negativity_tol: predicted yields below ``-negativity_tol`` raise
            :class:`InconsistentYieldsError`; small negatives are clamped to
            zero.  Statistical callers pass ``math.inf`` to always clamp.
    """
    table = yields.to_joint()
    y = {(s, label): table.get("x", s, label)
         for s in (0, 1) for label in ("0z", "1z", "0x")}
    virtual = {
        s: y[s, "0z"] + y[s, "1z"] - y[s, "0x"] for s in (0, 1)
    }
    for s, value in virtual.items():
        if value < -negativity_tol:
            raise InconsistentYieldsError(
                f"predicted yield Y({s}x, 1x) = {value!r} is negative"
            )
    numerator = max(virtual[0], 0.0) + y[1, "0x"]
    denominator = y[0, "0z"] + y[0, "1z"] + y[1, "0z"] + y[1, "1z"]
    if denominator <= 0.0:
        raise UndefinedRateError("no X-basis detections; phase error undefined")
    return _finalize_rate(numerator / denominator, negativity_tol)


def phase_error_virtual(
    f0: TransmissionFunctional,
    f1: TransmissionFunctional,
    ensemble: VirtualEnsemble,
    *,
    negativity_tol: float = NEGATIVITY_TOL,
) -> float:
    """Phase error rate of an arbitrary virtual ensemble.

    ``f0``/``f1`` are the solved functionals for Bob's outcomes 0 and 1 in
    the ensemble's basis; errors are the cross terms (outcome != virtual
    bit).
    """
    if f0.outcome != 0 or f1.outcome != 1:
        raise ValidationError("functionals must be for outcomes 0 and 1, in order")
    (w0, s0), (w1, s1) = ensemble.entries
    b0, b1 = s0.bloch(), s1.bloch()
    numerator = w0 * f1.evaluate(b0) + w1 * f0.evaluate(b1)
    denominator = (
        w0 * (f0.evaluate(b0) + f1.evaluate(b0))
        + w1 * (f0.evaluate(b1) + f1.evaluate(b1))
    )
    if denominator <= 0.0:
        raise UndefinedRateError("virtual ensemble has zero detection probability")
    return _finalize_rate(numerator / denominator, negativity_tol)


def _pair_weight(label_a: str, label_b: str, gamma: float) -> float:
    bases = []
    for label in (label_a, label_b):
        if not label or label[-1] not in ("z", "x"):
            raise ValidationError(
                f"label {label!r} must end in 'z' or 'x' to carry its basis"
            )
        bases.append(label[-1])
    if bases[0] == "z" and bases[1] == "z":
        return gamma / 9.0
    return 1.0 / 9.0


def mdi_solve(
    pair_yields: Mapping[tuple[str, str], float],
    sources_a: SourceSet,
    sources_b: SourceSet,
    gamma: float,
) -> TwoQubitFunctional:
    """Solve the nine two-party transmission rates of the relay scheme.

    ``pair_yields`` holds the joint probability that Alice and Bob send the
    labelled pair and the relay announces the target outcome.  Z-Z pairs
    carry the prefactor ``gamma/9`` (the sacrificed test fraction); pairs
    involving an X state carry ``1/9``.

    Raises:
        WellPosednessError: either party's triple is degenerate.
    """
    if not (0.0 < gamma < 1.0):
        raise ValidationError(f"test fraction gamma must be in (0, 1), got {gamma!r}")
    if len(sources_a) != 3 or len(sources_b) != 3:
        raise ValidationError("each party needs exactly 3 source states")
    rows = []
    rhs = []
    for party, sources in (("A", sources_a), ("B", sources_b)):
        for label, bloch in zip(sources.labels, sources.blochs()):
            if not bloch.is_planar:
                raise PlanarityError(f"party {party} source {label!r} is off-plane")
        report = check_well_posed(sources.blochs())
        if not report.well_posed:
            raise WellPosednessError(
                f"party {party} sources are ill-posed ({report.reason})"
            )
    for label_a, bloch_a in zip(sources_a.labels, sources_a.blochs()):
        for label_b, bloch_b in zip(sources_b.labels, sources_b.blochs()):
            key = (label_a, label_b)
            if key not in pair_yields:
                raise ValidationError(f"missing pair yield for {key!r}")
            weight = _pair_weight(label_a, label_b, gamma)
            rows.append(np.kron(bloch_a.as_array(planar=True),
                                bloch_b.as_array(planar=True)))
            rhs.append(pair_yields[key] / weight)
    coeffs = _svd_solve(np.array(rows), np.array(rhs))
    functional = TwoQubitFunctional(q=coeffs.reshape(3, 3))
    _check_mdi_physical(functional, sources_a, sources_b)
    return functional


def _check_mdi_physical(
    functional: TwoQubitFunctional, sources_a: SourceSet, sources_b: SourceSet
) -> None:
    from .qstate import basis_state

    x_states = [basis_state("0x").bloch(), basis_state("1x").bloch()]
    blochs_a = sources_a.blochs() + x_states
    blochs_b = sources_b.blochs() + x_states
    for bloch_a in blochs_a:
        for bloch_b in blochs_b:
            predicted = functional.evaluate(bloch_a, bloch_b)
            if predicted < -NEGATIVITY_TOL or predicted > 1.0 + NEGATIVITY_TOL:
                raise InconsistentYieldsError(
                    "two-qubit functional predicts unphysical product yields"
                )


def mdi_phase_error(
    functional: TwoQubitFunctional,
    ensemble_a: VirtualEnsemble,
    ensemble_b: VirtualEnsemble,
    *,
    negativity_tol: float = NEGATIVITY_TOL,
) -> float:
    """Phase error rate of the relay scheme from the solved two-party rates.

    Evaluates the functional bilinearly on the virtual X products of both
    parties; errors are the anti-correlated announcements.
    """
    if ensemble_a.basis != "x" or ensemble_b.basis != "x":
        raise ValidationError("relay phase error uses X-basis virtual ensembles")
    table = np.empty((2, 2))
    for j, (wa, sa) in enumerate(ensemble_a.entries):
        for k, (wb, sb) in enumerate(ensemble_b.entries):
            table[j, k] = wa * wb * functional.evaluate(sa.bloch(), sb.bloch())
    denominator = float(table.sum())
    if denominator <= 0.0:
        raise UndefinedRateError("relay announces the target outcome with probability 0")
    return _finalize_rate(float(table[0, 1] + table[1, 0]) / denominator, negativity_tol)
