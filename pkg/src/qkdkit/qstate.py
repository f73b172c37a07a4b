"""Qubit states, Pauli/Bloch algebra, and source/virtual-state construction.

Everything here is plain 2x2 complex linear algebra.  States are immutable;
all functions are pure and safe to call concurrently.

Conventions
-----------
* The computational basis is the Z basis, ``|0z>, |1z>``, with
  ``|jx> = (|0z> + (-1)^j |1z>)/sqrt(2)`` and
  ``|jy> = (|0z> + (-1)^j i |1z>)/sqrt(2)``.
* Pure-state amplitudes are globally rephased so that the first
  non-negligible component is real and non-negative.  Observable quantities
  never depend on this choice; it only makes amplitude-level tests
  deterministic.
* A phase-encoded signal with nominal phase ``theta`` and relative
  modulation error ``delta`` carries the effective phase
  ``theta * (1 + delta/pi)``.  The Z basis is chosen so that the zero-phase
  signal is exactly ``|0z>`` and the pi-phase signal is
  ``sin(delta/2)|0z> + cos(delta/2)|1z>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

ATOL = 1e-12

ID2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)

#: Pauli operators keyed by the coefficient names used throughout.
PAULI = {"id": ID2, "x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}

_SQ2 = math.sqrt(2.0)
_KETS = {
    "0z": np.array([1.0, 0.0], dtype=complex),
    "1z": np.array([0.0, 1.0], dtype=complex),
    "0x": np.array([1.0 / _SQ2, 1.0 / _SQ2], dtype=complex),
    "1x": np.array([1.0 / _SQ2, -1.0 / _SQ2], dtype=complex),
    "0y": np.array([1.0 / _SQ2, 1.0j / _SQ2], dtype=complex),
    "1y": np.array([1.0 / _SQ2, -1.0j / _SQ2], dtype=complex),
}


def _fix_phase(vec: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Rephase ``vec`` so its first non-negligible component is real >= 0."""
    for comp in vec:
        if abs(comp) > tol:
            return vec * (comp.conjugate() / abs(comp))
    return vec


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class QubitState:
    """A qubit state stored as a 2x2 density matrix (mixed states allowed).

    Attributes:
        density: 2x2 Hermitian PSD matrix with unit trace.
        ket: the amplitude vector when the state was built from amplitudes,
            else ``None``.  Global phase is fixed (first component real >= 0).
    """

    density: np.ndarray
    ket: np.ndarray | None = None

    def __post_init__(self) -> None:
        rho = np.asarray(self.density, dtype=complex)
        if rho.shape != (2, 2):
            raise ValidationError(f"density must be 2x2, got {rho.shape}")
        if not np.all(np.isfinite(rho)):
            raise ValidationError("density contains non-finite entries")
        if np.abs(rho - rho.conj().T).max() > ATOL:
            raise ValidationError("density is not Hermitian within 1e-12")
        if abs(np.trace(rho).real - 1.0) > ATOL or abs(np.trace(rho).imag) > ATOL:
            raise ValidationError("density trace differs from 1 by more than 1e-12")
        evals = np.linalg.eigvalsh(rho)
        if evals.min() < -ATOL or evals.max() > 1.0 + ATOL:
            raise ValidationError("density eigenvalues outside [0, 1] beyond 1e-12")
        object.__setattr__(self, "density", _frozen(rho))
        if self.ket is not None:
            object.__setattr__(self, "ket", _frozen(np.asarray(self.ket, dtype=complex)))

    @classmethod
    def from_amplitudes(cls, a0: complex, a1: complex) -> "QubitState":
        """Build a pure state from Z-basis amplitudes (must be normalized)."""
        vec = np.array([a0, a1], dtype=complex)
        norm2 = float(np.vdot(vec, vec).real)
        if abs(norm2 - 1.0) > ATOL:
            raise ValidationError(f"amplitudes have squared norm {norm2!r}, expected 1")
        vec = _fix_phase(vec)
        return cls(density=np.outer(vec, vec.conj()), ket=vec)

    @classmethod
    def from_density(cls, rho: np.ndarray) -> "QubitState":
        """Build a (possibly mixed) state from a density matrix."""
        return cls(density=rho)

    @property
    def is_pure(self) -> bool:
        return float(np.trace(self.density @ self.density).real) > 1.0 - 1e-9

    def bloch(self) -> "BlochVector":
        return pauli_decompose(self)


@dataclass(frozen=True)
class BlochVector:
    """Pauli-expansion coefficients ``(v0, px, py, pz)`` of a qubit state.

    ``v0`` is the identity coefficient and equals 1 for a normalized state;
    the remaining components obey ``px^2 + py^2 + pz^2 <= 1``.
    """

    v0: float
    px: float
    py: float
    pz: float

    def __post_init__(self) -> None:
        comps = (self.v0, self.px, self.py, self.pz)
        if not all(math.isfinite(c) for c in comps):
            raise ValidationError("Bloch components must be finite")
        if abs(self.v0 - 1.0) > ATOL:
            raise ValidationError(f"identity coefficient must be 1, got {self.v0!r}")
        if self.norm2 > 1.0 + ATOL:
            raise ValidationError("Bloch vector lies outside the unit ball")

    @property
    def norm2(self) -> float:
        return self.px**2 + self.py**2 + self.pz**2

    @property
    def is_planar(self) -> bool:
        """True when the state lies in the X-Z plane."""
        return abs(self.py) <= 1e-9

    def as_array(self, planar: bool = False) -> np.ndarray:
        if planar:
            return np.array([self.v0, self.px, self.pz])
        return np.array([self.v0, self.px, self.py, self.pz])


def basis_state(label: str) -> QubitState:
    """Return the canonical eigenstate for one of ``0z,1z,0x,1x,0y,1y``."""
    try:
        vec = _KETS[label]
    except KeyError:
        raise ValidationError(f"unknown basis-state label {label!r}") from None
    return QubitState.from_amplitudes(vec[0], vec[1])


def pauli_decompose(state: QubitState) -> BlochVector:
    """Decompose a state as ``rho = (v0*Id + px*sx + py*sy + pz*sz)/2``."""
    rho = state.density
    return BlochVector(
        v0=float(np.trace(rho).real),
        px=float(np.trace(rho @ SIGMA_X).real),
        py=float(np.trace(rho @ SIGMA_Y).real),
        pz=float(np.trace(rho @ SIGMA_Z).real),
    )


def bloch_to_density(bloch: BlochVector) -> QubitState:
    """Inverse of :func:`pauli_decompose`."""
    rho = 0.5 * (
        bloch.v0 * ID2 + bloch.px * SIGMA_X + bloch.py * SIGMA_Y + bloch.pz * SIGMA_Z
    )
    return QubitState.from_density(rho)


def encode_single_photon(theta_a: float, delta: float) -> QubitState:
    """Single-photon qubit for a phase-encoded signal with modulation error.

    Args:
        theta_a: nominal encoding phase; the protocol uses ``0, pi/2, pi``
            but any value is accepted.
        delta: relative phase modulation error, ``>= 0``.  The effective
            phase is ``theta_a * (1 + delta/pi)``.

    Returns:
        The encoded pure state.  ``theta_a = 0`` gives exactly ``|0z>``;
        ``theta_a = pi`` gives ``sin(delta/2)|0z> + cos(delta/2)|1z>``.
    """
    if not math.isfinite(theta_a):
        raise ValidationError("theta_a must be finite")
    if not (math.isfinite(delta) and delta >= 0.0):
        raise ValidationError(f"delta must be >= 0, got {delta!r}")
    theta = theta_a * (1.0 + delta / math.pi)
    return QubitState.from_amplitudes(math.cos(theta / 2.0), -math.sin(theta / 2.0))


@dataclass(frozen=True)
class SourceSet:
    """The states a party can send: ``(label, state, prior)`` triples."""

    entries: tuple[tuple[str, QubitState, float], ...]

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        labels = [label for label, _, _ in entries]
        if len(set(labels)) != len(labels):
            raise ValidationError("source labels must be unique")
        priors = [prior for _, _, prior in entries]
        if any(p <= 0.0 for p in priors):
            raise ValidationError("every source prior must be > 0")
        if abs(sum(priors) - 1.0) > ATOL:
            raise ValidationError("source priors must sum to 1 within 1e-12")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _, _ in self.entries)

    def state(self, label: str) -> QubitState:
        for lab, state, _ in self.entries:
            if lab == label:
                return state
        raise ValidationError(f"no source labelled {label!r}")

    def prior(self, label: str) -> float:
        for lab, _, prior in self.entries:
            if lab == label:
                return prior
        raise ValidationError(f"no source labelled {label!r}")

    def bloch(self, label: str) -> BlochVector:
        return self.state(label).bloch()

    def blochs(self) -> list[BlochVector]:
        return [state.bloch() for _, state, _ in self.entries]


def three_state_sources() -> SourceSet:
    """Perfect three-state sources ``{|0z>, |1z>, |0x>}`` with uniform priors."""
    third = 1.0 / 3.0
    return SourceSet(
        entries=(
            ("0z", basis_state("0z"), third),
            ("1z", basis_state("1z"), third),
            ("0x", basis_state("0x"), third),
        )
    )


def four_state_sources() -> SourceSet:
    """Perfect four-state sources whose Bloch points span a triangular pyramid."""
    quarter = 0.25
    return SourceSet(
        entries=(
            ("0z", basis_state("0z"), quarter),
            ("1z", basis_state("1z"), quarter),
            ("0x", basis_state("0x"), quarter),
            ("0y", basis_state("0y"), quarter),
        )
    )


def modulated_three_state_sources(delta: float) -> SourceSet:
    """Three-state sources with phase modulation error ``delta``.

    The Z pair is ``encode(0), encode(pi)``; the test signal is
    ``encode(pi/2)``, which in this frame sits on the ``-x`` side of the
    Bloch sphere and is therefore labelled ``1x``.  All three states lie in
    the X-Z plane.
    """
    third = 1.0 / 3.0
    return SourceSet(
        entries=(
            ("0z", encode_single_photon(0.0, delta), third),
            ("1z", encode_single_photon(math.pi, delta), third),
            ("1x", encode_single_photon(math.pi / 2.0, delta), third),
        )
    )


@dataclass(frozen=True)
class VirtualEnsemble:
    """The weighted virtual states Alice effectively emits in one basis.

    ``entries[j]`` is ``(P(j), state_j)`` for virtual bit ``j`` in the tagged
    basis; the weights sum to 1.
    """

    basis: str
    entries: tuple[tuple[float, QubitState], ...]

    def __post_init__(self) -> None:
        if self.basis not in ("x", "y"):
            raise ValidationError(f"ensemble basis must be 'x' or 'y', got {self.basis!r}")
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        weights = [w for w, _ in entries]
        if any(w < 0.0 for w in weights):
            raise ValidationError("ensemble weights must be non-negative")
        if abs(sum(weights) - 1.0) > ATOL:
            raise ValidationError("ensemble weights must sum to 1 within 1e-12")

    @property
    def weights(self) -> tuple[float, ...]:
        return tuple(w for w, _ in self.entries)

    @property
    def states(self) -> tuple[QubitState, ...]:
        return tuple(s for _, s in self.entries)


def virtual_amplitudes(delta: float) -> np.ndarray:
    """X-basis amplitudes ``C[i, j] = <i_x | virtual state j>`` at error ``delta``.

    Columns are normalized; at ``delta = 0`` the matrix is the identity.
    """
    if not (math.isfinite(delta) and 0.0 <= delta < math.pi):
        raise ValidationError(f"delta must be in [0, pi), got {delta!r}")
    s = math.sin(delta / 2.0)
    c = math.cos(delta / 2.0)
    rp = 2.0 * math.sqrt(1.0 + s)
    rm = 2.0 * math.sqrt(1.0 - s)
    return np.array(
        [
            [(1.0 + s + c) / rp, (1.0 - s - c) / rm],
            [(1.0 + s - c) / rp, (1.0 - s + c) / rm],
        ]
    )


def virtual_states_planar(delta: float) -> VirtualEnsemble:
    """Closed-form X-basis virtual ensemble of the modulated Z pair.

    Weights are ``P(j_x) = [1 + (-1)^j sin(delta/2)]/2``; the states are
    given by :func:`virtual_amplitudes`.  Equivalent to
    :func:`virtual_states_from_purification` on
    ``(encode(0, delta), encode(pi, delta))``.
    """
    coeffs = virtual_amplitudes(delta)
    s = math.sin(delta / 2.0)
    weights = ((1.0 + s) / 2.0, (1.0 - s) / 2.0)
    entries = []
    for j, weight in enumerate(weights):
        # X-basis amplitudes -> Z-basis amplitudes
        a0 = (coeffs[0, j] + coeffs[1, j]) / _SQ2
        a1 = (coeffs[0, j] - coeffs[1, j]) / _SQ2
        entries.append((weight, QubitState.from_amplitudes(a0, a1)))
    return VirtualEnsemble(basis="x", entries=tuple(entries))


def _purification(state: QubitState) -> np.ndarray:
    """Purify ``state`` over (shield, system); returns shape ``(rank, 2)``.

    Row ``i`` is ``sqrt(lambda_i) * v_i`` in eigenvalue-descending order with
    phase-fixed eigenvectors, so the purification is deterministic.
    """
    evals, evecs = np.linalg.eigh(state.density)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    rank = max(1, int(np.sum(evals > ATOL)))
    rows = [np.sqrt(evals[i]) * _fix_phase(evecs[:, i]) for i in range(rank)]
    return np.array(rows)


def virtual_states_from_purification(
    rho_0z: QubitState,
    rho_1z: QubitState,
    flip: bool = False,
    basis: str = "x",
) -> VirtualEnsemble:
    """Virtual ensemble of a general (possibly mixed) Z pair.

    Builds the entangled source state over (key qubit A, shield, B) from
    purifications of the two inputs, projects A onto the ``basis``
    eigenstates, and traces out A and the shield.  ``flip`` swaps which
    input is paired with ``|0z>_A`` (a bit-flip symmetry of the source).

    Returns:
        Ensemble ``{(w_j, normalized virtual state j)}`` with
        ``w_j = Tr(unnormalized virtual state j)``.
    """
    if basis not in ("x", "y"):
        raise ValidationError(f"basis must be 'x' or 'y', got {basis!r}")
    first, second = (rho_1z, rho_0z) if flip else (rho_0z, rho_1z)
    phi_a = _purification(first)
    phi_b = _purification(second)
    dim = max(phi_a.shape[0], phi_b.shape[0])

    def pad(phi: np.ndarray) -> np.ndarray:
        return np.vstack([phi, np.zeros((dim - phi.shape[0], 2))])

    phi_a, phi_b = pad(phi_a), pad(phi_b)

    # <j_basis | j'_z> overlap coefficients of the A projection
    entries = []
    for j in (0, 1):
        if basis == "x":
            coeff = (-1.0) ** j
        else:
            coeff = (-1.0) ** j * (-1.0j)
        psi = (phi_a + coeff * phi_b) / 2.0  # (shield, B) amplitudes
        sigma = psi.T @ psi.conj()  # partial trace over the shield
        weight = float(np.trace(sigma).real)
        if weight <= ATOL:
            raise ValidationError("virtual state has zero weight; degenerate source")
        entries.append((weight, QubitState.from_density(sigma / weight)))
    return VirtualEnsemble(basis=basis, entries=tuple(entries))
