"""Time evolution in the single-excitation sector, time averages and the Dicke basis."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from .model import Array, ChainRealization, EffectiveHamiltonian
from .spectral import PartialFractionExpansion, eigensystem

# Non-Hermitian eigenvector bases worse than this are treated as defective.
DEFECTIVE_CONDITION = 1e8
# Below this |Delta| T the averaging kernel takes its exact zero-frequency limit.
_PHI_SMALL = 1e-6


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AmplitudeState:
    alpha: Array
    beta: complex
    time: float = 0.0

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=complex)
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", complex(self.beta))

    @classmethod
    def from_vector(cls, vector: Sequence[complex], time: float = 0.0) -> "AmplitudeState":
        vector = np.asarray(vector, dtype=complex)
        return cls(vector[:-1], vector[-1], time)

    @classmethod
    def excited(cls, n_atoms: int, site: int = 0) -> "AmplitudeState":
        """Atom ``site`` (0-based) excited, mode empty."""
        if not 0 <= site < n_atoms:
            raise IndexError(f"site {site} out of range for {n_atoms} atoms")
        alpha = np.zeros(n_atoms, dtype=complex)
        alpha[site] = 1.0
        return cls(alpha, 0.0, 0.0)

    @property
    def vector(self) -> Array:
        return np.append(self.alpha, self.beta)

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.alpha, self.alpha).real + abs(self.beta) ** 2)

    @property
    def n_atoms(self) -> int:
        return self.alpha.size


@dataclass(frozen=True)
class Trajectory:
    """Amplitudes on a time grid; ``amplitudes[k]`` is (alpha_1..alpha_N, beta) at ``times[k]``."""

    times: Array
    amplitudes: Array

    def __len__(self) -> int:
        return self.times.size

    def state(self, k: int) -> AmplitudeState:
        return AmplitudeState.from_vector(self.amplitudes[k], float(self.times[k]))

    @property
    def states(self) -> list[AmplitudeState]:
        return [self.state(k) for k in range(len(self))]

    @property
    def site_populations(self) -> Array:
        return np.abs(self.amplitudes[:, :-1]) ** 2

    @property
    def photon_population(self) -> Array:
        return np.abs(self.amplitudes[:, -1]) ** 2

    @property
    def norms(self) -> Array:
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1)


# --------------------------------------------------------------------------
# propagation


@dataclass(frozen=True)
class _Propagator:
    values: Array
    vectors: Array
    coefficients: Array  # initial state in the eigenbasis

    def amplitudes(self, dt: Array) -> Array:
        phases = np.exp(-1j * np.outer(dt, self.values))
        return (phases * self.coefficients) @ self.vectors.T


def _propagator(h: EffectiveHamiltonian, psi0: Array) -> _Propagator | None:
    """Spectral propagator, or None if the non-Hermitian basis is near-defective."""
    values, vectors = eigensystem(h)
    if h.hermitian:
        return _Propagator(values, vectors, vectors.conj().T @ psi0)
    if np.linalg.cond(vectors) > DEFECTIVE_CONDITION:
        return None
    return _Propagator(values, vectors, np.linalg.solve(vectors, psi0))


def _integrate(h: EffectiveHamiltonian, psi0: Array, times: Array) -> Array:
    mat = h.matrix

    def rhs(_t, y):
        return -1j * (mat @ y)

    sol = integrate.solve_ivp(
        rhs, (times[0], times[-1]), psi0, t_eval=times, method="DOP853", rtol=1e-10, atol=1e-12
    )
    if not sol.success:
        raise PropagationError(f"ODE fallback failed: {sol.message}")
    return sol.y.T


def evolve(h: EffectiveHamiltonian, initial: AmplitudeState, times: Sequence[float]) -> Trajectory:
    """Propagate psi(t) = exp(-i H (t - t0)) psi(t0) on ``times`` (``times[0]`` must be t0)."""
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-D grid")
    if times[0] != initial.time:
        raise ValueError("times[0] must equal the initial state's time")
    if np.any(np.diff(times) < 0):
        raise ValueError("times must be non-decreasing")
    if initial.n_atoms != h.n_atoms:
        raise ValueError("state and Hamiltonian dimensions differ")
    psi0 = initial.vector
    prop = _propagator(h, psi0)
    amps = _integrate(h, psi0, times) if prop is None else prop.amplitudes(times - times[0])
    amps[0] = psi0
    return Trajectory(times, amps)


# --------------------------------------------------------------------------
# time averages


class AverageMethod(str, enum.Enum):
    CLOSED_FORM = "closed_form"
    QUADRATURE = "quadrature"


@dataclass(frozen=True)
class TimeAveragedPopulations:
    horizon: float
    pbar: Array  # atoms
    photon: float
    method: AverageMethod


def phi(rate: Array, horizon: float) -> Array:
    """(1/T) * integral_0^T exp(z t) dt = (e^{zT} - 1) / (zT), exact 1 when |z|T is tiny."""
    x = np.asarray(rate, dtype=complex) * horizon
    small = np.abs(x) < _PHI_SMALL
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0, np.expm1(safe) / safe)


def _closed_form(prop: _Propagator, horizon: float) -> Array:
    # alpha_j(t) = sum_m A_jm e^{-i e_m t}; |alpha_j|^2 averages to
    # sum_{m,m'} A_jm conj(A_jm') phi(-i (e_m - conj(e_m')))
    amp = prop.vectors * prop.coefficients
    rates = -1j * (prop.values[:, None] - np.conj(prop.values)[None, :])
    kernel = phi(rates, horizon)
    return np.real(np.einsum("jm,mn,jn->j", amp, kernel, amp.conj()))


def _quadrature(h: EffectiveHamiltonian, psi0: Array, horizon: float, prop: _Propagator | None) -> Array:
    if prop is not None:
        def pops(t):
            return np.abs(prop.amplitudes(np.atleast_1d(t))[0]) ** 2
    else:
        mat = h.matrix
        sol = integrate.solve_ivp(
            lambda _t, y: -1j * (mat @ y), (0.0, horizon), psi0, method="DOP853", rtol=1e-10, atol=1e-12, dense_output=True
        )
        if not sol.success:
            raise PropagationError(f"ODE fallback failed: {sol.message}")

        def pops(t):
            return np.abs(sol.sol(t)) ** 2

    # Panels short enough that Gauss-Kronrod resolves every oscillation.
    freq = np.ptp(np.real(prop.values)) if prop is not None else np.abs(h.matrix).sum(axis=1).max() * 2
    n_panels = max(1, int(math.ceil(horizon * max(freq, 1e-12) / (2 * math.pi) / 4)))
    edges = np.linspace(0.0, horizon, n_panels + 1)
    total = np.zeros(h.dim)
    for a, b in zip(edges[:-1], edges[1:]):
        val, _err = integrate.quad_vec(pops, a, b, epsabs=1e-13, epsrel=1e-11)
        total += val
    return total / horizon


def time_averaged_populations(
    h: EffectiveHamiltonian,
    initial: AmplitudeState,
    horizon: float = 1e4,
    method: AverageMethod | str | None = None,
) -> TimeAveragedPopulations:
    """(1/T) * integral_0^T |amplitude|^2 dt for every atom and the mode.

    The closed form sums over pairs of eigenmodes; for real spectra it is
    the sinc-type kernel with its exact limit at degenerate pairs.
    Near-defective non-Hermitian matrices, or ``method="quadrature"``,
    integrate |amplitude|^2 numerically instead.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    psi0 = initial.vector
    prop = _propagator(h, psi0)
    if method is None:
        method = AverageMethod.CLOSED_FORM if prop is not None else AverageMethod.QUADRATURE
    method = AverageMethod(method)
    if method is AverageMethod.CLOSED_FORM:
        if prop is None:
            raise PropagationError("closed form needs a diagonalisable Hamiltonian")
        values = _closed_form(prop, horizon)
    else:
        values = _quadrature(h, psi0, horizon, prop)
    values = np.clip(values, 0.0, 1.0)
    return TimeAveragedPopulations(horizon, values[:-1], float(values[-1]), method)


def time_averaged_population(
    h: EffectiveHamiltonian,
    initial: AmplitudeState,
    site: int,
    horizon: float = 1e4,
    method: AverageMethod | str | None = None,
) -> float:
    return float(time_averaged_populations(h, initial, horizon, method).pbar[site])


def population_profile(trajectory: Trajectory, t: float) -> tuple[Array, float]:
    """Site probabilities and photon probability at the grid time nearest ``t``."""
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    k = int(np.argmin(np.abs(trajectory.times - t)))
    pops = np.abs(trajectory.amplitudes[k]) ** 2
    return pops[:-1], float(pops[-1])


# --------------------------------------------------------------------------
# Dicke basis


@dataclass(frozen=True)
class DickeAmplitudes:
    eta_plus: complex
    zeta: Array
    nu: complex

    @property
    def norm2(self) -> float:
        return float(abs(self.eta_plus) ** 2 + np.sum(np.abs(self.zeta) ** 2) + abs(self.nu) ** 2)

    @property
    def populations(self) -> Array:
        """|eta_+|^2, |zeta_1|^2, ..., |zeta_{N-1}|^2."""
        return np.abs(np.append(self.eta_plus, self.zeta)) ** 2


def dicke_basis(chain: ChainRealization, k0_phase: float = 1.0) -> Array:
    """Rows are the bras of |+>, |1>, ..., |N-1> in the site basis.

    |+> = N^-1/2 sum_k e^{i phi_k} |r_k> and
    |j> = [sum_{k<=j} e^{i phi_k} |r_k> - j e^{i phi_{j+1}} |r_{j+1}>] / sqrt(j (j+1)),
    with phi_k = k0_phase * X_k.
    """
    n = chain.n_atoms
    phases = np.exp(1j * k0_phase * chain.positions)
    kets = np.zeros((n, n), dtype=complex)
    kets[0] = phases / math.sqrt(n)
    for j in range(1, n):
        kets[j, :j] = phases[:j]
        kets[j, j] = -j * phases[j]
        kets[j] /= math.sqrt(j * (j + 1))
    return kets.conj()


def to_dicke_basis(state: AmplitudeState, chain: ChainRealization, k0_phase: float = 1.0) -> DickeAmplitudes:
    if state.n_atoms != chain.n_atoms:
        raise ValueError("state and chain dimensions differ")
    coords = dicke_basis(chain, k0_phase) @ state.alpha
    return DickeAmplitudes(complex(coords[0]), coords[1:], state.beta)


def dicke_trajectory(trajectory: Trajectory, chain: ChainRealization, k0_phase: float = 1.0) -> Array:
    """Dicke-basis amplitudes (eta_+, zeta_1.., nu) for every time of ``trajectory``."""
    bras = dicke_basis(chain, k0_phase)
    atoms = trajectory.amplitudes[:, :-1] @ bras.T
    return np.column_stack([atoms, trajectory.amplitudes[:, -1]])


# --------------------------------------------------------------------------
# inverse Laplace


def reconstruct_from_residues(expansion: PartialFractionExpansion, t: float | Sequence[float], growth_tol: float = 1e-9) -> Array:
    """alpha(t) = sum_m sum_n r_{m,n} t^{n-1} / (n-1)! e^{lambda_m t}.

    Returns shape (N,) for scalar ``t`` and (len(t), N) otherwise.
    """
    for term in expansion.terms:
        if term.pole.real > growth_tol:
            raise PropagationError(f"pole {term.pole} has positive real part; growth is unphysical")
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros((ts.size, expansion.alpha0.size), dtype=complex)
    for term in expansion.terms:
        n = term.order
        weight = ts ** (n - 1) / math.factorial(n - 1) * np.exp(term.pole * ts)
        out += weight[:, None] * term.residue[None, :]
    return out[0] if np.ndim(t) == 0 else out
