"""Chain geometry, dipole-dipole kernels and the single-excitation Hamiltonian.

Units: the single-atom radiative rate gamma is 1 and the resonant wavenumber
k0 is 1, so frequencies are in units of gamma and lengths are k0*R.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

Array = np.ndarray

# Below this argument the kernels switch to their Taylor series.
_SERIES_CUTOFF = 2e-2


class Dissipation(str, enum.Enum):
    NONE = "none"
    COLLECTIVE = "collective"


class NNDisorder(str, enum.Enum):
    """How positional disorder enters a nearest-neighbour coupling sweep."""

    POSITIONAL = "positional"  # M_j,j+1 = M * (d / R_j,j+1)**3, near-zone law
    DIRECT = "direct"  # M_j,j+1 = M * (1 + sigma * z_j), z_j ~ N(0, 1)


class ChainSamplingError(RuntimeError):
    pass


class KernelDomainError(ValueError):
    pass


@dataclass(frozen=True)
class DipoleOrientation:
    """Angle between the dipole moment and the chain axis."""

    theta: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= math.pi / 2 + 1e-15:
            raise ValueError(f"theta must lie in [0, pi/2], got {self.theta}")

    @property
    def cos2(self) -> float:
        # cos(pi/2)**2 is 3.7e-33, not 0; snap the named orientations.
        if self.theta == math.pi / 2:
            return 0.0
        return math.cos(self.theta) ** 2

    @classmethod
    def parse(cls, value: Union[str, float, "DipoleOrientation"]) -> "DipoleOrientation":
        if isinstance(value, DipoleOrientation):
            return value
        if isinstance(value, str):
            key = value.strip().lower()
            if key == "pi":
                return PI
            if key == "sigma":
                return SIGMA
            raise ValueError(f"unknown orientation {value!r}; use 'pi', 'sigma' or an angle")
        return cls(float(value))


PI = DipoleOrientation(math.pi / 2)
SIGMA = DipoleOrientation(0.0)


# --------------------------------------------------------------------------
# geometry


@dataclass(frozen=True)
class ChainGeometrySpec:
    n_atoms: int
    nominal_spacing: float = 1.0
    disorder_sigma: float = 0.0
    min_separation: float = 1e-2
    max_retries: int = 10_000

    def __post_init__(self):
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise ValueError(f"n_atoms must be a positive integer, got {self.n_atoms}")
        if not self.nominal_spacing > 0:
            raise ValueError("nominal_spacing must be positive")
        if not self.disorder_sigma >= 0:
            raise ValueError("disorder_sigma must be non-negative")
        if not 0 < self.min_separation < self.nominal_spacing:
            raise ValueError("min_separation must lie in (0, nominal_spacing)")
        if self.max_retries < 1:
            raise ValueError("max_retries must be at least 1")


@dataclass(frozen=True)
class ChainRealization:
    """Concrete positions k0*X_j of one chain.

    ``bond_noise`` holds standard-normal draws used only by the direct
    nearest-neighbour disorder mode; ``rejections`` counts resampled draws.
    """

    positions: Array
    seed: int | None
    spec: ChainGeometrySpec
    bond_noise: Array = field(default=None, repr=False)
    rejections: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        noise = self.bond_noise
        if noise is None:
            noise = np.zeros(max(pos.size - 1, 0))
        noise = np.asarray(noise, dtype=float)
        noise.setflags(write=False)
        object.__setattr__(self, "bond_noise", noise)

    @property
    def n_atoms(self) -> int:
        return self.positions.size

    def separations(self) -> Array:
        """Pairwise |X_i - X_j| with zeros on the diagonal."""
        return np.abs(self.positions[:, None] - self.positions[None, :])

    def nearest_neighbor_spacings(self) -> Array:
        return np.diff(self.positions)

    def scaled(self, spacing: float) -> "ChainRealization":
        """Same realization with every coordinate scaled so the nominal spacing becomes ``spacing``."""
        factor = spacing / self.spec.nominal_spacing
        spec = ChainGeometrySpec(
            self.spec.n_atoms,
            spacing,
            self.spec.disorder_sigma,
            min(self.spec.min_separation * factor, spacing / 2),
            self.spec.max_retries,
        )
        return ChainRealization(self.positions * factor, self.seed, spec, self.bond_noise, self.rejections)


def ordered_chain(n_atoms: int, spacing: float = 1.0) -> ChainRealization:
    spec = ChainGeometrySpec(n_atoms, spacing, 0.0, min(1e-2, spacing / 2))
    return sample_chain(spec, 0)


def sample_chain(spec: ChainGeometrySpec, seed: int | None) -> ChainRealization:
    """Draw X_j = d*(j + xi_j), xi_j ~ N(0, sigma), sorted ascending.

    Draws with any neighbour separation below ``spec.min_separation`` are
    rejected and redrawn from the same generator stream.
    """
    n, d = spec.n_atoms, spec.nominal_spacing
    lattice = d * np.arange(1, n + 1, dtype=float)
    rng = np.random.default_rng(seed)
    if spec.disorder_sigma == 0:
        return ChainRealization(lattice, seed, spec, rng.standard_normal(n - 1))

    for attempt in range(spec.max_retries):
        xi = rng.normal(0.0, spec.disorder_sigma, size=n)
        noise = rng.standard_normal(n - 1)
        positions = np.sort(lattice + d * xi)
        if n == 1 or np.diff(positions).min() >= spec.min_separation:
            return ChainRealization(positions, seed, spec, noise, attempt)
    raise ChainSamplingError(
        f"no realization with separations >= {spec.min_separation} after {spec.max_retries} draws "
        f"(sigma={spec.disorder_sigma} is too large for N={n}, d={d})"
    )


# --------------------------------------------------------------------------
# kernels


def _check_positive(x) -> Array:
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise KernelDomainError("kernel argument k0*R must be positive and finite")
    return x


def _j0_like(x: Array) -> Array:
    """(sin x - x cos x) / x**3, stable for small x."""
    out = np.empty_like(x)
    small = x < _SERIES_CUTOFF
    xs = x[small] ** 2
    out[small] = 1 / 3 - xs / 30 + xs**2 / 840 - xs**3 / 45360
    xl = x[~small]
    out[~small] = (np.sin(xl) - xl * np.cos(xl)) / xl**3
    return out


def rddi_coupling(x, orientation: DipoleOrientation = PI):
    """Coherent dipole-dipole shift J(theta, k0*R) in units of gamma.

    Normalised so that the perpendicular orientation gives
    (3/4)[cos x/x^3 + sin x/x^2 - cos x/x].
    """
    scalar = np.ndim(x) == 0
    x = _check_positive(np.atleast_1d(x))
    c2 = orientation.cos2
    near = np.cos(x) / x**3 + np.sin(x) / x**2
    far = np.cos(x) / x
    out = 0.75 * ((1 - 3 * c2) * near - (1 - c2) * far)
    return float(out[0]) if scalar else out


def dissipation_rate(x, orientation: DipoleOrientation = PI):
    """Collective radiative rate gamma_ij / gamma; tends to 1 as x -> 0."""
    scalar = np.ndim(x) == 0
    x = _check_positive(np.atleast_1d(x))
    c2 = orientation.cos2
    # f = 1.5 [(1 - c2) sin x/x + (1 - 3 c2)(cos x/x^2 - sin x/x^3)]
    sinc = np.sinc(x / np.pi)
    out = 1.5 * ((1 - c2) * sinc - (1 - 3 * c2) * _j0_like(x))
    return float(out[0]) if scalar else out


# --------------------------------------------------------------------------
# self-energy and Hamiltonian


@dataclass(frozen=True)
class SystemParams:
    omega: float
    omega0: float
    kappa: Array
    dissipation: Dissipation = Dissipation.NONE
    gamma: float = 1.0

    def __post_init__(self):
        kappa = np.atleast_1d(np.asarray(self.kappa, dtype=complex))
        if np.all(kappa.imag == 0):
            kappa = kappa.real.astype(float)
        kappa.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "dissipation", Dissipation(self.dissipation))
        if self.gamma != 1.0:
            raise ValueError("gamma is the unit of frequency and must equal 1")
        if not (np.isfinite(self.omega) and np.isfinite(self.omega0) and np.all(np.isfinite(kappa))):
            raise ValueError("frequencies and couplings must be finite")

    @property
    def n_atoms(self) -> int:
        return self.kappa.size

    @classmethod
    def uniform(
        cls,
        n_atoms: int,
        detuning: float = 0.2,
        kappa: float | Sequence[float] = 0.2,
        omega0: float = 0.0,
        dissipation: Dissipation | str = Dissipation.NONE,
    ) -> "SystemParams":
        """Equal couplings with mode detuning ``detuning = omega - omega0``."""
        kappa = np.broadcast_to(np.asarray(kappa, dtype=float), (n_atoms,)).copy()
        return cls(omega0 + detuning, omega0, kappa, Dissipation(dissipation))

    def with_coupling_noise(self, sigma_kappa: float, seed: int | None) -> "SystemParams":
        """Multiply each kappa_j by (1 + sigma_kappa * z_j), z_j ~ N(0, 1)."""
        if sigma_kappa < 0:
            raise ValueError("sigma_kappa must be non-negative")
        if sigma_kappa == 0:
            return self
        z = np.random.default_rng(seed).standard_normal(self.n_atoms)
        return SystemParams(self.omega, self.omega0, self.kappa * (1 + sigma_kappa * z), self.dissipation)


@dataclass(frozen=True)
class NearestNeighbor:
    coupling: float
    disorder: NNDisorder = NNDisorder.POSITIONAL

    def __post_init__(self):
        object.__setattr__(self, "disorder", NNDisorder(self.disorder))


@dataclass(frozen=True)
class LongRange:
    pass


Interaction = Union[NearestNeighbor, LongRange]


@dataclass(frozen=True)
class SelfEnergy:
    coherent: Array
    dissipative: Array

    def __post_init__(self):
        for name in ("coherent", "dissipative"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_atoms(self) -> int:
        return self.coherent.shape[0]


def nn_bond_factors(chain: ChainRealization, disorder: NNDisorder = NNDisorder.POSITIONAL) -> Array:
    """Relative strengths of the N-1 nearest-neighbour bonds; all ones when ordered."""
    n = chain.n_atoms
    if n < 2 or chain.spec.disorder_sigma == 0:
        return np.ones(max(n - 1, 0))
    if NNDisorder(disorder) is NNDisorder.POSITIONAL:
        return (chain.spec.nominal_spacing / chain.nearest_neighbor_spacings()) ** 3
    return 1.0 + chain.spec.disorder_sigma * chain.bond_noise


def build_self_energy(
    chain: ChainRealization,
    orientation: DipoleOrientation,
    interaction: Interaction,
    params: SystemParams,
) -> SelfEnergy:
    n = chain.n_atoms
    if params.n_atoms != n:
        raise ValueError(f"params describe {params.n_atoms} atoms, chain has {n}")
    off = ~np.eye(n, dtype=bool)
    sep = chain.separations()

    if isinstance(interaction, NearestNeighbor):
        coherent = np.zeros((n, n))
        bonds = interaction.coupling * nn_bond_factors(chain, interaction.disorder)
        idx = np.arange(n - 1)
        coherent[idx, idx + 1] = bonds
        coherent[idx + 1, idx] = bonds
    elif isinstance(interaction, LongRange):
        coherent = np.zeros((n, n))
        if n > 1:
            coherent[off] = rddi_coupling(sep[off], orientation)
    else:
        raise TypeError(f"unknown interaction mode {interaction!r}")

    dissipative = np.eye(n) * params.gamma
    if params.dissipation is Dissipation.COLLECTIVE and n > 1:
        dissipative[off] = params.gamma * dissipation_rate(sep[off], orientation)
        lowest = np.linalg.eigvalsh(dissipative).min()
        if lowest < -1e-10:
            raise ValueError(f"collective decay matrix is not positive semidefinite (min eigenvalue {lowest:.3e})")

    if not (np.all(np.isfinite(coherent)) and np.all(np.isfinite(dissipative))):
        raise KernelDomainError("non-finite self-energy; atoms are closer than the kernel can resolve")
    return SelfEnergy(coherent, dissipative)


@dataclass(frozen=True)
class EffectiveHamiltonian:
    """(N+1)x(N+1) matrix over |r_1,0>, ..., |r_N,0>, |e...e,1>."""

    matrix: Array
    hermitian: bool

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def n_atoms(self) -> int:
        return self.matrix.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def atomic_block(self) -> Array:
        return self.matrix[:-1, :-1]

    @property
    def kappa(self) -> Array:
        return self.matrix[:-1, -1]

    @property
    def omega(self) -> complex:
        return self.matrix[-1, -1]


def build_hamiltonian(self_energy: SelfEnergy, params: SystemParams) -> EffectiveHamiltonian:
    n = self_energy.n_atoms
    if params.n_atoms != n:
        raise ValueError(f"self-energy is {n}x{n} but kappa has length {params.n_atoms}")
    h = np.zeros((n + 1, n + 1), dtype=complex)
    atoms = self_energy.coherent + params.omega0 * np.eye(n)
    collective = params.dissipation is Dissipation.COLLECTIVE
    if collective:
        atoms = atoms - 0.5j * self_energy.dissipative
    h[:n, :n] = atoms
    h[:n, n] = params.kappa
    h[n, :n] = np.conj(params.kappa)
    h[n, n] = params.omega
    return EffectiveHamiltonian(h, hermitian=not collective)


def resolvent_matrix(hamiltonian: EffectiveHamiltonian, s: complex) -> Array:
    """Atomic Laplace-domain matrix A(s) with the photon eliminated.

    A(s) = (s + i w0) 1 + i M + kappa kappa^dagger / (s + i w); solving
    A(s) a(s) = a(0) gives the transformed atomic amplitudes when beta(0) = 0.
    """
    kappa = hamiltonian.kappa
    n = hamiltonian.n_atoms
    return s * np.eye(n) + 1j * hamiltonian.atomic_block + np.outer(kappa, np.conj(kappa)) / (s + 1j * hamiltonian.omega)


# --------------------------------------------------------------------------
# parameterised systems


class SweepKind(str, enum.Enum):
    COUPLING = "coupling"  # nearest-neighbour strength M
    SPACING = "spacing"  # nominal k0*R with long-range kernel


@dataclass(frozen=True)
class ChainModel:
    """A chain whose Hamiltonian depends on one scalar control parameter.

    For ``SweepKind.COUPLING`` the parameter is the nearest-neighbour
    strength M; for ``SweepKind.SPACING`` it is the nominal spacing k0*d, the
    realization being scaled uniformly.
    """

    chain: ChainRealization
    params: SystemParams
    kind: SweepKind = SweepKind.COUPLING
    orientation: DipoleOrientation = PI
    nn_disorder: NNDisorder = NNDisorder.POSITIONAL

    def __post_init__(self):
        object.__setattr__(self, "kind", SweepKind(self.kind))
        object.__setattr__(self, "nn_disorder", NNDisorder(self.nn_disorder))
        if self.params.n_atoms != self.chain.n_atoms:
            raise ValueError("params and chain disagree on the number of atoms")

    @property
    def n_atoms(self) -> int:
        return self.chain.n_atoms

    def check_parameter(self, theta: float) -> None:
        if not np.isfinite(theta):
            raise ValueError(f"parameter must be finite, got {theta}")
        if self.kind is SweepKind.SPACING and theta <= 0:
            raise ValueError(f"spacing must be positive, got {theta}")

    def self_energy(self, theta: float) -> SelfEnergy:
        self.check_parameter(theta)
        if self.kind is SweepKind.COUPLING:
            return build_self_energy(self.chain, self.orientation, NearestNeighbor(theta, self.nn_disorder), self.params)
        return build_self_energy(self.chain.scaled(theta), self.orientation, LongRange(), self.params)

    def hamiltonian(self, theta: float) -> EffectiveHamiltonian:
        return build_hamiltonian(self.self_energy(theta), self.params)

    def __call__(self, theta: float) -> EffectiveHamiltonian:
        return self.hamiltonian(theta)


HamiltonianFamily = Callable[[float], EffectiveHamiltonian]


def excited_site(n_atoms: int, site: int = 0) -> Array:
    """Initial amplitude vector with atom ``site`` (0-based) excited and the mode empty."""
    if not 0 <= site < n_atoms:
        raise IndexError(f"site {site} out of range for {n_atoms} atoms")
    psi = np.zeros(n_atoms + 1, dtype=complex)
    psi[site] = 1.0
    return psi

