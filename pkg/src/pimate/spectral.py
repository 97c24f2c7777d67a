"""Eigenvalue sweeps, crossing detection and the Laplace-domain pole/residue picture."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import Array, EffectiveHamiltonian, HamiltonianFamily, SweepKind, resolvent_matrix

_INV_SQRT2 = 1 / math.sqrt(2)
_GOLDEN = (math.sqrt(5) - 1) / 2


class EigenSolverError(RuntimeError):
    pass


class PairingError(RuntimeError):
    pass


class ResidueConditioningError(RuntimeError):
    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


# --------------------------------------------------------------------------
# eigen-decomposition helpers


def eigensystem(h: EffectiveHamiltonian) -> tuple[Array, Array]:
    """Eigenvalues and unit-norm right eigenvectors (columns).

    Hermitian matrices give real ascending eigenvalues; non-Hermitian ones are
    ordered by real part, then imaginary part.
    """
    try:
        if h.hermitian:
            return np.linalg.eigh(h.matrix)
        vals, vecs = np.linalg.eig(h.matrix)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverError(str(exc)) from exc
    order = np.lexsort((vals.imag, vals.real))
    vecs = vecs[:, order]
    return vals[order], vecs / np.linalg.norm(vecs, axis=0)


def spectral_range(values: Array) -> float:
    values = np.asarray(values)
    span = max(np.ptp(values.real), np.ptp(values.imag)) if values.size else 0.0
    return float(span) if span > 0 else 1.0


# --------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepAxis:
    kind: SweepKind
    grid: Array

    def __post_init__(self):
        object.__setattr__(self, "kind", SweepKind(self.kind))
        grid = np.array(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("sweep grid needs at least two points")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("sweep grid must be strictly increasing")
        if self.kind is SweepKind.SPACING and grid[0] <= 0:
            raise ValueError("spacing sweep values must be positive")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @classmethod
    def linspace(cls, kind, start: float, stop: float, points: int) -> "SweepAxis":
        return cls(kind, np.linspace(start, stop, points))

    @property
    def resolution(self) -> float:
        return float(np.max(np.diff(self.grid)))


@dataclass(frozen=True)
class SpectrumSweep:
    """Eigenvalue curves over a (possibly refined) grid.

    ``eigenvalues[p, c]`` is curve ``c`` at ``grid[p]`` and ``eigenvectors[p, :, c]``
    its eigenvector, so columns follow one state across the sweep.
    """

    axis: SweepAxis
    grid: Array
    eigenvalues: Array
    eigenvectors: Array
    hermitian: bool
    family: HamiltonianFamily = field(repr=False, compare=False, default=None)

    @property
    def n_curves(self) -> int:
        return self.eigenvalues.shape[1]

    def curve(self, c: int) -> Array:
        return self.eigenvalues[:, c]


def _match(prev_vecs: Array, vecs: Array) -> tuple[Array, float]:
    """Column permutation of ``vecs`` maximising total overlap with ``prev_vecs``."""
    overlap = np.abs(prev_vecs.conj().T @ vecs)
    rows, cols = linear_sum_assignment(-overlap)
    perm = np.empty_like(cols)
    perm[rows] = cols
    return perm, float(overlap[rows, cols].min())


def eigen_sweep(
    family: HamiltonianFamily,
    axis: SweepAxis,
    min_overlap: float = _INV_SQRT2,
    max_refinements: int = 12,
) -> SpectrumSweep:
    """Diagonalise along ``axis`` and pair eigenvalues into continuous curves.

    Adjacent points whose best eigenvector overlap drops below
    ``min_overlap`` are bisected (up to ``max_refinements`` levels); if the
    overlap is still poor the better of the available assignments is kept,
    which only happens right at an exact degeneracy.
    """

    def solve(theta):
        try:
            return eigensystem(family(theta))
        except EigenSolverError as exc:
            raise EigenSolverError(f"eigensolver failed at parameter {theta!r}: {exc}") from exc

    grid = [float(axis.grid[0])]
    vals0, vecs0 = solve(grid[0])
    values = [vals0]
    vectors = [vecs0]
    hermitian = family(grid[0]).hermitian

    def advance(theta_prev, vecs_prev, theta, depth):
        vals, vecs = solve(theta)
        perm, quality = _match(vecs_prev, vecs)
        if quality >= min_overlap or depth >= max_refinements:
            return [(theta, vals[perm], vecs[:, perm])]
        mid = 0.5 * (theta_prev + theta)
        left = advance(theta_prev, vecs_prev, mid, depth + 1)
        return left + advance(mid, left[-1][2], theta, depth + 1)

    for theta in axis.grid[1:]:
        for t, vals, vecs in advance(grid[-1], vectors[-1], float(theta), 0):
            grid.append(t)
            values.append(vals)
            vectors.append(vecs)

    return SpectrumSweep(
        axis=axis,
        grid=np.array(grid),
        eigenvalues=np.array(values),
        eigenvectors=np.array(vectors),
        hermitian=hermitian,
        family=family,
    )


# --------------------------------------------------------------------------
# crossings


class CrossingKind(str, enum.Enum):
    CROSSING = "crossing"
    AVOIDED = "avoided"


@dataclass(frozen=True)
class CrossingEvent:
    parameter: float
    curves: tuple[int, int]
    min_gap: float
    kind: CrossingKind


@dataclass(frozen=True)
class CrossingReport:
    events: tuple[CrossingEvent, ...]
    tau_cross: float
    tau_refine: float

    @property
    def crossings(self) -> list[CrossingEvent]:
        return [e for e in self.events if e.kind is CrossingKind.CROSSING]

    @property
    def avoided(self) -> list[CrossingEvent]:
        return [e for e in self.events if e.kind is CrossingKind.AVOIDED]


def golden_section(f, a: float, b: float, tol: float, max_iter: int = 200) -> tuple[float, float]:
    """Minimise a unimodal ``f`` on [a, b] to bracket width ``tol``."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


def _is_nearest_pair(vals: Array, i: int, j: int) -> bool:
    dist = np.abs(vals[:, None] - vals[None, :])
    np.fill_diagonal(dist, np.inf)
    gap = dist[i, j]
    return gap <= dist[i].min() or gap <= dist[j].min()


def detect_crossings(
    sweep: SpectrumSweep,
    tau_cross: float | None = None,
    tau_refine: float | None = None,
    max_gap: float = np.inf,
) -> CrossingReport:
    """Locate and classify interior minima of the gap between curve pairs.

    Candidates are interior grid points where the two curves are nearest
    neighbours in the spectrum and their separation (modulus distance for
    complex spectra) is a local minimum not above ``max_gap``.  Each candidate
    is refined by golden-section search, re-diagonalising the family and
    following both states by eigenvector overlap.  Defaults:
    ``tau_cross = 1e-6 * spectral range`` and
    ``tau_refine = 1e-12 * axis span``.
    """
    if sweep.family is None:
        raise PairingError("sweep carries no Hamiltonian family to refine against")
    vals = sweep.eigenvalues
    grid = sweep.grid
    scale = spectral_range(vals)
    tau_cross = 1e-6 * scale if tau_cross is None else tau_cross
    tau_refine = 1e-12 * float(grid[-1] - grid[0]) if tau_refine is None else tau_refine

    events = []
    n_c = sweep.n_curves
    for i in range(n_c):
        for j in range(i + 1, n_c):
            gap = np.abs(vals[:, i] - vals[:, j])
            interior = np.flatnonzero((gap[1:-1] < gap[:-2]) & (gap[1:-1] <= gap[2:])) + 1
            for p in interior:
                if gap[p] > max_gap or not _is_nearest_pair(vals[p], i, j):
                    continue
                ref = sweep.eigenvectors[p][:, [i, j]]

                def pair_gap(theta, ref=ref):
                    ev, vecs = eigensystem(sweep.family(theta))
                    overlap = np.abs(ref.conj().T @ vecs)
                    rows, cols = linear_sum_assignment(-overlap)
                    picked = cols[np.argsort(rows)]
                    return float(abs(ev[picked[0]] - ev[picked[1]]))

                theta, g = golden_section(pair_gap, grid[p - 1], grid[p + 1], tau_refine)
                g = min(g, float(gap[p]))
                kind = CrossingKind.CROSSING if g < tau_cross else CrossingKind.AVOIDED
                events.append(CrossingEvent(float(theta), (i, j), g, kind))

    events.sort(key=lambda e: (e.parameter, e.curves))
    return CrossingReport(tuple(events), tau_cross, tau_refine)


# --------------------------------------------------------------------------
# poles and residues


@dataclass(frozen=True)
class Pole:
    location: complex
    order: int
    spread: float = 0.0  # largest distance of a merged eigenvalue from ``location``


@dataclass(frozen=True)
class PoleSet:
    poles: tuple[Pole, ...]
    tau_degeneracy: float

    @property
    def total_order(self) -> int:
        return sum(p.order for p in self.poles)

    @property
    def locations(self) -> Array:
        return np.array([p.location for p in self.poles])

    @property
    def max_order(self) -> int:
        return max(p.order for p in self.poles)


def _cluster(values: Array, linked) -> list[list[int]]:
    """Single-linkage clusters of ``values`` under the pair predicate ``linked(a, b)``."""
    n = len(values)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(n):
        for b in range(a + 1, n):
            if linked(a, b):
                parent[find(a)] = find(b)
    groups: dict[int, list[int]] = {}
    for a in range(n):
        groups.setdefault(find(a), []).append(a)
    return sorted(groups.values(), key=lambda g: (values[g].real.mean(), values[g].imag.mean()))


# Eigenvectors this close to parallel belong to one defective (Jordan) block.
_PARALLEL = 1 - 1e-6


def characteristic_poles(h: EffectiveHamiltonian, tau_degeneracy: float | None = None) -> PoleSet:
    """Poles lambda = -i*epsilon of the transformed amplitudes, degenerate ones merged.

    Default ``tau_degeneracy`` is ``1e-8`` times the larger of the spectral
    range and the matrix 2-norm (the range alone collapses when the whole
    spectrum is degenerate).  For non-Hermitian matrices, eigenvalues within
    ``1e-4`` of that scale whose eigenvectors are numerically parallel are
    merged as well: a defective eigenvalue is split by roughly
    sqrt(machine epsilon) by the eigensolver.
    """
    eps, vecs = eigensystem(h)
    scale = max(spectral_range(eps), float(np.linalg.norm(h.matrix, 2)))
    if tau_degeneracy is None:
        tau_degeneracy = 1e-8 * scale
    lam = -1j * np.asarray(eps, dtype=complex)
    if h.hermitian:
        lam = 1j * lam.imag  # exactly imaginary
        overlap = None
    else:
        overlap = np.abs(vecs.conj().T @ vecs)

    def linked(a, b):
        dist = abs(lam[a] - lam[b])
        if dist <= tau_degeneracy:
            return True
        return overlap is not None and dist <= 1e-4 * scale and overlap[a, b] > _PARALLEL

    poles = []
    for group in _cluster(lam, linked):
        centre = complex(lam[group].mean())
        if h.hermitian:
            centre = complex(0.0, centre.imag)
        spread = float(np.abs(lam[group] - centre).max())
        poles.append(Pole(centre, len(group), spread))
    return PoleSet(tuple(poles), float(tau_degeneracy))


@dataclass(frozen=True)
class ResidueTerm:
    pole: complex
    order: int  # power of 1/(s - pole)
    residue: Array  # length-N atomic vector


@dataclass(frozen=True)
class PartialFractionExpansion:
    terms: tuple[ResidueTerm, ...]
    alpha0: Array

    def evaluate(self, s: complex) -> Array:
        """Sum of r / (s - lambda)^j at a Laplace point ``s`` away from the poles."""
        out = np.zeros_like(self.alpha0, dtype=complex)
        for term in self.terms:
            out += term.residue / (s - term.pole) ** term.order
        return out

    def simple_residue_sum(self) -> Array:
        return sum((t.residue for t in self.terms if t.order == 1), np.zeros_like(self.alpha0))


def laplace_amplitudes(h: EffectiveHamiltonian, alpha0: Array, s: complex) -> Array:
    """Transformed atomic amplitudes A(s)^-1 alpha(0) for an empty initial mode."""
    return np.linalg.solve(resolvent_matrix(h, s), alpha0)


def residue_expansion(
    h: EffectiveHamiltonian,
    alpha0: Sequence[complex],
    poles: PoleSet | None = None,
    n_nodes: int = 64,
) -> PartialFractionExpansion:
    """Partial-fraction expansion of A(s)^-1 alpha(0) over the poles.

    For a pole of order k the residues r_{q,j} are the Taylor coefficients
    of order k - j of the deflated function (s - lambda_q)^k A(s)^-1 alpha(0).
    They are obtained by differentiating that function on a circle around
    lambda_q (trapezoidal Cauchy integrals), which is spectrally accurate as
    long as the circle stays clear of the other poles.
    """
    alpha0 = np.asarray(alpha0, dtype=complex)
    if alpha0.shape != (h.n_atoms,):
        raise ValueError(f"alpha0 must have length {h.n_atoms}")
    if not np.isclose(np.vdot(alpha0, alpha0).real, 1.0, atol=1e-10):
        raise ValueError("alpha0 must be normalized")
    poles = characteristic_poles(h) if poles is None else poles
    if poles.total_order != h.dim:
        raise ValueError(f"pole orders sum to {poles.total_order}, expected {h.dim}")

    locs = poles.locations
    scale = spectral_range(locs)
    # Sample through the full (N+1) resolvent: A(s) itself is singular at
    # s = -i*omega (a removable point of A^-1) which a contour may cross.
    psi0 = np.append(alpha0, 0.0)
    shifted = 1j * h.matrix

    def transformed(s):
        return np.linalg.solve(s * np.eye(h.dim) + shifted, psi0)[:-1]

    phases = np.exp(2j * np.pi * np.arange(n_nodes) / n_nodes)
    terms = []
    for q, pole in enumerate(poles.poles):
        others = np.delete(locs, q)
        dist = float(np.abs(others - pole.location).min()) if others.size else scale
        radius = 0.5 * dist
        if pole.spread > 0 and radius <= 2 * pole.spread:
            raise ResidueConditioningError("merged eigenvalues are not well separated from neighbouring poles", pole.spread / dist)
        if radius < 1e-9 * scale:
            raise ResidueConditioningError("poles too close for stable differentiation", scale / max(radius, 1e-300))
        nodes = pole.location + radius * phases
        samples = np.array([transformed(s) * (s - pole.location) ** pole.order for s in nodes])
        # Taylor coefficient c_n = mean(f(node) * phase^-n) / radius^n
        for j in range(1, pole.order + 1):
            n = pole.order - j
            coeff = (samples * phases[:, None] ** (-n)).mean(axis=0) / radius**n
            terms.append(ResidueTerm(pole.location, j, coeff))
    return PartialFractionExpansion(tuple(terms), alpha0)


# --------------------------------------------------------------------------
# two-atom closed form


@dataclass(frozen=True)
class CubicCoefficients:
    a: float
    b: float
    c: float

    def __call__(self, lam):
        return lam**3 - self.a * lam**2 + self.b * lam - self.c


def two_atom_cubic(w1: float, w2: float, w: float, m: float, kappa_a: float, kappa_b: float) -> CubicCoefficients:
    """Coefficients of lambda^3 - A lambda^2 + B lambda - C for two atoms and one mode.

    A is the trace, B the sum of principal 2x2 minors and C the determinant of
    [[w1, m, kA], [m, w2, kB], [kA, kB, w]].
    """
    a = w + w1 + w2
    b = (w1 + w2) * w + w1 * w2 - m**2 - kappa_a**2 - kappa_b**2
    c = w1 * w2 * w + 2 * m * kappa_a * kappa_b - w1 * kappa_b**2 - w2 * kappa_a**2 - w * m**2
    return CubicCoefficients(a, b, c)


def _cardano(p: float, q: float) -> Array:
    """Roots of x^3 + p x + q as u w^k - p / (3 u w^k), w a cube root of unity.

    u^3 = (-9q + sqrt(12 p^3 + 81 q^2)) / 18, the branch being switched when
    it would vanish.
    """
    if p == 0 and q == 0:
        return np.zeros(3, dtype=complex)
    root = np.sqrt(complex(12 * p**3 + 81 * q**2))
    big = -9 * q + root
    if abs(big) < abs(-9 * q - root):
        big = -9 * q - root
    u = (big / 18) ** (1 / 3)
    unity = np.exp(2j * np.pi * np.arange(3) / 3)
    uk = u * unity
    return uk - p / (3 * uk)


def two_atom_eigenvalues(
    w1: float, w2: float, w: float, m: float, kappa_a: float, kappa_b: float, polish: int = 2
) -> Array:
    """The three dressed eigenvalues of two atoms sharing one mode, ascending.

    Solved in closed form through the depressed cubic; ``polish`` Newton
    steps on the original cubic remove the round-off of the radicals.
    """
    coeffs = two_atom_cubic(w1, w2, w, m, kappa_a, kappa_b)
    a, b = coeffs.a, coeffs.b
    # p and q are the cubic's coefficients after the shift lambda = x + A/3;
    # taking them from the shifted diagonal avoids cancellation in B - A^2/3.
    shift = a / 3
    entries = np.array([w1 - shift, w2 - shift, w - shift, m, kappa_a, kappa_b])
    size = float(np.abs(entries).max())
    if size == 0:
        return np.full(3, shift)
    # solve at unit scale so p^3 and q^2 neither underflow nor overflow
    shifted = two_atom_cubic(*(entries / size))
    p, q = shifted.b, -shifted.c
    roots = np.sort(_cardano(p, q).real * size + shift)
    for _ in range(polish):
        f = coeffs(roots)
        df = 3 * roots**2 - 2 * a * roots + b
        step = np.divide(f, df, out=np.zeros_like(f), where=np.abs(df) > 1e-14 * (1 + abs(b)))
        roots = roots - step
    return np.sort(roots)
