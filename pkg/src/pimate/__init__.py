"""Single-excitation dynamics of a dipole-coupled atom chain sharing one photon mode.

Frequencies are in units of the single-atom decay rate gamma and lengths in
units of 1/k0.  The library is split into ``model`` (geometry, kernels and
the effective Hamiltonian), ``spectral`` (eigenvalue curves, crossings and
the Laplace-domain poles), ``dynamics`` (propagation and time averages) and
``estimation`` (Fisher information and disorder ensembles).
"""

__version__ = "0.1.0"

from .dynamics import (
    AmplitudeState,
    Trajectory,
    evolve,
    reconstruct_from_residues,
    time_averaged_population,
    time_averaged_populations,
    to_dicke_basis,
)
from .estimation import (
    Aggregation,
    PopulationModel,
    cramer_rao_bound,
    disorder_ensemble,
    fisher_information,
    fisher_sweep,
)
from .model import (
    PI,
    SIGMA,
    ChainGeometrySpec,
    ChainModel,
    DipoleOrientation,
    Dissipation,
    EffectiveHamiltonian,
    LongRange,
    NearestNeighbor,
    NNDisorder,
    SweepKind,
    SystemParams,
    build_hamiltonian,
    build_self_energy,
    dissipation_rate,
    ordered_chain,
    rddi_coupling,
    sample_chain,
)
from .spectral import (
    CrossingKind,
    SweepAxis,
    characteristic_poles,
    detect_crossings,
    eigen_sweep,
    residue_expansion,
    two_atom_eigenvalues,
)
