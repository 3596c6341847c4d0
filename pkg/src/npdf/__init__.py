"""No-pair Dirac-Fock for atoms on radial grids, with executable checks of
the operator inequalities behind it."""

__version__ = "0.1.0"

from .spectral_core import HermitianOperator, Projector, eig, nenciu_perturb, spectral_function  # noqa: E402
from .radial_dirac import AtomParams, KappaChannel, build_coulomb_dirac, build_grid, sommerfeld_energy  # noqa: E402
from .mean_field import AtomModel, DensityMatrix, energy, q_form  # noqa: E402
from .nopair_scf import ConstraintSpec, ScfConfig, scf_solve  # noqa: E402
from .mittleman import SeaPair, frak_energy, self_consistent_projector  # noqa: E402

__all__ = [
    "__version__",
    "HermitianOperator",
    "Projector",
    "eig",
    "nenciu_perturb",
    "spectral_function",
    "AtomParams",
    "KappaChannel",
    "build_coulomb_dirac",
    "build_grid",
    "sommerfeld_energy",
    "AtomModel",
    "DensityMatrix",
    "energy",
    "q_form",
    "ConstraintSpec",
    "ScfConfig",
    "scf_solve",
    "SeaPair",
    "frak_energy",
    "self_consistent_projector",
]
