"""Long-range divisible sandpiles on the discrete torus.

Simulation (parallel toppling), spectral odometer solves, eigenvalue
asymptotics of the discrete fractional Laplacian and Monte Carlo scaling
experiments.
"""

from fracpile.torus import LatticeSpec, canonical, torus_diff, frequencies
from fracpile.kernel import (
    LongRangeKernel,
    LatticeConstant,
    apply_generator,
    build_kernel,
    lattice_constant,
    tail_bound,
)
from fracpile.spectrum import Spectrum, eigenvalues, eigenvalue_direct, limit_constant
from fracpile.sandpile import (
    SandpileState,
    StabilizationResult,
    init_deterministic,
    init_gaussian,
    stabilize,
    topple_step,
)
from fracpile.solver import (
    GreenTable,
    OdometerField,
    eta_covariance,
    green_function,
    sample_eta,
    spectral_odometer,
)

__version__ = "0.1.0"

__all__ = [
    "LatticeSpec",
    "canonical",
    "torus_diff",
    "frequencies",
    "LongRangeKernel",
    "LatticeConstant",
    "apply_generator",
    "build_kernel",
    "lattice_constant",
    "tail_bound",
    "Spectrum",
    "eigenvalues",
    "eigenvalue_direct",
    "limit_constant",
    "SandpileState",
    "StabilizationResult",
    "init_deterministic",
    "init_gaussian",
    "stabilize",
    "topple_step",
    "GreenTable",
    "OdometerField",
    "eta_covariance",
    "green_function",
    "sample_eta",
    "spectral_odometer",
]
