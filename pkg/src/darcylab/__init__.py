"""darcylab: a desk-scale laboratory for perforated-domain homogenization.

Builds periodically perforated boxes, solves Stokes and steady compressible
Stokes flow around the particles on staggered grids, measures resistance
matrices, Poincare and divergence-inverse scalings, assembles oscillating
test functions, and verifies the rescaled convergence to Darcy's law.
"""

__version__ = "0.1.0"

from .geometry import (CellRegion, DomainSpec, PerforationLattice,
                       ReferenceShape, RegionTag, build_lattice, classify,
                       classify_points, sigma, signed_distance)
from .grid import GridSpec, Mask, VectorField, div, grad, laplacian, norm
from .stokes import (SolverTolerances, StokesSolution, solve_stokes,
                     solve_weighted_constraint_stokes)
from .cellproblem import (CellSolution, ResistanceMatrix, brinkman_density,
                          compute_resistance, drag_matrix, solve_cell_problem)
from .functional import (BogovskiiResult, PoincareEstimate, bogovskii,
                         gamma_bregman_equiv, gamma_mean_equiv,
                         poincare_constant)
from .testfn import OscillatingTestFunction, audit_norms, build_testfn, h4_pairing
from .compressible import (CompressibleState, Forcing, ForcingSpec,
                           mass_flux_audit, pressure, solve_steady)
from .darcy import DarcySolution, solve_brinkman, solve_darcy
from .harness import (ConvergenceReport, EpsLadder, fit_rate,
                      run_darcy_convergence, run_h4_experiment,
                      run_scaling_sweeps, run_testfn_audit)
