"""Multiscale mixed-form Darcy solver with constraint-energy-minimizing
velocity bases and residual-driven online enrichment."""

from .grid import (TwoLevelMesh, Region, build_mesh, oversample_element,
                   node_neighborhood, restrict_dofs, whole_domain)
from .fields import (PermeabilityField, SourceField, load_raster, save_raster,
                     gen_field, box_source, compute_kappa_tilde)
from .pou import PartitionOfUnity, build_pou
from .fine_fem import FineSystem, FineSolution, assemble, solve_fine
from .kernels import SaddleOperator, factor_saddle, gen_eig_sym
from .aux_space import AuxBasis, build_aux, local_spectral
from .offline_basis import (BasisField, assemble_constrained_saddle,
                            build_offline_space, solve_cem_basis)
from .coarse_system import CoarseSpace, MsSolution, solve_coarse, energy_error
from .online import (OnlineState, ResidualData, compute_residuals, dual_norms,
                     mark, online_basis, iterate)
from .config import ExperimentConfig, load_config

__version__ = "0.1.0"
