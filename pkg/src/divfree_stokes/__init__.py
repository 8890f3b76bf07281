"""Divergence-free H(div)-conforming DG discretization of 2D Stokes flow.

BDM1 velocities, P0 pressures and P2 stream functions form an exact
sequence, so the Stokes problem reduces to a symmetric positive definite
system for the stream function, solved by PCG with an auxiliary-space
preconditioner.
"""
from .assembly import AssemblyConfig
from .loads import Load, fixed_load, make_load, manufactured_load
from .mesh import (
    Mesh2D,
    MeshConformityError,
    MeshError,
    MeshFormatError,
    DegenerateElementError,
    coarse_lshape,
    coarse_square,
    generate_lshape,
    generate_square,
    load_mesh,
    red_refine,
    refine_levels,
    save_mesh,
)
from .norms import dg_norm, jump_seminorm, l2_norm
from .solver import PcgReport, SolverError, StokesSolution, StokesSystem, pcg, solve_stokes
from .spaces import Field, FeSpace, SpaceKind, build_space, build_trio
from .study import ConfigError, StudyConfig, StudyReport, emit, run_convergence_study, run_precond_study

__version__ = "0.1.0"
