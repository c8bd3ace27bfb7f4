"""Recovered finite element method on triangular meshes.

A Galerkin method posed on element-wise discontinuous polynomials whose
bilinear form acts through a nodal-averaging recovery into a conforming
space, plus a stabilisation of the nonconformity.
"""
from .adapt import AdaptRecord, adapt_loop, mark_maximum
from .estimator import ErrorIndicators, compute_indicators, effectivity, lower_bound_ratio
from .fespace import FeFunction, FeSpace, build_space, error_norms
from .forms import ProblemSpec, StabSpec
from .mesh import Mesh, make_crisscross, make_lshape, refine, uniform_refine
from .recovery import RecoveryOp, build_recovery, identity_recovery
from .system import LinearSystem, build_fem_system, build_ipdg_system, build_rfem_system, solve

__version__ = "0.1.0"

__all__ = [
    "AdaptRecord",
    "ErrorIndicators",
    "FeFunction",
    "FeSpace",
    "LinearSystem",
    "Mesh",
    "ProblemSpec",
    "RecoveryOp",
    "StabSpec",
    "adapt_loop",
    "build_fem_system",
    "build_ipdg_system",
    "build_recovery",
    "build_rfem_system",
    "build_space",
    "compute_indicators",
    "effectivity",
    "error_norms",
    "identity_recovery",
    "lower_bound_ratio",
    "make_crisscross",
    "make_lshape",
    "mark_maximum",
    "refine",
    "solve",
    "uniform_refine",
]
