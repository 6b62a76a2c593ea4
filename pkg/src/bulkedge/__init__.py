"""Bulk and edge topological indices of 2D periodic divergence-form media.

The package assembles sparse Hermitian discretizations of L = -div(A grad)
for unit-periodic Hermitian positive-definite coefficient fields A, computes
Bloch band structures and gap Chern numbers, evaluates the finite-domain edge
index as a spectral trace under Dirichlet truncation, and cross-checks both
against Green-function representation formulas built on almost-analytic
functional calculus.
"""

from .coeff import CoefficientField, FamilyParams, FieldError, builtin_family, sample_matrix, verify_field
from .grid import (
    BlochOperator,
    CommutatorOps,
    DirichletOperator,
    DomainMask,
    MaskError,
    assemble_bloch,
    assemble_dirichlet,
    assemble_supercell,
    domain_mask,
    position_velocity_ops,
)
from .eig import (
    ConvergenceError,
    EigenSolveSpec,
    Factorization,
    SingularShiftError,
    Spectrum,
    dense_herm_eig,
    lanczos_shift_invert,
    sparse_factorize,
)
from .bulk import (
    BandStructure,
    BZGrid,
    ChernResult,
    GapInfo,
    LinkDeterminantError,
    NoGapError,
    chern_fhs,
    chern_projector,
    compute_bands,
    detect_gaps,
    find_gap,
)

__version__ = "0.1.0"
