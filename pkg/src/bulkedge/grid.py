"""Sparse Hermitian discretizations of the divergence-form operator.

Assembles the quasi-periodic cell operator, the Dirichlet restriction to a
masked finite domain, a periodic supercell variant, and the position /
velocity observables.  All operators come out *entrywise* Hermitian: the flux
form pairs conjugated off-diagonal samples, and the assembled matrix is
symmetrized bitwise, so downstream exactness tests (real spectra,
anti-Hermitian commutators) carry no tolerance.

Conventions: unit cell (0,1)^2 with n nodes per side and spacing h = 1/n;
the quasi-periodic phase sits on wrap-around links only; finite domains are
origin-centered and share the same spacing so the bulk medium is sampled
identically in both problems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from .coeff import CoefficientField

__all__ = [
    "CellGrid",
    "BlochOperator",
    "DomainMask",
    "DirichletOperator",
    "CommutatorOps",
    "MaskError",
    "assemble_bloch",
    "assemble_supercell",
    "domain_mask",
    "assemble_dirichlet",
    "position_velocity_ops",
]

MASK_SHAPES = ("disk", "smooth_blob", "square")


class MaskError(ValueError):
    """Raised when a domain mask has no interior nodes."""


@dataclass(frozen=True)
class CellGrid:
    """Uniform grid with spacing h = 1/n covering a square of side `length`."""

    n: int          # nodes per unit length
    length: float   # side of the covered square (1 for the unit cell)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def n_side(self) -> int:
        return int(round(self.n * self.length))


@dataclass(frozen=True)
class BlochOperator:
    """Sparse Hermitian realization of the cell operator at momentum kappa."""

    kappa: tuple
    matrix: sp.csr_matrix
    grid: CellGrid

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class DirichletOperator:
    """Flux-form operator restricted to the interior of a DomainMask."""

    matrix: sp.csr_matrix
    mask: "DomainMask"
    field: CoefficientField

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _hermitize(k: sp.spmatrix) -> sp.csr_matrix:
    """Bitwise-exact Hermitian part (K + K^H) / 2.

    The assembled products are Hermitian up to summation-order rounding;
    averaging with the adjoint makes conjugate symmetry an identity of the
    stored entries, not a tolerance.
    """
    k = k.tocsr()
    h = (k + k.conjugate().transpose().tocsr()) * 0.5
    h.sort_indices()
    return h


def _shift(n1: int, n2: int, axis: int, phase: complex) -> sp.csr_matrix:
    """Forward shift by one node along `axis` with `phase` on wrap links.

    Acts on vectors indexed by idx(i, j) = i * n2 + j.
    """
    if axis == 0:
        i = np.repeat(np.arange(n1), n2)
        j = np.tile(np.arange(n2), n1)
        ip = (i + 1) % n1
        data = np.where(i == n1 - 1, phase, 1.0 + 0.0j)
        rows = i * n2 + j
        cols = ip * n2 + j
    else:
        i = np.repeat(np.arange(n1), n2)
        j = np.tile(np.arange(n2), n1)
        jp = (j + 1) % n2
        data = np.where(j == n2 - 1, phase, 1.0 + 0.0j)
        rows = i * n2 + j
        cols = i * n2 + jp
    m = n1 * n2
    return sp.csr_matrix((data, (rows, cols)), shape=(m, m))


def _periodic_flux_operator(field, n_side, h, phase1, phase2, x0=0.0):
    """Flux-form operator on an n_side^2 periodic grid.

    Diagonal coefficient blocks are sampled at edge midpoints, the
    off-diagonal block at cell centers with the forward differences averaged
    to the centers; the conjugated sample enters at identical points, so
    Hermiticity is structural.
    """
    dim = n_side * n_side
    eye = sp.identity(dim, dtype=complex, format="csr")
    s1 = _shift(n_side, n_side, 0, phase1)
    s2 = _shift(n_side, n_side, 1, phase2)
    d1 = (s1 - eye) * (1.0 / h)
    d2 = (s2 - eye) * (1.0 / h)
    avg1 = (s1 + eye) * 0.5
    avg2 = (s2 + eye) * 0.5
    c1 = avg2 @ d1
    c2 = avg1 @ d2

    i = np.repeat(np.arange(n_side), n_side)
    j = np.tile(np.arange(n_side), n_side)
    xe1, ye1 = x0 + (i + 0.5) * h, x0 + j * h          # x-edge midpoints
    xe2, ye2 = x0 + i * h, x0 + (j + 0.5) * h          # y-edge midpoints
    xc, yc = x0 + (i + 0.5) * h, x0 + (j + 0.5) * h    # cell centers

    a11 = field.a0(xe1, ye1)
    a22 = field.a0(xe2, ye2)
    a12 = 1j * field.gamma(xc, yc)

    m11 = sp.diags(a11.astype(complex))
    m22 = sp.diags(a22.astype(complex))
    k = d1.conjugate().transpose() @ (m11 @ d1)
    k = k + d2.conjugate().transpose() @ (m22 @ d2)
    if np.any(a12 != 0):
        m12 = sp.diags(a12)
        m21 = sp.diags(np.conj(a12))
        k = k + c1.conjugate().transpose() @ (m12 @ c2)
        k = k + c2.conjugate().transpose() @ (m21 @ c1)
    return _hermitize(k)


def assemble_bloch(field: CoefficientField, n: int, kappa) -> BlochOperator:
    """Assemble the quasi-periodic cell operator at momentum kappa.

    The forward differences carry the phase e^{i kappa_i} on wrap-around
    links (quasi-periodic convention on the eigenfunction itself), so the
    matrix is exactly 2*pi-periodic in each kappa component.
    """
    if n < 4:
        raise ValueError(f"unit-cell resolution n={n} too small (need n >= 4)")
    k1, k2 = float(kappa[0]), float(kappa[1])
    mat = _periodic_flux_operator(
        field, n, 1.0 / n, np.exp(1j * k1), np.exp(1j * k2)
    )
    return BlochOperator((k1, k2), mat, CellGrid(n, 1.0))


def assemble_supercell(field: CoefficientField, cells: int, n: int) -> BlochOperator:
    """Periodic operator on a cells x cells block of unit cells.

    Periodic boundary conditions at the supercell edges; the spectrum folds
    the Bloch bands at kappa in {2 pi k / cells} and the bulk gap stays empty
    of eigenvalues, which makes this the edge-free stand-in for the
    whole-space resolvent in Green-function decay probes.
    """
    if cells < 1:
        raise ValueError("cells must be a positive integer")
    mat = _periodic_flux_operator(field, cells * n, 1.0 / n, 1.0 + 0j, 1.0 + 0j)
    return BlochOperator((0.0, 0.0), mat, CellGrid(n, float(cells)))


def _inside(shape: str, x: np.ndarray, y: np.ndarray, L: float) -> np.ndarray:
    if shape == "disk":
        return np.hypot(x, y) < L
    if shape == "smooth_blob":
        r = np.hypot(x, y)
        theta = np.arctan2(y, x)
        return r < L * (1.0 + 0.3 * np.cos(3.0 * theta))
    if shape == "square":
        return np.maximum(np.abs(x), np.abs(y)) < L
    raise ValueError(f"unknown mask shape {shape!r}; choose from {MASK_SHAPES}")


@dataclass(frozen=True)
class DomainMask:
    """Interior nodes of the scaled domain L*Omega on the h = 1/n grid.

    Node coordinates are origin-centered integer multiples of h (the origin
    itself is always a node).  `boundary_distance` is the Euclidean distance,
    in physical units, from each interior node to the nearest exterior node.
    The square shape has a non-smooth boundary and is accepted for
    diagnostics only (`smooth_boundary` is False).
    """

    shape: str
    L: float
    n: int
    ii: np.ndarray        # integer x-coordinates (units of h), origin-centered
    jj: np.ndarray
    area: float
    boundary_distance: np.ndarray
    smooth_boundary: bool

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def count(self) -> int:
        return self.ii.size

    def coords(self):
        """Physical (x1, x2) coordinates of the interior nodes."""
        return self.ii * self.h, self.jj * self.h


def domain_mask(shape: str, L: float, n: int) -> DomainMask:
    """Mask the grid nodes strictly inside the scaled shape L*Omega.

    Shapes: disk of radius 1, smooth_blob with polar radius
    1 + 0.3 cos(3 theta), square of side 2 (non-smooth, diagnostics only).
    """
    if L <= 0:
        raise ValueError("L must be positive")
    h = 1.0 / n
    bound = L * (1.3 if shape == "smooth_blob" else 1.0)
    m = int(np.floor(bound / h)) + 1
    idx = np.arange(-m, m + 1)
    I, Jg = np.meshgrid(idx, idx, indexing="ij")
    inside = _inside(shape, I * h, Jg * h, L)
    if not inside.any():
        raise MaskError(f"no interior node: {shape} with L={L} at n={n} is empty")
    dist = ndimage.distance_transform_edt(inside) * h
    ii = I[inside].astype(np.int64)
    jj = Jg[inside].astype(np.int64)
    return DomainMask(
        shape=shape,
        L=float(L),
        n=int(n),
        ii=ii,
        jj=jj,
        area=float(ii.size * h * h),
        boundary_distance=dist[inside],
        smooth_boundary=shape != "square",
    )


def assemble_dirichlet(field: CoefficientField, mask: DomainMask) -> DirichletOperator:
    """Flux-form operator on the mask interior with Dirichlet conditions.

    The operator is assembled on a one-node-padded bounding box with values
    outside the box treated as zero, then restricted to the interior rows and
    columns (the discrete analogue of extension by zero).
    """
    h = mask.h
    i0, i1 = int(mask.ii.min()) - 1, int(mask.ii.max()) + 1
    j0, j1 = int(mask.jj.min()) - 1, int(mask.jj.max()) + 1
    bx, by = i1 - i0 + 1, j1 - j0 + 1
    nodes = bx * by

    def node_id(i, j):
        return (i - i0) * by + (j - j0)

    # forward differences on the open box (no wrap; exterior of the box only
    # ever multiplies zero once the restriction is applied)
    i = np.repeat(np.arange(bx - 1), by)
    j = np.tile(np.arange(by), bx - 1)
    e1_rows = i * by + j
    d1 = sp.csr_matrix(
        (
            np.concatenate([np.full(e1_rows.size, 1.0 / h), np.full(e1_rows.size, -1.0 / h)]),
            (
                np.concatenate([e1_rows, e1_rows]),
                np.concatenate([(i + 1) * by + j, i * by + j]),
            ),
        ),
        shape=((bx - 1) * by, nodes),
        dtype=complex,
    )
    i = np.repeat(np.arange(bx), by - 1)
    j = np.tile(np.arange(by - 1), bx)
    e2_rows = i * (by - 1) + j
    d2 = sp.csr_matrix(
        (
            np.concatenate([np.full(e2_rows.size, 1.0 / h), np.full(e2_rows.size, -1.0 / h)]),
            (
                np.concatenate([e2_rows, e2_rows]),
                np.concatenate([i * by + (j + 1), i * by + j]),
            ),
        ),
        shape=(bx * (by - 1), nodes),
        dtype=complex,
    )
    # averaging from edges to cell centers, center (i+1/2, j+1/2) <-> (i, j)
    i = np.repeat(np.arange(bx - 1), by - 1)
    j = np.tile(np.arange(by - 1), bx - 1)
    c_rows = i * (by - 1) + j
    a1c = sp.csr_matrix(
        (
            np.full(2 * c_rows.size, 0.5),
            (
                np.concatenate([c_rows, c_rows]),
                np.concatenate([i * by + j, i * by + (j + 1)]),
            ),
        ),
        shape=((bx - 1) * (by - 1), (bx - 1) * by),
        dtype=complex,
    )
    a2c = sp.csr_matrix(
        (
            np.full(2 * c_rows.size, 0.5),
            (
                np.concatenate([c_rows, c_rows]),
                np.concatenate([i * (by - 1) + j, (i + 1) * (by - 1) + j]),
            ),
        ),
        shape=((bx - 1) * (by - 1), bx * (by - 1)),
        dtype=complex,
    )
    c1 = a1c @ d1
    c2 = a2c @ d2

    # coefficient samples at physical coordinates (the field is periodic)
    ie = np.repeat(np.arange(bx - 1), by)
    je = np.tile(np.arange(by), bx - 1)
    a11 = field.a0((i0 + ie + 0.5) * h, (j0 + je) * h)
    ie = np.repeat(np.arange(bx), by - 1)
    je = np.tile(np.arange(by - 1), bx)
    a22 = field.a0((i0 + ie) * h, (j0 + je + 0.5) * h)
    ic = np.repeat(np.arange(bx - 1), by - 1)
    jc = np.tile(np.arange(by - 1), bx - 1)
    a12 = 1j * field.gamma((i0 + ic + 0.5) * h, (j0 + jc + 0.5) * h)

    k = d1.conjugate().transpose() @ (sp.diags(a11.astype(complex)) @ d1)
    k = k + d2.conjugate().transpose() @ (sp.diags(a22.astype(complex)) @ d2)
    if np.any(a12 != 0):
        k = k + c1.conjugate().transpose() @ (sp.diags(a12) @ c2)
        k = k + c2.conjugate().transpose() @ (sp.diags(np.conj(a12)) @ c1)
    k = _hermitize(k)

    sel = node_id(mask.ii, mask.jj)
    mat = k[sel][:, sel].tocsr()
    mat.sort_indices()
    return DirichletOperator(mat, mask, field)


@dataclass(frozen=True)
class CommutatorOps:
    """Position observables and their exact commutators with the operator.

    X1, X2 are real diagonal position matrices (origin-centered coordinates);
    V_i = [L, X_i] is computed entrywise as L_rc * (x_c - x_r) on the sparsity
    pattern of L, which keeps V_i^H = -V_i and the Jacobi identity
    X1 V2 - X2 V1 = V2 X1 - V1 X2 exact at machine level.
    """

    x1: np.ndarray
    x2: np.ndarray
    v1: sp.csr_matrix
    v2: sp.csr_matrix

    def x1_diag(self) -> sp.csr_matrix:
        return sp.diags(self.x1).tocsr()

    def x2_diag(self) -> sp.csr_matrix:
        return sp.diags(self.x2).tocsr()

    def angular_observable(self) -> sp.csr_matrix:
        """The Hermitian circulation observable i (X1 V2 - X2 V1)."""
        m = sp.diags(self.x1) @ self.v2 - sp.diags(self.x2) @ self.v1
        return (1j * m).tocsr()


def _entrywise_commutator(mat: sp.csr_matrix, x: np.ndarray) -> sp.csr_matrix:
    coo = mat.tocoo()
    data = coo.data * (x[coo.col] - x[coo.row])
    v = sp.csr_matrix((data, (coo.row, coo.col)), shape=mat.shape)
    v.sort_indices()
    return v


def position_velocity_ops(op: DirichletOperator) -> CommutatorOps:
    """Build X_i and V_i = [L, X_i] for a Dirichlet operator."""
    x1, x2 = op.mask.coords()
    return CommutatorOps(
        x1=x1,
        x2=x2,
        v1=_entrywise_commutator(op.matrix, x1),
        v2=_entrywise_commutator(op.matrix, x2),
    )
