"""Hermitian eigensolvers.

Dense decompositions back the unit-cell problems; in-window spectra of large
Dirichlet operators come from shift-invert Lanczos on top of a sparse
factorization whose signature certifies completeness: the number of
eigenvalues returned in a window must equal inertia(hi) - inertia(lo), which
distinguishes "no in-gap eigenvalue" from "the solver missed one".
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "EigenSolveSpec",
    "Spectrum",
    "Factorization",
    "SingularShiftError",
    "ConvergenceError",
    "dense_herm_eig",
    "sparse_factorize",
    "lanczos_shift_invert",
]

DENSE_GUARD = 4096


class SingularShiftError(RuntimeError):
    """Factorization breakdown: the shift sits on (or hugs) the spectrum."""


class ConvergenceError(RuntimeError):
    """Lanczos failed to account for every eigenvalue the inertia promises."""


@dataclass(frozen=True)
class EigenSolveSpec:
    """What to solve for: full spectrum, lowest k, or a real window."""

    mode: str = "window"            # dense | lowest_k | window
    sigma: float | None = None      # shift; defaults to the window midpoint
    window: tuple | None = None     # (lo, hi), required in window mode
    k: int = 6                      # count in lowest_k mode
    tol: float = 1e-9               # residual tolerance, relative to ||M||_1
    max_iter: int = 600
    seed: int = 0                   # deterministic start vectors

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.mode == "window":
            if self.window is None or not self.window[0] < self.window[1]:
                raise ValueError("window mode needs lo < hi")


@dataclass
class Spectrum:
    """Ascending eigenvalues with orthonormal eigenvectors and residuals."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray        # columns, Euclidean-orthonormal
    residuals: np.ndarray           # per-pair ||M v - lambda v||
    meta: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return self.eigenvalues.size

    def orthonormality_defect(self) -> float:
        if self.count == 0:
            return 0.0
        g = self.eigenvectors.conj().T @ self.eigenvectors
        return float(np.max(np.abs(g - np.eye(self.count))))


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real positive.

    Keeps eigenvectors of real matrices real (up to rounding) and makes
    solver output reproducible across runs.
    """
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=0)
    lead = vecs[idx, np.arange(vecs.shape[1])]
    phase = np.where(np.abs(lead) > 0, lead / np.maximum(np.abs(lead), 1e-300), 1.0)
    return vecs / phase


def _as_dense_hermitian(matrix) -> np.ndarray:
    m = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    if m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    if not np.array_equal(m, m.conj().T):
        deviation = np.max(np.abs(m - m.conj().T))
        raise ValueError(f"matrix is not entrywise Hermitian (max dev {deviation:.3e})")
    return m


def dense_herm_eig(matrix, subset: tuple | None = None) -> Spectrum:
    """Full (or index-subset) dense Hermitian eigendecomposition.

    Guards the dimension at 4096 and rejects non-Hermitian input entrywise.
    """
    m = _as_dense_hermitian(matrix)
    n = m.shape[0]
    if n > DENSE_GUARD:
        raise ValueError(f"dimension {n} exceeds dense guard {DENSE_GUARD}")
    if subset is None:
        w, v = sla.eigh(m)
    else:
        w, v = sla.eigh(m, subset_by_index=subset)
    v = _fix_phases(v)
    res = np.linalg.norm(m @ v - v * w, axis=0)
    return Spectrum(w, v, res, {"method": "dense"})


@dataclass
class Factorization:
    """Solve handle for (M - sigma I) exposing the factorization's inertia.

    The LU is taken in SuperLU's symmetric mode with diagonal pivoting
    disabled, so the pivot order is symmetric and sign(diag(U)) is the
    signature of the shifted matrix (Sylvester).  A factorization is only
    returned when those structural indicators hold; otherwise the shift is
    jittered and retried.
    """

    lu: object
    sigma: float
    matrix: sp.csr_matrix
    inertia: int                    # eigenvalues strictly below sigma
    n: int
    refine_tol: float = 1e-10

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = self.lu.solve(b.astype(complex))
        # one or two refinement sweeps reach 1e-10 even with mild pivot growth
        for _ in range(3):
            r = b - (self.matrix @ x - self.sigma * x)
            nr = np.linalg.norm(r)
            if nr <= self.refine_tol * max(1.0, np.linalg.norm(b)):
                break
            x = x + self.lu.solve(r)
        return x

    def residual(self, b: np.ndarray, x: np.ndarray) -> float:
        return float(np.linalg.norm(b - (self.matrix @ x - self.sigma * x)))


def sparse_factorize(matrix, sigma: float, _retries: int = 6) -> Factorization:
    """Factorize (M - sigma I), exposing solves and the inertia at sigma.

    Raises SingularShiftError when the shift cannot be factorized reliably
    even after jittering (callers treat that as "perturb and retry").
    """
    mat = matrix.tocsr() if sp.issparse(matrix) else sp.csr_matrix(matrix)
    n = mat.shape[0]
    scale = max(abs(sigma), float(abs(mat.diagonal()).max()), 1.0)
    shift = float(sigma)
    last_err = None
    for attempt in range(_retries):
        shifted = (mat - shift * sp.identity(n, dtype=complex, format="csr")).tocsc()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                lu = spla.splu(
                    shifted,
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True),
                )
            d = lu.U.diagonal()
            finite = np.all(np.isfinite(d.real)) and np.all(np.isfinite(d.imag))
            sym = np.array_equal(lu.perm_r, lu.perm_c)
            real_diag = np.abs(d.imag).max() <= 1e-7 * max(1.0, np.abs(d.real).max())
            nonzero = np.abs(d).min() > 0.0
            if finite and sym and real_diag and nonzero:
                fact = Factorization(
                    lu=lu,
                    sigma=shift,
                    matrix=mat,
                    inertia=int(np.count_nonzero(d.real < 0.0)),
                    n=n,
                )
                return fact
            last_err = RuntimeError(
                f"untrusted factorization at sigma={shift!r} "
                f"(sym={sym}, real_diag={real_diag}, nonzero={nonzero})"
            )
        except RuntimeError as err:  # SuperLU signals singularity this way
            last_err = err
        shift = float(sigma) + scale * 1e-9 * (10.0 ** attempt) * (1 if attempt % 2 == 0 else -1)
    raise SingularShiftError(
        f"factorization at sigma={sigma!r} failed after {_retries} attempts: {last_err}"
    ) from last_err


def _lanczos_window(matrix, lo, hi, m_target, tol, max_iter, seed):
    """Shift-invert Lanczos with full reorthogonalization on window (lo, hi).

    Converged in-window Ritz pairs are locked and deflated; fresh start
    vectors are drawn (seeded, hence reproducible) until the locked count
    matches the inertia target, which also resolves degenerate clusters a
    single Krylov sequence cannot see.
    """
    n = matrix.shape[0]
    sigma = 0.5 * (lo + hi)
    fact = sparse_factorize(matrix, sigma)
    norm1 = float(spla.norm(matrix, 1)) if sp.issparse(matrix) else float(np.linalg.norm(matrix, 1))
    rtol = tol * max(norm1, 1.0)

    rng = np.random.default_rng(seed)
    locked_vals: list[float] = []
    locked_vecs: list[np.ndarray] = []
    total_it = 0

    def orth_against(vec, frames):
        for _ in range(2):  # two sweeps of classical Gram-Schmidt
            for f in frames:
                if f:
                    block = np.stack(f, axis=1)
                    vec = vec - block @ (block.conj().T @ vec)
        return vec

    def lock(vals, vecs):
        for i in range(vals.size):
            v = orth_against(vecs[:, i], [locked_vecs])
            nv = np.linalg.norm(v)
            if nv < 0.5:
                continue  # already represented by a locked vector
            v = v / nv
            lam = float(np.real(np.vdot(v, matrix @ v)))
            if lo < lam < hi and np.linalg.norm(matrix @ v - lam * v) <= rtol:
                locked_vals.append(lam)
                locked_vecs.append(v)

    while total_it < max_iter and len(locked_vals) < m_target:
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v = orth_against(v, [locked_vecs])
        nv = np.linalg.norm(v)
        if nv < 1e-12:
            raise ConvergenceError("cannot start a Lanczos block orthogonal to locked space")
        basis = [v / nv]
        alphas: list[float] = []
        betas: list[float] = []
        while total_it < max_iter:
            total_it += 1
            w = fact.solve(basis[-1])
            alphas.append(float(np.real(np.vdot(basis[-1], w))))
            w = orth_against(w, [locked_vecs, basis])
            b = float(np.linalg.norm(w))
            k = len(alphas)
            budget_up = total_it >= max_iter or len(basis) + len(locked_vecs) >= n
            if b < 1e-9 or k % 5 == 0 or budget_up:
                th, s = sla.eigh_tridiagonal(np.asarray(alphas), np.asarray(betas))
                keep = np.abs(th) > 1e-13
                lam = sigma + 1.0 / th[keep]
                inwin = (lam > lo) & (lam < hi)
                if inwin.any():
                    vblock = np.stack(basis, axis=1)
                    cand_vecs = vblock @ s[:, keep][:, inwin]
                    cand_vals = lam[inwin]
                    res = np.linalg.norm(
                        matrix @ cand_vecs - cand_vecs * cand_vals, axis=0
                    )
                    good = res <= rtol
                    if (np.count_nonzero(good) + len(locked_vals) >= m_target) or b < 1e-9 or budget_up:
                        lock(cand_vals[good], cand_vecs[:, good])
                        if len(locked_vals) >= m_target:
                            break
                if b < 1e-9 or budget_up:
                    break  # restart with a fresh deflated vector
            if b < 1e-9:
                break
            betas.append(b)
            basis.append(w / b)

    if len(locked_vals) < m_target:
        raise ConvergenceError(
            f"window ({lo}, {hi}): inertia promises {m_target} eigenvalues, "
            f"Lanczos resolved {len(locked_vals)} within max_iter={max_iter}"
        )
    vals = np.asarray(locked_vals)
    vecs = np.stack(locked_vecs, axis=1)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    q, _ = np.linalg.qr(vecs)
    vecs = _fix_phases(q)
    res = np.linalg.norm(matrix @ vecs - vecs * vals, axis=0)
    return vals, vecs, res, total_it


def lanczos_shift_invert(matrix, spec: EigenSolveSpec) -> Spectrum:
    """Inertia-certified eigensolve of a sparse Hermitian matrix.

    window mode: every eigenvalue in (lo, hi) is returned; the count is
    verified against inertia(hi) - inertia(lo) computed from the shifted
    factorizations, so nothing can be silently missed.
    """
    mat = matrix.tocsr() if sp.issparse(matrix) else sp.csr_matrix(matrix)
    if spec.mode == "dense":
        return dense_herm_eig(mat)
    if spec.mode == "lowest_k":
        lo_est = float(spec.sigma) if spec.sigma is not None else -1.0
        # widen the window upward until it holds k eigenvalues
        hi = lo_est + 1.0
        for _ in range(60):
            n_hi = sparse_factorize(mat, hi).inertia
            if n_hi >= spec.k:
                break
            hi = lo_est + 2.0 * (hi - lo_est)
        else:
            raise ConvergenceError("lowest_k: failed to bracket k eigenvalues")
        win_spec = EigenSolveSpec(
            mode="window", window=(lo_est, hi), tol=spec.tol,
            max_iter=spec.max_iter, seed=spec.seed,
        )
        out = lanczos_shift_invert(mat, win_spec)
        return Spectrum(
            out.eigenvalues[: spec.k],
            out.eigenvectors[:, : spec.k],
            out.residuals[: spec.k],
            out.meta,
        )

    lo, hi = spec.window
    n_lo = sparse_factorize(mat, lo).inertia
    n_hi = sparse_factorize(mat, hi).inertia
    m_target = n_hi - n_lo
    if m_target == 0:
        empty = np.zeros(0)
        return Spectrum(
            empty,
            np.zeros((mat.shape[0], 0), dtype=complex),
            empty.copy(),
            {"method": "lanczos", "inertia": (n_lo, n_hi), "iterations": 0},
        )
    vals, vecs, res, its = _lanczos_window(
        mat, lo, hi, m_target, spec.tol, spec.max_iter, spec.seed
    )
    if vals.size != m_target:
        raise ConvergenceError(
            f"window ({lo}, {hi}): found {vals.size} eigenvalues, inertia says {m_target}"
        )
    return Spectrum(
        vals, vecs, res,
        {"method": "lanczos", "inertia": (n_lo, n_hi), "iterations": its},
    )
