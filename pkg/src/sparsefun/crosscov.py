"""Cross-covariance surface estimation and functional singular components.

The cross-covariance C(s,t) = cov(X(s), Y(t)) is fitted from per-subject
products of centered X and Y observations by penalized least squares in the
tensor-product kernel space. The minimizer is a kernel expansion anchored at
the observed (S, T) points with one coefficient per within-subject pair, and
the coefficients solve a single symmetric linear system whose diagonal
carries the penalty.

Singular components of the fitted surface come from the integrated products
A_XY(s,t) = int C(s,u) C(t,u) du and its mirror: their eigensystems share
eigenvalues (the squared singular values) and yield the left and right
singular function families.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autocov import FittedSymSurface, _fve_count, orthonormal_polish
from .kernel import (
    GramBundle,
    KernelSpec,
    QuadratureRule,
    integrated_kernel_matrix,
    kernel_matrix,
    range_sqrt_factors,
    solve_sym,
    sym_eigh_desc,
)
from .meanfit import FittedFunction, LongitudinalSample


@dataclass(frozen=True)
class FittedSurface:
    """Kernel expansion C(s,t) = sum_ij A[i,j] K_X(s, S_i) K_Y(t, T_j).

    A has block-diagonal subject structure: entries pairing anchors of two
    different subjects are structurally zero. s_blocks/t_blocks record the
    per-subject anchor ranges as (start, stop) pairs.
    """

    s_anchors: np.ndarray
    t_anchors: np.ndarray
    a: np.ndarray
    spec_x: KernelSpec
    spec_y: KernelSpec
    s_blocks: tuple = field(default=())
    t_blocks: tuple = field(default=())

    def __post_init__(self) -> None:
        s = np.atleast_1d(np.asarray(self.s_anchors, dtype=float))
        t = np.atleast_1d(np.asarray(self.t_anchors, dtype=float))
        a = np.asarray(self.a, dtype=float)
        if a.shape != (s.size, t.size):
            raise ValueError("coefficient matrix shape must be (len(s_anchors), len(t_anchors))")
        object.__setattr__(self, "s_anchors", s)
        object.__setattr__(self, "t_anchors", t)
        object.__setattr__(self, "a", a)

    def evaluate_grid(self, s, t) -> np.ndarray:
        """C on the grid s x t, shape (len(s), len(t))."""
        es = kernel_matrix(self.spec_x, np.atleast_1d(s), self.s_anchors)
        et = kernel_matrix(self.spec_y, np.atleast_1d(t), self.t_anchors)
        return es @ self.a @ et.T

    def evaluate_at(self, s, t) -> np.ndarray:
        """Pointwise values C(s_i, t_i) for paired vectors."""
        es = kernel_matrix(self.spec_x, np.atleast_1d(s), self.s_anchors)
        et = kernel_matrix(self.spec_y, np.atleast_1d(t), self.t_anchors)
        return np.einsum("ij,jk,ik->i", es, self.a, et)

    def transpose(self) -> "FittedSurface":
        """The same surface with axes exchanged: C'(t,s) = C(s,t)."""
        return FittedSurface(s_anchors=self.t_anchors, t_anchors=self.s_anchors,
                             a=self.a.T, spec_x=self.spec_y, spec_y=self.spec_x,
                             s_blocks=self.t_blocks, t_blocks=self.s_blocks)


@dataclass(frozen=True)
class SingularSystem:
    """Squared singular values with paired singular function families.

    psi are X-side functions, phi Y-side; each family is L2-orthonormal.
    sigma2 is descending and clamped at zero; the function lists cover only
    the leading numerically trustworthy positive entries.
    """

    sigma2: np.ndarray
    psi: list[FittedFunction]
    phi: list[FittedFunction]


def pair_subjects(x_samples: list[LongitudinalSample],
                  y_samples: list[LongitudinalSample]):
    """Align Y samples to the X order by subject id; error on mismatch."""
    by_id = {}
    for s in y_samples:
        if s.subject_id in by_id:
            raise ValueError(f"duplicate subject id {s.subject_id!r} in Y samples")
        by_id[s.subject_id] = s
    seen = set()
    aligned = []
    for s in x_samples:
        if s.subject_id in seen:
            raise ValueError(f"duplicate subject id {s.subject_id!r} in X samples")
        seen.add(s.subject_id)
        if s.subject_id not in by_id:
            raise ValueError(f"subject {s.subject_id!r} has X observations but no Y observations")
        aligned.append(by_id.pop(s.subject_id))
    if by_id:
        missing = next(iter(by_id))
        raise ValueError(f"subject {missing!r} has Y observations but no X observations")
    return aligned


def _row_indices(x_samples, y_samples):
    """Global (S-anchor, T-anchor) index pairs of all within-subject product
    rows, with per-row m1*m2, in subject-major (j1 outer, j2 inner) order."""
    rows_s, rows_t, sizes = [], [], []
    s_off = t_off = 0
    s_blocks, t_blocks = [], []
    for sx, sy in zip(x_samples, y_samples):
        m1, m2 = len(sx), len(sy)
        rows_s.append(np.repeat(np.arange(s_off, s_off + m1), m2))
        rows_t.append(np.tile(np.arange(t_off, t_off + m2), m1))
        sizes.append(np.full(m1 * m2, m1 * m2))
        s_blocks.append((s_off, s_off + m1))
        t_blocks.append((t_off, t_off + m2))
        s_off += m1
        t_off += m2
    return (np.concatenate(rows_s), np.concatenate(rows_t),
            np.concatenate(sizes).astype(float), tuple(s_blocks), tuple(t_blocks))


def fit_crosscov(x_samples: list[LongitudinalSample], y_samples: list[LongitudinalSample],
                 mu_x: FittedFunction, mu_y: FittedFunction,
                 spec_x: KernelSpec, spec_y: KernelSpec, lam: float) -> FittedSurface:
    """Penalized least-squares cross-covariance surface.

    Minimizes
        sum_i w_i sum_{j,l} (d_ijl - C(S_ij, T_il))^2 + lam ||C||^2,
    d_ijl = (U_ij - mu_x(S_ij)) (V_il - mu_y(T_il)), w_i = 1/(n m1_i m2_i),
    over the tensor-kernel representer span. Coefficients solve the system
    whose row for pair (r,k,l) reads
        sum_{i,j1,j2} [K(S_rk,S_ij1) K(T_rl,T_ij2)
                       + lam n m1_i m2_i delta] a_ij1j2 = d_rkl.
    Requires lam > 0 and subjects paired by id between the two processes.
    """
    if not x_samples:
        raise ValueError("fit_crosscov needs at least one subject")
    if not lam > 0:
        raise ValueError(f"lambda must be strictly positive, got {lam}")
    y_aligned = pair_subjects(x_samples, y_samples)
    n = len(x_samples)
    s_anchors = np.concatenate([s.times for s in x_samples])
    t_anchors = np.concatenate([s.times for s in y_aligned])
    rx = np.concatenate([s.values - mu_x(s.times) for s in x_samples])
    ry = np.concatenate([s.values - mu_y(s.times) for s in y_aligned])
    rows_s, rows_t, sizes, s_blocks, t_blocks = _row_indices(x_samples, y_aligned)
    k_s = kernel_matrix(spec_x, s_anchors, s_anchors)
    k_t = kernel_matrix(spec_y, t_anchors, t_anchors)
    m = k_s[np.ix_(rows_s, rows_s)] * k_t[np.ix_(rows_t, rows_t)]
    d = rx[rows_s] * ry[rows_t]
    coef = solve_sym(m + lam * np.diag(n * sizes), d)
    a = np.zeros((s_anchors.size, t_anchors.size))
    a[rows_s, rows_t] = coef
    return FittedSurface(s_anchors=s_anchors, t_anchors=t_anchors, a=a,
                         spec_x=spec_x, spec_y=spec_y,
                         s_blocks=s_blocks, t_blocks=t_blocks)


def crosscov_loss(surface: FittedSurface, x_samples, y_samples,
                  mu_x: FittedFunction, mu_y: FittedFunction) -> float:
    """The fitting loss of a surface on given subjects: weighted squared error
    against centered cross products. Used for training-loss diagnostics and
    as the held-out cross-validation score."""
    y_aligned = pair_subjects(x_samples, y_samples)
    n = len(x_samples)
    rx = np.concatenate([s.values - mu_x(s.times) for s in x_samples])
    ry = np.concatenate([s.values - mu_y(s.times) for s in y_aligned])
    s_pts = np.concatenate([s.times for s in x_samples])
    t_pts = np.concatenate([s.times for s in y_aligned])
    rows_s, rows_t, sizes, _, _ = _row_indices(x_samples, y_aligned)
    es = kernel_matrix(surface.spec_x, s_pts, surface.s_anchors)
    et = kernel_matrix(surface.spec_y, t_pts, surface.t_anchors)
    fitted = np.einsum("ij,jk,ik->i", es[rows_s], surface.a, et[rows_t])
    d = rx[rows_s] * ry[rows_t]
    return float(np.sum((d - fitted) ** 2 / (n * sizes)))


def penalty_norm2(surface: FittedSurface) -> float:
    """Squared tensor-kernel norm ||C||^2 = sum_ij A_ij (K_S A K_T)_ij."""
    k_s = kernel_matrix(surface.spec_x, surface.s_anchors, surface.s_anchors)
    k_t = kernel_matrix(surface.spec_y, surface.t_anchors, surface.t_anchors)
    return float(np.sum(surface.a * (k_s @ surface.a @ k_t)))


def stationarity_residual(surface: FittedSurface, x_samples, y_samples,
                          mu_x: FittedFunction, mu_y: FittedFunction,
                          lam: float) -> float:
    """Maximum violation of the first-order optimality identity.

    At the exact solution, w_i (d_ijl - C(S_ij, T_il)) = lam * a_ijl for every
    within-subject pair, with w_i = 1/(n m1_i m2_i). Returns the largest
    absolute difference between the two sides over all pairs.
    """
    y_aligned = pair_subjects(x_samples, y_samples)
    n = len(x_samples)
    rx = np.concatenate([s.values - mu_x(s.times) for s in x_samples])
    ry = np.concatenate([s.values - mu_y(s.times) for s in y_aligned])
    rows_s, rows_t, sizes, _, _ = _row_indices(x_samples, y_aligned)
    k_s = kernel_matrix(surface.spec_x, surface.s_anchors, surface.s_anchors)
    k_t = kernel_matrix(surface.spec_y, surface.t_anchors, surface.t_anchors)
    fitted = np.einsum("ij,jk,ik->i", k_s[rows_s], surface.a, k_t[rows_t])
    d = rx[rows_s] * ry[rows_t]
    resid = (d - fitted) / (n * sizes) - lam * surface.a[rows_s, rows_t]
    return float(np.abs(resid).max())


def a_hat_surfaces(surface: FittedSurface, rule: QuadratureRule):
    """The integrated-product surfaces of a cross-covariance estimate.

    Returns (A_XY, A_YX) with A_XY(s,t) = int C(s,u) C(t,u) du over the
    Y axis and A_YX(s,t) = int C(u,s) C(u,t) du over the X axis; both are
    symmetric PSD kernel surfaces over the respective anchor sets.
    """
    p = integrated_kernel_matrix(surface.spec_x, surface.s_anchors, rule)
    q = integrated_kernel_matrix(surface.spec_y, surface.t_anchors, rule)
    a_xy = FittedSymSurface(anchors=surface.s_anchors,
                            coeff_matrix=surface.a @ q @ surface.a.T,
                            spec=surface.spec_x)
    a_yx = FittedSymSurface(anchors=surface.t_anchors,
                            coeff_matrix=surface.a.T @ p @ surface.a,
                            spec=surface.spec_y)
    return a_xy, a_yx


def singular_system(surface: FittedSurface, bundle: GramBundle,
                    k_max: int | None = None) -> SingularSystem:
    """Singular values and functions of a fitted cross-covariance surface.

    The squared singular values are the eigenvalues of P^{1/2} A Q A' P^{1/2}
    (equal to those of Q^{1/2} A' P A Q^{1/2}); X-side coefficient vectors
    apply the pseudo-inverse square root of P to the eigenvectors of the
    first matrix, Y-side ones apply Q's to the second. Both computed in the
    rank-revealing eigenbases so each family is exactly orthonormal. Signs
    are aligned so that the quadratic form psi' P A Q phi (the double
    integral of psi C phi) is nonnegative.
    """
    if k_max is not None and k_max < 1:
        raise ValueError(f"k_max must be at least 1, got {k_max}")
    p, q = bundle.P, bundle.Q
    if bundle.s_points is not None and not np.array_equal(bundle.s_points, surface.s_anchors):
        raise ValueError("bundle was built over different S anchors than the surface")
    if bundle.t_points is not None and not np.array_equal(bundle.t_points, surface.t_anchors):
        raise ValueError("bundle was built over different T anchors than the surface")
    if p.shape[0] != surface.s_anchors.size or q.shape[0] != surface.t_anchors.size:
        raise ValueError("bundle P/Q sizes do not match surface anchors")
    fp, fp_inv = range_sqrt_factors(p)
    fq, fq_inv = range_sqrt_factors(q)
    aq = surface.a @ q
    w1, g1 = sym_eigh_desc(fp.T @ (aq @ surface.a.T) @ fp)
    w2, g2 = sym_eigh_desc(fq.T @ (surface.a.T @ (p @ surface.a)) @ fq)
    n_pairs = min(surface.s_anchors.size, surface.t_anchors.size)
    w_full = np.concatenate([w1, np.zeros(max(0, n_pairs - w1.size))])[:n_pairs]
    k = _fve_count(w_full) if k_max is None else min(int(k_max), n_pairs)
    sigma2 = np.maximum(w_full[:k], 0.0)
    wmax = max(float(w1[0]) if w1.size else 0.0, 0.0)
    n_funcs = 0
    for j in range(min(k, w1.size, w2.size)):
        if wmax == 0.0 or w1[j] <= 1e-12 * wmax or w2[j] <= 1e-12 * wmax:
            break
        n_funcs = j + 1
    psi: list[FittedFunction] = []
    phi: list[FittedFunction] = []
    if n_funcs:
        c_psi = orthonormal_polish(fp_inv @ g1[:, :n_funcs], p)
        c_phi = orthonormal_polish(fq_inv @ g2[:, :n_funcs], q)
        pa_q = p @ aq
        for j in range(n_funcs):
            if float(c_psi[:, j] @ pa_q @ c_phi[:, j]) < 0.0:
                c_phi[:, j] = -c_phi[:, j]
            psi.append(FittedFunction(anchors=surface.s_anchors, coeffs=c_psi[:, j], spec=surface.spec_x))
            phi.append(FittedFunction(anchors=surface.t_anchors, coeffs=c_phi[:, j], spec=surface.spec_y))
    return SingularSystem(sigma2=sigma2, psi=psi, phi=phi)
