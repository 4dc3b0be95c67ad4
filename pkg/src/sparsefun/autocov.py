"""Auto-covariance estimation for a single process and its eigensystem.

The covariance surface is fitted by penalized least squares on centered
within-subject product pairs, excluding same-index pairs: the raw product
(U_ij - mu(S_ij))^2 at j = k is biased upward by the measurement-error
variance, while products at distinct time indices are unbiased for the
covariance. The representer solution is a kernel expansion over pooled
observation times with a symmetric coefficient matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import (
    GramBundle,
    KernelSpec,
    kernel_matrix,
    range_sqrt_factors,
    solve_sym,
    sym_eigh_desc,
)
from .meanfit import FittedFunction, LongitudinalSample


@dataclass(frozen=True)
class FittedSymSurface:
    """Symmetric kernel expansion C(s,t) = sum_jk B[j,k] K(s,a_j) K(t,a_k)."""

    anchors: np.ndarray
    coeff_matrix: np.ndarray
    spec: KernelSpec

    def __post_init__(self) -> None:
        a = np.atleast_1d(np.asarray(self.anchors, dtype=float))
        b = np.asarray(self.coeff_matrix, dtype=float)
        if b.shape != (a.size, a.size):
            raise ValueError("coeff_matrix must be square over the anchors")
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "coeff_matrix", 0.5 * (b + b.T))

    def evaluate_grid(self, s, t) -> np.ndarray:
        """Surface values on the grid s x t (len(s) by len(t))."""
        es = kernel_matrix(self.spec, np.atleast_1d(s), self.anchors)
        et = kernel_matrix(self.spec, np.atleast_1d(t), self.anchors)
        return es @ self.coeff_matrix @ et.T

    def evaluate_at(self, s, t) -> np.ndarray:
        """Pointwise values C(s_i, t_i) for paired vectors."""
        es = kernel_matrix(self.spec, np.atleast_1d(s), self.anchors)
        et = kernel_matrix(self.spec, np.atleast_1d(t), self.anchors)
        return np.einsum("ij,jk,ik->i", es, self.coeff_matrix, et)


@dataclass(frozen=True)
class EigenSystem:
    """Descending eigenvalues with L2-orthonormal eigenfunctions.

    Eigenvalues are clamped at zero; eigenfunctions are kept only for the
    leading numerically trustworthy positive eigenvalues, so the function
    list may be shorter than the eigenvalue list.
    """

    eigenvalues: np.ndarray
    eigenfunctions: list[FittedFunction]


def _pair_index_arrays(samples: list[LongitudinalSample]):
    """Global anchor indices (first, second) of all ordered within-subject
    pairs j != k, plus the per-row subject sizes m_i."""
    first, second, sizes = [], [], []
    offset = 0
    for s in samples:
        m = len(s)
        if m >= 2:
            idx = np.arange(m)
            a, b = np.meshgrid(idx, idx, indexing="ij")
            keep = a != b
            first.append(offset + a[keep])
            second.append(offset + b[keep])
            sizes.append(np.full(m * (m - 1), m))
        offset += m
    if not first:
        raise ValueError("no subject has two or more observations; covariance is not identifiable")
    return np.concatenate(first), np.concatenate(second), np.concatenate(sizes)


def fit_autocov(samples: list[LongitudinalSample], mean: FittedFunction,
                spec: KernelSpec, lam: float) -> FittedSymSurface:
    """Penalized least-squares auto-covariance surface.

    Minimizes
        sum_i w_i sum_{j != k} (e_ij e_ik - C(S_ij, S_ik))^2 + lam ||C||^2
    with e_ij the mean-centered values and w_i = 1/(n m_i (m_i - 1)), over
    the tensor-kernel representer span. Subjects with m_i < 2 contribute no
    pairs. The coefficient system is (M + lam diag(1/w)) c = d with M the
    Gram matrix of kernel-product sections at the data pairs.
    """
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    n = len(samples)
    anchors = np.concatenate([s.times for s in samples])
    resid = np.concatenate([s.values - mean(s.times) for s in samples])
    first, second, sizes = _pair_index_arrays(samples)
    k = kernel_matrix(spec, anchors, anchors)
    m = k[np.ix_(first, first)] * k[np.ix_(second, second)]
    d = resid[first] * resid[second]
    inv_w = n * sizes * (sizes - 1.0)
    c = solve_sym(m + lam * np.diag(inv_w), d)
    b = np.zeros((anchors.size, anchors.size))
    b[first, second] = c
    return FittedSymSurface(anchors=anchors, coeff_matrix=b, spec=spec)


def pair_loss(surface: FittedSymSurface, samples: list[LongitudinalSample],
              mean: FittedFunction) -> float:
    """The fitting loss of a surface on (held-out) subjects: weighted squared
    error of C against centered off-diagonal product pairs."""
    n = len(samples)
    times = np.concatenate([s.times for s in samples])
    resid = np.concatenate([s.values - mean(s.times) for s in samples])
    first, second, sizes = _pair_index_arrays(samples)
    e = kernel_matrix(surface.spec, times, surface.anchors)
    fitted = np.einsum("ij,jk,ik->i", e[first], surface.coeff_matrix, e[second])
    d = resid[first] * resid[second]
    w = 1.0 / (n * sizes * (sizes - 1.0))
    return float(np.sum(w * (d - fitted) ** 2))


def penalty_norm2(surface: FittedSymSurface) -> float:
    """Squared tensor-kernel space norm of the surface, ||C||^2 = vec(B)' (K (x) K) vec(B)."""
    k = kernel_matrix(surface.spec, surface.anchors, surface.anchors)
    kb = k @ surface.coeff_matrix @ k
    return float(np.sum(surface.coeff_matrix * kb))


def orthonormal_polish(coeffs: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Symmetric (Loewdin) re-orthonormalization of coefficient columns in the
    inner product induced by p. The Gram matrix is near-identity, so two
    corrections reach machine precision; the symmetric form perturbs each
    column minimally."""
    for _ in range(2):
        gram = coeffs.T @ p @ coeffs
        w, v = np.linalg.eigh(0.5 * (gram + gram.T))
        inv_root = (v / np.sqrt(np.maximum(w, 1e-30))) @ v.T
        coeffs = coeffs @ inv_root
    return coeffs


def _fve_count(values: np.ndarray, threshold: float = 0.999, cap: int = 20) -> int:
    pos = values[values > 0]
    if pos.size == 0:
        return 1
    frac = np.cumsum(pos) / np.sum(pos)
    k = int(np.searchsorted(frac, threshold) + 1)
    return min(k, cap, pos.size)


def eigensystem(surface: FittedSymSurface, bundle: GramBundle,
                k_max: int | None = None) -> EigenSystem:
    """Eigenvalues and L2-orthonormal eigenfunctions of the surface.

    With P the integrated-kernel matrix over the surface anchors (bundle.P),
    the eigenvalues are those of P^{1/2} B P^{1/2} and the eigenfunction
    coefficient vectors are P^{-1/2} times its eigenvectors. Negative
    eigenvalues are clamped to zero and carry no eigenfunction. When k_max is
    None, the count is the smallest k explaining 99.9% of the positive
    spectrum, capped at 20.
    """
    if k_max is not None and k_max < 1:
        raise ValueError(f"k_max must be at least 1, got {k_max}")
    p = bundle.P
    if bundle.s_points is not None and not np.array_equal(bundle.s_points, surface.anchors):
        raise ValueError("bundle was built over different anchors than the surface")
    if p.shape[0] != surface.anchors.size:
        raise ValueError("bundle P size does not match surface anchors")
    # P^{1/2} B P^{1/2} computed in the rank-revealing eigenbasis of P, so
    # coefficient vectors Finv G (the pseudo-inverse square root applied to
    # the eigenvectors) give an exactly orthonormal family
    f, finv = range_sqrt_factors(p)
    w, g = sym_eigh_desc(f.T @ surface.coeff_matrix @ f)
    n_anchor = surface.anchors.size
    w_full = np.concatenate([w, np.zeros(n_anchor - w.size)])
    k = _fve_count(w_full) if k_max is None else min(int(k_max), n_anchor)
    values = np.maximum(w_full[:k], 0.0)
    wmax = max(float(w[0]), 0.0) if w.size else 0.0
    n_funcs = 0
    for j in range(min(k, w.size)):
        if wmax == 0.0 or w[j] <= 1e-12 * wmax:
            break
        n_funcs = j + 1
    funcs: list[FittedFunction] = []
    if n_funcs:
        coeffs = orthonormal_polish(finv @ g[:, :n_funcs], p)
        funcs = [FittedFunction(anchors=surface.anchors, coeffs=coeffs[:, j], spec=surface.spec)
                 for j in range(n_funcs)]
    return EigenSystem(eigenvalues=values, eigenfunctions=funcs)
