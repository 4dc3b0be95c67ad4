"""Sobolev reproducing kernel, Bernoulli polynomials, and quadrature.

Everything downstream is built from three ingredients defined here: the
kernel K_r on [0, 1], a Gauss-Legendre quadrature rule on [0, 1], and the
kernel integral matrices (Gram matrices and the P/Q matrices of integrated
kernel products) collected in a GramBundle.

The kernel of the order-r Sobolev space on [0, 1] is

    K_r(s, t) = B_r(s) B_r(t) / (r!)^2 + (-1)^(r-1) B_{2r}(|s - t|) / (2r)!

with B_r the r-th Bernoulli polynomial. User domains [a, b] are rescaled to
[0, 1] internally; all integrals are over the rescaled unit interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss


class NumericalError(RuntimeError):
    """A linear-algebra or conditioning failure past the jitter safeguards."""


def _bernoulli_coeff_table(max_degree: int) -> list[np.ndarray]:
    # B_0 = 1; B_r'(t) = r B_{r-1}(t); int_0^1 B_r = 0 for r >= 1.
    # Coefficients stored ascending (c[k] multiplies t^k).
    table = [np.array([1.0])]
    for r in range(1, max_degree + 1):
        prev = table[r - 1]
        coeffs = np.zeros(r + 1)
        coeffs[1:] = r * prev / np.arange(1, r + 1)
        coeffs[0] = -np.sum(coeffs[1:] / np.arange(2, r + 2))
        table.append(coeffs)
    return table


_MAX_ORDER = 4                     # kernel order r <= 4, so B_r up to degree 8
_BERNOULLI = _bernoulli_coeff_table(2 * _MAX_ORDER)


def bernoulli(r: int, t):
    """Evaluate the r-th Bernoulli polynomial B_r(t) for t in [0, 1].

    Parameters
    ----------
    r : int
        Polynomial index, 0 <= r <= 8.
    t : float or array_like
        Evaluation points in [0, 1].

    Returns
    -------
    float or ndarray
        B_r(t), scalar when t is scalar.
    """
    if not isinstance(r, (int, np.integer)) or r < 0:
        raise ValueError(f"bernoulli order must be a nonnegative integer, got {r!r}")
    if r > 2 * _MAX_ORDER:
        raise ValueError(f"bernoulli order {r} exceeds table maximum {2 * _MAX_ORDER}")
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError("bernoulli argument must lie in [0, 1]")
    coeffs = _BERNOULLI[r]
    # Horner in ascending coefficients.
    out = np.full_like(arr, coeffs[-1])
    for c in coeffs[-2::-1]:
        out = out * arr + c
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class KernelSpec:
    """Sobolev kernel of smoothness `order` on the interval `domain`.

    The domain is rescaled to [0, 1] internally; evaluations outside it
    raise ValueError.
    """

    order: int = 2
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if not isinstance(self.order, (int, np.integer)) or self.order < 1:
            raise ValueError(f"kernel order must be a positive integer, got {self.order!r}")
        if self.order > _MAX_ORDER:
            raise ValueError(f"kernel order {self.order} exceeds supported maximum {_MAX_ORDER}")
        a, b = float(self.domain[0]), float(self.domain[1])
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ValueError(f"domain must be a finite interval [a, b] with a < b, got {self.domain!r}")
        object.__setattr__(self, "domain", (a, b))

    def rescale(self, t) -> np.ndarray:
        """Map domain points to [0, 1], raising if any fall outside."""
        a, b = self.domain
        arr = np.asarray(t, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("evaluation points must be finite")
        u = (arr - a) / (b - a)
        # tolerate roundoff at the ends
        tol = 1e-12
        if np.any(u < -tol) or np.any(u > 1.0 + tol):
            raise ValueError(f"points outside kernel domain [{a}, {b}]")
        return np.clip(u, 0.0, 1.0)


def kernel_eval(spec: KernelSpec, s, t):
    """Evaluate the order-r Sobolev kernel K(s, t), broadcasting over arrays.

    K(s,t) = sum_{v=0}^{r} B_v(s)B_v(t)/(v!)^2 + (-1)^{r-1} B_{2r}(|s-t|)/(2r)!
    on the rescaled unit interval. The polynomial summands up to v = r-1
    reproduce the null space of the order-r roughness penalty (constants,
    linear trend, ...); without them no representer combination could carry a
    nonzero mean level, since the remaining part integrates to zero in each
    argument.
    """
    u = spec.rescale(s)
    v = spec.rescale(t)
    r = spec.order
    out = np.zeros(np.broadcast_shapes(np.shape(u), np.shape(v)))
    for nu in range(r + 1):
        fact2 = math.factorial(nu) ** 2
        out = out + bernoulli(nu, u) * bernoulli(nu, v) / fact2
    sign = 1.0 if r % 2 == 1 else -1.0
    out = out + sign * bernoulli(2 * r, np.abs(np.asarray(u) - np.asarray(v))) / math.factorial(2 * r)
    return out if np.ndim(out) else float(out)


def kernel_matrix(spec: KernelSpec, x, y) -> np.ndarray:
    """Matrix of K(x_i, y_j) for point vectors x, y."""
    u = np.atleast_1d(spec.rescale(x))
    v = np.atleast_1d(spec.rescale(y))
    r = spec.order
    out = np.zeros((u.size, v.size))
    for nu in range(r + 1):
        fact2 = math.factorial(nu) ** 2
        bu = np.atleast_1d(bernoulli(nu, u))
        bv = np.atleast_1d(bernoulli(nu, v))
        out += np.outer(bu, bv) / fact2
    sign = 1.0 if r % 2 == 1 else -1.0
    cross = np.abs(u[:, None] - v[None, :])
    out += sign * bernoulli(2 * r, cross) / math.factorial(2 * r)
    return out


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and weights for integration over [0, 1]."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size == 0:
            raise ValueError("nodes and weights must be 1-D arrays of equal positive length")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def integrate(self, values: np.ndarray) -> float:
        """Integrate a function given by its values at the nodes."""
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))


def gauss_legendre(q: int) -> QuadratureRule:
    """Q-point Gauss-Legendre rule mapped from [-1, 1] to [0, 1]."""
    if not isinstance(q, (int, np.integer)) or q < 1:
        raise ValueError(f"node count must be a positive integer, got {q!r}")
    x, w = leggauss(int(q))
    return QuadratureRule(nodes=(x + 1.0) / 2.0, weights=w / 2.0)


@dataclass(frozen=True)
class GramBundle:
    """Kernel matrices over two pooled point sets.

    K_S[i, j] = K_X(S_i, S_j) and P[i, j] = int_0^1 K_X(u, S_i) K_X(u, S_j) du
    over the first point set; K_T and Q are the analogues for the second set
    with its own kernel. P and Q are computed with the supplied quadrature
    rule and symmetrized.
    """

    K_S: np.ndarray
    K_T: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    s_points: np.ndarray = field(default=None, repr=False)
    t_points: np.ndarray = field(default=None, repr=False)

    def swapped(self) -> "GramBundle":
        """The same bundle with the two point sets exchanged."""
        return GramBundle(K_S=self.K_T, K_T=self.K_S, P=self.Q, Q=self.P,
                          s_points=self.t_points, t_points=self.s_points)


def integrated_kernel_matrix(spec: KernelSpec, points, rule: QuadratureRule) -> np.ndarray:
    """Matrix of int_0^1 K(u, x_i) K(u, x_j) du by quadrature, symmetrized."""
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    if pts.size == 0:
        raise ValueError("empty point set")
    a, b = spec.domain
    # rule nodes live on [0,1] = the rescaled domain; map back for kernel_matrix
    nodes_dom = a + (b - a) * rule.nodes
    e = kernel_matrix(spec, nodes_dom, pts)          # (Q, n)
    m = e.T @ (rule.weights[:, None] * e)
    return 0.5 * (m + m.T)


def gram_bundle(spec_x: KernelSpec, spec_y: KernelSpec, s_points, t_points,
                rule: QuadratureRule) -> GramBundle:
    """Kernel and integrated-kernel matrices over pooled S and T points."""
    s = np.atleast_1d(np.asarray(s_points, dtype=float))
    t = np.atleast_1d(np.asarray(t_points, dtype=float))
    if s.size == 0 or t.size == 0:
        raise ValueError("empty point set")
    k_s = kernel_matrix(spec_x, s, s)
    k_t = kernel_matrix(spec_y, t, t)
    p = integrated_kernel_matrix(spec_x, s, rule)
    q = integrated_kernel_matrix(spec_y, t, rule)
    return GramBundle(K_S=0.5 * (k_s + k_s.T), K_T=0.5 * (k_t + k_t.T),
                      P=p, Q=q, s_points=s, t_points=t)


# ---------------------------------------------------------------------------
# shared linear-algebra helpers
# ---------------------------------------------------------------------------

def add_jitter(m: np.ndarray) -> np.ndarray:
    """Gram-type stabilization: add 1e-10 * trace/n to the diagonal."""
    n = m.shape[0]
    return m + (1e-10 * np.trace(m) / n) * np.eye(n)


def solve_sym(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a symmetric system; jittered retry, then NumericalError.

    The plain solve comes first: penalized systems are positive definite, and
    answering them exactly keeps the fitted coefficients stationary for the
    penalized objective. Jitter is only a rescue for singular input.
    """
    try:
        return np.linalg.solve(m, rhs)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.solve(add_jitter(m), rhs)
    except np.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(m)) if m.size else float("inf")
        raise NumericalError(f"singular system after jitter (cond ~ {cond:.2e})") from exc


def sym_eigh_desc(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric eigendecomposition, eigenvalues descending."""
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return w[::-1].copy(), v[:, ::-1].copy()

def sym_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; negative roundoff eigenvalues clamp to 0."""
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(np.maximum(w, 0.0))) @ v.T


def sym_pinv_sqrt(m: np.ndarray, rcond: float = 1e-12) -> np.ndarray:
    """Pseudo-inverse square root; eigenvalues <= rcond * max contribute 0."""
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    wmax = float(w[-1]) if w.size else 0.0
    if wmax <= 0.0:
        raise NumericalError("matrix has no positive eigenvalues; pseudo-inverse square root undefined")
    cut = rcond * wmax
    inv = np.where(w > cut, 1.0 / np.sqrt(np.where(w > cut, w, 1.0)), 0.0)
    return (v * inv) @ v.T


def range_sqrt_factors(m: np.ndarray, rcond: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Rank-revealing square-root factors of a PSD matrix.

    Returns (F, Finv) with columns spanning the eigenspace of eigenvalues
    above rcond * max: F = V_r diag(sqrt(w_r)) satisfies F F' ~ M, and
    Finv = V_r diag(1/sqrt(w_r)) satisfies Finv' M Finv = I exactly. Working
    in this basis keeps eigenfunction families orthonormal to machine
    precision even when M is numerically rank-deficient.
    """
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    wmax = float(w[-1]) if w.size else 0.0
    if wmax <= 0.0:
        raise NumericalError("matrix has no positive eigenvalues")
    keep = w > rcond * wmax
    wk = w[keep]
    vk = v[:, keep]
    return vk * np.sqrt(wk), vk / np.sqrt(wk)


class RidgePathSolver:
    """Solutions of (M + lam * diag(d)) a = rhs for many lam at O(n^2) each.

    One symmetric eigendecomposition of D^{-1/2} M D^{-1/2} is done up front;
    each lam then costs a pair of matrix-vector products. Used by the
    cross-validation loops where the same system is solved on a lambda grid.
    """

    def __init__(self, m: np.ndarray, d: np.ndarray):
        d = np.asarray(d, dtype=float)
        if np.any(d <= 0):
            raise ValueError("diagonal weights must be positive")
        self._dinv_sqrt = 1.0 / np.sqrt(d)
        white = add_jitter(m) * np.outer(self._dinv_sqrt, self._dinv_sqrt)
        w, v = np.linalg.eigh(0.5 * (white + white.T))
        self._w = w
        self._v = v

    def solve(self, rhs: np.ndarray, lam: float) -> np.ndarray:
        y = self._v.T @ (self._dinv_sqrt * rhs)
        y = y / (self._w + lam)
        return self._dinv_sqrt * (self._v @ y)
