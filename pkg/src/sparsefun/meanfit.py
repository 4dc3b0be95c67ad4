"""Regularized mean-function estimation from pooled sparse observations.

The mean of a process observed as (time, value) fragments across subjects is
fitted by penalized least squares in the kernel's function space. By the
representer property the minimizer is a finite kernel expansion over the
pooled observation times, and the coefficients solve one symmetric linear
system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import KernelSpec, kernel_matrix, solve_sym


@dataclass(frozen=True)
class LongitudinalSample:
    """One subject's ragged (time, value) measurements for one process."""

    subject_id: object
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if t.ndim != 1 or v.ndim != 1 or t.shape != v.shape or t.size < 1:
            raise ValueError(f"subject {self.subject_id!r}: times and values must be equal-length 1-D arrays with at least one entry")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError(f"subject {self.subject_id!r}: non-finite time or value")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class FittedFunction:
    """Kernel expansion g(t) = sum_j coeffs_j K(t, anchors_j)."""

    anchors: np.ndarray
    coeffs: np.ndarray
    spec: KernelSpec

    def __post_init__(self) -> None:
        a = np.atleast_1d(np.asarray(self.anchors, dtype=float))
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if a.shape != c.shape or a.ndim != 1:
            raise ValueError("anchors and coeffs must be 1-D arrays of equal length")
        object.__setattr__(self, "anchors", a)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, t):
        return evaluate_function(self, t)


def evaluate_function(f: FittedFunction, t):
    """Evaluate a fitted kernel expansion at t (scalar or vector)."""
    e = kernel_matrix(f.spec, np.atleast_1d(np.asarray(t, dtype=float)), f.anchors)
    out = e @ f.coeffs
    return float(out[0]) if np.ndim(t) == 0 else out


def zero_function(spec: KernelSpec) -> FittedFunction:
    """The identically-zero function as a trivial kernel expansion."""
    mid = 0.5 * (spec.domain[0] + spec.domain[1])
    return FittedFunction(anchors=np.array([mid]), coeffs=np.array([0.0]), spec=spec)


def subject_weights(samples: list[LongitudinalSample]) -> np.ndarray:
    """Per-observation loss weights 1 / (n * m_i), expanded to the pooled vector."""
    n = len(samples)
    return np.concatenate([np.full(len(s), 1.0 / (n * len(s))) for s in samples])


def fit_mean(samples: list[LongitudinalSample], spec: KernelSpec, lam: float) -> FittedFunction:
    """Penalized least-squares mean over pooled observations.

    Minimizes sum_i (1/(n m_i)) sum_j (U_ij - g(S_ij))^2 + lam * ||g||^2 over
    the kernel's function space. The representer coefficients solve
    (G + lam * diag(n * m_i)) b = u with G the pooled Gram matrix; for equal
    m_i the diagonal is the usual N * lam * I.

    Parameters
    ----------
    samples : list of LongitudinalSample
        Observations for one process; each subject may have its own m_i.
    spec : KernelSpec
        Kernel order and domain.
    lam : float
        Nonnegative penalty weight.

    Returns
    -------
    FittedFunction
    """
    if not samples:
        raise ValueError("fit_mean needs at least one sample")
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    n = len(samples)
    times = np.concatenate([s.times for s in samples])
    values = np.concatenate([s.values for s in samples])
    spec.rescale(times)                      # domain check up front
    inv_w = np.concatenate([np.full(len(s), float(n * len(s))) for s in samples])
    g = kernel_matrix(spec, times, times)
    b = solve_sym(g + lam * np.diag(inv_w), values)
    return FittedFunction(anchors=times, coeffs=b, spec=spec)
