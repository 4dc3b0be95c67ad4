"""Cross-validation for penalty parameters, surface error metrics, and
trimmed-mean aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil

import numpy as np

from .kernel import NumericalError, QuadratureRule

DEFAULT_LAMBDA_GRID = np.logspace(-8.0, 0.0, 20)


@dataclass(frozen=True)
class CVPlan:
    """K-fold partition of subject ids plus the lambda grid to search."""

    folds: tuple
    lambda_grid: np.ndarray
    seed: int | None = None

    def __post_init__(self) -> None:
        if len(self.folds) < 2:
            raise ValueError("cross-validation needs at least 2 folds")
        all_ids = [i for fold in self.folds for i in fold]
        if len(all_ids) != len(set(all_ids)):
            raise ValueError("folds overlap")
        if any(len(fold) == 0 for fold in self.folds):
            raise ValueError("empty fold")
        grid = np.atleast_1d(np.asarray(self.lambda_grid, dtype=float))
        if grid.size == 0 or np.any(grid <= 0):
            raise ValueError("lambda grid must be nonempty and positive")
        if np.any(np.diff(grid) < 0):
            raise ValueError("lambda grid must be ascending")
        object.__setattr__(self, "folds", tuple(tuple(f) for f in self.folds))
        object.__setattr__(self, "lambda_grid", grid)


def make_cv_plan(subject_ids, n_folds: int = 5, seed: int = 0,
                 lambda_grid=None) -> CVPlan:
    """Random K-fold partition of the ids, reproducible from the seed."""
    ids = list(subject_ids)
    if len(ids) < n_folds:
        raise ValueError(f"cannot split {len(ids)} subjects into {n_folds} folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    folds = [tuple(shuffled[j::n_folds]) for j in range(n_folds)]
    grid = DEFAULT_LAMBDA_GRID if lambda_grid is None else lambda_grid
    return CVPlan(folds=tuple(folds), lambda_grid=grid, seed=seed)


def crossval_lambda(data, fit, plan: CVPlan) -> float:
    """Grid lambda minimizing the mean held-out loss across folds.

    Parameters
    ----------
    data : mapping
        subject_id -> payload; payloads are opaque to this function.
    fit : callable
        fit(train, lam) -> fitted object exposing heldout_loss(test), where
        train and test are sub-mappings of `data`. Within one fold the same
        train mapping object is passed for every grid value, so fit may cache
        per-fold state keyed on its identity.
    plan : CVPlan
        Folds over the subject ids of `data` and the lambda grid.

    Ties are broken toward the larger lambda. A fold where every grid value
    fails to fit raises NumericalError; isolated failures score as +inf.
    """
    grid = plan.lambda_grid
    losses = np.zeros((len(plan.folds), grid.size))
    for fold_idx, fold in enumerate(plan.folds):
        test_ids = set(fold)
        train = {k: v for k, v in data.items() if k not in test_ids}
        test = {k: data[k] for k in fold}
        if not train:
            raise ValueError(f"fold {fold_idx} leaves no training subjects")
        ok = False
        for lam_idx, lam in enumerate(grid):
            try:
                fitted = fit(train, float(lam))
                losses[fold_idx, lam_idx] = fitted.heldout_loss(test)
                ok = True
            except (NumericalError, np.linalg.LinAlgError):
                losses[fold_idx, lam_idx] = np.inf
        if not ok:
            raise NumericalError(
                f"all fits failed on fold {fold_idx} (lambda grid {grid[0]:.3g}..{grid[-1]:.3g})")
    means = losses.mean(axis=0)
    best = means.size - 1 - int(np.argmin(means[::-1]))   # ties -> larger lambda
    return float(grid[best])


@dataclass(frozen=True)
class ErrorReport:
    """Integrated squared and absolute error between two surfaces."""

    mise: float
    miae: float

    def __post_init__(self) -> None:
        if not (self.mise >= 0 and self.miae >= 0):
            raise ValueError("error metrics must be nonnegative")


def _grid_values(surface, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    if hasattr(surface, "evaluate_grid"):
        return np.asarray(surface.evaluate_grid(s, t), dtype=float)
    ss, tt = np.meshgrid(s, t, indexing="ij")
    return np.asarray(surface(ss, tt), dtype=float)


def surface_error(est, truth, rule: QuadratureRule) -> ErrorReport:
    """Quadrature MISE and MIAE between two surfaces on the unit square.

    Both arguments are either objects with evaluate_grid(s, t) or callables
    broadcasting over coordinate arrays.
    """
    nodes, w = rule.nodes, rule.weights
    diff = _grid_values(est, nodes, nodes) - _grid_values(truth, nodes, nodes)
    mise = float(w @ (diff ** 2) @ w)
    miae = float(w @ np.abs(diff) @ w)
    return ErrorReport(mise=mise, miae=miae)


def trimmed_mean(values, trim_fraction: float) -> float:
    """Mean after dropping the ceil(trim_fraction * len) largest values."""
    v = np.atleast_1d(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("trimmed_mean of an empty vector")
    if not 0.0 <= trim_fraction < 1.0:
        raise ValueError(f"trim fraction must be in [0, 1), got {trim_fraction}")
    k = ceil(trim_fraction * v.size)
    if k >= v.size:
        raise ValueError(f"trimming {k} of {v.size} values leaves nothing")
    if k == 0:
        return float(v.mean())
    return float(np.sort(v)[:-k].mean())
