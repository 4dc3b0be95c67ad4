"""Regression coefficient surface: sigma_kl assembly, truncation selection,
trajectory prediction, and the end-to-end model fit with cross-validated
penalties."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import (KernelSpec, NumericalError, QuadratureRule, RidgePathSolver,
                     gauss_legendre, gram_bundle, kernel_matrix)
from .meanfit import FittedFunction, LongitudinalSample, fit_mean
from .autocov import (EigenSystem, FittedSymSurface, _pair_index_arrays,
                      eigensystem, fit_autocov, pair_loss)
from .crosscov import (FittedSurface, SingularSystem, _row_indices, crosscov_loss,
                       fit_crosscov, pair_subjects, singular_system)
from .tuning import DEFAULT_LAMBDA_GRID, CVPlan, crossval_lambda, make_cv_plan

EIGENVALUE_FLOOR = 1e-8


@dataclass(frozen=True)
class CoefficientSurface:
    """Estimated regression coefficient surface as a sum of separable terms.

    beta(s, t) = sum over terms of weight * x_fun(s) * y_fun(t), where each
    weight is a cross-covariance score divided by an X-eigenvalue, x_fun an
    X-side eigenfunction and y_fun a Y-side one. j1 counts Y-side functions
    used, j2 X-side.
    """

    terms: tuple
    j1: int
    j2: int

    def __post_init__(self) -> None:
        if self.j1 < 0 or self.j2 < 0:
            raise ValueError("truncation orders must be nonnegative")
        object.__setattr__(self, "terms", tuple(self.terms))
        for w, _, _ in self.terms:
            if not np.isfinite(w):
                raise ValueError("non-finite term weight")

    def evaluate_grid(self, s, t) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros((s.size, t.size))
        for w, x_fun, y_fun in self.terms:
            out += w * np.outer(x_fun(s), y_fun(t))
        return out

    def evaluate_at(self, s, t) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        out = np.zeros(np.broadcast_shapes(s.shape, t.shape))
        for w, x_fun, y_fun in self.terms:
            out += w * x_fun(s) * y_fun(t)
        return out


@dataclass(frozen=True)
class ModelBundle:
    """Everything fitted from one paired dataset: means, eigensystems, the
    cross-covariance surface with its singular system, the coefficient
    surface, and the tuning parameters used."""

    mu_x: FittedFunction
    mu_y: FittedFunction
    eigen_x: EigenSystem
    eigen_y: EigenSystem
    crosscov: FittedSurface
    singular: SingularSystem
    beta: CoefficientSurface
    lambdas: dict
    spec_x: KernelSpec
    spec_y: KernelSpec
    rule: QuadratureRule

    def __post_init__(self) -> None:
        if self.mu_x.spec != self.spec_x or self.mu_y.spec != self.spec_y:
            raise ValueError("mean functions fitted under different kernel specs")
        if self.crosscov.spec_x != self.spec_x or self.crosscov.spec_y != self.spec_y:
            raise ValueError("cross-covariance fitted under different kernel specs")
        if self.beta.j1 > len(self.eigen_y.eigenfunctions) or \
           self.beta.j2 > len(self.eigen_x.eigenfunctions):
            raise ValueError("beta truncation exceeds available eigenfunctions")


def _domain_nodes(spec: KernelSpec, rule: QuadratureRule) -> np.ndarray:
    a, b = spec.domain
    return a + (b - a) * rule.nodes


def sigma_kl(crosscov: FittedSurface, psi_l: FittedFunction, phi_k: FittedFunction,
             rule: QuadratureRule) -> float:
    """Double quadrature of psi_l(s) C(s,t) phi_k(t) over the two domains,
    in rescaled (unit-measure) coordinates."""
    s_nodes = _domain_nodes(crosscov.spec_x, rule)
    t_nodes = _domain_nodes(crosscov.spec_y, rule)
    c = crosscov.evaluate_grid(s_nodes, t_nodes)
    return float((rule.weights * psi_l(s_nodes)) @ c @ (rule.weights * phi_k(t_nodes)))


def _sigma_matrix(eigen_x: EigenSystem, eigen_y: EigenSystem, crosscov: FittedSurface,
                  j1: int, j2: int, rule: QuadratureRule) -> np.ndarray:
    """sig[l, k] = integral of Psi_l C Phi_k, for l < j2, k < j1."""
    s_nodes = _domain_nodes(crosscov.spec_x, rule)
    t_nodes = _domain_nodes(crosscov.spec_y, rule)
    ex = np.stack([f(s_nodes) for f in eigen_x.eigenfunctions[:j2]])
    ey = np.stack([f(t_nodes) for f in eigen_y.eigenfunctions[:j1]])
    c = crosscov.evaluate_grid(s_nodes, t_nodes)
    return (ex * rule.weights) @ c @ (ey * rule.weights).T


def _floor_check(eigen_x: EigenSystem, j2: int) -> None:
    vals = eigen_x.eigenvalues
    lead = float(vals[0]) if vals.size else 0.0
    for l in range(j2):
        if not vals[l] > EIGENVALUE_FLOOR * lead or lead <= 0.0:
            raise ValueError(
                f"X eigenvalue {l + 1} is at or below the floor "
                f"{EIGENVALUE_FLOOR:g} * leading eigenvalue; reduce the X truncation")


def assemble_beta(eigen_x: EigenSystem, eigen_y: EigenSystem, crosscov: FittedSurface,
                  j1: int, j2: int, rule: QuadratureRule) -> CoefficientSurface:
    """Coefficient surface from the truncated singular expansion.

    beta(s,t) = sum_{k<=j1} sum_{l<=j2} (sigma_kl / lambda_l) Psi_l(s) Phi_k(t)
    with sigma_kl the quadrature functional of the cross-covariance surface
    against the eigenfunction pair and lambda_l the X-eigenvalues. Every
    lambda_l used must exceed 1e-8 times the leading eigenvalue.
    """
    if j1 < 1 or j2 < 1:
        raise ValueError("truncation orders must be at least 1")
    if j1 > len(eigen_y.eigenfunctions):
        raise ValueError(f"j1={j1} exceeds the {len(eigen_y.eigenfunctions)} available Y eigenfunctions")
    if j2 > len(eigen_x.eigenfunctions):
        raise ValueError(f"j2={j2} exceeds the {len(eigen_x.eigenfunctions)} available X eigenfunctions")
    _floor_check(eigen_x, j2)
    sig = _sigma_matrix(eigen_x, eigen_y, crosscov, j1, j2, rule)
    terms = []
    for k in range(j1):
        for l in range(j2):
            w = sig[l, k] / float(eigen_x.eigenvalues[l])
            terms.append((float(w), eigen_x.eigenfunctions[l], eigen_y.eigenfunctions[k]))
    return CoefficientSurface(terms=tuple(terms), j1=j1, j2=j2)


def _subject_scores(x_samples, mu_x: FittedFunction, eigen_x: EigenSystem,
                    n_scores: int, rule: QuadratureRule, smoother_lambda: float) -> np.ndarray:
    """xi[i, l] = integral of (smoothed X_i - mu_x) Psi_l, one row per subject."""
    s_nodes = _domain_nodes(mu_x.spec, rule)
    mu_vals = mu_x(s_nodes)
    ex = np.stack([f(s_nodes) for f in eigen_x.eigenfunctions[:n_scores]])
    xi = np.zeros((len(x_samples), n_scores))
    for i, sample in enumerate(x_samples):
        smooth = fit_mean([sample], mu_x.spec, smoother_lambda)
        z = smooth(s_nodes) - mu_vals
        xi[i] = ex @ (rule.weights * z)
    return xi


def select_truncation(x_samples, y_samples, mu_x: FittedFunction, mu_y: FittedFunction,
                      eigen_x: EigenSystem, eigen_y: EigenSystem,
                      crosscov: FittedSurface, singular: SingularSystem,
                      rule: QuadratureRule, j_max: int = 10, criterion: str = "AIC",
                      smoother_lambda: float = 1e-4) -> tuple[int, int]:
    """Truncation orders (j1, j2) for the coefficient surface.

    AIC/BIC grid-search 1..j_max squared on the prediction residual sum of
    squares: score = N log(RSS/N) + penalty * j1 * j2 with penalty 2 (AIC) or
    log N (BIC), N the pooled Y observation count. Predictions use smoothed
    per-subject X scores against the X eigenfunctions. FVE instead returns
    j1 = j2 = the smallest k whose cumulative squared-singular-value share
    reaches 0.99. All routes are capped by the available eigenfunctions and
    by the X-eigenvalue floor.
    """
    crit = criterion.upper()
    if crit not in ("AIC", "BIC", "FVE"):
        raise ValueError(f"unknown criterion {criterion!r}; expected AIC, BIC or FVE")
    if j_max < 1:
        raise ValueError(f"j_max must be at least 1, got {j_max}")
    k_cap = min(j_max, len(eigen_y.eigenfunctions))
    l_cap = 0
    lead = float(eigen_x.eigenvalues[0]) if eigen_x.eigenvalues.size else 0.0
    for l in range(min(j_max, len(eigen_x.eigenfunctions))):
        if lead <= 0.0 or not eigen_x.eigenvalues[l] > EIGENVALUE_FLOOR * lead:
            break
        l_cap = l + 1
    if k_cap == 0 or l_cap == 0:
        raise NumericalError("no usable eigenfunctions for truncation selection")

    if crit == "FVE":
        sig2 = np.asarray(singular.sigma2, dtype=float)
        total = float(sig2.sum())
        k_star = 1
        if total > 0:
            frac = np.cumsum(sig2) / total
            k_star = int(np.argmax(frac >= 0.99)) + 1
        j = min(k_star, k_cap, l_cap)
        return j, j

    y_aligned = pair_subjects(x_samples, y_samples)
    xi = _subject_scores(x_samples, mu_x, eigen_x, l_cap, rule, smoother_lambda)
    wmat = _sigma_matrix(eigen_x, eigen_y, crosscov, k_cap, l_cap, rule) \
        / np.asarray(eigen_x.eigenvalues[:l_cap], dtype=float)[:, None]   # (l_cap, k_cap)
    n_obs = sum(len(s) for s in y_aligned)
    rss = np.zeros((k_cap, l_cap))
    for i, sample in enumerate(y_aligned):
        resid = sample.values - mu_y(sample.times)
        phi_vals = np.stack([f(sample.times) for f in eigen_y.eigenfunctions[:k_cap]], axis=1)
        cums = np.cumsum(wmat * xi[i][:, None], axis=0)    # over l: (l_cap, k_cap)
        for k in range(1, k_cap + 1):
            for l in range(1, l_cap + 1):
                pred = phi_vals[:, :k] @ cums[l - 1, :k]
                rss[k - 1, l - 1] += float(np.sum((resid - pred) ** 2))
    penalty = 2.0 if crit == "AIC" else np.log(n_obs)
    tiny = np.finfo(float).tiny
    best, best_score = (1, 1), np.inf
    for k in range(1, k_cap + 1):
        for l in range(1, l_cap + 1):
            score = n_obs * np.log(max(rss[k - 1, l - 1], tiny) / n_obs) + penalty * k * l
            if score < best_score:
                best, best_score = (k, l), score
    return best


def predict_response(model: ModelBundle, new_x: LongitudinalSample, t_grid) -> np.ndarray:
    """Predicted response trajectory for a new subject's X observations.

    The observations are smoothed with the model's X kernel and mean penalty;
    the centered smooth is integrated against each coefficient-surface term:
    Yhat(t) = mu_y(t) + sum of weight * <Xtilde - mu_x, x_fun> * y_fun(t).
    """
    t = np.atleast_1d(np.asarray(t_grid, dtype=float))
    if t.size == 0:
        raise ValueError("empty prediction grid")
    smooth = fit_mean([new_x], model.spec_x, model.lambdas["mean_x"])
    s_nodes = _domain_nodes(model.spec_x, model.rule)
    z = smooth(s_nodes) - model.mu_x(s_nodes)
    out = np.asarray(model.mu_y(t), dtype=float).copy()
    for w, x_fun, y_fun in model.beta.terms:
        score = float(np.sum(model.rule.weights * z * x_fun(s_nodes)))
        out += w * score * y_fun(t)
    return out


# ---------------------------------------------------------------------------
# end-to-end fit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitSettings:
    """Knobs for fit_model. Any lambda left as None is cross-validated."""

    order_x: int = 2
    order_y: int = 2
    domain_x: tuple = (0.0, 1.0)
    domain_y: tuple = (0.0, 1.0)
    quad_q: int = 41
    lambda_grid: np.ndarray | None = None
    cv_folds: int = 5
    cv_seed: int = 0
    cv_repeats: int = 5
    j_max: int = 10
    criterion: str = "AIC"
    k_max: int | None = None
    lambda_mean_x: float | None = None
    lambda_mean_y: float | None = None
    lambda_cov_x: float | None = None
    lambda_cov_y: float | None = None
    lambda_cross: float | None = None

    def __post_init__(self) -> None:
        if self.criterion.upper() not in ("AIC", "BIC", "FVE"):
            raise ValueError(f"unknown criterion {self.criterion!r}")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.cv_repeats < 1:
            raise ValueError("cv_repeats must be at least 1")
        if self.j_max < 1:
            raise ValueError("j_max must be at least 1")


class _CVFit:
    """Adapter giving crossval_lambda its heldout_loss hook."""

    __slots__ = ("value", "_loss_fn")

    def __init__(self, value, loss_fn):
        self.value = value
        self._loss_fn = loss_fn

    def heldout_loss(self, test) -> float:
        return self._loss_fn(self.value, test)


class _FoldState:
    """Identity-keyed cache: crossval_lambda passes the same train mapping for
    every lambda within a fold, so expensive per-fold state is built once."""

    __slots__ = ("_build", "_key", "_state")

    def __init__(self, build):
        self._build = build
        self._key = None
        self._state = None

    def get(self, train):
        if train is not self._key:
            self._state = self._build(train)
            self._key = train
        return self._state


def _cv_mean_lambda(samples, spec: KernelSpec, plan: CVPlan) -> float:
    data = {s.subject_id: s for s in samples}

    def build(train):
        subs = list(train.values())
        n = len(subs)
        times = np.concatenate([s.times for s in subs])
        values = np.concatenate([s.values for s in subs])
        inv_w = np.concatenate([np.full(len(s), float(n * len(s))) for s in subs])
        g = kernel_matrix(spec, times, times)
        return times, values, RidgePathSolver(g, inv_w)

    state = _FoldState(build)

    def heldout(fn: FittedFunction, test) -> float:
        subs = list(test.values())
        n = len(subs)
        return float(sum(np.sum((s.values - fn(s.times)) ** 2) / (n * len(s))
                         for s in subs))

    def fit(train, lam):
        times, values, solver = state.get(train)
        coeffs = solver.solve(values, lam)
        return _CVFit(FittedFunction(anchors=times, coeffs=coeffs, spec=spec), heldout)

    return crossval_lambda(data, fit, plan)


def _repeated_cv_lambda(data, fit, plans) -> float:
    """Grid lambda minimizing the mean held-out loss across the folds of
    several CV partitions, with crossval_lambda's aggregation and tie rule.

    Held-out losses built from products of residuals are fourth-moment
    quantities: with a single partition a handful of large-trajectory
    subjects can flip the argmin. Averaging the fold losses over re-drawn
    partitions damps that fold-assignment noise. With one plan this is
    exactly crossval_lambda.
    """
    grid = plans[0].lambda_grid
    rows = []
    for plan in plans:
        for fold_idx, fold in enumerate(plan.folds):
            test_ids = set(fold)
            train = {k: v for k, v in data.items() if k not in test_ids}
            test = {k: data[k] for k in fold}
            if not train:
                raise ValueError(f"fold {fold_idx} leaves no training subjects")
            row = np.empty(grid.size)
            ok = False
            for lam_idx, lam in enumerate(grid):
                try:
                    fitted = fit(train, float(lam))
                    row[lam_idx] = fitted.heldout_loss(test)
                    ok = True
                except (NumericalError, np.linalg.LinAlgError):
                    row[lam_idx] = np.inf
            if not ok:
                raise NumericalError(
                    f"all fits failed on fold {fold_idx} "
                    f"(lambda grid {grid[0]:.3g}..{grid[-1]:.3g})")
            rows.append(row)
    means = np.mean(rows, axis=0)
    best = means.size - 1 - int(np.argmin(means[::-1]))   # ties -> larger lambda
    return float(grid[best])


def _cv_autocov_lambda(samples, mean: FittedFunction, spec: KernelSpec,
                       plans) -> float:
    data = {s.subject_id: s for s in samples}

    def build(train):
        subs = list(train.values())
        n = len(subs)
        anchors = np.concatenate([s.times for s in subs])
        resid = np.concatenate([s.values - mean(s.times) for s in subs])
        first, second, sizes = _pair_index_arrays(subs)
        k = kernel_matrix(spec, anchors, anchors)
        m = k[np.ix_(first, first)] * k[np.ix_(second, second)]
        d = resid[first] * resid[second]
        solver = RidgePathSolver(m, n * sizes * (sizes - 1.0))
        return anchors, first, second, d, solver

    state = _FoldState(build)

    def heldout(surface: FittedSymSurface, test) -> float:
        return pair_loss(surface, list(test.values()), mean)

    def fit(train, lam):
        anchors, first, second, d, solver = state.get(train)
        c = solver.solve(d, lam)
        b = np.zeros((anchors.size, anchors.size))
        b[first, second] = c
        return _CVFit(FittedSymSurface(anchors=anchors, coeff_matrix=b, spec=spec), heldout)

    return _repeated_cv_lambda(data, fit, plans)


def _cv_crosscov_lambda(x_samples, y_samples, mu_x, mu_y,
                        spec_x: KernelSpec, spec_y: KernelSpec, plans) -> float:
    data = {x.subject_id: (x, y) for x, y in zip(x_samples, y_samples)}

    def build(train):
        xs = [v[0] for v in train.values()]
        ys = [v[1] for v in train.values()]
        n = len(xs)
        s_anchors = np.concatenate([s.times for s in xs])
        t_anchors = np.concatenate([s.times for s in ys])
        rx = np.concatenate([s.values - mu_x(s.times) for s in xs])
        ry = np.concatenate([s.values - mu_y(s.times) for s in ys])
        rows_s, rows_t, sizes, s_blocks, t_blocks = _row_indices(xs, ys)
        k_s = kernel_matrix(spec_x, s_anchors, s_anchors)
        k_t = kernel_matrix(spec_y, t_anchors, t_anchors)
        m = k_s[np.ix_(rows_s, rows_s)] * k_t[np.ix_(rows_t, rows_t)]
        d = rx[rows_s] * ry[rows_t]
        solver = RidgePathSolver(m, n * sizes)
        return (s_anchors, t_anchors, rows_s, rows_t, s_blocks, t_blocks, d, solver)

    state = _FoldState(build)

    def heldout(surface: FittedSurface, test) -> float:
        xs = [v[0] for v in test.values()]
        ys = [v[1] for v in test.values()]
        return crosscov_loss(surface, xs, ys, mu_x, mu_y)

    def fit(train, lam):
        s_anchors, t_anchors, rows_s, rows_t, s_blocks, t_blocks, d, solver = state.get(train)
        coef = solver.solve(d, lam)
        a = np.zeros((s_anchors.size, t_anchors.size))
        a[rows_s, rows_t] = coef
        surf = FittedSurface(s_anchors=s_anchors, t_anchors=t_anchors, a=a,
                             spec_x=spec_x, spec_y=spec_y,
                             s_blocks=s_blocks, t_blocks=t_blocks)
        return _CVFit(surf, heldout)

    return _repeated_cv_lambda(data, fit, plans)


def fit_model(x_samples: list[LongitudinalSample], y_samples: list[LongitudinalSample],
              settings: FitSettings = FitSettings()) -> ModelBundle:
    """Full pipeline on paired sparse observations of two processes.

    Means for X and Y, auto-covariances and their eigensystems, the
    cross-covariance surface and its singular system, truncation selection,
    and the coefficient surface, with each penalty chosen by K-fold
    cross-validation unless fixed in the settings. The covariance penalties
    (both auto-covariances and the cross-covariance) average their fold
    losses over cv_repeats re-drawn partitions; their product-type held-out
    losses are noisy enough on one partition to misrank lambdas.
    """
    if len(x_samples) < 2:
        raise ValueError("need at least 2 subjects")
    spec_x = KernelSpec(order=settings.order_x, domain=tuple(settings.domain_x))
    spec_y = KernelSpec(order=settings.order_y, domain=tuple(settings.domain_y))
    y_aligned = pair_subjects(x_samples, y_samples)
    rule = gauss_legendre(settings.quad_q)
    grid = DEFAULT_LAMBDA_GRID if settings.lambda_grid is None else settings.lambda_grid
    ids = [s.subject_id for s in x_samples]

    def plan_for(subset_ids):
        return make_cv_plan(subset_ids, n_folds=settings.cv_folds,
                            seed=settings.cv_seed, lambda_grid=grid)

    def plans_for(subset_ids):
        return [make_cv_plan(subset_ids, n_folds=settings.cv_folds,
                             seed=settings.cv_seed + r, lambda_grid=grid)
                for r in range(settings.cv_repeats)]

    lam_mean_x = settings.lambda_mean_x
    if lam_mean_x is None:
        lam_mean_x = _cv_mean_lambda(x_samples, spec_x, plan_for(ids))
    mu_x = fit_mean(x_samples, spec_x, lam_mean_x)

    lam_mean_y = settings.lambda_mean_y
    if lam_mean_y is None:
        lam_mean_y = _cv_mean_lambda(y_aligned, spec_y, plan_for(ids))
    mu_y = fit_mean(y_aligned, spec_y, lam_mean_y)

    # only subjects with two or more observations carry covariance pairs
    x_paired_ids = [s.subject_id for s in x_samples if len(s) >= 2]
    lam_cov_x = settings.lambda_cov_x
    if lam_cov_x is None:
        lam_cov_x = _cv_autocov_lambda([s for s in x_samples if len(s) >= 2],
                                       mu_x, spec_x, plans_for(x_paired_ids))
    cov_x = fit_autocov(x_samples, mu_x, spec_x, lam_cov_x)

    y_paired_ids = [s.subject_id for s in y_aligned if len(s) >= 2]
    lam_cov_y = settings.lambda_cov_y
    if lam_cov_y is None:
        lam_cov_y = _cv_autocov_lambda([s for s in y_aligned if len(s) >= 2],
                                       mu_y, spec_y, plans_for(y_paired_ids))
    cov_y = fit_autocov(y_aligned, mu_y, spec_y, lam_cov_y)

    bundle = gram_bundle(spec_x, spec_y,
                         np.concatenate([s.times for s in x_samples]),
                         np.concatenate([s.times for s in y_aligned]), rule)
    eigen_x = eigensystem(cov_x, bundle, k_max=settings.k_max)
    eigen_y = eigensystem(cov_y, bundle.swapped(), k_max=settings.k_max)

    lam_cross = settings.lambda_cross
    if lam_cross is None:
        lam_cross = _cv_crosscov_lambda(x_samples, y_aligned, mu_x, mu_y,
                                        spec_x, spec_y, plans_for(ids))
    crosscov = fit_crosscov(x_samples, y_aligned, mu_x, mu_y, spec_x, spec_y, lam_cross)
    singular = singular_system(crosscov, bundle, k_max=settings.k_max)

    j1, j2 = select_truncation(x_samples, y_aligned, mu_x, mu_y, eigen_x, eigen_y,
                               crosscov, singular, rule,
                               j_max=settings.j_max, criterion=settings.criterion,
                               smoother_lambda=lam_mean_x)
    beta = assemble_beta(eigen_x, eigen_y, crosscov, j1, j2, rule)
    lambdas = {"mean_x": float(lam_mean_x), "mean_y": float(lam_mean_y),
               "cov_x": float(lam_cov_x), "cov_y": float(lam_cov_y),
               "cross": float(lam_cross)}
    return ModelBundle(mu_x=mu_x, mu_y=mu_y, eigen_x=eigen_x, eigen_y=eigen_y,
                       crosscov=crosscov, singular=singular, beta=beta,
                       lambdas=lambdas, spec_x=spec_x, spec_y=spec_y, rule=rule)
