"""Cross-validation plans and selection, surface error metrics, trimmed mean."""

import numpy as np
import pytest

from sparsefun.kernel import KernelSpec, NumericalError, gauss_legendre
from sparsefun.meanfit import fit_mean
from sparsefun.sim import Case1Beta, Case2Beta, SimConfig, generate_dataset
from sparsefun.tuning import (
    DEFAULT_LAMBDA_GRID,
    CVPlan,
    ErrorReport,
    crossval_lambda,
    make_cv_plan,
    surface_error,
    trimmed_mean,
)


def test_default_grid_is_log_spaced():
    g = DEFAULT_LAMBDA_GRID
    assert g.size == 20
    assert g[0] == pytest.approx(1e-8) and g[-1] == pytest.approx(1.0)
    np.testing.assert_allclose(np.diff(np.log(g)), np.log(g[1] / g[0]), rtol=1e-10)


# ---------------------------------------------------------------------------
# CVPlan / make_cv_plan
# ---------------------------------------------------------------------------

def test_cvplan_validates():
    grid = np.array([0.1, 1.0])
    with pytest.raises(ValueError):
        CVPlan(folds=(("a", "b"),), lambda_grid=grid)           # one fold
    with pytest.raises(ValueError):
        CVPlan(folds=(("a",), ("a", "b")), lambda_grid=grid)    # overlap
    with pytest.raises(ValueError):
        CVPlan(folds=(("a",), ()), lambda_grid=grid)            # empty fold
    with pytest.raises(ValueError):
        CVPlan(folds=(("a",), ("b",)), lambda_grid=np.array([]))
    with pytest.raises(ValueError):
        CVPlan(folds=(("a",), ("b",)), lambda_grid=np.array([-1.0, 1.0]))
    with pytest.raises(ValueError):
        CVPlan(folds=(("a",), ("b",)), lambda_grid=np.array([1.0, 0.1]))


def test_make_cv_plan_partitions_ids():
    ids = [f"s{i}" for i in range(17)]
    plan = make_cv_plan(ids, n_folds=5, seed=3)
    assert len(plan.folds) == 5
    assert sorted(i for fold in plan.folds for i in fold) == sorted(ids)


def test_make_cv_plan_reproducible():
    ids = list("abcdefghij")
    assert make_cv_plan(ids, seed=7).folds == make_cv_plan(ids, seed=7).folds
    assert make_cv_plan(ids, seed=7).folds != make_cv_plan(ids, seed=8).folds


def test_make_cv_plan_needs_enough_subjects():
    with pytest.raises(ValueError):
        make_cv_plan(["a", "b", "c"], n_folds=5)


# ---------------------------------------------------------------------------
# crossval_lambda
# ---------------------------------------------------------------------------

class _TableFit:
    """Fit stub whose held-out loss is read from a (test ids, lambda) table."""

    def __init__(self, table, lam):
        self.table = table
        self.lam = lam

    def heldout_loss(self, test):
        return self.table[(frozenset(test), self.lam)]


def _run_table(table, folds, grid):
    data = {i: i for fold in folds for i in fold}
    plan = CVPlan(folds=folds, lambda_grid=np.asarray(grid, dtype=float))

    def fit(train, lam):
        return _TableFit(table, lam)

    return crossval_lambda(data, fit, plan)


def test_crossval_grid_of_one():
    folds = (("a",), ("b",))
    table = {(frozenset(f), 0.25): 1.0 for f in folds}
    assert _run_table(table, folds, [0.25]) == 0.25


def test_crossval_duplicated_grid_value():
    folds = (("a",), ("b",))
    table = {}
    for f in folds:
        table[(frozenset(f), 0.25)] = 1.0
        table[(frozenset(f), 0.5)] = 2.0
    assert _run_table(table, folds, [0.25, 0.25, 0.5]) == 0.25


def test_crossval_ties_break_toward_larger_lambda():
    folds = (("a",), ("b",))
    grid = [0.1, 0.2, 0.3]
    table = {(frozenset(f), lam): 1.0 for f in folds for lam in grid}
    assert _run_table(table, folds, grid) == 0.3


def test_crossval_minimizes_fold_mean():
    # fold means over the grid: [2.0, 1.25, 3.0] -> middle lambda
    folds = (("a", "b"), ("c", "d"))
    grid = [0.1, 0.2, 0.3]
    losses = {("a", "b"): [1.0, 2.0, 3.0], ("c", "d"): [3.0, 0.5, 3.0]}
    table = {(frozenset(f), lam): losses[f][i]
             for f in folds for i, lam in enumerate(grid)}
    assert _run_table(table, folds, grid) == 0.2


def test_crossval_isolated_failure_scores_inf():
    # the failing lambda would otherwise win on the surviving fold
    folds = (("a",), ("b",))
    grid = [0.1, 0.2]

    class Boom(_TableFit):
        def heldout_loss(self, test):
            if self.lam == 0.1 and "a" in test:
                raise NumericalError("unstable solve")
            return {0.1: 0.0, 0.2: 1.0}[self.lam]

    data = {"a": "a", "b": "b"}
    plan = CVPlan(folds=folds, lambda_grid=np.asarray(grid))
    got = crossval_lambda(data, lambda train, lam: Boom(None, lam), plan)
    assert got == 0.2


def test_crossval_all_fail_fold_raises_naming_fold():
    folds = (("a",), ("b",))
    plan = CVPlan(folds=folds, lambda_grid=np.array([0.1, 0.2]))

    class AlwaysBoom:
        def __init__(self, lam):
            self.lam = lam

        def heldout_loss(self, test):
            if "b" in test:
                raise NumericalError("unstable solve")
            return 1.0

    with pytest.raises(NumericalError, match="fold 1"):
        crossval_lambda({"a": "a", "b": "b"}, lambda tr, lam: AlwaysBoom(lam), plan)


def test_crossval_deterministic_given_seed():
    rng = np.random.default_rng(11)
    ids = [f"s{i}" for i in range(20)]
    noise = {i: rng.standard_normal() for i in ids}
    grid = [0.1, 0.2, 0.4]

    class F:
        def __init__(self, lam):
            self.lam = lam

        def heldout_loss(self, test):
            return sum(np.sin(100 * self.lam + noise[i]) for i in test)

    def run():
        plan = make_cv_plan(ids, n_folds=4, seed=5, lambda_grid=np.asarray(grid))
        return crossval_lambda({i: i for i in ids}, lambda tr, lam: F(lam), plan)

    assert run() == run()


def test_crossval_mean_lambda_near_exhaustive_oracle():
    """The CV pick for the mean penalty performs within 5 percent of the
    grid value that is best on a large fresh evaluation set."""
    from sparsefun.regression import _cv_mean_lambda

    spec = KernelSpec(order=2)
    cfg = SimConfig(case=1, n=50, stn=8.0, replicates=2, seed=123)
    train_x, _, _ = generate_dataset(cfg, 0)
    eval_cfg = SimConfig(case=1, n=400, stn=8.0, replicates=2, seed=456)
    eval_x, _, _ = generate_dataset(eval_cfg, 1)

    def eval_loss(fn):
        n = len(eval_x)
        return float(sum(np.sum((s.values - fn(s.times)) ** 2) / (n * len(s))
                         for s in eval_x))

    losses = np.array([eval_loss(fit_mean(train_x, spec, float(lam)))
                       for lam in DEFAULT_LAMBDA_GRID])
    plan = make_cv_plan([s.subject_id for s in train_x], n_folds=5, seed=0)
    lam_cv = _cv_mean_lambda(train_x, spec, plan)
    idx = int(np.argmin(np.abs(DEFAULT_LAMBDA_GRID - lam_cv)))
    assert losses[idx] <= 1.05 * losses.min()


# ---------------------------------------------------------------------------
# surface_error
# ---------------------------------------------------------------------------

def test_surface_error_zero_when_equal(rule41):
    truth = Case2Beta()
    rep = surface_error(truth, truth, rule41)
    assert rep.mise == 0.0 and rep.miae == 0.0


def test_surface_error_constant_offset(rule41):
    # est - truth = c everywhere: mise = c^2, miae = |c| on the unit square
    c = -0.7
    est = lambda s, t: np.full(np.broadcast_shapes(np.shape(s), np.shape(t)), c)
    zero = lambda s, t: np.zeros(np.broadcast_shapes(np.shape(s), np.shape(t)))
    rep = surface_error(est, zero, rule41)
    assert rep.mise == pytest.approx(c ** 2, rel=1e-12)
    assert rep.miae == pytest.approx(abs(c), rel=1e-12)


def _zero_surface(s, t):
    return np.zeros(np.broadcast_shapes(np.shape(s), np.shape(t)))


def test_surface_error_zero_estimator_case1(rule41):
    rep = surface_error(_zero_surface, Case1Beta(), rule41)
    assert rep.mise == pytest.approx(2.801542, abs=1e-3)
    assert rep.miae == pytest.approx(1.417086, abs=1e-3)


def test_surface_error_zero_estimator_case2(rule41):
    rep = surface_error(_zero_surface, Case2Beta(), rule41)
    assert rep.mise == pytest.approx(1.21695, abs=1e-4)
    assert rep.miae == pytest.approx(1.020649, abs=1e-4)


def test_surface_error_symmetric_and_cauchy_schwarz(rule41):
    est, truth = Case1Beta(), Case2Beta()
    a = surface_error(est, truth, rule41)
    b = surface_error(truth, est, rule41)
    assert a.mise == pytest.approx(b.mise, rel=1e-12)
    assert a.miae == pytest.approx(b.miae, rel=1e-12)
    assert a.miae ** 2 <= a.mise * (1.0 + 1e-12)     # unit-area domain


def test_error_report_validates():
    with pytest.raises(ValueError):
        ErrorReport(mise=-1.0, miae=0.0)


# ---------------------------------------------------------------------------
# trimmed_mean
# ---------------------------------------------------------------------------

def test_trimmed_mean_drops_one_largest():
    assert trimmed_mean([1.0, 2.0, 3.0, 100.0], 0.25) == pytest.approx(2.0)


def test_trimmed_mean_zero_fraction_is_mean():
    v = [3.0, 1.0, 4.0, 1.5]
    assert trimmed_mean(v, 0.0) == pytest.approx(np.mean(v))


def test_trimmed_mean_survives_planted_outliers():
    rng = np.random.default_rng(9)
    clean = rng.uniform(1.0, 2.0, size=500)
    spiked = np.concatenate([clean, np.full(25, 1e6)])
    got = trimmed_mean(rng.permutation(spiked), 0.05)
    assert abs(got - clean.mean()) <= 0.05 * clean.mean()


def test_trimmed_mean_permutation_invariant():
    rng = np.random.default_rng(10)
    v = rng.standard_normal(40)
    assert trimmed_mean(v, 0.1) == trimmed_mean(rng.permutation(v), 0.1)


def test_trimmed_mean_ignores_values_above_current_max():
    v = [1.0, 2.0, 3.0, 4.0]
    base = trimmed_mean(v, 0.25)
    assert trimmed_mean(v + [50.0], 0.25) <= base + 1e-12


def test_trimmed_mean_validates():
    with pytest.raises(ValueError):
        trimmed_mean([], 0.1)
    with pytest.raises(ValueError):
        trimmed_mean([1.0, 2.0], 0.9)       # ceil removes everything
    with pytest.raises(ValueError):
        trimmed_mean([1.0], 1.0)
