"""Synthetic data generators and the replicate experiment runner."""

import math

import numpy as np
import pytest

import sparsefun.sim as sim
from sparsefun.kernel import NumericalError, gauss_legendre
from sparsefun.regression import FitSettings
from sparsefun.sim import (
    B_MATRIX,
    LAMBDA_X,
    MU_X_COEFFS,
    PRNG_NOTE,
    SIGMA_X_BASE,
    SIGMA_Y_BASE,
    Case1Beta,
    Case2Beta,
    SimConfig,
    _generate_with_noise,
    generate_dataset,
    phi_basis,
    psi_basis,
    rows_to_csv,
    run_experiment,
)

FAST_SETTINGS = FitSettings(lambda_mean_x=6e-5, lambda_mean_y=1e-5,
                            lambda_cov_x=0.1, lambda_cov_y=1e-3, lambda_cross=1e-3)


# ---------------------------------------------------------------------------
# population constants and bases
# ---------------------------------------------------------------------------

def test_population_constants():
    j = np.arange(1, 11)
    np.testing.assert_allclose(LAMBDA_X, 1.0 / j)
    np.testing.assert_allclose(MU_X_COEFFS, 4.0 * (-1.0) ** j * j ** -2.0)
    want = np.outer(3.0 * j ** -0.5 * 2.0 ** -j.astype(float),
                    (-1.0) ** j * j ** -2.0)
    np.testing.assert_allclose(B_MATRIX, want)
    assert B_MATRIX[0, 0] == pytest.approx(-1.5)
    assert SIGMA_X_BASE == pytest.approx(1.8031)
    assert SIGMA_Y_BASE == {1: pytest.approx(2.5096), 2: pytest.approx(1.1721)}


def test_bases_orthonormal():
    rule = gauss_legendre(201)
    for basis in (psi_basis, phi_basis):
        vals = basis(rule.nodes)
        gram = (vals * rule.weights) @ vals.T
        np.testing.assert_allclose(gram, np.eye(10), atol=1e-12)


def test_noise_scales():
    assert SimConfig(case=1, n=5, stn=8.0).sigma_x == pytest.approx(1.8031 / 8)
    assert SimConfig(case=2, n=5, stn=4.0).sigma_y == pytest.approx(1.1721 / 4)
    cfg = SimConfig(case=1, n=5, stn=float("inf"))
    assert cfg.sigma_x == 0.0 and cfg.sigma_y == 0.0


def test_zeta_variance_is_one():
    z = np.random.default_rng(0).uniform(-math.sqrt(3), math.sqrt(3), 100_000)
    assert z.var() == pytest.approx(1.0, abs=0.02)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(case=3, n=5, stn=8.0)
    with pytest.raises(ValueError):
        SimConfig(case=1, n=1, stn=8.0)
    with pytest.raises(ValueError):
        SimConfig(case=1, n=5, stn=0.0)
    with pytest.raises(ValueError):
        SimConfig(case=1, n=5, stn=8.0, m_set=())
    with pytest.raises(ValueError):
        SimConfig(case=1, n=5, stn=8.0, replicates=0)


# ---------------------------------------------------------------------------
# generate_dataset
# ---------------------------------------------------------------------------

def test_generate_deterministic():
    cfg = SimConfig(case=1, n=8, stn=8.0, seed=31)
    a_x, a_y, _ = generate_dataset(cfg, 2)
    b_x, b_y, _ = generate_dataset(cfg, 2)
    for a, b in zip(a_x + a_y, b_x + b_y):
        assert a.subject_id == b.subject_id
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.values, b.values)


def test_generate_replicate_streams_differ():
    cfg = SimConfig(case=1, n=4, stn=8.0, seed=31, replicates=2)
    a_x, _, _ = generate_dataset(cfg, 0)
    b_x, _, _ = generate_dataset(cfg, 1)
    assert not np.array_equal(a_x[0].times, b_x[0].times)


def test_generate_zero_noise_at_infinite_stn():
    cfg = SimConfig(case=1, n=6, stn=float("inf"), seed=3)
    _, _, _, noise = _generate_with_noise(cfg, 0)
    for eps_x, eps_y in noise:
        assert not eps_x.any() and not eps_y.any()


def test_generate_respects_m_set():
    cfg = SimConfig(case=2, n=7, stn=8.0, m_set=(3,), seed=9)
    xs, ys, _ = generate_dataset(cfg, 0)
    assert all(len(s) == 3 for s in xs + ys)


def test_truth_bundle_contents():
    cfg1 = SimConfig(case=1, n=3, stn=8.0)
    _, _, truth1 = generate_dataset(cfg1, 0)
    assert isinstance(truth1.beta_truth, Case1Beta)
    np.testing.assert_allclose(truth1.lambdas, LAMBDA_X)
    _, _, truth2 = generate_dataset(SimConfig(case=2, n=3, stn=8.0), 0)
    assert isinstance(truth2.beta_truth, Case2Beta)
    g = np.linspace(0, 1, 7)
    np.testing.assert_allclose(truth1.psi[0](g), np.ones(7))
    np.testing.assert_allclose(truth1.phi[1](g), math.sqrt(2) * np.sin(2 * np.pi * g))


def _reconstruct_coords(x_sample):
    """X lives in the 10-function basis; dense noiseless observations pin its
    coordinates by least squares."""
    design = psi_basis(x_sample.times).T
    coords, *_ = np.linalg.lstsq(design, x_sample.values, rcond=None)
    return coords


def test_case1_conditional_mean_matches_quadrature():
    # noiseless V equals the integral of beta(s,t) X(s) ds at the Y times
    cfg = SimConfig(case=1, n=3, stn=float("inf"), m_set=(50,), seed=17)
    xs, ys, truth = generate_dataset(cfg, 0)
    rule = gauss_legendre(201)
    for x, y in zip(xs, ys):
        coords = _reconstruct_coords(x)
        x_nodes = coords @ psi_basis(rule.nodes)
        beta_vals = truth.beta_truth.evaluate_grid(rule.nodes, y.times)
        integral = (rule.weights * x_nodes) @ beta_vals
        np.testing.assert_allclose(y.values, integral, atol=1e-8)


def test_case2_conditional_mean_matches_quadrature():
    cfg = SimConfig(case=2, n=3, stn=float("inf"), m_set=(50,), seed=18)
    xs, ys, truth = generate_dataset(cfg, 0)
    rule = gauss_legendre(201)
    for x, y in zip(xs, ys):
        coords = _reconstruct_coords(x)
        x_nodes = coords @ psi_basis(rule.nodes)
        beta_vals = truth.beta_truth.evaluate_grid(rule.nodes, y.times)
        integral = (rule.weights * x_nodes) @ beta_vals
        np.testing.assert_allclose(y.values, integral, atol=1e-8)


# ---------------------------------------------------------------------------
# run_experiment
# ---------------------------------------------------------------------------

def test_run_experiment_deterministic_single_replicate():
    cfg = SimConfig(case=1, n=12, stn=8.0, replicates=1, seed=77)
    a = run_experiment(cfg, FAST_SETTINGS)
    b = run_experiment(cfg, FAST_SETTINGS)
    assert a.summary == b.summary
    assert len(a.rows) == 1 and a.rows[0].status == "ok"
    assert a.rows[0].mise == b.rows[0].mise
    # one surviving replicate: summaries equal that replicate's errors
    assert a.summary["trimmed_mise"] == a.rows[0].mise
    assert a.summary["ok"] == 1 and a.summary["failed"] == 0


def test_run_experiment_discloses_failures(monkeypatch):
    real_fit = sim.fit_model

    def flaky(xs, ys, settings):
        if xs[0].subject_id == "sim00000" and len(flaky.calls) == 1:
            flaky.calls.append(1)
            raise NumericalError("synthetic failure")
        return real_fit(xs, ys, settings)

    flaky.calls = [1]
    monkeypatch.setattr(sim, "fit_model", flaky)
    cfg = SimConfig(case=1, n=12, stn=8.0, replicates=3, seed=78)
    res = run_experiment(cfg, FAST_SETTINGS)
    statuses = [r.status for r in res.rows]
    assert statuses.count("failed") == 1
    assert res.summary["ok"] == 2 and res.summary["failed"] == 1
    ok_mises = [r.mise for r in res.rows if r.status == "ok"]
    assert res.summary["mean_mise"] == pytest.approx(np.mean(ok_mises))
    failed = [r for r in res.rows if r.status == "failed"][0]
    assert math.isnan(failed.mise) and math.isnan(failed.miae)


def test_run_experiment_reports_prng():
    cfg = SimConfig(case=1, n=12, stn=8.0, replicates=1, seed=79)
    res = run_experiment(cfg, FAST_SETTINGS)
    assert res.summary["prng"] == PRNG_NOTE
    assert "PCG64" in PRNG_NOTE


def test_rows_to_csv_round_trip():
    cfg = SimConfig(case=1, n=12, stn=8.0, replicates=2, seed=80)
    res = run_experiment(cfg, FAST_SETTINGS)
    text = rows_to_csv(res.rows)
    lines = text.strip().split("\n")
    assert lines[0] == "replicate,case,n,stn,mise,miae,status"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "0" and first[-1] == "ok"
    assert float(first[4]) == res.rows[0].mise   # repr round-trips exactly
