import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from sklearn.base import clone

from edlab.kernel import (
    Configuration,
    Drift,
    KernelEvaluationError,
    KernelParams,
    MaxEntKernel,
    chapman_kolmogorov_step,
    evolve_ensemble,
    mean_displacement,
    member_streams,
    transition_logpdf,
    transition_sample,
    verify_constraints,
)


def params1d(m=1.0, eta=1.0, dt=0.1, drift=None):
    return KernelParams(np.array([m]), eta, dt, drift)


def point(*coords, dim=1):
    return Configuration.single(np.array(coords, dtype=float), dim=dim)


# ---- types --------------------------------------------------------------------


def test_configuration_validation():
    with pytest.raises(ValueError):
        Configuration(np.zeros(5), 2)
    with pytest.raises(ValueError):
        Configuration(np.array([0.0, np.nan, 0.0]), 1)
    with pytest.raises(ValueError):
        Configuration(np.zeros(4), 1, dim=4)
    c = Configuration(np.zeros(6), 2)
    assert c.dim == 3
    with pytest.raises(ValueError):
        c.coords[0] = 1.0


@pytest.mark.parametrize(
    "masses, eta, dt", [([0.0], 1, 1), ([1.0], -1, 1), ([1.0], 1, 0), ([-2.0, 1.0], 1, 1)]
)
def test_params_validation(masses, eta, dt):
    with pytest.raises(ValueError):
        KernelParams(np.array(masses), eta, dt, None)


def test_particle_count_mismatch():
    p = KernelParams(np.array([1.0, 2.0]), 1.0, 0.1, None)
    with pytest.raises(ValueError):
        mean_displacement(p, Configuration(np.zeros(3), 1))


# ---- mean displacement ----------------------------------------------------------


def test_constant_drift_gives_zero_mean():
    p = KernelParams(np.array([1.0, 3.0]), 1.0, 0.1, Drift.constant(7.0))
    np.testing.assert_array_equal(mean_displacement(p, Configuration(np.arange(6.0), 2)), 0.0)


def test_linear_drift_example():
    p = params1d(m=1, eta=1, dt=0.1, drift=Drift.linear(2.0))
    assert mean_displacement(p, point(0.7))[0] == pytest.approx(0.2)


def test_quadratic_drift_example():
    p = params1d(m=2, eta=1, dt=0.5, drift=Drift.quadratic(1.0))
    assert mean_displacement(p, point(3.0))[0] == pytest.approx(1.5)


def test_mass_scaling_per_particle():
    p = KernelParams(np.array([1.0, 4.0]), 2.0, 0.5, Drift.linear(1.0))
    mu = mean_displacement(p, Configuration(np.zeros(6), 2))
    np.testing.assert_allclose(mu, [1.0] * 3 + [0.25] * 3)


def test_nonfinite_gradient_names_component():
    bad = Drift(lambda x: 0.0, lambda x: np.where(np.arange(x.shape[-1]) == 4, np.inf, 0.0))
    p = KernelParams(np.array([1.0, 1.0]), 1.0, 0.1, bad)
    with pytest.raises(KernelEvaluationError, match=r"component 4 \(particle 1, axis 1\)"):
        mean_displacement(p, Configuration(np.zeros(6), 2))


def test_non_vectorized_drift():
    d = Drift(lambda x: float(x @ x), lambda x: 2 * x, vectorized=False)
    rows = np.arange(6.0).reshape(2, 3)
    np.testing.assert_allclose(d.gradient(rows), 2 * rows)
    np.testing.assert_allclose(d(rows), (rows**2).sum(axis=1))


# ---- log density ----------------------------------------------------------------


def test_logpdf_peak_value():
    p = params1d(m=2.0, eta=1.0, dt=0.3, drift=Drift.linear(1.0))
    x = point(0.5)
    v = 0.15
    at_mean = point(0.5 + v)
    assert transition_logpdf(p, x, at_mean) == pytest.approx(-0.5 * np.log(2 * np.pi * v), abs=1e-14)


def test_logpdf_symmetric_about_mean():
    p = params1d(drift=Drift.quadratic(0.7))
    x = point(1.0)
    mu = 1.0 + mean_displacement(p, x)[0]
    assert transition_logpdf(p, x, point(mu - 0.37)) == pytest.approx(transition_logpdf(p, x, point(mu + 0.37)))


def test_logpdf_quadrature_normalizes():
    p = params1d(m=1.3, eta=0.8, dt=0.2, drift=Drift.linear(3.0))
    x = point(-0.4)
    val, _ = integrate.quad(lambda y: np.exp(transition_logpdf(p, x, point(y))), -20, 20, points=[0.0], limit=200)
    assert val == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(
    st.floats(0.1, 10), st.floats(0.1, 5), st.floats(1e-3, 1.0), st.floats(-3, 3), st.floats(-2, 2)
)
def test_logpdf_matches_scipy_normal(m, eta, dt, k, x0):
    p = params1d(m=m, eta=eta, dt=dt, drift=Drift.linear(k))
    v = eta * dt / m
    for y in (x0 - 1.0, x0, x0 + 0.3):
        expected = stats.norm(loc=x0 + v * k, scale=np.sqrt(v)).logpdf(y)
        assert transition_logpdf(p, point(x0), point(y)) == pytest.approx(expected, rel=1e-10, abs=1e-10)


def test_logpdf_dimension_mismatch():
    p = params1d()
    with pytest.raises(ValueError):
        transition_logpdf(p, point(0.0), Configuration(np.zeros(2), 1, dim=2))


# ---- sampling ---------------------------------------------------------------------


def test_sample_deterministic():
    p = KernelParams(np.array([1.0, 2.0]), 1.0, 0.1, Drift.quadratic(0.5))
    x = Configuration(np.arange(6.0), 2)
    a = transition_sample(p, x, 12345)
    b = transition_sample(p, x, 12345)
    np.testing.assert_array_equal(a.coords, b.coords)
    assert not np.array_equal(a.coords, transition_sample(p, x, 12346).coords)


def test_seed_range():
    p = params1d()
    transition_sample(p, point(0.0), 2**64 - 1)
    with pytest.raises(ValueError):
        transition_sample(p, point(0.0), -1)
    with pytest.raises(ValueError):
        transition_sample(p, point(0.0), 2**64)


def test_generator_stable_across_runs():
    # PCG64 + standard_normal: frozen reference draw
    p = params1d(m=1.0, eta=1.0, dt=1.0)
    expected = np.random.default_rng(2024).standard_normal(1)[0]
    assert transition_sample(p, point(0.0), 2024).coords[0] == expected


def test_small_dt_collapses_to_x():
    x = point(1.5)
    devs = [abs(transition_sample(params1d(dt=dt), x, 3).coords[0] - 1.5) for dt in (1e-2, 1e-6, 1e-12)]
    assert devs[0] > devs[1] > devs[2]
    assert devs[2] < 1e-5


def test_sample_mean_within_four_standard_errors():
    p = params1d(m=1.0, eta=1.0, dt=0.1, drift=Drift.linear(2.0))
    x = point(0.0)
    ens = evolve_ensemble(p, [x] * 100_000, 1, 9)
    d = np.array([c.coords[0] for c in ens])
    se = d.std(ddof=1) / np.sqrt(d.size)
    assert abs(d.mean() - 0.2) < 4 * se


# ---- ensembles -----------------------------------------------------------------------


def test_zero_steps_is_identity():
    p = params1d()
    ens = [point(float(i)) for i in range(5)]
    out = evolve_ensemble(p, ens, 0, 1)
    assert all(np.array_equal(a.coords, b.coords) for a, b in zip(ens, out))


def test_empty_ensemble_rejected():
    with pytest.raises(ValueError):
        evolve_ensemble(params1d(), [], 1, 0)


def test_zero_drift_variance_grows_linearly():
    p = KernelParams(np.array([2.0]), 1.0, 0.05, None)
    steps, n = 8, 40_000
    ens = evolve_ensemble(p, [Configuration(np.zeros(3), 1)] * n, steps, 77)
    coords = np.array([c.coords for c in ens])
    var = coords.var(axis=0, ddof=1)
    expected = steps * 0.05 / 2.0
    # sampling sd of a variance estimate is expected * sqrt(2/(n-1))
    assert np.all(np.abs(var - expected) < 4 * expected * np.sqrt(2 / (n - 1)))


def test_one_step_histogram_matches_density():
    p = params1d(m=1.0, eta=1.0, dt=0.2, drift=Drift.linear(-1.5))
    x = point(0.3)
    ens = evolve_ensemble(p, [x] * 50_000, 1, 5)
    d = np.array([c.coords[0] for c in ens])
    edges = np.linspace(-2.5, 2.5, 41)
    counts, _ = np.histogram(d, bins=edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    width = edges[1] - edges[0]
    dens = np.array([np.exp(transition_logpdf(p, x, point(c))) for c in centers])
    expected = dens * width * d.size
    mask = expected > 20
    chi2 = np.sum((counts[mask] - expected[mask]) ** 2 / expected[mask])
    assert stats.chi2.sf(chi2, mask.sum() - 1) > 1e-4


def test_member_streams_are_index_addressed():
    p = params1d(dt=0.5)
    ens = [point(0.0)] * 6
    full = evolve_ensemble(p, ens, 3, 42)
    # re-running member 4 alone from its own stream reproduces it
    g = member_streams(42, 6)[4]
    noise = g.standard_normal((3, 1))
    x = 0.0
    for s in range(3):
        x = x + np.sqrt(0.5) * noise[s, 0]
    assert full[4].coords[0] == pytest.approx(x, abs=1e-15)
    again = evolve_ensemble(p, ens, 3, 42)
    assert all(np.array_equal(a.coords, b.coords) for a, b in zip(full, again))


def test_total_variation_shrinks_with_dt():
    grid = np.linspace(-8, 8, 1601)
    rho = stats.norm(0, 1).pdf(grid)
    tvs = []
    for dt in (0.2, 0.1, 0.05, 0.025, 0.0125):
        p = params1d(m=1.0, eta=1.0, dt=dt, drift=Drift.linear(0.5))
        nxt = chapman_kolmogorov_step(p, grid, rho)
        tvs.append(0.5 * np.sum(np.abs(nxt - rho)) * (grid[1] - grid[0]))
    assert all(a > b for a, b in zip(tvs, tvs[1:]))
    assert tvs[-1] < 0.05


def test_chapman_kolmogorov_matches_gaussian_convolution():
    grid = np.linspace(-10, 10, 2001)
    s0 = 1.0
    rho = stats.norm(0, s0).pdf(grid)
    p = params1d(m=1.0, eta=1.0, dt=0.3)
    nxt = chapman_kolmogorov_step(p, grid, rho)
    np.testing.assert_allclose(nxt, stats.norm(0, np.sqrt(s0**2 + 0.3)).pdf(grid), atol=1e-6)


# ---- constraint verification ---------------------------------------------------------


def test_verify_requires_enough_samples():
    with pytest.raises(ValueError):
        verify_constraints(params1d(), point(0.0), 99, 0)


def test_verify_zero_drift():
    rep = verify_constraints(params1d(), point(0.0), 20_000, 3)
    assert rep.kappa_prime == 0.0 and rep.kappa_prime_expected == 0.0
    assert rep.passed


def test_verify_variance_example():
    rep = verify_constraints(params1d(dt=0.01), point(0.0), 100_000, 4)
    assert rep.covariance_diag[0] == pytest.approx(0.01, rel=0.02)
    assert rep.passed


def test_verify_linear_drift_kappa_prime():
    k = 3.0
    rep = verify_constraints(params1d(dt=0.05, drift=Drift.linear(k)), point(0.2), 100_000, 5)
    assert rep.kappa_prime_expected == pytest.approx(0.05 * k * k)
    assert abs(rep.kappa_prime - rep.kappa_prime_expected) < 4 * rep.kappa_prime_standard_error
    assert rep.passed


@pytest.mark.parametrize("seed", [11, 22, 33])
def test_verify_three_particles_three_dimensions(seed):
    p = KernelParams(np.array([1.0, 2.0, 0.5]), 1.0, 0.02, Drift.quadratic(0.8))
    x = Configuration(np.linspace(-1, 1, 9), 3)
    rep = verify_constraints(p, x, 100_000, seed)
    assert rep.passed
    assert np.all(rep.covariance_diag >= 0)
    np.testing.assert_allclose(rep.covariance_diag, p.variances(3), rtol=0.02)


def test_verify_detects_wrong_kernel():
    # feeding the wrong expected variance must flag a failure
    p = params1d(dt=0.01, drift=Drift.linear(1.0))
    rep = verify_constraints(p, point(0.0), 100_000, 1)
    shifted = np.abs(rep.kappa_n - 1.1 * rep.kappa_n_expected) <= 4 * rep.kappa_n_standard_errors
    assert not shifted.all()


def test_moment_report_json_fields():
    rep = verify_constraints(params1d(), point(0.0), 1000, 0)
    data = json.loads(rep.to_json())
    for key in ("mean_displacement", "covariance_diag", "n_samples", "standard_errors"):
        assert key in data
    assert data["n_samples"] == 1000


# ---- estimator wrapper ------------------------------------------------------------------


def test_maxent_kernel_estimator():
    est = MaxEntKernel(masses=[1.0, 2.0], dt=0.1, drift=Drift.linear(1.0), dim=2, random_state=0)
    assert clone(est).get_params()["dim"] == 2
    X = np.zeros((4, 4))
    out = est.fit(X).transform(X)
    assert out.shape == (4, 4)
    np.testing.assert_array_equal(out, est.transform(X))
    np.testing.assert_allclose(est.mean_displacement(X), [[0.1, 0.1, 0.05, 0.05]] * 4)
    scores = est.score_samples(X, out)
    assert scores.shape == (4,) and np.all(np.isfinite(scores))
    with pytest.raises(ValueError):
        est.fit(np.zeros((2, 3)))


def test_maxent_kernel_requires_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        MaxEntKernel().transform(np.zeros((1, 3)))
