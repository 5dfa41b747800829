import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, trapezoid
from scipy.stats import norm

from tclevy.levy import CompoundPoissonDoubleExp, GammaSubordinator, InverseGaussian, StripError, Zero
from tclevy.likelihood import (DegenerateError, ModelParams, Observations, block_log_likelihoods, build_lattice,
                               characteristic_function, coefficients, composite_log_likelihood,
                               conditional_density, laplace_surface, log_likelihood, marginal_density_grid,
                               omega_upsilon)
from tclevy.prm import Deterministic, PointSet, Poisson
from tclevy.quadrature import BudgetExceeded, QuadConfig
from tclevy.timechange import CommonFactor, VolSpec, time_changes_from_points

from conftest import reference_params


def normal_params(mu, beta, rho, delta=1.0):
    return ModelParams(mu, beta, rho, delta, Zero(), Zero(), VolSpec(1.0, 1.0, 1.0))


def normal_loglik(X, p, tau, gamma):
    ts = tau + gamma
    return float(np.sum(norm.logpdf(X, p.mu * p.delta + p.beta * ts + p.rho * gamma, np.sqrt(ts))))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_normal_degeneration(n, rng):
    for _ in range(4):
        p = normal_params(rng.normal(), rng.normal(0, 0.3), rng.normal(0, 0.3), rng.uniform(0.5, 2))
        tau, gamma = rng.uniform(0.3, 2, n), rng.uniform(0, 1, n)
        X = rng.normal(0, 1.5, n)
        ll = log_likelihood(X, p, Deterministic(tau=tau, gamma=gamma))
        assert abs(ll - normal_loglik(X, p, tau, gamma)) < 1e-8


def test_deterministic_points_same_as_tau(rng):
    p = normal_params(0.1, 0.2, -0.1)
    pts = (PointSet([-2.0, 0.3, 1.4], [1.0, 0.5, 2.0]), PointSet([0.8], [0.7]))
    p = ModelParams(0.1, 0.2, -0.1, 1.0, Zero(), Zero(), reference_params().vol)
    tau, gamma = time_changes_from_points(p.vol, pts, 2, 1.0)
    X = np.array([0.3, -0.5])
    a = log_likelihood(X, p, Deterministic(points=pts))
    b = log_likelihood(X, p, Deterministic(tau=tau, gamma=gamma))
    assert abs(a - b) < 1e-12
    assert abs(a - normal_loglik(X, p, tau, gamma)) < 1e-8


def test_conditional_density_is_normal():
    p = reference_params()
    x = np.linspace(-4, 4, 9)
    got = conditional_density(p, x, 0.3, 0.0, 1.2, 0.4)
    ref = norm.pdf(x, 0.3 + p.beta * 1.6 + p.rho * 0.4, math.sqrt(1.6))
    assert np.allclose(got, ref, rtol=1e-13)
    with pytest.raises(DegenerateError):
        conditional_density(p, 0.0, 0.0, 0.0, 0.0, 0.0)


@given(st.floats(-50, 50))
def test_coefficient_conjugate_symmetry(y):
    p = reference_params(levy2=GammaSubordinator(1.0, 2.0))
    c1, c2 = coefficients(p, np.array([y]))
    d1, d2 = coefficients(p, np.array([-y]))
    assert abs(c1 - np.conj(d1))[0] < 1e-12 * (1 + abs(c1[0]))
    assert abs(c2 - np.conj(d2))[0] < 1e-12 * (1 + abs(c2[0]))


@settings(max_examples=30, deadline=None)
@given(st.floats(-20, 20), st.floats(-20, 20))
def test_integrand_conjugate_symmetry_and_modulus_bound(y1, y2):
    p = reference_params()
    y = np.array([[y1, y2], [-y1, -y2]])
    lam = laplace_surface(p, y)
    assert abs(lam[0] - np.conj(lam[1])) < 1e-12 * (1 + abs(lam[0]))
    # |E exp(-(beta + iy).A)| <= E exp(-beta.A): the modulus peaks on the real axis
    lam0 = laplace_surface(p, np.zeros((1, 2)))[0]
    assert abs(lam0.imag) < 1e-14
    assert lam[0].real >= lam0.real - 1e-12


def test_kernel_real_part_nonnegative_without_warning():
    p = reference_params()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        omega_upsilon(p, np.array([[3.0, -1.0]]))


def test_shift_equivariance(ref_params, rng):
    X = rng.normal(0.2, 1.3, 2)
    c = 0.7
    shifted = reference_params(mu=c)
    a = log_likelihood(X, ref_params)
    b = log_likelihood(X + c * ref_params.delta, shifted)
    assert abs(a - b) < 1e-10


def test_density_normalizes_and_matches_real_axis_inversion(ref_params):
    x = np.linspace(-30, 30, 1201)
    f, diag = marginal_density_grid(x, ref_params, return_diagnostics=True)
    assert abs(trapezoid(f, x) - 1) < 1e-4
    assert diag["max_im_re_ratio"] < 1e-6
    for xi in (-2.0, 0.0, 1.5):
        # f(x) = (1/pi) int_0^inf Re[exp(-iux) phi(u)] du, on the real axis with scipy
        g = lambda u: (np.exp(-1j * u * xi) * characteristic_function(ref_params, np.array([[u]]))[0]).real
        ref, _ = quad(g, 0, 200, limit=400, epsabs=1e-12)
        fi = marginal_density_grid([xi], ref_params)[0]
        assert abs(fi - ref / math.pi) < 1e-9


def test_density_positive_and_mean_matches(ref_params):
    x = np.linspace(-40, 40, 4001)
    f = marginal_density_grid(x, ref_params)
    assert np.all(f > 0)
    mt, mg = ref_params.vol.mean_time_changes(1.0)
    mean = ref_params.beta * (mt + mg) + ref_params.rho * mg
    assert abs(trapezoid(x * f, x) - mean) < 1e-5


def test_characteristic_function_basics(ref_params):
    u = np.array([[0.0, 0.0], [0.3, -0.2], [-0.3, 0.2]])
    cf = characteristic_function(ref_params, u)
    assert cf[0] == pytest.approx(1.0, abs=1e-14)
    assert abs(cf[1] - np.conj(cf[2])) < 1e-14
    assert np.all(np.abs(cf) <= 1 + 1e-14)


def test_joint_density_marginalizes(ref_params):
    """Integrating the n=2 joint density over x2 gives the n=1 density at x1."""
    x1 = 0.4
    x2 = np.linspace(-30, 30, 601)
    blocks = np.column_stack([np.full_like(x2, x1), x2])
    joint = np.exp(block_log_likelihoods(blocks, ref_params))
    marg = trapezoid(joint, x2)
    assert abs(marg - marginal_density_grid([x1], ref_params)[0]) < 1e-6


def test_composite_is_sum_of_blocks(ref_params, rng):
    X = rng.normal(0.2, 1.2, 7)
    total = composite_log_likelihood(X, ref_params, block=2)
    parts = sum(log_likelihood(X[i:i + 2], ref_params) for i in (0, 2, 4)) + log_likelihood(X[6:], ref_params)
    assert abs(total - parts) < 1e-9
    rows = X[:6].reshape(3, 2)
    assert abs(composite_log_likelihood(rows, ref_params) - sum(log_likelihood(r, ref_params) for r in rows)) < 1e-9


def test_dimension_cap_and_errors(ref_params):
    with pytest.raises(ValueError):
        log_likelihood(np.zeros(4), ref_params)
    with pytest.raises(BudgetExceeded):
        log_likelihood(np.zeros(3), ref_params, q=QuadConfig(max_evals=1000))
    with pytest.raises(DegenerateError):
        log_likelihood(np.zeros(2), ref_params, Deterministic(tau=[0.0, 1.0]))
    with pytest.raises(ValueError):
        Observations([np.nan])


def test_strip_validation():
    with pytest.raises(StripError):
        reference_params(beta=-2.5, levy1=GammaSubordinator(1.0, 2.0))
    with pytest.raises(ValueError):
        reference_params(delta=0.0)


def test_params_roundtrip(ref_params):
    p = reference_params(levy2=InverseGaussian(1.0, 2.0))
    assert ModelParams.from_dict(p.to_dict()) == p
    assert ref_params.alpha == pytest.approx(-0.1)


def test_common_factor_and_other_levy(rng):
    p = ModelParams(0.05, 0.1, -0.2, 0.5, CompoundPoissonDoubleExp(1.0, 0.4, 6.0, 5.0), GammaSubordinator(1.0, 3.0),
                    VolSpec(2.0, 3.0, 1.0, CommonFactor(0.5)))
    x = np.linspace(-15, 15, 601)
    f = marginal_density_grid(x, p)
    assert abs(trapezoid(f, x) - 1) < 1e-4
    ll = log_likelihood([0.1, -0.3], p)
    assert math.isfinite(ll)


def test_explicit_poisson_intensities_match_default(ref_params):
    intens = ref_params.vol.intensities(2.0)
    X = np.array([0.5, -0.1])
    assert abs(log_likelihood(X, ref_params, Poisson(intens)) - log_likelihood(X, ref_params)) < 1e-12


def test_lattice_is_reusable(ref_params):
    lat = build_lattice(ref_params, 2, np.array([3.0, 3.0]))
    X = np.array([0.5, -1.0])
    assert abs(log_likelihood(X, ref_params, lattice=lat) - log_likelihood(X, ref_params)) < 1e-9


@pytest.mark.parametrize("x", [-10.0, 3.0, 14.0])
def test_density_independent_of_contour(ref_params, x):
    """The inversion integral gives the same density on every admissible contour Re z = c."""
    from tclevy.likelihood import saddle_tilt
    c_star, _ = saddle_tilt(ref_params, np.array([x]))
    f = marginal_density_grid([x], ref_params)[0]
    for c in (float(c_star[0]), 0.5 * (float(c_star[0]) + ref_params.beta)):
        g = lambda y: (np.exp(1j * y * x - laplace_surface(ref_params, np.array([[y]]), tilt=[c])[0])).real
        val, _ = quad(g, 0, np.inf, limit=500, epsabs=0, epsrel=1e-10)
        ref = math.exp(c * x) * val / math.pi
        assert abs(f - ref) < 1e-8 * ref


def test_tail_density_against_conditional_monte_carlo(ref_params):
    """E[Normal density given clocks and jumps] over simulated latents, an estimator free of Fourier inversion."""
    from tclevy.montecarlo import simulate_returns
    sim = simulate_returns(ref_params, 1, 200_000, seed=99, keep_latent=True)
    x = np.array([-12.0, -6.0, 0.0, 6.0, 12.0])
    vals = conditional_density(ref_params, x[:, None], sim.J1[None, :, 0], sim.J2[None, :, 0],
                               sim.tau[None, :, 0], sim.gamma[None, :, 0])
    est = vals.mean(axis=1)
    se = vals.std(axis=1) / math.sqrt(vals.shape[1])
    f = marginal_density_grid(x, ref_params)
    assert np.all(np.abs(est - f) < 4 * se)
