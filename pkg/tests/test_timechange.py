import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from tclevy.prm import PointSet, sample_points_batch
from tclevy.timechange import (CommonFactor, IndependentFactors, VolSpec, batch_functionals,
                               functional_from_points, interval_kernel, interval_weights,
                               kernel_from_coefficients, laplace_ou, ou_weight, time_changes_from_points,
                               warmup_tail_bound)


@settings(max_examples=60)
@given(st.floats(-20, 6), st.integers(1, 5), st.floats(0.1, 2.0), st.floats(0.05, 3.0))
def test_kernel_telescoping(s, n, delta, lam):
    parts = interval_weights(np.array(s), n, delta, lam)
    assert abs(parts.sum() - ou_weight(s, 0.0, n * delta, lam)) < 1e-12
    assert np.all(parts >= 0)


@pytest.mark.parametrize("s", [-3.0, 0.0, 0.4, 1.0, 1.7])
def test_ou_weight_is_integrated_response(s):
    lam, t1, t2 = 1.3, 0.5, 1.5
    ref, _ = quad(lambda t: math.exp(-lam * (t - s)) if t >= s else 0.0, t1, t2, points=[s] if t1 < s < t2 else None,
                  epsabs=1e-14)
    assert abs(ou_weight(s, t1, t2, lam) - ref) < 1e-12


def test_ou_weight_after_interval_is_zero():
    assert ou_weight(2.5, 0.0, 2.0, 1.0) == 0.0
    with pytest.raises(ValueError):
        ou_weight(0.0, 1.0, 1.0, 1.0)


def test_stationary_mean_by_simulation(rng):
    spec = VolSpec(0.7, 2.0, 1.5)
    nu = spec.intensities(3.0)[0]
    owner, s, x = sample_points_batch(nu, 40_000, rng)
    tau = batch_functionals(owner, s, x, 40_000, 3, 1.0, 0.7)
    mean = spec.mean_time_changes(1.0)[0]
    assert mean == pytest.approx(2.0 / 1.5)
    for i in range(3):
        assert abs(tau[:, i].mean() - mean) < 4 * tau[:, i].std() / math.sqrt(40_000)


def test_warmup_default_rule():
    spec = VolSpec(0.5, 1.0, 1.0, IndependentFactors(2.0, 1.0, 1.0))
    assert spec.warmup == pytest.approx(math.log(1e10) / 0.5)
    assert math.exp(-0.5 * spec.warmup) == pytest.approx(1e-10)
    assert VolSpec(1.0, 1.0, 1.0, s_max=4.0).warmup == 4.0
    assert warmup_tail_bound(spec, np.array([1.0])) == pytest.approx(1e-10)


def test_point_functionals_agree(rng):
    spec = VolSpec(1.2, 1.0, 2.0, CommonFactor(0.5))
    pts = PointSet(rng.uniform(-5, 3, 30), rng.exponential(1.0, 30))
    tau, gamma = time_changes_from_points(spec, (pts,), 3, 1.0)
    for i in range(1, 4):
        assert functional_from_points(pts, interval_kernel(spec, i, 1.0, "h", 3)) == pytest.approx(tau[i - 1])
        assert functional_from_points(pts, interval_kernel(spec, i, 1.0, "f", 3)) == pytest.approx(
            tau[i - 1] + gamma[i - 1])
    assert np.allclose(gamma, 0.5 * tau)
    owner = np.zeros(30, dtype=int)
    assert np.allclose(batch_functionals(owner, pts.s, pts.x, 1, 3, 1.0, 1.2)[0], tau)


def test_independent_factor_points():
    spec = VolSpec(1.0, 1.0, 1.0, IndependentFactors(0.5, 1.0, 1.0))
    p1 = PointSet([-1.0], [2.0])
    p2 = PointSet([0.5], [1.0])
    tau, gamma = time_changes_from_points(spec, (p1, p2), 2, 1.0)
    assert tau[0] == pytest.approx(2.0 * ou_weight(-1.0, 0.0, 1.0, 1.0))
    assert gamma[1] == pytest.approx(ou_weight(0.5, 1.0, 2.0, 0.5))


def test_kernel_from_coefficients_common_factor():
    spec = VolSpec(1.0, 1.0, 1.0, CommonFactor(0.25))
    k = kernel_from_coefficients(spec, [1.0, 2.0], [4.0, 8.0], 1.0)
    assert np.allclose(k.coef[0], [2.0, 4.0])
    assert k.breakpoints == (0.0, 1.0, 2.0)


def test_closed_form_batched_shapes():
    spec = VolSpec(1.0, 2.0, 1.0)
    nu = spec.intensities(2.0)[0]
    coef = np.ones((4, 3, 2), dtype=complex) * (0.5 + 0.2j)
    out = laplace_ou(nu, 1.0, 1.0, coef)
    assert out.shape == (4, 3)
    assert np.allclose(out, out[0, 0])


def test_volspec_roundtrip_and_validation():
    for spec in (VolSpec(1.0, 2.0, 3.0), VolSpec(1.0, 2.0, 3.0, IndependentFactors(0.5, 1.0, 2.0), 7.0)):
        assert VolSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        VolSpec(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        CommonFactor(-1.0)
