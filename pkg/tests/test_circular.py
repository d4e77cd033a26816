import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy import integrate

from circforest.circular import (
    KAPPA_CAP,
    TWO_PI,
    VonMisesParams,
    a1,
    a1inv,
    angular_distance,
    bessel_i,
    cdf,
    circular_mean,
    density,
    fit_mle,
    fit_moments,
    log_likelihood,
    mean_resultant_length,
    sample,
    score,
    wrap_angle,
)
from circforest.errors import EstimationError

angles = st.floats(-50, 50, allow_nan=False)


def series_i0(k, terms=30):
    return sum((k / 2) ** (2 * m) / math.factorial(m) ** 2 for m in range(terms))


# -- angles ------------------------------------------------------------------

@given(angles)
def test_wrap_angle_range(x):
    w = wrap_angle(x)
    assert 0.0 <= w < TWO_PI
    assert abs(math.remainder(w - x, TWO_PI)) < 1e-9


def test_wrap_angle_edge_cases():
    assert wrap_angle(TWO_PI) == 0.0
    assert wrap_angle(-1e-300) == 0.0
    assert wrap_angle(-np.pi / 2) == pytest.approx(1.5 * np.pi)


@given(angles, angles)
def test_angular_distance_symmetric_and_bounded(a, b):
    d = angular_distance(a, b)
    assert d == pytest.approx(angular_distance(b, a), abs=1e-12)
    assert 0.0 <= d <= np.pi + 1e-12


def test_angular_distance_values():
    assert angular_distance(0.1, TWO_PI - 0.1) == pytest.approx(0.2)
    assert angular_distance(0.0, np.pi) == pytest.approx(np.pi)


def test_circular_mean_straddling_zero():
    ys = np.deg2rad([350.0, 10.0])
    assert angular_distance(circular_mean(ys), 0.0) < 1e-12
    assert mean_resultant_length(ys) == pytest.approx(math.cos(math.radians(10)))


# -- params --------------------------------------------------------------------

def test_params_validation_and_canonical_uniform():
    p = VonMisesParams(7.0, 1.0)
    assert p.mu == pytest.approx(7.0 - TWO_PI)
    assert VonMisesParams(2.0, 0.0).mu == 0.0
    with pytest.raises(ValueError):
        VonMisesParams(0.0, -1.0)
    with pytest.raises(ValueError):
        VonMisesParams(0.0, float("inf"))
    assert VonMisesParams(1.0, 2.0).rotate(np.pi).mu == pytest.approx(1.0 + np.pi)


# -- Bessel functions ---------------------------------------------------------

def test_bessel_trivial_values():
    assert bessel_i(0, 0.0) == 1.0
    assert bessel_i(1, 0.0) == 0.0
    assert bessel_i(0, 1.0) == pytest.approx(series_i0(1.0), rel=1e-13)
    assert bessel_i(0, 1.0) == pytest.approx(1.26607, abs=1e-5)


@pytest.mark.parametrize("kappa", [1e-8, 0.01, 0.5, 1.0, 3.7, 10.0, 55.0, 200.0, 699.0])
@pytest.mark.parametrize("order", [0, 1])
def test_bessel_matches_mpmath(order, kappa):
    mpmath.mp.dps = 40
    ref = float(mpmath.besseli(order, kappa))
    assert bessel_i(order, kappa) == pytest.approx(ref, rel=1e-12)
    scaled = float(mpmath.besseli(order, kappa) * mpmath.exp(-kappa))
    assert bessel_i(order, kappa, scaled=True) == pytest.approx(scaled, rel=1e-12)


def test_bessel_errors():
    with pytest.raises(ValueError):
        bessel_i(0, float("nan"))
    with pytest.raises(ValueError):
        bessel_i(0, -1.0)
    with pytest.raises(ValueError):
        bessel_i(2, 1.0)


def test_a1_large_kappa_is_finite():
    assert a1(1e5) == pytest.approx(1 - 1 / 2e5, rel=1e-9)
    assert a1(0.0) == 0.0


@pytest.mark.parametrize("r", np.round(np.arange(0.01, 1.0, 0.01), 2))
def test_a1inv_roundtrip(r):
    assert abs(a1(a1inv(r)) - r) <= 1e-9


def test_a1inv_matches_bisection_oracle():
    from scipy.optimize import brentq

    k_ref = brentq(lambda k: float(a1(k)) - 0.5, 1e-9, 50, xtol=1e-14)
    assert a1inv(0.5) == pytest.approx(k_ref, rel=1e-10)


def test_a1inv_limits():
    assert a1inv(0.0) == 0.0
    assert a1inv(1.0) == KAPPA_CAP
    out = a1inv(np.array([0.0, 0.3, 0.999]))
    assert out.shape == (3,)


# -- density, likelihood, score ---------------------------------------------------

def test_density_examples():
    assert density(1.234, VonMisesParams(0.0, 0.0)) == pytest.approx(1 / TWO_PI)
    i0 = series_i0(1.0)
    assert density(0.3, VonMisesParams(0.3, 1.0)) == pytest.approx(math.e / (TWO_PI * i0), rel=1e-12)
    assert density(0.3 + np.pi, VonMisesParams(0.3, 1.0)) == pytest.approx(
        math.exp(-1) / (TWO_PI * i0), rel=1e-12)
    assert density(0.3, VonMisesParams(0.3, 1.0)) == pytest.approx(0.34171, abs=1e-5)


@pytest.mark.parametrize("kappa", [0.0, 0.5, 5.0, 200.0, 5e4])
def test_density_integrates_to_one(kappa):
    p = VonMisesParams(1.0, kappa)
    pts = [1.0] if kappa > 100 else None
    val, _ = integrate.quad(lambda y: density(y, p), 0, TWO_PI, points=pts, limit=500,
                            epsabs=1e-12)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_log_likelihood_examples():
    assert log_likelihood(2.0, VonMisesParams(0.0, 0.0)) == pytest.approx(-math.log(TWO_PI))
    assert log_likelihood(1.0, VonMisesParams(1.0, 1.0)) == pytest.approx(
        1 - math.log(TWO_PI * series_i0(1.0)), abs=1e-13)
    ys = np.array([0.1, 2.0, 4.0])
    p = VonMisesParams(1.0, 3.0)
    assert np.sum(log_likelihood(ys, p)) == pytest.approx(sum(log_likelihood(y, p) for y in ys))


@given(st.floats(0, TWO_PI), st.floats(0, TWO_PI), st.floats(0, 600))
def test_log_likelihood_is_log_density(y, mu, kappa):
    p = VonMisesParams(mu, kappa)
    f = density(y, p)
    # far in the tail the density underflows (subnormal), so only compare
    # where it is a normal float
    assume(f > 1e-300)
    ref = math.log(f)
    tol = 1e-12 if ref > -30 else 1e-15 * abs(ref) * 10
    assert log_likelihood(y, p) == pytest.approx(ref, abs=tol)


def test_score_trivial():
    assert score(1.0, VonMisesParams(1.0, 3.0))[0] == 0.0
    assert tuple(score(0.0, VonMisesParams(0.0, 0.0))) == (0.0, 1.0)


def _fd_score(y, mu, kappa, h=1e-6):
    def ll(m, k):
        return log_likelihood(y, VonMisesParams(m, k))

    return ((ll(mu + h, kappa) - ll(mu - h, kappa)) / (2 * h),
            (ll(mu, kappa + h) - ll(mu, kappa - h)) / (2 * h))


@pytest.mark.parametrize("kappa", [0.1, 1.0, 5.0, 50.0])
@pytest.mark.parametrize("delta", [0, np.pi / 4, -np.pi / 4, np.pi / 2, -np.pi / 2, np.pi])
def test_score_matches_finite_differences(kappa, delta):
    mu = 0.7
    got = score(mu + delta, VonMisesParams(mu, kappa))
    ref = _fd_score(mu + delta, mu, kappa)
    assert np.max(np.abs(got - ref)) <= 1e-5


# -- cdf ------------------------------------------------------------------------

def test_cdf_examples():
    p = VonMisesParams(1.0, 2.0)
    assert cdf(TWO_PI, p) == pytest.approx(1.0, abs=1e-10)
    assert cdf(np.pi, VonMisesParams(0.0, 0.0)) == pytest.approx(0.5, abs=1e-12)
    assert cdf(1.0, p, origin=1.0 - np.pi) == pytest.approx(0.5, abs=1e-10)
    assert cdf(0.0, p, origin=0.0) == 0.0


def test_cdf_derivative_matches_density():
    rng = np.random.default_rng(1)
    p = VonMisesParams(2.0, 3.0)
    h = 1e-5
    for y in rng.uniform(0.01, TWO_PI - 0.01, 100):
        d = (cdf(y + h, p) - cdf(y - h, p)) / (2 * h)
        assert d == pytest.approx(density(y, p), abs=1e-6)


@given(st.floats(0, TWO_PI), st.floats(0, TWO_PI), st.floats(0, 20))
@settings(max_examples=40, deadline=None)
def test_cdf_monotone_in_arc(a, b, kappa):
    p = VonMisesParams(1.0, kappa)
    lo, hi = sorted([a, b])
    assert cdf(lo, p) <= cdf(hi, p) + 1e-10


# -- sampling --------------------------------------------------------------------

def test_sample_uniform_and_location():
    u = sample(VonMisesParams(0.0, 0.0), 100_000, seed=3)
    assert mean_resultant_length(u) < 0.02
    assert np.all((u >= 0) & (u < TWO_PI))
    v = sample(VonMisesParams(1.0, 5.0), 100_000, seed=3)
    assert angular_distance(circular_mean(v), 1.0) < 0.02


def test_sample_deterministic():
    p = VonMisesParams(1.0, 2.0)
    assert np.array_equal(sample(p, 50, seed=9), sample(p, 50, seed=9))
    with pytest.raises(ValueError):
        sample(p, 0, seed=1)


# -- estimation ------------------------------------------------------------------

def test_fit_mle_zero_dispersion():
    fit = fit_mle([0.4, 0.4, 0.4])
    assert fit.mu == pytest.approx(0.4)
    assert fit.kappa == KAPPA_CAP
    assert fit.degenerate


def test_fit_mle_antipodal():
    fit = fit_mle([0.0, np.pi])
    assert fit.kappa == 0.0 and fit.mu == 0.0 and fit.degenerate


def test_fit_mle_errors():
    with pytest.raises(EstimationError):
        fit_mle([])
    with pytest.raises(EstimationError):
        fit_mle([1.0, 2.0], weights=[0.0, 0.0])
    with pytest.raises(ValueError):
        fit_mle([1.0, 2.0], weights=[1.0, -1.0])


def test_fit_mle_recovers_parameters():
    ys = sample(VonMisesParams(1.0, 2.0), 10_000, seed=11)
    fit = fit_mle(ys)
    assert abs(fit.mu - 1.0) <= 0.05
    assert abs(fit.kappa - 2.0) <= 0.15


def test_fit_mle_score_identity_and_tolerance():
    rng = np.random.default_rng(5)
    ys = sample(VonMisesParams(3.0, 1.5), 200, seed=5)
    w = rng.uniform(0, 2, ys.size)
    fit = fit_mle(ys, w)
    s = (w[:, None] * score(ys, fit)).sum(axis=0)
    assert np.all(np.abs(s) <= 1e-6)
    c, sn = np.sum(w * np.cos(ys)), np.sum(w * np.sin(ys))
    rbar = math.hypot(c, sn) / w.sum()
    assert abs(a1(fit.kappa) - rbar) <= 1e-10


def test_unit_weights_equal_unweighted_exactly():
    ys = sample(VonMisesParams(2.0, 4.0), 77, seed=2)
    a = fit_mle(ys)
    b = fit_mle(ys, np.ones(ys.size))
    assert a.mu == b.mu and a.kappa == b.kappa


def test_fit_moments_vectorised_matches_scalar():
    ys = [sample(VonMisesParams(m, 3.0), 40, seed=int(10 * m)) for m in (0.5, 2.0, 4.0)]
    c = np.array([np.cos(y).sum() for y in ys])
    s = np.array([np.sin(y).sum() for y in ys])
    mu, kappa, deg = fit_moments(c, s, np.full(3, 40.0))
    for i, y in enumerate(ys):
        ref = fit_mle(y)
        assert mu[i] == pytest.approx(ref.mu, abs=1e-12)
        assert kappa[i] == pytest.approx(ref.kappa, rel=1e-10)
        assert not deg[i]


@given(st.lists(st.floats(0, TWO_PI), min_size=2, max_size=30), st.floats(-10, 10))
@settings(max_examples=60, deadline=None)
def test_fit_rotation_equivariance(ys, delta):
    ys = np.array(ys)
    a = fit_mle(ys)
    b = fit_mle(ys + delta)
    if a.kappa == 0.0 or a.kappa == KAPPA_CAP:
        return
    if a.kappa > 1e3:  # nearly degenerate: conditioning of A^-1 near 1
        assert b.kappa == pytest.approx(a.kappa, rel=1e-6)
    else:
        assert abs(b.kappa - a.kappa) <= 1e-12 * max(1.0, a.kappa) * 100
    assert angular_distance(b.mu, a.mu + delta) < 1e-9
