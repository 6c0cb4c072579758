import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from stableavg.stable_noise import (RngStream, StableCDFError, StableLaw, cdf_1d, gil_pelaez_cdf,
                                    increment, levy_constant, levy_density, sample_unit)


def mp_cdf(x, alpha):
    """Independent oracle: Gil-Pelaez inversion in mpmath with oscillatory quadrature."""
    mpmath.mp.dps = 30
    f = lambda s: mpmath.sin(x * s) * mpmath.exp(-s**alpha) / s
    return float(0.5 + mpmath.quadosc(f, [0, mpmath.inf], omega=x) / mpmath.pi)


# frozen from mp_cdf at alpha = 1.5
FROZEN_CDF = {0.5: 0.639404226486179, 1.0: 0.756342024401005, 2.0: 0.894960170345784,
              5.0: 0.979330912860039, 10.0: 0.993360190802286}


@pytest.mark.parametrize("x,expected", sorted(FROZEN_CDF.items()))
def test_cdf_frozen_values(x, expected):
    assert cdf_1d(StableLaw(1.5), x) == pytest.approx(expected, abs=1e-9)
    assert cdf_1d(StableLaw(1.5), -x) == pytest.approx(1 - expected, abs=1e-9)


@pytest.mark.parametrize("alpha", [1.1, 1.5, 1.9])
@pytest.mark.parametrize("x", [0.3, 1.7, 6.0])
def test_cdf_matches_mpmath(alpha, x):
    val, err = gil_pelaez_cdf(x, alpha)
    assert err < 1e-6
    assert val == pytest.approx(mp_cdf(x, alpha), abs=1e-8)


def test_cdf_agrees_with_scipy_levy_stable():
    # scipy's S1 parametrisation with scale 1 has cf exp(-|xi|^alpha) for beta = 0
    xs = np.array([-3.0, -0.4, 0.8, 2.5])
    ref = stats.levy_stable.cdf(xs, 1.5, 0.0)
    assert np.allclose(cdf_1d(StableLaw(1.5), xs), ref, atol=1e-5)


def test_cdf_at_zero_and_monotone():
    assert gil_pelaez_cdf(0.0, 1.3) == (0.5, 0.0)
    v = cdf_1d(StableLaw(1.3), np.linspace(-20, 20, 41))
    assert np.all(np.diff(v) > 0)


def test_cdf_error_raised_when_tolerance_unreachable(monkeypatch):
    import stableavg.stable_noise as sn
    monkeypatch.setattr(sn, "_CDF_TOL", 1e-20)
    with pytest.raises(StableCDFError):
        gil_pelaez_cdf(1.0, 1.5)


@pytest.mark.parametrize("alpha", [0.9, 1.0, 2.0, 2.5])
def test_law_rejects_alpha_outside_range(alpha):
    with pytest.raises(ValueError):
        StableLaw(alpha)


def test_law_rejects_bad_dim_and_convention():
    with pytest.raises(ValueError):
        StableLaw(1.5, dim=0)
    with pytest.raises(ValueError):
        StableLaw(1.5, multivariate="elliptic")
    with pytest.raises(ValueError):
        StableLaw(1.5, convention="sigma")


def test_shapes():
    g = np.random.default_rng(0)
    assert sample_unit(StableLaw(1.5), g).shape == (1,)
    assert sample_unit(StableLaw(1.5, 3), g, 7).shape == (7, 3)
    assert increment(StableLaw(1.5, 2, "isotropic"), 0.1, g, 5).shape == (5, 2)


def test_increment_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        increment(StableLaw(1.5), 0.0, np.random.default_rng(0))


def test_stream_replays_and_separates_channels():
    a = sample_unit(StableLaw(1.5), RngStream(7, 3).generator(0), 100)
    b = sample_unit(StableLaw(1.5), RngStream(7, 3).generator(0), 100)
    c = sample_unit(StableLaw(1.5), RngStream(7, 3).generator(1), 100)
    d = sample_unit(StableLaw(1.5), RngStream(7, 4).generator(0), 100)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_stream_rejects_negative_keys():
    with pytest.raises(ValueError):
        RngStream(-1)


@pytest.mark.parametrize("alpha", [1.2, 1.5, 1.8])
def test_characteristic_function(alpha):
    n = 100_000
    x = sample_unit(StableLaw(alpha), RngStream(11, 0).generator(), n)[:, 0]
    for xi in (0.5, 1.0, 2.0):
        assert abs(np.mean(np.exp(1j * xi * x)) - math.exp(-xi**alpha)) <= 5 / math.sqrt(n)


def test_self_similarity_of_increments():
    law = StableLaw(1.5)
    g = RngStream(5).generator()
    a = increment(law, 0.25, g, 50_000)[:, 0]
    b = 0.25 ** (1 / 1.5) * sample_unit(law, RngStream(5).generator(), 50_000)[:, 0]
    assert np.array_equal(a, b)


def test_isotropic_law_is_rotation_invariant():
    law = StableLaw(1.5, 2, "isotropic")
    z = sample_unit(law, RngStream(3).generator(), 100_000)
    for theta in (0.0, 0.7, 2.0):
        u = np.array([math.cos(theta), math.sin(theta)])
        emp = np.mean(np.cos(z @ u))
        assert emp == pytest.approx(math.exp(-1.0), abs=0.01)


def test_independent_coordinates_have_product_cf():
    z = sample_unit(StableLaw(1.5, 2), RngStream(3).generator(), 100_000)
    xi = np.array([1.0, 1.0])
    assert np.mean(np.cos(z @ xi)) == pytest.approx(math.exp(-2.0), abs=0.01)


def test_truncated_moments_near_gaussian_limit():
    # frozen from the Gil-Pelaez CDF at alpha = 1.99 (E[X^2; |X| <= 5], P(|X| <= 5))
    x = sample_unit(StableLaw(1.99), RngStream(2).generator(), 200_000)[:, 0]
    inside = np.abs(x) <= 5
    assert inside.mean() == pytest.approx(0.999035690069599, abs=4e-4)
    assert np.mean(np.where(inside, x * x, 0.0)) == pytest.approx(1.99504219881864, abs=0.03)


def test_levy_constant_closed_form():
    assert levy_constant(1, 1.5) == pytest.approx(0.299207, abs=1e-6)
    for a in (1.2, 1.5, 1.8):
        # two-sided identity c = 1 / (-2 Gamma(-alpha) cos(pi alpha / 2))
        alt = 1.0 / (-2 * special.gamma(-a) * math.cos(math.pi * a / 2))
        assert levy_constant(1, a) == pytest.approx(alt, rel=1e-12)


def test_levy_constant_reproduces_symbol():
    # int (1 - cos(z)) c |z|^{-1-alpha} dz = 1, the symbol at xi = 1
    mpmath.mp.dps = 30
    a = mpmath.mpf(1.5)
    c = levy_constant(1, 1.5)
    g = lambda z: (1 - mpmath.cos(z)) * z ** (-1 - a)
    tail = 1 / a - mpmath.quadosc(lambda z: mpmath.cos(z) * z ** (-1 - a), [1, mpmath.inf], omega=1)
    val = 2 * c * (mpmath.quad(g, [0, 1]) + tail)
    assert float(val) == pytest.approx(1.0, abs=1e-6)


def test_levy_density():
    law = StableLaw(1.5)
    assert levy_density(law, 2.0) == pytest.approx(levy_constant(1, 1.5) * 2.0**-2.5)
    with pytest.raises(ValueError):
        levy_density(law, 0.0)
    with pytest.raises(ValueError):
        levy_density(StableLaw(1.5, 2), np.ones(2))
    iso = StableLaw(1.5, 2, "isotropic")
    assert levy_density(iso, np.array([3.0, 4.0])) == pytest.approx(levy_constant(2, 1.5) * 5.0**-3.5)


@settings(max_examples=25, deadline=None)
@given(st.floats(1.05, 1.95), st.floats(-30, 30))
def test_cdf_symmetry_property(alpha, x):
    f, _ = gil_pelaez_cdf(x, alpha)
    g, _ = gil_pelaez_cdf(-x, alpha)
    assert 0.0 <= f <= 1.0
    assert f + g == pytest.approx(1.0, abs=1e-9)
