import math

import numpy as np
import pytest
from scipy import integrate

from stableavg.ergodics import (EmpiricalMeasure, EscapedPathsError, SignalBelowNoise,
                                density_oracle, estimate_invariant, integrate_measure,
                                mixing_rate, stationary_cdf, stationary_cdf_fast,
                                stationary_quantile)
from stableavg.stable_noise import cdf_1d, StableLaw
from stableavg.stats import ks_one_sample
from stableavg.systems import get_system, toy

RHO0_15 = 0.37653862524  # (1/pi) int exp(-xi^1.5 / 1.5) dxi, mpmath at 20 digits


def test_density_at_zero_closed_form():
    # int_0^inf exp(-s^a / a) ds = a^{1/a - 1} Gamma(1/a)
    for a in (1.2, 1.5, 1.8):
        closed = a ** (1 / a - 1) * math.gamma(1 / a) / math.pi
        assert density_oracle(a, 0.0) == pytest.approx(closed, rel=1e-9)
    assert density_oracle(1.5, 0.0) == pytest.approx(RHO0_15, abs=1e-9)


def test_density_integrates_to_cdf():
    v, _ = integrate.quad(lambda x: density_oracle(1.5, x), 0.0, 2.0)
    assert stationary_cdf(1.5, 2.0) - 0.5 == pytest.approx(v, abs=1e-8)


def test_stationary_law_is_rescaled_unit_law():
    # scale (1/alpha)^{1/alpha}: F(x) = F_unit(x alpha^{1/alpha})
    a = 1.5
    for x in (0.3, 1.0, 4.0):
        assert stationary_cdf(a, x) == pytest.approx(cdf_1d(StableLaw(a), x * a ** (1 / a)), abs=1e-9)


def test_fast_cdf_and_quantiles():
    xs = np.array([-50.0, -3.0, 0.123, 2.0, 45.0])
    assert stationary_cdf_fast(1.5, xs) == pytest.approx(stationary_cdf(1.5, xs), abs=2e-6)
    q = stationary_quantile(1.5, 0.9)
    assert stationary_cdf(1.5, q) == pytest.approx(0.9, abs=1e-10)
    assert stationary_quantile(1.5, 0.5) == 0.0
    with pytest.raises(ValueError):
        stationary_quantile(1.5, 1.0)
    with pytest.raises(ValueError):
        density_oracle(2.5, 0.0)


def test_invariant_samples_match_stationary_law():
    m = estimate_invariant(toy(), [0.0], n=20_000, seed=1)
    assert len(m) == 20_000
    ks = ks_one_sample(m.samples[:, 0], lambda v: stationary_cdf_fast(1.5, v))
    assert ks < 0.02
    assert m.provenance["burn_in"] == 5.0


def test_single_chain_mode_and_groups():
    m = estimate_invariant(toy(), [0.0], n=2_000, seed=2, n_chains=1)
    assert len(np.unique(m.groups)) == 20
    mean, se = integrate_measure(m, lambda s: s[:, 0])
    assert abs(mean) < 5 * se + 0.05


def test_burn_in_floor():
    with pytest.raises(ValueError):
        estimate_invariant(toy(), [0.0], burn_in=1.0)


def test_escaped_chains_raise():
    s = toy().replace(b=lambda x, y: 1e14 * np.ones_like(x), gamma=1.0)
    with pytest.raises(EscapedPathsError):
        estimate_invariant(s, [0.0], n=10, n_chains=10, dt=0.01)


def test_measure_validation_and_csv(tmp_path):
    with pytest.raises(ValueError):
        EmpiricalMeasure(np.zeros((3, 1)), np.array([0.5, 0.5, 0.5]), np.zeros(3))
    m = EmpiricalMeasure.uniform(np.arange(40.0), note="x")
    mean, se = integrate_measure(m, lambda s: s[:, 0])
    assert mean == pytest.approx(19.5)
    m.to_csv(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "x0,weight"


def test_integrate_measure_vector_valued():
    m = EmpiricalMeasure.uniform(np.linspace(-1, 1, 100))
    mean, se = integrate_measure(m, lambda s: np.stack([s[:, 0], s[:, 0] ** 2], axis=1))
    assert mean.shape == (2,) and se.shape == (2,)


def test_mixing_rate_linear_model():
    r = mixing_rate(toy(), [0.0], lambda x: np.sin(x[:, 0]), 3.0, n_paths=5000, seed=3, mu_phi=0.0)
    # E sin(X_t^x) decays like e^{-t} at leading order
    assert 0.7 < r.rate < 1.3
    assert r.r2 > 0.9
    assert r.envelope(0.25) >= r.signal.max()


def test_mixing_rate_estimates_stationary_value_when_missing():
    s = get_system("wiggly")
    r = mixing_rate(s, [0.0], lambda x: np.sin(x[:, 0]), 3.0, n_paths=3000, seed=4)
    assert r.rate >= s.gamma / 4


def test_signal_below_noise():
    with pytest.raises(SignalBelowNoise):
        mixing_rate(toy(), [0.0], lambda x: np.sin(x[:, 0]), 0.0, n_paths=200, seed=1, mu_phi=0.0)
