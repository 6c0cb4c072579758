import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stableavg.sde_engine import (DEFAULT_BLOCK, IntegratorBlowUp, observe_frozen,
                                  simulate_frozen, simulate_multiscale, simulate_variational,
                                  step_multiscale)
from stableavg.stable_noise import RngStream, StableLaw, cdf_1d
from stableavg.stats import ks_critical, ks_one_sample
from stableavg.systems import get_system, toy


def test_deterministic_linear_drift_without_noise():
    s = toy()
    p = simulate_frozen(s, 0.0, 2.0, 1.0, 1e-3, noise=False, record_dt=0.5)
    # Euler on dx = -x dt: (1 - dt)^k
    assert p.states[:, 0, 0] == pytest.approx(2.0 * (1 - 1e-3) ** np.array([0, 500, 1000]))


def test_seed_determinism_and_worker_independence():
    s = toy()
    a = simulate_frozen(s, 0.0, 0.5, 0.2, 1e-3, seed=4, n_paths=300, block_size=64)
    b = simulate_frozen(s, 0.0, 0.5, 0.2, 1e-3, seed=4, n_paths=300, block_size=64, workers=3)
    c = simulate_frozen(s, 0.0, 0.5, 0.2, 1e-3, seed=5, n_paths=300, block_size=64)
    assert np.array_equal(a.states, b.states)
    assert not np.array_equal(a.states, c.states)


def test_multiscale_worker_independence():
    s = toy(eps=0.3)
    kw = dict(seed=9, n_paths=200, block_size=50, record_dt=0.05)
    x1, y1 = simulate_multiscale(s, 0.0, 0.0, 0.1, **kw)
    x2, y2 = simulate_multiscale(s, 0.0, 0.0, 0.1, workers=4, **kw)
    assert np.array_equal(x1.states, x2.states) and np.array_equal(y1.states, y2.states)


def test_pure_slow_noise_has_stable_marginal():
    # G = F = 0: Y_T - y0 is exactly a sum of stable increments, distributed as L_T
    s = get_system("null", eps=0.5)
    _, Y = simulate_multiscale(s, 0.0, 1.0, 1.0, n_paths=20_000, seed=3, noise=(False, True))
    ks = ks_one_sample(Y.final[:, 0] - 1.0, lambda v: cdf_1d(StableLaw(1.5), v))
    assert ks < ks_critical(20_000, 10**9)


def test_dt_must_resolve_fast_scale():
    s = toy(eps=0.1)
    with pytest.raises(ValueError):
        simulate_multiscale(s, 0.0, 0.0, 0.1, dt=0.01)
    with pytest.raises(ValueError):
        step_multiscale(s, (np.zeros(1), np.zeros(1)), 0.01, RngStream(0))


def test_grid_validation():
    with pytest.raises(ValueError):
        simulate_frozen(toy(), 0.0, 0.0, 1.0, 0.3)
    with pytest.raises(ValueError):
        simulate_frozen(toy(), 0.0, 0.0, 1.0, 0.1, record_dt=0.3)


def test_step_matches_engine_first_step():
    s = toy(eps=0.3)
    dt = 1e-3 * s.eps**2
    gf, gs = RngStream(1, 0).pair()
    x, y = step_multiscale(s, (np.zeros((2, 1)), np.ones((2, 1))), dt, (gf, gs))
    assert x.shape == (2, 1) and y.shape == (2, 1)
    xs, ys = step_multiscale(s, (np.zeros(1), np.ones(1)), dt, RngStream(1, 0))
    assert xs.shape == (1,) and ys.shape == (1,)


def test_blowup_detected():
    s = toy().replace(b=lambda x, y: np.full_like(x, np.nan))
    with pytest.raises(IntegratorBlowUp):
        simulate_frozen(s, 0.0, 0.0, 0.01, 1e-3)


def test_escaped_paths_are_frozen():
    s = toy().replace(b=lambda x, y: 1e17 * np.ones_like(x))
    p = simulate_frozen(s, 0.0, 0.0, 0.01, 1e-3, n_paths=5, record_dt=1e-3)
    assert p.escaped.all()
    assert np.all(np.isfinite(p.states))
    assert p.escaped_fraction == 1.0


def test_sup_tracks_whole_grid():
    p = simulate_frozen(toy(), 0.0, 3.0, 0.5, 1e-3, n_paths=10, seed=2)
    assert np.all(p.sup_abs >= np.abs(p.states).max(axis=(0, 2)) - 1e-15)
    assert np.all(p.sup_abs >= 3.0)


def test_synchronous_coupling_is_exact_for_linear_drift():
    s = toy()
    a = simulate_frozen(s, 0.0, -1.0, 2.0, 1e-3, seed=8, n_paths=50, record_dt=0.5)
    b = simulate_frozen(s, 0.0, 1.5, 2.0, 1e-3, seed=8, n_paths=50, record_dt=0.5)
    gap = np.abs(a.states - b.states)[..., 0]
    expected = 2.5 * (1 - 1e-3) ** (a.times / 1e-3)
    assert np.allclose(gap, expected[:, None], rtol=1e-9)


def test_observe_matches_recorded_paths():
    s = toy()
    obs = observe_frozen(s, 0.0, [0.0, 1.0], lambda x: np.sin(x[:, 0]), 0.5, 1e-3, 6, 100, 0.1)
    p = simulate_frozen(s, 0.0, 1.0, 0.5, 1e-3, seed=6, n_paths=100, record_dt=0.1)
    assert obs["mean"][:, 1] == pytest.approx(np.sin(p.states[..., 0]).mean(axis=1), abs=1e-12)
    w = np.full(6, 0.1)
    w[[0, -1]] = 0.05
    assert obs["integral"][1] == pytest.approx(w @ np.sin(p.states[..., 0]), abs=1e-12)


def test_variational_exact_for_linear_drift():
    fl = simulate_variational(toy(), [0.2], 0.3, 1.0, 1e-3, seed=1, order=2)
    assert fl.jac_x[:, 0, 0] == pytest.approx(np.exp(-fl.base_path.times), rel=1e-12)
    assert np.all(fl.jac_y == 0) and np.all(fl.jac_yy == 0)


def test_variational_y_derivative_for_shifted_drift():
    # b = -x + 0.1 tanh(y): grad_y X_t = 0.1 sech^2(y) (1 - e^{-t})
    y = 0.4
    fl = simulate_variational(get_system("toy-y"), [y], 0.0, 2.0, 1e-3, seed=1, order=2)
    t = fl.base_path.times
    sech2 = 1 / math.cosh(y) ** 2
    assert fl.jac_y[:, 0, 0] == pytest.approx(0.1 * sech2 * (1 - np.exp(-t)), rel=1e-9, abs=1e-15)
    d2 = -0.2 * math.tanh(y) * sech2 * (1 - np.exp(-t))
    assert fl.jac_yy[:, 0, 0, 0] == pytest.approx(d2, rel=1e-9, abs=1e-15)


def test_variational_needs_jacobians():
    with pytest.raises(ValueError):
        simulate_variational(toy().replace(b_x=None), [0.0], 0.0, 0.1)
    with pytest.raises(ValueError):
        simulate_variational(toy(), [0.0], 0.0, 0.1, order=3)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 400), st.integers(1, 130))
def test_block_layout_covers_all_paths(n_paths, block):
    p = simulate_frozen(toy(), 0.0, 0.0, 0.002, 1e-3, seed=1, n_paths=n_paths, block_size=block)
    assert p.states.shape == (2, n_paths, 1)
    # the first block of a layout is shared with any layout of the same block size
    q = simulate_frozen(toy(), 0.0, 0.0, 0.002, 1e-3, seed=1, n_paths=min(n_paths, block),
                        block_size=block)
    assert np.array_equal(p.states[:, :q.n_paths], q.states)


def test_default_block_constant():
    assert DEFAULT_BLOCK > 0
