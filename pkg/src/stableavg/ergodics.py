"""Invariant measures of the frozen fast equation, mixing-rate fits and the
analytic stationary law of the linear (OU-type) stable model.
"""
from __future__ import annotations

import csv
import functools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .sde_engine import observe_frozen, simulate_frozen
from .stable_noise import gil_pelaez_cdf, _cf_cutoff
from .stats import grouped_jackknife
from .systems import MultiscaleSystem


class EscapedPathsError(RuntimeError):
    pass


class SignalBelowNoise(RuntimeError):
    """The decay signal never clears the Monte Carlo noise floor."""


@dataclass(frozen=True)
class EmpiricalMeasure:
    samples: np.ndarray
    weights: np.ndarray
    groups: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples.ndim != 2 or len(self.samples) != len(self.weights):
            raise ValueError("samples must be (N, n) with one weight per sample")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")

    @classmethod
    def uniform(cls, samples, groups=None, **provenance) -> "EmpiricalMeasure":
        s = np.asarray(samples, dtype=float)
        s = s.reshape(len(s), -1)
        w = np.full(len(s), 1.0 / len(s))
        w[-1] = 1.0 - w[:-1].sum()
        g = np.arange(len(s)) * 20 // len(s) if groups is None else np.asarray(groups)
        return cls(s, w, g, dict(provenance))

    def __len__(self):
        return len(self.samples)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x{i}" for i in range(self.samples.shape[1])] + ["weight"])
            for row, w in zip(self.samples, self.weights):
                wr.writerow([repr(float(v)) for v in row] + [repr(float(w))])


def estimate_invariant(sys: MultiscaleSystem, y, burn_in: float | None = None, n: int = 10_000,
                       thinning: float | None = None, seed: int = 0, x0=0.0,
                       dt: float | None = None, n_chains: int | None = None,
                       max_escaped: float = 0.01, workers: int = 1) -> EmpiricalMeasure:
    """Sample ``mu^y`` from thinned frozen trajectories after a burn-in.

    ``n_chains`` parallel chains (default ``min(n, 1000)``) each contribute
    ``ceil(n / n_chains)`` samples spaced by ``thinning``; ``n_chains=1`` gives
    the single long trajectory.
    """
    g = sys.gamma
    burn_in = 5.0 / g if burn_in is None else burn_in
    thinning = 1.0 / g if thinning is None else thinning
    dt = 0.01 / g if dt is None else dt
    if burn_in < 5.0 / g - 1e-12:
        raise ValueError(f"burn_in={burn_in} is shorter than 5/gamma")
    n_chains = min(n, 1000) if n_chains is None else n_chains
    per_chain = math.ceil(n / n_chains)
    skip = math.ceil(burn_in / thinning - 1e-9)
    T = (skip + per_chain) * thinning
    path = simulate_frozen(sys, y, x0, T, dt, seed, n_paths=n_chains, record_dt=thinning,
                           workers=workers)
    if path.escaped_fraction > max_escaped:
        raise EscapedPathsError(f"{path.escaped_fraction:.2%} of chains escaped")
    keep = path.states[skip + 1:]
    ok = ~path.escaped
    samples = keep[:, ok, :].reshape(-1, sys.n)[:n]
    if n_chains > 1:
        groups = np.tile(np.flatnonzero(ok), per_chain)[:n]
    else:
        groups = np.arange(len(samples)) * 20 // len(samples)
    return EmpiricalMeasure.uniform(samples, groups, system=sys.name,
                                    y=np.asarray(y, dtype=float).tolist(), burn_in=burn_in,
                                    n_samples=len(samples), thinning=thinning, seed=seed,
                                    n_chains=n_chains, dt=dt)


def integrate_measure(measure: EmpiricalMeasure, f: Callable):
    """Weighted mean of ``f`` over the samples with a jackknife standard error.

    ``f`` maps ``(N, n)`` to ``(N,)`` or ``(N, k)``. Returns ``(mean, se)``
    (floats for scalar ``f``).
    """
    vals = np.asarray(f(measure.samples), dtype=float)
    mean, se = grouped_jackknife(vals, measure.weights, measure.groups)
    if vals.ndim == 1:
        return float(mean), float(se)
    return mean, se


@dataclass(frozen=True)
class MixingReport:
    rate: float
    prefactor: float
    test_fn: str
    r2: float
    window: tuple[float, float]
    times: np.ndarray
    signal: np.ndarray
    noise: np.ndarray

    def envelope(self, rate: float) -> float:
        """Smallest C with ``signal(t) <= C exp(-rate t)`` on the observed grid."""
        return float(np.max(self.signal * np.exp(rate * self.times)))


def mixing_rate(sys: MultiscaleSystem, y, phi: Callable, x0, horizon: float = 8.0,
                n_paths: int = 10_000, seed: int = 0, dt: float = 1e-2,
                obs_dt: float = 0.1, mu_phi: float | tuple[float, float] | None = None,
                test_fn: str | None = None, workers: int = 1) -> MixingReport:
    """Fit ``|E phi(X_t^{x0,y}) - mu^y(phi)| ~ C exp(-rate t)``.

    The fit uses the largest contiguous window, starting at the signal peak,
    where every point exceeds three times its Monte Carlo noise. ``mu_phi``
    is the stationary value (optionally ``(value, se)``); when omitted it is
    estimated from :func:`estimate_invariant`.
    """
    if mu_phi is None:
        meas = estimate_invariant(sys, y, n=20_000, seed=seed + 1, workers=workers)
        mu_phi = integrate_measure(meas, lambda s: phi(s))
    mu, mu_se = mu_phi if isinstance(mu_phi, tuple) else (float(mu_phi), 0.0)
    obs = observe_frozen(sys, y, np.atleast_1d(x0), phi, horizon, dt, seed, n_paths, obs_dt,
                         workers=workers)
    t = obs["times"]
    signal = np.abs(obs["mean"][:, 0] - mu)
    noise = np.sqrt(obs["se"][:, 0] ** 2 + mu_se**2)
    strong = signal > 3.0 * np.maximum(noise, 1e-300)
    peak = int(np.argmax(np.where(strong, signal, -np.inf))) if strong.any() else None
    if peak is None:
        raise SignalBelowNoise("no time point has signal above 3x noise")
    end = peak
    while end + 1 < len(t) and strong[end + 1]:
        end += 1
    if end - peak < 2:
        raise SignalBelowNoise(f"only {end - peak + 1} resolvable points after the peak")
    tw, sw = t[peak:end + 1], np.log(signal[peak:end + 1])
    slope, icpt = np.polyfit(tw, sw, 1)
    resid = sw - (slope * tw + icpt)
    r2 = 1.0 - resid.var() / sw.var() if sw.var() > 0 else 1.0
    name = test_fn or getattr(phi, "__name__", "phi")
    return MixingReport(float(-slope), float(math.exp(icpt)), name, float(r2),
                        (float(tw[0]), float(tw[-1])), t, signal, noise)


# --- analytic stationary law of dX = -X dt + dL^alpha ---------------------

def density_oracle(alpha: float, x):
    """``rho(x) = (1/pi) int_0^inf cos(x xi) exp(-xi^alpha / alpha) dxi``."""
    if not 1.0 < alpha < 2.0:
        raise ValueError("alpha must lie in (1, 2)")
    xs = np.asarray(x, dtype=float)
    out = np.array([_density_point(alpha, float(v)) for v in xs.ravel()]).reshape(xs.shape)
    return float(out) if out.ndim == 0 else out


def _density_point(alpha, x):
    coef = 1.0 / alpha
    big = _cf_cutoff(alpha, coef)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        if x == 0.0:
            v, e = integrate.quad(lambda s: math.exp(-coef * s**alpha), 0.0, np.inf,
                                  epsabs=1e-12, epsrel=1e-12, limit=200)
        else:
            v, e = integrate.quad(lambda s: math.exp(-coef * s**alpha), 0.0, big, weight="cos",
                                  wvar=abs(x), epsabs=1e-12, epsrel=1e-12, limit=500)
    if e / math.pi > 1e-8:
        raise RuntimeError(f"density quadrature at x={x} only reached {e / math.pi:.3g}")
    return v / math.pi


def stationary_cdf(alpha: float, x):
    xs = np.asarray(x, dtype=float)
    out = np.array([gil_pelaez_cdf(v, alpha, 1.0 / alpha)[0] for v in xs.ravel()]).reshape(xs.shape)
    return float(out) if out.ndim == 0 else out


def stationary_quantile(alpha: float, q: float) -> float:
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    if q == 0.5:
        return 0.0
    lo, hi = -1.0, 1.0
    while stationary_cdf(alpha, lo) > q:
        lo *= 2.0
    while stationary_cdf(alpha, hi) < q:
        hi *= 2.0
    return optimize.brentq(lambda v: stationary_cdf(alpha, v) - q, lo, hi, xtol=1e-12)


@functools.lru_cache(maxsize=8)
def _cdf_table(alpha: float, half_width: float, step: float):
    k = int(round(half_width / step))
    grid = step * np.arange(-k, k + 1)
    half = stationary_cdf(alpha, grid[k:])
    vals = np.concatenate([1.0 - half[:0:-1], half])
    return grid, vals


def stationary_cdf_fast(alpha: float, x, half_width: float = 40.0, step: float = 0.01):
    """Tabulated stationary CDF (linear interpolation, exact evaluation off-table)."""
    grid, vals = _cdf_table(float(alpha), half_width, step)
    x = np.asarray(x, dtype=float)
    out = np.interp(x, grid, vals)
    far = np.abs(x) > half_width
    if np.any(far):
        out[far] = stationary_cdf(alpha, x[far])
    return out
