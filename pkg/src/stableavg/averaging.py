"""Averaged slow dynamics, weak-convergence statistics and the martingale-problem residual."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special
from scipy.interpolate import CubicSpline

from .ergodics import estimate_invariant, integrate_measure
from .fractional import ConstantTail, GeneratorSpec, apply_generator
from .sde_engine import (DEFAULT_BLOCK, SamplePath, _blocks, _euler, _fill, _grid, _map_blocks,
                         _Noise, simulate_multiscale)
from .stable_noise import RngStream, StableLaw, levy_constant
from .stats import ks_critical, ks_two_sample, wasserstein_p
from .systems import MultiscaleSystem


class ExtrapolationError(ValueError):
    pass


class TooManyEscapes(RuntimeError):
    pass


@dataclass(frozen=True)
class AveragedSystem:
    """Tabulated averaged drift on a one-dimensional slow grid.

    Between nodes the drift is interpolated linearly; evaluation outside
    ``[y_grid[0], y_grid[-1]]`` raises :class:`ExtrapolationError` unless
    ``exact_zero`` is set, which records that the slow drift vanished on every
    sample at every node (so the averaged drift is zero everywhere).
    """

    y_grid: np.ndarray
    F_bar: np.ndarray
    se: np.ndarray
    law_slow: StableLaw
    exact_zero: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.y_grid.ndim != 1 or self.F_bar.shape != self.y_grid.shape:
            raise ValueError("averaged drift is tabulated on a one-dimensional grid")
        if len(self.y_grid) > 1 and np.any(np.diff(self.y_grid) <= 0):
            raise ValueError("y_grid must be strictly increasing")

    @classmethod
    def zero(cls, law_slow: StableLaw) -> "AveragedSystem":
        return cls(np.zeros(1), np.zeros(1), np.zeros(1), law_slow, exact_zero=True)

    def drift(self, y) -> np.ndarray:
        """``F_bar`` at ``y``; accepts any shape, returns the same shape."""
        y = np.asarray(y, dtype=float)
        if self.exact_zero:
            return np.zeros_like(y)
        lo, hi = self.y_grid[0], self.y_grid[-1]
        if np.any((y < lo - 1e-12) | (y > hi + 1e-12)):
            bad = y[(y < lo) | (y > hi)].ravel()[0]
            raise ExtrapolationError(f"y={bad:.4g} outside the tabulated range [{lo}, {hi}]")
        return np.interp(y, self.y_grid, self.F_bar)

    def generator(self) -> GeneratorSpec:
        return GeneratorSpec(self.law_slow, lambda y: self.drift(y), "L2")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["y", "F_bar", "se"])
            for row in zip(self.y_grid, self.F_bar, self.se):
                wr.writerow([repr(float(v)) for v in row])


def build_averaged(sys: MultiscaleSystem, y_grid, n: int = 20_000, seed: int = 0,
                   **measure_kw) -> AveragedSystem:
    """Average the slow drift against an estimated invariant law at every grid node.

    Each node uses the seed ``seed + k``; ``measure_kw`` is passed on to
    :func:`estimate_invariant`.
    """
    if sys.m != 1:
        raise ValueError("averaged systems are tabulated for a one-dimensional slow variable")
    ys = np.atleast_1d(np.asarray(y_grid, dtype=float))
    vals, ses = [], []
    all_zero = True
    for k, y in enumerate(ys):
        meas = estimate_invariant(sys, [y], n=n, seed=seed + k, **measure_kw)
        yy = np.full((len(meas), 1), y)
        Fv = sys.F(meas.samples, yy)[:, 0]
        all_zero &= bool(np.all(Fv == 0.0))
        mean, se = integrate_measure(meas, lambda s: sys.F(s, yy)[:, 0])
        vals.append(mean)
        ses.append(se)
    return AveragedSystem(ys, np.array(vals), np.array(ses), sys.law_slow, all_zero,
                          dict(system=sys.name, n=n, seed=seed))


def simulate_averaged(avg: AveragedSystem, y0, T: float, dt: float = 1e-3, seed: int = 0,
                      n_paths: int = 1, record_dt: float | None = None, noise: bool = True,
                      block_size: int = DEFAULT_BLOCK, workers: int = 1) -> SamplePath:
    """Euler-Maruyama for ``dY = F_bar(Y) dt + dL^{alpha2}``."""
    m = avg.law_slow.dim
    n_steps, stride = _grid(T, dt, record_dt)
    noises = [_Noise(avg.law_slow, 1.0 * noise, slice(0, m), 1)]
    y0 = _fill(y0, n_paths, m)

    def run(block):
        k, size = block
        lo = k * block_size
        states, sup, esc = _euler(avg.drift, noises, y0[lo:lo + size][None], dt, n_steps, stride,
                                  RngStream(seed, k).pair(), (slice(0, m),))
        return np.stack(states)[:, 0], sup[0, :, 0], esc[0]

    parts = _map_blocks(run, _blocks(n_paths, block_size), workers)
    states = np.concatenate([p[0] for p in parts], axis=1)
    return SamplePath(np.arange(states.shape[0]) * stride * dt, states,
                      np.concatenate([p[1] for p in parts]), np.concatenate([p[2] for p in parts]),
                      dict(seed=seed, dt=dt, n_paths=n_paths, component="averaged"))


# --- weak convergence --------------------------------------------------------

@dataclass
class WeakConvergenceReport:
    eps_ladder: list
    ks: list
    ks_band: list
    wasserstein: list
    w_threshold: float
    p: float
    ks_critical: float
    n_paths: int
    escaped: list
    mart_residuals: list = field(default_factory=list)
    trend_ok: bool = False
    ks_verdict: str = "FAIL"
    w_verdict: str = "FAIL"

    @property
    def verdict(self) -> str:
        return "PASS" if self.ks_verdict == "PASS" and self.w_verdict == "PASS" else "FAIL"

    def to_json(self, path=None) -> str:
        d = asdict(self)
        d["verdict"] = self.verdict
        text = json.dumps(d, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["eps", "ks", "ks_lo", "ks_hi", "wasserstein", "escaped"])
            for i, e in enumerate(self.eps_ladder):
                wr.writerow([repr(float(v)) for v in
                             (e, self.ks[i], *self.ks_band[i], self.wasserstein[i], self.escaped[i])])


def wasserstein_order(alpha2: float) -> float:
    return 1.0 if alpha2 > 1.1 else alpha2 / 2.0


def bootstrap_ks(a, b, n_boot: int = 200, seed: int = 0) -> tuple[float, float, float]:
    """KS statistic with its bootstrap standard deviation (both samples resampled)."""
    rng = np.random.default_rng(seed)
    a, b = np.asarray(a).ravel(), np.asarray(b).ravel()
    vals = np.array([ks_two_sample(a[rng.integers(0, len(a), len(a))],
                                   b[rng.integers(0, len(b), len(b))]) for _ in range(n_boot)])
    return ks_two_sample(a, b), float(vals.std(ddof=1)), float(np.mean(vals))


def permutation_threshold(a, b, p: float, level: float = 0.01, n_perm: int = 200,
                          seed: int = 0) -> float:
    """Upper ``level`` quantile of ``W_p`` between random splits of the pooled sample."""
    rng = np.random.default_rng(seed)
    pooled = np.concatenate([np.ravel(a), np.ravel(b)])
    na = len(np.ravel(a))
    stats = []
    for _ in range(n_perm):
        perm = rng.permutation(pooled)
        stats.append(wasserstein_p(perm[:na], perm[na:], p))
    return float(np.quantile(stats, 1.0 - level))


def weak_convergence_test(sys: MultiscaleSystem, avg: AveragedSystem, y0=0.0, T: float = 1.0,
                          eps_ladder: Sequence[float] = (0.3, 0.2, 0.1), n_paths: int = 20_000,
                          seed: int = 0, x0=0.0, level: float = 0.01, n_boot: int = 200,
                          workers: int = 1, max_escaped: float = 0.01,
                          limit_dt: float = 1e-3) -> WeakConvergenceReport:
    """Compare the law of ``Y^eps_T`` with the averaged ``Y_T`` along a decreasing eps ladder.

    The averaged sample is drawn once (seed ``seed``) and shared by every
    rung; rung ``i`` simulates the multiscale system with seed ``seed + 1 + i``.
    The trend is non-increasing when each step down the ladder raises KS by
    at most twice the combined bootstrap deviation.
    """
    ladder = [float(e) for e in eps_ladder]
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("eps ladder must be strictly decreasing")
    p = wasserstein_order(sys.law_slow.alpha)
    ref = simulate_averaged(avg, y0, T, dt=min(limit_dt, T), seed=seed, n_paths=n_paths,
                            workers=workers).final[:, 0]
    ks, band, sd, w, esc = [], [], [], [], []
    for i, e in enumerate(ladder):
        s = sys.replace(eps=e)
        _, Y = simulate_multiscale(s, x0, y0, T, seed=seed + 1 + i, n_paths=n_paths,
                                   workers=workers)
        if Y.escaped_fraction > max_escaped:
            raise TooManyEscapes(f"eps={e}: {Y.escaped_fraction:.2%} of paths escaped")
        yT = Y.final[:, 0]
        d, dev, _ = bootstrap_ks(yT, ref, n_boot, seed + 1000 + i)
        ks.append(d)
        sd.append(dev)
        band.append((max(d - 2 * dev, 0.0), d + 2 * dev))
        w.append(wasserstein_p(yT, ref, p))
        esc.append(Y.escaped_fraction)
        last = yT
    trend = all(b - a <= 2.0 * math.hypot(sa, sb)
                for a, b, sa, sb in zip(ks, ks[1:], sd, sd[1:]))
    crit = ks_critical(n_paths, n_paths, level)
    w_thr = permutation_threshold(last, ref, p, level, seed=seed + 2000)
    return WeakConvergenceReport(
        ladder, ks, band, w, w_thr, p, crit, n_paths, esc, trend_ok=trend,
        ks_verdict="PASS" if trend and ks[-1] < crit else "FAIL",
        w_verdict="PASS" if trend and w[-1] < w_thr else "FAIL")


# --- martingale problem -------------------------------------------------------

def bump(center: float = 0.0, radius: float = 1.0) -> Callable:
    """Smooth compactly supported ``exp(1 - 1/(1 - r^2))`` with ``r = (y - center)/radius``."""
    def phi(y):
        r = (np.asarray(y, dtype=float) - center) / radius
        inside = np.abs(r) < 1.0
        out = np.zeros_like(r)
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
        return out
    phi.support = (center - radius, center + radius)
    return phi


def constant_fn(c: float = 1.0) -> Callable:
    def phi(y):
        return np.full_like(np.asarray(y, dtype=float), c)
    phi.constant = c
    return phi


class GeneratorTable:
    """``L2 phi`` tabulated on ``[-R, R]`` (cubic spline) with the far-field jump asymptotics.

    ``phi`` must be compactly supported (``phi.support``) or constant. Far from
    the support the drift term vanishes and the jump integral reduces to
    ``c int phi(z) |y - z|^{-1-alpha} dz``, evaluated by the leading two
    moments of ``phi``.
    """

    def __init__(self, avg: AveragedSystem, phi: Callable, half_width: float = 15.0,
                 step: float = 0.05, phi_step: float = 0.01):
        self.alpha = avg.law_slow.alpha
        self.constant = hasattr(phi, "constant")
        if self.constant:
            return
        lo, hi = phi.support
        nodes = np.linspace(lo, hi, int(round((hi - lo) / phi_step)) + 1)
        tail = ConstantTail(0.0, 0.0, lo, hi)
        gen = avg.generator()
        if not avg.exact_zero:
            lo_y, hi_y = avg.y_grid[0], avg.y_grid[-1]
            if lo < lo_y or hi > hi_y:
                raise ExtrapolationError("phi support extends beyond the averaged-drift grid")
            gen = GeneratorSpec(avg.law_slow, lambda y: _drift_on_support(avg, y, lo, hi), "L2")
        self.center = 0.5 * (lo + hi)
        self.R = half_width
        self.ys = self.center + step * np.arange(-round(half_width / step), round(half_width / step) + 1)
        vals = np.array([apply_generator(gen, phi, float(y), tail=tail) for y in self.ys])
        self.spline = CubicSpline(self.ys, vals)
        w = np.diff(nodes)
        mid = 0.5 * (nodes[1:] + nodes[:-1])
        pm = 0.5 * (phi(nodes[1:]) + phi(nodes[:-1])) * w
        self.m0 = float(pm.sum())
        self.m2 = float((pm * (mid - self.center) ** 2).sum())
        self.c = levy_constant(1, self.alpha)

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.constant:
            return np.zeros_like(y)
        d = np.abs(y - self.center)
        far = d > self.R
        out = self.spline(np.where(far, self.center, y))
        if np.any(far):
            a = self.alpha
            dd = d[far]
            out[far] = self.c * dd ** (-1 - a) * (self.m0 + 0.5 * (1 + a) * (2 + a) * self.m2 / dd**2)
        return out


def _drift_on_support(avg, y, lo, hi):
    # phi' vanishes off its support, so the drift only matters there
    y = np.asarray(y, dtype=float)
    return np.where((y >= lo) & (y <= hi), avg.drift(np.clip(y, lo, hi)), 0.0)


def Phi_constant(times, paths, t0):
    return np.ones(paths.shape[1])


def Phi_sigmoid(times, paths, t0):
    """Logistic function of the state at ``t0``."""
    k = _index(times, t0)
    return special.expit(paths[k, :, 0])


def Phi_tanh_average(times, paths, t0):
    """Time average of ``tanh(Y_s)`` over ``[0, t0]`` (value at 0 when ``t0 = 0``)."""
    k = _index(times, t0)
    if k == 0:
        return np.tanh(paths[0, :, 0])
    return np.trapezoid(np.tanh(paths[:k + 1, :, 0]), times[:k + 1], axis=0) / times[k]


PHI_FUNCTIONALS = {"constant": Phi_constant, "sigmoid": Phi_sigmoid, "tanh-average": Phi_tanh_average}


def _index(times, t):
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"t={t} is not on the recording grid")
    return k


def martingale_residual(paths: SamplePath, avg: AveragedSystem, phi: Callable, t0: float,
                        t: float, Phi: Callable = Phi_constant,
                        table: GeneratorTable | None = None) -> tuple[float, float]:
    """Monte Carlo ``E[(phi(Y_t) - phi(Y_t0) - int_t0^t L2 phi(Y_s) ds) Phi]`` with its stderr.

    ``paths`` is a one-dimensional slow ensemble recorded on a grid containing
    ``t0`` and ``t``; the time integral uses the trapezoid rule on that grid.
    """
    if paths.states.shape[2] != 1:
        raise ValueError("martingale residual is implemented for one-dimensional slow paths")
    if not t > t0 >= 0:
        raise ValueError("need 0 <= t0 < t")
    times, ys = paths.times, paths.states
    i0, i1 = _index(times, t0), _index(times, t)
    if hasattr(phi, "constant"):
        return 0.0, 0.0
    table = GeneratorTable(avg, phi) if table is None else table
    seg = ys[i0:i1 + 1, :, 0]
    integral = np.trapezoid(table(seg), times[i0:i1 + 1], axis=0)
    incr = phi(ys[i1, :, 0]) - phi(ys[i0, :, 0]) - integral
    vals = incr * Phi(times, ys, t0)
    ok = ~paths.escaped
    vals = vals[ok]
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))
