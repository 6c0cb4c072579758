"""Monte Carlo solution of the nonlocal Poisson equation ``L u = -f`` through
``u(x) = int_0^inf E f(X_t^x) dt``, and the correctors built from it.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate

from .ergodics import EmpiricalMeasure, MixingReport, integrate_measure
from .fractional import GeneratorSpec, GridFunction, apply_generator
from .sde_engine import observe_sde
from .systems import MultiscaleSystem

DEFAULT_GRID = np.arange(-20, 21) * 0.25
FAR_FIELD = np.array([7.5, 10.0, 15.0, 20.0, 30.0])


class NotCentered(ValueError):
    pass


class TailNotResolved(RuntimeError):
    pass


@dataclass(frozen=True)
class PoissonProblem:
    """``generator u = -rhs`` with ``rhs`` centred under the invariant law.

    ``rhs`` maps ``(N, n)`` to ``(N,)``. When ``measure`` is given the
    centring is checked against ``centering_tolerance`` (default: three
    jackknife standard errors).
    """

    generator: GeneratorSpec
    rhs: Callable
    centering_tolerance: float | None = None
    measure: EmpiricalMeasure | None = None

    def check_centering(self) -> tuple[float, float] | None:
        if self.measure is None:
            return None
        mean, se = integrate_measure(self.measure, self.rhs)
        limit = 3.0 * se if self.centering_tolerance is None else self.centering_tolerance
        if abs(mean) > limit + 1e-14:
            raise NotCentered(f"|int f dmu| = {abs(mean):.3g} exceeds {limit:.3g}")
        return mean, se


@dataclass(frozen=True)
class PoissonEstimate:
    value: np.ndarray
    stderr: np.ndarray
    mc_stderr: np.ndarray
    tail_bound: np.ndarray
    T_trunc: float
    n_paths: int
    per_path: np.ndarray = field(repr=False, default=None)


def truncation_horizon(rate: float, f_sup: float, tol: float, prefactor: float = 1.0) -> float:
    """``(1/rate) ln(C ||f|| / (rate tol))``: horizon beyond which the tail integral is below tol."""
    return max(math.log(max(prefactor, 1.0) * f_sup / (rate * tol)), 1.0) / rate


def _rate(mixing) -> tuple[float, float]:
    if isinstance(mixing, MixingReport):
        return mixing.rate, mixing.prefactor
    if mixing is None or not mixing > 0:
        raise TailNotResolved("a positive mixing rate is needed to truncate the time integral")
    return float(mixing), 1.0


def poisson_solve(prob: PoissonProblem, x, T_trunc: float | None = None, n_paths: int = 10_000,
                  dt: float = 1e-3, seed: int = 0, mixing: MixingReport | float | None = None,
                  tol: float = 1e-3, f_sup: float = 1.0, obs_stride: int = 10,
                  keep_paths: bool = False, workers: int = 1) -> PoissonEstimate:
    """Estimate ``u(x)`` at one point or an array of points (shared noise).

    The time integral runs to ``T_trunc`` (derived from the mixing rate when
    omitted) with the trapezoid rule on a grid of ``obs_stride * dt``. The
    reported ``stderr`` combines the Monte Carlo error with the tail bound
    ``(|E f(X_T)| + 2 se_T) / rate``.
    """
    rate, pref = _rate(mixing)
    prob.check_centering()
    obs_dt = obs_stride * dt
    if T_trunc is None:
        T_trunc = truncation_horizon(rate, f_sup, tol, pref)
    T_trunc = math.ceil(T_trunc / obs_dt - 1e-9) * obs_dt
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    g = prob.generator
    obs = observe_sde(g.drift, g.law, xs, prob.rhs, T_trunc, dt, seed, n_paths, obs_dt,
                      workers=workers)
    per_path = obs["integral"]
    value = per_path.mean(axis=1)
    mc = per_path.std(axis=1, ddof=1) / math.sqrt(n_paths)
    tail = (np.abs(obs["mean"][-1]) + 2.0 * obs["se"][-1]) / rate
    se = np.sqrt(mc**2 + tail**2)
    scalar = np.ndim(x) == 0
    pick = (lambda a: float(a[0])) if scalar else (lambda a: a)
    return PoissonEstimate(pick(value), pick(se), pick(mc), pick(tail), T_trunc, n_paths,
                           per_path if keep_paths else None)


def linear_sine_solution(alpha: float, x):
    """Closed-form reference for ``b = -x``, ``f = sin``:
    ``u(x) = int_0^inf sin(x e^{-s}) exp(-(1 - e^{-alpha s}) / alpha) ds``."""
    def one(v):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(
                lambda s: math.sin(v * math.exp(-s)) * math.exp(-(1.0 - math.exp(-alpha * s)) / alpha),
                0.0, 80.0, epsabs=1e-12, epsrel=1e-12, limit=400)
        return val
    xs = np.asarray(x, dtype=float)
    out = np.array([one(v) for v in xs.ravel()]).reshape(xs.shape)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CorrectorField:
    """Corrector ``G~(., y)`` on a grid of fast states and ``u = <grad f1(y), G~>``.

    Arrays are indexed by grid point first; ``G_tilde``, ``grad_x`` etc. have
    one column per slow component.
    """

    x: np.ndarray
    y: np.ndarray
    f1_grad: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    G_tilde: np.ndarray
    G_stderr: np.ndarray
    grad_x: np.ndarray
    grad_y: np.ndarray | None
    hess_y: np.ndarray | None
    truncation_T: float
    paths_per_point: int
    meta: dict = field(default_factory=dict)

    def function(self, component: int | None = None) -> GridFunction:
        """Spline of ``u`` (or of ``G~_component``) with constant tails."""
        vals = self.values if component is None else self.G_tilde[:, component]
        return GridFunction(self.x, vals, tail="constant")

    def scaled(self, c: float) -> "CorrectorField":
        return replace(self, f1_grad=c * self.f1_grad, values=c * self.values,
                       stderr=abs(c) * self.stderr)

    def to_csv(self, path) -> None:
        m = self.G_tilde.shape[1]
        cols = ["x", "y", "value", "stderr"] + [f"G_tilde{j}" for j in range(m)] \
            + [f"grad_x{j}" for j in range(m)]
        if self.grad_y is not None:
            cols += [f"grad_y{j}" for j in range(m)] + [f"hess_y{j}" for j in range(m)]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for i, xv in enumerate(self.x):
                row = [xv, float(self.y[0]), self.values[i], self.stderr[i],
                       *self.G_tilde[i], *self.grad_x[i]]
                if self.grad_y is not None:
                    row += [*self.grad_y[i], *self.hess_y[i]]
                wr.writerow([repr(float(v)) for v in row])


def default_grid(step: float = 0.25, half_width: float = 5.0, far=FAR_FIELD) -> np.ndarray:
    k = int(round(half_width / step))
    core = step * np.arange(-k, k + 1)
    far = np.asarray(far, dtype=float)
    far = far[far > half_width]
    return np.unique(np.concatenate([-far, core, far]))


def _G_component(sys: MultiscaleSystem, y, j: int) -> Callable:
    yv = np.asarray(y, dtype=float).reshape(1, -1)

    def rhs(x):
        return sys.G(x, np.broadcast_to(yv, (x.shape[0], yv.shape[1])))[:, j]
    return rhs


def _solve_components(sys, y, grid, mixing, T_trunc, n_paths, dt, seed, measure, workers):
    gen = GeneratorSpec.frozen(sys, y)
    vals, ses, paths = [], [], []
    T_used = T_trunc
    for j in range(sys.m):
        prob = PoissonProblem(gen, _G_component(sys, y, j), measure=measure)
        est = poisson_solve(prob, grid, T_trunc, n_paths, dt, seed, mixing, keep_paths=True,
                            workers=workers)
        vals.append(est.value)
        ses.append(est.stderr)
        paths.append(est.per_path)
        T_used = est.T_trunc
    return np.stack(vals, axis=1), np.stack(ses, axis=1), np.stack(paths, axis=0), T_used


def build_corrector(sys: MultiscaleSystem, y, f1_grad, grid=None, mixing=None,
                    T_trunc: float | None = None, n_paths: int = 10_000, dt: float = 1e-3,
                    seed: int = 0, y_derivatives: bool = False, dy: float = 0.05,
                    measure: EmpiricalMeasure | None = None, workers: int = 1) -> CorrectorField:
    """Corrector on a grid of fast states, all points and components sharing noise.

    ``grad_x`` uses finite differences between neighbouring grid points;
    with ``y_derivatives`` the corrector is rebuilt at ``y +- dy`` (same
    seed) for ``grad_y`` and ``hess_y``.
    """
    if sys.n != 1:
        raise ValueError("grid correctors are implemented for a one-dimensional fast variable")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    yv = np.atleast_1d(np.asarray(y, dtype=float))
    fg = np.atleast_1d(np.asarray(f1_grad, dtype=float))
    if fg.shape != (sys.m,):
        raise ValueError(f"f1_grad must have shape ({sys.m},)")
    if mixing is None:
        raise TailNotResolved("build_corrector needs a mixing rate (MixingReport or float)")
    Gt, Gse, paths, T_used = _solve_components(sys, yv, grid, mixing, T_trunc, n_paths, dt, seed,
                                               measure, workers)
    u_paths = np.tensordot(fg, paths, axes=(0, 0))
    values = Gt @ fg
    mc = u_paths.std(axis=1, ddof=1) / math.sqrt(n_paths)
    tail_part = np.sqrt(np.maximum(Gse**2 - (paths.std(axis=2, ddof=1).T / math.sqrt(n_paths)) ** 2, 0))
    stderr = np.sqrt(mc**2 + (tail_part @ np.abs(fg)) ** 2)
    grad_x = np.gradient(Gt, grid, axis=0)
    grad_y = hess_y = None
    if y_derivatives:
        if sys.m != 1:
            raise ValueError("y-derivatives are implemented for a one-dimensional slow variable")
        up = _solve_components(sys, yv + dy, grid, mixing, T_used, n_paths, dt, seed, None,
                               workers)[0]
        dn = _solve_components(sys, yv - dy, grid, mixing, T_used, n_paths, dt, seed, None,
                               workers)[0]
        grad_y = (up - dn) / (2 * dy)
        hess_y = (up - 2 * Gt + dn) / dy**2
    return CorrectorField(grid, yv, fg, values, stderr, Gt, Gse, grad_x, grad_y, hess_y, T_used,
                          n_paths, dict(system=sys.name, seed=seed, dt=dt))


def _rhs_u(sys, field: CorrectorField):
    yv = field.y.reshape(1, -1)

    def rhs(xv: float) -> float:
        return float(sys.G(np.array([[xv]]), yv)[0] @ field.f1_grad)
    return rhs


def residual_check(field: CorrectorField, sys: MultiscaleSystem, y, points):
    """``L1 u + <grad f1, G>`` at each point; returns ``(max_abs, table)``.

    ``table`` rows are dicts with ``x``, ``Lu``, ``rhs``, ``residual`` and the
    quadrature error estimate ``quad_err``.
    """
    gen = GeneratorSpec.frozen(sys, y)
    fn = field.function()
    rhs = _rhs_u(sys, field)
    rows = []
    for xv in np.atleast_1d(points):
        lu, err = apply_generator(gen, fn, float(xv), full_output=True)
        r = rhs(float(xv))
        rows.append(dict(x=float(xv), Lu=lu, rhs=r, residual=lu + r, quad_err=err))
    return max(abs(r["residual"]) for r in rows), rows


@dataclass(frozen=True)
class BoundReport:
    passed: bool
    constants: dict
    growth: dict
    checks: dict


_SHAPES = {
    "value": 0.5,   # |G~| <= C (1 + |x|^(1/2))
    "grad_x": 0.0,  # |grad_x G~| <= C
    "grad_y": 0.5,  # |grad_y G~| <= C (1 + |x|^(1/2))
    "hess_y": 1.0,  # |grad_y^2 G~| <= C (1 + |x|)
}


def bound_check(field: CorrectorField, slack: float = 0.25) -> BoundReport:
    """Fit the smallest constant for each corrector growth bound on the grid.

    A shape passes when the fitted constant is finite and the quantity does
    not outgrow its weight at the edge of the grid: the log-log growth
    exponent of ``|q|`` against ``1 + |x|`` over the outer half of the grid
    stays within ``slack`` of the weight exponent.
    """
    quantities = {"value": field.G_tilde, "grad_x": field.grad_x}
    if field.grad_y is not None:
        quantities["grad_y"] = field.grad_y
        quantities["hess_y"] = field.hess_y
    ax = np.abs(field.x)
    outer = ax >= 0.5 * ax.max()
    consts, growth, checks = {}, {}, {}
    for name, q in quantities.items():
        p = _SHAPES[name]
        mag = np.max(np.abs(q), axis=1)
        weight = (1.0 + ax**0.5) if p == 0.5 else (1.0 + ax) ** p
        C = float(np.max(mag / weight))
        consts[name] = C
        ok = math.isfinite(C)
        slope = 0.0
        if ok and C > 0 and np.count_nonzero(outer) >= 3:
            lm = np.log(np.maximum(mag[outer], 1e-300))
            if np.ptp(lm) > 0 and np.all(mag[outer] > 1e-12 * C):
                slope = float(np.polyfit(np.log1p(ax[outer]), lm, 1)[0])
            ok = slope <= p + slack
        growth[name] = slope
        checks[name] = bool(ok)
    return BoundReport(all(checks.values()), consts, growth, checks)


def centering_check(field: CorrectorField, measure: EmpiricalMeasure) -> tuple[float, float]:
    """``(int u dmu, se)``; the field's own Monte Carlo error is folded into se."""
    fn = field.function()
    mean, se = integrate_measure(measure, lambda s: fn(s[:, 0]))
    field_se = float(np.interp(0.0, field.x, field.stderr))
    return mean, math.hypot(se, field_se)
