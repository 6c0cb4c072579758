"""Euler-Maruyama integration of the fast-slow system, the frozen fast equation
and its first/second variational flows.

Ensembles are split into fixed-size blocks of paths; block ``k`` draws all
its noise from ``RngStream(seed, k)``. Results therefore depend only on
``(seed, n_paths, block_size)`` and never on the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .stable_noise import RngStream, StableLaw, sample_unit
from .systems import MultiscaleSystem

ESCAPE_LEVEL = 1e12
DEFAULT_BLOCK = 4096
NOISE_CHUNK = 64
FAST_STEP = 0.01     # default dt / eps^2, in units of 1/gamma
FAST_STEP_CAP = 0.1  # largest admissible dt / eps^2, in units of 1/gamma


class IntegratorBlowUp(FloatingPointError):
    def __init__(self, step: int, detail: str = ""):
        super().__init__(f"non-finite state at step {step}{': ' + detail if detail else ''}")
        self.step = step


@dataclass(frozen=True)
class SamplePath:
    """Ensemble of trajectories on a common recording grid.

    ``states`` has shape ``(len(times), n_paths, dim)``. ``sup_abs`` holds
    ``sup_t |state_t|`` over the full integration grid (not only the recorded
    times). Escaped paths are frozen at their last admissible value.
    """

    times: np.ndarray
    states: np.ndarray
    sup_abs: np.ndarray
    escaped: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states lengths differ")
        if self.times[0] != 0:
            raise ValueError("time grid must start at 0")

    @property
    def n_paths(self) -> int:
        return self.states.shape[1]

    @property
    def escaped_fraction(self) -> float:
        return float(np.mean(self.escaped))

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def path(self, i: int) -> np.ndarray:
        return self.states[:, i, :]


@dataclass(frozen=True)
class VariationalFlow:
    base_path: SamplePath
    jac_x: np.ndarray
    jac_y: np.ndarray
    jac_yy: np.ndarray | None = None


@dataclass(frozen=True)
class _Noise:
    law: StableLaw
    coef: float
    sl: slice
    channel: int


def default_dt(sys: MultiscaleSystem) -> float:
    return sys.eps**2 * FAST_STEP / sys.gamma


def _grid(T: float, dt: float, record_dt: float | None) -> tuple[int, int]:
    if not T > 0 or not dt > 0:
        raise ValueError("T and dt must be positive")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * T:
        raise ValueError(f"T={T} is not a whole number of steps dt={dt}")
    if record_dt is None:
        return n_steps, n_steps
    stride = int(round(record_dt / dt))
    if stride < 1 or abs(stride * dt - record_dt) > 1e-9 * record_dt or n_steps % stride:
        raise ValueError(f"record_dt={record_dt} must be a multiple of dt dividing T")
    return n_steps, stride


def _euler(drift, noises: Sequence[_Noise], z0: np.ndarray, dt: float, n_steps: int,
           stride: int, gens, sup_groups: Sequence[slice] = (), on_record=None):
    """Integrate ``dz = drift(z) dt + sum coef dL`` for a block.

    ``z0`` has shape ``(P, B, d)``: P initial conditions sharing the noise of
    B paths (common random numbers across the P axis). Noise is drawn
    ``NOISE_CHUNK`` steps at a time; the chunking is part of the stream layout.
    """
    z = np.array(z0, dtype=float)
    P, B, d = z.shape
    escaped = np.zeros((P, B), dtype=bool)
    sup = None
    if sup_groups:
        sup = np.stack([np.linalg.norm(z[..., g], axis=-1) for g in sup_groups], axis=-1)
    active = [(nz, nz.coef * dt ** (1.0 / nz.law.alpha)) for nz in noises if nz.coef]
    states = [z.copy()] if on_record is None else None
    if on_record is not None:
        on_record(0, z)
    buf = []
    for k in range(1, n_steps + 1):
        j = (k - 1) % NOISE_CHUNK
        if j == 0:
            c = min(NOISE_CHUNK, n_steps - k + 1)
            buf = [s * sample_unit(nz.law, gens[nz.channel], c * B).reshape(c, B, -1)
                   for nz, s in active]
        new = z + drift(z.reshape(P * B, d)).reshape(P, B, d) * dt
        for (nz, _), draws in zip(active, buf):
            new[..., nz.sl] += draws[j]
        if not np.all(np.abs(new) <= ESCAPE_LEVEL):
            size = np.abs(new).max(axis=-1)
            if np.isnan(size[~escaped]).any():
                raise IntegratorBlowUp(k)
            escaped |= size > ESCAPE_LEVEL
            new[escaped] = z[escaped]
        z = new
        if sup is not None:
            for i, g in enumerate(sup_groups):
                mag = np.abs(z[..., g.start]) if g.stop - g.start == 1 else \
                    np.linalg.norm(z[..., g], axis=-1)
                np.maximum(sup[..., i], mag, out=sup[..., i])
        if k % stride == 0:
            if on_record is None:
                states.append(z.copy())
            else:
                on_record(k // stride, z)
    return states, sup, escaped


def _unit_draw(law: StableLaw, gen: np.random.Generator, B: int) -> np.ndarray:
    return sample_unit(law, gen, B)


def _blocks(n_paths: int, block_size: int) -> list[tuple[int, int]]:
    return [(k, min(block_size, n_paths - k * block_size))
            for k in range(math.ceil(n_paths / block_size))]


def _map_blocks(fn: Callable, blocks, workers: int):
    if workers <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


def _fill(v, n_rows: int, dim: int) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.ndim <= 1:
        a = a.reshape(-1)
        if a.size not in (1, dim):
            raise ValueError(f"initial state of size {a.size} does not match dimension {dim}")
        return np.broadcast_to(a, (n_rows, dim)).copy()
    if a.shape != (n_rows, dim):
        raise ValueError(f"initial state shape {a.shape} incompatible with ({n_rows}, {dim})")
    return a.copy()


def step_multiscale(sys: MultiscaleSystem, state, dt: float, rng_pair,
                    noise: tuple[bool, bool] = (True, True)):
    """One Euler-Maruyama step of the fast-slow system.

    ``state = (x, y)`` with shapes ``(N, n)`` / ``(N, m)`` (or unbatched
    ``(n,)`` / ``(m,)``). ``rng_pair`` is two numpy Generators (fast, slow)
    or an :class:`RngStream`.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > sys.eps**2 * FAST_STEP_CAP / sys.gamma * (1 + 1e-12):
        raise ValueError(f"dt={dt} does not resolve the fast scale (cap eps^2*{FAST_STEP_CAP}/gamma)")
    x, y = (np.asarray(s, dtype=float) for s in state)
    single = x.ndim == 1
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    gf, gs = rng_pair.pair() if isinstance(rng_pair, RngStream) else rng_pair
    a1 = sys.law_fast.alpha
    N = x.shape[0]
    x_new = x + sys.b(x, y) * dt / sys.eps**2
    y_new = y + (sys.F(x, y) + sys.eps ** (-sys.r0) * sys.G(x, y)) * dt
    if noise[0]:
        x_new = x_new + sys.eps ** (-2.0 / a1) * dt ** (1.0 / a1) * _unit_draw(sys.law_fast, gf, N)
    if noise[1]:
        y_new = y_new + dt ** (1.0 / sys.law_slow.alpha) * _unit_draw(sys.law_slow, gs, N)
    if not (np.all(np.isfinite(x_new)) and np.all(np.isfinite(y_new))):
        raise IntegratorBlowUp(1)
    return (x_new[0], y_new[0]) if single else (x_new, y_new)


def _multiscale_drift(sys: MultiscaleSystem):
    n = sys.n
    inv2 = 1.0 / sys.eps**2
    amp = sys.eps ** (-sys.r0)

    def drift(z):
        x, y = z[:, :n], z[:, n:]
        return np.concatenate([sys.b(x, y) * inv2, sys.F(x, y) + amp * sys.G(x, y)], axis=1)
    return drift


def simulate_multiscale(sys: MultiscaleSystem, x0, y0, T: float, dt: float | None = None,
                        seed: int = 0, n_paths: int = 1, record_dt: float | None = None,
                        noise: tuple[bool, bool] = (True, True), block_size: int = DEFAULT_BLOCK,
                        workers: int = 1) -> tuple[SamplePath, SamplePath]:
    """Simulate ``n_paths`` realisations of ``(X^eps, Y^eps)`` on ``[0, T]``.

    Only times on the ``record_dt`` grid are stored (default: start and end).
    Without ``dt`` the step is the largest divisor of ``T`` not exceeding
    ``eps^2 * FAST_STEP / gamma``.
    """
    if dt is None:
        dt = T / math.ceil(T / default_dt(sys) - 1e-9)
    if dt > sys.eps**2 * FAST_STEP_CAP / sys.gamma * (1 + 1e-12):
        raise ValueError(f"dt={dt} does not resolve the fast scale (cap eps^2*{FAST_STEP_CAP}/gamma)")
    n, m = sys.n, sys.m
    n_steps, stride = _grid(T, dt, record_dt)
    noises = [_Noise(sys.law_fast, sys.eps ** (-2.0 / sys.law_fast.alpha) * noise[0], slice(0, n), 0),
              _Noise(sys.law_slow, 1.0 * noise[1], slice(n, n + m), 1)]
    drift = _multiscale_drift(sys)
    x0 = _fill(x0, n_paths, n)
    y0 = _fill(y0, n_paths, m)

    def run(block):
        k, size = block
        lo = k * block_size
        z0 = np.concatenate([x0[lo:lo + size], y0[lo:lo + size]], axis=1)[None]
        states, sup, esc = _euler(drift, noises, z0, dt, n_steps, stride,
                                  RngStream(seed, k).pair(), (slice(0, n), slice(n, n + m)))
        return np.stack(states)[:, 0], sup[0], esc[0]

    parts = _map_blocks(run, _blocks(n_paths, block_size), workers)
    states = np.concatenate([p[0] for p in parts], axis=1)
    sup = np.concatenate([p[1] for p in parts], axis=0)
    esc = np.concatenate([p[2] for p in parts])
    times = np.arange(states.shape[0]) * stride * dt
    meta = dict(system=sys.name, seed=seed, dt=dt, block_size=block_size, n_paths=n_paths)
    return (SamplePath(times, states[..., :n], sup[:, 0], esc, dict(meta, component="fast")),
            SamplePath(times, states[..., n:], sup[:, 1], esc, dict(meta, component="slow")))


def frozen_drift(sys: MultiscaleSystem, y):
    yv = np.asarray(y, dtype=float).reshape(1, -1)

    def drift(x):
        return sys.b(x, np.broadcast_to(yv, (x.shape[0], yv.shape[1])))
    return drift


def simulate_frozen(sys: MultiscaleSystem, y, x0, T: float, dt: float = 1e-3, seed: int = 0,
                    n_paths: int = 1, record_dt: float | None = None, noise: bool = True,
                    block_size: int = DEFAULT_BLOCK, workers: int = 1) -> SamplePath:
    """Simulate ``dX = b(X, y) dt + dL^{alpha1}`` with the slow variable frozen at ``y``.

    ``x0`` is a single point or one point per path, shape ``(n_paths, n)``.
    """
    n = sys.n
    n_steps, stride = _grid(T, dt, record_dt)
    noises = [_Noise(sys.law_fast, 1.0 * noise, slice(0, n), 0)]
    drift = frozen_drift(sys, y)
    x0 = _fill(x0, n_paths, n)

    def run(block):
        k, size = block
        lo = k * block_size
        states, sup, esc = _euler(drift, noises, x0[lo:lo + size][None], dt, n_steps, stride,
                                  RngStream(seed, k).pair(), (slice(0, n),))
        return np.stack(states)[:, 0], sup[0, :, 0], esc[0]

    parts = _map_blocks(run, _blocks(n_paths, block_size), workers)
    states = np.concatenate([p[0] for p in parts], axis=1)
    times = np.arange(states.shape[0]) * stride * dt
    return SamplePath(times, states, np.concatenate([p[1] for p in parts]),
                      np.concatenate([p[2] for p in parts]),
                      dict(system=sys.name, y=np.asarray(y, dtype=float).tolist(), seed=seed, dt=dt,
                           block_size=block_size, n_paths=n_paths, component="frozen"))


def observe_frozen(sys: MultiscaleSystem, y, x_points, f: Callable, T: float, dt: float,
                   seed: int, n_paths: int, obs_dt: float, block_size: int = DEFAULT_BLOCK,
                   workers: int = 1) -> dict:
    """:func:`observe_sde` for the frozen equation at slow value ``y``."""
    return observe_sde(frozen_drift(sys, y), sys.law_fast, x_points, f, T, dt, seed, n_paths,
                       obs_dt, block_size, workers)


def observe_sde(drift: Callable, law: StableLaw, x_points, f: Callable, T: float, dt: float,
                seed: int, n_paths: int, obs_dt: float, block_size: int = DEFAULT_BLOCK,
                workers: int = 1) -> dict:
    """Evaluate ``f`` along paths of ``dX = drift(X) dt + dL`` from every start point.

    All starting points share the same noise realisations (common random
    numbers). Returns a dict with ``times`` (S,), per-path trapezoid
    integrals ``integral`` (P, n_paths) of ``f(X_t)`` over ``[0, T]`` on the
    ``obs_dt`` grid, per-time path means ``mean`` (S, P) with standard errors
    ``se``, and the ``escaped`` mask (P, n_paths). ``f`` maps ``(N, n)`` to
    ``(N,)``.
    """
    n = law.dim
    xp = np.asarray(x_points, dtype=float).reshape(-1, n)
    P = xp.shape[0]
    n_steps, stride = _grid(T, dt, obs_dt)
    S = n_steps // stride + 1
    w = np.full(S, obs_dt)
    w[0] = w[-1] = 0.5 * obs_dt
    noises = [_Noise(law, 1.0, slice(0, n), 0)]

    def run(block):
        k, size = block
        integ = np.zeros((P, size))
        s1 = np.zeros((S, P))
        s2 = np.zeros((S, P))

        def rec(j, z):
            v = np.asarray(f(z.reshape(P * size, n)), dtype=float).reshape(P, size)
            integ[...] += w[j] * v
            s1[j] = v.sum(axis=1)
            s2[j] = (v * v).sum(axis=1)

        z0 = np.broadcast_to(xp[:, None, :], (P, size, n))
        _, _, esc = _euler(drift, noises, z0, dt, n_steps, stride, RngStream(seed, k).pair(),
                           on_record=rec)
        return integ, s1, s2, esc

    parts = _map_blocks(run, _blocks(n_paths, block_size), workers)
    integral = np.concatenate([p[0] for p in parts], axis=1)
    s1 = np.sum([p[1] for p in parts], axis=0)
    s2 = np.sum([p[2] for p in parts], axis=0)
    mean = s1 / n_paths
    var = np.maximum(s2 / n_paths - mean**2, 0.0) * n_paths / max(n_paths - 1, 1)
    return dict(times=np.arange(S) * obs_dt, integral=integral, mean=mean,
                se=np.sqrt(var / n_paths), escaped=np.concatenate([p[3] for p in parts], axis=1))


def _flow_step(A: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """``(exp(A dt), int_0^dt exp(A s) ds)`` for the exponential-Euler update."""
    n = A.shape[0]
    if n == 1:
        a = A[0, 0] * dt
        e = math.exp(a)
        p = dt * (math.expm1(a) / a if a != 0 else 1.0)
        return np.array([[e]]), np.array([[p]])
    M = np.zeros((2 * n, 2 * n))
    M[:n, :n] = A * dt
    M[:n, n:] = np.eye(n) * dt
    E = expm(M)
    return E[:n, :n], E[:n, n:]


def simulate_variational(sys: MultiscaleSystem, y, x0, T: float, dt: float = 1e-3,
                         seed: int = 0, order: int = 1) -> VariationalFlow:
    """Base path of the frozen equation plus ``grad_x X``, ``grad_y X`` (and ``grad_y^2 X``).

    The noise is additive, so the variational equations are linear ODEs with
    path-dependent coefficients; they are advanced with exponential Euler,
    which is exact when ``grad_x b`` is constant along the path.
    """
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    if sys.b_x is None or sys.b_y is None:
        raise ValueError("system does not supply the Jacobians b_x and b_y")
    if order == 2 and (sys.b_xx is None or sys.b_xy is None or sys.b_yy is None):
        raise ValueError("order=2 needs second derivatives b_xx, b_xy, b_yy")
    path = simulate_frozen(sys, y, x0, T, dt, seed, n_paths=1, record_dt=dt)
    yv = np.asarray(y, dtype=float).reshape(-1)
    n, m = sys.n, sys.m
    xs = path.states[:, 0, :]
    K = len(xs)
    jx = np.empty((K, n, n))
    jy = np.empty((K, n, m))
    jx[0], jy[0] = np.eye(n), 0.0
    jyy = None
    if order == 2:
        jyy = np.empty((K, n, m, m))
        jyy[0] = 0.0
    for k in range(K - 1):
        xk = xs[k]
        A = np.asarray(sys.b_x(xk, yv), dtype=float)
        E, Pm = _flow_step(A, dt)
        by = np.asarray(sys.b_y(xk, yv), dtype=float)
        jx[k + 1] = E @ jx[k]
        jy[k + 1] = E @ jy[k] + Pm @ by
        if order == 2:
            J = jy[k]
            bxx = np.asarray(sys.b_xx(xk, yv), dtype=float)
            bxy = np.asarray(sys.b_xy(xk, yv), dtype=float)
            byy = np.asarray(sys.b_yy(xk, yv), dtype=float)
            force = (np.einsum("iac,aj,ck->ijk", bxx, J, J)
                     + np.einsum("iak,aj->ijk", bxy, J)
                     + np.einsum("iaj,ak->ijk", bxy, J) + byy)
            jyy[k + 1] = (np.einsum("ia,ajk->ijk", E, jyy[k])
                          + np.einsum("ia,ajk->ijk", Pm, force))
    return VariationalFlow(path, jx, jy, jyy)
