"""Symmetric alpha-stable laws: sampling, increments, CDF and Levy density.

Convention: the unit-time law has characteristic function
``E exp(i <xi, S>) = exp(-|xi|**alpha)``, so the generator of the associated
Levy process is exactly ``-(-Laplacian)**(alpha/2)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

CONVENTION = "psi(xi)=|xi|^alpha"

_TAIL_TOL = 1e-8
_CDF_TOL = 1e-6


class StableCDFError(RuntimeError):
    """Raised when the CDF inversion integral does not reach its target accuracy."""

    def __init__(self, x, achieved):
        super().__init__(f"CDF quadrature at x={x!r} only reached error bound {achieved:.3g}")
        self.x = x
        self.achieved = achieved


@dataclass(frozen=True)
class StableLaw:
    """Unit-time symmetric alpha-stable law on R^dim.

    ``multivariate`` selects how dim > 1 draws are built: ``"independent"``
    uses i.i.d. one-dimensional coordinates (Levy measure on the axes),
    ``"isotropic"`` the rotationally invariant law whose generator is the
    fractional Laplacian. Both coincide for dim = 1.
    """

    alpha: float
    dim: int = 1
    multivariate: str = "independent"
    convention: str = CONVENTION

    def __post_init__(self):
        if not 1.0 < self.alpha < 2.0:
            raise ValueError(f"stability index must lie in (1, 2), got {self.alpha}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if self.multivariate not in ("independent", "isotropic"):
            raise ValueError(f"unknown multivariate convention {self.multivariate!r}")
        if self.convention != CONVENTION:
            raise ValueError(f"unsupported convention {self.convention!r}")


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream keyed by ``(seed, stream_id)``.

    Each call to :meth:`generator` returns a fresh generator positioned at the
    start of the stream, so the same key always replays the same numbers no
    matter which worker consumes it. ``channel`` separates independent noises
    (e.g. fast and slow) belonging to the same stream.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")

    def generator(self, channel: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, channel))
        return np.random.Generator(np.random.PCG64(ss))

    def pair(self) -> tuple[np.random.Generator, np.random.Generator]:
        return self.generator(0), self.generator(1)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def _cms_symmetric(alpha, gen, shape):
    # Chambers-Mallows-Stuck, beta = 0
    v = gen.uniform(-0.5 * np.pi, 0.5 * np.pi, shape)
    w = gen.standard_exponential(shape)
    av = alpha * v
    return (np.sin(av) / np.cos(v) ** (1.0 / alpha)
            * (np.cos(v - av) / w) ** ((1.0 - alpha) / alpha))


def _positive_stable(beta, gen, shape):
    # Kanter's representation: Laplace transform exp(-s**beta), 0 < beta < 1
    v = gen.uniform(0.0, np.pi, shape)
    w = gen.standard_exponential(shape)
    return (np.sin(beta * v) / np.sin(v) ** (1.0 / beta)
            * (np.sin((1.0 - beta) * v) / w) ** ((1.0 - beta) / beta))


def sample_unit(law: StableLaw, rng, size: int | None = None) -> np.ndarray:
    """Draw from the unit-time law.

    Returns shape ``(dim,)`` when ``size`` is None, else ``(size, dim)``.
    ``rng`` is a numpy Generator or an :class:`RngStream`.
    """
    gen = _as_generator(rng)
    n = 1 if size is None else int(size)
    if law.multivariate == "isotropic" and law.dim > 1:
        # sub-Gaussian: sqrt(A) * N(0, 2 I) with E exp(-sA) = exp(-s**(alpha/2))
        a = _positive_stable(0.5 * law.alpha, gen, (n, 1))
        out = np.sqrt(2.0 * a) * gen.standard_normal((n, law.dim))
    else:
        out = _cms_symmetric(law.alpha, gen, (n, law.dim))
    return out[0] if size is None else out


def increment(law: StableLaw, dt: float, rng, size: int | None = None) -> np.ndarray:
    """Levy increment over a step ``dt``: ``dt**(1/alpha) * sample_unit``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return dt ** (1.0 / law.alpha) * sample_unit(law, rng, size)


def _cf_cutoff(alpha: float, scale_pow: float) -> float:
    """Smallest Xi (roughly) with exp(-c Xi^alpha) / Xi below the tail tolerance."""
    xi = (math.log(1.0 / _TAIL_TOL) / scale_pow) ** (1.0 / alpha)
    while math.exp(-scale_pow * xi**alpha) / xi >= _TAIL_TOL:
        xi *= 1.1
    return xi


def gil_pelaez_cdf(x: float, alpha: float, coef: float = 1.0) -> tuple[float, float]:
    """CDF of the symmetric law with cf ``exp(-coef |xi|^alpha)`` at ``x``.

    Returns ``(value, error_bound)``. Uses
    ``F(x) = 1/2 + (1/pi) int_0^Xi sin(x xi) exp(-coef xi^alpha) / xi dxi``.
    """
    x = float(x)
    if x == 0.0:
        return 0.5, 0.0
    big = _cf_cutoff(alpha, coef)
    ax = abs(x)
    a = min(1.0, np.pi / ax, big)

    def near(s):
        return math.sin(ax * s) / s * math.exp(-coef * s**alpha) if s > 0 else ax

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        i0, e0 = integrate.quad(near, 0.0, a, epsabs=1e-12, epsrel=1e-12, limit=200)
        i1, e1 = 0.0, 0.0
        if a < big:
            i1, e1 = integrate.quad(lambda s: math.exp(-coef * s**alpha) / s, a, big,
                                    weight="sin", wvar=ax, epsabs=1e-12, epsrel=1e-12,
                                    limit=500)
    err = (e0 + e1) / np.pi + _TAIL_TOL / np.pi
    if err > _CDF_TOL:
        raise StableCDFError(x, err)
    val = 0.5 + math.copysign((i0 + i1) / np.pi, x)
    return min(max(val, 0.0), 1.0), err


def cdf_1d(law: StableLaw, x):
    """P(S <= x) for the one-dimensional unit-time law (scalar or array ``x``)."""
    if law.dim != 1:
        raise ValueError("cdf_1d needs a one-dimensional law")
    xs = np.asarray(x, dtype=float)
    out = np.array([gil_pelaez_cdf(v, law.alpha)[0] for v in xs.ravel()]).reshape(xs.shape)
    return float(out) if out.ndim == 0 else out


def levy_constant(dim: int, alpha: float) -> float:
    """c_{n,alpha} making ``int [f(x+z)-f(x)-1_{|z|<=1} z.f'(x)] c|z|^{-n-alpha} dz``
    equal to ``-(-Laplacian)**(alpha/2) f``."""
    return (alpha * 2.0 ** (alpha - 1.0) * special.gamma(0.5 * (dim + alpha))
            / (np.pi ** (0.5 * dim) * special.gamma(1.0 - 0.5 * alpha)))


def levy_density(law: StableLaw, z) -> np.ndarray | float:
    """Levy-measure density ``c_{n,alpha} |z|^{-n-alpha}``.

    ``z`` has trailing axis of length ``dim`` (a bare scalar is accepted for
    dim = 1). For dim > 1 this is the isotropic measure; the independent-
    coordinate law has no density off the axes.
    """
    if law.dim > 1 and law.multivariate != "isotropic":
        raise ValueError("independent-coordinate stable law has no Levy density for dim > 1")
    z = np.asarray(z, dtype=float)
    r = np.abs(z) if law.dim == 1 and (z.ndim == 0 or z.shape[-1] != 1) else np.linalg.norm(z, axis=-1)
    if np.any(r == 0):
        raise ValueError("Levy density is singular at z = 0")
    out = levy_constant(law.dim, law.alpha) * r ** (-law.dim - law.alpha)
    return float(out) if np.ndim(out) == 0 else out
