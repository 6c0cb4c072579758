"""Fast-slow system definitions, hypothesis spot checks and the built-in registry.

Coefficient callables are vectorised: ``b(x, y)`` takes ``x`` of shape
``(N, n)`` and ``y`` of shape ``(N, m)`` and returns ``(N, n)``; likewise
``F`` and ``G`` return ``(N, m)``. Jacobians of ``b`` act on a single point
(``x`` of shape ``(n,)``, ``y`` of shape ``(m,)``) and return
``b_x: (n, n)``, ``b_y: (n, m)``, ``b_xx: (n, n, n)``, ``b_xy: (n, n, m)``,
``b_yy: (n, m, m)``.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .stable_noise import StableLaw


class HypothesisWarning(UserWarning):
    """A coefficient or parameter check failed; the run may leave the theory's range."""


def r0_upper(alpha_fast: float) -> float:
    return 1.0 - 1.0 / alpha_fast


def _pretty(v: float) -> str:
    frac = Fraction(v).limit_denominator(100)
    return str(frac) if abs(float(frac) - v) < 1e-9 else f"{v:.4g}"


@dataclass(frozen=True)
class MultiscaleSystem:
    b: Callable
    F: Callable
    G: Callable
    eps: float
    r0: float
    law_fast: StableLaw
    law_slow: StableLaw
    gamma: float = 1.0
    K1: float = 1.0
    K2: float = 1.0
    b_x: Callable | None = None
    b_y: Callable | None = None
    b_xx: Callable | None = None
    b_xy: Callable | None = None
    b_yy: Callable | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        for k in ("gamma", "K1", "K2"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        msg = r0_range_message(self.r0, self.law_fast.alpha)
        if msg:
            warnings.warn(msg, HypothesisWarning, stacklevel=3)

    @property
    def n(self) -> int:
        return self.law_fast.dim

    @property
    def m(self) -> int:
        return self.law_slow.dim

    def replace(self, **changes) -> "MultiscaleSystem":
        """Copy with overrides; ``alpha1``/``alpha2`` rebuild the noise laws."""
        if "alpha1" in changes:
            changes["law_fast"] = dataclasses.replace(self.law_fast, alpha=changes.pop("alpha1"))
        if "alpha2" in changes:
            changes["law_slow"] = dataclasses.replace(self.law_slow, alpha=changes.pop("alpha2"))
        return dataclasses.replace(self, **changes)


def r0_range_message(r0: float, alpha_fast: float) -> str | None:
    """Warning text when r0 leaves (0, 1 - 1/alpha1]; None otherwise.

    The upper endpoint is accepted since the bundled toy model sits on it.
    """
    hi = r0_upper(alpha_fast)
    if r0 <= 0 or r0 > hi + 1e-12:
        return f"r0 outside (0, {_pretty(hi)}): got r0={r0:g} with alpha1={alpha_fast:g}"
    return None


def check_hypotheses(sys: MultiscaleSystem, n_pairs: int = 256, seed: int = 0,
                     scale: float = 5.0, warn: bool = True) -> list[str]:
    """Spot-check A_b, A_F and A_G1 (value/Lipschitz parts) on random point pairs.

    Returns the list of violation messages, each prefixed with the hypothesis
    name. Centering (A_G2) needs the invariant measure and is checked in
    :mod:`stableavg.ergodics`.
    """
    gen = np.random.default_rng(seed)
    n, m = sys.n, sys.m
    x1, x2 = scale * gen.standard_normal((2, n_pairs, n))
    y1, y2 = scale * gen.standard_normal((2, n_pairs, m))
    dx2 = np.sum((x1 - x2) ** 2, axis=1)
    dy2 = np.sum((y1 - y2) ** 2, axis=1)
    out = []
    rel = 1e-9

    inner = np.sum((sys.b(x1, y1) - sys.b(x2, y1)) * (x1 - x2), axis=1)
    if np.any(inner > -sys.gamma * dx2 * (1 - rel)):
        out.append(f"A_b: dissipativity <b(x1,y)-b(x2,y), x1-x2> <= -gamma|x1-x2|^2 fails "
                   f"for gamma={sys.gamma:g}")
    b0 = sys.b(np.zeros((n_pairs, n)), y1)
    if not np.all(np.isfinite(b0)):
        out.append("A_b: b(0, y) is not finite")

    for tag, fn, K in (("A_F", sys.F, sys.K1), ("A_G1", sys.G, sys.K2)):
        v1, v2 = fn(x1, y1), fn(x2, y2)
        lip = np.sum((v1 - v2) ** 2, axis=1)
        if np.any(lip > K * (dx2 + dy2) * (1 + rel)):
            out.append(f"{tag}: Lipschitz bound with constant {K:g} fails")
        if np.any(np.linalg.norm(v1, axis=1) > K * (1 + rel)):
            out.append(f"{tag}: sup bound |.| <= {K:g} fails")

    msg = r0_range_message(sys.r0, sys.law_fast.alpha)
    if msg:
        out.append(msg)
    if warn:
        for msg in out:
            warnings.warn(msg, HypothesisWarning, stacklevel=2)
    return out


# --- built-in coefficients (module level so they pickle) -------------------

def neg_x(x, y):
    return -x


def zero_slow(x, y):
    return np.zeros((x.shape[0], y.shape[1]))


def zero_fast(x, y):
    return np.zeros_like(x)


def sin_x(x, y):
    return np.sin(x[:, :1]) * np.ones((1, y.shape[1]))


def x_first(x, y):
    return x[:, :1] * np.ones((1, y.shape[1]))


def _jac_neg_identity(x, y):
    return -np.eye(x.shape[0])


def _jac_zero_y(x, y):
    return np.zeros((x.shape[0], y.shape[0]))


def _zero_xx(x, y):
    return np.zeros((x.shape[0],) * 3)


def _zero_xy(x, y):
    return np.zeros((x.shape[0], x.shape[0], y.shape[0]))


def _zero_yy(x, y):
    return np.zeros((x.shape[0], y.shape[0], y.shape[0]))


TANH_SHIFT = 0.1


def shifted_neg_x(x, y):
    return -x + TANH_SHIFT * np.tanh(y[:, :1])


def _jac_y_shift(x, y):
    return np.array([[TANH_SHIFT / math.cosh(y[0]) ** 2]])


def _jac_yy_shift(x, y):
    t = math.tanh(y[0])
    return np.array([[[-2.0 * TANH_SHIFT * t * (1.0 - t * t)]]])


class CenteredSine:
    """``G(x, y) = sin(x) - mu^y(sin)`` for the drift ``-x + 0.1 tanh(y)``.

    The frozen law is the stationary OU-stable law shifted by
    ``0.1 tanh(y)``, whose characteristic function at 1 is ``exp(-1/alpha)``,
    so ``mu^y(sin) = sin(0.1 tanh y) exp(-1/alpha)`` in closed form.
    """

    def __init__(self, alpha: float):
        self.alpha = alpha

    def mean(self, y):
        return np.sin(TANH_SHIFT * np.tanh(y)) * math.exp(-1.0 / self.alpha)

    def __call__(self, x, y):
        return np.sin(x[:, :1]) - self.mean(y[:, :1])


def wiggly_drift(x, y):
    return -x - 0.5 * np.sin(x) + TANH_SHIFT * np.tanh(y[:, :1])


def _jac_wiggly(x, y):
    return np.array([[-1.0 - 0.5 * math.cos(x[0])]])


def _hess_wiggly(x, y):
    return np.array([[[0.5 * math.sin(x[0])]]])


def toy(eps=0.1, r0=1.0 / 3.0, alpha1=1.5, alpha2=1.5) -> MultiscaleSystem:
    """Linear fast drift, zero slow drift, ``G = sin x``."""
    return MultiscaleSystem(b=neg_x, F=zero_slow, G=sin_x, eps=eps, r0=r0,
                            law_fast=StableLaw(alpha1), law_slow=StableLaw(alpha2),
                            gamma=1.0, K1=1.0, K2=1.0, b_x=_jac_neg_identity, b_y=_jac_zero_y,
                            b_xx=_zero_xx, b_xy=_zero_xy, b_yy=_zero_yy, name="toy",
                            params=dict(eps=eps, r0=r0, alpha1=alpha1, alpha2=alpha2))


def toy_fx(eps=0.1, r0=1.0 / 3.0, alpha1=1.5, alpha2=1.5) -> MultiscaleSystem:
    """Toy model with slow drift ``F(x, y) = x`` (unbounded, so A_F is knowingly violated)."""
    s = toy(eps, r0, alpha1, alpha2)
    return s.replace(F=x_first, K1=1.0, name="toy-fx")


def toy_y(eps=0.1, r0=1.0 / 3.0, alpha1=1.5, alpha2=1.5) -> MultiscaleSystem:
    """y-dependent extension: ``b = -x + 0.1 tanh y``, ``G = sin x - mu^y(sin)``."""
    return MultiscaleSystem(b=shifted_neg_x, F=zero_slow, G=CenteredSine(alpha1), eps=eps, r0=r0,
                            law_fast=StableLaw(alpha1), law_slow=StableLaw(alpha2),
                            gamma=1.0, K1=1.0, K2=2.0, b_x=_jac_neg_identity, b_y=_jac_y_shift,
                            b_xx=_zero_xx, b_xy=_zero_xy, b_yy=_jac_yy_shift, name="toy-y",
                            params=dict(eps=eps, r0=r0, alpha1=alpha1, alpha2=alpha2))


def wiggly(eps=0.1, r0=1.0 / 3.0, alpha1=1.5, alpha2=1.5) -> MultiscaleSystem:
    """Nonlinear dissipative drift ``-x - sin(x)/2 + 0.1 tanh y`` (gamma = 1/2)."""
    return MultiscaleSystem(b=wiggly_drift, F=zero_slow, G=sin_x, eps=eps, r0=r0,
                            law_fast=StableLaw(alpha1), law_slow=StableLaw(alpha2),
                            gamma=0.5, K1=1.0, K2=1.0, b_x=_jac_wiggly, b_y=_jac_y_shift,
                            b_xx=_hess_wiggly, b_xy=_zero_xy, b_yy=_jac_yy_shift, name="wiggly",
                            params=dict(eps=eps, r0=r0, alpha1=alpha1, alpha2=alpha2))


def null(eps=0.1, r0=1.0 / 3.0, alpha1=1.5, alpha2=1.5) -> MultiscaleSystem:
    """No slow drift at all: ``Y^eps`` is exactly ``y0 + L^{alpha2}``."""
    s = toy(eps, r0, alpha1, alpha2)
    return s.replace(G=zero_slow, name="null")


REGISTRY: dict[str, Callable[..., MultiscaleSystem]] = {
    "toy": toy,
    "toy-fx": toy_fx,
    "toy-y": toy_y,
    "wiggly": wiggly,
    "null": null,
}


def get_system(name: str, **overrides) -> MultiscaleSystem:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; known: {sorted(REGISTRY)}") from None
    return factory(**overrides)


def register(name: str, factory: Callable[..., MultiscaleSystem]) -> None:
    REGISTRY[name] = factory
