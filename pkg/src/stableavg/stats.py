"""Distances between empirical laws and resampling error bars."""
from __future__ import annotations

import math

import numpy as np


def ks_one_sample(samples, cdf) -> float:
    """sup |F_n - F| for a continuous CDF ``cdf`` (vectorised callable)."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = len(x)
    F = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_two_sample(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def ks_critical(n: int, m: int | None = None, level: float = 0.01) -> float:
    """Asymptotic two-sample KS critical value ``c(level) sqrt((n+m)/(n m))``."""
    m = n if m is None else m
    c = math.sqrt(-0.5 * math.log(0.5 * level))
    return c * math.sqrt((n + m) / (n * m))


def wasserstein_p(a, b, p: float = 1.0) -> float:
    """Empirical Wasserstein-p distance in 1-D via the quantile coupling.

    ``W_p^p = int_0^1 |Q_a(u) - Q_b(u)|^p du`` with the empirical quantile
    functions, exact for samples of any sizes.
    """
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if len(a) == len(b):
        return float(np.mean(np.abs(a - b) ** p) ** (1.0 / p))
    u = np.union1d(np.arange(1, len(a) + 1) / len(a), np.arange(1, len(b) + 1) / len(b))
    du = np.diff(np.concatenate([[0.0], u]))
    ia = np.minimum(np.ceil(u * len(a) - 1e-12).astype(int) - 1, len(a) - 1)
    ib = np.minimum(np.ceil(u * len(b) - 1e-12).astype(int) - 1, len(b) - 1)
    return float(np.sum(du * np.abs(a[ia] - b[ib]) ** p) ** (1.0 / p))


def grouped_jackknife(values, weights, groups) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and delete-one-group jackknife standard error.

    ``values`` is ``(N,)`` or ``(N, k)``; groups carry correlated samples
    (one chain, or one contiguous batch of a single chain).
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    g = np.asarray(groups)
    vv = v.reshape(len(v), -1)
    total_w = w.sum()
    total = (w[:, None] * vv).sum(axis=0)
    mean = total / total_w
    labels, inv = np.unique(g, return_inverse=True)
    G = len(labels)
    if G < 2:
        se = np.full_like(mean, np.nan)
    else:
        gw = np.bincount(inv, weights=w, minlength=G)
        gs = np.stack([np.bincount(inv, weights=w * vv[:, j], minlength=G)
                       for j in range(vv.shape[1])], axis=1)
        loo = (total[None, :] - gs) / (total_w - gw)[:, None]
        se = np.sqrt((G - 1) / G * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    shape = v.shape[1:]
    return mean.reshape(shape), se.reshape(shape)
