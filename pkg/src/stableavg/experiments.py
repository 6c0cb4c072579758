"""Named, seeded experiments shared by the command line and the acceptance suite.

Every experiment takes an :class:`ExperimentConfig` and returns an
:class:`ExperimentResult`: a table of rows (each carrying an ``anchor``
naming the claim it checks) plus numbered criteria with PASS/FAIL verdicts.
Randomness flows from ``derive_seed(config.seed, tag)``; per-path streams
are keyed further by block index inside the engine.
"""
from __future__ import annotations

import dataclasses
import math
import warnings
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from . import ergodics, poisson
from .averaging import (PHI_FUNCTIONALS, AveragedSystem, GeneratorTable, bump, build_averaged,
                        martingale_residual, simulate_averaged, weak_convergence_test)
from .sde_engine import simulate_frozen, simulate_multiscale, simulate_variational
from .stable_noise import RngStream, StableLaw, sample_unit
from .stats import ks_one_sample
from .systems import (CenteredSine, HypothesisWarning, MultiscaleSystem, check_hypotheses,
                      get_system, neg_x)

SEED_MASK = (1 << 64) - 1


class ConfigError(ValueError):
    """The configuration cannot be run (unknown names, bad values, unsupported system)."""


def derive_seed(seed: int, tag: str) -> int:
    """``seed XOR crc32(tag)``, kept to 64 bits."""
    return (int(seed) ^ zlib.crc32(tag.encode())) & SEED_MASK


@dataclass
class ExperimentConfig:
    experiment: str
    system: str = "toy"
    overrides: dict = field(default_factory=dict)
    budgets: dict = field(default_factory=dict)
    seed: int = 20240607
    output_dir: str = "results"
    workers: int = 1

    OVERRIDE_KEYS = ("eps", "r0", "alpha1", "alpha2")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "experiment" not in d:
            raise ConfigError("config needs an 'experiment' entry")
        cfg = cls(**d)
        cfg.validate_shape()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate_shape(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; see list-experiments")
        bad = set(self.overrides) - set(self.OVERRIDE_KEYS)
        if bad:
            raise ConfigError(f"unknown system overrides {sorted(bad)}; allowed {self.OVERRIDE_KEYS}")
        if not isinstance(self.seed, int) or not 0 <= self.seed <= SEED_MASK:
            raise ConfigError("seed must be an integer in [0, 2^64)")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise ConfigError("workers must be a positive integer")
        unknown = set(self.budgets) - set(EXPERIMENTS[self.experiment].budgets)
        if unknown:
            raise ConfigError(f"unknown budgets for {self.experiment}: {sorted(unknown)}")

    def budget(self, key):
        return self.budgets.get(key, EXPERIMENTS[self.experiment].budgets[key])

    def build_system(self, name: str | None = None, **extra) -> MultiscaleSystem:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", HypothesisWarning)
                return get_system(name or self.system, **{**self.overrides, **extra})
        except (KeyError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    def hypothesis_warnings(self) -> list[str]:
        """Hypothesis violations of the configured system, each naming the hypothesis."""
        return check_hypotheses(self.build_system(), warn=False)

    def seed_for(self, unit: str = "") -> int:
        return derive_seed(self.seed, f"{self.experiment}/{unit}" if unit else self.experiment)


@dataclass
class Criterion:
    number: int
    name: str
    passed: bool
    numbers: dict

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"


@dataclass
class ExperimentResult:
    experiment: str
    rows: list
    criteria: list
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)


@dataclass(frozen=True)
class Experiment:
    name: str
    anchor: str
    criterion: int | None
    run: Callable
    budgets: dict
    systems: tuple = ("toy",)


EXPERIMENTS: dict[str, Experiment] = {}


def experiment(name, anchor, criterion, budgets, systems=("toy",)):
    def deco(fn):
        EXPERIMENTS[name] = Experiment(name, anchor, criterion, fn, dict(budgets), tuple(systems))
        return fn
    return deco


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    cfg.validate_shape()
    exp = EXPERIMENTS[cfg.experiment]
    if exp.systems and cfg.system not in exp.systems:
        raise ConfigError(f"{cfg.experiment} runs on systems {list(exp.systems)}, not {cfg.system!r}")
    res = exp.run(cfg)
    for r in res.rows:
        r.setdefault("anchor", exp.anchor)
    return res


def _f(v) -> float:
    return float(v)


# --- noise -------------------------------------------------------------------

@experiment("stable-cf", "stable sampler matches exp(-|xi|^alpha)", 1,
            dict(alphas=[1.2, 1.5, 1.8], n=100_000, xis=[0.5, 1.0, 2.0]), systems=())
def _stable_cf(cfg):
    n = int(cfg.budget("n"))
    rows, worst = [], 0.0
    for i, a in enumerate(cfg.budget("alphas")):
        x = sample_unit(StableLaw(a), RngStream(cfg.seed_for(f"alpha{i}"), 0).generator(0), n)[:, 0]
        for xi in cfg.budget("xis"):
            emp = np.mean(np.exp(1j * xi * x))
            exact = math.exp(-abs(xi) ** a)
            err = abs(emp - exact)
            worst = max(worst, err)
            rows.append(dict(alpha=a, xi=xi, cf_real=_f(emp.real), cf_imag=_f(emp.imag),
                             exact=exact, abs_err=_f(err)))
    thr = 5.0 / math.sqrt(n)
    return ExperimentResult("stable-cf", rows, [Criterion(1, "stable sampler fidelity", worst <= thr,
                                                          dict(max_err=worst, threshold=thr))])


# --- fast process ------------------------------------------------------------

def _linear_only(sys):
    if sys.b is not neg_x:
        raise ConfigError("this experiment compares with closed forms valid for b(x, y) = -x")


@experiment("invariant-ks", "frozen-equation invariant density of the linear stable model", 2,
            dict(n=100_000, y=0.0, x0=0.0, n_chains=1000))
def _invariant_ks(cfg):
    sys = cfg.build_system()
    _linear_only(sys)
    a = sys.law_fast.alpha
    meas = ergodics.estimate_invariant(sys, [cfg.budget("y")], n=int(cfg.budget("n")),
                                       seed=cfg.seed_for(), x0=cfg.budget("x0"),
                                       n_chains=int(cfg.budget("n_chains")), workers=cfg.workers)
    ks = ks_one_sample(meas.samples[:, 0], lambda v: ergodics.stationary_cdf_fast(a, v))
    rho0 = ergodics.density_oracle(a, 0.0)
    qs = [0.05, 0.25, 0.5, 0.75, 0.95]
    emp = np.quantile(meas.samples[:, 0], qs)
    rows = [dict(quantity="ks", value=ks, reference=0.02),
            dict(quantity="rho(0)", value=rho0, reference=rho0)]
    rows += [dict(quantity=f"q{q}", value=_f(e), reference=ergodics.stationary_quantile(a, q))
             for q, e in zip(qs, emp)]
    return ExperimentResult("invariant-ks", rows, [Criterion(2, "invariant density", ks <= 0.02,
                                                             dict(ks=ks, rho0=rho0, n=len(meas)))])


@experiment("contraction", "synchronous coupling contracts at rate gamma", 3,
            dict(n_paths=200, T=5.0, dt=1e-3, x1=-2.0, x2=3.0, record_dt=0.1),
            systems=("toy", "wiggly"))
def _contraction(cfg):
    T, dt, n = cfg.budget("T"), cfg.budget("dt"), int(cfg.budget("n_paths"))
    x1, x2, rec = cfg.budget("x1"), cfg.budget("x2"), cfg.budget("record_dt")
    rows, crit = [], []
    for name in ("toy", "wiggly"):
        sys = cfg.build_system(name)
        seed = cfg.seed_for(name)
        a = simulate_frozen(sys, 0.0, x1, T, dt, seed, n, rec, workers=cfg.workers)
        b = simulate_frozen(sys, 0.0, x2, T, dt, seed, n, rec, workers=cfg.workers)
        gap = np.abs(a.states[..., 0] - b.states[..., 0])
        bound = abs(x1 - x2) * np.exp(-sys.gamma * a.times)
        if name == "toy":
            rel = np.abs(gap / bound[:, None] - 1.0)
            worst = _f(rel.max())
            crit.append(Criterion(3, "contraction (exact for b=-x)", worst <= 10 * dt,
                                  dict(max_rel_err=worst, threshold=10 * dt)))
        else:
            worst = _f(np.max(gap / bound[:, None] - 1.0))
            crit.append(Criterion(3, "contraction bound (nonlinear drift)", worst <= 10 * dt,
                                  dict(max_excess=worst, threshold=10 * dt)))
        for k in range(0, len(a.times), max(1, len(a.times) // 10)):
            rows.append(dict(system=name, t=_f(a.times[k]), gap_max=_f(gap[k].max()),
                             gap_min=_f(gap[k].min()), bound=_f(bound[k])))
    return ExperimentResult("contraction", rows, crit)


@experiment("variational", "derivative flows of the frozen equation", 4,
            dict(n_paths=10, T=2.0, dt=1e-3, x0=0.7, y=0.3, delta=1e-4),
            systems=("toy", "wiggly"))
def _variational(cfg):
    T, dt, n, x0, y, d = (cfg.budget(k) for k in ("T", "dt", "n_paths", "x0", "y", "delta"))
    rows = []
    toy_err = 0.0
    sys = cfg.build_system("toy")
    for i in range(int(n)):
        fl = simulate_variational(sys, [y], x0, T, dt, cfg.seed_for(f"toy{i}"))
        exact = np.exp(-fl.base_path.times)
        toy_err = max(toy_err, _f(np.max(np.abs(fl.jac_x[:, 0, 0] / exact - 1.0))))
    rows.append(dict(system="toy", quantity="grad_x", max_rel_err=toy_err))
    gen = cfg.build_system("wiggly")
    worst = {"grad_x": 0.0, "grad_y": 0.0}
    for i in range(int(n)):
        seed = cfg.seed_for(f"wiggly{i}")
        fl = simulate_variational(gen, [y], x0, T, dt, seed)
        fin = lambda xx, yy: simulate_frozen(gen, [yy], xx, T, dt, seed).final[0, 0]
        fd_x = (fin(x0 + d, y) - fin(x0 - d, y)) / (2 * d)
        fd_y = (fin(x0, y + d) - fin(x0, y - d)) / (2 * d)
        for q, fd, an in (("grad_x", fd_x, fl.jac_x[-1, 0, 0]), ("grad_y", fd_y, fl.jac_y[-1, 0, 0])):
            err = abs(an - fd) / max(abs(fd), 1e-12)
            worst[q] = max(worst[q], err)
            rows.append(dict(system="wiggly", quantity=q, path=i, flow=_f(an), finite_diff=_f(fd),
                             max_rel_err=_f(err)))
    crit = [Criterion(4, "variational flow exact for b=-x", toy_err <= 1e-10, dict(max_rel_err=toy_err)),
            Criterion(4, "variational flow vs CRN finite differences",
                      max(worst.values()) < 1e-2, dict(worst))]
    return ExperimentResult("variational", rows, crit)


def median_of_means(v, groups: int) -> float:
    """Median of the means of ``groups`` contiguous batches; robust for heavy tails."""
    return float(np.median([b.mean() for b in np.array_split(np.asarray(v), groups)]))


@experiment("moments", "fast-component moments scale like t^(p/alpha) eps^(-2p/alpha)", 5,
            dict(n_paths=100_000, eps=0.1, t_over_eps2=[0.002, 0.005, 0.01, 0.02, 0.05],
                 eps_ladder=[0.05, 0.1, 0.2, 0.4], T_fixed=1e-4, steps=100, p=1.0, groups=20))
def _moments(cfg):
    n, p, steps = int(cfg.budget("n_paths")), cfg.budget("p"), int(cfg.budget("steps"))
    base = cfg.build_system()
    a = base.law_fast.alpha

    def moment(eps, T, unit):
        s = base.replace(eps=eps)
        X, _ = simulate_multiscale(s, 0.0, 0.0, T, T / steps, cfg.seed_for(unit), n,
                                   noise=(True, False), workers=cfg.workers)
        v = np.abs(X.final[:, 0]) ** p
        return _f(median_of_means(v, groups)), _f(v.mean())

    groups = int(cfg.budget("groups"))
    rows = []
    e0 = cfg.budget("eps")
    Ts = [e0**2 * r for r in cfg.budget("t_over_eps2")]
    mT = [moment(e0, T, f"T{i}") for i, T in enumerate(Ts)]
    rows += [dict(sweep="T", eps=e0, T=T, moment=m, sample_mean=sm) for T, (m, sm) in zip(Ts, mT)]
    slope_T = _f(np.polyfit(np.log(Ts), np.log([m for m, _ in mT]), 1)[0])
    Tf = cfg.budget("T_fixed")
    eps = cfg.budget("eps_ladder")
    me = [moment(e, Tf, f"eps{i}") for i, e in enumerate(eps)]
    rows += [dict(sweep="eps", eps=e, T=Tf, moment=m, sample_mean=sm) for e, (m, sm) in zip(eps, me)]
    me = [m for m, _ in me]
    slope_e = _f(np.polyfit(np.log(eps), np.log(me), 1)[0])
    tT, te = p / a, -2 * p / a
    return ExperimentResult("moments", rows, [
        Criterion(5, "moment slope in T", abs(slope_T - tT) <= 0.15, dict(slope=slope_T, target=tT)),
        Criterion(5, "moment slope in eps", abs(slope_e - te) <= 0.15, dict(slope=slope_e, target=te))])


def _sin(x):
    return np.sin(x[:, 0])


@experiment("mixing", "exponential ergodicity of the frozen process", 6,
            dict(n_paths=10_000, horizon=8.0, dt=1e-2, obs_dt=0.1, x0=3.0, y=0.0))
def _mixing(cfg):
    sys = cfg.build_system()
    _linear_only(sys)
    rep = ergodics.mixing_rate(sys, [cfg.budget("y")], _sin, cfg.budget("x0"),
                               cfg.budget("horizon"), int(cfg.budget("n_paths")), cfg.seed_for(),
                               cfg.budget("dt"), cfg.budget("obs_dt"), mu_phi=0.0, test_fn="sin",
                               workers=cfg.workers)
    q = sys.gamma / 4
    C = rep.envelope(q)
    rows = [dict(t=_f(t), signal=_f(s), noise=_f(e), envelope=_f(C * math.exp(-q * t)))
            for t, s, e in zip(rep.times, rep.signal, rep.noise)]
    return ExperimentResult("mixing", rows, [Criterion(
        6, "mixing rate", rep.rate >= q,
        dict(rate=rep.rate, guaranteed=q, prefactor=rep.prefactor, r2=rep.r2,
             window=list(rep.window)))], dict(report=rep))


# --- Poisson equation and correctors -------------------------------------------

TOY_RATE = 0.9  # conservative decay rate for b = -x, phi = sin (fitted rate ~0.95)


@experiment("poisson-oracle", "probabilistic representation of the Poisson solution", 7,
            dict(points=[0.0, 1.0, -1.0, 2.0, -2.0], n_paths=10_000, dt=1e-3, rate=TOY_RATE))
def _poisson_oracle(cfg):
    sys = cfg.build_system()
    _linear_only(sys)
    a = sys.law_fast.alpha
    xs = np.array(cfg.budget("points"), dtype=float)
    prob = poisson.PoissonProblem(poisson.GeneratorSpec.frozen(sys, [0.0]), _sin)
    est = poisson.poisson_solve(prob, xs, None, int(cfg.budget("n_paths")), cfg.budget("dt"),
                                cfg.seed_for(), cfg.budget("rate"), workers=cfg.workers)
    ref = poisson.linear_sine_solution(a, xs)
    tol = np.maximum(3 * est.stderr, 1e-2)
    err = np.abs(est.value - ref)
    rows = [dict(x=_f(x), mc=_f(v), stderr=_f(s), tail_bound=_f(tb), oracle=_f(r), tolerance=_f(t))
            for x, v, s, tb, r, t in zip(xs, est.value, est.stderr, est.tail_bound, ref, tol)]
    return ExperimentResult("poisson-oracle", rows, [Criterion(
        7, "Poisson oracle", bool(np.all(err <= tol)),
        dict(max_err=_f(err.max()), min_tol=_f(tol.min()), T_trunc=est.T_trunc))])


LADDER = {
    "coarse": dict(step=0.5, n_paths=2_500, dt=2e-3),
    "default": dict(step=0.25, n_paths=10_000, dt=1e-3),
    "fine": dict(step=0.125, n_paths=40_000, dt=1e-3),
}


@experiment("corrector-residual", "corrector solves the frozen Poisson equation", 8,
            dict(levels=["coarse", "default"], points=list(np.linspace(-3, 3, 13)), y=0.0,
                 rate=TOY_RATE, threshold=5e-2))
def _corrector_residual(cfg):
    sys = cfg.build_system()
    y = [cfg.budget("y")]
    rows, maxima = [], {}
    for lvl in cfg.budget("levels"):
        L = LADDER[lvl]
        fld = poisson.build_corrector(sys, y, [1.0], poisson.default_grid(L["step"]),
                                      cfg.budget("rate"), n_paths=L["n_paths"], dt=L["dt"],
                                      seed=cfg.seed_for(lvl), workers=cfg.workers)
        worst, table = poisson.residual_check(fld, sys, y, cfg.budget("points"))
        maxima[lvl] = worst
        rows += [dict(level=lvl, x=r["x"], Lu=_f(r["Lu"]), rhs=_f(r["rhs"]),
                      residual=_f(r["residual"]), quad_err=_f(r["quad_err"])) for r in table]
    levels = list(maxima)
    dflt = maxima.get("default", maxima[levels[-1]])
    crit = [Criterion(8, "corrector residual at default budget", dflt <= cfg.budget("threshold"),
                      dict(maxima))]
    if len(levels) > 1:
        dec = all(maxima[b] < maxima[a] for a, b in zip(levels, levels[1:]))
        crit.append(Criterion(8, "residual decreases along the refinement ladder", dec,
                              dict(levels=levels)))
    return ExperimentResult("corrector-residual", rows, crit)


TOY_CORPUS = (("toy", 0.0), ("toy-y", 0.5), ("wiggly", 0.0))


def _corpus_corrector(cfg, name, y, n_paths, y_derivatives):
    sys = cfg.build_system(name)
    mix = ergodics.mixing_rate(sys, [y], _sin, 3.0, n_paths=5000, seed=cfg.seed_for(f"mix-{name}"),
                               mu_phi=_centered_mean(sys, y), test_fn="sin", workers=cfg.workers)
    fld = poisson.build_corrector(sys, [y], [1.0], None, mix, n_paths=n_paths,
                                  seed=cfg.seed_for(f"corr-{name}"),
                                  y_derivatives=y_derivatives and sys.b_y is not None,
                                  workers=cfg.workers)
    return sys, mix, fld


def _centered_mean(sys, y):
    # stationary mean of sin: closed form for toy-y, zero by symmetry for the rest
    return float(sys.G.mean(y)) if isinstance(sys.G, CenteredSine) else 0.0


@experiment("corrector-bounds", "corrector growth bounds", 9,
            dict(n_paths=2_000, y_derivatives=True), systems=("toy",))
def _corrector_bounds(cfg):
    rows, crit = [], []
    for name, y in TOY_CORPUS:
        _, mix, fld = _corpus_corrector(cfg, name, y, int(cfg.budget("n_paths")),
                                        bool(cfg.budget("y_derivatives")) and name != "toy")
        rep = poisson.bound_check(fld)
        for q in rep.constants:
            rows.append(dict(system=name, y=y, quantity=q, C=_f(rep.constants[q]),
                             growth=_f(rep.growth[q]), ok=int(rep.checks[q]), rate=_f(mix.rate)))
        crit.append(Criterion(9, f"corrector bounds on {name}", rep.passed,
                              dict(constants=rep.constants, growth=rep.growth)))
    return ExperimentResult("corrector-bounds", rows, crit)


@experiment("centering", "slow drift G and corrector u are centred", 10,
            dict(n=100_000, n_paths=5_000), systems=("toy",))
def _centering(cfg):
    rows, crit = [], []
    for name, y in TOY_CORPUS:
        sys, _, fld = _corpus_corrector(cfg, name, y, int(cfg.budget("n_paths")), False)
        meas = ergodics.estimate_invariant(sys, [y], n=int(cfg.budget("n")),
                                           seed=cfg.seed_for(f"mu-{name}"), workers=cfg.workers)
        yy = np.full((len(meas), 1), y)
        g, g_se = ergodics.integrate_measure(meas, lambda s: sys.G(s, yy)[:, 0])
        u, u_se = poisson.centering_check(fld, meas)
        rows += [dict(system=name, y=y, quantity="G", mean=g, se=g_se),
                 dict(system=name, y=y, quantity="u", mean=u, se=u_se)]
        crit.append(Criterion(10, f"centering on {name}",
                              abs(g) <= 3 * g_se and abs(u) <= 3 * u_se,
                              dict(G=g, G_se=g_se, u=u, u_se=u_se)))
    return ExperimentResult("centering", rows, crit)


# --- averaged dynamics --------------------------------------------------------

def _capped_square(cap):
    def F(x, y):
        return np.minimum(x**2, cap)
    return F


def capped_second_moment(alpha: float, cap: float) -> float:
    """``int min(x^2, cap) rho(x) dx`` for the stationary density of ``dX = -X dt + dL``."""
    r = math.sqrt(cap)
    core, _ = integrate.quad(lambda v: v * v * ergodics.density_oracle(alpha, v), 0.0, r,
                             epsabs=1e-11, epsrel=1e-10)
    return 2.0 * core + cap * 2.0 * (1.0 - ergodics.stationary_cdf(alpha, r))


@experiment("averaged-drift", "homogenised drift integrates F against the invariant law", 11,
            dict(y_grid=[-2.0, -1.0, 0.0, 1.0, 2.0], n=20_000, cap=4.0))
def _averaged_drift(cfg):
    ys, n = cfg.budget("y_grid"), int(cfg.budget("n"))
    rows, crit = [], []
    toy = cfg.build_system()
    avg = build_averaged(toy, ys, n, cfg.seed_for("toy"), workers=cfg.workers)
    rows += [dict(system="toy", y=_f(y), F_bar=_f(v), se=_f(s), reference=0.0)
             for y, v, s in zip(avg.y_grid, avg.F_bar, avg.se)]
    crit.append(Criterion(11, "averaged drift vanishes on the toy",
                          avg.exact_zero and bool(np.all(avg.F_bar == 0.0)),
                          dict(max_abs=_f(np.abs(avg.F_bar).max()))))
    fx = cfg.build_system("toy-fx")
    avg_fx = build_averaged(fx, ys, n, cfg.seed_for("toy-fx"), workers=cfg.workers)
    rows += [dict(system="toy-fx", y=_f(y), F_bar=_f(v), se=_f(s), reference=0.0)
             for y, v, s in zip(avg_fx.y_grid, avg_fx.F_bar, avg_fx.se)]
    crit.append(Criterion(11, "F(x)=x averages to zero",
                          bool(np.all(np.abs(avg_fx.F_bar) <= 3 * avg_fx.se)),
                          dict(max_z=_f(np.max(np.abs(avg_fx.F_bar) / avg_fx.se)))))
    cap = cfg.budget("cap")
    sq = toy.replace(F=_capped_square(cap), K1=cap, name="toy-capped-square")
    ref = capped_second_moment(sq.law_fast.alpha, cap)
    avg_sq = build_averaged(sq, [0.0], n, cfg.seed_for("capped"), workers=cfg.workers)
    v, s = _f(avg_sq.F_bar[0]), _f(avg_sq.se[0])
    rows.append(dict(system="toy-capped-square", y=0.0, F_bar=v, se=s, reference=ref))
    crit.append(Criterion(11, "capped square against density quadrature", abs(v - ref) <= 3 * s,
                          dict(value=v, se=s, reference=ref)))
    return ExperimentResult("averaged-drift", rows, crit)


@experiment("weak-convergence", "slow component converges weakly to the averaged process", 12,
            dict(eps_ladder=[0.3, 0.2, 0.1], n_paths=20_000, T=1.0, y0=0.0, x0=0.0),
            systems=("toy", "null"))
def _weak_convergence(cfg):
    sys = cfg.build_system()
    avg = AveragedSystem.zero(sys.law_slow)
    rep = weak_convergence_test(sys, avg, cfg.budget("y0"), cfg.budget("T"), cfg.budget("eps_ladder"),
                                int(cfg.budget("n_paths")), cfg.seed_for(), cfg.budget("x0"),
                                workers=cfg.workers)
    rows = [dict(eps=e, ks=_f(k), ks_lo=_f(b[0]), ks_hi=_f(b[1]), wasserstein=_f(w),
                 escaped=_f(x), ks_critical=_f(rep.ks_critical), w_threshold=_f(rep.w_threshold))
            for e, k, b, w, x in zip(rep.eps_ladder, rep.ks, rep.ks_band, rep.wasserstein, rep.escaped)]
    crit = [Criterion(12, "weak convergence (KS)", rep.ks_verdict == "PASS",
                      dict(ks=rep.ks, critical=rep.ks_critical, trend_ok=rep.trend_ok)),
            Criterion(12, "weak convergence (Wasserstein)", rep.w_verdict == "PASS",
                      dict(wasserstein=rep.wasserstein, threshold=rep.w_threshold, p=rep.p))]
    return ExperimentResult("weak-convergence", rows, crit, dict(report=rep))


@experiment("martingale-residual", "martingale problem for the averaged generator", 13,
            dict(n_paths=20_000, eps=0.1, T=1.0, t0=0.5, record_dt=0.01, center=0.0, radius=1.0,
                 floor=0.05))
def _martingale(cfg):
    sys = cfg.build_system().replace(eps=cfg.budget("eps"))
    avg = AveragedSystem.zero(sys.law_slow)
    n, T, t0, rec = int(cfg.budget("n_paths")), cfg.budget("T"), cfg.budget("t0"), cfg.budget("record_dt")
    phi = bump(cfg.budget("center"), cfg.budget("radius"))
    table = GeneratorTable(avg, phi)
    lim = simulate_averaged(avg, 0.0, T, rec, cfg.seed_for("limit"), n, rec, workers=cfg.workers)
    _, Y = simulate_multiscale(sys, 0.0, 0.0, T, seed=cfg.seed_for("eps"), n_paths=n, record_dt=rec,
                               workers=cfg.workers)
    rows, crit = [], []
    for label, paths in (("averaged", lim), ("multiscale", Y)):
        res = {}
        for pname, Phi in PHI_FUNCTIONALS.items():
            r, se = martingale_residual(paths, avg, phi, t0, T, Phi, table)
            res[pname] = (r, se)
            rows.append(dict(paths=label, Phi=pname, residual=r, stderr=se))
        if label == "averaged":
            ok = all(abs(r) <= 3 * se for r, se in res.values())
            crit.append(Criterion(13, "Dynkin identity for the averaged process", ok, res))
        else:
            floor = cfg.budget("floor")
            ok = all(abs(r) <= max(3 * se, floor) for r, se in res.values())
            crit.append(Criterion(13, f"martingale residual of Y^eps at eps={sys.eps:g}", ok, res))
    return ExperimentResult("martingale-residual", rows, crit)


@experiment("custom", "user-configured simulation of the slow component", None,
            dict(n_paths=10_000, T=1.0, x0=0.0, y0=0.0, quantiles=[0.05, 0.25, 0.5, 0.75, 0.95]),
            systems=())
def _custom(cfg):
    sys = cfg.build_system()
    _, Y = simulate_multiscale(sys, cfg.budget("x0"), cfg.budget("y0"), cfg.budget("T"),
                               seed=cfg.seed_for(), n_paths=int(cfg.budget("n_paths")),
                               workers=cfg.workers)
    qs = cfg.budget("quantiles")
    vals = np.quantile(Y.final[:, 0], qs)
    rows = [dict(quantile=q, value=_f(v)) for q, v in zip(qs, vals)]
    rows.append(dict(quantile="escaped", value=Y.escaped_fraction))
    return ExperimentResult("custom", rows, [])


CRITERION_TO_EXPERIMENT = {e.criterion: e.name for e in EXPERIMENTS.values() if e.criterion}
