"""
Enhanced noise: the nine tree components built from the stationary field
``Y``, the limit enhancement built from a reference field ``X``, measured
block-decay regularity and ensemble decay statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import stats

from .besov import UNIT, Weight, besov_norm, block_sups, partition_for
from .chaos import (ChaosExpansion, LambdaVector, NonlinearitySpec, RenormConstants, TildeF,
                    chaos_coeffs, hermite)
from .grid import SpaceTimeField, duhamel_solve
from .paracalc import resonant

NAMES = ("Y0", "Y1", "Y2", "Y2bar", "I3", "Y31", "Y22", "Y22bar", "Y32")


@dataclass(frozen=True)
class HomogeneityTable:
    kappa: float = 0.3

    def __post_init__(self) -> None:
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")

    @property
    def values(self) -> tuple[float, ...]:
        k = self.kappa
        return (-k, -0.5 - k, -1 - k, -1 - k, 0.5 - k, -k, -k, -k, -0.5 - k)

    def __getitem__(self, name: str) -> float:
        return self.values[NAMES.index(name)]

    def as_dict(self) -> dict:
        return dict(zip(NAMES, self.values))


@dataclass(frozen=True, eq=False)
class Enhancement:
    """Nine components in table order plus the auxiliary integrated trees."""

    Y0: SpaceTimeField
    Y1: SpaceTimeField
    Y2: SpaceTimeField
    Y2bar: SpaceTimeField
    I3: SpaceTimeField
    Y31: SpaceTimeField
    Y22: SpaceTimeField
    Y22bar: SpaceTimeField
    Y32: SpaceTimeField
    I2: SpaceTimeField | None = None
    I2bar: SpaceTimeField | None = None
    meta: dict = field(default_factory=dict)

    @property
    def components(self) -> tuple[SpaceTimeField, ...]:
        return tuple(getattr(self, n) for n in NAMES)

    def items(self):
        return zip(NAMES, self.components)


def _st(like: SpaceTimeField, values) -> SpaceTimeField:
    values = np.broadcast_to(np.asarray(values, dtype=float), like.values.shape).copy()
    return SpaceTimeField(like.grid, like.dt, values)


def _minus(f: SpaceTimeField, c) -> SpaceTimeField:
    return SpaceTimeField(f.grid, f.dt, f.values - c)


def build_enhancement(Y: SpaceTimeField, F, rc: RenormConstants | None, epsilon: float, mu: float,
                      chaos: ChaosExpansion | None = None) -> Enhancement:
    """
    Trees of a stationary ``Y`` at scale ``epsilon``.

    With ``Z = eps^{1/2} Y``: ``Y0 = F~'''(Z)/6``, ``Y1 = eps^{-1/2} F~''(Z)/6``,
    ``Y2 = eps^{-1} F~'(Z)/3``, ``Y2bar = eps^{-1/2} f2 [[Y^2]]``; ``I3``,
    ``I2``, ``I2bar`` solve ``L I = source`` from zero with sources
    ``eps^{-3/2} F~(Z)``, ``Y2`` and ``Y2bar``; the resonances are centered by
    the constants in ``rc``.
    """
    if rc is None:
        raise ValueError("renormalization constants are required")
    if not rc.sigma_sq > 0:
        raise ValueError("renormalization constants carry no variance")
    chaos = chaos or chaos_coeffs(F, rc.sigma_sq)
    if not math.isclose(chaos.sigma_sq, rc.sigma_sq, rel_tol=1e-9):
        raise ValueError("chaos and constants were computed at different variances")
    tf = TildeF(F, chaos)
    s2 = chaos.sigma_sq
    Z = math.sqrt(epsilon) * Y.values
    y0 = tf(Z, 3) / 6.0
    y0_direct = tf.direct.deriv(3)(Z) / 6.0
    gap = float(np.max(np.abs(y0 - y0_direct))) if y0.size else 0.0
    if gap > 1e-10 * max(1.0, float(np.max(np.abs(y0)))):
        raise ArithmeticError("Y0 differs between the two evaluation paths")
    Y0 = _st(Y, y0)
    Y1 = _st(Y, tf(Z, 2) / (6.0 * math.sqrt(epsilon)))
    Y2 = _st(Y, tf(Z, 1) / (3.0 * epsilon))
    Y2bar = _st(Y, chaos.coef(2) / math.sqrt(epsilon) * hermite(2, Z, s2) / epsilon)
    Y3 = _st(Y, tf(Z, 0) / epsilon**1.5)
    I3 = duhamel_solve(Y3, mu)
    I2 = duhamel_solve(Y2, mu)
    I2bar = duhamel_solve(Y2bar, mu)
    Y31 = _minus(resonant(I3, Y1), rc.d31)
    Y22 = _minus(resonant(I2, Y2), rc.d22)
    Y22bar = _minus(resonant(I2bar, Y2), rc.d22_bar)
    Y32 = SpaceTimeField(Y.grid, Y.dt, resonant(I3, Y2).values - rc.d32_prime * Y.values - rc.d32)
    return Enhancement(Y0, Y1, Y2, Y2bar, I3, Y31, Y22, Y22bar, Y32, I2, I2bar,
                       {"epsilon": epsilon, "mu": mu, "sigma_sq": s2, "y0_path_gap": gap})


@dataclass(frozen=True, eq=False)
class ReferenceTrees:
    """Unit-coupling trees of a reference Gaussian field ``X``."""

    X: SpaceTimeField
    X2: SpaceTimeField      # [[X^2]]
    I3: SpaceTimeField      # L I3 = [[X^3]], zero start
    I2: SpaceTimeField      # L I2 = [[X^2]], zero start
    X31: SpaceTimeField
    X22: SpaceTimeField
    X32: SpaceTimeField
    b: np.ndarray           # b(t_n) per frame


def reference_trees(X: SpaceTimeField, variance: float, mu: float, b: np.ndarray) -> ReferenceTrees:
    """
    ``X31 = I3 o X``, ``X22 = I2 o [[X^2]] - b/3`` and
    ``X32 = I3 o [[X^2]] - b X`` with ``b`` given per frame.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (X.n_frames,):
        raise ValueError("b must have one value per frame")
    bb = b.reshape((-1,) + (1,) * X.grid.dim)
    X2 = _st(X, hermite(2, X.values, variance))
    X3 = _st(X, hermite(3, X.values, variance))
    I3 = duhamel_solve(X3, mu)
    I2 = duhamel_solve(X2, mu)
    X31 = resonant(I3, X)
    X22 = _minus(resonant(I2, X2), bb / 3.0)
    X32 = SpaceTimeField(X.grid, X.dt, resonant(I3, X2).values - bb * X.values)
    return ReferenceTrees(X, X2, I3, I2, X31, X22, X32, b)


def limit_enhancement(lam: LambdaVector, X: ReferenceTrees) -> Enhancement:
    """
    ``(l3, l3 X, l3 [[X^2]], l2 [[X^2]], l3 I3, l3^2 X31, l3^2 X22, l3 l2 X22, l3^2 X32)``.
    """
    l2, l3 = lam.lambda2, lam.lambda3
    if not l3 > 0:
        raise ValueError("lambda3 must be positive")

    def sc(c, f):
        return SpaceTimeField(f.grid, f.dt, c * f.values)

    return Enhancement(_st(X.X, l3), sc(l3, X.X), sc(l3, X.X2), sc(l2, X.X2), sc(l3, X.I3),
                       sc(l3**2, X.X31), sc(l3**2, X.X22), sc(l3 * l2, X.X22), sc(l3**2, X.X32),
                       meta={"lambda": lam.as_tuple()})


def b_eps_mc(samples: list[ReferenceTrees], frames) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble estimate of ``3 E[(I2 o [[X^2]])(t_n, 0)]`` with standard errors."""
    vals = []
    for r in samples:
        res = resonant(r.I2, r.X2).values
        vals.append([3.0 * res[(n,) + (0,) * r.X.grid.dim] for n in frames])
    vals = np.array(vals)
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / math.sqrt(len(vals))


# ---------------------------------------------------------------------------
# regularity and decay statistics


@dataclass(frozen=True)
class RegularityFit:
    exponent: float
    ci: tuple[float, float]
    j: tuple[int, ...]
    log_norms: tuple[float, ...]


def measure_regularity(f, w: Weight = UNIT, j_range=None, level: float = 0.95) -> RegularityFit:
    """
    Least-squares slope of ``-log2 sup_t ||rho Delta_j f||_inf`` against ``j``.

    The default range drops block ``-1`` and the two blocks truncated by the
    grid corner.
    """
    grid = f.grid
    p = partition_for(grid)
    sups = block_sups(f, w, p)
    if j_range is None:
        j_range = range(0, p.j_max - 1)
    js = np.array([j for j in j_range if -1 <= j <= p.j_max])
    if len(js) < 4:
        raise ValueError("need at least four blocks for a regularity fit")
    vals = sups[js + 1]
    floor = 1e-13 * max(float(sups.max()), 1e-300)
    if np.any(vals <= floor) or not np.all(np.isfinite(vals)):
        raise ValueError("blocks below the noise floor; regularity fit is degenerate")
    y = -np.log2(vals)
    fit = stats.linregress(js, y)
    half = stats.t.ppf(0.5 + level / 2, len(js) - 2) * fit.stderr
    return RegularityFit(float(fit.slope), (float(fit.slope - half), float(fit.slope + half)),
                         tuple(int(j) for j in js), tuple(float(v) for v in y))


@dataclass
class DecayReport:
    epsilons: list
    stats: dict                 # name -> {"mean": [...], "median": [...], "q10": [...], "q90": [...]}
    slopes: dict                # name -> fitted slope of log mean vs log eps (None if exact)
    kappa: float
    exact: dict = field(default_factory=dict)

    def passed(self, name: str, margin: float = 0.15) -> bool:
        if self.exact.get(name):
            return True
        s = self.slopes.get(name)
        return s is not None and s >= self.kappa - margin


def decay_norm(f: SpaceTimeField, alpha: float, w: Weight = UNIT, stride: int = 1) -> float:
    """``sup_t ||f(t)||_{C^alpha(rho)}`` over every ``stride``-th frame."""
    sub = SpaceTimeField(f.grid, f.dt * stride, f.values[::stride]) if f.n_frames > stride else f
    return besov_norm(sub, alpha, w)


def decay_stats(members: list[dict], kappa: float = 0.3, eps_small: float = 0.05,
                    w: Weight = UNIT, stride: int = 1) -> DecayReport:
    """
    Decay of ``Y0 - lambda3`` and ``Z^2 - E[Z^2]`` (``Z = eps^{1/2} Y``) in
    ``C_T C^{-kappa-eps_small}(rho)`` across an epsilon grid.

    Each member is ``{"epsilon": e, "Y0": [fields], "Z2": [fields], "lambda3": l3}``
    with one field per ensemble sample.  Slopes are fitted to the ensemble
    means on a log-log scale.
    """
    if len(members) < 2:
        raise ValueError("need at least two epsilon values")
    alpha = -kappa - eps_small
    members = sorted(members, key=lambda m: -m["epsilon"])
    names = ("Y0", "Z2")
    out = {n: {"mean": [], "median": [], "q10": [], "q90": [], "se": []} for n in names}
    exact = {}
    for mem in members:
        for n in names:
            shift = mem["lambda3"] if n == "Y0" else 0.0
            norms = np.array([decay_norm(_minus(f, shift), alpha, w, stride) for f in mem[n]])
            rec = out[n]
            rec["mean"].append(float(norms.mean()))
            rec["median"].append(float(np.median(norms)))
            rec["q10"].append(float(np.quantile(norms, 0.1)))
            rec["q90"].append(float(np.quantile(norms, 0.9)))
            rec["se"].append(float(norms.std(ddof=1) / math.sqrt(len(norms))) if len(norms) > 1 else 0.0)
    eps = np.array([m["epsilon"] for m in members])
    slopes = {}
    for n in names:
        means = np.array(out[n]["mean"])
        if np.all(means <= 1e-13):
            exact[n] = True
            slopes[n] = None
            continue
        slopes[n] = float(stats.linregress(np.log(eps), np.log(np.maximum(means, 1e-300))).slope)
    return DecayReport(eps.tolist(), out, slopes, kappa, exact)
