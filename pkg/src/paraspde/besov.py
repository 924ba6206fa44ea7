"""
Polynomial weights, the Littlewood-Paley partition and weighted Besov norms.

Partition constants
-------------------
The ball profile ``g`` equals 1 on ``[0, 3/4]``, vanishes on ``[4/3, inf)``
and is joined by the C^3 septic smoothstep.  Blocks are
``theta_{-1} = g(|k|)`` and ``theta_j = g(|k|/2^{j+1}) - g(|k|/2^j)``, so
``theta_j`` lives in the annulus ``3/4 * 2^j <= |k| <= 8/3 * 2^j`` and the
partial sums telescope to ``g(|k|/2^{J+1})``.  The top index ``j_max`` is the
smallest ``J`` with ``3/2 * 2^J >= max|k|`` on the grid, which makes the sum
exactly one at every grid frequency.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

from .grid import Grid, RealField, SpaceTimeField, fftn, ifftn_real

C1, C2 = 0.75, 8.0 / 3.0
_R0, _R1 = 0.75, 4.0 / 3.0


def smooth_step(t: np.ndarray) -> np.ndarray:
    """C^3 septic ramp from 0 (t <= 0) to 1 (t >= 1)."""
    t = np.clip(t, 0.0, 1.0)
    return t**4 * (35.0 - 84.0 * t + 70.0 * t**2 - 20.0 * t**3)


def ball_profile(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    out = 1.0 - smooth_step((r - _R0) / (_R1 - _R0))
    return np.where(r <= _R0, 1.0, np.where(r >= _R1, 0.0, out))


def dyadic_bumps(r: np.ndarray, j_max: int) -> np.ndarray:
    """Stack of the ``j_max + 2`` bumps ``theta_{-1..j_max}`` evaluated at radii ``r``."""
    out = [ball_profile(r)]
    for j in range(j_max + 1):
        out.append(ball_profile(r / 2.0 ** (j + 1)) - ball_profile(r / 2.0**j))
    return np.stack(out)


def top_index(rmax: float) -> int:
    return max(0, math.ceil(math.log2(max(rmax, 1e-300) / 1.5))) if rmax > 1.5 else 0


@dataclass(frozen=True)
class Weight:
    """``rho^power`` with ``rho(x) = (1 + |x|^2)^(-nu/2)``."""

    nu: float = 0.0
    power: float = 1.0

    def __post_init__(self) -> None:
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")

    def __mul__(self, other: "Weight") -> "Weight":
        if self.nu != other.nu and self.power and other.power:
            raise ValueError("weights with different nu cannot be combined")
        nu = self.nu if self.power else other.nu
        return Weight(nu, self.power + other.power)

    def pow(self, a: float) -> "Weight":
        return Weight(self.nu, self.power * a)

    def values(self, grid: Grid) -> np.ndarray:
        return (1.0 + grid.radius**2) ** (-0.5 * self.nu * self.power)


UNIT = Weight(0.0, 0.0)


class DyadicPartition:
    """Littlewood-Paley multipliers on a grid (immutable after construction)."""

    def __init__(self, grid: Grid):
        self.grid = grid
        self.j_max = top_index(float(grid.kabs.max()))
        self.theta = dyadic_bumps(grid.kabs, self.j_max)
        self.theta.setflags(write=False)

    @property
    def indices(self) -> range:
        return range(-1, self.j_max + 1)

    @property
    def n_blocks(self) -> int:
        return self.j_max + 2

    def blocks(self, values: np.ndarray) -> np.ndarray:
        """All blocks of one frame: shape ``(n_blocks,) + grid.shape``."""
        fh = fftn(values, self.grid)
        return ifftn_real(self.theta * fh, self.grid)

    def block(self, values: np.ndarray, j: int) -> np.ndarray:
        if not -1 <= j <= self.j_max:
            raise IndexError(f"block {j} outside [-1, {self.j_max}]")
        return ifftn_real(self.theta[j + 1] * fftn(values, self.grid), self.grid)


@lru_cache(maxsize=32)
def partition_for(grid: Grid) -> DyadicPartition:
    return DyadicPartition(grid)


def lp_block(f: RealField, j: int, p: DyadicPartition | None = None) -> RealField:
    p = p or partition_for(f.grid)
    if p.grid != f.grid:
        raise ValueError("partition built for another grid")
    return RealField(f.grid, p.block(f.values, j))


def _frames(f) -> tuple[Grid, np.ndarray]:
    if isinstance(f, SpaceTimeField):
        return f.grid, f.values
    return f.grid, f.values[None]


def block_sups(f, w: Weight = UNIT, p: DyadicPartition | None = None) -> np.ndarray:
    """``sup_t max_x |rho Delta_j f|`` for every block ``j = -1..j_max``."""
    grid, frames = _frames(f)
    p = p or partition_for(grid)
    rho = w.values(grid)
    out = np.zeros(p.n_blocks)
    for fr in frames:
        b = np.abs(p.blocks(fr) * rho).reshape(p.n_blocks, -1).max(axis=1)
        out = np.maximum(out, b)
    return out


def besov_norm(f, alpha: float, w: Weight = UNIT, p: DyadicPartition | None = None) -> float:
    """``sup_j 2^{j alpha} ||rho Delta_j f||_inf`` (sup over frames for space-time fields)."""
    grid, _ = _frames(f)
    p = p or partition_for(grid)
    sups = block_sups(f, w, p)
    return float(np.max(2.0 ** (alpha * np.arange(-1, p.j_max + 1)) * sups))


def sup_norm(f, w: Weight = UNIT) -> float:
    grid, frames = _frames(f)
    return float(np.abs(frames * w.values(grid)).max())


def holder_norm(f: RealField, alpha: float, w: Weight = UNIT) -> float:
    """
    ``||rho f||_inf + sup_h |h|^{-alpha} ||rho (f(.+h) - f)||_inf`` over
    axis-aligned lattice shifts with ``0 < |h| <= 1``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    g = f.grid
    rho = w.values(g)
    out = float(np.abs(rho * f.values).max())
    n_shift = int(np.floor(1.0 / g.spacing + 1e-12))
    best = 0.0
    for ax in range(g.dim):
        for s in range(1, min(n_shift, g.n_points // 2) + 1):
            diff = np.roll(f.values, -s, axis=ax) - f.values
            best = max(best, float(np.abs(rho * diff).max()) / (s * g.spacing) ** alpha)
    return out + best


@dataclass(frozen=True)
class SpaceTimeNorms:
    ct_besov: float
    linf: float
    time_holder: float | None

    def records(self, alpha: float, w: Weight) -> list[dict]:
        recs = [{"norm_family": "C_T C^alpha(rho)", "alpha": alpha, "weight_power": w.power,
                 "value": self.ct_besov},
                {"norm_family": "L^inf_T L^inf(rho)", "alpha": None, "weight_power": w.power,
                 "value": self.linf}]
        if self.time_holder is not None:
            recs.append({"norm_family": "C^a_T L^inf(rho)", "alpha": None,
                         "weight_power": w.power, "value": self.time_holder})
        return recs


def time_holder_seminorm(F: SpaceTimeField, a: float, w: Weight = UNIT) -> float:
    rf = F.values * w.values(F.grid)
    best = 0.0
    for p in range(1, F.n_frames):
        d = np.abs(rf[p:] - rf[:-p]).reshape(F.n_frames - p, -1).max()
        best = max(best, float(d) / (p * F.dt) ** a)
    return best


def spacetime_norms(F: SpaceTimeField, alpha: float, w: Weight = UNIT,
                    time_holder: float | None = None) -> SpaceTimeNorms:
    if F.values.size == 0:
        raise ValueError("empty field")
    th = None if time_holder is None else time_holder_seminorm(F, time_holder, w)
    return SpaceTimeNorms(besov_norm(F, alpha, w), sup_norm(F, w), th)


def interpolation_gap(psi: SpaceTimeField, alpha: float, kappa: float,
                      w2: Weight, w3: Weight) -> float:
    """
    Ratio ``||psi||_{C C^alpha(rho1)} / (||psi||_{L L(rho2)}^{1-th} ||psi||_{C C^{2-kappa}(rho3)}^th)``
    with ``th = alpha/(2-kappa)`` and ``rho1 = rho2^{1-th} rho3^th``.
    """
    top = 2.0 - kappa
    if not 0 <= alpha <= top:
        raise ValueError("alpha must lie in [0, 2 - kappa]")
    if w2.nu != w3.nu and w2.power and w3.power:
        raise ValueError("weights must share nu")
    th = alpha / top
    nu = w2.nu if w2.power else w3.nu
    w1 = Weight(nu, (1 - th) * w2.power + th * w3.power)
    lhs = besov_norm(psi, alpha, w1)
    rhs = sup_norm(psi, w2) ** (1 - th) * besov_norm(psi, top, w3) ** th
    return lhs / rhs if rhs > 0 else 0.0


@dataclass(frozen=True)
class AnalysisParams:
    """
    Exponent bundle of the a-priori analysis; the constructor enforces

    ``m`` odd and ``>= 5``, ``4 <= m1 <= m``, ``0 < alpha < 3/(10 m)``,
    ``0 < eps_exp < gamma < kappa < alpha``, ``gamma = alpha - kappa``,
    ``gamma + eps_exp < 4 alpha^2``, ``gamma1 > 4 alpha`` and
    ``gamma_dprime < gamma_prime < gamma1``.
    """

    alpha: float = 0.05
    kappa: float = 0.044
    gamma: float = 0.006
    gamma1: float = 0.25
    gamma_prime: float = 0.2
    gamma_dprime: float = 0.1
    eps_exp: float = 0.003
    sigma_w: float = 0.1
    delta: float = 0.1
    delta0: float = 0.1
    m: int = 5
    m1: int = 4
    mu: float = 1.0
    nu: float = 1.0

    def __post_init__(self) -> None:
        bad = []
        if self.m < 5 or self.m % 2 == 0:
            bad.append("m must be odd and >= 5")
        if not 4 <= self.m1 <= self.m:
            bad.append("need 4 <= m1 <= m")
        if not 0 < self.alpha < 3.0 / (10 * self.m):
            bad.append("need 0 < alpha < 3/(10 m)")
        if not 0 < self.eps_exp < self.gamma < self.kappa < self.alpha:
            bad.append("need 0 < eps_exp < gamma < kappa < alpha")
        if not math.isclose(self.gamma, self.alpha - self.kappa, rel_tol=1e-9, abs_tol=1e-12):
            bad.append("need gamma = alpha - kappa")
        if not self.gamma + self.eps_exp < 4 * self.alpha**2:
            bad.append("need gamma + eps_exp < 4 alpha^2")
        if not self.gamma1 > 4 * self.alpha:
            bad.append("need gamma1 > 4 alpha")
        if not self.gamma_dprime < self.gamma_prime < self.gamma1:
            bad.append("need gamma_dprime < gamma_prime < gamma1")
        if self.mu <= 0 or self.nu < 0 or self.sigma_w <= 0 or self.delta <= 0:
            bad.append("mu, sigma_w, delta must be positive and nu nonnegative")
        if bad:
            raise ValueError("; ".join(bad))

    def weight(self, power: float) -> Weight:
        return Weight(self.nu, power)
