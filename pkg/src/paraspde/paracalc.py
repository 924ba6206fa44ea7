"""
Bony paraproducts, resonant products, commutators, the time-mollified
paraproduct and the space-time localization operators V_> and V_<=.

All products act frame by frame on space-time fields.  Block sums run in a
fixed sequential order so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import integrate

from .besov import DyadicPartition, dyadic_bumps, partition_for, top_index
from .grid import Grid, RealField, SpaceTimeField, fftn, ifftn_real, like, values_of


def _grid_of(*fs) -> Grid:
    grids = {f.grid for f in fs}
    if len(grids) != 1:
        raise ValueError("fields live on different grids")
    return grids.pop()


def lt_frame(bf: np.ndarray, bg: np.ndarray) -> np.ndarray:
    """``f < g`` from block stacks ``bf``, ``bg`` (index 0 is block -1)."""
    partial = np.cumsum(bf, axis=0)
    out = np.zeros(bf.shape[1:])
    for a in range(2, bf.shape[0]):  # block j = a - 1 >= 1 pairs with S_{j-1} f
        out += partial[a - 2] * bg[a]
    return out


def res_frame(bf: np.ndarray, bg: np.ndarray) -> np.ndarray:
    nb = bf.shape[0]
    out = np.zeros(bf.shape[1:])
    for a in range(nb):
        for b in range(max(0, a - 1), min(nb, a + 2)):
            out += bf[a] * bg[b]
    return out


class Paracalc:
    """Frame-level products on one grid; caches nothing mutable."""

    def __init__(self, grid: Grid, p: DyadicPartition | None = None):
        self.grid = grid
        self.p = p or partition_for(grid)

    def blocks(self, a: np.ndarray) -> np.ndarray:
        return self.p.blocks(a)

    def lt(self, f, g):
        return lt_frame(self._b(f), self._b(g))

    def gt(self, f, g):
        return lt_frame(self._b(g), self._b(f))

    def res(self, f, g):
        return res_frame(self._b(f), self._b(g))

    def le(self, f, g):
        bf, bg = self._b(f), self._b(g)
        return lt_frame(bf, bg) + res_frame(bf, bg)

    def ge(self, f, g):
        bf, bg = self._b(f), self._b(g)
        return lt_frame(bg, bf) + res_frame(bf, bg)

    def com(self, f, g, h):
        bh = self._b(h)
        return res_frame(self._b(self.lt(f, g)), bh) - values_of(f) * res_frame(self._b(g), bh)

    def _b(self, a):
        a = np.asarray(a)
        if a.ndim == self.grid.dim + 1 and a.shape[0] == self.p.n_blocks and a.shape[1:] == self.grid.shape:
            return a
        return self.blocks(np.broadcast_to(a, self.grid.shape))


def _bilinear(op: str, f, g):
    grid = _grid_of(f, g)
    pc = Paracalc(grid)
    fn = getattr(pc, op)
    fv, gv = values_of(f), values_of(g)
    if isinstance(f, SpaceTimeField) or isinstance(g, SpaceTimeField):
        n = (f if isinstance(f, SpaceTimeField) else g).n_frames
        fv = np.broadcast_to(fv, (n,) + grid.shape)
        gv = np.broadcast_to(gv, (n,) + grid.shape)
        out = np.stack([fn(fv[i], gv[i]) for i in range(n)])
        dt = (f if isinstance(f, SpaceTimeField) else g).dt
        return SpaceTimeField(grid, dt, out)
    return RealField(grid, fn(fv, gv))


def para_lt(f, g):
    """``f < g = sum_j sum_{i<j-1} Delta_i f Delta_j g``."""
    return _bilinear("lt", f, g)


def para_gt(f, g):
    """``f > g = g < f``."""
    return _bilinear("gt", f, g)


def resonant(f, g):
    """``f o g = sum_{|i-j|<=1} Delta_i f Delta_j g``."""
    return _bilinear("res", f, g)


def para_le(f, g):
    """``f <= g = f < g + f o g``."""
    return _bilinear("le", f, g)


def para_ge(f, g):
    return _bilinear("ge", f, g)


def commutator(f, g, h):
    """``com(f, g, h) = (f < g) o h - f (g o h)``."""
    grid = _grid_of(f, g, h)
    pc = Paracalc(grid)
    if isinstance(f, SpaceTimeField):
        out = np.stack([pc.com(f.values[i], g.values[i], h.values[i]) for i in range(f.n_frames)])
        return SpaceTimeField(grid, f.dt, out)
    return RealField(grid, pc.com(f.values, g.values, h.values))


# ---------------------------------------------------------------------------
# time mollifier and the modified paraproduct


def _q_raw(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@dataclass(frozen=True)
class Mollifier:
    """Unit-mass bump ``Q(s) = c exp(-1/(1-s^2))`` on ``(-1, 1)``."""

    n_table: int = 4001

    @property
    def norm(self) -> float:
        return _q_norm()

    def profile(self, s) -> np.ndarray:
        return _q_raw(s) / self.norm

    def cdf(self, s) -> np.ndarray:
        grid, table = _q_table(self.n_table)
        return np.interp(s, grid, table, left=0.0, right=1.0)

    def weights(self, scale: float, times: np.ndarray, n: int, upto: int | None = None) -> tuple[np.ndarray, bool]:
        """
        Quadrature weights over frames for ``int scale Q(scale (t_n - s)) f(clamp(s)) ds``.

        Values for ``s < 0`` are clamped to frame 0 and values beyond the last
        available frame ``upto`` (default: the final frame) are clamped to it.
        Returns the weights and a flag marking nearest-frame degeneration.
        """
        last = len(times) - 1 if upto is None else upto
        dt = times[1] - times[0]
        w = np.zeros(len(times))
        if 1.0 / scale < dt:
            w[n] = 1.0
            return w, True
        t = times[n]
        lo_mass = 1.0 - self.cdf(scale * t)               # s < 0
        hi_mass = self.cdf(scale * (t - times[last]))      # s > t_last
        mid = max(0.0, 1.0 - lo_mass - hi_mass)
        ker = scale * self.profile(scale * (t - times[: last + 1])) * dt
        ker[0] *= 0.5
        ker[last] *= 0.5
        tot = ker.sum()
        if tot > 0:
            w[: last + 1] = ker * (mid / tot)
        else:
            lo_mass, hi_mass = lo_mass + 0.5 * mid, hi_mass + 0.5 * mid
        w[0] += lo_mass
        w[last] += hi_mass
        return w / w.sum(), False


@lru_cache(maxsize=1)
def _q_norm() -> float:
    val, _ = integrate.quad(lambda s: float(_q_raw(s)), -1.0, 1.0, epsabs=1e-14, epsrel=1e-13)
    return val


@lru_cache(maxsize=4)
def _q_table(n: int):
    s = np.linspace(-1.0, 1.0, n)
    cum = integrate.cumulative_simpson(_q_raw(s), x=s, initial=0.0)
    return s, cum / cum[-1]


def modified_para(f: SpaceTimeField, g: SpaceTimeField, Q: Mollifier | None = None,
                  causal: bool = False) -> SpaceTimeField:
    """
    ``f << g = sum_i (S_{i-1} Q_i f) Delta_i g`` with ``Q_i`` the time
    mollifier at scale ``2^{2i}``.  With ``causal=True`` frame ``n`` only uses
    frames up to ``n`` (values beyond are clamped to frame ``n``).
    The output ``meta["degenerate_blocks"]`` lists blocks sampled at the
    nearest frame because ``2^{-2i} < dt``.
    """
    grid = _grid_of(f, g)
    if f.n_frames != g.n_frames or not math.isclose(f.dt, g.dt):
        raise ValueError("fields must share the time grid")
    Q = Q or Mollifier()
    p = partition_for(grid)
    times = f.times
    nt = f.n_frames
    fh = fftn(f.values, grid)
    gh = fftn(g.values, grid)
    low = np.cumsum(p.theta, axis=0)
    out = np.zeros_like(f.values)
    degenerate = []
    for a in range(2, p.n_blocks):
        i = a - 1
        s_low = ifftn_real(fh * low[a - 2], grid)          # S_{i-1} f for all frames
        dg = ifftn_real(gh * p.theta[a], grid)
        scale = 2.0 ** (2 * i)
        W = np.zeros((nt, nt))
        flag = False
        for n in range(nt):
            W[n], flag = Q.weights(scale, times, n, n if causal else None)
        if flag:
            degenerate.append(i)
        out += np.tensordot(W, s_low, axes=(1, 0)) * dg
    return SpaceTimeField(grid, f.dt, out, {"degenerate_blocks": degenerate})


def modified_para_frame(history: np.ndarray, g_frame: np.ndarray, dt: float, grid: Grid,
                        Q: Mollifier | None = None) -> np.ndarray:
    """Causal ``(f << g)(t_n)`` for ``history = f[0..n]`` (frame n last)."""
    Q = Q or Mollifier()
    p = partition_for(grid)
    n = history.shape[0] - 1
    times = dt * np.arange(n + 1)
    if n == 0:
        times = np.array([0.0, dt])
    fh = fftn(history, grid)
    gh = fftn(g_frame, grid)
    low = np.cumsum(p.theta, axis=0)
    out = np.zeros(grid.shape)
    for a in range(2, p.n_blocks):
        scale = 2.0 ** (2 * (a - 1))
        w, _ = Q.weights(scale, times, n, n)
        mixed = np.tensordot(w[: n + 1], fh, axes=(0, 0))
        out += ifftn_real(mixed * low[a - 2], grid) * ifftn_real(gh * p.theta[a], grid)
    return out


# ---------------------------------------------------------------------------
# localization


class LocalizationSchedule:
    """
    Space shells ``w_k(x)`` and time shells ``v_l(t)`` (dyadic in ``|x|`` and
    ``t``) with cutoffs ``L_{k,l} = L + ceil((k + l)/2)``.
    """

    def __init__(self, grid: Grid, T: float, L: int):
        if L < 0:
            raise ValueError("L must be nonnegative")
        self.grid, self.T, self.L = grid, T, L
        self.k_max = top_index(float(grid.radius.max()))
        self.l_max = top_index(T)
        self.w = dyadic_bumps(grid.radius, self.k_max)

    def v(self, t: float) -> np.ndarray:
        return dyadic_bumps(np.asarray(t, dtype=float), self.l_max)

    def level(self, k: int, l: int) -> int:
        return self.L + math.ceil((k + l) / 2)

    def apply_frame(self, a: np.ndarray, t: float, high: bool) -> np.ndarray:
        p = partition_for(self.grid)
        b = p.blocks(a)
        cum = np.cumsum(b, axis=0)                  # Delta_{<=J} at index J+1
        tail = np.cumsum(b[::-1], axis=0)[::-1]     # Delta_{>=J} at index J+1
        out = np.zeros(self.grid.shape)
        for li, vl in enumerate(self.v(t)):
            if vl == 0:
                continue
            acc = np.zeros(self.grid.shape)
            for ki in range(self.w.shape[0]):
                J = self.level(ki - 1, li - 1)
                if high:
                    part = tail[max(J + 2, 0)] if J + 2 < p.n_blocks else 0.0
                else:
                    part = cum[min(J, p.j_max) + 1] if J >= -1 else 0.0
                acc += self.w[ki] * part
            out += vl * acc
        return out

    def apply(self, f: SpaceTimeField, high: bool) -> SpaceTimeField:
        out = np.stack([self.apply_frame(f.values[n], t, high) for n, t in enumerate(f.times)])
        return SpaceTimeField(f.grid, f.dt, out)


def localize_gt(f: SpaceTimeField, sched: LocalizationSchedule) -> SpaceTimeField:
    """``V_> f = sum_{k,l} v_l w_k Delta_{>L_{k,l}} f``."""
    return sched.apply(f, True)


def localize_le(f: SpaceTimeField, sched: LocalizationSchedule) -> SpaceTimeField:
    """``V_<= f = sum_{k,l} v_l w_k Delta_{<=L_{k,l}} f``."""
    return sched.apply(f, False)
