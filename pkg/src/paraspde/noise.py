"""
Smooth Gaussian noise, its rescaling, the stationary linear solution Y and
its covariance.

The noise is ``eta = zeta * xi`` with ``zeta(t, x) = A a(t) b(|x|)`` a product
of bumps (``a`` on ``[0, t_support]``, ``b`` on ``[0, x_radius]``) and ``xi``
space-time white noise, so its covariance is the autocorrelation of ``zeta``
and automatically nonnegative definite.  Sampling at scale ``epsilon``
convolves white noise against the rescaled kernel directly, which has the same
law as interpolating a unit-scale sample.

The sampled model is discrete: white noise on the space-time lattice with
variance ``1/(dt h^d)``, the kernel sampled at ``t = i dt``, and ``Y`` advanced
by the exponential-Euler recursion.  ``LatticeCovariance`` is the exact
covariance of that model; ``ContinuumCovariance`` is its ``dt -> 0`` limit on
the same spatial lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
import hashlib
import json

import numpy as np
from scipy import integrate, ndimage, special
from scipy.interpolate import CubicSpline

from .chaos import hermite
from .grid import Grid, RealField, SpaceTimeField, fftn, ifftn_real


def _bump(u: np.ndarray) -> np.ndarray:
    """``exp(-1/(1-u^2))`` on ``(-1, 1)``, zero outside."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    ins = np.abs(u) < 1
    out[ins] = np.exp(-1.0 / (1.0 - u[ins] ** 2))
    return out


@lru_cache(maxsize=None)
def _bump_mass(dim: int) -> float:
    """Integral of ``bump(|x|)`` over the unit ball in ``dim`` dimensions (``dim=1`` is ``(-1, 1)``)."""
    surface = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}[dim]
    val, _ = integrate.quad(lambda r: float(_bump(r)) * r ** (dim - 1), 0.0, 1.0, epsabs=1e-14)
    return surface * val


@dataclass(frozen=True)
class NoiseSpec:
    """
    Seed kernel of the noise.

    ``exponent`` is the power ``p`` in ``eta_eps = eps^{-p} eta(t/eps^2, x/eps)``;
    ``None`` means ``(d + 2)/2`` (``5/2`` in three dimensions), the choice
    under which ``eta_eps`` tends to space-time white noise in any dimension.
    ``amplitude=None`` normalizes ``zeta`` to unit space-time mass, so that
    limit has unit intensity.
    """

    amplitude: float | None = None
    t_support: float = 0.5
    x_radius: float = 0.5
    exponent: float | None = None
    spectral: bool = False

    def __post_init__(self) -> None:
        if (self.amplitude is not None and self.amplitude <= 0) or self.t_support <= 0 or self.x_radius <= 0:
            raise ValueError("noise kernel parameters must be positive")

    def A(self, dim: int) -> float:
        if self.amplitude is not None:
            return self.amplitude
        return 1.0 / (_bump_mass(1) * 0.5 * self.t_support * _bump_mass(dim) * self.x_radius**dim)

    def p(self, dim: int) -> float:
        return (dim + 2) / 2.0 if self.exponent is None else self.exponent

    def time_profile(self, u) -> np.ndarray:
        return _bump(2.0 * np.asarray(u) / self.t_support - 1.0)

    def space_profile(self, r) -> np.ndarray:
        return _bump(np.asarray(r) / self.x_radius)

    def kernel_prefactor(self, dim: int, eps: float) -> float:
        return self.A(dim) * eps ** (-self.p(dim) - (2 + dim) / 2.0)

    def space_hat(self, grid: Grid, eps: float) -> np.ndarray:
        """
        ``h^d c_eps A F[b(|x|/eps)](k)``: spatial factor of the kernel transform.

        With ``spectral`` the grid transform is replaced by the continuum
        radial transform at the grid frequencies, so the grid may be coarser
        than the kernel (the sampled noise is then the Fourier truncation of
        the continuum one).
        """
        if self.spectral:
            kh = _radial_transform(grid.dim, self.x_radius * eps, grid.kabs)
            return self.kernel_prefactor(grid.dim, eps) * kh
        b = self.space_profile(grid.radius / eps)
        return grid.spacing**grid.dim * self.kernel_prefactor(grid.dim, eps) * fftn(b, grid).real

    def time_samples(self, eps: float, dt: float) -> np.ndarray:
        n = int(np.ceil(eps**2 * self.t_support / dt)) + 1
        return self.time_profile(dt * np.arange(n) / eps**2)

    def check(self, grid: Grid, eps: float = 1.0, tol: float = 1e-12) -> None:
        """Raise if the spatial spectral density is negative anywhere."""
        sh = self.space_hat(grid, eps) ** 2
        if sh.min() < -tol * max(sh.max(), 1.0):
            raise ValueError("noise spectral density is negative")

    def to_json(self) -> dict:
        return {"amplitude": self.amplitude, "t_support": self.t_support,
                "x_radius": self.x_radius, "exponent": self.exponent, "spectral": self.spectral}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


def _radial_transform(dim: int, radius: float, k: np.ndarray, n_nodes: int = 256) -> np.ndarray:
    """``int bump(|x|/radius) e^{-i k.x} dx`` for a radial bump, by Gauss-Legendre in ``r``."""
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    r = 0.5 * radius * (x + 1)
    w = 0.5 * radius * w * _bump(r / radius)
    kr = np.multiply.outer(k, r)
    if dim == 1:
        kern = 2 * np.cos(kr)
    elif dim == 2:
        kern = 2 * np.pi * special.j0(kr) * r
    else:
        kern = 4 * np.pi * np.sinc(kr / np.pi) * r**2
    return kern @ w


def default_dt(spec: NoiseSpec, eps: float) -> float:
    return eps**2 * spec.t_support / 8.0


@dataclass(frozen=True)
class GaussianEnsemble:
    """Master seed plus reproducible, pairwise distinct member seeds."""

    master_seed: int
    n_samples: int
    seeds: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        children = np.random.SeedSequence(self.master_seed).spawn(self.n_samples)
        seeds = tuple(int(c.generate_state(1, np.uint64)[0]) for c in children)
        if len(set(seeds)) != len(seeds):
            raise RuntimeError("derived seeds collide")
        object.__setattr__(self, "seeds", seeds)

    def manifest(self, spec: NoiseSpec | None = None) -> dict:
        return {"master_seed": self.master_seed, "n_samples": self.n_samples,
                "member_seeds": list(self.seeds),
                "spec_hash": spec.digest() if spec is not None else None}


def _white(rng: np.random.Generator, shape, grid: Grid, dt: float) -> np.ndarray:
    return rng.standard_normal(shape) / np.sqrt(dt * grid.spacing**grid.dim)


def sample_eta(spec: NoiseSpec, grid: Grid, T: float, seed: int, epsilon: float = 1.0,
               dt: float | None = None) -> SpaceTimeField:
    """
    Sample ``eta_eps`` on ``[0, T]``.

    The returned field carries in ``meta`` the kernel and white-noise history
    needed to start ``Y`` from its exact stationary law.
    """
    dt = default_dt(spec, epsilon) if dt is None else dt
    if (not spec.spectral and grid.spacing > spec.x_radius * epsilon / 2 + 1e-12) or dt > spec.t_support * epsilon**2 / 2 + 1e-15:
        raise ValueError("grid does not resolve the noise correlation scale")
    spec.check(grid, epsilon)
    n_t = int(round(T / dt))
    if n_t < 1 or abs(n_t * dt - T) > 1e-9 * max(T, 1):
        raise ValueError("T must be a positive multiple of dt")
    a = spec.time_samples(epsilon, dt)
    W = len(a)
    bh = spec.space_hat(grid, epsilon)
    zh = (dt * a)[:, None] * bh.reshape(1, -1)
    zh = zh.reshape((W,) + grid.shape)
    rng = np.random.default_rng(seed)
    xi = _white(rng, (W - 1 + n_t + 1,) + grid.shape, grid, dt)
    tail = _white(rng, grid.shape, grid, dt)
    xh = fftn(xi, grid)
    eh = np.zeros((n_t + 1,) + grid.shape, dtype=complex)
    for i in range(W):
        # eta_n uses xi_{n-i}; xi index n lives at array slot n + W - 1
        eh += zh[i] * xh[W - 1 - i: W - 1 - i + n_t + 1]
    meta = {"kernel_hat": zh, "xi_hat_past": xh[:W - 1][::-1], "tail_hat": fftn(tail, grid),
            "epsilon": epsilon, "spec": spec, "seed": seed}
    return SpaceTimeField(grid, dt, ifftn_real(eh, grid), meta)


def _ou_coeffs(grid: Grid, dt: float, mu: float):
    lam = grid.k2 + mu
    a = np.exp(-dt * lam)
    return lam, a, -np.expm1(-dt * lam) / lam


def _g_sequence(zh: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``g_m`` for ``m = 1..W`` with ``Y_n = sum_m g_m xi_{n-m}``."""
    W = zh.shape[0]
    g = np.empty_like(zh)
    g[0] = b * zh[0]
    for m in range(1, W):
        g[m] = a * g[m - 1] + b * zh[m]
    return g


def stationary_Y(eta_eps: SpaceTimeField, mu: float,
                 white_density: np.ndarray | None = None, seed: int | None = None) -> SpaceTimeField:
    """
    Stationary solution of ``L Y = eta`` by the exact per-mode recursion
    ``Y[n+1] = e^{-dt lam} Y[n] + (1 - e^{-dt lam})/lam eta[n]``.

    For noise from :func:`sample_eta` the initial frame is drawn from the
    exact joint stationary law given the recorded noise history.  For other
    inputs, ``white_density`` (``E|eta_hat_n(k)|^2`` of a white-in-time input)
    sets a stationary Gaussian initial draw; otherwise ``Y(0) = 0``.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    grid, dt = eta_eps.grid, eta_eps.dt
    lam, a, b = _ou_coeffs(grid, dt, mu)
    eh = fftn(eta_eps.values, grid)
    y0 = np.zeros(grid.shape, dtype=complex)
    meta = eta_eps.meta
    if "kernel_hat" in meta:
        zh = meta["kernel_hat"]
        g = _g_sequence(zh, a, b)
        W = zh.shape[0]
        past = meta["xi_hat_past"]                     # xi_{-1}, xi_{-2}, ...
        for m in range(1, W):
            y0 += g[m - 1] * past[m - 1]
        gW = g[W - 1]
        y0 += gW / np.sqrt(1.0 - a**2) * meta["tail_hat"]
    elif white_density is not None:
        rng = np.random.default_rng(seed)
        w = fftn(rng.standard_normal(grid.shape), grid) / np.sqrt(grid.size)
        y0 = w * b * np.sqrt(np.asarray(white_density) / (1.0 - a**2))
    out = np.empty_like(eh)
    out[0] = y0
    for n in range(eta_eps.n_frames - 1):
        out[n + 1] = a * out[n] + b * eh[n]
    return SpaceTimeField(grid, dt, ifftn_real(out, grid), {"mu": mu})


def rescale_eta(eta: SpaceTimeField, epsilon: float, grid: Grid | None = None,
                dt: float | None = None, T: float | None = None,
                exponent: float | None = None) -> SpaceTimeField:
    """
    ``eta_eps(t, x) = eps^{-p} eta(t/eps^2, x/eps)`` sampled on a target
    lattice (default: the source lattice scaled by ``eps``) with separable
    cubic interpolation.
    """
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    src = eta.grid
    p = (src.dim + 2) / 2.0 if exponent is None else exponent
    grid = grid or Grid(src.dim, src.n_points, src.box_length * epsilon)
    dt = dt if dt is not None else eta.dt * epsilon**2
    T = T if T is not None else eta.T * epsilon**2
    n_t = int(round(T / dt))
    ts = dt * np.arange(n_t + 1) / epsilon**2
    if ts[-1] > eta.T * (1 + 1e-12):
        raise ValueError("rescaled window exceeds the source extent")
    spline = CubicSpline(eta.times, eta.values, axis=0)
    frames = spline(ts)
    xs = grid.x1 / epsilon / src.spacing            # fractional source indices
    exact = np.allclose(xs, np.round(xs)) and grid.n_points * grid.spacing / epsilon == src.box_length
    out = np.empty((n_t + 1,) + grid.shape)
    if exact:
        idx = np.mod(np.round(xs).astype(int), src.n_points)
        sel = np.ix_(*([idx] * src.dim))
        for n in range(n_t + 1):
            out[n] = frames[n][sel]
    else:
        coords = np.meshgrid(*([np.mod(xs, src.n_points)] * src.dim), indexing="ij")
        for n in range(n_t + 1):
            out[n] = ndimage.map_coordinates(frames[n], coords, order=3, mode="grid-wrap")
    return SpaceTimeField(grid, dt, epsilon ** (-p) * out)


class LatticeCovariance:
    """Exact covariance ``E[Y(p dt, x) Y(0, 0)]`` of the sampled model."""

    def __init__(self, spec: NoiseSpec, grid: Grid, epsilon: float, mu: float, dt: float | None = None):
        if mu <= 0:
            raise ValueError("mu must be positive")
        self.spec, self.grid, self.epsilon, self.mu = spec, grid, epsilon, mu
        self.dt = default_dt(spec, epsilon) if dt is None else dt
        lam, self.a, b = _ou_coeffs(grid, self.dt, mu)
        at = spec.time_samples(epsilon, self.dt)
        zh = (self.dt * at)[:, None, ...] * spec.space_hat(grid, epsilon).reshape(1, -1)
        zh = zh.reshape((len(at),) + grid.shape)
        self.g = _g_sequence(zh, self.a, b)
        self.W = len(at)
        self.norm = 1.0 / (self.dt * grid.spacing**grid.dim)

    def hat(self, p: int) -> np.ndarray:
        """``sum_m g_{m+p} g_m`` per mode."""
        p = abs(int(p))
        W, g, a = self.W, self.g, self.a
        gW = g[W - 1]

        def gm(m):  # m >= 1
            return g[m - 1] if m <= W else a ** (m - W) * gW

        out = np.zeros(self.grid.shape)
        for m in range(1, W):
            out += gm(m + p) * g[m - 1]
        return out + a**p * gW**2 / (1.0 - a**2)

    def values(self, s: float) -> np.ndarray:
        p = s / self.dt
        if abs(p - round(p)) > 1e-6:
            raise ValueError("lattice covariance is defined at multiples of dt only")
        return ifftn_real(self.hat(round(p)), self.grid) * self.norm

    def __call__(self, s: float) -> np.ndarray:
        return self.values(s)


class ContinuumCovariance:
    """
    ``dt -> 0`` limit of the lattice covariance.  Per mode the correlation is
    tabulated on ``[0, tau]`` (``tau`` the kernel's time support) and continued
    exactly by ``exp(-lam (s - tau))`` beyond.
    """

    def __init__(self, spec: NoiseSpec, grid: Grid, epsilon: float, mu: float, n_fine: int = 256):
        if mu <= 0:
            raise ValueError("mu must be positive")
        self.spec, self.grid, self.epsilon, self.mu = spec, grid, epsilon, mu
        lam_full = grid.k2 + mu
        lam_u, self.inv = np.unique(np.round(lam_full, 10), return_inverse=True)
        self.inv = self.inv.reshape(grid.shape)
        self.lam = lam_u
        tau = epsilon**2 * spec.t_support
        self.tau = tau
        d = tau / n_fine
        self.step = d
        m = d * np.arange(n_fine + 1)
        a_t = spec.time_profile(m / epsilon**2)
        L = lam_u[:, None]
        e = np.exp(-L * d)
        gam = np.zeros((len(lam_u), n_fine + 1))
        for i in range(n_fine):
            gam[:, i + 1] = e[:, 0] * gam[:, i] + 0.5 * d * (e[:, 0] * a_t[i] + a_t[i + 1])
        gt = gam[:, -1]
        I = np.zeros((len(lam_u), n_fine + 1))
        wts = np.full(n_fine + 1, d)
        for j in range(n_fine + 1):
            k = n_fine - j                             # points with m + s <= tau
            w1 = wts[: k + 1].copy()
            w1[0] *= 0.5
            w1[-1] *= 0.5
            part1 = (gam[:, j: j + k + 1] * gam[:, : k + 1] * w1).sum(axis=1) if k > 0 else 0.0
            mm = m[k:]
            w2 = wts[: j + 1].copy()
            w2[0] *= 0.5
            w2[-1] *= 0.5
            part2 = (np.exp(-L * (mm + j * d - tau)) * gt[:, None] * gam[:, k:] * w2).sum(axis=1) if j > 0 else 0.0
            part3 = np.exp(-lam_u * j * d) * gt**2 / (2 * lam_u)
            I[:, j] = part1 + part2 + part3
        self.table = I
        self.norm = (spec.space_hat(grid, epsilon) ** 2) * grid.size / grid.spacing**grid.dim

    def hat(self, s: float) -> np.ndarray:
        s = abs(float(s))
        if s >= self.tau:
            vals = np.exp(-self.lam * (s - self.tau)) * self.table[:, -1]
        else:
            x = s / self.step
            i = min(int(x), self.table.shape[1] - 2)
            f = x - i
            vals = (1 - f) * self.table[:, i] + f * self.table[:, i + 1]
        return vals[self.inv] * self.norm

    def values(self, s: float) -> np.ndarray:
        return ifftn_real(self.hat(s), self.grid) / self.grid.size

    def __call__(self, s: float) -> np.ndarray:
        return self.values(s)


def cov_Y(spec: NoiseSpec, epsilon: float, mu: float, s: float, x, grid: Grid,
          dt: float | None = None) -> float:
    """
    ``C_eps(s, x) = E[Y_eps(s, x) Y_eps(0, 0)]`` at a lattice point ``x``
    (integer index tuple).  ``dt`` selects the exact lattice model, otherwise
    the time-continuum limit.
    """
    prof = LatticeCovariance(spec, grid, epsilon, mu, dt) if dt else ContinuumCovariance(spec, grid, epsilon, mu)
    return float(prof.values(s)[tuple(np.atleast_1d(x))])


@dataclass(frozen=True)
class SigmaReport:
    mc: float
    se: float
    quadrature: float

    @property
    def z(self) -> float:
        return abs(self.mc - self.quadrature) / self.se if self.se > 0 else np.inf


def sigma_eps(Y_samples: list[SpaceTimeField], epsilon: float, profile) -> SigmaReport:
    """
    ``sigma_eps^2 = eps E[Y_eps(0,0)^2]`` by Monte Carlo (each member averaged
    over all sites and frames, which stationarity allows) and by quadrature
    ``eps C(0, 0)`` from ``profile``.
    """
    if len(Y_samples) < 2:
        raise ValueError("need at least two ensemble members")
    per = np.array([epsilon * np.mean(Y.values**2) for Y in Y_samples])
    mc, se = float(per.mean()), float(per.std(ddof=1) / np.sqrt(len(per)))
    quad = float(epsilon * profile.values(0.0).flat[0])
    rep = SigmaReport(mc, se, quad)
    if rep.z > 5:
        raise RuntimeError(f"Monte Carlo and quadrature disagree ({rep.z:.1f} SE)")
    return rep


def wick_power(Y_frame: RealField, n: int, sigma_sq: float) -> RealField:
    """``H_n(Y, sigma^2)`` pointwise."""
    if n > 9:
        raise ValueError("Wick powers are provided up to order 9")
    return RealField(Y_frame.grid, hermite(n, Y_frame.values, sigma_sq))
