"""
Time stepping for the smooth-noise equation and the rescaled model, plus the
convergence sweep in epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import stats

from .besov import Weight, besov_norm
from .chaos import NonlinearitySpec
from .grid import Grid, Propagator, RealField, SpaceTimeField, fftn, ifftn_real
from .noise import NoiseSpec, default_dt, sample_eta, stationary_Y

BLOWUP = 1e6


class DivergenceError(RuntimeError):
    """Raised when a trajectory leaves the ``|u| <= 1e6`` band."""


def _march(source, u0: np.ndarray, n_steps: int, prop: Propagator) -> np.ndarray:
    """Exponential Euler ``u[n+1] = e^{-dt A} u[n] + phi * source(n, u[n])``."""
    g = prop.grid
    out = np.empty((n_steps + 1,) + g.shape)
    out[0] = u0
    uh = fftn(u0, g)
    for n in range(n_steps):
        uh = prop.step_hat(uh, fftn(source(n, out[n]), g))
        out[n + 1] = ifftn_real(uh, g)
        if not np.all(np.isfinite(out[n + 1])) or np.abs(out[n + 1]).max() > BLOWUP:
            raise DivergenceError(f"solution left the admissible band at step {n + 1}")
    return out


def solve_classical(F, eta: SpaceTimeField, u0: RealField | None, mu: float,
                    dt: float | None = None) -> SpaceTimeField:
    """
    Solve ``L u = -F(u) + eta`` on the frames of ``eta``.  ``F`` is a
    :class:`NonlinearitySpec` or any callable acting pointwise on arrays.
    """
    if dt is not None and not math.isclose(dt, eta.dt, rel_tol=1e-12):
        raise ValueError("dt must match the forcing's frame spacing")
    grid = eta.grid
    u0v = np.zeros(grid.shape) if u0 is None else u0.values
    prop = Propagator(grid, eta.dt, mu)
    ev = eta.values
    vals = _march(lambda n, u: ev[n] - F(u), u0v, eta.n_frames - 1, prop)
    return SpaceTimeField(grid, eta.dt, vals)


def scaled_nonlinearity(F, epsilon: float):
    """``u -> eps^{-3/2} F(eps^{1/2} u)``."""
    if epsilon == 1.0:
        return F
    r = math.sqrt(epsilon)
    return lambda u: F(r * u) / epsilon**1.5


@dataclass(frozen=True, eq=False)
class Trajectory:
    u: SpaceTimeField
    eta: SpaceTimeField
    Y: SpaceTimeField | None
    epsilon: float
    seed: int
    meta: dict = field(default_factory=dict)


def simulate_u_eps(epsilon: float, F, spec: NoiseSpec, u0_eps: RealField | None, seed: int, T: float,
                   grid: Grid, mu: float = 1.0, dt: float | None = None,
                   with_Y: bool = False) -> Trajectory:
    """
    ``L u = -eps^{-3/2} F(eps^{1/2} u) + eta_eps`` on ``[0, T]``.

    The grid must resolve the noise scale (spacing at most ``eps/4``).
    ``with_Y`` also returns the stationary ``Y`` driven by the same noise.
    """
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    if grid.spacing > epsilon / 4 + 1e-12:
        raise ValueError(f"grid spacing {grid.spacing} does not resolve epsilon={epsilon}")
    dt = default_dt(spec, epsilon) if dt is None else dt
    eta = sample_eta(spec, grid, T, seed, epsilon, dt)
    u = solve_classical(scaled_nonlinearity(F, epsilon), eta, u0_eps, mu)
    Y = stationary_Y(eta, mu) if with_Y else None
    return Trajectory(u, eta, Y, epsilon, seed, {"mu": mu, "dt": dt})


def restrict(values: np.ndarray, grid: Grid, n_obs: int) -> tuple[np.ndarray, Grid]:
    """Fourier truncation of frames onto an ``n_obs``-point grid of the same box."""
    if n_obs > grid.n_points:
        raise ValueError("observation grid is finer than the field")
    coarse = Grid(grid.dim, n_obs, grid.box_length)
    fh = fftn(values, grid)
    keep = np.fft.fftfreq(grid.n_points, 1.0 / grid.n_points)
    idx = np.where(np.abs(keep) < n_obs // 2)[0]
    lead = values.ndim - grid.dim
    sel = (slice(None),) * lead + np.ix_(*([idx] * grid.dim))
    small = np.zeros(values.shape[:lead] + coarse.shape, dtype=complex)
    cidx = np.mod(keep[idx].astype(int), n_obs)
    small[(slice(None),) * lead + np.ix_(*([cidx] * grid.dim))] = fh[sel]
    scale = (n_obs / grid.n_points) ** grid.dim
    return ifftn_real(small, coarse) * scale, coarse


@dataclass
class SweepResult:
    epsilons: list
    distances: dict            # eps -> list of distances over seeds
    medians: list
    slope: float
    monotone: bool
    rows: list


def converge_sweep(eps_grid, F, seeds, spec: NoiseSpec, dim: int, box_length: float, T: float,
                   n_obs: int, mu: float = 1.0, kappa: float = 0.3, weight: Weight | None = None,
                   reference: str = "cubic", lambda3=None, dt_obs: float | None = None) -> SweepResult:
    """
    Ensemble distances ``||u_eps - u_ref||_{C_T C^{-kappa}(rho)}`` on a
    common observation grid (``n_obs`` points, frames every ``dt_obs``).

    ``reference="cubic"`` compares with ``L u = -lambda3(eps) u^3 + eta_eps``
    driven by the same noise (``lambda3`` maps epsilon to the coupling);
    ``reference="finest"`` compares with the finest-epsilon run of the same
    seed, restricted to the observation grid.
    """
    eps_grid = sorted(eps_grid, reverse=True)
    weight = weight or Weight(1.0, 0.0)
    dt_obs = dt_obs or default_dt(spec, eps_grid[0])
    obs_times = np.arange(0.0, T + 1e-12, dt_obs)

    def run(eps, seed, G):
        n = int(round(box_length / (eps / 4)))
        n = 1 << max(3, math.ceil(math.log2(n)))
        grid = Grid(dim, n, box_length)
        dt = default_dt(spec, eps)
        stride = int(round(dt_obs / dt))
        if not math.isclose(stride * dt, dt_obs, rel_tol=1e-9):
            raise ValueError("observation step must be a multiple of every time step")
        eta = sample_eta(spec, grid, T, seed, eps, dt)
        u = solve_classical(scaled_nonlinearity(G, eps), eta, None, mu)
        return eta, u.values[::stride], grid

    dist, rows = {}, []
    finest = {}
    if reference == "finest":
        for seed in seeds:
            _, u, grid = run(eps_grid[-1], seed, F)
            finest[seed] = restrict(u, grid, n_obs)[0]
        eps_loop = eps_grid[:-1]
    else:
        eps_loop = eps_grid
    for eps in eps_loop:
        dist[eps] = []
        for seed in seeds:
            eta, u, grid = run(eps, seed, F)
            if reference == "cubic":
                l3 = lambda3(eps)
                stride = int(round(dt_obs / eta.dt))
                uref = solve_classical(lambda x: l3 * x**3, eta, None, mu).values[::stride]
                diff, coarse = restrict(u - uref, grid, n_obs)
            else:
                uc, coarse = restrict(u, grid, n_obs)
                diff = uc - finest[seed]
            d = besov_norm(SpaceTimeField(coarse, dt_obs, diff[: len(obs_times)]), -kappa, weight)
            dist[eps].append(d)
            rows.append({"epsilon": eps, "seed": seed, "distance": d})
    meds = [float(np.median(dist[e])) for e in eps_loop]
    mono = all(b < a for a, b in zip(meds, meds[1:]))
    if len(eps_loop) >= 2 and min(meds) > 0:
        slope = float(stats.linregress(np.log(eps_loop), np.log(meds)).slope)
    else:
        slope = float("nan")
    return SweepResult(list(eps_loop), dist, meds, slope, mono, rows)
