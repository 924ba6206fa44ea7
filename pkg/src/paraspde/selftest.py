"""Fast invariant suite behind ``paraspde selftest``."""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp

from .besov import Weight
from .chaos import NonlinearitySpec, chaos_coeffs, gauss_nodes, hermite
from .decomposition import NormMonitor, decompose, max_principle_check, scalar_forced_psi
from .grid import Grid, RealField, SpaceTimeField
from .paracalc import LocalizationSchedule, Paracalc
from .solver import solve_classical
from .trees import build_enhancement


def _bony(rng):
    worst = 0.0
    for dim, n in ((1, 32), (1, 64), (2, 32), (3, 16)):
        g = Grid(dim, n, 2 * math.pi)
        pc = Paracalc(g)
        for _ in range(5):
            f, h = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
            err = np.abs(pc.lt(f, h) + pc.res(f, h) + pc.gt(f, h) - f * h).max() / np.abs(f * h).max()
            worst = max(worst, err)
    return worst <= 1e-10, f"max relative error {worst:.2e}"


def _hermite():
    worst = 0.0
    for s2 in (0.5, 1.0, 2.0):
        x, w = gauss_nodes(30, s2)
        for a in range(10):
            for b in range(10):
                val = float(np.dot(w, hermite(a, x, s2) * hermite(b, x, s2)))
                ref = math.factorial(a) * s2**a if a == b else 0.0
                worst = max(worst, abs(val - ref) / max(1.0, math.factorial(max(a, b)) * s2 ** max(a, b)))
    return worst <= 1e-8, f"max relative error {worst:.2e}"


def _chaos():
    worst = 0.0
    for s2 in (0.5, 1.0, 2.0):
        c3 = chaos_coeffs(NonlinearitySpec(1.0, 3), s2)
        c5 = chaos_coeffs(NonlinearitySpec(1.0, 5), s2)
        worst = max(worst, abs(c3.coef(3) - 1), abs(c3.coef(1) - 3 * s2), abs(c5.coef(5) - 1),
                    abs(c5.coef(3) - 10 * s2), abs(c5.coef(1) - 15 * s2**2))
    return worst <= 1e-9, f"max error {worst:.2e}"


def _localization(rng):
    g = Grid(2, 32, 8.0)
    sched = LocalizationSchedule(g, 1.0, 1)
    f = rng.standard_normal(g.shape)
    err = max(np.abs(sched.apply_frame(f, t, True) + sched.apply_frame(f, t, False) - f).max()
              for t in (0.0, 0.3, 1.0))
    return err <= 1e-10, f"reconstruction error {err:.2e}"


def _scalar_ode():
    g = Grid(1, 8, 1.0)
    mu, c, T, dt = 1.0, 0.8, 0.5, 1e-5
    F = NonlinearitySpec(1.0, 5)
    n = int(round(T / dt))
    eta = SpaceTimeField(g, dt, np.zeros((n + 1,) + g.shape))
    u = solve_classical(F, eta, RealField(g, np.full(g.shape, c)), mu)
    ref = solve_ivp(lambda t, y: -mu * y - y**5, (0, u.times[-1]), [c], rtol=1e-12, atol=1e-14, t_eval=u.times)
    err = float(np.abs(u.values[:, 0] - ref.y[0]).max())
    return err <= 1e-6, f"max deviation {err:.2e}"


def _decomposition(cfg):
    from .cli import _scale, _trajectory
    sc = _scale(cfg, cfg.eps_grid[0])
    tr = _trajectory(cfg, sc, cfg.seed)
    enh = build_enhancement(tr.Y, cfg.F, sc.rc, sc.eps, cfg.analysis.mu, sc.chaos)
    st = decompose(tr.u, enh, sc.rc, sc.lam, cfg.analysis, tr.Y, cfg.F, sc.eps, L=cfg.L, chaos=sc.chaos,
                   strict=False)
    mon = NormMonitor.from_state(st, cfg.analysis)
    Ts = [mon.stopping_time(M) for M in sorted(cfg.M_levels)]
    return [("recombination", st.recombination_residual <= 1e-9, f"{st.recombination_residual:.2e}"),
            ("drift oracle", st.rhs_residual <= 1e-8, f"{st.rhs_residual:.2e}"),
            ("stopping time monotone", all(a <= b for a, b in zip(Ts, Ts[1:])), str(Ts))]


def _max_principle(cfg):
    g = Grid(1, 16, 8.0)
    rows = []
    for f in cfg.forcing:
        psi, Psi = scalar_forced_psi(g, 1e-3, 200, f, 1.0, 1.0, 5, 0.5)
        rows.append(max_principle_check(psi, Psi, psi.frame(0), 1.0, 1.0, 0.0, 5, 5, 0.5, Weight(1.0, 1.0)).margin)
    return min(rows) >= 0, f"min margin {min(rows):.3g}"


def run_all(cfg) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(cfg.seed)
    out = [("bony identity",) + _bony(rng), ("hermite orthogonality",) + _hermite(),
           ("chaos exactness",) + _chaos(), ("localization reconstruction",) + _localization(rng),
           ("scalar ode",) + _scalar_ode(), ("maximum principle",) + _max_principle(cfg)]
    out += _decomposition(cfg)
    return out
