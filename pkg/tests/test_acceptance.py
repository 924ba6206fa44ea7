"""
Acceptance suite.  Each test prints one PASS/FAIL line through the ``report``
fixture and asserts the same condition, wall-clock budget included.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import solve_ivp

from paraspde.besov import Weight, besov_norm, block_sups, partition_for
from paraspde.chaos import (NonlinearitySpec, TildeF, _profile_sigma_sq, chaos_coeffs, d_constants, d_constants_mc,
                            gauss_nodes, hermite)
from paraspde.cli import ExperimentConfig, _decomposition_margin, _scale, _trajectory
from paraspde.decomposition import calibrate_M_delta, decompose, max_principle_check, scalar_forced_psi
from paraspde.grid import Grid, RealField, SpaceTimeField
from paraspde.noise import LatticeCovariance, NoiseSpec, default_dt, sample_eta, stationary_Y
from paraspde.paracalc import LocalizationSchedule, Paracalc, localize_gt, localize_le
from paraspde.solver import converge_sweep, solve_classical
from paraspde.trees import NAMES, HomogeneityTable, build_enhancement, decay_stats

pytestmark = pytest.mark.slow

F5 = NonlinearitySpec(1.0, 5)
F54 = NonlinearitySpec(1.0, 5, (0, 0, 0, 0, 0.5))


def test_01_bony_identity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for dim, n in ((1, 32), (1, 64), (2, 32), (3, 16)):
        g = Grid(dim, n, 2 * np.pi)
        pc = Paracalc(g)
        for _ in range(50):
            f, h = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
            prod = f * h
            err = np.abs(pc.lt(f, h) + pc.res(f, h) + pc.gt(f, h) - prod).max() / np.abs(prod).max()
            worst = max(worst, err)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 10
    report(1, "paraproduct decomposition", ok, f"max rel err {worst:.2e}, {dt:.1f}s")
    assert ok


def test_02_hermite_orthogonality(report):
    t0 = time.perf_counter()
    worst = 0.0
    for s2 in (0.5, 1.0, 2.0):
        x, w = gauss_nodes(40, s2)
        for a in range(10):
            for b in range(10):
                val = float(np.dot(w, hermite(a, x, s2) * hermite(b, x, s2)))
                ref = math.factorial(a) * s2**a if a == b else 0.0
                worst = max(worst, abs(val - ref) / (math.factorial(max(a, b)) * s2 ** max(a, b)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 1
    report(2, "Hermite orthogonality", ok, f"max rel err {worst:.2e}, {dt:.2f}s")
    assert ok


def test_03_chaos_exactness(report):
    t0 = time.perf_counter()
    worst = 0.0
    for s2 in (0.5, 1.0, 2.0):
        c3, c5 = chaos_coeffs(NonlinearitySpec(1.0, 3), s2), chaos_coeffs(F5, s2)
        exp3 = {0: 0, 1: 3 * s2, 2: 0, 3: 1}
        exp5 = {0: 0, 1: 15 * s2**2, 2: 0, 3: 10 * s2, 4: 0, 5: 1}
        worst = max([worst] + [abs(c3.coef(k) - v) for k, v in exp3.items()]
                    + [abs(c5.coef(k) - v) for k, v in exp5.items()])
    dt = time.perf_counter() - t0
    ok = worst <= 1e-9 and dt < 1
    report(3, "chaos coefficients of x^3, x^5", ok, f"max err {worst:.2e}, {dt:.2f}s")
    assert ok


def test_04_mehler_vs_monte_carlo(report):
    t0 = time.perf_counter()
    spec, eps, mu = NoiseSpec(), 0.5, 1.0
    g = Grid(1, 32, 8.0)
    cov = LatticeCovariance(spec, g, eps, mu, default_dt(spec, eps))
    ch = chaos_coeffs(F54, _profile_sigma_sq(cov, eps))
    rc = d_constants(ch, cov, eps, mu)
    mc = d_constants_mc(ch, cov, eps, mu, seed=20240, n_pairs=10_000)
    z = mc.z(rc)
    prime_gap = abs(rc.d32_prime_direct - rc.d32_prime) / abs(rc.d32_prime)
    dt = time.perf_counter() - t0
    ok = max(z.values()) <= 3 and prime_gap <= 1e-6 and dt < 120
    zs = ", ".join(f"{k} {v:.2f}" for k, v in z.items())
    report(4, "Mehler vs Monte Carlo", ok, f"z-scores [{zs}], d' route gap {prime_gap:.1e}, {dt:.0f}s")
    assert ok


def test_05_localization(report):
    t0 = time.perf_counter()
    g = Grid(1, 4096, 8.0)
    rng = np.random.default_rng(7)
    # white noise in space: regularity -1/2, measured in C^{-1/2-1/2}
    f = SpaceTimeField(g, 0.5, rng.standard_normal((3,) + g.shape) / math.sqrt(g.spacing))
    alpha, delta = 0.5, 0.5
    Ls = np.arange(7)
    ys, rec = [], 0.0
    for L in Ls:
        s = LocalizationSchedule(g, f.T, int(L))
        hi, lo = localize_gt(f, s), localize_le(f, s)
        rec = max(rec, float(np.abs(hi.values + lo.values - f.values).max()))
        ys.append(math.log2(besov_norm(hi, -alpha - delta)))
    slope = stats.linregress(Ls, ys).slope
    dt = time.perf_counter() - t0
    ok = slope <= -0.8 * delta and rec <= 1e-10 and dt < 30
    report(5, "localization decay and reconstruction", ok,
           f"slope {slope:.3f} (need <= {-0.8 * delta}), reconstruction {rec:.1e}, {dt:.1f}s")
    assert ok


def test_06_tree_regularity(report):
    t0 = time.perf_counter()
    spec, eps, mu = NoiseSpec(spectral=True), 0.125, 1.0
    g = Grid(3, 32, 4.0)
    dt = default_dt(spec, eps)
    T = 8 * dt
    cov = LatticeCovariance(spec, g, eps, mu, dt)
    ch = chaos_coeffs(F54, _profile_sigma_sq(cov, eps))
    rc = d_constants(ch, cov, eps, mu, t_cut=T)
    p = partition_for(g)
    logs = {k: [] for k in ("Y",) + NAMES}
    for s in range(50):
        Y = stationary_Y(sample_eta(spec, g, T, 1000 + s, eps, dt), mu)
        enh = build_enhancement(Y, F54, rc, eps, mu, ch)
        for k, f in [("Y", Y)] + list(enh.items()):
            logs[k].append(np.log2(np.maximum(block_sups(f, p=p), 1e-300)))
    js = np.arange(0, p.j_max - 1)
    est = {k: -stats.linregress(js, np.mean(v, axis=0)[js + 1]).slope for k, v in logs.items()}
    table = HomogeneityTable(0.3).as_dict()
    bad = [(a, b) for a, b in itertools.combinations(NAMES, 2)
           if table[a] != table[b] and (table[a] - table[b]) * (est[a] - est[b]) <= 0]
    n_pairs = sum(table[a] != table[b] for a, b in itertools.combinations(NAMES, 2))
    dt_run = time.perf_counter() - t0
    y_ok = abs(est["Y"] + 0.8) <= 0.2
    ok = y_ok and not bad and dt_run < 600
    report(6, "tree regularity (d=3)", ok,
           f"Y exponent {est['Y']:.3f}; ordering violated in {len(bad)}/{n_pairs} pairs; "
           + ", ".join(f"{k} {v:.2f}" for k, v in est.items() if k != "Y") + f"; {dt_run:.0f}s")
    assert ok


def test_07_constant_tree_decay(report):
    t0 = time.perf_counter()
    spec, mu, box, T = NoiseSpec(), 1.0, 8.0, 0.125
    members = []
    for eps in [2.0**-i for i in range(1, 6)]:
        n = 1 << math.ceil(math.log2(box / (eps / 4) - 1e-9))
        g = Grid(1, n, box)
        dt = default_dt(spec, eps)
        s2 = _profile_sigma_sq(LatticeCovariance(spec, g, eps, mu, dt), eps)
        ch = chaos_coeffs(F5, s2)
        tf = TildeF(F5, ch)
        stride = max(1, int(round(T / dt)) // 16)
        Y0s, Z2s = [], []
        for s in range(50):
            Y = stationary_Y(sample_eta(spec, g, T, 500 + s, eps, dt), mu)
            Z = math.sqrt(eps) * Y.values[::stride]
            Y0s.append(SpaceTimeField(g, dt * stride, tf(Z, 3) / 6.0))
            Z2s.append(SpaceTimeField(g, dt * stride, Z**2 - s2))
        members.append({"epsilon": eps, "Y0": Y0s, "Z2": Z2s, "lambda3": ch.coef(3)})
    rep = decay_stats(members, kappa=0.3, eps_small=0.05, w=Weight(1.0, 1.0))
    dt_run = time.perf_counter() - t0
    slope = rep.slopes["Y0"]
    ok = slope is not None and slope >= 0.15 and dt_run < 600
    means = ", ".join(f"{m:.3g}" for m in rep.stats["Y0"]["mean"])
    report(7, "constant-tree decay (d=1)", ok, f"slope {slope:.3f}, means [{means}], {dt_run:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def decomposition_runs():
    t0 = time.perf_counter()
    cfg = ExperimentConfig(nonlinearity="x5+x4", n_frames=40, eps_grid=[0.5], L=1)
    sc = _scale(cfg, 0.5)
    runs = []
    for seed in range(10):
        tr = _trajectory(cfg, sc, 300 + seed)
        enh = build_enhancement(tr.Y, cfg.F, sc.rc, sc.eps, cfg.analysis.mu, sc.chaos)
        runs.append(decompose(tr.u, enh, sc.rc, sc.lam, cfg.analysis, tr.Y, cfg.F, sc.eps, L=cfg.L,
                              chaos=sc.chaos, strict=False))
    return cfg, sc, runs, time.perf_counter() - t0


def test_08_decomposition_closes(report, decomposition_runs):
    _, _, runs, dt = decomposition_runs
    rec = max(r.recombination_residual for r in runs)
    rhs = max(r.rhs_residual for r in runs)
    ok = rec <= 1e-9 and rhs <= 1e-8 and dt < 300
    report(8, "decomposition recombination and drift oracle", ok,
           f"recombination {rec:.1e}, drift oracle {rhs:.1e} over {len(runs)} runs, {dt:.0f}s")
    assert ok


def test_09_maximum_principle(report, decomposition_runs):
    t0 = time.perf_counter()
    cfg, sc, runs, _ = decomposition_runs
    p, F = cfg.analysis, cfg.F
    Md = calibrate_M_delta(sc.grid, p.nu, F.m, p.delta, sc.lam.lambda3, F.C0, p.mu)
    margins = []
    for f in (-100.0, -20.0, -1.0, 0.0, 1.0, 20.0, 100.0):
        psi, Psi = scalar_forced_psi(sc.grid, sc.dt, cfg.n_frames, f, sc.lam.lambda3, F.C0, F.m, sc.eps, p.mu)
        margins.append(max_principle_check(psi, Psi, psi.frame(0), sc.lam.lambda3, F.C0, 0.0, F.m, 5, sc.eps,
                                           Weight(p.nu, 1.0), p.mu, p.delta, Md).margin)
    scalar_min = min(margins)
    dec = [_decomposition_margin(st, sc, F, p, Md).margin for st in runs]
    dt = time.perf_counter() - t0
    ok = min(scalar_min, min(dec)) >= 0 and dt < 120
    report(9, "maximum-principle margin", ok,
           f"min scalar margin {scalar_min:.4g}, min decomposition margin {min(dec):.4g}, M_delta {Md:.4g}, {dt:.1f}s")
    assert ok


def test_10_convergence_to_cubic(report):
    t0 = time.perf_counter()
    spec = NoiseSpec()
    eps_grid = [0.5, 0.25, 0.125, 0.0625]
    cfg = ExperimentConfig(box_length=8.0)
    lam3 = {e: _scale(cfg, e, finite_time=False).lam.lambda3 for e in eps_grid}
    res = converge_sweep(eps_grid, F5, list(range(50)), spec, 1, 8.0, 0.5, 32, mu=1.0, kappa=0.3,
                         weight=Weight(1.0, 1.75), reference="cubic", lambda3=lambda e: lam3[e],
                         dt_obs=default_dt(spec, 0.5))
    dt = time.perf_counter() - t0
    ok = res.monotone and res.slope > 0.3 and dt < 900
    meds = ", ".join(f"{m:.4g}" for m in res.medians)
    report(10, "convergence of the quintic model", ok, f"medians [{meds}], slope {res.slope:.3f}, {dt:.0f}s")
    assert ok


def test_11_scalar_ode(report):
    t0 = time.perf_counter()
    g = Grid(1, 8, 1.0)
    mu, c, T = 1.0, 0.8, 0.5

    def run(dt):
        n = int(round(T / dt))
        eta = SpaceTimeField(g, dt, np.zeros((n + 1,) + g.shape))
        u = solve_classical(F5, eta, RealField(g, np.full(g.shape, c)), mu)
        ref = solve_ivp(lambda t, y: -mu * y - y**5, (0, u.times[-1]), [c], rtol=1e-12, atol=1e-14,
                        t_eval=u.times)
        return float(np.abs(u.values[:, 0] - ref.y[0]).max())

    errs = {dt: run(dt) for dt in (1e-3, 1e-4, 1e-5)}
    order = stats.linregress(np.log10(list(errs)), np.log10(list(errs.values()))).slope
    dt_run = time.perf_counter() - t0
    ok = errs[1e-5] <= 1e-6 and order >= 0.9 and dt_run < 60
    report(11, "scalar ODE accuracy and order", ok,
           f"err@1e-5 {errs[1e-5]:.2e}, observed order {order:.3f}, {dt_run:.1f}s")
    assert ok
