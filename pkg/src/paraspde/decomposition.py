"""
Paracontrolled splitting of a simulated trajectory.

``u = Y + v`` with ``v = -I2bar - I3 + phi + psi``.  The drift of ``phi + psi``
is expanded into products of trees and the unknowns; every product is sent
either to ``Phi`` (rough terms, ``L phi + Phi = 0``) or ``Psi`` (smoother
terms, ``L psi + poly(psi) + Psi = 0``).  Both equations are stepped with
the same exponential Euler scheme as ``u``, so ``Y + v`` reproduces ``u`` up
to round-off as long as the assembled terms sum to the drift.  That sum is
checked against the drift evaluated directly from ``u`` at every frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .besov import AnalysisParams, Weight, besov_norm, sup_norm
from .chaos import (ChaosExpansion, LambdaVector, NonlinearitySpec, RenormConstants, TildeF, chaos_coeffs,
                    expansion_coefficients, gaussian_moment)
from .grid import Grid, Propagator, SpaceTimeField, fftn, ifftn_real
from .paracalc import LocalizationSchedule, Paracalc, modified_para_frame
from .trees import Enhancement

RECOMBINATION_TOL = 1e-9
ORACLE_TOL = 1e-8


class DecompositionError(ArithmeticError):
    """Assembled terms do not reproduce the trajectory."""


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DecompositionState:
    u: SpaceTimeField
    Y: SpaceTimeField
    v: SpaceTimeField
    I2bar: SpaceTimeField
    I3: SpaceTimeField
    phi: SpaceTimeField
    psi: SpaceTimeField
    theta: SpaceTimeField
    Phi: SpaceTimeField
    Psi: SpaceTimeField
    poly: SpaceTimeField
    direct: SpaceTimeField
    recombination_residual: float
    rhs_residual: float               # max over frames, relative
    ansatz_residual: float
    split_residual: tuple[float, float]
    poly_coeffs: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _psi_poly(lam3: float, C0: float, m: int, epsilon: float, a: dict):
    """Odd-power damping ``lam3 x^3 + C0 eps^{(m-3)/2} x^m + sum (a_l v 0) eps^{(l-3)/2} x^l``."""
    coeffs = {3: lam3, m: C0 * epsilon ** ((m - 3) / 2)}
    for l in range(5, m, 2):
        if a[l] > 0:
            coeffs[l] = coeffs.get(l, 0.0) + a[l] * epsilon ** ((l - 3) / 2)
    return coeffs


def _eval_poly(coeffs: dict, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    for k, c in coeffs.items():
        out += c * x**k
    return out


class _Frame:
    """Term assembly at one frame; ``mag`` and ``blue`` accumulate Phi and Psi."""

    def __init__(self, pc: Paracalc, sched: LocalizationSchedule, t: float):
        self.pc, self.sched, self.t = pc, sched, t
        self.mag = np.zeros(pc.grid.shape)
        self.blue = np.zeros(pc.grid.shape)
        self.terms = {}

    def hi(self, a):
        return self.sched.apply_frame(a, self.t, True)

    def lo(self, a):
        return self.sched.apply_frame(a, self.t, False)

    def M(self, name, x):
        self.mag += x
        self.terms[name] = x

    def B(self, name, x):
        self.blue += x
        self.terms[name] = x

    def gt_split(self, name, c, f, g):
        """``c f > g`` with the high part of ``f`` magenta and the low part blue."""
        self.M(name + ":hi", c * self.pc.gt(self.hi(f), g))
        self.B(name + ":lo", c * self.pc.gt(self.lo(f), g))


def decompose(u: SpaceTimeField, enh: Enhancement, rc: RenormConstants, lam: LambdaVector,
              params: AnalysisParams, Y: SpaceTimeField, F: NonlinearitySpec, epsilon: float,
              mu: float | None = None, L: int = 1, chaos: ChaosExpansion | None = None,
              strict: bool = True, keep_terms: bool = False) -> DecompositionState:
    """
    Split ``u - Y`` into trees, ``phi`` and ``psi``.

    ``phi(0) = 0`` and ``psi(0) = u(0) - Y(0)``.  With ``strict`` a
    :class:`DecompositionError` is raised if the recombination residual
    exceeds 1e-9 or the assembled drift misses the direct one by more than
    1e-8 relative.
    """
    grid, dt = u.grid, u.dt
    if Y.grid != grid or Y.n_frames != u.n_frames or enh.I3.n_frames != u.n_frames:
        raise ValueError("trajectory, Y and enhancement must share grid and frames")
    if enh.I2 is None or enh.I2bar is None:
        raise ValueError("enhancement lacks the integrated trees I2 and I2bar")
    mu = params.mu if mu is None else mu
    chaos = chaos or chaos_coeffs(F, rc.sigma_sq)
    s2, m, C0 = rc.sigma_sq, F.m, F.C0
    m1 = params.m1
    ex = expansion_coefficients(F, s2, m1)
    e = epsilon
    se = math.sqrt(e)
    eps_l = {l: e ** ((l - 3) / 2) for l in range(m + 1)}
    g = F.g_poly
    lam0, lam1, lam2, lam3 = lam.as_tuple()
    const = e**-1.5 * chaos.coef(0) - 3 * rc.d32 - 3 * rc.d22_bar
    pcoef = _psi_poly(lam3, C0, m, e, ex.a)

    pc = Paracalc(grid)
    sched = LocalizationSchedule(grid, u.T, L)
    prop = Propagator(grid, dt, mu)
    nt = u.n_frames

    Yv, uv = Y.values, u.values
    Y0, Y1, Y2 = enh.Y0.values, enh.Y1.values, enh.Y2.values
    Y2bar, I3, I2, I2bar = enh.Y2bar.values, enh.I3.values, enh.I2.values, enh.I2bar.values
    Y31, Y22, Y22bar, Y32 = enh.Y31.values, enh.Y22.values, enh.Y22bar.values, enh.Y32.values
    Y3 = TildeF(F, chaos)(se * Yv, 0) / e**1.5

    shape = (nt,) + grid.shape
    phi, psi, theta, pitch_all = np.zeros(shape), np.zeros(shape), np.zeros(shape), np.zeros(shape)
    Phi, Psi, poly, direct = np.zeros(shape), np.zeros(shape), np.zeros(shape), np.zeros(shape)
    w_hist = np.zeros(shape)
    psi[0] = uv[0] - Yv[0] + I2bar[0] + I3[0]
    phi_h, psi_h = fftn(phi[0], grid), fftn(psi[0], grid)
    rel = np.zeros(nt)
    kept = []

    for n in range(nt):
        t = n * dt
        fr = _Frame(pc, sched, t)
        ph, ps = phi[n], psi[n]
        p = ph + ps
        w = -I2bar[n] - I3[n] + p
        q = -I2bar[n] + p
        r = w - ps
        w_hist[n] = w
        y, y0, y1, y2 = Yv[n], Y0[n], Y1[n], Y2[n]
        i3, i2, i2b = I3[n], I2[n], I2bar[n]
        s23 = i2b + i3
        pitch = modified_para_frame(w_hist[: n + 1], i2, dt, grid)
        th = ph + 3 * pitch
        theta[n] = th
        pitch_all[n] = pitch

        # lambda line
        fr.M("l1.Y", lam1 * y)
        fr.M("-2l2.Y.I3", -2 * lam2 * y * i3)
        fr.M("-2l2.Y.I2bar", -2 * lam2 * y * i2b)
        fr.gt_split("2l2.Y>p", 2 * lam2, y, p)
        fr.B("const", np.full(grid.shape, const))
        fr.B("l1.w", lam1 * w)
        fr.B("2l2.Y<=p", 2 * lam2 * pc.le(y, p))
        fr.B("l2.w2", lam2 * w * w)

        # 3 Y2 w + 9 d22 w + 3 dbar + 3 d32 + 3 d' Y
        fr.M("-3Y2>s", -3 * pc.gt(y2, s23))
        fr.gt_split("3Y2>p", 3, y2, p)
        fr.M("-3Y2<s", -3 * pc.lt(y2, s23))
        fr.M("3VY2<p:hi", 3 * pc.lt(fr.hi(y2), p))
        fr.B("3VY2<p:lo", 3 * pc.lt(fr.lo(y2), p))
        fr.M("-3Y32", -3 * Y32[n])
        fr.M("-3Y22bar", -3 * Y22bar[n])
        fr.M("9s.Y22", 9 * s23 * Y22[n])
        fr.M("-9p<VY22:hi", -9 * pc.lt(p, fr.hi(Y22[n])))
        fr.B("-9p<VY22:lo", -9 * pc.lt(p, fr.lo(Y22[n])))
        fr.B("-9p>=Y22", -9 * pc.ge(p, Y22[n]))
        fr.B("3Y2.psi", 3 * pc.res(y2, ps))
        fr.B("3Y2.theta", 3 * pc.res(y2, th))
        fr.B("-9Y2.pitch", -9 * pc.res(y2, pitch))
        fr.B("9Y2.(w<I2)", 9 * pc.res(y2, pc.lt(w, i2)))
        fr.B("-9com(w,I2,Y2)", -9 * pc.com(w, i2, y2))

        # 3 Y1 w^2 + 6 d31 w
        i3sq = i3 * i3
        fr.M("3Y1>I3^2", 3 * pc.gt(y1, i3sq))
        fr.M("3Y1<I3^2", 3 * pc.lt(y1, i3sq))
        fr.M("6I3.Y31", 6 * i3 * Y31[n])
        fr.M("3Y1.R1", 3 * pc.res(y1, i3sq - 2 * pc.lt(i3, i3)))
        fr.B("6com(I3,I3,Y1)", 6 * pc.com(i3, i3, y1))
        i3b = i3 * i2b
        i3p = i3 * p
        fr.M("6Y1>I3I2bar", 6 * pc.gt(y1, i3b))
        fr.gt_split("-6Y1>I3p", -6, y1, i3p)
        fr.M("6Y1<I3I2bar", 6 * pc.lt(y1, i3b))
        fr.M("-6VY1<I3p:hi", -6 * pc.lt(fr.hi(y1), i3p))
        fr.B("-6VY1<I3p:lo", -6 * pc.lt(fr.lo(y1), i3p))
        fr.B("-6Y1.(I3<=q)", -6 * pc.res(y1, pc.le(i3, q)))
        fr.B("-6com(q,I3,Y1)", -6 * pc.com(q, i3, y1))
        fr.M("6I2bar.Y31", 6 * i2b * Y31[n])
        fr.M("-6p<VY31:hi", -6 * pc.lt(p, fr.hi(Y31[n])))
        fr.B("-6p<VY31:lo", -6 * pc.lt(p, fr.lo(Y31[n])))
        fr.B("-6p>=Y31", -6 * pc.ge(p, Y31[n]))
        fr.gt_split("3Y1>q2", 3, y1, q * q)
        fr.B("3Y1<=q2", 3 * pc.le(y1, q * q))

        # Y0 w^3
        y0c = y0 - lam3
        w3 = w**3
        fr.gt_split("(Y0-l3)>w3", 1.0, y0c, w3)
        fr.B("(Y0-l3)<=w3", pc.le(y0c, w3))
        fr.B("l3.cubic", lam3 * (r**3 + 3 * r * r * ps + 3 * r * ps * ps))

        # higher-order Taylor terms
        z = se * y
        fr.B("C0.mixed", C0 * eps_l[m] * sum(math.comb(m, k) * r**k * ps ** (m - k) for k in range(1, m + 1)))
        for l in range(4, m):
            wl = eps_l[l] * w**l
            y1e = z ** (m - l) - gaussian_moment(m - l, s2)
            fr.B(f"b{l}.Y1e<=", ex.b[l] * pc.le(y1e, wl))
            fr.gt_split(f"b{l}.Y1e>", ex.b[l], y1e, wl)
            if l < m1:
                y2e = g.deriv(l)(z) / math.factorial(l) - ex.c[l]
                fr.B(f"Y2e{l}<=", pc.le(y2e, wl))
                fr.gt_split(f"Y2e{l}>", 1.0, y2e, wl)
            if l % 2 == 0:
                fr.B(f"a{l}.w", ex.a[l] * wl)
            else:
                fr.B(f"a{l}^0.w", min(ex.a[l], 0.0) * wl)
                if ex.a[l] > 0:
                    fr.B(f"a{l}v0.mixed", ex.a[l] * eps_l[l]
                         * sum(math.comb(l, k) * r ** (l - k) * ps**k for k in range(l)))
        for k in range(m1, len(F.G)):
            fr.B(f"G{k}", eps_l[k] * g.deriv(k)(z) * w**k / math.factorial(k))

        Phi[n], Psi[n] = fr.mag, fr.blue
        poly[n] = _eval_poly(pcoef, ps)
        direct[n] = F(se * uv[n]) / e**1.5 - Y2bar[n] - Y3[n]
        tot = Phi[n] + Psi[n] + poly[n]
        rel[n] = np.abs(tot - direct[n]).max() / max(np.abs(direct[n]).max(), 1e-300)
        if keep_terms:
            kept.append(fr.terms)
        if n < nt - 1:
            phi_h = prop.step_hat(phi_h, fftn(-Phi[n], grid))
            psi_h = prop.step_hat(psi_h, fftn(-(poly[n] + Psi[n]), grid))
            phi[n + 1] = ifftn_real(phi_h, grid)
            psi[n + 1] = ifftn_real(psi_h, grid)
    v = -I2bar - I3 + phi + psi
    recomb = float(np.abs(Yv + v - uv).max())
    rhs = float(rel.max())
    ansatz = float(np.abs(phi - theta + 3 * pitch_all).max())
    split = (_split_residual(phi, -Phi, prop), _split_residual(psi, -(poly + Psi), prop))

    st = SpaceTimeField
    state = DecompositionState(
        u, Y, st(grid, dt, v), enh.I2bar, enh.I3, st(grid, dt, phi), st(grid, dt, psi),
        st(grid, dt, theta), st(grid, dt, Phi), st(grid, dt, Psi), st(grid, dt, poly), st(grid, dt, direct),
        recomb, rhs, ansatz, split, pcoef,
        {"epsilon": e, "L": L, "mu": mu, "terms": kept, "rhs_per_frame": rel})
    if strict and (recomb > RECOMBINATION_TOL or rhs > ORACLE_TOL):
        raise DecompositionError(f"recombination {recomb:.3e}, drift oracle {rhs:.3e}")
    return state


def _split_residual(x: np.ndarray, src: np.ndarray, prop: Propagator) -> float:
    """Max over frames of ``|x[n+1] - (e^{-dt A} x[n] + phi src[n])|`` relative to ``max|x|``."""
    g = prop.grid
    if x.shape[0] < 2:
        return 0.0
    pred = ifftn_real(prop.step_hat(fftn(x[:-1], g), fftn(src[:-1], g)), g)
    return float(np.abs(x[1:] - pred).max() / max(np.abs(x).max(), 1e-300))


# ---------------------------------------------------------------------------
# norm monitors


@dataclass
class NormMonitor:
    """Running norms of a decomposition and the stopping time ``T_{eps,M}``."""

    epsilon: float
    params: AnalysisParams
    times: np.ndarray
    series: dict                       # name -> running sup per frame
    m: int

    @classmethod
    def from_state(cls, state: DecompositionState, params: AnalysisParams, m: int | None = None,
                   stride: int = 1) -> "NormMonitor":
        m = m or params.m
        a, nu = params.alpha, params.nu
        w_phi = Weight(nu, (3 + 6 * a) / (2 * m))
        rows = {k: [] for k in ("phi_C_alpha", "phi_C_half_alpha", "theta_C_1_alpha", "psi_C_2_gamma",
                                "psi_Linf", "psi_m_scaled", "phi_Linf_m", "psi_Linf_m")}
        idx = list(range(0, state.phi.n_frames, stride))
        if idx[-1] != state.phi.n_frames - 1:
            idx.append(state.phi.n_frames - 1)
        for n in idx:
            ph, ps, th = state.phi.frame(n), state.psi.frame(n), state.theta.frame(n)
            rows["phi_C_alpha"].append(besov_norm(ph, a, w_phi))
            rows["phi_C_half_alpha"].append(besov_norm(ph, 0.5 + a, w_phi))
            rows["theta_C_1_alpha"].append(besov_norm(th, 1 + a, Weight(nu, 1.5 + params.gamma_prime)))
            rows["psi_C_2_gamma"].append(besov_norm(ps, 2 - params.gamma, Weight(nu, 1.5 + params.gamma1)))
            rows["psi_Linf"].append(sup_norm(ps, Weight(nu, 0.5 + a)))
            rows["phi_Linf_m"].append(sup_norm(ph, w_phi))
            rows["psi_Linf_m"].append(sup_norm(ps, w_phi))
        e = state.meta["epsilon"]
        rows["psi_m_scaled"] = list(e ** ((m - 3) / 2) * np.asarray(rows["psi_Linf_m"]) ** m)
        series = {k: np.maximum.accumulate(np.asarray(v)) for k, v in rows.items()}
        return cls(e, params, state.phi.times[idx], series, m)

    def stopping_time(self, M: float) -> float:
        s = self.epsilon ** ((self.m - 3) / 2) * (self.series["phi_Linf_m"] ** self.m
                                                   + self.series["psi_Linf_m"] ** self.m)
        hit = np.nonzero(s > M)[0]
        return float(self.times[hit[0]]) if hit.size else float(self.times[-1])

    def summary(self) -> dict:
        return {k: float(v[-1]) for k, v in self.series.items()}


# ---------------------------------------------------------------------------
# maximum principle


def weight_constant(grid: Grid, nu: float, powers=(3.0,), mu: float = 1.0) -> float:
    """
    ``mu + sup_x max_k (|Lap rho^k| / rho^k + 2 |grad rho^k|^2 / rho^{2k})``
    for ``rho = <x>^{-nu}`` on the box, from the closed-form derivatives.
    """
    r2 = grid.radius**2
    d = grid.dim
    out = 0.0
    for k in powers:
        a = nu * k                              # rho^k = (1 + r^2)^{-a/2}
        grad_ratio = a * np.sqrt(r2) / (1 + r2)
        lap_ratio = np.abs(a * (a + 2) * r2 / (1 + r2) ** 2 - a * d / (1 + r2))
        out = max(out, float(np.max(lap_ratio + 2 * grad_ratio**2)))
    return mu + out


def calibrate_M_delta(grid: Grid, nu: float, m: int, delta: float, lambda3: float, C0: float,
                      mu: float = 1.0) -> float:
    """
    ``2 (lambda3 + C0 + 1) + 2 sup_{x >= 0} (c x - delta x^3 / 4)`` with ``c``
    from :func:`weight_constant` at the powers ``3`` and ``m``.
    """
    c = weight_constant(grid, nu, (3.0, float(m)), mu)
    young = (2.0 / 3.0) * c * math.sqrt(4 * c / (3 * delta))
    return 2 * (lambda3 + C0 + 1) + 2 * young


@dataclass(frozen=True)
class MaxPrincipleReport:
    lhs: float
    rhs: float
    M_delta: float
    residual: float

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.margin >= 0


def max_principle_check(psi: SpaceTimeField, Psi: SpaceTimeField, psi0, lambda3: float, C0: float,
                        a1: float, m: int, l: int, epsilon: float, w: Weight, mu: float = 1.0,
                        delta: float = 0.1, M_delta: float | None = None,
                        tol: float = 1e-8) -> MaxPrincipleReport:
    """
    Check ``(lambda3 - delta/2) ||psi||^3_{rho^m} + C0 eps^{(m-3)/2} ||psi||^m_{rho^3}
    <= M_delta + 2 ||psi0||^m_{rho^3} + 2 ||Psi||_{rho^{3m}}`` for
    ``L psi + lambda3 psi^3 + C0 eps^{(m-3)/2} psi^m + a1 eps^{(l-3)/2} psi^l = Psi``.

    ``w`` is the base weight ``rho``; only its ``nu`` is used.
    """
    if m < l or l < 5 or m % 2 == 0 or l % 2 == 0:
        raise PreconditionError("need m >= l >= 5, both odd")
    if C0 < 0 or a1 < 0:
        raise PreconditionError("C0 and a1 must be nonnegative")
    grid = psi.grid
    p0 = psi0.values if hasattr(psi0, "values") else np.asarray(psi0)
    if np.abs(psi.values[0] - p0).max() > tol * max(1.0, np.abs(p0).max()):
        raise PreconditionError("psi0 is not the first frame of psi")
    x = psi.values
    src = Psi.values - lambda3 * x**3 - C0 * epsilon ** ((m - 3) / 2) * x**m - a1 * epsilon ** ((l - 3) / 2) * x**l
    res = _split_residual(x, src, Propagator(grid, psi.dt, mu))
    if res > tol:
        raise PreconditionError(f"(psi, Psi) does not solve the equation (residual {res:.2e})")
    nu = w.nu
    if M_delta is None:
        M_delta = calibrate_M_delta(grid, nu, m, delta, lambda3, C0, mu)
    lhs = (lambda3 - delta / 2) * sup_norm(psi, Weight(nu, m)) ** 3 \
        + C0 * epsilon ** ((m - 3) / 2) * sup_norm(psi, Weight(nu, 3)) ** m
    rhs = M_delta + 2 * float(np.abs(p0 * Weight(nu, 3).values(grid)).max()) ** m \
        + 2 * sup_norm(Psi, Weight(nu, 3 * m))
    return MaxPrincipleReport(float(lhs), float(rhs), float(M_delta), res)


def scalar_forced_psi(grid: Grid, dt: float, n_steps: int, forcing: float, lambda3: float, C0: float,
                      m: int, epsilon: float, mu: float = 1.0, psi0: float = 0.0):
    """Spatially constant ``psi`` for a constant source, as a pair ``(psi, Psi)``."""
    Psi = np.full((n_steps + 1,) + grid.shape, float(forcing))
    x = np.empty_like(Psi)
    x[0] = psi0
    prop = Propagator(grid, dt, mu)
    for n in range(n_steps):
        src = Psi[n] - lambda3 * x[n] ** 3 - C0 * epsilon ** ((m - 3) / 2) * x[n] ** m
        x[n + 1] = prop.step(x[n], src)
    return SpaceTimeField(grid, dt, x), SpaceTimeField(grid, dt, Psi)
