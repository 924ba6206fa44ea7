"""
Hermite chaos of a polynomial nonlinearity, the two-point renormalization
constants and the admissibility checks on a nonlinearity family.

Two-point expectations use the Mehler rule: for ``A = sum a_n H_n`` and
``B = sum b_n H_n`` (variance ``s2``) and a Gaussian pair of covariance ``c``,
``E[A(Z1) B(Z2)] = sum_n a_n b_n n! c^n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import hermite_e as He

from .grid import HeatQuadrature, heat_kernel_functional, heat_kernel_weights, ifftn_real

MAX_DEGREE = 9


def hermite(n: int, x, sigma_sq: float = 1.0):
    """``H_n(x, s2)`` via ``H_{n+1} = x H_n - n s2 H_{n-1}``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    x = np.asarray(x, dtype=float)
    h0, h1 = np.ones_like(x), x.copy()
    if n == 0:
        return h0
    for k in range(1, n):
        h0, h1 = h1, x * h1 - k * sigma_sq * h0
    return h1


def hermite_series(coef, x, sigma_sq: float):
    """``sum_n coef[n] H_n(x, s2)``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    h0, h1 = np.ones_like(x), x
    for n, c in enumerate(coef):
        if n == 0:
            cur = h0
        elif n == 1:
            cur = h1
        else:
            h0, h1 = h1, x * h1 - (n - 1) * sigma_sq * h0
            cur = h1
        if c:
            out = out + c * cur
    return out


def gauss_nodes(n: int, sigma_sq: float):
    """Nodes and probability weights for ``E[g(Z)]``, ``Z ~ N(0, s2)``."""
    x, w = He.hermegauss(n)
    return math.sqrt(sigma_sq) * x, w / math.sqrt(2.0 * math.pi)


def gaussian_moment(k: int, sigma_sq: float) -> float:
    if k % 2:
        return 0.0
    return sigma_sq ** (k // 2) * math.prod(range(k - 1, 0, -2))


@dataclass(frozen=True)
class NonlinearitySpec:
    """
    ``F(x) = C0 x^m + G(x)`` with ``G`` given by power-basis coefficients
    (``G[i]`` multiplies ``x^i``) of degree below ``m``.
    """

    C0: float
    m: int
    G: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not self.C0 > 0:
            raise ValueError("C0 must be positive")
        if self.m < 1 or self.m % 2 == 0:
            raise ValueError("m must be a positive odd integer")
        if self.m > MAX_DEGREE:
            raise ValueError(f"degree above {MAX_DEGREE} is not supported")
        g = tuple(float(c) for c in self.G)
        while g and g[-1] == 0.0:
            g = g[:-1]
        if len(g) > self.m:
            raise ValueError("G must have degree below m")
        object.__setattr__(self, "G", g)

    @property
    def degree(self) -> int:
        return self.m

    @property
    def g_poly(self) -> Polynomial:
        return Polynomial(self.G or (0.0,))

    @property
    def poly(self) -> Polynomial:
        c = np.zeros(self.m + 1)
        c[: len(self.G)] = self.G
        c[self.m] += self.C0
        return Polynomial(c)

    def __call__(self, x, k: int = 0):
        p = self.poly
        return (p.deriv(k) if k else p)(np.asarray(x, dtype=float))

    def derivative_bound(self, c: float = 1.0, x_max: float = 60.0, n_probe: int = 4001) -> float:
        """``sup_x sum_{k<=9} |F^{(k)}(x)| e^{-c|x|}`` on a probe grid."""
        x = np.linspace(-x_max, x_max, n_probe)
        tot = sum(np.abs(self(x, k)) for k in range(MAX_DEGREE + 1))
        return float(np.max(tot * np.exp(-c * np.abs(x))))

    def to_json(self) -> dict:
        return {"C0": self.C0, "m": self.m, "G": list(self.G)}


@dataclass(frozen=True)
class NonlinearityFamily:
    """Tabulated ``eps -> F_eps``."""

    members: dict

    def at(self, epsilon: float) -> NonlinearitySpec:
        for e, F in self.members.items():
            if math.isclose(e, epsilon, rel_tol=1e-12):
                return F
        raise KeyError(f"no member at epsilon={epsilon}")


def _as_poly(F) -> Polynomial:
    if isinstance(F, NonlinearitySpec):
        return F.poly
    if isinstance(F, Polynomial):
        return F
    return Polynomial(np.atleast_1d(np.asarray(F, dtype=float)))


@dataclass(frozen=True)
class ChaosExpansion:
    sigma_sq: float
    f: np.ndarray

    @property
    def n_max(self) -> int:
        return len(self.f) - 1

    def coef(self, n: int) -> float:
        return float(self.f[n]) if n < len(self.f) else 0.0

    def deriv_coeffs(self, k: int, tilde: bool = False) -> np.ndarray:
        """Hermite coefficients of ``F^{(k)}`` (or ``F~^{(k)}``) using ``H_n' = n H_{n-1}``."""
        f = np.array(self.f, dtype=float)
        if tilde:
            f[:3] = 0.0
        out = np.zeros(max(len(f) - k, 1))
        for n in range(k, len(f)):
            out[n - k] = f[n] * math.perm(n, k)
        return out

    def evaluate(self, x, k: int = 0, tilde: bool = False):
        return hermite_series(self.deriv_coeffs(k, tilde), x, self.sigma_sq)


def chaos_coeffs(F, sigma_sq: float, n_max: int | None = None, n_nodes: int | None = None) -> ChaosExpansion:
    """
    ``f_n = E[F(Z) H_n(Z, s2)]/(n! s2^n)`` by Gauss-Hermite quadrature, exact
    when ``2 n_nodes - 1 >= deg F + n``.
    """
    if not sigma_sq > 0:
        raise ValueError("sigma_sq must be positive")
    p = _as_poly(F)
    deg = p.degree()
    n_max = deg if n_max is None else n_max
    n_nodes = max(40, deg + n_max) if n_nodes is None else n_nodes
    if n_nodes <= deg:
        raise ArithmeticError(f"{n_nodes} quadrature nodes cannot resolve degree {deg}")
    z, w = gauss_nodes(n_nodes, sigma_sq)
    Fz = p(z)
    f = np.array([np.dot(w, Fz * hermite(n, z, sigma_sq)) / (math.factorial(n) * sigma_sq**n)
                  for n in range(n_max + 1)])
    scale = max(1.0, float(np.abs(f).max()))
    f[np.abs(f) < 1e-14 * scale] = 0.0
    return ChaosExpansion(sigma_sq, f)


def chaos_residual(F, chaos: ChaosExpansion, x_max: float | None = None, n_probe: int = 201) -> float:
    """Max relative probe error of ``sum f_n H_n`` against ``F``."""
    x_max = 4.0 * math.sqrt(chaos.sigma_sq) if x_max is None else x_max
    x = np.linspace(-x_max, x_max, n_probe)
    exact = _as_poly(F)(x)
    return float(np.max(np.abs(chaos.evaluate(x) - exact)) / max(1.0, np.max(np.abs(exact))))


class TildeF:
    """``F~ = F - f0 - f1 x - f2 H_2`` and its derivatives up to order 3."""

    def __init__(self, F, chaos: ChaosExpansion, tol: float = 1e-9):
        self.chaos = chaos
        s2 = chaos.sigma_sq
        low = Polynomial([chaos.coef(0) - chaos.coef(2) * s2, chaos.coef(1), chaos.coef(2)])
        self.direct = _as_poly(F) - low
        x = np.linspace(-4 * math.sqrt(s2), 4 * math.sqrt(s2), 101)
        for k in range(4):
            a = self.direct.deriv(k)(x) if k else self.direct(x)
            b = chaos.evaluate(x, k, tilde=True)
            if np.max(np.abs(a - b)) > tol * max(1.0, np.max(np.abs(a))):
                raise ArithmeticError(f"the two forms of the order-{k} derivative disagree")

    def __call__(self, x, k: int = 0):
        if not 0 <= k <= 3:
            raise ValueError("derivatives of order 0..3 only")
        return self.chaos.evaluate(x, k, tilde=True)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.chaos.deriv_coeffs(0, tilde=True))


def tilde_F(F, chaos: ChaosExpansion) -> TildeF:
    return TildeF(F, chaos)


# ---------------------------------------------------------------------------
# two-point constants


def mehler_poly(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Power coefficients ``q`` in ``c`` with ``E[A(Z1)B(Z2)] = sum q_n c^n``."""
    n = min(len(a), len(b))
    return np.array([a[i] * b[i] * math.factorial(i) for i in range(n)])


# (name, derivative orders, prefactor exponent of eps, numeric prefactor)
_CONSTANTS = (("d22", (1, 1), -2.0, 1.0 / 9.0),
              ("d31", (0, 2), -2.0, 1.0 / 6.0),
              ("d32", (0, 1), -2.5, 1.0 / 3.0))


@dataclass(frozen=True)
class RenormConstants:
    epsilon: float
    sigma_sq: float
    d22: float
    d22_bar: float
    d31: float
    d32: float
    d32_prime: float
    tail_bound: float = 0.0
    d32_prime_direct: float | None = None
    b_times: tuple[float, ...] = ()
    b_values: tuple[float, ...] = ()
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        vals = (self.d22, self.d22_bar, self.d31, self.d32, self.d32_prime)
        if not all(np.isfinite(vals)):
            raise ArithmeticError("renormalization constants must be finite")
        ref = 2 * self.d31 + 3 * self.d22
        if abs(self.d32_prime - ref) > 1e-12 * max(1.0, abs(ref)):
            raise ArithmeticError("d32_prime must equal 2 d31 + 3 d22")

    def b_eps(self, t: float) -> float:
        if not self.b_times:
            raise ValueError("no b_eps table recorded")
        return float(np.interp(t, self.b_times, self.b_values))

    def as_dict(self) -> dict:
        return {"d22": self.d22, "d22_bar": self.d22_bar, "d31": self.d31, "d32": self.d32,
                "d32_prime": self.d32_prime}

    @classmethod
    def zero(cls, epsilon: float = 1.0, sigma_sq: float = 0.0) -> "RenormConstants":
        return cls(epsilon, sigma_sq, 0.0, 0.0, 0.0, 0.0, 0.0)


def _profile_sigma_sq(profile, epsilon: float) -> float:
    return float(epsilon * np.asarray(profile(0.0)).flat[0])


def _default_quad(profile) -> HeatQuadrature:
    dt = getattr(profile, "dt", None)
    return HeatQuadrature("lattice", dt=dt) if dt else HeatQuadrature()


def _check_variance(chaos: ChaosExpansion, s2: float) -> None:
    if not math.isclose(chaos.sigma_sq, s2, rel_tol=1e-6):
        raise ValueError(f"chaos variance {chaos.sigma_sq} differs from the profile's {s2}")


def _prime_numerator(chaos: ChaosExpansion, n_gh: int = 24) -> np.ndarray:
    """
    Power coefficients in ``c`` of ``E[F~(Z1) F~'(Z2) (Z1 + Z2)] / (s2 + c)``,
    from bivariate Gauss-Hermite quadrature at Chebyshev covariances followed
    by exact polynomial division.
    """
    s2 = chaos.sigma_sq
    deg = len(chaos.f)
    cs = s2 * np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1))
    x, w = He.hermegauss(n_gh)
    w = w / math.sqrt(2 * math.pi)
    X1, X2 = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    vals = []
    for c in cs:
        rho = c / s2
        z1 = math.sqrt(s2) * X1
        z2 = math.sqrt(s2) * (rho * X1 + math.sqrt(1 - rho**2) * X2)
        g = chaos.evaluate(z1, 0, True) * chaos.evaluate(z2, 1, True) * (z1 + z2)
        vals.append(float((W * g).sum()))
    num = Polynomial.fit(cs, vals, deg, domain=[-s2, s2], window=[-s2, s2]).convert().coef
    quo, rem = divmod(Polynomial(num), Polynomial([s2, 1.0]))
    scale = max(1.0, float(np.abs(num).max()))
    if np.abs(rem.coef).max() > 1e-8 * scale:
        raise ArithmeticError("numerator is not divisible by (s2 + c)")
    return quo.coef


def d_constants(chaos: ChaosExpansion, profile, epsilon: float, mu: float,
                quad: HeatQuadrature | None = None, b_times=(), with_direct: bool = True,
                t_cut: float | None = None) -> RenormConstants:
    """
    Renormalization constants at scale ``epsilon``.

    ``profile(s)`` returns ``C_eps(s, .)`` on its grid (``profile.grid``).
    Each constant is ``pref * int int P_s(x) E[...] dx ds`` with the
    expectation a polynomial in ``c = eps C_eps(s, x)`` from the Mehler rule.
    ``d32_prime_direct`` recomputes ``2 d31 + 3 d22`` through Gaussian
    integration by parts and bivariate quadrature.  A finite ``t_cut`` gives
    the expectations at time ``t_cut`` of trees started from zero.
    """
    grid = profile.grid
    s2 = _profile_sigma_sq(profile, epsilon)
    _check_variance(chaos, s2)
    quad = quad or _default_quad(profile)
    polys, prefs = [], []
    for _, (a, b), ex, num in _CONSTANTS:
        polys.append(mehler_poly(chaos.deriv_coeffs(a, True), chaos.deriv_coeffs(b, True)))
        prefs.append(num * epsilon**ex)
    f2, f3 = chaos.coef(2), chaos.coef(3)
    polys.append(np.array([0.0, 0.0, 1.0 / epsilon**2]))      # C^2 = c^2 / eps^2
    prefs.append(2.0 * epsilon**-0.5 * f3 * f2)
    if with_direct:
        polys.append(_prime_numerator(chaos))
        prefs.append(epsilon**-2.0 / 3.0)
    width = max(len(p) for p in polys)
    Q = np.zeros((len(polys), width))
    for i, p in enumerate(polys):
        Q[i, : len(p)] = p
    Q *= np.array(prefs)[:, None]

    def integrand(s):
        c = epsilon * np.asarray(profile(s))
        out = np.zeros((len(polys),) + c.shape)
        for n in range(width - 1, -1, -1):
            out = out * c + Q[:, n].reshape((-1,) + (1,) * c.ndim)
        return out

    vals, tail = heat_kernel_functional(integrand, mu, grid, t_cut=t_cut, quad=quad)
    d22, d31, d32, dbar = (float(v) for v in vals[:4])
    direct = float(vals[4]) if with_direct else None
    bt, bv = [], []
    for t in b_times:
        val, _ = heat_kernel_functional(lambda s: 6.0 * np.asarray(profile(s)) ** 2, mu, grid,
                                        t_cut=t, quad=quad)
        bt.append(float(t))
        bv.append(float(val))
    return RenormConstants(epsilon, s2, d22, dbar, d31, d32, 2 * d31 + 3 * d22, float(tail),
                           direct, tuple(bt), tuple(bv), {"quad": quad.kind})


@dataclass(frozen=True)
class MCEstimate:
    mean: dict
    se: dict
    n_pairs: int

    def z(self, rc: RenormConstants) -> dict:
        ref = rc.as_dict()
        return {k: (abs(self.mean[k] - ref[k]) / self.se[k] if self.se[k] > 0
                    else (0.0 if math.isclose(self.mean[k], ref[k], abs_tol=1e-12) else np.inf))
                for k in self.mean}


def d_constants_mc(chaos: ChaosExpansion, profile, epsilon: float, mu: float, seed: int,
                   n_pairs: int = 10_000, quad: HeatQuadrature | None = None) -> MCEstimate:
    """
    Monte Carlo version of :func:`d_constants`: the expectations are replaced
    by averages over ``n_pairs`` correlated Gaussian pairs (common random
    numbers across quadrature nodes and sites), and the heat-kernel integral
    by the same time rule in physical space.
    """
    grid = profile.grid
    s2 = _profile_sigma_sq(profile, epsilon)
    _check_variance(chaos, s2)
    quad = quad or _default_quad(profile)
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal((n_pairs, 1))
    x2 = rng.standard_normal((n_pairs, 1))
    f2, f3 = chaos.coef(2), chaos.coef(3)
    if quad.kind == "gauss":
        ss, ww = quad.nodes(mu)
        kernels = [(s, wt * heat_kernel_weights(grid, s, mu)) for s, wt in zip(ss, ww)]
    else:
        dt = quad.dt
        lam = grid.k2 + mu
        phi = -np.expm1(-dt * lam) / lam
        n = int(np.ceil(quad.t_cut(mu) / dt))
        kernels = [(p * dt, ifftn_real(np.exp(-(p - 1) * dt * lam) * phi, grid)) for p in range(1, n + 1)]
    names = [c[0] for c in _CONSTANTS] + ["d22_bar"]
    acc = {k: np.zeros(n_pairs) for k in names}
    sd = math.sqrt(s2)
    for s, K in kernels:
        c = (epsilon * np.asarray(profile(s))).reshape(1, -1)
        Kf = K.reshape(-1)
        keep = np.abs(Kf) > 1e-14 * np.abs(Kf).max()
        c, Kf = c[:, keep], Kf[keep]
        rho = np.clip(c / s2, -1.0, 1.0)
        z1 = sd * x1 * np.ones_like(rho)                       # Y(s, x)
        z2 = sd * (rho * x1 + np.sqrt(1 - rho**2) * x2)         # Y(0, 0)
        d = {k: chaos.evaluate(z1, k, True) for k in (0, 1)}
        e = {k: chaos.evaluate(z2, k, True) for k in (1, 2)}
        for name, (a, b), ex, num in _CONSTANTS:
            acc[name] += num * epsilon**ex * ((d[a] * e[b]) @ Kf)
        wick = hermite(2, z1, s2) * hermite(2, z2, s2) / 2.0     # unbiased for c^2
        acc["d22_bar"] += 2.0 * epsilon**-0.5 * f3 * f2 / epsilon**2 * (wick @ Kf)
    mean = {k: float(v.mean()) for k, v in acc.items()}
    se = {k: float(v.std(ddof=1) / math.sqrt(n_pairs)) for k, v in acc.items()}
    return MCEstimate(mean, se, n_pairs)


# ---------------------------------------------------------------------------
# lambda vector and admissibility


@dataclass(frozen=True)
class LambdaVector:
    lambda0: float
    lambda1: float
    lambda2: float
    lambda3: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.lambda0, self.lambda1, self.lambda2, self.lambda3)


def lambda_vector(f0: float, f1: float, f2: float, f3: float, d: RenormConstants,
                  epsilon: float) -> LambdaVector:
    return LambdaVector(
        lambda0=epsilon**-1.5 * f0 - epsilon**-0.5 * f2 * d.d31 - 3 * d.d32 - 3 * d.d22_bar,
        lambda1=f1 / epsilon - 9 * d.d22 - 6 * d.d31,
        lambda2=epsilon**-0.5 * f2,
        lambda3=f3,
    )


@dataclass(frozen=True)
class ExpansionCoefficients:
    """``b_l``, ``c_l`` and ``a_l`` of the high-order expansion of ``F``."""

    b: dict
    c: dict
    a: dict


def expansion_coefficients(F: NonlinearitySpec, sigma_sq: float, m1: int) -> ExpansionCoefficients:
    m = F.m
    b = {l: F.C0 * math.comb(m, l) for l in range(m + 1)}
    g = F.g_poly
    c = {}
    for l in range(m + 1):
        if l >= m1:
            c[l] = 0.0
            continue
        gl = g.deriv(l) if l else g
        z, w = gauss_nodes(40, sigma_sq)
        c[l] = float(np.dot(w, gl(z))) / math.factorial(l)
    a = {l: b[l] * gaussian_moment(m - l, sigma_sq) + c[l] for l in range(m + 1)}
    return ExpansionCoefficients(b, c, a)


@dataclass(frozen=True)
class FamilyPoint:
    epsilon: float
    F: NonlinearitySpec
    sigma_sq: float
    lam: LambdaVector


@dataclass
class AdmissibilityReport:
    checks: dict = field(default_factory=dict)

    def add(self, name: str, passed: bool, **witness) -> None:
        self.checks[name] = {"passed": bool(passed), **witness}

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())


def _young_rhs(coef: ExpansionCoefficients, m: int, m1: int, C1: float, x, y):
    def mono(l):
        return x ** ((l - 3) / (m - 3)) * y ** ((m - l) / (m - 3))

    out = np.zeros(np.broadcast(x, y).shape)
    for l in range(4, m1):
        if l % 2 == 0:
            out = out + 2 * abs(coef.c[l]) * mono(l)
        else:
            out = out + 2 * abs(min(coef.a[l], 0.0)) * mono(l)
    return out + 2 * C1 / math.factorial(m1) * mono(m1)


def assumption1_check(family: list[FamilyPoint], params, c_exp: float = 1.0,
                      cauchy_tol: float = 0.05, n_log: int = 121) -> AdmissibilityReport:
    """
    Check a nonlinearity family on its epsilon grid: polynomial shape and
    the ``m1``-th derivative bound of ``G``, the exponential derivative bound,
    convergence of the lambda vectors, ``lambda3 > 0`` and the Young-type
    inequality on a log-spaced ``(x, y)`` grid.  Each entry carries a witness.
    """
    rep = AdmissibilityReport()
    fam = sorted(family, key=lambda p: -p.epsilon)
    m1, delta = params.m1, params.delta
    shape_ok, C1s = True, []
    for p in fam:
        F = p.F
        g = F.g_poly
        if F.m != params.m or F.m < 5:
            shape_ok = False
        gd = g.deriv(m1) if g.degree() >= m1 else Polynomial([0.0])
        if gd.degree() > 0 and np.any(gd.coef[1:]):
            shape_ok = False
            C1s.append(np.inf)
        else:
            C1s.append(abs(float(gd.coef[0])))
    C1 = max(C1s)
    rep.add("shape", shape_ok, m=[p.F.m for p in fam], C1=C1)
    bounds = [p.F.derivative_bound(c_exp) for p in fam]
    rep.add("derivative_bound", all(np.isfinite(bounds)), sup=max(bounds), c=c_exp)
    lams = np.array([p.lam.as_tuple() for p in fam])
    if len(fam) >= 2:
        diffs = np.abs(np.diff(lams, axis=0)).max(axis=1)
        last = float(diffs[-1])
        scale = 1.0 + float(np.abs(lams[-1]).max())
        rep.add("lambda_cauchy", bool(np.all(np.isfinite(lams))) and last <= cauchy_tol * scale,
                increments=diffs.tolist(), limit=lams[-1].tolist())
    else:
        rep.add("lambda_cauchy", False, reason="need at least two epsilon values")
    lam3 = float(lams[-1, 3])
    rep.add("lambda3_positive", bool(np.all(lams[:, 3] > 0)), lambda3=lams[:, 3].tolist())
    xs = np.logspace(-6, 6, n_log)
    X, Yg = np.meshgrid(xs, xs, indexing="ij")
    worst = (np.inf, None, None)
    for p in fam:
        coef = expansion_coefficients(p.F, p.sigma_sq, m1)
        lhs = (p.F.C0 - delta) * X + (lam3 - delta) * Yg
        rhs = _young_rhs(coef, p.F.m, m1, C1, X, Yg)
        margin = (lhs - rhs) / (X + Yg)
        i = np.unravel_index(np.argmin(margin), margin.shape)
        if margin[i] < worst[0]:
            worst = (float(margin[i]), (float(X[i]), float(Yg[i])), p.epsilon)
    rep.add("young_inequality", worst[0] >= 0, min_margin=worst[0], witness_xy=worst[1],
            witness_eps=worst[2])
    return rep
