"""
Batch runner: ``paraspde <subcommand> [--config PATH] [--seed N] [--workers N] [--out DIR]``.

Every CSV row carries the config hash and package version.  Files are
written as ``name.csv.partial`` and renamed once complete.
"""

from __future__ import annotations

import argparse
import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import hashlib
import json
import math
from pathlib import Path
import sys

import numpy as np

from . import __version__
from .besov import AnalysisParams, Weight
from .chaos import NonlinearitySpec, _profile_sigma_sq, chaos_coeffs, d_constants, lambda_vector
from .decomposition import (NormMonitor, calibrate_M_delta, decompose, max_principle_check,
                            scalar_forced_psi)
from .grid import Grid, SpaceTimeField, write_snapshot
from .noise import LatticeCovariance, NoiseSpec, default_dt
from .solver import converge_sweep, simulate_u_eps
from .trees import HomogeneityTable, NAMES, build_enhancement, measure_regularity

PRESETS = {
    "x3": {"C0": 1.0, "m": 3, "G": []},
    "x5": {"C0": 1.0, "m": 5, "G": []},
    "x5+x4": {"C0": 1.0, "m": 5, "G": [0, 0, 0, 0, 0.5]},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dim: int = 1
    box_length: float = 8.0
    params: dict = field(default_factory=dict)
    nonlinearity: object = "x5"
    noise: dict = field(default_factory=dict)
    eps_grid: list = field(default_factory=lambda: [0.5, 0.25])
    ensemble: int = 4
    seed: int = 0
    n_frames: int = 40
    T: float = 0.25
    n_obs: int = 32
    L: int = 1
    M_levels: list = field(default_factory=lambda: [1.0, 10.0, 100.0])
    forcing: list = field(default_factory=lambda: [-20.0, -1.0, 0.0, 1.0, 20.0])

    @classmethod
    def from_json(cls, doc: dict) -> "ExperimentConfig":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            self.analysis
            self.F
            self.noise_spec
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.dim not in (1, 2, 3):
            raise ConfigError("dim must be 1, 2 or 3")
        if not self.eps_grid or any(not 0 < e <= 1 for e in self.eps_grid):
            raise ConfigError("eps_grid entries must lie in (0, 1]")
        if self.ensemble < 1 or self.n_frames < 1:
            raise ConfigError("ensemble and n_frames must be positive")

    @property
    def analysis(self) -> AnalysisParams:
        return AnalysisParams(**self.params)

    @property
    def F(self) -> NonlinearitySpec:
        nl = self.nonlinearity
        if isinstance(nl, str):
            if nl not in PRESETS:
                raise ValueError(f"unknown nonlinearity preset {nl!r}")
            nl = PRESETS[nl]
        return NonlinearitySpec(float(nl["C0"]), int(nl["m"]), tuple(nl.get("G", ())))

    @property
    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(**self.noise)

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def grid_for(self, eps: float) -> Grid:
        n = 1 << max(3, math.ceil(math.log2(self.box_length / (eps / 4) - 1e-9)))
        if self.dim == 3:
            n = min(n, 32)
        return Grid(self.dim, n, self.box_length)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


class CsvSink:
    def __init__(self, out: Path, name: str, cfg: ExperimentConfig):
        out.mkdir(parents=True, exist_ok=True)
        self.path = out / f"{name}.csv"
        self.tmp = out / f"{name}.csv.partial"
        self.cfg = cfg
        self.rows = []

    def add(self, row: dict) -> None:
        self.rows.append(row)

    def close(self) -> Path:
        keys = []
        for r in self.rows:
            keys += [k for k in r if k not in keys]
        keys += ["config_hash", "version"]
        with open(self.tmp, "w", newline="", encoding="utf-8") as fh:
            wr = csv.DictWriter(fh, fieldnames=keys, lineterminator="\r\n")
            wr.writeheader()
            for r in self.rows:
                wr.writerow({**{k: _fmt(v) for k, v in r.items()},
                             "config_hash": self.cfg.hash, "version": __version__})
        self.tmp.replace(self.path)
        return self.path


# ---------------------------------------------------------------------------
# shared setup


@dataclass
class Scale:
    eps: float
    grid: Grid
    dt: float
    T: float
    sigma_sq: float
    chaos: object
    rc: object
    lam: object


def _scale(cfg: ExperimentConfig, eps: float, finite_time: bool = True) -> Scale:
    spec, mu = cfg.noise_spec, cfg.analysis.mu
    grid = cfg.grid_for(eps)
    dt = default_dt(spec, eps)
    T = cfg.n_frames * dt
    cov = LatticeCovariance(spec, grid, eps, mu, dt)
    s2 = _profile_sigma_sq(cov, eps)
    ch = chaos_coeffs(cfg.F, s2)
    rc = d_constants(ch, cov, eps, mu, t_cut=T if finite_time else None)
    lam = lambda_vector(*(ch.coef(i) for i in range(4)), rc, eps)
    return Scale(eps, grid, dt, T, s2, ch, rc, lam)


def _seeds(cfg: ExperimentConfig) -> list[int]:
    ss = np.random.SeedSequence(cfg.seed)
    return [int(c.generate_state(1, np.uint32)[0]) for c in ss.spawn(cfg.ensemble)]


def _trajectory(cfg: ExperimentConfig, sc: Scale, seed: int):
    return simulate_u_eps(sc.eps, cfg.F, cfg.noise_spec, None, seed, sc.T, sc.grid, cfg.analysis.mu,
                          sc.dt, with_Y=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_renorm(cfg, out, workers):
    sink = CsvSink(out, "renorm", cfg)
    for eps in cfg.eps_grid:
        sc = _scale(cfg, eps, finite_time=False)
        row = {"epsilon": eps, "sigma_sq": sc.sigma_sq}
        row.update({f"f{i}": sc.chaos.coef(i) for i in range(4)})
        row.update(sc.rc.as_dict())
        row["d32_prime_direct"] = sc.rc.d32_prime_direct
        row.update({f"lambda{i}": v for i, v in enumerate(sc.lam.as_tuple())})
        sink.add(row)
    return sink.close()


def _trees_task(args):
    cfg, eps, seed = args
    sc = _scale(cfg, eps)
    tr = _trajectory(cfg, sc, seed)
    enh = build_enhancement(tr.Y, cfg.F, sc.rc, eps, cfg.analysis.mu, sc.chaos)
    table = HomogeneityTable(0.3)
    rows = []
    for name, f in [("Y", tr.Y)] + list(enh.items()):
        try:
            fit = measure_regularity(f)
            est, lo, hi = fit.exponent, fit.ci[0], fit.ci[1]
        except ValueError:
            est = lo = hi = float("nan")
        rows.append({"epsilon": eps, "seed": seed, "component": name, "exponent": est, "ci_low": lo,
                     "ci_high": hi, "homogeneity": -0.5 - 0.3 if name == "Y" else table[name]})
    return rows


def _pool_map(fn, tasks, workers):
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


def cmd_trees(cfg, out, workers):
    sink = CsvSink(out, "trees", cfg)
    tasks = [(cfg, eps, s) for eps in cfg.eps_grid for s in _seeds(cfg)]
    for rows in _pool_map(_trees_task, tasks, workers):
        for r in rows:
            sink.add(r)
    return sink.close()


def cmd_simulate(cfg, out, workers):
    sink = CsvSink(out, "simulate", cfg)
    for eps in cfg.eps_grid:
        sc = _scale(cfg, eps)
        for seed in _seeds(cfg):
            tr = _trajectory(cfg, sc, seed)
            path = out / f"u_eps{eps:g}_seed{seed}.spdefld"
            write_snapshot(path, tr.u)
            sink.add({"epsilon": eps, "seed": seed, "n_frames": tr.u.n_frames, "dt": sc.dt,
                      "sup_u": float(np.abs(tr.u.values).max()), "snapshot": path.name})
    return sink.close()


def _decompose_task(args):
    cfg, eps, seed = args
    sc = _scale(cfg, eps)
    tr = _trajectory(cfg, sc, seed)
    enh = build_enhancement(tr.Y, cfg.F, sc.rc, eps, cfg.analysis.mu, sc.chaos)
    st = decompose(tr.u, enh, sc.rc, sc.lam, cfg.analysis, tr.Y, cfg.F, eps, L=cfg.L, chaos=sc.chaos,
                   strict=False)
    mon = NormMonitor.from_state(st, cfg.analysis)
    row = {"epsilon": eps, "seed": seed, "recombination": st.recombination_residual,
           "rhs_oracle": st.rhs_residual, "ansatz": st.ansatz_residual,
           "split_phi": st.split_residual[0], "split_psi": st.split_residual[1]}
    row.update(mon.summary())
    row.update({f"T_eps_M{M:g}": mon.stopping_time(M) for M in cfg.M_levels})
    return row


def cmd_decompose(cfg, out, workers):
    sink = CsvSink(out, "decompose", cfg)
    tasks = [(cfg, eps, s) for eps in cfg.eps_grid for s in _seeds(cfg)]
    for row in _pool_map(_decompose_task, tasks, workers):
        sink.add(row)
    return sink.close()


def _converge_task(args):
    cfg, seed, lam3 = args
    eps_grid = sorted(cfg.eps_grid, reverse=True)
    p = cfg.analysis
    ref = "cubic" if cfg.dim == 1 else "finest"
    res = converge_sweep(eps_grid, cfg.F, [seed], cfg.noise_spec, cfg.dim, cfg.box_length, cfg.T, cfg.n_obs,
                         p.mu, 0.3, Weight(p.nu, 1.5 + p.gamma1), ref, lambda e: lam3[e],
                         dt_obs=default_dt(cfg.noise_spec, eps_grid[0]))
    return res.rows


def cmd_converge(cfg, out, workers):
    sink = CsvSink(out, "converge", cfg)
    lam3 = {}
    for eps in cfg.eps_grid:
        lam3[eps] = _scale(cfg, eps, finite_time=False).lam.lambda3
    rows = [r for rs in _pool_map(_converge_task, [(cfg, s, lam3) for s in _seeds(cfg)], workers) for r in rs]
    rows.sort(key=lambda r: (-r["epsilon"], r["seed"]))
    for r in rows:
        sink.add(r)
    by_eps = {}
    for r in rows:
        by_eps.setdefault(r["epsilon"], []).append(r["distance"])
    summ = CsvSink(out, "converge_summary", cfg)
    for e in sorted(by_eps, reverse=True):
        summ.add({"epsilon": e, "median_distance": float(np.median(by_eps[e])), "n": len(by_eps[e])})
    summ.close()
    return sink.close()


def cmd_maxprinciple(cfg, out, workers):
    sink = CsvSink(out, "maxprinciple", cfg)
    p = cfg.analysis
    F = cfg.F
    m = max(F.m, 5)
    eps = cfg.eps_grid[0]
    sc = _scale(cfg, eps)
    Md = calibrate_M_delta(sc.grid, p.nu, m, p.delta, sc.lam.lambda3, F.C0, p.mu)
    for f in cfg.forcing:
        psi, Psi = scalar_forced_psi(sc.grid, sc.dt, cfg.n_frames, f, sc.lam.lambda3, F.C0, m, eps, p.mu)
        rep = max_principle_check(psi, Psi, psi.frame(0), sc.lam.lambda3, F.C0, 0.0, m, 5, eps,
                                  Weight(p.nu, 1.0), p.mu, p.delta, Md)
        sink.add({"kind": "scalar", "epsilon": eps, "forcing": f, "seed": "", "lhs": rep.lhs, "rhs": rep.rhs,
                  "M_delta": rep.M_delta, "margin": rep.margin})
    if F.m >= 5:
        for seed in _seeds(cfg):
            tr = _trajectory(cfg, sc, seed)
            enh = build_enhancement(tr.Y, F, sc.rc, eps, p.mu, sc.chaos)
            st = decompose(tr.u, enh, sc.rc, sc.lam, p, tr.Y, F, eps, L=cfg.L, chaos=sc.chaos, strict=False)
            rep = _decomposition_margin(st, sc, F, p, Md)
            sink.add({"kind": "decomposition", "epsilon": eps, "forcing": "", "seed": seed, "lhs": rep.lhs,
                      "rhs": rep.rhs, "M_delta": rep.M_delta, "margin": rep.margin})
    return sink.close()


def _decomposition_margin(st, sc, F, p, Md):
    """Maximum-principle check of a decomposition; odd powers beyond the two leading ones join the source."""
    extra = {k: c for k, c in st.poly_coeffs.items() if k not in (3, F.m)}
    a1, l = 0.0, 5
    if len(extra) == 1:
        (l, c), = extra.items()
        a1 = c / sc.eps ** ((l - 3) / 2)
        extra = {}
    x = st.psi.values
    src = -st.Psi.values - sum(c * x**k for k, c in extra.items())
    Psi = SpaceTimeField(st.psi.grid, st.psi.dt, src)
    return max_principle_check(st.psi, Psi, st.psi.frame(0), sc.lam.lambda3, F.C0, a1, F.m, l, sc.eps,
                               Weight(p.nu, 1.0), p.mu, p.delta, Md)


def cmd_selftest(cfg, out, workers):
    from .selftest import run_all
    results = run_all(cfg)
    sink = CsvSink(out, "selftest", cfg)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
        sink.add({"check": name, "passed": int(ok), "detail": detail})
    sink.close()
    return all(ok for _, ok, _ in results)


COMMANDS = {"renorm": cmd_renorm, "trees": cmd_trees, "simulate": cmd_simulate, "decompose": cmd_decompose,
            "converge": cmd_converge, "maxprinciple": cmd_maxprinciple, "selftest": cmd_selftest}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="paraspde", description="Batch experiments with reproducible CSV output.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", type=Path, default=Path("out"))
    return ap


def load_config(path: Path | None, seed: int | None) -> ExperimentConfig:
    doc = {}
    if path is not None:
        doc = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    if seed is not None:
        if not 0 <= seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        doc["seed"] = seed
    return ExperimentConfig.from_json(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"paraspde: invalid config: {exc}", file=sys.stderr)
        return 1
    result = COMMANDS[args.command](cfg, args.out, max(1, args.workers))
    if result is False:
        return 1
    if isinstance(result, Path):
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
