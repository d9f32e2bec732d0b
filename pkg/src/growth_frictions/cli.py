"""Command-line front end: config parsing, subcommands, CSV and plot-script
emission.

Config files are flat ``key = value`` text; blank lines and ``#`` comments
are ignored, parse errors name the offending line, unknown keys are hard
errors, and command-line flags override file values.  Every CSV gets a
header row and 17-significant-digit floats, so identical (config, seed)
pairs reproduce byte-identical artifacts.  Plot scripts are emitted as
standalone text referencing the CSVs by relative path; nothing here renders
images.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import lab, limit, qvi, simulate
from ._slope import NonConvergence, ParameterDegeneracy
from .market import CostParams, MarketParams, ModelConfig, ParameterError

DEFAULT_SWEEP_DELTAS = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 1e-5, 1e-6)
DEFAULT_COUPLE_DELTAS = (1e-2, 1e-3, 1e-4)
SUBCOMMANDS = ("solve", "limit", "sweep", "simulate", "reflect", "couple", "oracle", "verify")


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _parse_deltas(s: str) -> tuple:
    return tuple(float(tok) for tok in s.split(",") if tok.strip())


# key -> (caster, default); None defaults mean "must be supplied where used"
_KEYS = {
    "r": (float, None),
    "mu": (float, None),
    "sigma": (float, None),
    "delta": (float, None),
    "gamma": (float, None),
    "deltas": (_parse_deltas, None),
    "grid_n": (int, 2001),
    "tol": (float, 1e-6),
    "horizon": (float, 200.0),
    "dt": (float, 1e-3),
    "v0": (float, 1.0),
    "h0": (float, None),
    "n_paths": (int, 1000),
    "seed": (int, None),
    "bridge_correction": (_parse_bool, False),
    "dump_paths": (_parse_bool, False),
    "radius": (float, 0.02),
    "step": (float, 2e-3),
    "solution": (str, None),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict
    out_dir: Path

    def get(self, key: str):
        return self.values[key]

    def require(self, key: str):
        v = self.values[key]
        if v is None:
            raise ConfigError(f"missing key '{key}' (set it in the config file or pass --{key})")
        return v

    def market(self) -> MarketParams:
        return MarketParams(r=self.require("r"), mu=self.require("mu"),
                            sigma=self.require("sigma"))

    def model(self) -> ModelConfig:
        return ModelConfig(market=self.market(), costs=self.costs())

    def costs(self, default_delta: float | None = None) -> CostParams:
        delta = self.values["delta"]
        if delta is None:
            if default_delta is None:
                raise ConfigError("missing key 'delta' (set it in the config file or pass --delta)")
            delta = default_delta
        return CostParams(delta=delta, gamma=self.require("gamma"))

    def seed(self) -> int:
        v = self.values["seed"]
        if v is None:
            v = int(os.environ.get("GF_SEED", "0"))
        return v

    def sim(self, n_paths: int | None = None) -> simulate.SimConfig:
        return simulate.SimConfig(
            horizon=self.get("horizon"), dt=self.get("dt"), v0=self.get("v0"),
            h0=self.get("h0"), n_paths=n_paths or self.get("n_paths"),
            base_seed=self.seed(), bridge_correction=self.get("bridge_correction"),
        )


def parse_config(path: str | None = None, overrides: dict | None = None,
                 out_dir: str = ".") -> RunConfig:
    """Merge file values and flag overrides into a RunConfig.

    Flags win over file values; unknown keys and malformed lines are hard
    errors naming the location.
    """
    values = {key: default for key, (_, default) in _KEYS.items()}

    def assign(key: str, raw: str, where: str):
        if key not in _KEYS:
            raise ConfigError(f"{where}: unknown key '{key}'")
        caster = _KEYS[key][0]
        try:
            values[key] = caster(raw)
        except ValueError as err:
            raise ConfigError(f"{where}: bad value for '{key}': {err}") from None

    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as err:
            raise ConfigError(f"cannot read config file {path}: {err}") from None
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = stripped.partition("=")
            assign(key.strip(), raw.strip(), f"{path}:{lineno}")
    for key, raw in (overrides or {}).items():
        assign(key, raw, f"flag --{key}")
    return RunConfig(values=values, out_dir=Path(out_dir))


def _write(out_dir: Path, name: str, text: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / name
    target.write_text(text, encoding="utf-8")
    return target


SOLUTION_COLUMNS = ("r", "mu", "sigma", "delta", "gamma", "l", "x0", "a", "alpha",
                    "beta", "b", "residual_norm", "newton_iters", "original_cost_optimal")


def solution_csv(mp: MarketParams, cp: CostParams, sol: qvi.BoundarySolution) -> str:
    c = sol.candidate
    row = (mp.r, mp.mu, mp.sigma, cp.delta, cp.gamma, c.l, c.x0, c.a, c.alpha,
           c.beta, c.b, sol.residual_norm, sol.newton_iters, sol.original_cost_optimal)
    return ",".join(SOLUTION_COLUMNS) + "\n" + ",".join(_fmt(v) for v in row) + "\n"


def read_solution_csv(path: str):
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if len(lines) < 2 or tuple(lines[0].split(",")) != SOLUTION_COLUMNS:
        raise ConfigError(f"{path}: not a boundary solution file")
    vals = dict(zip(SOLUTION_COLUMNS, lines[1].split(",")))
    mp = MarketParams(r=float(vals["r"]), mu=float(vals["mu"]), sigma=float(vals["sigma"]))
    cp = CostParams(delta=float(vals["delta"]), gamma=float(vals["gamma"]))
    cand = qvi.BoundaryCandidate(l=float(vals["l"]), x0=float(vals["x0"]),
                                 a=float(vals["a"]), alpha=float(vals["alpha"]),
                                 beta=float(vals["beta"]), b=float(vals["b"]))
    sol = qvi.BoundarySolution(candidate=cand, residual_norm=float(vals["residual_norm"]),
                               newton_iters=int(vals["newton_iters"]),
                               original_cost_optimal=vals["original_cost_optimal"] == "1")
    return mp, cp, sol


def limit_csv(mp: MarketParams, gamma: float, sol: limit.LimitSolution) -> str:
    c = sol.candidate
    header = "r,mu,sigma,gamma,l0,x0,A,B,residual_norm,newton_iters"
    row = (mp.r, mp.mu, mp.sigma, gamma, c.l0, c.x0, c.A, c.B,
           sol.residual_norm, sol.newton_iters)
    return header + "\n" + ",".join(_fmt(v) for v in row) + "\n"


def growth_csv(est: simulate.GrowthEstimate) -> str:
    header = "mean_growth,std_error,n_paths,horizon,dt"
    row = (est.mean_growth, est.std_error, est.n_paths, est.horizon, est.dt)
    return header + "\n" + ",".join(_fmt(v) for v in row) + "\n"


def sweep_csv(table: lab.SweepTable) -> str:
    header = "delta,a,alpha,beta,b,l,rho,gap_lo,gap_hi,dist_A,dist_B"
    lines = [header]
    for row in table.rows:
        lines.append(",".join(_fmt(v) for v in (
            row.delta, row.a, row.alpha, row.beta, row.b, row.l, row.rho,
            row.gap_lo, row.gap_hi, row.dist_A, row.dist_B)))
    c = table.limit.candidate
    lines.append(",".join((
        _fmt(0.0), _fmt(c.A), "", "", _fmt(c.B), _fmt(c.l0),
        _fmt(table.market.r + c.l0), _fmt(0.0), _fmt(0.0), _fmt(0.0), _fmt(0.0))))
    return "\n".join(lines) + "\n"


def coupling_csv(rows) -> str:
    lines = ["delta,mean_sup_distance,n_paths"]
    for row in rows:
        lines.append(",".join((_fmt(row.delta), _fmt(row.mean_sup_distance), _fmt(row.n_paths))))
    return "\n".join(lines) + "\n"


def oracle_csv(result: lab.BruteForceResult) -> str:
    lines = ["a,alpha,beta,b,growth"]
    for row in result.values:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def impulse_paths_csv(rec: simulate.PathRecord) -> str:
    events = {int(round(ev.time / (rec.times[1] - rec.times[0]))):
              ("trade_lo" if ev.target < ev.pre_fraction else "trade_hi")
              for ev in rec.trade_events}
    lines = ["t,h,V,event"]
    for k, (t, h, v) in enumerate(zip(rec.times, rec.fractions, rec.wealths)):
        lines.append(f"{_fmt(t)},{_fmt(h)},{_fmt(v)},{events.get(k, '')}")
    return "\n".join(lines) + "\n"


def reflected_paths_csv(rec: simulate.ReflectedRecord) -> str:
    lines = ["t,h,V,event"]
    dl = np.diff(rec.buy_volume, prepend=0.0)
    dm = np.diff(rec.sell_volume, prepend=0.0)
    for k, (t, h, v) in enumerate(zip(rec.times, rec.fractions, rec.wealths)):
        event = "reflect_lo" if dl[k] > 0 else ("reflect_hi" if dm[k] > 0 else "")
        lines.append(f"{_fmt(t)},{_fmt(h)},{_fmt(v)},{event}")
    return "\n".join(lines) + "\n"


SWEEP_PLOT = """\
#!/usr/bin/env python3
\"\"\"Plot the delta sweep: boundaries and growth rate against delta.\"\"\"
import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("sweep.csv")))
lim = rows[-1]
rows = rows[:-1]
delta = [float(r["delta"]) for r in rows]
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
for col in ("a", "alpha", "beta", "b"):
    ax1.semilogx(delta, [float(r[col]) for r in rows], marker="o", label=col)
ax1.axhline(float(lim["a"]), color="k", lw=0.8, ls="--", label="A (limit)")
ax1.axhline(float(lim["b"]), color="k", lw=0.8, ls=":", label="B (limit)")
ax1.set_xlabel("delta"); ax1.set_ylabel("boundary"); ax1.legend(fontsize=8)
ax2.semilogx(delta, [float(r["rho"]) for r in rows], marker="o", label="rho(delta)")
ax2.axhline(float(lim["rho"]), color="k", lw=0.8, ls="--", label="r + l0")
ax2.set_xlabel("delta"); ax2.set_ylabel("growth rate"); ax2.legend(fontsize=8)
fig.tight_layout()
fig.savefig("sweep.png", dpi=150)
print("wrote sweep.png")
"""

COUPLING_PLOT = """\
#!/usr/bin/env python3
\"\"\"Plot mean sup-distance between coupled impulse and reflected paths.\"\"\"
import csv
import matplotlib.pyplot as plt

rows = list(csv.DictReader(open("coupling.csv")))
delta = [float(r["delta"]) for r in rows]
dist = [float(r["mean_sup_distance"]) for r in rows]
fig, ax = plt.subplots(figsize=(5, 4))
ax.loglog(delta, dist, marker="o")
ax.set_xlabel("delta"); ax.set_ylabel("mean sup distance")
fig.tight_layout()
fig.savefig("coupling.png", dpi=150)
print("wrote coupling.png")
"""


def _cmd_solve(cfg: RunConfig) -> int:
    mp, cp = cfg.market(), cfg.costs()
    sol = qvi.solve_boundaries(mp, cp)
    vf = qvi.build_value(mp, cp, sol)
    report = qvi.verify_qvi(mp, cp, vf, cfg.get("grid_n"), tol=cfg.get("tol"))
    _write(cfg.out_dir, "solution.csv", solution_csv(mp, cp, sol))
    _write(cfg.out_dir, "qvi_report.txt", report.summary() + "\n")
    print(f"solved: l={sol.candidate.l:.12g} residual={sol.residual_norm:.3e} "
          f"rho={mp.r + sol.candidate.l:.12g}")
    print(report.summary())
    if not report.passed:
        print("ERROR: qvi_violation", file=sys.stderr)
        return 1
    return 0


def _cmd_limit(cfg: RunConfig) -> int:
    mp = cfg.market()
    gamma = cfg.require("gamma")
    sol = limit.solve_limit(mp, gamma)
    report = limit.verify_hjb_limit(mp, gamma, sol, cfg.get("grid_n"), tol=cfg.get("tol"))
    _write(cfg.out_dir, "limit.csv", limit_csv(mp, gamma, sol))
    _write(cfg.out_dir, "hjb_report.txt", report.summary() + "\n")
    print(f"limit model: l0={sol.candidate.l0:.12g} A={sol.candidate.A:.8f} "
          f"B={sol.candidate.B:.8f}")
    print(report.summary())
    if not report.passed:
        print("ERROR: hjb_violation", file=sys.stderr)
        return 1
    return 0


def _cmd_sweep(cfg: RunConfig) -> int:
    mp = cfg.market()
    gamma = cfg.require("gamma")
    deltas = cfg.get("deltas") or DEFAULT_SWEEP_DELTAS
    try:
        table = lab.sweep_delta(mp, gamma, deltas)
    except NonConvergence as err:
        partial = getattr(err, "partial", None)
        if partial is not None and partial.rows:
            _write(cfg.out_dir, "sweep.csv", sweep_csv(partial))
        print(f"ERROR: non_convergence: {err}", file=sys.stderr)
        return 1
    report = lab.convergence_report(table)
    _write(cfg.out_dir, "sweep.csv", sweep_csv(table))
    _write(cfg.out_dir, "convergence_report.txt", report.text() + "\n")
    _write(cfg.out_dir, "convergence_report.csv", report.csv_text())
    _write(cfg.out_dir, "plot_sweep.py", SWEEP_PLOT)
    print(report.text())
    if report.flags:
        print("ERROR: monotonicity_violation", file=sys.stderr)
        return 1
    return 0


def _cmd_simulate(cfg: RunConfig) -> int:
    mp, cp = cfg.market(), cfg.costs()
    sol = qvi.solve_boundaries(mp, cp)
    sim = cfg.sim()
    est = simulate.estimate_growth_impulse(mp, cp, sol.candidate, sim)
    _write(cfg.out_dir, "growth.csv", growth_csv(est))
    if cfg.get("dump_paths"):
        rec = simulate.simulate_impulse_path(mp, cp, sol.candidate, sim, 0)
        _write(cfg.out_dir, "paths.csv", impulse_paths_csv(rec))
    rho = mp.r + sol.candidate.l
    print(f"impulse growth: {est.mean_growth:.8f} +- {est.std_error:.2e} "
          f"(solver rho {rho:.8f})")
    return 0


def _cmd_reflect(cfg: RunConfig) -> int:
    mp = cfg.market()
    gamma = cfg.require("gamma")
    sol = limit.solve_limit(mp, gamma)
    A, B = sol.candidate.A, sol.candidate.B
    sim = cfg.sim()
    est = simulate.estimate_growth_reflected(mp, gamma, A, B, sim)
    _write(cfg.out_dir, "growth.csv", growth_csv(est))
    if cfg.get("dump_paths"):
        rec = simulate.simulate_reflected_path(mp, gamma, A, B, sim, 0)
        _write(cfg.out_dir, "paths.csv", reflected_paths_csv(rec))
    rho = mp.r + sol.candidate.l0
    print(f"reflected growth: {est.mean_growth:.8f} +- {est.std_error:.2e} "
          f"(limit rho {rho:.8f})")
    return 0


def _cmd_couple(cfg: RunConfig) -> int:
    mp = cfg.market()
    gamma = cfg.require("gamma")
    deltas = cfg.get("deltas") or DEFAULT_COUPLE_DELTAS
    rows = simulate.couple_paths(mp, gamma, deltas, cfg.sim())
    _write(cfg.out_dir, "coupling.csv", coupling_csv(rows))
    _write(cfg.out_dir, "plot_coupling.py", COUPLING_PLOT)
    for row in rows:
        print(f"delta={row.delta:g}: mean sup distance {row.mean_sup_distance:.6f}")
    decreasing = all(r2.mean_sup_distance < r1.mean_sup_distance
                     for r1, r2 in zip(rows, rows[1:]))
    if not decreasing:
        print("ERROR: coupling_not_decreasing", file=sys.stderr)
        return 1
    return 0


def _cmd_oracle(cfg: RunConfig) -> int:
    mp, cp = cfg.market(), cfg.costs()
    sol = qvi.solve_boundaries(mp, cp)
    result = lab.brute_force_boundaries(mp, cp, sol.candidate,
                                        radius=cfg.get("radius"), step=cfg.get("step"))
    _write(cfg.out_dir, "grid.csv", oracle_csv(result))
    best = result.best
    step = cfg.get("step")
    print(f"brute-force argmax: a={best.a:.6f} alpha={best.alpha:.6f} "
          f"beta={best.beta:.6f} b={best.b:.6f} growth={result.best_value:.12g}")
    within = all(abs(u - v) <= step * (1 + 1e-9) for u, v in (
        (best.a, sol.candidate.a), (best.alpha, sol.candidate.alpha),
        (best.beta, sol.candidate.beta), (best.b, sol.candidate.b)))
    if not within:
        print("ERROR: oracle_mismatch", file=sys.stderr)
        return 1
    return 0


def _cmd_verify(cfg: RunConfig) -> int:
    path = cfg.require("solution")
    try:
        mp, cp, sol = read_solution_csv(path)
        res_norm = float(np.max(np.abs(qvi.residual_system(mp, cp, sol.candidate))))
        if res_norm > qvi.RESIDUAL_TOL:
            raise ParameterError(f"stored candidate has residual norm {res_norm:.3e}")
        vf = qvi.build_value(mp, cp, sol)
        report = qvi.verify_qvi(mp, cp, vf, cfg.get("grid_n"), tol=cfg.get("tol"))
    except (ParameterError, ParameterDegeneracy, ValueError) as err:
        print(f"ERROR: qvi_violation: {err}", file=sys.stderr)
        return 1
    print(report.summary())
    if not report.passed:
        print("ERROR: qvi_violation", file=sys.stderr)
        return 1
    print(f"verified: residual_norm={res_norm:.3e}")
    return 0


_COMMANDS = {
    "solve": _cmd_solve,
    "limit": _cmd_limit,
    "sweep": _cmd_sweep,
    "simulate": _cmd_simulate,
    "reflect": _cmd_reflect,
    "couple": _cmd_couple,
    "oracle": _cmd_oracle,
    "verify": _cmd_verify,
}


def run(subcommand: str, cfg: RunConfig) -> int:
    """Dispatch a subcommand; returns the process exit status."""
    if subcommand not in _COMMANDS:
        raise ConfigError(f"unknown subcommand '{subcommand}'")
    return _COMMANDS[subcommand](cfg)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="growth-frictions",
        description="Constant-boundary trading strategies under fixed plus "
                    "proportional transaction costs",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key = value file")
        p.add_argument("--out", default=".", help="output directory")
        for key in _KEYS:
            p.add_argument(f"--{key}", default=None, dest=f"key_{key}")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {key: getattr(args, f"key_{key}")
                 for key in _KEYS if getattr(args, f"key_{key}") is not None}
    try:
        cfg = parse_config(args.config, overrides, out_dir=args.out)
        return run(args.subcommand, cfg)
    except ConfigError as err:
        print(f"ERROR: config: {err}", file=sys.stderr)
        return 1
    except (ParameterError, ParameterDegeneracy) as err:
        print(f"ERROR: invariant_violation: {err}", file=sys.stderr)
        return 1
    except NonConvergence as err:
        print(f"ERROR: non_convergence: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
