"""Command-line front end: ``dairopt {solve,pareto,convergence,problems}``.

Exit codes: 0 success, 1 configuration error, 2 accuracy request relaxed,
3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import io as out_io
from .driver import (AccuracyRequest, DairError, RolloutError, convergence_study, dair_solve,
                     default_pareto_grid, pareto_sweep, represent_solution, simulate_rollout,
                     solve_collocation, solve_residual)
from .mesh import MeshError, build_mesh
from .metrics import trajectory_cost
from .problems import get_problem, problem_names
from .problems import cartpole as _cartpole
from .solver import BackendError, SolverOptions
from .transcription import mirs_values

OUT_ENV = "DAIROPT_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_RELAXED, EXIT_FAILURE = 0, 1, 2, 3
METHODS = ("collocation", "dair", "represent", "pareto", "convergence")
EMITS = ("csv", "json", "svg")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str
    method: str = "dair"
    scheme: Optional[str] = None
    degree: Optional[int] = None
    K: Optional[int] = None
    K_list: list = field(default_factory=lambda: [8, 16, 32, 64])
    mirs: Optional[list] = None
    feasibility_tol: float = 1e-6
    weights: Optional[list] = None
    jc: Optional[float] = None
    points: int = 8
    workers: int = 1
    seed: int = 0
    out: Optional[str] = None
    emit: list = field(default_factory=lambda: list(EMITS))
    solver: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "problem" not in d or not d["problem"]:
            raise ConfigError("a problem name is required")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        try:
            case = get_problem(self.problem)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        scheme = self.scheme_name(case)
        if scheme == "lgr" and self.degree_value(case) is None:
            raise ConfigError("lgr needs --degree")
        if self.K is not None and (not isinstance(self.K, int) or self.K < 1):
            raise ConfigError("K must be a positive integer")
        ks = list(self.K_list)
        if not ks or any(not isinstance(k, int) or k < 1 for k in ks) or any(b <= a for a, b in zip(ks, ks[1:])):
            raise ConfigError("K_list must be strictly increasing positive integers")
        dop = case.make()
        if self.mirs is not None:
            m = list(self.mirs)
            if len(m) not in (1, dop.n_eq):
                raise ConfigError(f"mirs needs 1 or {dop.n_eq} entries")
            try:
                AccuracyRequest(tuple(m), self.feasibility_tol)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (dop.n_eq,) or np.any(~np.isfinite(w)) or np.any(w < 0) or not np.any(w > 0):
                raise ConfigError(f"weights need {dop.n_eq} finite nonnegative entries, not all zero")
        if self.jc is not None and not np.isfinite(self.jc):
            raise ConfigError("jc must be finite")
        if self.points < 1 or self.workers < 1:
            raise ConfigError("points and workers must be positive")
        bad = sorted(set(self.emit) - set(EMITS))
        if bad:
            raise ConfigError(f"unknown emit kinds {bad}")
        try:
            self.solver_options()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    # resolved settings
    def scheme_name(self, case) -> str:
        s = self.scheme or case.scheme
        return {"hs": "hermite-simpson"}.get(s, s)

    def degree_value(self, case):
        if self.degree is not None:
            return self.degree
        return case.degree if self.scheme_name(case) == case.scheme else None

    def mesh(self, case, K=None):
        return build_mesh(self.scheme_name(case), K or self.K or case.K, degree=self.degree_value(case))

    def weight_vector(self, case):
        if self.weights is not None:
            return np.asarray(self.weights, dtype=float)
        return None if case.weights is None else np.asarray(case.weights, dtype=float)

    def request(self, n_eq):
        m = self.mirs if self.mirs is not None else [1e-6]
        v = np.full(n_eq, float(m[0])) if len(m) == 1 else np.asarray(m, dtype=float)
        return AccuracyRequest(tuple(v), self.feasibility_tol)

    def solver_options(self) -> SolverOptions:
        return SolverOptions.from_dict(dict(self.solver))

    def out_dir(self) -> str:
        root = self.out or os.environ.get(OUT_ENV) or "dairopt-out"
        return os.path.join(root, f"{self.problem}-{self.method}")


# ----- outputs -------------------------------------------------------------------

def _write(cfg: RunConfig, name: str, text: str) -> str:
    path = os.path.join(cfg.out_dir(), name)
    out_io.write_text(path, text)
    return path


def _trajectory_svgs(cfg, dop, traj, errors):
    t = np.linspace(traj.t0, traj.tf, 500)
    x, _, u = traj.evaluate(t)
    palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]
    for name, data, labels in (("states", x, dop.state_names or [f"x{i}" for i in range(dop.n)]),
                               ("inputs", u, dop.input_names or [f"u{i}" for i in range(dop.m)])):
        plot = out_io.SvgPlot(title=name, xlabel="t")
        for i in range(data.shape[0]):
            plot.line(t, data[i], label=str(labels[i]), color=palette[i % len(palette)])
        _write(cfg, f"{name}.svg", plot.render())
    plot = out_io.SvgPlot(title="absolute local error per interval", xlabel="interval", ylabel="eta", logy=True)
    k = np.arange(errors.eta.size)
    plot.line(np.repeat(k, 2) + np.tile([0.0, 1.0], k.size), np.repeat(errors.eta, 2), label="eta")
    _write(cfg, "residual.svg", plot.render())


def _emit_run(cfg, dop, report: dict, traj, errors, outcomes):
    if "json" in cfg.emit:
        _write(cfg, "report.json", out_io.json_text(report))
    if "csv" in cfg.emit:
        _write(cfg, "trajectory.csv", out_io.trajectory_csv(dop, traj))
        _write(cfg, "errors.csv", errors.interval_csv())
        for name, outcome in outcomes:
            _write(cfg, f"iterations-{name}.csv", outcome.log_csv())
    if "svg" in cfg.emit:
        _trajectory_svgs(cfg, dop, traj, errors)


# ----- commands ------------------------------------------------------------------

def cmd_solve(cfg: RunConfig) -> int:
    case = get_problem(cfg.problem)
    dop = case.make()
    mesh = cfg.mesh(case)
    opts = cfg.solver_options()
    W = cfg.weight_vector(case)
    base = {"problem": cfg.problem, "method": cfg.method, "scheme": mesh.scheme, "K": mesh.K,
            "degree": mesh.degree, "seed": cfg.seed, "solver": opts.to_dict()}
    if cfg.method == "collocation":
        rep = solve_collocation(dop, mesh, opts, weights=W)
        report = dict(base, objective=rep.objective, trajectory_cost=trajectory_cost(dop, rep.trajectory),
                      status=rep.outcome.status, iterations=rep.outcome.iterations,
                      errors=rep.errors.to_dict())
        _emit_run(cfg, dop, report, rep.trajectory, rep.errors, [("collocation", rep.outcome)])
        return EXIT_OK if rep.outcome.success else EXIT_FAILURE

    if cfg.method == "represent":
        col = solve_collocation(dop, mesh, opts, weights=W)
        if not col.outcome.success:
            print(f"collocation solve failed: {col.outcome.status}", file=sys.stderr)
            return EXIT_FAILURE
        req = cfg.request(dop.n_eq) if cfg.mirs is not None else None
        rep = represent_solution(dop, mesh, col.x, req, opts, weights=W)
        report = dict(base, collocation={"objective": col.objective, "status": col.outcome.status,
                                         "errors": col.errors.to_dict()}, **rep.to_dict())
        report["trajectory_cost"] = trajectory_cost(dop, rep.trajectory)
        _emit_run(cfg, dop, report, rep.trajectory, rep.errors,
                  [("collocation", col.outcome), ("residual", rep.residual)])
        if rep.relaxed:
            return EXIT_RELAXED
        return EXIT_OK

    # dair
    req = cfg.request(dop.n_eq)
    if cfg.jc is not None:
        res = solve_residual(dop, mesh, opts, weights=W, J_c=cfg.jc)
        report = dict(base, jc=cfg.jc, objective=res.objective, status=res.outcome.status,
                      errors=res.errors.to_dict())
        _emit_run(cfg, dop, report, res.trajectory, res.errors, [("residual", res.outcome)])
        return EXIT_OK if res.outcome.success else EXIT_FAILURE
    try:
        rep = dair_solve(dop, mesh, req, opts, weights=W)
    except DairError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAILURE
    report = dict(base, request=list(req.mirs), **rep.to_dict())
    report["trajectory_cost"] = trajectory_cost(dop, rep.trajectory)
    _emit_run(cfg, dop, report, rep.trajectory, rep.errors,
              [("residual", rep.residual), ("cost", rep.cost)])
    if rep.relaxed:
        return EXIT_RELAXED
    return EXIT_OK if rep.cost_accepted and rep.cost.success else EXIT_FAILURE


def sweep_violation(case, dop):
    """Marker metric for sweeps: rollout terminal violation where defined."""
    if case.name == "cartpole":
        def metric(traj):
            try:
                return _cartpole.terminal_violation(simulate_rollout(dop, traj).terminal_state)
            except RolloutError:
                return float("inf")
        return metric
    if dop.n_g == 0:
        def metric(traj):
            try:
                return float(simulate_rollout(dop, traj).deviation[-1])
            except RolloutError:
                return float("inf")
        return metric
    metric = case.metrics.get("manifold_drift")
    return metric or (lambda traj: float("nan"))


def cmd_pareto(cfg: RunConfig) -> int:
    case = get_problem(cfg.problem)
    dop = case.make()
    mesh = cfg.mesh(case)
    opts = cfg.solver_options()
    W = cfg.weight_vector(case)
    if cfg.mirs is not None:
        base = cfg.request(dop.n_eq)
        floor = np.asarray(base.mirs)
    else:
        floor_run = solve_residual(dop, mesh, opts, weights=W)
        if floor_run.outcome.status == "numerical-failure":
            print("residual minimization for the sweep floor failed", file=sys.stderr)
            return EXIT_FAILURE
        floor = mirs_values(dop, mesh, floor_run.x)
    grid = default_pareto_grid(floor, count=cfg.points)
    points = pareto_sweep(dop, mesh, grid, opts, weights=W, violation=sweep_violation(case, dop),
                          workers=cfg.workers)
    rows = [[p.label, p.mirns, p.objective, p.violation, "true" if p.dominated else "false", p.status]
            for p in points]
    if "csv" in cfg.emit:
        _write(cfg, "pareto.csv", out_io.csv_text(
            ["label", "mirns", "objective", "terminal_violation", "dominated", "status"], rows))
    if "json" in cfg.emit:
        _write(cfg, "pareto.json", out_io.json_text({
            "problem": cfg.problem, "K": mesh.K, "scheme": mesh.scheme, "floor": floor,
            "points": [{"label": p.label, "mirns": p.mirns, "objective": p.objective,
                        "violation": p.violation, "dominated": p.dominated, "status": p.status,
                        "request": p.request, "error": p.error} for p in points]}))
    if "svg" in cfg.emit:
        _write(cfg, "pareto.svg", pareto_svg(points))
    return EXIT_FAILURE if any(p.status == "failed" for p in points) else EXIT_OK


def marker_radii(violations, max_radius: float = 20.0) -> np.ndarray:
    """Radii proportional to violation, the largest finite one drawn at ``max_radius``."""
    v = np.asarray(violations, dtype=float)
    finite = v[np.isfinite(v)]
    top = float(np.max(finite)) if finite.size and np.max(finite) > 0 else 1.0
    return np.where(np.isfinite(v), v * (max_radius / top), max_radius)


def pareto_svg(points) -> str:
    plot = out_io.SvgPlot(title="accuracy versus optimality", xlabel="MIRNS", ylabel="J", logx=True)
    radii = marker_radii([p.violation for p in points])
    d = [(p, r) for p, r in zip(points, radii) if p.label != "collocation"]
    c = [(p, r) for p, r in zip(points, radii) if p.label == "collocation"]
    if d:
        plot.points([p.mirns for p, _ in d], [p.objective for p, _ in d], [r for _, r in d],
                    label="dair", color="#1f77b4")
    if c:
        plot.points([p.mirns for p, _ in c], [p.objective for p, _ in c], [r for _, r in c],
                    label="collocation", color="#d62728")
    return plot.render()


def cmd_convergence(cfg: RunConfig) -> int:
    case = get_problem(cfg.problem)
    dop = case.make()
    opts = cfg.solver_options()
    W = cfg.weight_vector(case)
    reference = None
    if case.analytic and "state" in case.analytic:
        exact = case.analytic["state"]
        reference = lambda t: np.atleast_2d(exact(t))
    table = convergence_study(dop, cfg.scheme_name(case), cfg.K_list, None, opts, weights=W,
                              degree=cfg.degree_value(case), workers=cfg.workers, reference=reference)
    rows = []
    nan = [float("nan")] * len(table.K)
    for method in ("collocation", "dair"):
        errs = table.state_error.get(method, nan)
        for K, v, e, st in zip(table.K, table.mirns[method], errs, table.status[method]):
            rows.append([method, int(K), v, e, st])
    if "csv" in cfg.emit:
        _write(cfg, "convergence.csv", out_io.csv_text(["method", "K", "mirns", "state_error", "status"], rows))
    if "json" in cfg.emit:
        _write(cfg, "convergence.json", out_io.json_text(
            {"problem": cfg.problem, "K": table.K, "mirns": table.mirns, "status": table.status,
             "slopes": table.slopes, "state_error": table.state_error,
             "state_error_slopes": table.state_slopes}))
    if "svg" in cfg.emit:
        plot = out_io.SvgPlot(title="MIRNS versus K", xlabel="K", ylabel="MIRNS", logx=True, logy=True)
        for method, color in (("collocation", "#d62728"), ("dair", "#1f77b4")):
            plot.line(table.K, table.mirns[method], label=f"{method} slope {table.slopes[method]:.2f}", color=color)
        svg = plot.render().replace("</svg>\n", "".join(
            f'<text x="80" y="{60 + 15 * i}" font-size="11">{m}: slope {table.slopes[m]:.2f}</text>\n'
            for i, m in enumerate(("collocation", "dair"))) + "</svg>\n")
        _write(cfg, "convergence.svg", svg)
    failed = any(str(s).startswith("failed") for st in table.status.values() for s in st)
    return EXIT_FAILURE if failed else EXIT_OK


# ----- argument parsing ----------------------------------------------------------

def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dairopt", description="Direct collocation and alternating "
                                "integrated-residual trajectory optimization.")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("--problem")
        sp.add_argument("--scheme", choices=("hs", "lgr"))
        sp.add_argument("--degree", type=int)
        sp.add_argument("--K", type=int)
        sp.add_argument("--mirs", type=_floats, help="scalar or comma-separated per-equation list")
        sp.add_argument("--weights", type=_floats, help="comma-separated residual weights")
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iterations", type=int)
        sp.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./dairopt-out)")
        sp.add_argument("--emit", type=lambda s: [v for v in s.split(",") if v],
                        help="comma-separated subset of csv,json,svg")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--config", help="JSON run config; its keys override flags")

    s = sub.add_parser("solve", help="single solve")
    common(s)
    s.add_argument("--method", choices=("collocation", "dair", "represent"))
    s.add_argument("--jc", type=float, help="objective cap for residual minimization")
    s = sub.add_parser("pareto", help="accuracy/optimality sweep")
    common(s)
    s.add_argument("--points", type=int)
    s = sub.add_parser("convergence", help="uniform refinement study")
    common(s)
    s.add_argument("--K-list", dest="K_list", type=_ints)
    sub.add_parser("problems", help="list registered problems with their default configs")
    return p


def config_from_args(ns) -> RunConfig:
    d = {}
    for key in ("problem", "scheme", "degree", "K", "mirs", "weights", "out", "emit", "workers",
                "seed", "jc", "points", "K_list", "method"):
        v = getattr(ns, key, None)
        if v is not None:
            d[key] = v
    solver = {}
    if ns.tol is not None:
        solver["tol"] = ns.tol
    if ns.max_iterations is not None:
        solver["max_iterations"] = ns.max_iterations
    if solver:
        d["solver"] = solver
    if ns.command in ("pareto", "convergence"):
        d["method"] = ns.command
    if ns.config:
        try:
            with open(ns.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        if "solver" in file_cfg and "solver" in d:
            file_cfg = dict(file_cfg, solver=dict(d["solver"], **file_cfg["solver"]))
        d.update(file_cfg)
    if ns.command == "solve" and d.get("method") in ("pareto", "convergence"):
        raise ConfigError("use the pareto or convergence subcommand for studies")
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2, which is reserved for relaxed requests here
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    if ns.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    if ns.command == "problems":
        for name in problem_names():
            print(get_problem(name).config_json().replace("\n", " "))
        return EXIT_OK
    try:
        cfg = config_from_args(ns)
    except (ConfigError, TypeError, MeshError, BackendError) as exc:
        parser.print_usage(sys.stderr)
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg.mesh(get_problem(cfg.problem))
    except MeshError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    cmd = {"pareto": cmd_pareto, "convergence": cmd_convergence}.get(cfg.method, cmd_solve)
    code = cmd(cfg)
    print(f"wrote {cfg.out_dir()} (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main())
