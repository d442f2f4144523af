"""Alternating residual/cost procedure, solution representation and studies."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .mesh import Mesh, build_mesh
from .metrics import ErrorReport, ResidualConfig, local_errors, state_error, trajectory_cost
from .problem import DopDefinition, Trajectory
from .solver import SolveOutcome, SolverOptions, solve
from .transcription import (build_collocation, build_dair_cost, build_dair_residual,
                            dair_cost_value, interpolate_solution, mirs_values)

MET = "met-requirement"
RELAXED = "relaxed-to-achievable"


class DairError(RuntimeError):
    """The residual phase could not produce a usable iterate."""


class RolloutError(RuntimeError):
    def __init__(self, message, blowup_time):
        super().__init__(message)
        self.blowup_time = blowup_time


@dataclass(frozen=True)
class AccuracyRequest:
    """Requested per-equation MIRS bounds and a feasibility tolerance."""

    mirs: tuple
    feasibility_tol: float = 1e-6

    def __post_init__(self):
        v = np.asarray(self.mirs, dtype=float)
        if v.ndim != 1 or v.size == 0 or np.any(~np.isfinite(v)) or np.any(v <= 0):
            raise ValueError("requested MIRS bounds must be finite and strictly positive")
        if not self.feasibility_tol > 0:
            raise ValueError("feasibility_tol must be positive")
        object.__setattr__(self, "mirs", tuple(float(x) for x in v))

    @classmethod
    def uniform(cls, value: float, n_eq: int, **kw) -> "AccuracyRequest":
        return cls(tuple([float(value)] * n_eq), **kw)

    def vector(self, n_eq: int) -> np.ndarray:
        v = np.asarray(self.mirs, dtype=float)
        if v.size == 1:
            v = np.full(n_eq, v[0])
        if v.size != n_eq:
            raise ValueError(f"request has {v.size} entries, problem has {n_eq} equations")
        return v


@dataclass
class MethodReport:
    """Outcome of a single-NLP method (collocation or residual minimization)."""

    method: str
    outcome: SolveOutcome
    x: np.ndarray
    trajectory: Trajectory
    errors: ErrorReport
    objective: float

    def to_dict(self) -> dict:
        return {"method": self.method, "status": self.outcome.status, "objective": self.objective,
                "iterations": self.outcome.iterations, "errors": self.errors.to_dict()}


@dataclass
class DairReport:
    residual: SolveOutcome
    residual_errors: ErrorReport
    achieved: np.ndarray
    applied: np.ndarray
    flags: list
    cost: Optional[SolveOutcome]
    cost_errors: Optional[ErrorReport]
    trajectory: Trajectory
    x: np.ndarray
    objective: float
    method: str = "dair"
    cost_accepted: bool = True
    notes: list = field(default_factory=list)
    handoff: Optional["Handoff"] = None

    @property
    def relaxed(self) -> bool:
        return any(f == RELAXED for f in self.flags)

    @property
    def errors(self) -> ErrorReport:
        return self.cost_errors if self.cost_errors is not None else self.residual_errors

    @property
    def outcome(self) -> SolveOutcome:
        return self.cost if self.cost is not None else self.residual

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "objective": self.objective,
            "residual_phase": {"status": self.residual.status, "iterations": self.residual.iterations,
                               "errors": self.residual_errors.to_dict()},
            "achieved_mirs": self.achieved.tolist(),
            "applied_mirs": self.applied.tolist(),
            "flags": list(self.flags),
            "cost_phase": None if self.cost is None else {
                "status": self.cost.status, "iterations": self.cost.iterations,
                "accepted": self.cost_accepted, "errors": self.cost_errors.to_dict()},
            "errors": self.errors.to_dict(),
            "warm_start": None if self.handoff is None else {
                "cap_excess": self.handoff.cap_excess, "violation": self.handoff.violation},
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# ----- helpers ---------------------------------------------------------------

def _rows(nlp, label):
    return np.array([i for i, lab in enumerate(nlp.labels) if lab == label], dtype=int)


def _violation(nlp, F, labels=("path", "boundary", "continuity")) -> float:
    """Max violation over the given row kinds (unscaled rows)."""
    worst = 0.0
    c = F[1:] / nlp.scale[1:]
    for label in labels:
        rows = _rows(nlp, label)
        if rows.size:
            vals = c[rows]
            vals = np.abs(vals) if rows[0] < nlp.n_eq else np.maximum(vals, 0.0)
            worst = max(worst, float(np.max(vals)))
    return worst


def _config(weights, n_eq) -> ResidualConfig:
    return ResidualConfig(weights=None if weights is None else tuple(np.asarray(weights, float)))


def solve_collocation(dop: DopDefinition, mesh: Mesh, opts: SolverOptions = SolverOptions(),
                      weights=None, x0=None) -> MethodReport:
    nlp = build_collocation(dop, mesh)
    out = solve(nlp, nlp.x0 if x0 is None else x0, opts)
    traj = interpolate_solution(out.x, mesh, dop)
    return MethodReport("collocation", out, out.x, traj, local_errors(dop, traj, _config(weights, dop.n_eq)),
                        out.objective)


def solve_residual(dop: DopDefinition, mesh: Mesh, opts: SolverOptions = SolverOptions(),
                   weights=None, x0=None, J_c=None) -> MethodReport:
    """Fully solved residual minimization (no early termination)."""
    nlp = build_dair_residual(dop, mesh, weights=weights, J_c=J_c)
    out = solve(nlp, nlp.x0 if x0 is None else x0, opts.with_(callback=None))
    traj = interpolate_solution(out.x, mesh, dop)
    return MethodReport("dair-residual", out, out.x, traj, local_errors(dop, traj, _config(weights, dop.n_eq)),
                        dair_cost_value(dop, mesh, out.x))


# ----- the alternating procedure ---------------------------------------------------

def acceptance_predicate(dop: DopDefinition, mesh: Mesh, req: AccuracyRequest, nlp) -> Callable:
    """Early-termination test: every MIRS within the request and path/boundary rows within tolerance."""
    target = req.vector(dop.n_eq)

    def accept(z):
        if np.any(mirs_values(dop, mesh, z) > target):
            return False
        return _violation(nlp, nlp.evaluate(z)) <= req.feasibility_tol

    return accept


def applied_bounds(target, achieved, early: bool):
    """Caps for the cost phase and the per-equation flags."""
    target = np.asarray(target, dtype=float)
    if early:
        return target.copy(), [MET] * target.size
    applied = np.maximum(target, achieved)
    return applied, [MET if a <= t else RELAXED for a, t in zip(achieved, target)]


@dataclass
class Handoff:
    """Direct evaluation of the cost NLP at its warm start."""

    cap_excess: float          # largest relative cap excess, <= 0 when satisfied
    violation: float           # largest path/boundary/continuity violation

    def feasible(self, tol: float) -> bool:
        return self.cap_excess <= 0.0 and self.violation <= tol


def check_handoff(cost_nlp, z) -> Handoff:
    F = cost_nlp.evaluate(z)
    caps = _rows(cost_nlp, "mirs-cap")
    c = F[1:] / cost_nlp.scale[1:]
    excess = float(np.max(c[caps] / -cost_nlp.offset[1:][caps])) if caps.size else 0.0
    return Handoff(cap_excess=excess, violation=_violation(cost_nlp, F))


def dair_solve(dop: DopDefinition, mesh: Mesh, req: AccuracyRequest,
               opts: SolverOptions = SolverOptions(), weights=None, x0=None,
               early_termination: bool = True) -> DairReport:
    """Residual minimization (stopping once the request is met) followed by cost minimization."""
    target = req.vector(dop.n_eq)
    cfg = _config(weights, dop.n_eq)
    res_nlp = build_dair_residual(dop, mesh, weights=weights)
    start = res_nlp.x0 if x0 is None else np.asarray(x0, dtype=float)
    callback = acceptance_predicate(dop, mesh, req, res_nlp) if early_termination else None
    res = solve(res_nlp, start, opts.with_(callback=callback))
    if res.status == "numerical-failure" or not np.all(np.isfinite(res.x)):
        raise DairError(f"residual phase failed: {res.message or res.status}")
    z_res = res.x
    achieved = mirs_values(dop, mesh, z_res)
    applied, flags = applied_bounds(target, achieved, res.status == "early-terminated")
    res_traj = interpolate_solution(z_res, mesh, dop)
    res_err = local_errors(dop, res_traj, cfg)

    cost_nlp = build_dair_cost(dop, mesh, applied, weights=weights)
    handoff = check_handoff(cost_nlp, z_res)
    notes = []
    if not handoff.feasible(max(req.feasibility_tol, 10.0 * opts.tol)):
        notes.append(f"warm start outside the cost-phase feasible set (cap excess {handoff.cap_excess:.3e}, "
                     f"violation {handoff.violation:.3e})")
    cost = solve(cost_nlp, z_res, opts.with_(callback=None))

    # keep the cost-phase iterate only if it honours the caps and constraints
    mirs_cost = mirs_values(dop, mesh, cost.x)
    slack = 10.0 * opts.tol
    ok = bool(np.all(np.isfinite(cost.x)) and np.all(mirs_cost <= applied + slack)
              and _violation(cost_nlp, cost_nlp.evaluate(cost.x)) <= max(slack, handoff.violation))
    z = cost.x if ok else z_res
    if not ok:
        notes.append(f"cost phase ended with status {cost.status} outside the caps; "
                     "keeping the residual-phase iterate")
    traj = interpolate_solution(z, mesh, dop)
    return DairReport(residual=res, residual_errors=res_err, achieved=achieved, applied=applied,
                      flags=flags, cost=cost, cost_errors=local_errors(dop, traj, cfg), trajectory=traj,
                      x=z, objective=dair_cost_value(dop, mesh, z), cost_accepted=ok, notes=notes,
                      handoff=handoff)


def represent_solution(dop: DopDefinition, mesh: Mesh, colloc_solution, req: Optional[AccuracyRequest] = None,
                       opts: SolverOptions = SolverOptions(), weights=None) -> DairReport:
    """Residual minimization from a collocation solution, capped at its cost."""
    z0 = np.asarray(colloc_solution, dtype=float)
    cfg = _config(weights, dop.n_eq)
    J_c = dair_cost_value(dop, mesh, z0)
    nlp = build_dair_residual(dop, mesh, weights=weights, J_c=J_c)
    out = solve(nlp, z0, opts.with_(callback=None))
    if out.status == "numerical-failure" and not np.all(np.isfinite(out.x)):
        raise DairError(f"representation solve failed: {out.message or out.status}")
    notes = []
    z = out.x
    F0, F1 = nlp.evaluate(z0), nlp.evaluate(z)
    if not (F1[0] <= F0[0] and _violation(nlp, F1, ("path", "boundary", "continuity", "objective-cap"))
            <= max(10 * opts.tol, _violation(nlp, F0, ("path", "boundary", "continuity", "objective-cap")))):
        notes.append(f"solve ended with status {out.status} without improving; keeping the warm start")
        z = z0
    achieved = mirs_values(dop, mesh, z)
    traj = interpolate_solution(z, mesh, dop)
    errors = local_errors(dop, traj, cfg)
    target = achieved if req is None else req.vector(dop.n_eq)
    flags = [MET if a <= t else RELAXED for a, t in zip(achieved, target)]
    return DairReport(residual=out, residual_errors=errors, achieved=achieved, applied=achieved.copy(),
                      flags=flags, cost=None, cost_errors=None, trajectory=traj, x=z,
                      objective=dair_cost_value(dop, mesh, z), method="represent", notes=notes)


# ----- rollout ------------------------------------------------------------------------

@dataclass
class Rollout:
    terminal_state: np.ndarray
    times: np.ndarray
    deviation: np.ndarray
    states: np.ndarray


def simulate_rollout(dop: DopDefinition, traj: Trajectory, p=None, grid: int = 500) -> Rollout:
    """Integrate the dynamics under the interpolated input from the trajectory's initial state."""
    if dop.n_g:
        raise ValueError("rollout needs pure ODE dynamics")
    p = traj.p if p is None else np.asarray(p, dtype=float)

    def rhs(t, x):
        u = traj.evaluate(t)[2]
        return np.asarray(dop.dynamics(x, u, t, p), dtype=float)

    times = np.linspace(traj.t0, traj.tf, grid)
    sol = solve_ivp(rhs, (traj.t0, traj.tf), traj.evaluate(traj.t0)[0], method="RK45",
                    rtol=1e-10, atol=1e-10, t_eval=times)
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        tb = float(sol.t[-1]) if sol.t.size else traj.t0
        raise RolloutError(f"integration failed near t = {tb:.6g}: {sol.message}", tb)
    xs = sol.y
    dev = np.linalg.norm(xs - traj.evaluate(times)[0], axis=0)
    return Rollout(terminal_state=xs[:, -1].copy(), times=times, deviation=dev, states=xs)


# ----- sweeps and studies -----------------------------------------------------------

@dataclass
class ParetoPoint:
    label: str
    mirns: float
    objective: float
    violation: float
    status: str
    dominated: bool = False
    request: Optional[tuple] = None
    error: str = ""


def default_pareto_grid(floor, count: int = 8, span: float = 1e3) -> list:
    """Log-spaced requests from the achievable floor up to ``span`` times it."""
    floor = np.asarray(floor, dtype=float)
    floor = np.maximum(floor, 1e-300)
    return [AccuracyRequest(tuple(floor * span ** (i / max(1, count - 1)))) for i in range(count)]


def mark_dominated(points: Sequence[ParetoPoint], slack: float) -> None:
    good = [p for p in points if np.isfinite(p.mirns) and np.isfinite(p.objective)]
    for p in good:
        p.dominated = any(q is not p and q.mirns < p.mirns and q.objective <= p.objective + slack
                          for q in good)


def pareto_sweep(dop: DopDefinition, mesh: Mesh, grid: Sequence[AccuracyRequest],
                 opts: SolverOptions = SolverOptions(), weights=None,
                 violation: Optional[Callable] = None, workers: int = 1) -> list:
    """One alternating solve per request plus a collocation reference, sorted by MIRNS.

    ``violation`` maps a trajectory to the scalar shown as marker size.
    Costs are compared with the reporting rule so every point is measured
    the same way.
    """
    if not grid:
        raise ValueError("the sweep grid is empty")
    violation = violation or (lambda traj: float("nan"))

    def one(req):
        try:
            rep = dair_solve(dop, mesh, req, opts, weights=weights)
            return ParetoPoint("dair", rep.errors.mirns, trajectory_cost(dop, rep.trajectory),
                               violation(rep.trajectory), "relaxed" if rep.relaxed else rep.outcome.status,
                               request=tuple(req.mirs))
        except Exception as exc:  # record and continue
            return ParetoPoint("dair", float("nan"), float("nan"), float("nan"), "failed",
                               request=tuple(req.mirs), error=str(exc))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            points = list(pool.map(one, grid))
    else:
        points = [one(r) for r in grid]
    try:
        col = solve_collocation(dop, mesh, opts, weights=weights)
        points.append(ParetoPoint("collocation", col.errors.mirns, trajectory_cost(dop, col.trajectory),
                                  violation(col.trajectory), col.outcome.status))
    except Exception as exc:
        points.append(ParetoPoint("collocation", float("nan"), float("nan"), float("nan"), "failed",
                                  error=str(exc)))
    mark_dominated(points, 10.0 * opts.tol)
    return sorted(points, key=lambda p: (np.nan_to_num(p.mirns, nan=np.inf), p.label))


@dataclass
class ConvergenceTable:
    K: list
    mirns: dict
    status: dict
    slopes: dict
    state_error: dict = field(default_factory=dict)
    state_slopes: dict = field(default_factory=dict)

    def rows(self):
        for i, K in enumerate(self.K):
            yield K, {m: self.mirns[m][i] for m in self.mirns}


def loglog_slope(K, values) -> float:
    K = np.asarray(K, dtype=float)
    v = np.asarray(values, dtype=float)
    ok = np.isfinite(v) & (v > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(K[ok]), np.log(v[ok]), 1)[0])


def convergence_study(dop: DopDefinition, scheme: str, K_list: Sequence[int],
                      req: Optional[AccuracyRequest] = None, opts: SolverOptions = SolverOptions(),
                      weights=None, degree=None, workers: int = 1, reference=None) -> ConvergenceTable:
    """MIRNS of collocation and fully solved residual minimization on uniform meshes.

    The residual minimization starts from the collocation solution of the
    same mesh. With ``reference(t) -> x`` (an exact state trajectory) the
    table also carries RMS state errors and their slopes.
    """
    K_list = [int(k) for k in K_list]
    if any(b <= a for a, b in zip(K_list, K_list[1:])):
        raise ValueError("K values must increase strictly")

    def one(K):
        mesh = build_mesh(scheme, K, degree=degree)
        out = {}
        try:
            col = solve_collocation(dop, mesh, opts, weights=weights)
            out["collocation"] = (col.errors.mirns, col.outcome.status, err(col.trajectory))
            start = col.x
        except Exception as exc:
            out["collocation"] = (float("nan"), f"failed: {exc}", float("nan"))
            start = None
        try:
            res = solve_residual(dop, mesh, opts, weights=weights, x0=start)
            out["dair"] = (res.errors.mirns, res.outcome.status, err(res.trajectory))
        except Exception as exc:
            out["dair"] = (float("nan"), f"failed: {exc}", float("nan"))
        return out

    def err(traj):
        return float("nan") if reference is None else state_error(traj, reference)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, K_list))
    else:
        results = [one(K) for K in K_list]
    methods = ("collocation", "dair")
    mirns = {m: [r[m][0] for r in results] for m in methods}
    status = {m: [r[m][1] for r in results] for m in methods}
    slopes = {m: loglog_slope(K_list, mirns[m]) for m in methods}
    table = ConvergenceTable(K=K_list, mirns=mirns, status=status, slopes=slopes)
    if reference is not None:
        table.state_error = {m: [r[m][2] for r in results] for m in methods}
        table.state_slopes = {m: loglog_slope(K_list, table.state_error[m]) for m in methods}
    return table
