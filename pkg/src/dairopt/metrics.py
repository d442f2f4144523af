"""Residual-based error metrics of a trajectory.

All integrals use per-interval Gauss-Legendre rules. The reporting tier
defaults to ``4 N`` points per interval (``N`` data points), which is
independent of, and finer than, the rule that enters the NLPs.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mesh import Mesh, gauss_legendre
from .problem import DopDefinition, Trajectory
from . import transcription


@dataclass(frozen=True)
class ResidualConfig:
    """Weighting and reporting-quadrature settings.

    ``weights`` is the diagonal of the weighting matrix (``None`` means the
    identity); ``report_order`` fixes the points per interval of the
    reporting rule (``None`` means ``4 N``); ``violation_density`` sets the
    path-constraint sampling grid to ``violation_density * N`` points per
    interval.
    """

    weights: Optional[tuple] = None
    report_order: Optional[int] = None
    violation_density: int = 10

    def __post_init__(self):
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or np.any(~np.isfinite(w)) or np.any(w < 0) or not np.any(w > 0):
                raise ValueError("weights must be finite, nonnegative and not all zero")
        if self.report_order is not None and self.report_order < 1:
            raise ValueError("report_order must be positive")
        if self.violation_density < 1:
            raise ValueError("violation_density must be positive")

    def weight_vector(self, n_eq: int) -> np.ndarray:
        if self.weights is None:
            return np.ones(n_eq)
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (n_eq,):
            raise ValueError(f"expected {n_eq} weights, got {w.size}")
        return w

    def order(self, traj: Trajectory) -> int:
        return self.report_order or 4 * traj.nodes.size


@dataclass
class ErrorReport:
    zeta: np.ndarray
    eta: np.ndarray
    r: float
    mirns: float
    mirs: np.ndarray
    constraint_violation: float
    durations: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"zeta": self.zeta.tolist(), "eta": self.eta.tolist(), "r": self.r,
                "mirns": self.mirns, "mirs": self.mirs.tolist(),
                "constraint_violation": self.constraint_violation}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def interval_csv(self) -> str:
        """One row per interval: ``zeta`` per equation, ``eta`` and its mean over the interval."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n_eq = self.zeta.shape[0]
        w.writerow(["interval"] + [f"zeta_{j}" for j in range(n_eq)] + ["eta", "eta_mean"])
        for k in range(self.eta.size):
            mean = self.eta[k] / self.durations[k] if self.durations is not None else float("nan")
            w.writerow([k] + [f"{v:.12e}" for v in self.zeta[:, k]] + [f"{self.eta[k]:.12e}", f"{mean:.12e}"])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "mirns"] + [f"mirs_{j}" for j in range(self.mirs.size)] + ["constraint_violation"])
        w.writerow([f"{self.r:.12e}", f"{self.mirns:.12e}"] + [f"{v:.12e}" for v in self.mirs]
                   + [f"{self.constraint_violation:.12e}"])
        return buf.getvalue()


def residual_at(dop: DopDefinition, traj: Trajectory, t) -> np.ndarray:
    """``[xdot - f; g]`` on the interpolants at time(s) ``t``; component axis first."""
    x, xd, u = traj.evaluate(t)
    return np.asarray(dop.residual(x, xd, u, np.asarray(t, dtype=float), _p(traj, np.ndim(t))))


def _p(traj, ndim):
    p = np.asarray(traj.p, dtype=float)
    return p.reshape(p.shape + (1,) * ndim)


def _quadrature(traj: Trajectory, order: int):
    """Absolute times ``(K, Q)`` and weights ``(K, Q)`` of a per-interval rule."""
    q, w = gauss_legendre(order)
    a = traj.breakpoints[:-1, None]
    h = np.diff(traj.breakpoints)[:, None]
    return a + h * q[None, :], h * w[None, :]


def _residual_grid(dop, traj, order):
    t, w = _quadrature(traj, order)
    eps = residual_at(dop, traj, t.ravel()).reshape(dop.n_eq, *t.shape)
    return eps, w


def irns(dop: DopDefinition, traj: Trajectory, cfg: ResidualConfig = ResidualConfig(),
         order: Optional[int] = None) -> float:
    """Integrated residual norm squared ``int |W eps|^2 dt``."""
    W = cfg.weight_vector(dop.n_eq)
    eps, w = _residual_grid(dop, traj, order or cfg.order(traj))
    return float(np.sum(w * np.sum((W[:, None, None] * eps) ** 2, axis=0)))


def mirns(dop, traj, cfg: ResidualConfig = ResidualConfig(), order=None) -> float:
    return irns(dop, traj, cfg, order) / (traj.tf - traj.t0)


def local_errors(dop: DopDefinition, traj: Trajectory, cfg: ResidualConfig = ResidualConfig()) -> ErrorReport:
    """Absolute local errors, integrated residual metrics and path-constraint violation."""
    order = cfg.order(traj)
    W = cfg.weight_vector(dop.n_eq)
    eps, w = _residual_grid(dop, traj, order)                 # (n_eq, K, Q), (K, Q)
    zeta = np.sum(np.abs(eps) * w, axis=2)
    eta = np.sum(np.sqrt(np.sum(eps ** 2, axis=0)) * w, axis=1)
    span = traj.tf - traj.t0
    r = float(np.sum(w * np.sum((W[:, None, None] * eps) ** 2, axis=0)))
    mirs = np.sum(eps ** 2 * w, axis=(1, 2)) / span
    return ErrorReport(zeta=zeta, eta=eta, r=r, mirns=r / span, mirs=mirs,
                       constraint_violation=constraint_violation(dop, traj, cfg.violation_density),
                       durations=np.diff(traj.breakpoints))


def constraint_violation(dop: DopDefinition, traj: Trajectory, density: int = 10) -> float:
    """Max positive part of the path constraints on ``density * N`` points per interval."""
    if not dop.n_c:
        return 0.0
    per = density * traj.nodes.size
    b = traj.breakpoints
    tau = np.linspace(0.0, 1.0, per)
    t = (b[:-1, None] + np.diff(b)[:, None] * tau[None, :]).ravel()
    x, xd, u = traj.evaluate(t)
    c = np.asarray(dop.path(x, xd, u, t, _p(traj, 1)))
    return float(max(0.0, np.max(c)))


def mirs_constraint_values(dop: DopDefinition, z, mesh: Mesh, cfg: ResidualConfig = ResidualConfig()) -> np.ndarray:
    """Transcription-tier per-equation MIRS, the exact left-hand sides of the cap rows."""
    return transcription.mirs_values(dop, mesh, z)


def trajectory_cost(dop: DopDefinition, traj: Trajectory, order: Optional[int] = None) -> float:
    """Bolza cost of an interpolated trajectory with the reporting rule."""
    order = order or 4 * traj.nodes.size
    J = 0.0
    if dop.lagrange is not None:
        t, w = _quadrature(traj, order)
        x, _, u = traj.evaluate(t.ravel())
        L = np.asarray(dop.lagrange(x, u, t.ravel(), _p(traj, 1)))
        J += float(np.sum(w.ravel() * L))
    if dop.mayer is not None:
        x0 = traj.evaluate(traj.t0)[0]
        xf = traj.evaluate(traj.tf)[0]
        J += float(np.asarray(dop.mayer(x0, np.asarray(traj.t0), xf, np.asarray(traj.tf), np.asarray(traj.p))))
    return J


def state_error(traj: Trajectory, reference, order: Optional[int] = None) -> float:
    """Root-mean-square state error against ``reference(t) -> (n, T)`` over the horizon."""
    t, w = _quadrature(traj, order or 4 * traj.nodes.size)
    x = traj.evaluate(t.ravel())[0]
    ref = np.asarray(reference(t.ravel()), dtype=float).reshape(x.shape)
    return float(np.sqrt(np.sum(w.ravel() * np.sum((x - ref) ** 2, axis=0)) / (traj.tf - traj.t0)))
