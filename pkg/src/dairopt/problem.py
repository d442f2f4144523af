"""Continuous-time dynamic optimization problems and their trajectories.

Callables follow one array convention: the component axis comes first and
any further axes are sample axes. A state argument ``x`` therefore has shape
``(n, ...)``, the time ``t`` has the sample shape, and vector-valued outputs
are stacked on a new leading axis with :func:`dairopt.autodiff.stack`. The
same code then runs on plain arrays and on :class:`~dairopt.autodiff.Jet`
objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import autodiff as ad
from .mesh import Mesh, differentiation_matrix, hs_bubble, lagrange_basis


class DomainError(ValueError):
    """Evaluation requested outside the trajectory's time horizon."""


def _bounds(lo, hi, size, what):
    lo = np.full(size, -np.inf) if lo is None else np.broadcast_to(np.asarray(lo, float), (size,)).copy()
    hi = np.full(size, np.inf) if hi is None else np.broadcast_to(np.asarray(hi, float), (size,)).copy()
    if np.any(lo > hi):
        raise ValueError(f"{what} lower bound exceeds upper bound")
    return lo, hi


@dataclass(frozen=True, eq=False)
class DopDefinition:
    """Dynamic optimization problem in Bolza form.

    ``t0`` and ``tf`` are ``(lower, upper)`` pairs; equal entries mean the
    endpoint is fixed. ``x_guess`` optionally holds ``(x_initial, x_final)``
    used for linear-interpolation initial guesses.
    """

    name: str
    n: int
    m: int
    dynamics: Callable
    t0: tuple
    tf: tuple
    n_p: int = 0
    n_g: int = 0
    n_c: int = 0
    n_q: int = 0
    mayer: Optional[Callable] = None
    lagrange: Optional[Callable] = None
    dae: Optional[Callable] = None
    path: Optional[Callable] = None
    boundary: Optional[Callable] = None
    x_bounds: tuple = (None, None)
    u_bounds: tuple = (None, None)
    p_bounds: tuple = (None, None)
    x_guess: Optional[tuple] = None
    u_guess: Optional[np.ndarray] = None
    p_guess: Optional[np.ndarray] = None
    tf_guess: Optional[float] = None
    state_names: tuple = ()
    input_names: tuple = ()
    notes: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 0:
            raise ValueError("need n >= 1 and m >= 0")
        if self.t0[0] > self.t0[1] or self.tf[0] > self.tf[1]:
            raise ValueError("time bounds are inverted")
        if self.t0[1] >= self.tf[0]:
            raise ValueError("every admissible endpoint pair must satisfy t0 < tf")
        for kind, size in (("dae", self.n_g), ("path", self.n_c), ("boundary", self.n_q)):
            if size > 0 and getattr(self, kind) is None:
                raise ValueError(f"{kind} dimension {size} declared without a callable")

    # ----- bounds ----------------------------------------------------------
    @property
    def xlb(self):
        return _bounds(*self.x_bounds, self.n, "state")[0]

    @property
    def xub(self):
        return _bounds(*self.x_bounds, self.n, "state")[1]

    @property
    def ulb(self):
        return _bounds(*self.u_bounds, self.m, "input")[0]

    @property
    def uub(self):
        return _bounds(*self.u_bounds, self.m, "input")[1]

    @property
    def plb(self):
        return _bounds(*self.p_bounds, self.n_p, "parameter")[0]

    @property
    def pub(self):
        return _bounds(*self.p_bounds, self.n_p, "parameter")[1]

    @property
    def free_t0(self) -> bool:
        return self.t0[0] < self.t0[1]

    @property
    def free_tf(self) -> bool:
        return self.tf[0] < self.tf[1]

    @property
    def n_eq(self) -> int:
        """Number of dynamic equations ``n + n_g``."""
        return self.n + self.n_g

    # ----- evaluation ------------------------------------------------------
    def residual(self, x, xdot, u, t, p):
        """Stacked dynamic residual ``[xdot - f; g]``."""
        f = self.dynamics(x, u, t, p)
        eps = xdot - f
        if self.n_g:
            g = self.dae(x, xdot, u, t, p)
            eps = ad.concatenate([eps, g], axis=0)
        return eps

    def running_cost(self, x, u, t, p):
        if self.lagrange is None:
            return 0.0 * ad.value(t)
        return self.lagrange(x, u, t, p)

    def terminal_cost(self, x0, t0, xf, tf, p):
        if self.mayer is None:
            return 0.0 * ad.value(t0)
        return self.mayer(x0, t0, xf, tf, p)

    def sample_point(self):
        """A representative point inside (or on) the box bounds."""
        def mid(lo, hi):
            fl, fh = np.isfinite(lo), np.isfinite(hi)
            lo0, hi0 = np.where(fl, lo, 0.0), np.where(fh, hi, 0.0)
            out = np.where(fl & fh, 0.5 * (lo0 + hi0), 0.0)
            out = np.where(fl & ~fh, lo0 + 1.0, out)
            return np.where(~fl & fh, hi0 - 1.0, out)
        t0 = 0.5 * (self.t0[0] + self.t0[1])
        tf = 0.5 * (self.tf[0] + self.tf[1])
        return (mid(self.xlb, self.xub), mid(self.ulb, self.uub),
                0.5 * (t0 + tf), mid(self.plb, self.pub), t0, tf)

    def check_dimensions(self) -> None:
        """Evaluate every callable once and compare against declared sizes."""
        x, u, t, p, t0, tf = self.sample_point()
        t = np.asarray(t)
        checks = [("dynamics", np.shape(self.dynamics(x, u, t, p)), (self.n,))]
        if self.n_g:
            checks.append(("dae", np.shape(self.dae(x, x, u, t, p)), (self.n_g,)))
        if self.n_c:
            checks.append(("path", np.shape(self.path(x, x, u, t, p)), (self.n_c,)))
        if self.n_q:
            checks.append(("boundary", np.shape(self.boundary(x, t0, x, tf, p)), (self.n_q,)))
        for name, got, want in checks:
            if tuple(got) != want:
                raise ValueError(f"{self.name}: {name} returned shape {got}, declared {want}")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Piecewise-polynomial state and input trajectories on a mesh.

    ``chi`` is ``(K, N, n)`` and ``ups`` is ``(K, N, m)`` with per-interval data
    point values. ``bubble`` (``(K, n)``) carries the Hermite-Simpson cubic
    correction and is zero for pure Lagrange schemes.
    """

    s: np.ndarray
    nodes: np.ndarray
    t0: float
    tf: float
    chi: np.ndarray
    ups: np.ndarray
    p: np.ndarray
    bubble: Optional[np.ndarray] = None

    @property
    def K(self) -> int:
        return self.s.size - 1

    @property
    def breakpoints(self) -> np.ndarray:
        return self.t0 + self.s * (self.tf - self.t0)

    def locate(self, t):
        """Interval index and local fraction; breakpoints belong to the left piece."""
        t = np.asarray(t, dtype=float)
        span = self.tf - self.t0
        tol = 1e-12 * max(1.0, abs(self.t0), abs(self.tf))
        if np.any(t < self.t0 - tol) or np.any(t > self.tf + tol):
            raise DomainError(f"time outside [{self.t0}, {self.tf}]")
        frac = np.clip((t - self.t0) / span, 0.0, 1.0)
        k = np.clip(np.searchsorted(self.s, frac, side="left") - 1, 0, self.K - 1)
        width = self.s[k + 1] - self.s[k]
        tau = np.clip((frac - self.s[k]) / width, 0.0, 1.0)
        return k, tau

    def evaluate(self, t):
        """``(x, xdot, u)`` at ``t``; component axis first."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        k, tau = self.locate(tt)
        basis = lagrange_basis(self.nodes, tau)                    # (T, N)
        dbasis = basis @ differentiation_matrix(self.nodes)
        h = (self.s[k + 1] - self.s[k]) * (self.tf - self.t0)
        x = np.einsum("ti,tin->nt", basis, self.chi[k])
        xd = np.einsum("ti,tin->nt", dbasis, self.chi[k])
        if self.bubble is not None:
            bv, bd = hs_bubble(tau)
            x = x + self.bubble[k].T * bv
            xd = xd + self.bubble[k].T * bd
        xd = xd / h
        u = np.einsum("ti,tim->mt", basis, self.ups[k])
        if scalar:
            return x[:, 0], xd[:, 0], u[:, 0]
        return x, xd, u


def evaluate_trajectory(traj: Trajectory, t):
    """Barycentric evaluation of ``traj`` at ``t`` returning ``(x, xdot, u)``."""
    return traj.evaluate(t)


def trajectory_from_samples(mesh: Mesh, chi, ups, t0=0.0, tf=1.0, p=None, bubble=None) -> Trajectory:
    """Wrap per-interval data-point samples in a :class:`Trajectory`."""
    chi = np.asarray(chi, dtype=float)
    ups = np.asarray(ups, dtype=float)
    if chi.ndim == 2:
        chi = chi[:, :, None]
    if ups.ndim == 2:
        ups = ups[:, :, None]
    p = np.zeros(0) if p is None else np.asarray(p, dtype=float)
    return Trajectory(s=mesh.s, nodes=mesh.data_nodes, t0=float(t0), tf=float(tf),
                      chi=chi, ups=ups, p=p, bubble=bubble)
