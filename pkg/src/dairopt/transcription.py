"""Transcription of a :class:`DopDefinition` on a :class:`Mesh` into NLPs.

Three flavors share one decision layout and one set of per-interval
kinematics:

* :func:`build_collocation` forces the dynamics at collocation points;
* :func:`build_dair_residual` minimizes the mean integrated residual squared;
* :func:`build_dair_cost` minimizes the Bolza cost under per-equation caps on
  the mean integrated residual squared.

Hermite-Simpson states are represented as the quadratic through the three
data points plus ``c * w(tau)`` with ``w = tau (tau - 1/2) (tau - 1)`` and
``c = h (f_a + f_b) - 2 (chi_b - chi_a)``. The residual of this cubic vanishes
at all three data points exactly when the two usual Hermite-Simpson defects
vanish, and in that case the cubic is the classic Hermite interpolant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .mesh import (Mesh, differentiation_operators, hs_bubble, lagrange_basis,
                   lagrange_derivative_basis)
from .nlp import NlpBuilder, TranscribedNlp
from .problem import DopDefinition, Trajectory


class UnsupportedSchemeError(ValueError):
    pass


class CapError(ValueError):
    """Invalid residual caps or objective cap."""


# ----- decision layout -------------------------------------------------------

class DecisionLayout:
    """Flat index map for ``(chi, upsilon, p, t0, tf)``.

    With implicit continuity neighbouring intervals share their common state
    node; continuous inputs are shared likewise.
    """

    def __init__(self, dop: DopDefinition, mesh: Mesh):
        K, N, n, m = mesh.K, mesh.N, dop.n, dop.m
        self.K, self.N, self.n, self.m, self.n_p = K, N, n, m, dop.n_p
        k = np.arange(K)[:, None]
        i = np.arange(N)[None, :]
        self.shared_states = mesh.state_continuity == "implicit"
        self.shared_inputs = mesh.input_continuity == "continuous"
        xnode = k * (N - 1) + i if self.shared_states else k * N + i
        unode = k * (N - 1) + i if self.shared_inputs else k * N + i
        self.n_xnodes = int(xnode.max()) + 1
        self.n_unodes = int(unode.max()) + 1
        self.x_index = xnode[:, :, None] * n + np.arange(n)
        off = self.n_xnodes * n
        self.u_index = off + unode[:, :, None] * m + np.arange(m)
        off += self.n_unodes * m
        self.p_index = off + np.arange(dop.n_p)
        off += dop.n_p
        self.t0_index = self.tf_index = None
        if dop.free_t0:
            self.t0_index, off = off, off + 1
        if dop.free_tf:
            self.tf_index, off = off, off + 1
        self.size = off
        self.t0_fixed = dop.t0[0]
        self.tf_fixed = dop.tf[0]
        self._dop = dop

    @property
    def time_index(self) -> list:
        return [j for j in (self.t0_index, self.tf_index) if j is not None]

    def interval_index(self) -> np.ndarray:
        """``(K, nloc)`` variables seen by one interval."""
        K = self.K
        tail = np.concatenate([self.p_index, self.time_index]).astype(int)
        return np.hstack([self.x_index.reshape(K, -1), self.u_index.reshape(K, -1),
                          np.broadcast_to(tail, (K, tail.size))])

    def boundary_index(self) -> np.ndarray:
        tail = np.concatenate([self.p_index, self.time_index]).astype(int)
        return np.concatenate([self.x_index[0, 0], self.x_index[-1, -1], tail])[None, :]

    def pack(self, chi, ups, p=None, t0=None, tf=None) -> np.ndarray:
        z = np.zeros(self.size)
        z[self.x_index] = np.asarray(chi, dtype=float).reshape(self.x_index.shape)
        z[self.u_index] = np.asarray(ups, dtype=float).reshape(self.u_index.shape)
        if self.n_p:
            z[self.p_index] = np.zeros(self.n_p) if p is None else p
        if self.t0_index is not None:
            z[self.t0_index] = self.t0_fixed if t0 is None else t0
        if self.tf_index is not None:
            z[self.tf_index] = self.tf_fixed if tf is None else tf
        return z

    def unpack(self, z) -> dict:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise ValueError(f"flat vector has length {z.size}, layout expects {self.size}")
        return {
            "chi": z[self.x_index],
            "ups": z[self.u_index],
            "p": z[self.p_index],
            "t0": float(z[self.t0_index]) if self.t0_index is not None else float(self.t0_fixed),
            "tf": float(z[self.tf_index]) if self.tf_index is not None else float(self.tf_fixed),
        }

    def bounds(self):
        dop = self._dop
        lb = np.full(self.size, -np.inf)
        ub = np.full(self.size, np.inf)
        lb[self.x_index] = dop.xlb
        ub[self.x_index] = dop.xub
        lb[self.u_index] = dop.ulb
        ub[self.u_index] = dop.uub
        lb[self.p_index] = dop.plb
        ub[self.p_index] = dop.pub
        if self.t0_index is not None:
            lb[self.t0_index], ub[self.t0_index] = dop.t0
        if self.tf_index is not None:
            lb[self.tf_index], ub[self.tf_index] = dop.tf
        return lb, ub


# ----- per-interval kinematics ------------------------------------------------

@dataclass(frozen=True)
class _Points:
    tau: np.ndarray
    B: np.ndarray
    Bd: np.ndarray
    bub: np.ndarray
    bubd: np.ndarray


class Discretization:
    """Element functions shared by all builders.

    Element functions accept ``(E, nloc)`` arrays or jets laid out as in
    :meth:`DecisionLayout.interval_index` and return ``(E, nout)``.
    """

    def __init__(self, dop: DopDefinition, mesh: Mesh, weights=None):
        self.dop, self.mesh = dop, mesh
        self.lay = DecisionLayout(dop, mesh)
        self.hs = mesh.scheme == "hermite-simpson"
        n_eq = dop.n_eq
        W = np.ones(n_eq) if weights is None else np.asarray(weights, dtype=float)
        if W.shape != (n_eq,) or np.any(~np.isfinite(W)) or np.any(W < 0) or not np.any(W > 0):
            raise ValueError(f"weights must be {n_eq} finite nonnegative entries, not all zero")
        self.W = W
        self._pts: dict = {}

    # interpolation tables at unit-interval points
    def points(self, tau) -> _Points:
        tau = np.asarray(tau, dtype=float)
        key = tau.tobytes()
        if key not in self._pts:
            nodes = self.mesh.data_nodes
            bv, bd = hs_bubble(tau)
            self._pts[key] = _Points(tau, lagrange_basis(nodes, tau),
                                     lagrange_derivative_basis(nodes, tau), bv, bd)
        return self._pts[key]

    def split(self, z, rows=None):
        """Unpack an element batch into component-first pieces.

        ``rows`` restricts which intervals the batch covers (default all).
        """
        lay = self.lay
        N, n, m, n_p = lay.N, lay.n, lay.m, lay.n_p
        E = z.shape[0]
        o = 0
        chi = z[:, o:o + N * n].reshape(E, N, n).transpose(2, 0, 1)
        o += N * n
        ups = z[:, o:o + N * m].reshape(E, N, m).transpose(2, 0, 1)
        o += N * m
        p = z[:, o:o + n_p].transpose(1, 0).reshape(n_p, E, 1)
        o += n_p
        if lay.t0_index is not None:
            t0 = z[:, o].reshape(E, 1)
            o += 1
        else:
            t0 = lay.t0_fixed
        if lay.tf_index is not None:
            tf = z[:, o].reshape(E, 1)
        else:
            tf = lay.tf_fixed
        ks = np.arange(lay.K) if rows is None else np.asarray(rows)
        s0 = self.mesh.s[ks][:, None]
        frac = self.mesh.fractions[ks][:, None]
        return chi, ups, p, t0, tf, s0, frac

    def kinematics(self, z, tau, rows=None):
        """``x, xdot, u`` with shape ``(comp, E, T)`` and ``t`` ``(E, T)``."""
        chi, ups, p, t0, tf, s0, frac = self.split(z, rows)
        P = self.points(tau)
        span = tf - t0
        h = span * frac
        t = t0 + (s0 + frac * P.tau[None, :]) * span
        x = ad.contract(P.B, chi)
        xd = ad.contract(P.Bd, chi)
        if self.hs:
            c = self.bubble_coefficient(chi, ups, p, t0, tf, s0, frac)
            n, E = chi.shape[0], chi.shape[1]
            c = c.reshape(n, E, 1)
            x = x + c * P.bub
            xd = xd + c * P.bubd
        xd = xd / h
        u = ad.contract(P.B, ups)
        return x, xd, u, t, p, h

    def bubble_coefficient(self, chi, ups, p, t0, tf, s0, frac):
        """``h (f_a + f_b) - 2 (chi_b - chi_a)``, shape ``(n, E)``."""
        span = tf - t0
        h = span * frac                           # (E, 1)
        ends = np.array([0, 2])
        te = t0 + (s0 + frac * np.array([0.0, 1.0])[None, :]) * span
        f = self.dop.dynamics(chi[:, :, ends], ups[:, :, ends], te, p)      # (n, E, 2)
        return h.reshape(-1) * (f[:, :, 0] + f[:, :, 1]) - 2.0 * (chi[:, :, 2] - chi[:, :, 0])

    # ----- element functions ------------------------------------------------
    def residual(self, z, tau, rows=None):
        x, xd, u, t, p, _ = self.kinematics(z, tau, rows)
        return self.dop.residual(x, xd, u, t, p)

    def mirs_terms(self, z):
        """Per-interval contributions ``frac_k sum_i w_i eps_j(q_i)^2``: ``(E, n_eq)``."""
        eps = self.residual(z, self.mesh.quad_nodes)
        sq = ad.sum(eps * eps * self.mesh.quad_weights, axis=2)       # (n_eq, E)
        return (sq * self.mesh.fractions).transpose(1, 0)

    def residual_objective(self, z):
        """Per-interval ``frac_k sum_i w_i |W eps(q_i)|^2``: ``(E, 1)``."""
        eps = self.residual(z, self.mesh.quad_nodes)
        w2 = (self.W ** 2)[:, None, None]
        sq = ad.sum(ad.sum(eps * eps * w2, axis=0) * self.mesh.quad_weights, axis=1)
        return (sq * self.mesh.fractions).reshape(-1, 1)

    def lagrange_cost(self, z, tau, weights):
        """Per-interval ``h_k sum_i w_i L(q_i)``."""
        if self.dop.lagrange is None:
            return np.zeros((z.shape[0], 1))
        x, _, u, t, p, h = self.kinematics(z, tau)
        L = self.dop.lagrange(x, u, t, p)            # (E, T)
        return (ad.sum(L * weights, axis=1).reshape(-1, 1)) * h

    def _boundary_split(self, z):
        n, n_p = self.lay.n, self.lay.n_p
        E = z.shape[0]
        x0 = z[:, :n].transpose(1, 0)
        xf = z[:, n:2 * n].transpose(1, 0)
        p = z[:, 2 * n:2 * n + n_p].transpose(1, 0)
        o = 2 * n + n_p
        t0 = z[:, o] if self.lay.t0_index is not None else np.full(E, self.lay.t0_fixed)
        if self.lay.t0_index is not None:
            o += 1
        tf = z[:, o] if self.lay.tf_index is not None else np.full(E, self.lay.tf_fixed)
        return x0, t0, xf, tf, p

    def mayer(self, z):
        if self.dop.mayer is None:
            return np.zeros((z.shape[0], 1))
        out = self.dop.mayer(*self._boundary_split(z))
        return out.reshape(-1, 1)

    def boundary(self, z):
        out = self.dop.boundary(*self._boundary_split(z))    # (n_q, E)
        return out.transpose(1, 0)

    def defects(self, z):
        """``A chi + h D_template f`` per interval: ``(E, R n)``."""
        ops = differentiation_operators(self.mesh, 0)
        chi, ups, p, t0, tf, s0, frac = self.split(z)
        span = tf - t0
        h = span * frac
        t = t0 + (s0 + frac * self.mesh.data_nodes[None, :]) * span
        f = self.dop.dynamics(chi, ups, t, p)         # (n, E, N)
        d = ad.contract(ops.A, chi) + ad.contract(ops.D_template, f) * h
        E, R = z.shape[0], ops.A.shape[0]
        return d.transpose(1, 2, 0).reshape(E, R * self.lay.n)

    def pointwise(self, which, z, tau, rows=None):
        """DAE or path values at unit-interval points: ``(E, T * n_out)``."""
        x, xd, u, t, p, _ = self.kinematics(z, tau, rows)
        fn = self.dop.dae if which == "dae" else self.dop.path
        out = fn(x, xd, u, t, p)                      # (n_out, E, T)
        E = z.shape[0]
        return out.transpose(1, 2, 0).reshape(E, -1)

    def continuity(self, z):
        n = self.lay.n
        return z[:, :n] - z[:, n:2 * n]


# ----- builders --------------------------------------------------------------

def _common(builder: NlpBuilder, disc: Discretization):
    """Path, boundary and explicit continuity rows shared by all flavors."""
    dop, lay, mesh = disc.dop, disc.lay, disc.mesh
    idx = lay.interval_index()
    if dop.n_c:
        _at_points(builder, disc, "path", mesh.data_nodes, idx, "inequality")
    if dop.n_q:
        builder.equality(disc.boundary, lay.boundary_index(), dop.n_q, "boundary")
    if not lay.shared_states and lay.K > 1:
        cidx = np.hstack([lay.x_index[:-1, -1], lay.x_index[1:, 0]])
        builder.equality(disc.continuity, cidx, lay.n, "continuity")


def _at_points(builder, disc, which, nodes, idx, kind):
    """Rows at the given data nodes, counting shared interval endpoints once."""
    dop, lay = disc.dop, disc.lay
    nout = dop.n_g if which == "dae" else dop.n_c
    add = builder.equality if kind == "equality" else builder.inequality
    dedupe = lay.shared_states and lay.shared_inputs and nodes.size and nodes[-1] == 1.0
    inner = nodes[:-1] if dedupe else nodes
    if inner.size:
        add(lambda z, tau=inner: disc.pointwise(which, z, tau), idx, inner.size * nout, which)
    if dedupe:
        last = np.array([1.0])
        add(lambda z: disc.pointwise(which, z, last, rows=[lay.K - 1]), idx[-1:], nout, which)


def _initial(disc: Discretization) -> np.ndarray:
    return default_initial_guess(disc.dop, disc.mesh)


def build_collocation(dop: DopDefinition, mesh: Mesh) -> TranscribedNlp:
    """Direct collocation NLP (defects at collocation points)."""
    if not mesh.has_collocation:
        raise UnsupportedSchemeError(f"scheme {mesh.scheme!r} has no collocation structure")
    disc = Discretization(dop, mesh)
    lay = disc.lay
    b = NlpBuilder(lay.size, *lay.bounds())
    idx = lay.interval_index()
    b.objective(disc.mayer, lay.boundary_index(), "mayer")
    b.objective(lambda z: disc.lagrange_cost(z, mesh.data_nodes, mesh.colloc_weights), idx, "lagrange")
    ops = differentiation_operators(mesh, 0)
    b.equality(disc.defects, idx, ops.A.shape[0] * dop.n, "collocation-defect")
    if dop.n_g:
        _at_points(b, disc, "dae", mesh.data_nodes[mesh.collocated], idx, "equality")
    _common(b, disc)
    return b.build(x0=_initial(disc), meta={"flavor": "collocation", "scheme": mesh.scheme, "K": mesh.K,
                                            "layout": lay, "disc": disc})


def _check_caps(rho, n_eq, required):
    if rho is None:
        if required:
            raise CapError("residual caps are required for the cost-minimization problem")
        return None
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (n_eq,)).copy()
    if np.any(np.isnan(rho)) or np.any(rho < 0):
        raise CapError("residual caps must be nonnegative")
    return rho


def _add_caps(b, disc, rho):
    finite = np.flatnonzero(np.isfinite(rho))
    if not finite.size:
        return
    cap = rho[finite]
    b.inequality(lambda z: disc.mirs_terms(z)[:, finite], disc.lay.interval_index(), finite.size,
                 "mirs-cap", shared=True, offset=-cap, scale=1.0 / np.maximum(cap, 1e-300))


def dair_cost_terms(disc: Discretization):
    """``(func, index)`` pairs whose sum is the transcription-tier Bolza cost."""
    mesh, lay = disc.mesh, disc.lay
    return [(disc.mayer, lay.boundary_index()),
            (lambda z: disc.lagrange_cost(z, mesh.quad_nodes, mesh.quad_weights), lay.interval_index())]


def build_dair_residual(dop: DopDefinition, mesh: Mesh, weights=None, J_c=None, rho=None) -> TranscribedNlp:
    """Residual minimization with optional objective cap ``J_c`` and residual caps ``rho``."""
    disc = Discretization(dop, mesh, weights)
    lay = disc.lay
    rho = _check_caps(rho, dop.n_eq, required=False)
    b = NlpBuilder(lay.size, *lay.bounds())
    b.objective(disc.residual_objective, lay.interval_index(), "residual")
    _common(b, disc)
    if J_c is not None:
        J_c = float(J_c)
        if not np.isfinite(J_c):
            raise CapError("objective cap must be finite")
        (f0, i0), (f1, i1) = dair_cost_terms(disc)
        b.inequality(f0, i0, 1, "objective-cap", shared=True, offset=-J_c,
                     scale=1.0 / max(1.0, abs(J_c)), extra=[(f1, i1)])
    if rho is not None:
        _add_caps(b, disc, rho)
    return b.build(x0=_initial(disc), meta={"flavor": "dair-residual", "scheme": mesh.scheme, "K": mesh.K,
                                            "layout": lay, "disc": disc})


def build_dair_cost(dop: DopDefinition, mesh: Mesh, rho, weights=None) -> TranscribedNlp:
    """Cost minimization under per-equation residual caps ``rho`` (mandatory)."""
    disc = Discretization(dop, mesh, weights)
    lay = disc.lay
    rho = _check_caps(rho, dop.n_eq, required=True)
    b = NlpBuilder(lay.size, *lay.bounds())
    for f, i in dair_cost_terms(disc):
        b.objective(f, i, "cost")
    _common(b, disc)
    _add_caps(b, disc, rho)
    return b.build(x0=_initial(disc), meta={"flavor": "dair-cost", "scheme": mesh.scheme, "K": mesh.K,
                                            "layout": lay, "disc": disc})


# ----- solutions ---------------------------------------------------------------

def interpolate_solution(z, mesh: Mesh, dop: DopDefinition) -> Trajectory:
    """Piecewise interpolants of a flat decision vector."""
    disc = Discretization(dop, mesh)
    parts = disc.lay.unpack(z)
    bubble = None
    if disc.hs:
        zi = np.asarray(z, dtype=float)[disc.lay.interval_index()]
        chi, ups, p, t0, tf, s0, frac = disc.split(zi)
        bubble = disc.bubble_coefficient(chi, ups, p, t0, tf, s0, frac).T
    return Trajectory(s=mesh.s, nodes=mesh.data_nodes, t0=parts["t0"], tf=parts["tf"],
                      chi=parts["chi"], ups=parts["ups"], p=parts["p"], bubble=bubble)


def mirs_values(dop: DopDefinition, mesh: Mesh, z) -> np.ndarray:
    """Transcription-tier mean integrated residual squared per equation."""
    disc = Discretization(dop, mesh)
    z = np.asarray(z, dtype=float)
    if z.shape != (disc.lay.size,):
        raise ValueError(f"flat vector has length {z.size}, layout expects {disc.lay.size}")
    terms = np.asarray(disc.mirs_terms(z[disc.lay.interval_index()]))
    # sequential sum, the order the NLP rows accumulate in; a cap set to this
    # value is then met exactly when the cost NLP evaluates it
    return np.cumsum(terms, axis=0)[-1]


def dair_cost_value(dop: DopDefinition, mesh: Mesh, z) -> float:
    disc = Discretization(dop, mesh)
    z = np.asarray(z, dtype=float)
    return float(sum(np.sum(f(z[i])) for f, i in dair_cost_terms(disc)))


def default_initial_guess(dop: DopDefinition, mesh: Mesh) -> np.ndarray:
    """Linear state interpolation between guess endpoints; inputs at their guess or box midpoint."""
    lay = DecisionLayout(dop, mesh)
    frac = mesh.s[:-1, None] + mesh.fractions[:, None] * mesh.data_nodes[None, :]   # (K, N)
    if dop.x_guess is not None:
        xa, xb = (np.asarray(v, dtype=float) for v in dop.x_guess)
    else:
        xa = xb = dop.sample_point()[0]
    chi = xa + frac[:, :, None] * (xb - xa)
    if dop.u_guess is not None:
        u = np.broadcast_to(np.asarray(dop.u_guess, dtype=float), (dop.m,))
    else:
        u = dop.sample_point()[1]
    ups = np.broadcast_to(u, frac.shape + (dop.m,))
    p = dop.p_guess if dop.p_guess is not None else dop.sample_point()[3]
    tf = dop.tf_guess if dop.tf_guess is not None else 0.5 * (dop.tf[0] + dop.tf[1])
    t0 = 0.5 * (dop.t0[0] + dop.t0[1])
    z = lay.pack(chi, ups, p, t0, tf)
    lb, ub = lay.bounds()
    return np.clip(z, lb, ub)
