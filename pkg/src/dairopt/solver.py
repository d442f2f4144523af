"""Built-in NLP solver and backend registry.

The reference solver minimizes an augmented-Lagrangian barrier merit

    Phi(x, s) = f(x) - mu * sum(log bound slacks) - mu * sum(log s)
                + lam' c(x, s) + rho/2 |c(x, s)|^2,
    c(x, s) = [c_E(x); c_I(x) + s],

by damped Newton steps with primal-dual barrier Hessians and an
inertia-correcting diagonal shift (the condensed matrix must admit a Cholesky
factorization). Slacks are reset to their exact minimizer after every step.
When an inner subproblem is solved to ``kappa_eps * mu`` the multipliers are
updated (``lam <- lam + rho c``) if the constraint violation dropped below
the current target, otherwise ``rho`` grows; ``mu`` is then reduced.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .nlp import TranscribedNlp

STATUSES = ("converged", "early-terminated", "max-iterations",
            "infeasible-detected", "numerical-failure")
LOG_FIELDS = ("iter", "objective", "eq_violation", "ineq_violation", "step_norm",
              "mu", "rho", "alpha", "delta", "merit_before", "merit_after")


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-9
    max_iterations: int = 1000
    mu_init: float = 1e-1
    mu_reduction: float = 0.2
    mu_min: float = 1e-11
    rho_init: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e13
    kappa_eps: float = 10.0
    acceptable_tol: float = 1e-6
    max_stalls: int = 4
    bound_push: float = 1e-2
    scaling: bool = True
    callback: Optional[Callable] = None
    verbose: int = 0
    backend: str = "builtin"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.mu_reduction < 1.0:
            raise ValueError("mu_reduction must lie in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def with_(self, **kw) -> "SolverOptions":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "tol", "max_iterations", "mu_init", "mu_reduction", "mu_min", "rho_init",
            "rho_growth", "rho_max", "kappa_eps", "acceptable_tol", "max_stalls", "bound_push", "scaling", "verbose", "backend")}

    @classmethod
    def from_dict(cls, d: dict) -> "SolverOptions":
        known = set(cls().to_dict())
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown solver options: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SolveOutcome:
    status: str
    x: np.ndarray
    objective: float
    eq_violation: float
    ineq_violation: float
    iterations: int
    log: list = field(default_factory=list)
    multipliers: dict = field(default_factory=dict)
    message: str = ""

    @property
    def success(self) -> bool:
        return self.status in ("converged", "early-terminated")

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for row in self.log:
            w.writerow([row["iter"]] + [f"{row[k]:.12e}" for k in LOG_FIELDS[1:]])
        return buf.getvalue()


# ----- helpers ---------------------------------------------------------------

def _violations(nlp: TranscribedNlp, F: np.ndarray):
    ce = F[nlp.eq_slice]
    ci = F[nlp.ineq_slice]
    eq = float(np.max(np.abs(ce))) if ce.size else 0.0
    iq = float(np.max(np.maximum(ci, 0.0))) if ci.size else 0.0
    return eq, iq


def _optimal_slack(a, rho, mu):
    """Minimizer over s > 0 of ``-mu log s + a s + rho/2 s^2 (+ const)``.

    ``a = lam + rho c_I``; the rationalized root avoids cancellation.
    """
    disc = np.sqrt(a * a + 4.0 * rho * mu)
    pos = a > 0.0
    return np.where(pos, 2.0 * mu / np.where(pos, a + disc, 1.0), (disc - a) / (2.0 * rho))


def _cholesky(M, delta_last):
    """Factor ``M + delta I`` with the smallest workable shift from a ladder."""
    n = M.shape[0]
    diag = np.arange(n)
    try:
        return sla.cho_factor(M, lower=True, check_finite=False), 0.0
    except sla.LinAlgError:
        pass
    delta = 1e-4 if delta_last == 0.0 else max(1e-20, delta_last / 3.0)
    scale = max(1.0, float(np.max(np.abs(M[diag, diag]))) if n else 1.0)
    while delta < 1e40:
        A = M.copy()
        A[diag, diag] += delta * scale
        try:
            return sla.cho_factor(A, lower=True, check_finite=False), delta
        except sla.LinAlgError:
            delta *= 8.0 if delta_last else 100.0
    raise np.linalg.LinAlgError("could not regularize the Newton matrix")


def _ls_stationarity(gf, JE, JI, cI, x, lb, ub, has_l, has_u, fixed, tol):
    """Stationarity with least-squares multipliers of the near-active set.

    Running multiplier estimates can lag far behind the iterate when merit
    decreases fall below rounding; this check does not depend on them.
    Returns ``inf`` when a multiplier has the wrong sign.
    """
    act_i = np.flatnonzero(cI > -1e-6)
    at_l = np.flatnonzero(has_l & (x - lb <= 1e-6 * np.maximum(1.0, np.abs(lb))))
    at_u = np.flatnonzero(has_u & (ub - x <= 1e-6 * np.maximum(1.0, np.abs(ub))))
    n = gf.size
    cols = [JE.T.toarray(), JI[act_i].T.toarray(),
            -np.eye(n)[:, at_l], np.eye(n)[:, at_u]]
    A = np.hstack(cols)
    free = ~fixed
    if A.shape[1] == 0:
        return float(np.max(np.abs(gf[free]))) if free.any() else 0.0
    y = np.linalg.lstsq(A[free], -gf[free], rcond=None)[0]
    nE = JE.shape[0]
    if np.any(y[nE:] < -tol):
        return np.inf
    r = gf + A @ y
    return float(np.max(np.abs(r[free]))) if free.any() else 0.0


# ----- the solver ------------------------------------------------------------

def solve_builtin(nlp: TranscribedNlp, x0, opts: SolverOptions = SolverOptions()) -> SolveOutcome:
    n = nlp.n
    lb, ub = nlp.lb.copy(), nlp.ub.copy()
    fixed = np.isfinite(lb) & np.isfinite(ub) & (ub - lb <= 1e-14 * np.maximum(1.0, np.abs(lb)))
    has_l = np.isfinite(lb) & ~fixed
    has_u = np.isfinite(ub) & ~fixed
    lb_s = np.where(has_l, lb, 0.0)
    ub_s = np.where(has_u, ub, 0.0)

    x = np.array(x0, dtype=float, copy=True)
    if x.shape != (n,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({n},)")
    x[fixed] = lb[fixed]
    # push into the strict interior
    span = np.where(has_l & has_u, ub_s - lb_s, np.inf)
    push_l = np.minimum(opts.bound_push * np.maximum(1.0, np.abs(lb_s)), 0.49 * span)
    push_u = np.minimum(opts.bound_push * np.maximum(1.0, np.abs(ub_s)), 0.49 * span)
    x = np.where(has_l, np.maximum(x, lb_s + push_l), x)
    x = np.where(has_u, np.minimum(x, ub_s - push_u), x)

    nE, nI = nlp.n_eq, nlp.n_ineq
    F, J, _ = nlp.derivatives(x)
    if not np.all(np.isfinite(F)):
        return SolveOutcome("numerical-failure", x, float("nan"), float("nan"), float("nan"), 0,
                            message="non-finite function values at the initial point")

    # gradient-based scaling of objective and constraint rows
    sc = np.ones(nlp.nf)
    if opts.scaling:
        rowmax = np.asarray(abs(J).max(axis=1).todense()).ravel()
        sc = np.minimum(1.0, 100.0 / np.maximum(rowmax, 1e-300))
        sc[rowmax == 0.0] = 1.0
    sc_E, sc_I = sc[nlp.eq_slice], sc[nlp.ineq_slice]
    sc_f = sc[0]
    S_E, S_I = sp.diags(sc_E), sp.diags(sc_I)

    mu = opts.mu_init
    rho = opts.rho_init
    lam_E = np.zeros(nE)
    lam_I = np.zeros(nI)
    eta = 0.1
    delta_last = 0.0

    def parts(F):
        return sc_f * F[0], sc_E * F[nlp.eq_slice], sc_I * F[nlp.ineq_slice]

    def barrier(x):
        vals = []
        if has_l.any():
            vals.append(x[has_l] - lb[has_l])
        if has_u.any():
            vals.append(ub[has_u] - x[has_u])
        return np.concatenate(vals) if vals else np.zeros(0)

    def merit(F, x, s, mu, lam_E, lam_I, rho):
        f, cE, cI = parts(F)
        b = barrier(x)
        if np.any(b <= 0.0) or np.any(s <= 0.0):
            return np.inf
        c = np.concatenate([cE, cI + s])
        lam = np.concatenate([lam_E, lam_I])
        val = f - mu * (np.sum(np.log(b)) + np.sum(np.log(s))) + lam @ c + 0.5 * rho * (c @ c)
        return float(val) if np.isfinite(val) else np.inf

    _, _, cI = parts(F)
    s = _optimal_slack(lam_I + rho * cI, rho, mu)
    zl = np.where(has_l, mu / np.where(has_l, x - lb_s, 1.0), 0.0)
    zu = np.where(has_u, mu / np.where(has_u, ub_s - x, 1.0), 0.0)

    def kkt(gf, JE, JI, cE, cI, s, zl, zu, mu):
        yE = lam_E + rho * cE
        yI = lam_I + rho * (cI + s)
        r_x = gf + JE.T @ yE + JI.T @ yI - zl + zu
        r_x[fixed] = 0.0
        comp = [np.where(has_l, (x - lb_s) * zl, 0.0)[has_l],
                np.where(has_u, (ub_s - x) * zu, 0.0)[has_u], s * yI]
        ysum = np.abs(yE).sum() + np.abs(yI).sum() + zl.sum() + zu.sum()
        s_d = max(100.0, ysum / max(1, nE + nI + n)) / 100.0
        stat = float(np.max(np.abs(r_x))) / s_d if n else 0.0
        feas = max(float(np.max(np.abs(cE))) if nE else 0.0,
                   float(np.max(np.maximum(cI, 0.0))) if nI else 0.0)
        comp0 = max([float(np.max(np.abs(v))) for v in comp if v.size] or [0.0]) / s_d
        compmu = max([float(np.max(np.abs(v - mu))) for v in comp if v.size] or [0.0]) / s_d
        alfeas = max(float(np.max(np.abs(cE))) if nE else 0.0,
                     float(np.max(np.abs(cI + s))) if nI else 0.0)
        return yE, yI, stat, feas, comp0, compmu, alfeas

    def acceptable():
        f, cE, cI = parts(F)
        JE = S_E @ J[nlp.eq_slice]
        JI = S_I @ J[nlp.ineq_slice]
        gf = sc_f * np.asarray(J[0].todense()).ravel()
        yE, yI, stat, feas, comp0, _, _ = kkt(gf, JE, JI, cE, cI, s, zl, zu, mu)
        # stationarity relative to the size of the terms that must cancel
        size = max([1.0] + [float(np.max(np.abs(v))) for v in (gf, JE.T @ yE, JI.T @ yI) if v.size])
        stat = min(stat, stat / size, _ls_stationarity(gf, JE, JI, cI, x, lb_s, ub_s, has_l, has_u,
                                                       fixed, opts.acceptable_tol) / size)
        if opts.verbose:
            print(f"final check: stat={stat:.2e} feas={feas:.2e} comp={comp0:.2e}")
        return feas <= 10 * opts.tol and max(stat, comp0) <= opts.acceptable_tol

    log: list = []
    status, message = "max-iterations", ""
    it = 0
    stalls = 0
    for it in range(opts.max_iterations):
        f, cE, cI = parts(F)
        JE = (S_E @ J[nlp.eq_slice]).tocsr()
        JI = (S_I @ J[nlp.ineq_slice]).tocsr()
        gf = sc_f * np.asarray(J[0].todense()).ravel()
        eq_v, iq_v = _violations(nlp, F)

        if opts.callback is not None and opts.callback(x.copy()):
            status = "early-terminated"
            break

        # outer updates while the inner subproblem is solved
        for _ in range(8):
            yE, yI, stat, feas_s, comp0, compmu, alfeas = kkt(gf, JE, JI, cE, cI, s, zl, zu, mu)
            if stat <= opts.tol and feas_s <= opts.tol and comp0 <= opts.tol:
                status = "converged"
                break
            inner = max(stat, compmu)
            if inner > opts.kappa_eps * mu and not stalls:
                break
            if alfeas <= max(eta, opts.tol):
                lam_E, lam_I = yE, yI
                eta = max(0.1 * eta, 0.1 * opts.tol)
            else:
                rho *= opts.rho_growth
            mu = max(opts.mu_min, mu * opts.mu_reduction)
            s = _optimal_slack(lam_I + rho * cI, rho, mu)
            if stalls or (mu == opts.mu_min and inner <= opts.kappa_eps * mu
                          and alfeas > eta and rho > opts.rho_max):
                break
        if status == "converged":
            break
        if rho > opts.rho_max:
            status, message = "infeasible-detected", "penalty parameter exceeded its cap"
            break

        yE = lam_E + rho * cE
        yI = lam_I + rho * (cI + s)
        weights = np.concatenate([[sc_f], sc_E * yE, sc_I * yI])
        _, _, H = nlp.derivatives(x, weights)
        if not np.all(np.isfinite(H)):
            status, message = "numerical-failure", "non-finite Hessian"
            break

        dl = np.where(has_l, x - lb_s, 1.0)
        du = np.where(has_u, ub_s - x, 1.0)
        sig_x = np.where(has_l, zl / dl, 0.0) + np.where(has_u, zu / du, 0.0)
        sig_s = mu / (s * s)
        g_x = gf + JE.T @ yE + JI.T @ yI - np.where(has_l, mu / dl, 0.0) + np.where(has_u, mu / du, 0.0)
        g_s = yI - mu / s
        d_s = rho + sig_s
        M = H + rho * (JE.T @ JE).toarray() + (JI.T @ sp.diags(rho * sig_s / d_s) @ JI).toarray()
        M[np.diag_indices(n)] += sig_x
        rhs = -g_x + rho * (JI.T @ (g_s / d_s))
        if fixed.any():
            M[fixed, :] = 0.0
            M[:, fixed] = 0.0
            M[fixed, fixed] = 1.0
            rhs[fixed] = 0.0

        phi0 = merit(F, x, s, mu, lam_E, lam_I, rho)
        roundoff = 1e-12 * max(1.0, abs(phi0))
        accepted = False
        for attempt in range(6):
            try:
                factor, delta = _cholesky(M if attempt == 0 else M + np.eye(n) * delta_bump, delta_last)
            except np.linalg.LinAlgError:
                break
            dx = sla.cho_solve(factor, rhs, check_finite=False)
            ds = (-g_s - rho * (JI @ dx)) / d_s
            slope = float(g_x @ dx + g_s @ ds)
            if slope >= 0.0:
                delta_bump = max(1e-8, 10.0 * delta) * max(1.0, float(np.max(np.abs(np.diag(M)))))
                continue
            tau = max(0.99, 1.0 - mu)
            amax = 1.0
            for arr, d, side in ((x - lb_s, dx, has_l), (ub_s - x, -dx, has_u)):
                mask = side & (d < 0)
                if mask.any():
                    amax = min(amax, float(np.min(-tau * arr[mask] / d[mask])))
            neg = ds < 0
            if neg.any():
                amax = min(amax, float(np.min(-tau * s[neg] / ds[neg])))
            alpha = amax
            while alpha > 1e-14:
                xt = x + alpha * dx
                st = s + alpha * ds
                Ft = nlp.evaluate(xt)
                phit = merit(Ft, xt, st, mu, lam_E, lam_I, rho) if np.all(np.isfinite(Ft)) else np.inf
                if phit <= phi0 + 1e-4 * alpha * slope:
                    accepted = True
                    break
                if alpha == amax and -slope <= roundoff and phit <= phi0:
                    # predicted decrease is below rounding: take the step as is
                    accepted = True
                    break
                alpha *= 0.5
            if accepted:
                break
            delta_bump = max(1e-8, 10.0 * delta) * max(1.0, float(np.max(np.abs(np.diag(M)))))
        if not accepted and opts.verbose:
            print(f"     line search failed: slope={slope:.2e} phi0={phi0:.15e} amax={amax:.2e} "
                  f"stat={stat:.1e} comp={comp0:.1e} feas={feas_s:.1e}")
        if not accepted:
            # No descent left at this precision: treat the barrier subproblem
            # as solved and move on; give up after repeated stalls.
            zl = np.where(has_l, mu / dl, 0.0)
            zu = np.where(has_u, mu / du, 0.0)
            stalls += 1
            if stalls <= opts.max_stalls:
                continue
            if acceptable():
                status, message = "converged", "stopped at an acceptable point (line search stalled)"
            else:
                status, message = "numerical-failure", "line search failed"
            break
        delta_last = delta

        # dual step for bound multipliers with fraction-to-boundary and safeguard
        dzl = np.where(has_l, mu / dl - zl - zl / dl * dx, 0.0)
        dzu = np.where(has_u, mu / du - zu + zu / du * dx, 0.0)
        az = 1.0
        for z, dz, mask in ((zl, dzl, has_l), (zu, dzu, has_u)):
            m_ = mask & (dz < 0)
            if m_.any():
                az = min(az, float(np.min(-tau * z[m_] / dz[m_])))
        x = xt
        zl = zl + az * dzl
        zu = zu + az * dzu
        F, J, _ = nlp.derivatives(x)
        _, _, cI_new = parts(F)
        s_reset = _optimal_slack(lam_I + rho * cI_new, rho, mu)
        phi1 = merit(F, x, s_reset, mu, lam_E, lam_I, rho)
        # the reset is optimal in exact arithmetic; never let rounding make it worse
        if phi1 <= phit:
            s = s_reset
        else:
            s, phi1 = st, phit
        if phi0 - phi1 > 1e-13 * max(1.0, abs(phi0)):
            stalls = 0
        else:
            stalls += 1
        dl = np.where(has_l, x - lb_s, 1.0)
        du = np.where(has_u, ub_s - x, 1.0)
        k_sig = 1e10
        zl = np.where(has_l, np.clip(zl, mu / (k_sig * dl), k_sig * mu / dl), 0.0)
        zu = np.where(has_u, np.clip(zu, mu / (k_sig * du), k_sig * mu / du), 0.0)

        eq_v, iq_v = _violations(nlp, F)
        log.append({"iter": it, "objective": float(F[0]), "eq_violation": eq_v,
                    "ineq_violation": iq_v, "step_norm": float(alpha * np.max(np.abs(dx))) if n else 0.0,
                    "mu": mu, "rho": rho, "alpha": alpha, "delta": delta,
                    "merit_before": phi0, "merit_after": phi1})
        if opts.verbose:
            print(f"{it:4d} f={F[0]: .8e} eq={eq_v:.2e} iq={iq_v:.2e} st={stat:.1e} mu={mu:.1e} "
                  f"rho={rho:.1e} a={alpha:.2e} d={delta:.1e}")
        if not np.all(np.isfinite(F)):
            status, message = "numerical-failure", "non-finite function values"
            break
        if stalls > opts.max_stalls:
            if acceptable():
                status, message = "converged", "stopped at an acceptable point (no further progress)"
            else:
                status, message = "numerical-failure", "no further progress"
            break
    else:
        it = opts.max_iterations

    eq_v, iq_v = _violations(nlp, F)
    return SolveOutcome(status=status, x=x, objective=float(F[0]), eq_violation=eq_v,
                        ineq_violation=iq_v, iterations=len(log), log=log,
                        multipliers={"eq": lam_E * sc_E / sc_f, "ineq": lam_I * sc_I / sc_f},
                        message=message)


# ----- backends --------------------------------------------------------------

_BACKENDS: dict = {"builtin": solve_builtin}


class BackendError(KeyError):
    pass


def register_backend(name: str, adapter: Callable) -> None:
    """Make ``adapter(nlp, x0, opts) -> SolveOutcome`` selectable by name."""
    if name in _BACKENDS:
        raise BackendError(f"backend {name!r} is already registered")
    _BACKENDS[name] = adapter


def unregister_backend(name: str) -> None:
    if name == "builtin":
        raise BackendError("the builtin backend cannot be removed")
    _BACKENDS.pop(name, None)


def available_backends() -> list:
    return sorted(_BACKENDS)


def get_backend(name: str) -> Callable:
    try:
        return _BACKENDS[name]
    except KeyError:
        raise BackendError(f"unknown backend {name!r}; available: {available_backends()}") from None


def solve(nlp: TranscribedNlp, x0=None, opts: SolverOptions = SolverOptions()) -> SolveOutcome:
    """Solve ``nlp`` from ``x0`` (defaults to ``nlp.x0``) with the selected backend."""
    if x0 is None:
        x0 = nlp.x0
    if x0 is None:
        raise ValueError("no initial point given")
    x0 = np.clip(np.asarray(x0, dtype=float), nlp.lb, nlp.ub)
    return get_backend(opts.backend)(nlp, x0, opts)


def scipy_slsqp_adapter(nlp: TranscribedNlp, x0, opts: SolverOptions) -> SolveOutcome:
    """Adapter around :func:`scipy.optimize.minimize` (SLSQP) for cross-checks."""
    from scipy.optimize import minimize

    cache: dict = {}

    def ev(x):
        key = x.tobytes()
        if key not in cache:
            cache.clear()
            F, J, _ = nlp.derivatives(x)
            cache[key] = (F, J.toarray())
        return cache[key]

    cons = []
    if nlp.n_eq:
        cons.append({"type": "eq", "fun": lambda x: ev(x)[0][nlp.eq_slice],
                     "jac": lambda x: ev(x)[1][nlp.eq_slice]})
    if nlp.n_ineq:
        cons.append({"type": "ineq", "fun": lambda x: -ev(x)[0][nlp.ineq_slice],
                     "jac": lambda x: -ev(x)[1][nlp.ineq_slice]})
    bounds = list(zip(np.where(np.isfinite(nlp.lb), nlp.lb, None),
                      np.where(np.isfinite(nlp.ub), nlp.ub, None)))
    stop = {"hit": False}

    def cb(xk):
        if opts.callback is not None and opts.callback(np.array(xk)):
            stop["hit"] = True
            raise StopIteration

    try:
        res = minimize(lambda x: ev(x)[0][0], x0, jac=lambda x: ev(x)[1][0], method="SLSQP",
                       bounds=bounds, constraints=cons, callback=cb,
                       options={"maxiter": opts.max_iterations, "ftol": opts.tol * 1e-3})
        x, ok, msg, nit = res.x, res.success, res.message, res.nit
    except StopIteration:
        x, ok, msg, nit = None, True, "callback", 0
    if stop["hit"]:
        status = "early-terminated"
    else:
        status = "converged" if ok else "numerical-failure"
    x = np.asarray(x if x is not None else x0, dtype=float)
    F = nlp.evaluate(x)
    eq_v, iq_v = _violations(nlp, F)
    return SolveOutcome(status, x, float(F[0]), eq_v, iq_v, int(nit), message=str(msg))


register_backend("scipy-slsqp", scipy_slsqp_adapter)
