"""Meshes, node families, Lagrange operators and quadrature rules.

All node locations are stored as fractions: interval boundaries ``s`` live
in [0, 1] over the whole horizon and data/quadrature nodes live in [0, 1]
within each interval. Absolute times follow from ``t0 + s * (tf - t0)``,
so free-time problems rescale without rebuilding the mesh.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre

SCHEMES = ("hermite-simpson", "lgr", "uniform")


class MeshError(ValueError):
    """Invalid mesh parameters or inconsistent options."""


# ----- node families -------------------------------------------------------

def _legendre_pair(n: int, x: np.ndarray):
    """P_{n-1}(x), P_n(x) and their derivatives by the three-term recurrence."""
    p_prev = np.ones_like(x)
    p = x.copy()
    dp_prev = np.zeros_like(x)
    dp = np.ones_like(x)
    if n == 0:
        return np.zeros_like(x), p_prev, np.zeros_like(x), dp_prev
    for k in range(1, n):
        p_next = ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
        dp_next = dp_prev + (2 * k + 1) * p
        p_prev, p = p, p_next
        dp_prev, dp = dp, dp_next
    return p_prev, p, dp_prev, dp


def lgr_nodes(degree: int, return_weights: bool = False):
    """Legendre-Gauss-Radau points on [0, 1), left endpoint included.

    The interior points are roots of P_{N-1} + P_N (N = ``degree``), found by
    Newton iteration from Chebyshev-Gauss-Radau guesses.
    """
    if not isinstance(degree, (int, np.integer)) or degree < 1 or degree > 64:
        raise MeshError(f"LGR degree must be an integer in [1, 64], got {degree!r}")
    n = int(degree)
    x = -np.cos(2.0 * np.pi * np.arange(n) / (2 * n - 1))
    x[0] = -1.0
    if n > 1:
        xi = x[1:]
        for _ in range(100):
            pm, p, dpm, dp = _legendre_pair(n, xi)
            step = (pm + p) / (dpm + dp)
            xi = xi - step
            if np.max(np.abs(step)) < 1e-15:
                break
        x[1:] = np.sort(xi)
    frac = (x + 1.0) / 2.0
    if not return_weights:
        return frac
    pm, _, _, _ = _legendre_pair(n, x)
    w = (1.0 - x) / (n * n * pm * pm)
    w[0] = 2.0 / (n * n)
    return frac, w / 2.0


def gauss_legendre(order: int):
    """Gauss-Legendre abscissae and weights on the unit interval."""
    if not isinstance(order, (int, np.integer)) or order < 1 or order > 128:
        raise MeshError(f"Gauss-Legendre order must be an integer in [1, 128], got {order!r}")
    x, w = legendre.leggauss(int(order))
    return (x + 1.0) / 2.0, w / 2.0


def interpolatory_weights(nodes) -> np.ndarray:
    """Weights on [0, 1] integrating the interpolant through ``nodes`` exactly."""
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size
    # Legendre-based moment system is better conditioned than monomials
    x = 2.0 * nodes - 1.0
    vand = legendre.legvander(x, n - 1).T
    moments = np.zeros(n)
    moments[0] = 2.0
    return np.linalg.solve(vand, moments) / 2.0


# ----- Lagrange machinery --------------------------------------------------

def barycentric_weights(nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def lagrange_basis(nodes, tau) -> np.ndarray:
    """Rows of Lagrange basis values ``l_i(tau)`` in barycentric form."""
    nodes = np.asarray(nodes, dtype=float)
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    bw = barycentric_weights(nodes)
    diff = tau[:, None] - nodes[None, :]
    exact = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = bw[None, :] / diff
        rows = terms / terms.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    rows[hit] = exact[hit].astype(float)
    return rows


def differentiation_matrix(nodes) -> np.ndarray:
    """``D[i, l] = l_l'(nodes[i])`` on the unit interval."""
    nodes = np.asarray(nodes, dtype=float)
    bw = barycentric_weights(nodes)
    n = nodes.size
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    d = (bw[None, :] / bw[:, None]) / diff
    np.fill_diagonal(d, 0.0)
    d[np.arange(n), np.arange(n)] = -d.sum(axis=1)
    return d


def lagrange_derivative_basis(nodes, tau) -> np.ndarray:
    """Rows of basis derivatives ``l_i'(tau)`` (unit interval)."""
    return lagrange_basis(nodes, tau) @ differentiation_matrix(nodes)


def hs_bubble(tau):
    """Cubic ``tau (tau - 1/2) (tau - 1)`` and its derivative.

    Hermite-Simpson state pieces are the quadratic through the three data
    points plus ``c * bubble`` where ``c`` matches the mean endpoint slope to
    the dynamics; ``bubble'(0) + bubble'(1) = 1``.
    """
    tau = np.asarray(tau, dtype=float)
    val = tau * (tau - 0.5) * (tau - 1.0)
    der = 3.0 * tau * tau - 3.0 * tau + 0.5
    return val, der


# ----- mesh ----------------------------------------------------------------

@dataclass(frozen=True)
class IntervalOperators:
    """Collocation and interpolation operators for one interval.

    ``A`` and ``D_template`` give the defect rows
    ``A @ chi + h * D_template @ f(chi) = 0`` with ``h`` the interval
    duration. ``dmat`` differentiates data-point samples (unit interval).
    """

    nodes: np.ndarray
    A: np.ndarray
    D_template: np.ndarray
    dmat: np.ndarray

    def D(self, duration: float) -> np.ndarray:
        return duration * self.D_template

    def interp_rows(self, tau) -> np.ndarray:
        return lagrange_basis(self.nodes, tau)

    def deriv_rows(self, tau) -> np.ndarray:
        return lagrange_derivative_basis(self.nodes, tau)


@dataclass(frozen=True)
class Mesh:
    """Fixed discretization grid on the normalized horizon."""

    scheme: str
    degree: int
    s: np.ndarray
    data_nodes: np.ndarray
    quad_nodes: np.ndarray
    quad_weights: np.ndarray
    collocated: np.ndarray
    colloc_weights: np.ndarray
    state_continuity: str = "implicit"
    input_continuity: str = "continuous"
    quadrature: str = "gauss"
    oversampling: float = 2.0
    _ops: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def K(self) -> int:
        return self.s.size - 1

    @property
    def N(self) -> int:
        """Data points per interval."""
        return self.data_nodes.size

    @property
    def Q(self) -> int:
        return self.quad_nodes.size

    @property
    def fractions(self) -> np.ndarray:
        """Interval length fractions ``s[k+1] - s[k]``."""
        return np.diff(self.s)

    @property
    def has_collocation(self) -> bool:
        return self.scheme in ("hermite-simpson", "lgr")

    def weights(self, k: int) -> np.ndarray:
        """Quadrature weights for interval ``k`` (sum to its length fraction)."""
        return self.quad_weights * self.fractions[k]

    def data_times(self, t0: float, tf: float) -> np.ndarray:
        """``(K, N)`` absolute times of every interval's data points."""
        return t0 + (self.s[:-1, None] + self.fractions[:, None] * self.data_nodes[None, :]) * (tf - t0)

    def distinct_points(self) -> int:
        if self.state_continuity == "implicit":
            return self.K * (self.N - 1) + 1
        return self.K * self.N

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "degree": self.degree,
            "K": self.K,
            "s": self.s.tolist(),
            "quadrature": self.quadrature,
            "oversampling": self.oversampling,
            "state_continuity": self.state_continuity,
            "input_continuity": self.input_continuity,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Mesh":
        return build_mesh(
            d["scheme"], int(d["K"]), degree=d.get("degree"), nodes=d.get("s"),
            quadrature=d.get("quadrature", "gauss"),
            oversampling=d.get("oversampling", 2.0),
            state_continuity=d.get("state_continuity", "implicit"),
            input_continuity=d.get("input_continuity", "continuous"),
        )

    @classmethod
    def from_json(cls, text: str) -> "Mesh":
        return cls.from_dict(json.loads(text))


def build_mesh(scheme: str, K: int, degree: int | None = None, nodes=None,
               quadrature: str = "gauss", oversampling: float = 2.0,
               state_continuity: str = "implicit",
               input_continuity: str = "continuous") -> Mesh:
    """Construct a mesh.

    Args:
        scheme: ``"hermite-simpson"`` (alias ``"hs"``), ``"lgr"`` or ``"uniform"``.
        K: number of intervals.
        degree: polynomial degree for ``lgr`` / ``uniform``.
        nodes: optional major-node fractions (K+1 values, 0 to 1).
        quadrature: ``"gauss"`` for Gauss-Legendre with ``oversampling * N``
            points, or ``"data"`` to integrate at the data points.
        oversampling: ratio Q / N for Gauss quadrature.
        state_continuity: ``"implicit"`` (shared endpoints) or ``"explicit"``.
        input_continuity: ``"continuous"`` or ``"discontinuous"``.
    """
    scheme = {"hs": "hermite-simpson"}.get(scheme, scheme)
    if scheme not in SCHEMES:
        raise MeshError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise MeshError(f"K must be a positive integer, got {K!r}")
    if state_continuity not in ("implicit", "explicit"):
        raise MeshError(f"bad state_continuity {state_continuity!r}")
    if input_continuity not in ("continuous", "discontinuous"):
        raise MeshError(f"bad input_continuity {input_continuity!r}")

    if nodes is None:
        s = np.linspace(0.0, 1.0, K + 1)
    else:
        s = np.asarray(nodes, dtype=float)
        if s.shape != (K + 1,):
            raise MeshError(f"expected {K + 1} major-node fractions, got {s.size}")
        if s[0] != 0.0 or s[-1] != 1.0 or np.any(np.diff(s) <= 0.0):
            raise MeshError("major nodes must increase strictly from 0 to 1")

    if scheme == "hermite-simpson":
        degree = 3
        data = np.array([0.0, 0.5, 1.0])
        collocated = np.ones(3, dtype=bool)
        colloc_w = np.array([1.0, 4.0, 1.0]) / 6.0
    elif scheme == "lgr":
        if degree is None:
            raise MeshError("lgr scheme needs a degree")
        pts, w = lgr_nodes(int(degree), return_weights=True)
        data = np.append(pts, 1.0)
        collocated = np.append(np.ones(pts.size, dtype=bool), False)
        colloc_w = np.append(w, 0.0)
    else:
        if degree is None or degree < 1:
            raise MeshError("uniform scheme needs a degree >= 1")
        data = np.linspace(0.0, 1.0, int(degree) + 1)
        collocated = np.zeros(data.size, dtype=bool)
        colloc_w = interpolatory_weights(data)

    if quadrature == "gauss":
        if oversampling < 1.0:
            raise MeshError("oversampling below 1 would give Q < N")
        q, w = gauss_legendre(int(np.ceil(oversampling * data.size)))
    elif quadrature == "data":
        q, w = data.copy(), colloc_w.copy()
        if scheme == "lgr":
            # all data points, including the non-collocated endpoint
            w = interpolatory_weights(data)
    else:
        raise MeshError(f"unknown quadrature {quadrature!r}")

    return Mesh(scheme=scheme, degree=int(degree), s=s, data_nodes=data,
                quad_nodes=q, quad_weights=w, collocated=collocated,
                colloc_weights=colloc_w, state_continuity=state_continuity,
                input_continuity=input_continuity, quadrature=quadrature,
                oversampling=float(oversampling))


def differentiation_operators(mesh: Mesh, k: int) -> IntervalOperators:
    """Operators for interval ``k`` (0-based)."""
    if not 0 <= k < mesh.K:
        raise IndexError(f"interval index {k} outside [0, {mesh.K})")
    key = "ops"
    if key in mesh._ops:
        return mesh._ops[key]
    nodes = mesh.data_nodes
    dmat = differentiation_matrix(nodes)
    if mesh.scheme == "hermite-simpson":
        A = np.array([[-0.5, 1.0, -0.5], [-1.0, 0.0, 1.0]])
        Dt = np.array([[-1.0 / 8.0, 0.0, 1.0 / 8.0],
                       [-1.0 / 6.0, -4.0 / 6.0, -1.0 / 6.0]])
    elif mesh.scheme == "lgr":
        nc = int(mesh.collocated.sum())
        A = dmat[:nc, :]
        Dt = -np.hstack([np.eye(nc), np.zeros((nc, nodes.size - nc))])
    else:
        A = np.zeros((0, nodes.size))
        Dt = np.zeros((0, nodes.size))
    ops = IntervalOperators(nodes=nodes, A=A, D_template=Dt, dmat=dmat)
    mesh._ops[key] = ops
    return ops
