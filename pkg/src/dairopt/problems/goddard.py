"""Goddard rocket, single phase, free final time (normalized units).

States ``(h, v, m)``: altitude, velocity, mass, all scaled so that
``h(0) = m(0) = 1`` and ``v(0) = 0``. Thrust ``T in [0, 3.5]``, exhaust
speed ``c = 0.5``, drag ``D = 310 v^2 exp(-500 (h - 1))``, gravity ``1/h^2``,
final mass 0.6. The goal is to maximize the final altitude.
"""

import numpy as np

from .. import autodiff as ad
from ..problem import DopDefinition

T_MAX = 3.5
EXHAUST = 0.5
DRAG = 310.0
H_SCALE = 500.0
M_FINAL = 0.6


def dynamics(x, u, t, p):
    h, v, m = x[0], x[1], x[2]
    drag = DRAG * v * v * ad.exp(-H_SCALE * (h - 1.0))
    return ad.stack([v, (u[0] - drag) / m - 1.0 / (h * h), -u[0] / EXHAUST])


def boundary(x0, t0, xf, tf, p):
    return ad.stack([x0[0] - 1.0, x0[1], x0[2] - 1.0, xf[2] - M_FINAL])


def make() -> DopDefinition:
    return DopDefinition(
        name="goddard", n=3, m=1, dynamics=dynamics,
        t0=(0.0, 0.0), tf=(0.05, 1.0), n_q=4,
        mayer=lambda x0, t0, xf, tf, p: -xf[0],
        boundary=boundary,
        x_bounds=([1.0, 0.0, M_FINAL], [1.5, 1.0, 1.0]),
        u_bounds=([0.0], [T_MAX]),
        x_guess=(np.array([1.0, 0.0, 1.0]), np.array([1.01, 0.0, M_FINAL])),
        u_guess=np.array([0.5 * T_MAX]), tf_guess=0.2,
        state_names=("h", "v", "m"), input_names=("T",),
    )


def singular_window(traj, grid: int = 1000, margin: float = 0.01):
    """Longest time span where thrust stays inside its box by more than ``margin`` of the width."""
    t = np.linspace(traj.t0, traj.tf, grid)
    u = traj.evaluate(t)[2][0]
    inside = (u > margin * T_MAX) & (u < (1.0 - margin) * T_MAX)
    best, start = (0, 0), None
    for i, flag in enumerate(np.append(inside, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    if best[1] - best[0] < 2:
        raise ValueError("no interior thrust window found")
    return float(t[best[0]]), float(t[best[1] - 1])


def thrust_tv(traj, window, grid: int = 1000) -> float:
    """Total variation of the input over ``window`` on a uniform grid."""
    a, b = window
    if not b > a:
        raise ValueError("empty window")
    if a < traj.t0 - 1e-12 or b > traj.tf + 1e-12:
        raise ValueError("window outside the horizon")
    t = np.linspace(a, b, grid)
    u = traj.evaluate(t)[2][0]
    return float(np.sum(np.abs(np.diff(u))))
