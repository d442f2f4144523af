"""Planar pendulum in Cartesian coordinates: an index-3 DAE.

States ``(x, y, vx, vy)``; inputs ``(u, lam)`` with ``u`` a horizontal force
and ``lam`` the constraint multiplier (treated as an algebraic input). Unit
mass, rod length 1, gravity 9.81. The algebraic equation is the
position-level constraint ``x^2 + y^2 - 1 = 0``. The pendulum starts at rest
45 degrees off the vertical and must be brought to rest at the bottom
(``x = 0``, ``vx = 0``) at ``t = 2`` with minimal ``int u^2``.
"""

import numpy as np

from .. import autodiff as ad
from ..problem import DopDefinition

LENGTH = 1.0
GRAVITY = 9.81
T_FINAL = 2.0
ANGLE0 = np.pi / 4.0
X0 = np.array([LENGTH * np.sin(ANGLE0), -LENGTH * np.cos(ANGLE0), 0.0, 0.0])


def dynamics(x, u, t, p):
    return ad.stack([x[2], x[3], -2.0 * x[0] * u[1] + u[0], -2.0 * x[1] * u[1] - GRAVITY])


def constraint(x, xdot, u, t, p):
    return ad.stack([x[0] * x[0] + x[1] * x[1] - LENGTH * LENGTH])


def boundary(x0, t0, xf, tf, p):
    return ad.stack([x0[0] - X0[0], x0[1] - X0[1], x0[2], x0[3], xf[0], xf[2]])


def make() -> DopDefinition:
    return DopDefinition(
        name="dae-pendulum", n=4, m=2, n_g=1, dynamics=dynamics, dae=constraint,
        t0=(0.0, 0.0), tf=(T_FINAL, T_FINAL), n_q=6,
        lagrange=lambda x, u, t, p: u[0] * u[0],
        boundary=boundary,
        x_bounds=([-1.5, -1.5, -10.0, -10.0], [1.5, 1.5, 10.0, 10.0]),
        u_bounds=([-20.0, -50.0], [20.0, 50.0]),
        x_guess=(X0.copy(), np.array([0.0, -LENGTH, 0.0, 0.0])),
        u_guess=np.array([0.0, GRAVITY / (2.0 * LENGTH)]),
        state_names=("x", "y", "vx", "vy"), input_names=("u", "lam"),
    )


def manifold_drift(traj, grid: int = 1000) -> float:
    """Max of ``|x^2 + y^2 - L^2|`` on a uniform grid."""
    if traj.chi.shape[-1] != 4:
        raise ValueError("trajectory does not belong to the pendulum problem")
    t = np.linspace(traj.t0, traj.tf, grid)
    x = traj.evaluate(t)[0]
    return float(np.max(np.abs(x[0] ** 2 + x[1] ** 2 - LENGTH ** 2)))
