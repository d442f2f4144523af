"""Cart-pole swing-up.

State order ``(y1, y1dot, theta1, theta1dot)``: cart position, cart velocity,
pole angle (0 hanging down, pi upright) and angular rate. Constants: cart
mass 1 kg, pole mass 0.3 kg, pole length 0.5 m, gravity 9.81 m/s^2, final
time 2 s, target cart position 1 m, force limit 20 N. The cost is the
integral of ``u^2``.
"""

import numpy as np

from .. import autodiff as ad
from ..problem import DopDefinition

M_CART = 1.0
M_POLE = 0.3
LENGTH = 0.5
GRAVITY = 9.81
T_FINAL = 2.0
DISTANCE = 1.0
U_MAX = 20.0
#: per-equation weights on the squared residuals; the pole-angle equation counts double
EQUATION_WEIGHTS = np.array([1.0, 1.0, 2.0, 1.0])
#: diagonal of the residual weighting matrix (squared inside the norm)
RESIDUAL_WEIGHTS = np.sqrt(EQUATION_WEIGHTS)


def dynamics(x, u, t, p):
    q2, dq1, dq2 = x[2], x[1], x[3]
    s, c = ad.sin(q2), ad.cos(q2)
    den = M_CART + M_POLE * (1.0 - c * c)
    ddq1 = (LENGTH * M_POLE * s * dq2 * dq2 + u[0] + M_POLE * GRAVITY * c * s) / den
    ddq2 = -(LENGTH * M_POLE * c * s * dq2 * dq2 + u[0] * c + (M_CART + M_POLE) * GRAVITY * s) / (LENGTH * den)
    return ad.stack([dq1, ddq1, dq2, ddq2])


TARGET = np.array([DISTANCE, 0.0, np.pi, 0.0])


def boundary(x0, t0, xf, tf, p):
    return ad.stack([x0[0], x0[1], x0[2], x0[3],
                     xf[0] - TARGET[0], xf[1] - TARGET[1], xf[2] - TARGET[2], xf[3] - TARGET[3]])


def terminal_violation(state) -> float:
    """``|(y1 - 1, 2 (theta1 - pi), y1dot, theta1dot)|_2`` of a terminal state."""
    x = np.asarray(state, dtype=float)
    if x.shape != (4,):
        raise ValueError(f"expected a 4-vector (y1, y1dot, theta1, theta1dot), got shape {x.shape}")
    return float(np.linalg.norm([x[0] - DISTANCE, 2.0 * (x[2] - np.pi), x[1], x[3]]))


def make() -> DopDefinition:
    return DopDefinition(
        name="cartpole", n=4, m=1, dynamics=dynamics,
        t0=(0.0, 0.0), tf=(T_FINAL, T_FINAL), n_q=8,
        lagrange=lambda x, u, t, p: u[0] * u[0],
        boundary=boundary,
        x_bounds=([-2.0 * DISTANCE, -np.inf, -2.0 * np.pi, -np.inf],
                  [2.0 * DISTANCE, np.inf, 2.0 * np.pi, np.inf]),
        u_bounds=([-U_MAX], [U_MAX]),
        x_guess=(np.zeros(4), TARGET.copy()), u_guess=np.array([0.0]),
        state_names=("y1", "y1dot", "theta1", "theta1dot"), input_names=("u",),
    )
