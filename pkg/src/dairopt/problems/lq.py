"""Scalar linear-quadratic problem with a closed-form optimum.

    minimize  int_0^1 (x^2 + u^2) dt   subject to  xdot = u,  x(0) = 1.

The Riccati solution is ``P(t) = tanh(1 - t)``, ``u = -P x``, giving the
optimal cost ``P(0) x(0)^2 = tanh(1)``.
"""

import numpy as np

from .. import autodiff as ad
from ..problem import DopDefinition

OPTIMAL_COST = float(np.tanh(1.0))


def optimal_state(t):
    t = np.asarray(t, dtype=float)
    return np.cosh(1.0 - t) / np.cosh(1.0)


def optimal_input(t):
    t = np.asarray(t, dtype=float)
    return -np.sinh(1.0 - t) / np.cosh(1.0)


def make() -> DopDefinition:
    return DopDefinition(
        name="lq-analytic", n=1, m=1,
        dynamics=lambda x, u, t, p: ad.stack([u[0]]),
        t0=(0.0, 0.0), tf=(1.0, 1.0), n_q=1,
        lagrange=lambda x, u, t, p: x[0] * x[0] + u[0] * u[0],
        boundary=lambda x0, t0, xf, tf, p: ad.stack([x0[0] - 1.0]),
        x_guess=(np.array([1.0]), np.array([1.0])), u_guess=np.array([0.0]),
        state_names=("x",), input_names=("u",),
        notes="optimal cost tanh(1)",
    )
