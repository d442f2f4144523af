"""Benchmark problems and their metric hooks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..mesh import build_mesh
from . import cartpole, goddard, lq, pendulum


@dataclass(frozen=True)
class BenchmarkCase:
    """A problem factory with its recommended discretization and metrics."""

    name: str
    make: Callable
    scheme: str
    K: int
    degree: Optional[int] = None
    weights: Optional[tuple] = None
    metrics: dict = field(default_factory=dict)
    analytic: Optional[dict] = None
    description: str = ""

    def mesh(self, K: Optional[int] = None, **kw):
        return build_mesh(self.scheme, K or self.K, degree=self.degree, **kw)

    def config(self) -> dict:
        """Ready-to-run configuration for the recommended setup."""
        cfg = {"problem": self.name, "scheme": "hs" if self.scheme == "hermite-simpson" else self.scheme,
               "K": self.K, "method": "dair"}
        if self.degree is not None and self.scheme == "lgr":
            cfg["degree"] = self.degree
        if self.weights is not None:
            cfg["weights"] = list(self.weights)
        return cfg

    def config_json(self) -> str:
        return json.dumps(self.config(), sort_keys=True, indent=2)


_REGISTRY: dict = {}


def register_problem(case: BenchmarkCase) -> None:
    if case.name in _REGISTRY:
        raise KeyError(f"problem {case.name!r} already registered")
    _REGISTRY[case.name] = case


def get_problem(name: str) -> BenchmarkCase:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; available: {sorted(_REGISTRY)}") from None


def problem_names() -> list:
    return sorted(_REGISTRY)


def _terminal_metric(traj):
    return cartpole.terminal_violation(traj.evaluate(traj.tf)[0])


register_problem(BenchmarkCase(
    "lq-analytic", lq.make, "hermite-simpson", 16,
    analytic={"objective": lq.OPTIMAL_COST, "state": lq.optimal_state, "input": lq.optimal_input},
    description="scalar LQ regulator with cost tanh(1)"))
register_problem(BenchmarkCase(
    "cartpole", cartpole.make, "hermite-simpson", 7, weights=tuple(cartpole.RESIDUAL_WEIGHTS),
    metrics={"terminal_violation": _terminal_metric},
    description="cart-pole swing-up in 2 s"))
register_problem(BenchmarkCase(
    "goddard", goddard.make, "hermite-simpson", 99,
    metrics={"thrust_tv": lambda traj: goddard.thrust_tv(traj, goddard.singular_window(traj))},
    description="Goddard rocket, bang-singular-bang thrust"))
register_problem(BenchmarkCase(
    "dae-pendulum", pendulum.make, "lgr", 50, degree=5,
    metrics={"manifold_drift": pendulum.manifold_drift},
    description="index-3 Cartesian pendulum"))


def cartpole_terminal_violation(traj_or_state) -> float:
    """Terminal violation of a trajectory or of a 4-vector terminal state."""
    if hasattr(traj_or_state, "evaluate"):
        return _terminal_metric(traj_or_state)
    return cartpole.terminal_violation(traj_or_state)


def goddard_thrust_tv(traj, window) -> float:
    return goddard.thrust_tv(traj, window)


def dae_manifold_drift(traj) -> float:
    return pendulum.manifold_drift(traj)


__all__ = ["BenchmarkCase", "register_problem", "get_problem", "problem_names",
           "cartpole_terminal_violation", "goddard_thrust_tv", "dae_manifold_drift",
           "cartpole", "goddard", "lq", "pendulum"]
