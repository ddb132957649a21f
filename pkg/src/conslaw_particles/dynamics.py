"""Particle velocities for the integrated and the sampled interaction schemes.

For particle ``i`` of species ``sigma`` the uncongested field is

    U_i = V_sigma(t, x_i) - sum_s (W'_{s->sigma} * rho_s)(x_i)

where the convolution is either evaluated exactly against the reconstructed
piecewise-constant density (integrated scheme, which only needs ``W``) or
sampled at the particles of ``s`` with weight ``1/N_s`` (sampled scheme,
which needs ``W'``). The particle then moves with ``v_sigma(rho) * U_i``,
the mobility being evaluated at the one-sided densities of all species on
the side the particle is heading to (the right side when ``U_i >= 0``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .density import ParticleConfig, side_limits
from .exprdsl import EvalError, FieldExpr
from .scenario import Scenario


class FieldEvaluationError(RuntimeError):
    pass


def _positions(c) -> np.ndarray:
    return c.positions if isinstance(c, ParticleConfig) else np.asarray(c, dtype=float)


def density_jumps(x: np.ndarray) -> np.ndarray:
    """``rho_{j+1} - rho_j`` at every particle, exterior densities being zero."""
    n = x.size - 1
    pad = np.concatenate(([0.0], 1.0 / (n * np.diff(x)), [0.0]))
    return pad[1:] - pad[:-1]


def integrated_interaction_at(W: FieldExpr, targets, source, t: float) -> np.ndarray:
    """``(W' * rho_bar)(x)`` for every target ``x``, as ``sum_j (rho_{j+1} - rho_j) W(x - x_j)``.

    The sum runs over all ``N + 1`` source particles.
    """
    y = _positions(source)
    xt = np.atleast_1d(np.asarray(targets, dtype=float))
    jumps = density_jumps(y)
    vals = np.asarray(W(t=t, x=xt[:, None] - y[None, :]), dtype=float)
    vals = np.broadcast_to(vals, (xt.size, y.size))
    return np.sum(vals * jumps[None, :], axis=1)


def integrated_interaction(W: FieldExpr, target_x: float, source, t: float) -> float:
    return float(integrated_interaction_at(W, [target_x], source, t)[0])


def sampled_interaction_at(Wp: FieldExpr, targets, source, t: float) -> np.ndarray:
    """``(1/N) sum_j W'(x - y_j)`` with coincident points contributing ``W'(0) = 0``."""
    y = _positions(source)
    xt = np.atleast_1d(np.asarray(targets, dtype=float))
    diff = xt[:, None] - y[None, :]
    mask = diff != 0.0
    vals = np.zeros_like(diff)
    if np.any(mask):
        vals[mask] = np.asarray(Wp(t=t, x=diff[mask]), dtype=float)
    return np.sum(vals, axis=1) / (y.size - 1)


def sampled_interaction(Wp: FieldExpr, i: int, config, t: float) -> float:
    x = _positions(config)
    return float(sampled_interaction_at(Wp, [x[i]], x, t)[0])


@dataclass(frozen=True)
class VelocityEval:
    U: tuple[np.ndarray, ...]
    mobility: tuple[np.ndarray, ...]
    velocity: tuple[np.ndarray, ...]
    downwind_right: tuple[np.ndarray, ...]


class VelocityField:
    """Right-hand side of the particle system for one scenario and scheme."""

    def __init__(self, scenario: Scenario, scheme: str | None = None):
        self.scenario = scenario
        self.scheme = scheme or scenario.scheme
        if self.scheme not in ("integrated", "sampled"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        self.names = scenario.names
        self.sizes = tuple(sp.N + 1 for sp in scenario.species)
        self.offsets = np.concatenate(([0], np.cumsum(self.sizes)))
        self.kernels: list[list[tuple[int, FieldExpr]]] = []
        for target in self.names:
            row = []
            for s, source in enumerate(self.names):
                k = scenario.interaction(source, target)
                if k is None:
                    continue
                expr = k.W if self.scheme == "integrated" else k.Wprime
                if expr is None:
                    need = "W" if self.scheme == "integrated" else "Wprime"
                    raise ValueError(f"{self.scheme} scheme requires {need} for {source}->{target}")
                row.append((s, expr))
            self.kernels.append(row)
        self.n_evals = 0

    def split(self, y: np.ndarray) -> list[np.ndarray]:
        if y.size != self.offsets[-1]:
            raise ValueError(f"state has {y.size} entries, expected {self.offsets[-1]}")
        return [y[self.offsets[k]:self.offsets[k + 1]] for k in range(len(self.sizes))]

    def uncongested(self, state: Sequence[np.ndarray], t: float) -> list[np.ndarray]:
        out = []
        for sigma, sp in enumerate(self.scenario.species):
            x = state[sigma]
            try:
                U = np.asarray(sp.V(t=t, x=x), dtype=float) * np.ones_like(x)
                for s, expr in self.kernels[sigma]:
                    if self.scheme == "integrated":
                        U = U - integrated_interaction_at(expr, x, state[s], t)
                    else:
                        U = U - sampled_interaction_at(expr, x, state[s], t)
            except EvalError as exc:
                raise FieldEvaluationError(f"species {sp.name} at t={t}: {exc}") from exc
            out.append(U)
        return out

    def evaluate(self, state: Sequence, t: float) -> VelocityEval:
        xs = [_positions(c) for c in state]
        Us = self.uncongested(xs, t)
        dens = side_limits(xs)
        mobs, vels, rights = [], [], []
        for sigma, sp in enumerate(self.scenario.species):
            U = Us[sigma]
            right = U >= 0
            block = dens.per_species[sigma]
            env = {name: np.where(right, block[s, 1], block[s, 0]) for s, name in enumerate(self.names)}
            try:
                mob = np.asarray(sp.mobility(**env), dtype=float) * np.ones_like(U)
            except EvalError as exc:
                raise FieldEvaluationError(f"mobility of species {sp.name} at t={t}: {exc}") from exc
            mobs.append(mob)
            vels.append(mob * U)
            rights.append(right)
        self.n_evals += 1
        return VelocityEval(tuple(Us), tuple(mobs), tuple(vels), tuple(rights))

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        return np.concatenate(self.evaluate(self.split(y), t).velocity)


# -- a priori estimate checks ---------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    max_ratio: float
    violations: int
    observed: np.ndarray
    bound: np.ndarray

    @property
    def ok(self) -> bool:
        return self.violations == 0


def _report(observed: np.ndarray, bound: np.ndarray, slack: float = 1e-12) -> BoundReport:
    observed = np.abs(observed)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, observed / bound, np.where(observed > slack, np.inf, 0.0))
    viol = int(np.sum(observed > bound * (1 + 1e-12) + slack))
    return BoundReport(float(np.max(ratio, initial=0.0)), viol, observed, bound)


def single_species_fields(x, t: float, V: FieldExpr | None, W: FieldExpr | None,
                          Wprime: FieldExpr | None) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Integrated and sampled uncongested fields of one species on itself."""
    x = _positions(x)
    base = np.zeros_like(x) if V is None else np.asarray(V(t=t, x=x), dtype=float) * np.ones_like(x)
    Ubar = None if W is None else base - integrated_interaction_at(W, x, x, t)
    Udot = None if Wprime is None else base - sampled_interaction_at(Wprime, x, x, t)
    return Ubar, Udot


def comparison_bound_check(state, t: float, W: FieldExpr, Wp: FieldExpr, Wpp_sup: float) -> BoundReport:
    """``|Ubar_i - Udot_i| <= sup|W''| (x_N - x_0) / N`` at every particle."""
    x = _positions(state)
    Ubar, Udot = single_species_fields(x, t, None, W, Wp)
    n = x.size - 1
    bound = np.full(x.size, Wpp_sup * (x[-1] - x[0]) / n)
    return _report(Ubar - Udot, bound)


def lipschitz_bound_check(state, t: float, C1: float, C2: float, *, V: FieldExpr | None = None,
                          W: FieldExpr | None = None, Wprime: FieldExpr | None = None
                          ) -> dict[str, BoundReport]:
    """``|U_i - U_{i-1}| <= (C1 + C2 rho_i)(x_i - x_{i-1})`` for each available scheme."""
    x = _positions(state)
    n = x.size - 1
    dx = np.diff(x)
    rho = 1.0 / (n * dx)
    bound = (C1 + C2 * rho) * dx
    Ubar, Udot = single_species_fields(x, t, V, W, Wprime)
    out = {}
    if Ubar is not None:
        out["integrated"] = _report(np.diff(Ubar), bound)
    if Udot is not None:
        out["sampled"] = _report(np.diff(Udot), bound)
    return out
