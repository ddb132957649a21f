"""Initial data descriptions for one species.

Each kind knows how to (de)serialize itself; turning a datum into particles
lives in :mod:`conslaw_particles.density`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Union

import numpy as np

from .exprdsl import FieldExpr, parse


@dataclass(frozen=True)
class UniformBlocks:
    """Sum of indicator blocks; ``blocks`` holds ``(left, right, mass)`` triples."""

    blocks: tuple[tuple[float, float, float], ...]

    kind = "uniform_blocks"

    @property
    def mass(self) -> float:
        return float(sum(m for _, _, m in self.blocks))

    def scaled(self, factor: float) -> "UniformBlocks":
        return UniformBlocks(tuple((a, b, m * factor) for a, b, m in self.blocks))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "blocks": [list(b) for b in self.blocks]}


@dataclass(frozen=True)
class TruncatedGaussian:
    halfwidth: float
    sigma: float = 1.0
    center: float = 0.0
    count: int | None = None

    kind = "truncated_gaussian"
    mass = 1.0

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "kind": self.kind,
            "halfwidth": self.halfwidth,
            "sigma": self.sigma,
            "center": self.center,
        }
        if self.count is not None:
            d["count"] = self.count
        return d


@dataclass(frozen=True)
class ExplicitParticles:
    positions: tuple[float, ...]

    kind = "explicit_particles"
    mass = 1.0

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "positions": list(self.positions)}


@dataclass(frozen=True)
class DensityExpr:
    """Density given by an expression in ``x`` on a compact support interval."""

    expr: FieldExpr
    support: tuple[float, float]
    scale: float = 1.0

    kind = "density_expr"

    def scaled(self, factor: float) -> "DensityExpr":
        return DensityExpr(self.expr, self.support, self.scale * factor)

    def to_dict(self) -> dict[str, Any]:
        d = {"kind": self.kind, "expr": str(self.expr), "support": list(self.support)}
        if self.scale != 1.0:
            d["scale"] = self.scale
        return d


@dataclass(frozen=True)
class ParticleFormula:
    """Particle positions ``x_i`` given by an expression in ``i`` and ``N``."""

    expr: FieldExpr

    kind = "particle_formula"
    mass = 1.0

    def positions(self, n: int) -> np.ndarray:
        i = np.arange(n + 1, dtype=float)
        return np.asarray(self.expr(i=i, N=float(n)), dtype=float) * np.ones(n + 1)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "expr": str(self.expr)}


InitialDatum = Union[UniformBlocks, TruncatedGaussian, ExplicitParticles, DensityExpr, ParticleFormula]


def initial_from_dict(d: dict[str, Any]) -> InitialDatum:
    kind = d.get("kind")
    if kind == "uniform_blocks":
        blocks = tuple((float(a), float(b), float(m)) for a, b, m in d["blocks"])
        return UniformBlocks(blocks)
    if kind == "truncated_gaussian":
        count = d.get("count")
        return TruncatedGaussian(
            float(d["halfwidth"]),
            float(d.get("sigma", 1.0)),
            float(d.get("center", 0.0)),
            None if count is None else int(count),
        )
    if kind == "explicit_particles":
        return ExplicitParticles(tuple(float(x) for x in d["positions"]))
    if kind == "density_expr":
        a, b = d["support"]
        return DensityExpr(parse(d["expr"], {"x"}), (float(a), float(b)), float(d.get("scale", 1.0)))
    if kind == "particle_formula":
        return ParticleFormula(parse(d["expr"], {"i", "N"}))
    raise ValueError(f"unknown initial datum kind {kind!r}")
