"""Problem instances: species, fields, kernels, initial data and run settings.

A :class:`Scenario` is immutable. It is usually built from the JSON document
described in the README (:func:`scenario_from_dict`) and checked with
:func:`validate`, which reports structural errors and, as warnings, the
cases where neither small-scale repulsion of the self-interaction nor a
fast enough decay of the mobility can be confirmed by sampling.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np

from . import exprdsl
from .density import density_mass
from .exprdsl import ExprError, FieldExpr, parse
from .initial import (
    DensityExpr,
    ExplicitParticles,
    InitialDatum,
    TruncatedGaussian,
    UniformBlocks,
    initial_from_dict,
)

SCHEMES = ("integrated", "sampled")
FIELD_VARS = frozenset({"t", "x"})
RESERVED = frozenset({"t", "x", "i", "N", "pi"}) | frozenset(exprdsl.FUNCTIONS)

# probe settings for the assumption checks
PROBE_H = 1.0
PROBE_POINTS = 256
PROBE_R = (1.0, 1e6)
MASS_TOL = 1e-12


class ConfigError(ValueError):
    """Malformed or inconsistent scenario description."""


@dataclass(frozen=True)
class Interaction:
    """Kernel through which one species acts on another.

    ``W`` feeds the integrated scheme and ``Wprime`` the sampled one. ``Wpp``
    and ``w_atom`` (the jump of ``W'`` at the origin) are optional metadata
    for the direct form of the entropy residual.
    """

    W: FieldExpr | None = None
    Wprime: FieldExpr | None = None
    Wpp: FieldExpr | None = None
    w_atom: FieldExpr | None = None

    def to_dict(self) -> dict[str, str]:
        return {k: str(v) for k, v in
                (("W", self.W), ("Wprime", self.Wprime), ("Wpp", self.Wpp), ("w_atom", self.w_atom))
                if v is not None}


@dataclass(frozen=True)
class SpeciesSpec:
    name: str
    V: FieldExpr
    mobility: FieldExpr
    N: int
    initial: InitialDatum
    Vx: FieldExpr | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "name": self.name,
            "V": str(self.V),
            "mobility": str(self.mobility),
            "N": self.N,
            "initial": self.initial.to_dict(),
        }
        if self.Vx is not None:
            d["Vx"] = str(self.Vx)
        return d


@dataclass(frozen=True)
class Scenario:
    species: tuple[SpeciesSpec, ...]
    interactions: Mapping[tuple[str, str], Interaction]
    scheme: str = "integrated"
    t_span: tuple[float, float] = (0.0, 1.0)
    abstol: float = 1e-7
    reltol: float = 1e-7
    outputs: Mapping[str, Any] = field(default_factory=lambda: {"stride": 1})
    name: str = ""
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "interactions", MappingProxyType(dict(self.interactions)))
        object.__setattr__(self, "outputs", MappingProxyType(dict(self.outputs)))
        object.__setattr__(self, "t_span", (float(self.t_span[0]), float(self.t_span[1])))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.species)

    def interaction(self, source: str, target: str) -> Interaction | None:
        return self.interactions.get((source, target))

    def with_overrides(self, *, scheme: str | None = None, N: int | None = None,
                       abstol: float | None = None, reltol: float | None = None,
                       t_span: tuple[float, float] | None = None,
                       outputs: Mapping[str, Any] | None = None) -> "Scenario":
        species = self.species
        if N is not None:
            species = tuple(replace(s, N=int(N), initial=_recount(s.initial, int(N))) for s in species)
        return replace(
            self,
            species=species,
            scheme=scheme or self.scheme,
            abstol=self.abstol if abstol is None else abstol,
            reltol=self.reltol if reltol is None else reltol,
            t_span=self.t_span if t_span is None else t_span,
            outputs=self.outputs if outputs is None else outputs,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "scheme": self.scheme,
            "t_span": list(self.t_span),
            "tolerances": {"abstol": self.abstol, "reltol": self.reltol},
            "outputs": dict(self.outputs),
            "species": [s.to_dict() for s in self.species],
            "interactions": {f"{a}->{b}": k.to_dict() for (a, b), k in self.interactions.items()},
        }

    @property
    def hash(self) -> str:
        return scenario_hash(self)


def _recount(d: InitialDatum, N: int) -> InitialDatum:
    # a Gaussian datum that pins its particle count follows an N override
    if isinstance(d, TruncatedGaussian) and d.count is not None:
        return replace(d, count=N + 1)
    return d


def scenario_hash(s: Scenario) -> str:
    """Digest of the canonical JSON form (sorted keys, compact separators)."""
    canonical = json.dumps(s.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


# -- loading ------------------------------------------------------------------


def _expr(d: Mapping[str, Any], key: str, variables, where: str, required=True) -> FieldExpr | None:
    if key not in d or d[key] is None:
        if required:
            raise ConfigError(f"{where}: missing field {key!r}")
        return None
    try:
        return parse(str(d[key]), variables)
    except ExprError as exc:
        raise ConfigError(f"{where}.{key}: {exc}") from exc


def scenario_from_dict(doc: Mapping[str, Any], normalize: bool = False) -> Scenario:
    """Build a scenario from a parsed scenario file.

    With ``normalize`` the initial data of non-unit mass are rescaled instead
    of being rejected by :func:`validate`.
    """
    try:
        raw_species = doc["species"]
    except KeyError:
        raise ConfigError("missing field 'species'") from None
    if not raw_species:
        raise ConfigError("at least one species is required")
    names = [str(sp.get("name", f"rho{k + 1}" if len(raw_species) > 1 else "rho"))
             for k, sp in enumerate(raw_species)]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate species names {names}")
    for n in names:
        if not n.isidentifier() or n in RESERVED:
            raise ConfigError(f"invalid species name {n!r}")

    species = []
    for name, sp in zip(names, raw_species):
        where = f"species[{name}]"
        try:
            initial = initial_from_dict(sp["initial"])
        except KeyError as exc:
            raise ConfigError(f"{where}.initial: missing field {exc}") from None
        except (ExprError, ValueError, TypeError) as exc:
            raise ConfigError(f"{where}.initial: {exc}") from exc
        if normalize:
            initial = _normalized(initial)
        N = sp.get("N")
        if N is None:
            if isinstance(initial, ExplicitParticles):
                N = len(initial.positions) - 1
            elif isinstance(initial, TruncatedGaussian) and initial.count is not None:
                N = initial.count - 1
            else:
                raise ConfigError(f"{where}: missing field 'N'")
        species.append(SpeciesSpec(
            name=name,
            V=_expr(sp, "V", FIELD_VARS, where),
            mobility=_expr(sp, "mobility", names, where),
            N=int(N),
            initial=initial,
            Vx=_expr(sp, "Vx", FIELD_VARS, where, required=False),
        ))

    interactions = {}
    for key, entry in (doc.get("interactions") or {}).items():
        parts = [p.strip() for p in str(key).split("->")]
        if len(parts) != 2 or any(p not in names for p in parts):
            raise ConfigError(f"interactions: key {key!r} must be 'source->target' over {names}")
        where = f"interactions[{key}]"
        interactions[(parts[0], parts[1])] = Interaction(
            W=_expr(entry, "W", FIELD_VARS, where, required=False),
            Wprime=_expr(entry, "Wprime", FIELD_VARS, where, required=False),
            Wpp=_expr(entry, "Wpp", FIELD_VARS, where, required=False),
            w_atom=_expr(entry, "w_atom", {"t"}, where, required=False),
        )

    tol = doc.get("tolerances") or {}
    t_span = doc.get("t_span", (0.0, 1.0))
    if len(t_span) != 2:
        raise ConfigError("t_span must be [t0, t1]")
    return Scenario(
        species=tuple(species),
        interactions=interactions,
        scheme=str(doc.get("scheme", "integrated")),
        t_span=(float(t_span[0]), float(t_span[1])),
        abstol=float(tol.get("abstol", 1e-7)),
        reltol=float(tol.get("reltol", 1e-7)),
        outputs=dict(doc.get("outputs") or {"stride": 1}),
        name=str(doc.get("name", "")),
        description=str(doc.get("description", "")),
    )


def load_scenario(path, normalize: bool = False) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(doc, normalize=normalize)


def _datum_mass(d: InitialDatum) -> float:
    if isinstance(d, DensityExpr):
        return density_mass(d)
    return float(d.mass)


def _normalized(d: InitialDatum) -> InitialDatum:
    if isinstance(d, (UniformBlocks, DensityExpr)):
        m = _datum_mass(d)
        if m > 0 and m != 1.0:
            return d.scaled(1.0 / m)
    return d


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning"
    message: str

    def __str__(self) -> str:
        return f"{self.level}: {self.message}"


def errors(diags) -> list[Diagnostic]:
    return [d for d in diags if d.level == "error"]


def _check_initial(sp: SpeciesSpec) -> list[str]:
    msgs = []
    d = sp.initial
    if isinstance(d, ExplicitParticles):
        x = np.asarray(d.positions, dtype=float)
        if x.size >= 2 and not np.all(np.diff(x) > 0):
            msgs.append(f"species {sp.name}: particles not sorted")
        if x.size != sp.N + 1:
            msgs.append(f"species {sp.name}: {x.size} explicit particles but N = {sp.N}")
        return msgs
    if isinstance(d, UniformBlocks):
        blocks = sorted(d.blocks)
        if not blocks:
            msgs.append(f"species {sp.name}: no blocks")
            return msgs
        for a, b, m in blocks:
            if not b > a:
                msgs.append(f"species {sp.name}: empty block [{a}, {b}]")
            if not m > 0:
                msgs.append(f"species {sp.name}: block [{a}, {b}] has non-positive mass {m}")
        for (_, b0, _), (a1, _, _) in zip(blocks, blocks[1:]):
            if a1 < b0:
                msgs.append(f"species {sp.name}: overlapping blocks")
    if isinstance(d, TruncatedGaussian) and d.count is not None and d.count != sp.N + 1:
        msgs.append(f"species {sp.name}: gaussian count {d.count} but N = {sp.N}")
    if isinstance(d, DensityExpr) and not d.support[1] > d.support[0]:
        msgs.append(f"species {sp.name}: empty support {d.support}")
        return msgs
    mass = _datum_mass(d)
    tol = MASS_TOL if isinstance(d, UniformBlocks) else 1e-8
    if abs(mass - 1.0) > tol:
        msgs.append(f"species {sp.name}: initial mass {mass:.12g} != 1 (use --normalize to rescale)")
    return msgs


def _wprime_sampler(k: Interaction):
    if k.Wprime is not None:
        return lambda t, x: np.asarray(k.Wprime(t=t, x=x), dtype=float)
    if k.W is not None:
        eps = 1e-6
        return lambda t, x: (np.asarray(k.W(t=t, x=x + eps)) - np.asarray(k.W(t=t, x=x - eps))) / (2 * eps)
    return None


def probe_repulsive(k: Interaction, t_span, h: float = PROBE_H, points: int = PROBE_POINTS) -> bool | None:
    """``sign(x) W'(t, x) <= 0`` on a grid of ``[-h, h]`` at a few times."""
    f = _wprime_sampler(k)
    if f is None:
        return None
    xs = np.linspace(-h, h, points)
    xs = xs[xs != 0.0]
    for t in np.linspace(t_span[0], t_span[1], 5):
        try:
            vals = f(float(t), xs)
        except ExprError:
            return None
        if np.any(np.sign(xs) * vals > 1e-12):
            return False
    return True


def probe_decay(v: FieldExpr, name: str, others: tuple[str, ...], r_range=PROBE_R,
                points: int = PROBE_POINTS) -> bool | None:
    """Sample ``int_1^R dr / (r^2 v(r))`` on a log grid and look for divergence.

    The integral is taken as divergent when ``v`` vanishes somewhere on the
    grid or when the contribution of the last decade is at least half of the
    contribution of the first one.
    """
    r = np.geomspace(r_range[0], r_range[1], points)
    env = {o: 0.0 for o in others}
    env[name] = r
    try:
        vals = np.asarray(v(**env), dtype=float) * np.ones_like(r)
    except ExprError:
        return None
    if np.any(vals <= 0):
        return True
    integrand = 1.0 / (r * vals)  # dr/(r^2 v) in the log measure
    logs = np.log(r)
    inc = 0.5 * (integrand[1:] + integrand[:-1]) * np.diff(logs)
    decade = np.log(10.0)
    first = inc[logs[1:] <= logs[0] + decade].sum()
    last = inc[logs[:-1] >= logs[-1] - decade].sum()
    return bool(last >= 0.5 * first)


def validate(s: Scenario) -> list[Diagnostic]:
    """Errors for structural violations, warnings for unconfirmed assumptions."""
    out: list[Diagnostic] = []

    def err(msg):
        out.append(Diagnostic("error", msg))

    def warn(msg):
        out.append(Diagnostic("warning", msg))

    t0, t1 = s.t_span
    if not t0 < t1:
        err(f"t_span must satisfy t0 < t1, got {s.t_span}")
    for label, tol in (("abstol", s.abstol), ("reltol", s.reltol)):
        if not 0 < tol < 1:
            err(f"{label} must lie in (0, 1), got {tol}")
    if s.scheme not in SCHEMES:
        err(f"unknown scheme {s.scheme!r}; expected one of {SCHEMES}")
    names = s.names
    for sp in s.species:
        if sp.N < 2:
            err(f"species {sp.name}: N must be >= 2, got {sp.N}")
        if not sp.mobility.used_vars <= set(names):
            extra = sorted(sp.mobility.used_vars - set(names))
            err(f"species {sp.name}: mobility references undeclared densities {extra}")
        if not sp.V.used_vars <= FIELD_VARS:
            err(f"species {sp.name}: V may only use t and x")
        for msg in _check_initial(sp):
            err(msg)
    for (a, b), k in s.interactions.items():
        if s.scheme == "integrated" and k.W is None:
            err(f"integrated scheme requires W for interaction {a}->{b}")
        if s.scheme == "sampled" and k.Wprime is None:
            err(f"sampled scheme requires W' (Wprime) for interaction {a}->{b}")
    if errors(out):
        return out

    for sp in s.species:
        k = s.interaction(sp.name, sp.name)
        repulsive = True if k is None else probe_repulsive(k, s.t_span)
        others = tuple(n for n in names if n != sp.name)
        decays = probe_decay(sp.mobility, sp.name, others)
        if not repulsive and not decays:
            warn(
                f"species {sp.name}: could not confirm small-scale repulsion of the "
                f"self-interaction nor sufficient decay of the mobility"
            )
    return out


def check(s: Scenario) -> list[Diagnostic]:
    """Validate and raise :class:`ConfigError` on the first error."""
    diags = validate(s)
    bad = errors(diags)
    if bad:
        raise ConfigError("; ".join(d.message for d in bad))
    return diags


# -- builtin catalog -----------------------------------------------------------

_LIBRARY_SOURCES: dict[str, tuple[str, frozenset[str]]] = {
    # mobilities, in the density variable rho
    "unit_mobility": ("1", frozenset({"rho"})),
    "lin_mobility": ("pos(1 - rho)", frozenset({"rho"})),
    "inverse_mobility": ("1/(1 + rho)", frozenset({"rho"})),
    "inverse_square_mobility": ("1/(1 + rho)^2", frozenset({"rho"})),
    # external fields
    "moving_cubic_well": ("-(x - sin(3*t))^3", FIELD_VARS),
    # interaction kernels: W, W', W'' and the jump of W' at 0
    "log_attraction": ("log(abs(x) + 1)", FIELD_VARS),
    "log_attraction.Wprime": ("sign(x)/(abs(x) + 1)", FIELD_VARS),
    "log_attraction.Wpp": ("-1/(abs(x) + 1)^2", FIELD_VARS),
    "log_attraction.w_atom": ("2", frozenset({"t"})),
    "smooth_log_attraction": ("log(abs(x) + 1)*abs(x)/(abs(x) + 1)", FIELD_VARS),
    "smooth_log_attraction.Wprime": ("sign(x)*(abs(x) + log(abs(x) + 1))/(abs(x) + 1)^2", FIELD_VARS),
    "smooth_log_attraction.Wpp": ("(2 - abs(x) - 2*log(abs(x) + 1))/(abs(x) + 1)^3", FIELD_VARS),
    "smooth_log_attraction.w_atom": ("0", frozenset({"t"})),
    "sinc_kernel": ("sinc(2*pi*x)", FIELD_VARS),
    "sinc_kernel.Wprime": ("(2*pi*x*cos(2*pi*x) - sin(2*pi*x))/(2*pi*x^2)", FIELD_VARS),
    "short_repulsion_long_attraction": ("2*(exp(abs(x)/4) + exp(-2*abs(x)))", FIELD_VARS),
    "short_repulsion_long_attraction.Wprime": (
        "2*sign(x)*(exp(abs(x)/4)/4 - 2*exp(-2*abs(x)))", FIELD_VARS),
    "short_repulsion_long_attraction.Wpp": ("2*(exp(abs(x)/4)/16 + 4*exp(-2*abs(x)))", FIELD_VARS),
    "short_repulsion_long_attraction.w_atom": ("-7", frozenset({"t"})),
}


class LibraryLookupError(KeyError):
    pass


def builtin_library() -> dict[str, FieldExpr]:
    """Named potentials, fields and mobilities used by the packaged examples.

    A kernel ``name`` maps to ``W``; ``name.Wprime``, ``name.Wpp`` and
    ``name.w_atom`` hold its derivative data.
    """
    return {name: parse(src, vars_) for name, (src, vars_) in _LIBRARY_SOURCES.items()}


def lookup(name: str) -> FieldExpr:
    try:
        src, vars_ = _LIBRARY_SOURCES[name]
    except KeyError:
        raise LibraryLookupError(f"no builtin named {name!r}") from None
    return parse(src, vars_)


def library_kernel(name: str, scale: float | str = 1.0) -> Interaction:
    """Interaction built from a catalog kernel, optionally scaled.

    ``scale`` may be a number or an expression in ``t`` (e.g. ``"-5*sin(4*t)^2"``).
    """
    lookup(name)
    fac = str(scale) if isinstance(scale, str) else exprdsl._fmt_num(float(scale))

    def get(suffix, vars_):
        key = name + suffix
        if key not in _LIBRARY_SOURCES:
            return None
        src = _LIBRARY_SOURCES[key][0]
        if fac == "1":
            return parse(src, vars_)
        return parse(f"({fac})*({src})", vars_)

    return Interaction(
        W=get("", FIELD_VARS),
        Wprime=get(".Wprime", FIELD_VARS),
        Wpp=get(".Wpp", FIELD_VARS),
        w_atom=get(".w_atom", frozenset({"t"})),
    )

