"""Adaptive Dormand-Prince 5(4) time stepping for the particle system."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .density import ParticleConfig, quantile_init
from .dynamics import VelocityField
from .scenario import Scenario

# Dormand & Prince (1980), RK5(4)7M
C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
E = B5 - B4

ORDER_GAP = 1e-13


class IntegrationError(RuntimeError):
    pass


class MaxStepsExceeded(IntegrationError):
    pass


class StepUnderflow(IntegrationError):
    pass


class OrderingViolation(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorSettings:
    abstol: float = 1e-7
    reltol: float = 1e-7
    initial_dt: float | None = None
    max_steps: int = 200_000
    safety: float = 0.9
    min_scale: float = 0.2
    max_scale: float = 5.0
    fixed_dt: float | None = None
    min_gap: float | None = None

    def __post_init__(self):
        if not (self.abstol > 0 and self.reltol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.safety < 1:
            raise ValueError("safety factor must lie in (0, 1)")

    @classmethod
    def for_scenario(cls, s: Scenario, **overrides) -> "IntegratorSettings":
        return cls(abstol=s.abstol, reltol=s.reltol, **overrides)


@dataclass
class StepRecord:
    """Accepted steps: ``ys[k]`` and ``fs[k]`` are state and derivative at ``ts[k]``."""

    ts: np.ndarray
    ys: np.ndarray
    fs: np.ndarray

    def locate(self, t: float) -> int:
        k = int(np.searchsorted(self.ts, t, side="right")) - 1
        return min(max(k, 0), self.ts.size - 2) if self.ts.size > 1 else 0

    def dense(self, t: float) -> np.ndarray:
        """Cubic Hermite interpolation between the enclosing accepted steps."""
        if self.ts.size == 1 or t == self.ts[-1]:
            return self.ys[-1].copy() if t == self.ts[-1] else self.ys[0].copy()
        k = self.locate(t)
        t0, t1 = self.ts[k], self.ts[k + 1]
        if t == t0:
            return self.ys[k].copy()
        h = t1 - t0
        s = (t - t0) / h
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return h00 * self.ys[k] + h10 * h * self.fs[k] + h01 * self.ys[k + 1] + h11 * h * self.fs[k + 1]


@dataclass
class OdeResult:
    steps: StepRecord
    accepted: int
    rejected: int
    n_evals: int


def _initial_step(f, t0, y0, f0, span, settings) -> float:
    if settings.initial_dt is not None:
        return min(settings.initial_dt, span)
    scale = settings.abstol + settings.reltol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + h0 * f0
    f1 = f(t0 + h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        # locally constant solution; the error control takes over from here
        return span
    h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def dopri5(f: Callable[[float, np.ndarray], np.ndarray], t_span: tuple[float, float], y0: np.ndarray,
           settings: IntegratorSettings = IntegratorSettings(),
           on_accept: Callable[[float, np.ndarray], np.ndarray | None] | None = None,
           stop_times: Sequence[float] = ()) -> OdeResult:
    """Integrate ``y' = f(t, y)`` over ``t_span``, recording every accepted step.

    ``on_accept`` may inspect (and return a corrected copy of) each accepted
    state; ``stop_times`` are forced step boundaries.
    """
    t0, t1 = map(float, t_span)
    span = t1 - t0
    y = np.array(y0, dtype=float)
    n_evals = 0

    def rhs(t, yy):
        nonlocal n_evals
        n_evals += 1
        return np.asarray(f(t, yy), dtype=float)

    fy = rhs(t0, y)
    ts, ys, fs = [t0], [y.copy()], [fy.copy()]
    stops = sorted(s for s in set(map(float, stop_times)) if t0 < s < t1) + [t1]
    fixed = settings.fixed_dt
    h = fixed if fixed is not None else _initial_step(rhs, t0, y, fy, span, settings)
    t = t0
    accepted = rejected = 0
    stop_idx = 0
    k = np.empty((7, y.size))
    while t < t1:
        if accepted + rejected >= settings.max_steps:
            raise MaxStepsExceeded(f"more than {settings.max_steps} steps before t={t1} (reached t={t})")
        while stops[stop_idx] <= t:
            stop_idx += 1
        target = stops[stop_idx]
        last = t + h >= target * (1 - 1e-15) if target > 0 else t + h >= target
        hh = target - t if (t + h > target or last) else h
        if fixed is None and hh < 1e-14 * span:
            raise StepUnderflow(f"step size {hh:.3e} underflow at t={t}")

        k[0] = fy
        for s in range(1, 7):
            incr = np.zeros_like(y)
            for j, a in enumerate(A[s]):
                if a != 0.0:
                    incr = incr + a * k[j]
            k[s] = rhs(t + C[s] * hh, y + hh * incr)
        y_new = y + hh * (B5 @ k)
        f_new = k[6]  # FSAL: last stage is f(t + h, y_new)

        if fixed is None:
            err = hh * (E @ k)
            scale = settings.abstol + settings.reltol * np.maximum(np.abs(y), np.abs(y_new))
            norm = float(np.sqrt(np.mean((err / scale) ** 2))) if y.size else 0.0
            if norm <= 1.0:
                factor = settings.max_scale if norm == 0 else settings.safety * norm ** (-1 / 5)
            else:
                factor = settings.safety * norm ** (-1 / 5)
            factor = min(settings.max_scale, max(settings.min_scale, factor))
            if norm > 1.0:
                rejected += 1
                h = hh * factor
                continue
        t_new = target if hh == target - t else t + hh
        if on_accept is not None:
            fixed_y = on_accept(t_new, y_new)
            if fixed_y is not None:
                y_new = fixed_y
                f_new = rhs(t_new, y_new)
        t, y, fy = t_new, y_new, f_new
        accepted += 1
        ts.append(t)
        ys.append(y.copy())
        fs.append(fy.copy())
        if fixed is None:
            h = hh * factor if hh == h or factor < 1 else max(h, hh * factor)
    return OdeResult(StepRecord(np.array(ts), np.array(ys), np.array(fs)), accepted, rejected, n_evals)


# -- particle trajectories ---------------------------------------------------------


@dataclass
class Trajectory:
    names: tuple[str, ...]
    sizes: tuple[int, ...]
    times: np.ndarray
    snapshots: np.ndarray  # (n_times, total particles)
    steps: StepRecord
    stats: dict
    scheme: str
    scenario_hash: str = ""
    t_span: tuple[float, float] = (0.0, 1.0)
    scenario: Scenario | None = field(default=None, repr=False)
    _offsets: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self._offsets = np.concatenate(([0], np.cumsum(self.sizes)))

    def split(self, y: np.ndarray) -> list[np.ndarray]:
        return [y[self._offsets[k]:self._offsets[k + 1]] for k in range(len(self.sizes))]

    def positions(self, k: int, species: int | str = 0) -> np.ndarray:
        s = self.names.index(species) if isinstance(species, str) else species
        return self.split(self.snapshots[k])[s]

    def config(self, k: int, species: int | str = 0) -> ParticleConfig:
        return ParticleConfig(self.positions(k, species))

    def state_at(self, t: float) -> list[np.ndarray]:
        return self.split(self.steps.dense(t))

    def at(self, t: float, species: int | str = 0) -> np.ndarray:
        s = self.names.index(species) if isinstance(species, str) else species
        return self.state_at(t)[s]


def initial_state(scenario: Scenario) -> list[np.ndarray]:
    return [quantile_init(sp.initial, sp.N).positions for sp in scenario.species]


def _order_guard(sizes, min_gap):
    offsets = np.concatenate(([0], np.cumsum(sizes)))

    def check(t, y):
        out = None
        for k in range(len(sizes)):
            x = y[offsets[k]:offsets[k + 1]]
            width = x[-1] - x[0]
            gaps = np.diff(x)
            if gaps.size and gaps.min() < ORDER_GAP * abs(width):
                if min_gap is None:
                    i = int(np.argmin(gaps)) + 1
                    raise OrderingViolation(
                        f"species {k}: particles {i - 1} and {i} closer than "
                        f"{ORDER_GAP:g} x hull width at t={t} (gap {gaps.min():.3e})"
                    )
                if out is None:
                    out = y.copy()
                idx = np.arange(x.size) * min_gap
                z = np.maximum.accumulate(x - idx) + idx
                out[offsets[k]:offsets[k + 1]] = z
        return out

    return check


def _snapshot_times(scenario: Scenario, steps: StepRecord) -> np.ndarray:
    out = scenario.outputs
    t0, t1 = scenario.t_span
    if "times" in out:
        times = np.array(sorted(set(float(x) for x in out["times"])))
        if times.size and (times[0] < t0 or times[-1] > t1):
            raise ValueError(f"snapshot times must lie in {scenario.t_span}")
        return times
    if "count" in out:
        return np.linspace(t0, t1, int(out["count"]))
    stride = int(out.get("stride", 1))
    idx = list(range(0, steps.ts.size, stride))
    if idx[-1] != steps.ts.size - 1:
        idx.append(steps.ts.size - 1)
    return steps.ts[idx]


def integrate(scenario: Scenario, settings: IntegratorSettings | None = None, *,
              scheme: str | None = None, initial: Sequence[np.ndarray] | None = None) -> Trajectory:
    """Advance the particles of ``scenario`` from quantile initial data."""
    settings = settings or IntegratorSettings.for_scenario(scenario)
    field_ = VelocityField(scenario, scheme)
    state = [np.asarray(x, dtype=float) for x in (initial if initial is not None else initial_state(scenario))]
    for k, x in enumerate(state):
        ParticleConfig(x)
        if x.size != field_.sizes[k]:
            raise ValueError(f"initial state of species {k} has {x.size} particles, expected {field_.sizes[k]}")
    y0 = np.concatenate(state)
    stop_times = scenario.outputs.get("times", ()) if "times" in scenario.outputs else ()
    res = dopri5(field_, scenario.t_span, y0, settings,
                 on_accept=_order_guard(field_.sizes, settings.min_gap), stop_times=stop_times)
    times = _snapshot_times(scenario, res.steps)
    snaps = np.array([res.steps.dense(float(t)) for t in times])
    stats = {"accepted": res.accepted, "rejected": res.rejected, "rhs_evaluations": res.n_evals}
    return Trajectory(
        names=scenario.names,
        sizes=field_.sizes,
        times=times,
        snapshots=snaps,
        steps=res.steps,
        stats=stats,
        scheme=field_.scheme,
        scenario_hash=scenario.hash,
        t_span=scenario.t_span,
        scenario=scenario,
    )
