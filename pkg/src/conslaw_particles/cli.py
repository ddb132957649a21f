"""Command line interface: ``conslaw-particles {run,converge,compare,reference,validate,list}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from . import diagnostics
from .density import reconstruct
from .exprdsl import ExprError
from .integrator import IntegrationError, IntegratorSettings, integrate
from .reference import SupportEscape, cross_validate, fv_solve
from .scenario import ConfigError, Scenario, check, load_scenario

log = logging.getLogger("conslaw_particles")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def packaged_scenarios() -> dict[str, Path]:
    root = resources.files("conslaw_particles") / "scenarios"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".json")}


def resolve_config(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    lib = packaged_scenarios()
    if name in lib:
        return lib[name]
    raise ConfigError(f"no such scenario file or packaged scenario: {name}")


def _load(args) -> Scenario:
    s = load_scenario(resolve_config(args.config), normalize=getattr(args, "normalize", False))
    overrides = {}
    for key in ("scheme", "abstol", "reltol"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "n", None) is not None and not isinstance(args.n, list):
        overrides["N"] = args.n
    if getattr(args, "t_end", None) is not None:
        overrides["t_span"] = (s.t_span[0], args.t_end)
        if "times" in s.outputs:
            kept = [t for t in s.outputs["times"] if t < args.t_end]
            overrides["outputs"] = {"times": kept + [args.t_end]}
    if overrides:
        s = s.with_overrides(**overrides)
    for d in check(s):
        print(f"{args.config}: {d}", file=sys.stderr)
    return s


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(path: Path, traj) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["t"]
        for name, n in zip(traj.names, traj.sizes):
            header += [f"{name}_{i}" for i in range(n)]
        w.writerow(header)
        for t, row in zip(traj.times, traj.snapshots):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])


def write_density_csv(path: Path, t: float, x) -> None:
    d = reconstruct(x)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"edge_{i}" for i in range(d.edges.size)]
                   + [f"value_{i}" for i in range(1, d.values.size + 1)])
        w.writerow([_fmt(t)] + [_fmt(v) for v in d.edges] + [_fmt(v) for v in d.values])


def _settings(args, s: Scenario) -> IntegratorSettings:
    return IntegratorSettings.for_scenario(s, min_gap=getattr(args, "min_gap", None))


def cmd_run(args) -> int:
    s = _load(args)
    settings = _settings(args, s)
    traj = integrate(s, settings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out / "trajectory.csv", traj)
    multi = len(traj.names) > 1
    for k, t in enumerate(traj.times):
        for j, name in enumerate(traj.names):
            tag = f"{name}_{t:.6g}" if multi else f"{t:.6g}"
            write_density_csv(out / f"density_{tag}.csv", t, traj.positions(k, j))
    diagnostics.bound_series(traj).write_csv(out / "bounds.csv")
    meta = {
        "scenario_hash": traj.scenario_hash,
        "scenario": s.name,
        "scheme": traj.scheme,
        "N": {sp.name: sp.N for sp in s.species},
        "t_span": list(s.t_span),
        "settings": {"abstol": settings.abstol, "reltol": settings.reltol,
                     "max_steps": settings.max_steps, "min_gap": settings.min_gap},
        "stats": traj.stats,
        "snapshots": len(traj.times),
    }
    diagnostics.report_json(meta, out / "run.json")
    print(f"{s.name or args.config}: {traj.stats['accepted']} steps, "
          f"{len(traj.times)} snapshots written to {out}")
    return EXIT_OK


def cmd_converge(args) -> int:
    s = _load(args)
    if len(args.counts) < 2:
        raise ConfigError("need >= 2 resolutions")
    rep = diagnostics.self_convergence(s, args.counts, args.times, _settings(args, s))
    _emit(rep.to_dict(), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    s = _load(args)
    for sp_key in s.interactions.values():
        if sp_key.W is None or sp_key.Wprime is None:
            raise ConfigError("compare requires both W and Wprime for every interaction")
    counts = args.n or [s.species[0].N]
    reports = [diagnostics.scheme_deviation(s, n, args.times).to_dict() for n in counts]
    payload = {"scenario_hash": s.hash, "counts": counts, "deviations": reports}
    if len(counts) > 1:
        first, last = reports[0], reports[-1]
        payload["l1_ratio"] = _ratio(max(first["l1_gap"]), max(last["l1_gap"]))
        payload["velocity_ratio"] = _ratio(max(first["velocity_gap"]), max(last["velocity_gap"]))
    _emit(payload, args.out)
    return EXIT_OK


def _ratio(a: float, b: float):
    return None if b == 0 else a / b


def cmd_reference(args) -> int:
    s = _load(args)
    if len(s.species) != 1:
        raise ConfigError("the finite-volume oracle is single-species only")
    times = sorted(args.times)
    s = s.with_overrides(outputs={"times": times})
    traj = integrate(s, _settings(args, s))
    fv = fv_solve(s, args.L, args.M, t_end=max(times), times=times)
    gaps = cross_validate(traj, fv, times)
    _emit({"scenario_hash": s.hash, "L": args.L, "M": args.M, "N": s.species[0].N,
           "times": times, "gaps": gaps, "fv_steps": fv.steps, "fv_mass_drift": fv.mass_drift}, args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    s = _load(args)
    print(f"{s.name or args.config}: ok ({s.hash})")
    return EXIT_OK


def cmd_list(args) -> int:
    for name, path in sorted(packaged_scenarios().items()):
        desc = json.loads(path.read_text()).get("description", "")
        print(f"{name:30s} {desc}")
    return EXIT_OK


def _emit(payload: dict, out) -> None:
    text = diagnostics.report_json(payload, out)
    if out is None:
        print(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conslaw-particles", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, n_multi=False):
        sp.add_argument("config", help="scenario JSON file or packaged scenario name")
        sp.add_argument("--scheme", choices=("integrated", "sampled"))
        if n_multi:
            sp.add_argument("--n", type=int, nargs="+", help="particle counts (intervals)")
        else:
            sp.add_argument("--n", type=int, help="particle count (intervals) for every species")
        sp.add_argument("--abstol", type=float)
        sp.add_argument("--reltol", type=float)
        sp.add_argument("--normalize", action="store_true", help="rescale initial data to unit mass")
        sp.add_argument("--min-gap", type=float, dest="min_gap",
                        help="clamp particle gaps instead of aborting on ordering loss")

    run = sub.add_parser("run", help="integrate a scenario and write CSV/JSON artifacts")
    common(run)
    run.add_argument("--out", default="out", help="output directory")
    run.add_argument("--t-end", type=float, dest="t_end")
    run.set_defaults(func=cmd_run)

    conv = sub.add_parser("converge", help="self-convergence study over particle counts")
    common(conv)
    conv.add_argument("--counts", type=int, nargs="+", required=True)
    conv.add_argument("--times", type=float, nargs="+", required=True)
    conv.add_argument("--out")
    conv.set_defaults(func=cmd_converge)

    cmp_ = sub.add_parser("compare", help="integrated vs sampled scheme deviation")
    common(cmp_, n_multi=True)
    cmp_.add_argument("--times", type=float, nargs="+", required=True)
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_compare)

    ref = sub.add_parser("reference", help="cross-validate against the finite-volume oracle")
    common(ref)
    ref.add_argument("--L", type=float, required=True, help="half-width of the FV domain")
    ref.add_argument("--M", type=int, required=True, help="number of FV cells")
    ref.add_argument("--times", type=float, nargs="+", required=True)
    ref.add_argument("--out")
    ref.set_defaults(func=cmd_reference)

    val = sub.add_parser("validate", help="check a scenario file")
    common(val)
    val.set_defaults(func=cmd_validate)

    lst = sub.add_parser("list", help="list packaged scenarios")
    lst.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ExprError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, SupportEscape, RuntimeError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
