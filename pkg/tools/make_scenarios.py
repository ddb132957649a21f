"""Regenerate the packaged scenario files from the builtin catalog."""

import json
from pathlib import Path

from conslaw_particles.scenario import _LIBRARY_SOURCES

OUT = Path(__file__).resolve().parents[1] / "src" / "conslaw_particles" / "scenarios"


def lib(name):
    return _LIBRARY_SOURCES[name][0]


def kernel(name, scale=None):
    out = {}
    for key, suffix in (("W", ""), ("Wprime", ".Wprime"), ("Wpp", ".Wpp"), ("w_atom", ".w_atom")):
        src = _LIBRARY_SOURCES.get(name + suffix)
        if src is None:
            continue
        out[key] = src[0] if scale is None else f"({scale})*({src[0]})"
    return out


def blocks(*triples):
    return {"kind": "uniform_blocks", "blocks": [list(b) for b in triples]}


TWO_BLOCKS = blocks((-1, -0.5, 0.5), (0, 0.5, 0.5))

SCENARIOS = {
    "example1_moving_well": {
        "description": "Moving cubic well and time-modulated log attraction, density capped at 1",
        "scheme": "integrated",
        "t_span": [0, 3],
        "species": [{"name": "rho", "V": lib("moving_cubic_well"), "Vx": "-3*(x - sin(3*t))^2",
                     "mobility": lib("lin_mobility"), "N": 200, "initial": TWO_BLOCKS}],
        "interactions": {"rho->rho": kernel("log_attraction", "-5*sin(4*t)^2")},
    },
    "example2_collapse": {
        "description": "Log attraction with mobility 1/(1+rho); particles collapse toward 0",
        "scheme": "integrated",
        "t_span": [0, 1],
        "outputs": {"count": 11},
        "species": [{"name": "rho", "V": "0", "Vx": "0", "mobility": lib("inverse_mobility"), "N": 100,
                     "initial": {"kind": "particle_formula",
                                 "expr": "(2*i - N)/N + 0.01*sin(20*(2*i - N)/N)"}}],
        "interactions": {"rho->rho": kernel("log_attraction", "5")},
    },
    "example3_scheme_comparison": {
        "description": "Sinc-type potential in a moving cubic well, few particles",
        "scheme": "integrated",
        "t_span": [0, 3],
        "species": [{"name": "rho", "V": lib("moving_cubic_well"), "Vx": "-3*(x - sin(3*t))^2",
                     "mobility": lib("inverse_square_mobility"), "N": 30, "initial": TWO_BLOCKS}],
        "interactions": {"rho->rho": kernel("sinc_kernel")},
    },
    "example4_resolution": {
        "description": "Same setting as example 3 at a higher particle count",
        "scheme": "integrated",
        "t_span": [0, 3],
        "species": [{"name": "rho", "V": lib("moving_cubic_well"), "Vx": "-3*(x - sin(3*t))^2",
                     "mobility": lib("inverse_square_mobility"), "N": 240, "initial": TWO_BLOCKS}],
        "interactions": {"rho->rho": kernel("sinc_kernel")},
    },
    "example5_stationary": {
        "description": "Two unit-density blocks that stay at rest",
        "scheme": "integrated",
        "t_span": [0, 3],
        "outputs": {"times": [0, 0.5, 1, 1.5, 2, 2.5, 3]},
        "species": [{"name": "rho", "V": "0", "Vx": "0", "mobility": lib("lin_mobility"), "N": 101,
                     "initial": blocks((-2, -1.5, 0.5), (1.5, 2, 0.5))}],
        "interactions": {"rho->rho": kernel("smooth_log_attraction")},
    },
    "example6_crossing": {
        "description": "Two populations driven past one another",
        "scheme": "integrated",
        "t_span": [0, 3],
        "outputs": {"count": 31},
        "species": [
            {"name": "rho1", "V": "2", "Vx": "0", "mobility": "pos(2 - rho1 - rho2/2)", "N": 150,
             "initial": blocks((-2, -1.5, 0.5), (-1, -0.5, 0.5))},
            {"name": "rho2", "V": "-2", "Vx": "0", "mobility": "pos(2 - rho2 - rho1/2)", "N": 150,
             "initial": blocks((0.5, 1.5, 1))},
        ],
        "interactions": {
            "rho1->rho1": kernel("short_repulsion_long_attraction"),
            "rho2->rho2": kernel("short_repulsion_long_attraction"),
            "rho2->rho1": kernel("log_attraction", "-2"),
            "rho1->rho2": kernel("log_attraction", "-2"),
        },
    },
    "listing_sampled": {
        "description": "Time-dependent external field with a repulsive kernel, sampled scheme",
        "scheme": "sampled",
        "t_span": [0, 3],
        "outputs": {"count": 31},
        "species": [{"name": "rho", "V": "-x^3 + 0.02*sin(12*x) + sin(2*pi*t)",
                     "Vx": "-3*x^2 + 0.24*cos(12*x)", "mobility": lib("inverse_mobility"), "N": 100,
                     "initial": blocks((-1, 1, 1))}],
        "interactions": {"rho->rho": kernel("log_attraction", "-5")},
    },
    "listing_gaussian_pair": {
        "description": "Two Gaussian populations with self repulsion and mutual attraction",
        "scheme": "integrated",
        "t_span": [0, 5],
        "tolerances": {"abstol": 1e-6, "reltol": 1e-6},
        "outputs": {"count": 51},
        "species": [
            {"name": "rho1", "V": "-(x - 1)^3/15 + 0.05*sin(12*x)", "mobility": "pos(1 - rho1 - 0.5*rho2)",
             "initial": {"kind": "truncated_gaussian", "halfwidth": 3, "center": -2, "count": 75}},
            {"name": "rho2", "V": "-(x + 1 - 4*sin(5*t))^3/5", "mobility": "pos(2 - rho2 - 0.5*rho1)",
             "initial": {"kind": "truncated_gaussian", "halfwidth": 3, "center": 2, "count": 75}},
        ],
        "interactions": {
            "rho1->rho1": kernel("log_attraction", "-5"),
            "rho2->rho2": kernel("log_attraction", "-5"),
            "rho2->rho1": kernel("log_attraction", "5"),
            "rho1->rho2": kernel("log_attraction", "5"),
        },
    },
    "rigid_transport": {
        "description": "Unit-speed translation of a truncated Gaussian, no interaction",
        "scheme": "integrated",
        "t_span": [0, 1],
        "outputs": {"times": [0, 0.5, 1]},
        "species": [{"name": "rho", "V": "1", "Vx": "0", "mobility": lib("unit_mobility"), "N": 200,
                     "initial": {"kind": "truncated_gaussian", "halfwidth": 3}}],
        "interactions": {"rho->rho": {"W": "0", "Wprime": "0", "Wpp": "0", "w_atom": "0"}},
    },
}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, doc in SCENARIOS.items():
        doc = {"name": name, **doc}
        (OUT / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")
        print(OUT / f"{name}.json")


if __name__ == "__main__":
    main()
