import json

import pytest

from conslaw_particles.initial import UniformBlocks
from conslaw_particles.scenario import (
    ConfigError,
    LibraryLookupError,
    builtin_library,
    check,
    errors,
    library_kernel,
    lookup,
    probe_decay,
    probe_repulsive,
    scenario_from_dict,
    validate,
)
from conslaw_particles.exprdsl import parse


def doc(**over):
    d = {
        "scheme": "integrated",
        "t_span": [0, 1],
        "species": [{"V": "0", "mobility": "pos(1 - rho)", "N": 10,
                     "initial": {"kind": "uniform_blocks", "blocks": [[-1, -0.5, 0.5], [0, 0.5, 0.5]]}}],
        "interactions": {"rho->rho": {"W": "log(abs(x) + 1)", "Wprime": "sign(x)/(abs(x) + 1)"}},
    }
    d.update(over)
    return d


def messages(s):
    return [d.message for d in errors(validate(s))]


class TestValidate:
    def test_example1_blocks_valid(self):
        s = scenario_from_dict(doc())
        assert messages(s) == []
        assert s.species[0].initial.mass == pytest.approx(1.0)

    def test_unsorted_explicit(self):
        d = doc()
        d["species"][0]["initial"] = {"kind": "explicit_particles", "positions": [0, 0.5, 0.25]}
        d["species"][0]["N"] = 2
        msgs = messages(scenario_from_dict(d))
        assert any("particles not sorted" in m for m in msgs)

    def test_sampled_requires_wprime(self):
        d = doc(scheme="sampled")
        del d["interactions"]["rho->rho"]["Wprime"]
        msgs = messages(scenario_from_dict(d))
        assert any("sampled scheme requires W'" in m for m in msgs)

    def test_integrated_requires_w(self):
        d = doc()
        del d["interactions"]["rho->rho"]["W"]
        assert any("integrated scheme requires W" in m for m in messages(scenario_from_dict(d)))

    def test_mass_rejected_unless_normalized(self):
        d = doc()
        d["species"][0]["initial"]["blocks"] = [[0, 1, 2.0]]
        assert any("--normalize" in m for m in messages(scenario_from_dict(d)))
        s = scenario_from_dict(d, normalize=True)
        assert messages(s) == []
        assert s.species[0].initial == UniformBlocks(((0.0, 1.0, 1.0),))

    def test_density_expr_mass(self):
        d = doc()
        d["species"][0]["initial"] = {"kind": "density_expr", "expr": "0.5", "support": [-1, 1]}
        assert messages(scenario_from_dict(d)) == []
        d["species"][0]["initial"]["expr"] = "1"
        assert messages(scenario_from_dict(d))
        assert messages(scenario_from_dict(d, normalize=True)) == []

    def test_structural(self):
        d = doc(t_span=[1, 0], tolerances={"abstol": 2.0})
        d["species"][0]["N"] = 1
        msgs = messages(scenario_from_dict(d))
        assert any("t0 < t1" in m for m in msgs)
        assert any("abstol" in m for m in msgs)
        assert any("N must be >= 2" in m for m in msgs)

    def test_pure(self):
        s = scenario_from_dict(doc())
        assert validate(s) == validate(s)

    def test_check_raises(self):
        d = doc(scheme="sampled")
        del d["interactions"]["rho->rho"]["Wprime"]
        with pytest.raises(ConfigError, match="Wprime"):
            check(scenario_from_dict(d))

    def test_warning_when_unconfirmed(self):
        # attractive everywhere and a mobility with slow decay
        d = doc()
        d["species"][0]["mobility"] = "1"
        diags = validate(scenario_from_dict(d))
        assert [x.level for x in diags] == ["warning"]

    def test_no_warning_for_compact_mobility(self):
        assert validate(scenario_from_dict(doc())) == []


class TestLoading:
    def test_parse_errors_name_field(self):
        d = doc()
        d["species"][0]["V"] = "x +"
        with pytest.raises(ConfigError, match=r"species\[rho\]\.V"):
            scenario_from_dict(d)
        d = doc()
        d["species"][0]["mobility"] = "pos(1 - sigma)"
        with pytest.raises(ConfigError, match="mobility"):
            scenario_from_dict(d)

    def test_missing_fields(self):
        with pytest.raises(ConfigError, match="species"):
            scenario_from_dict({})
        d = doc()
        del d["species"][0]["V"]
        with pytest.raises(ConfigError, match="'V'"):
            scenario_from_dict(d)

    def test_bad_interaction_key(self):
        d = doc(interactions={"rho->sigma": {"W": "0"}})
        with pytest.raises(ConfigError, match="source->target"):
            scenario_from_dict(d)

    def test_multi_species_names(self):
        d = doc()
        d["species"] = [dict(d["species"][0], mobility="pos(1 - rho1 - rho2/2)"),
                        dict(d["species"][0], mobility="1")]
        d["interactions"] = {"rho2->rho1": {"W": "0"}}
        s = scenario_from_dict(d)
        assert s.names == ("rho1", "rho2")
        assert s.interaction("rho2", "rho1") is not None
        assert s.interaction("rho1", "rho2") is None

    def test_hash_round_trip(self):
        s = scenario_from_dict(doc())
        again = scenario_from_dict(json.loads(json.dumps(s.to_dict())))
        assert again.hash == s.hash
        assert len(s.hash) == 16
        assert s.with_overrides(N=20).hash != s.hash

    def test_overrides(self):
        s = scenario_from_dict(doc()).with_overrides(scheme="sampled", N=33, reltol=1e-5)
        assert s.scheme == "sampled" and s.species[0].N == 33 and s.reltol == 1e-5


class TestPackaged:
    def test_round_trip_and_valid(self, scenarios):
        assert len(scenarios) >= 6
        for name, s in scenarios.items():
            again = scenario_from_dict(json.loads(json.dumps(s.to_dict())))
            assert again.hash == s.hash, name
            assert errors(validate(again)) == [], name

    def test_examples_present(self, scenarios):
        for k in range(1, 7):
            assert any(n.startswith(f"example{k}_") for n in scenarios)


class TestLibrary:
    def test_lookups(self):
        assert str(lookup("lin_mobility")) == "pos(1 - rho)"
        assert lookup("inverse_mobility")(rho=1.0) == 0.5
        with pytest.raises(LibraryLookupError):
            lookup("nope")

    def test_kernel_derivatives_consistent(self):
        import numpy as np
        lib = builtin_library()
        xs = np.linspace(0.05, 3, 50)
        xs = np.concatenate((-xs, xs))
        h = 1e-6
        for name in ("log_attraction", "smooth_log_attraction", "sinc_kernel", "short_repulsion_long_attraction"):
            W, Wp = lib[name], lib[name + ".Wprime"]
            fd = (W(t=0.0, x=xs + h) - W(t=0.0, x=xs - h)) / (2 * h)
            np.testing.assert_allclose(Wp(t=0.0, x=xs), fd, atol=1e-6, err_msg=name)
            if name + ".Wpp" in lib:
                fd2 = (Wp(t=0.0, x=xs + h) - Wp(t=0.0, x=xs - h)) / (2 * h)
                np.testing.assert_allclose(lib[name + ".Wpp"](t=0.0, x=xs), fd2, atol=1e-5, err_msg=name)
            if name + ".w_atom" in lib:
                jump = Wp(t=0.0, x=1e-12) - Wp(t=0.0, x=-1e-12)
                assert lib[name + ".w_atom"](t=0.0) == pytest.approx(jump, abs=1e-9), name

    def test_scaled_kernel(self):
        k = library_kernel("log_attraction", "-5*sin(4*t)^2")
        assert k.W(t=0.3, x=1.0) == pytest.approx(-5 * np.sin(1.2) ** 2 * np.log(2))
        assert k.w_atom(t=0.3) == pytest.approx(-10 * np.sin(1.2) ** 2)


class TestProbes:
    def test_repulsive(self):
        from conslaw_particles.scenario import Interaction
        rep = Interaction(Wprime=parse("-sign(x)*exp(-abs(x))", {"t", "x"}))
        att = Interaction(Wprime=parse("sign(x)", {"t", "x"}))
        assert probe_repulsive(rep, (0, 1)) is True
        assert probe_repulsive(att, (0, 1)) is False
        # finite differences of W when W' is missing
        assert probe_repulsive(Interaction(W=parse("-abs(x)", {"t", "x"})), (0, 1)) is True

    def test_decay(self):
        assert probe_decay(parse("pos(1 - rho)", {"rho"}), "rho", ()) is True
        assert probe_decay(parse("1/(1 + rho)", {"rho"}), "rho", ()) is True
        assert probe_decay(parse("1", {"rho"}), "rho", ()) is False


import numpy as np  # noqa: E402
