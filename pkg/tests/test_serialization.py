import json
import math

import numpy as np
import pytest

from bellconc import catalog
from bellconc.quantum import random_assemblage, sample_haar_state
from bellconc.scenario import Behaviour, Scenario
from bellconc.serialization import (
    ConfigError,
    assemblage_from_dict,
    assemblage_to_dict,
    behaviour_from_dict,
    behaviour_to_dict,
    dumps,
    fmt_float,
    functional_from_dict,
    functional_to_dict,
    load_functional,
    parse_config,
    parse_config_text,
    state_from_dict,
    state_to_dict,
    write_csv,
)

S222 = Scenario(2, 2, 2)


class TestFloats:
    def test_seventeen_digits_round_trip(self):
        rng = np.random.default_rng(0)
        for x in rng.normal(size=200) * 10.0 ** rng.integers(-300, 300, 200):
            assert float(fmt_float(x)) == x

    def test_specials(self):
        assert fmt_float(math.inf) == "Infinity"
        assert fmt_float(-math.inf) == "-Infinity"
        assert fmt_float(math.nan) == "NaN"

    def test_dumps_parses_back(self):
        obj = {"a": [1, 0.1, True, None, "x"], "b": np.float64(1 / 3), "c": np.arange(3)}
        back = json.loads(dumps(obj))
        assert back == {"a": [1, 0.1, True, None, "x"], "b": 1 / 3, "c": [0, 1, 2]}
        assert "0.33333333333333331" in dumps(obj)

    def test_unknown_type(self):
        with pytest.raises(TypeError):
            dumps(object())

    def test_csv_comment_and_precision(self, tmp_path):
        p = tmp_path / "x.csv"
        write_csv(p, ["k", "v"], [[1, 0.1]], comment="manifest: m.json")
        assert p.read_text() == "# manifest: m.json\nk,v\n1,0.10000000000000001\n"


class TestObjects:
    def test_functional_round_trip(self, tmp_path):
        T = catalog.get("i3322").normalized()
        p = tmp_path / "f.json"
        p.write_text(dumps(functional_to_dict(T)))
        back = load_functional(p)
        np.testing.assert_array_equal(back.coeffs, T.coeffs)
        assert back.scenario == T.scenario and back.classical_upper == T.classical_upper

    def test_functional_missing_key(self):
        with pytest.raises(ConfigError, match="entries"):
            functional_from_dict({"scenario": S222.to_dict()})

    def test_functional_bad_entry(self):
        data = {"scenario": S222.to_dict(), "entries": [{"a": [0, 5], "x": [0, 0], "value": 1}]}
        with pytest.raises(ConfigError, match="bad functional"):
            functional_from_dict(data)

    def test_malformed_json_reports_line(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "scenario": {"N": 2,,\n}')
        with pytest.raises(ConfigError, match=r"bad.json:2:"):
            load_functional(p)

    def test_behaviour_round_trip(self):
        p = Behaviour.uniform(S222)
        back = behaviour_from_dict(json.loads(dumps(behaviour_to_dict(p))))
        np.testing.assert_array_equal(back.probs, p.probs)

    def test_behaviour_duplicate_and_missing(self):
        data = behaviour_to_dict(Behaviour.uniform(S222))
        dup = dict(data, entries=data["entries"] + data["entries"][:1])
        with pytest.raises(ConfigError, match="duplicate"):
            behaviour_from_dict(dup)
        with pytest.raises(ConfigError, match="missing"):
            behaviour_from_dict(dict(data, entries=data["entries"][1:]))

    def test_assemblage_and_state_exact(self):
        A = random_assemblage(S222, 3, 1)
        back = assemblage_from_dict(json.loads(dumps(assemblage_to_dict(A, seed=1))))
        assert back.ops.tobytes() == A.ops.tobytes()
        psi = sample_haar_state(2, 3, 2)
        back = state_from_dict(json.loads(dumps(state_to_dict(psi, seed=2))))
        assert back.amplitudes.tobytes() == psi.amplitudes.tobytes()


class TestConfig:
    def test_key_value(self):
        cfg = parse_config_text("# comment\nN = 2\nc=1.5  # inline\nfunctionals = chsh, pent1\nuse_lp = true\n")
        assert cfg == {"N": 2, "c": 1.5, "functionals": ["chsh", "pent1"], "use_lp": True}

    def test_json(self):
        assert parse_config_text('{"N": 3}') == {"N": 3}
        with pytest.raises(ConfigError):
            parse_config_text("{nope")

    def test_line_context(self):
        with pytest.raises(ConfigError, match=r"<config>:2: expected key=value\n    oops"):
            parse_config_text("N=2\noops\n")

    def test_duplicate(self):
        with pytest.raises(ConfigError, match="duplicate key 'N'"):
            parse_config_text("N=2\nN=3\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            parse_config(tmp_path / "none.cfg")
