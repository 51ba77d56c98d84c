from __future__ import annotations

import pytest

from artifact.config import ALL_CHECKS, load_config, parse_config
from artifact.errors import ConfigError
from artifact.model import Erlang, PointMass, TabulatedIntensity

from conftest import REFERENCE_CONFIG

MODEL = """[model]
p = 1.5
r = 0.03
mu = 0.08
sigma = 0.3
c = 0.05
M = 2.0
T = 1.0
"""


def test_reference_config_parses():
    cfg = load_config(REFERENCE_CONFIG)
    assert cfg.params.M == 2.0 and cfg.grid.n_x == 60
    assert cfg.solve_pair == (0.05, 0.05)
    assert cfg.refine == ((0.1, 0.1), (0.05, 0.05), (0.025, 0.025))
    assert cfg.verify.checks == ALL_CHECKS
    assert cfg.sim.n_paths == 20000 and cfg.sim.dt == 0.001


def test_defaults_from_model_only():
    cfg = parse_config(MODEL)
    assert cfg.sim.n_paths == 1000 and cfg.grid_spec().delta == 0.05
    assert cfg.verify.heuristics[0] == (0.0, "M")


def test_unknown_key_is_line_anchored():
    text = MODEL + "\n[grid]\nn_s = 10\nn_y = 3\n"
    with pytest.raises(ConfigError, match=r"run.toml:12: \[grid\] n_y: unknown key"):
        parse_config(text, "run.toml")


def test_unknown_section():
    with pytest.raises(ConfigError, match=r":10: \[gird\]"):
        parse_config(MODEL + "\n[gird]\nn_s = 3\n", "x.toml")


def test_type_and_value_errors():
    with pytest.raises(ConfigError, match=r":11: \[sim\] n_paths"):
        parse_config(MODEL + "\n[sim]\nn_paths = 0\n", "x.toml")
    with pytest.raises(ConfigError, match="expected an integer"):
        parse_config(MODEL + "\n[grid]\nn_x = 2.5\n")
    with pytest.raises(ConfigError, match=r"\[model\] mu"):
        parse_config(MODEL.replace("mu = 0.08", 'mu = "high"'))
    with pytest.raises(ConfigError, match="mu must exceed r"):
        parse_config(MODEL.replace("mu = 0.08", "mu = 0.01"))
    with pytest.raises(ConfigError, match="missing key"):
        parse_config(MODEL.replace("c = 0.05\n", ""))
    with pytest.raises(ConfigError):
        parse_config("[model\np = 1")


def test_laws(tmp_path):
    cfg = parse_config(MODEL + '\n[waiting]\nkind = "erlang"\nk = 2\nrate = 1.0\n'
                       '\n[claims]\nkind = "point_mass"\nat = 0.0\n')
    assert cfg.waiting == Erlang(2, 1.0) and cfg.claims == PointMass(0.0)
    (tmp_path / "lam.csv").write_text("0,1\n2,3\n")
    path = tmp_path / "run.toml"
    path.write_text(MODEL + '\n[waiting]\nkind = "tabulated"\ncsv = "lam.csv"\n')
    cfg = load_config(path)
    assert isinstance(cfg.waiting, TabulatedIntensity) and cfg.waiting.values == (1.0, 3.0)
    with pytest.raises(ConfigError, match=r"\[waiting\] rate"):
        parse_config(MODEL + '\n[waiting]\nkind = "exponential"\nrate = -1.0\n')
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(MODEL + '\n[waiting]\nkind = "exponential"\nk = 2\n')


def test_verify_section():
    cfg = parse_config(MODEL + '\n[verify]\nchecks = ["maximizer"]\nheuristics = [[0.5, "p"]]\n'
                       '\n[verify.deterministic]\nc = 0.2\n')
    assert cfg.verify.checks == ("maximizer",) and cfg.verify.deterministic.c == 0.2
    with pytest.raises(ConfigError, match="unknown check"):
        parse_config(MODEL + '\n[verify]\nchecks = ["nope"]\n')
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(MODEL + '\n[verify]\nchecks = ["maximizer", "maximizer"]\n')
    with pytest.raises(ConfigError, match="dividend"):
        parse_config(MODEL + '\n[verify]\nheuristics = [[0.5, "q"]]\n')


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/run.toml")
