import math

import pytest

from sublinlab.config import ConfigError, bundled_names, parse_scenario, parse_text

BASE = """
[domain]
shape = interval 0 1
[grid]
resolution = 32
[weight.piece.1]
expr = 1
[nonlinearity]
p = 0.5
"""


def test_bundled_library():
    names = bundled_names()
    assert len(names) >= 12
    for name in names:
        sc = parse_scenario(name)
        assert sc.name == name


def test_interval_basic_round_trip():
    sc = parse_scenario("scenarios/interval_basic.cfg")
    assert sc.kind == "solve" and sc.resolution == 128 and sc.p == 0.5
    assert sc.domain.kind == "interval" and math.isinf(sc.r)


def test_bad_p():
    with pytest.raises(ConfigError, match=r"p must lie in \(0,1\)"):
        parse_text(BASE.replace("p = 0.5", "p = 1.5"))


def test_existence_needs_omega0():
    with pytest.raises(ConfigError, match="omega0"):
        parse_text(BASE + "[pipeline]\nkind = certify-existence\n")


def test_every_violation_listed():
    text = BASE.replace("p = 0.5", "p = 2").replace("resolution = 32", "resolution = two") + "[extra]\nx = 1\n"
    with pytest.raises(ConfigError) as exc:
        parse_text(text + "[pipeline]\nkind = certify-existence\nbogus = 1\n")
    assert len(exc.value.problems) >= 5


@pytest.mark.parametrize("edit", [
    ("expr = 1", "expr = import os"),
    ("shape = interval 0 1", "shape = triangle 0 1"),
    ("[nonlinearity]", "[nonlinearity]\nfamily = cubic"),
    ("[weight.piece.1]", "[weight]\nr = 0.5\n[weight.piece.1]"),
    ("[weight.piece.1]\nexpr = 1", ""),
])
def test_rejections(edit):
    with pytest.raises(ConfigError):
        parse_text(BASE.replace(*edit))


def test_tolerance_overrides():
    sc = parse_text(BASE + "[tolerances]\nresidual = 1e-9\nmax_sweeps = 40\n")
    assert sc.tolerances.residual == 1e-9 and sc.tolerances.max_sweeps == 40
    assert sc.tolerances.linear == 1e-10


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        parse_scenario("/nonexistent/file.cfg")
