import math

import pytest
from hypothesis import given, strategies as st

from cavityjumps.errors import ParameterError
from cavityjumps.params import (JumpRates, SystemParams, cooperativity, default_params,
                                load_params, parse_config_text, to_angular)


def test_defaults():
    p = default_params()
    assert (p.g_mhz, p.kappa_mhz, p.gamma_mhz) == (10.0, 0.4, 2.6)
    assert p.delta_ca_mhz == 44.0 and p.delta_pc_mhz == 0.0
    assert p.n_empty == 0.3 and p.det_eff == 0.013
    assert p.bin_ms == 2.0 and p.n_atoms == 1


def test_default_count_rate_is_about_20_per_ms():
    # 2 kappa n det_eff with kappa = 2 pi 0.4 MHz
    rate = default_params().empty_count_rate_per_ms()
    assert rate == pytest.approx(2 * 2 * math.pi * 0.4 * 0.3 * 1e3 * 0.013)
    assert 18 < rate < 22


@pytest.mark.parametrize("g, expected", [(8.0, 64 / (2 * 0.4 * 2.6)), (0.0, 0.0), (13.0, 169 / 2.08)])
def test_cooperativity(g, expected):
    assert cooperativity(default_params().replace(g_mhz=g)) == pytest.approx(expected, rel=1e-12)


def test_cooperativity_values():
    assert cooperativity(SystemParams(g_mhz=8.0)) == pytest.approx(30.77, abs=5e-3)
    assert cooperativity(SystemParams(g_mhz=13.0)) == pytest.approx(81.25, rel=1e-12)
    assert cooperativity(default_params()) > 30


def test_angular_conversion():
    assert to_angular(1.0) == pytest.approx(2 * math.pi)


@pytest.mark.parametrize("change", [
    {"kappa_mhz": 0.0}, {"gamma_mhz": -1.0}, {"n_empty": 0.0}, {"det_eff": 0.0},
    {"det_eff": 1.5}, {"n_atoms": 3}, {"g_mhz": -1.0}, {"bin_ms": 0.0},
    {"delta_ca_mhz": math.nan},
])
def test_invalid_params_rejected(change):
    with pytest.raises(ParameterError):
        default_params().replace(**change)


def test_jump_rates():
    r = JumpRates()
    assert (r.r_4to3, r.r_3to4) == (106.0, 42.0)
    assert r.p_f4 == pytest.approx(42 / 148)
    assert JumpRates(10.0, 0.0).p_f4 == 0.0
    with pytest.raises(ParameterError):
        JumpRates(0.0, 1.0)
    with pytest.raises(ParameterError):
        JumpRates(1.0, -1.0)


@given(st.floats(0.0, 50.0), st.floats(0.01, 5.0), st.floats(0.01, 10.0))
def test_cooperativity_formula(g, kappa, gamma):
    p = SystemParams(g_mhz=g, kappa_mhz=kappa, gamma_mhz=gamma)
    assert cooperativity(p) == pytest.approx(g * g / (2 * kappa * gamma), rel=1e-12)


@given(st.floats(0.01, 5.0))
def test_drive_calibration(n):
    p = default_params().replace(n_empty=n)
    assert p.drive_eta_mhz() ** 2 == pytest.approx(n * p.kappa_mhz**2, rel=1e-12)


def test_config_file(tmp_path):
    f = tmp_path / "p.cfg"
    f.write_text("# comment\ng_mhz = 12  # trailing\n\nn_atoms = 2\n")
    p = load_params(f)
    assert p.g_mhz == 12.0 and p.n_atoms == 2 and p.kappa_mhz == 0.4


@pytest.mark.parametrize("text, line", [
    ("g_mhz = 1\nfoo = 2\n", 2),
    ("g_mhz = 1\ng_mhz = 2\n", 2),
    ("\n\nnot a pair\n", 3),
    ("kappa_mhz = abc\n", 1),
    ("g_mhz = 3\ndet_eff = 2\n", 2),
])
def test_config_errors_carry_line(tmp_path, text, line):
    f = tmp_path / "bad.cfg"
    f.write_text(text)
    with pytest.raises(ParameterError) as info:
        load_params(f)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)


def test_parse_config_text():
    assert parse_config_text("a = 1\n# x\nb=2") == {"a": ("1", 1), "b": ("2", 3)}
