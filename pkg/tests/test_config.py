import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spmedoe.config import (PARAMETER_NAMES, ParameterVector, config_from_dict, config_to_dict,
                            dumps_config, load_config, preset_names, replace, save_config)
from spmedoe.errors import ConfigError

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from importlib import resources


def preset_text(name):
    return resources.files("spmedoe.presets").joinpath(f"{name}.toml").read_text()


def test_presets_available():
    assert {"paper", "companion", "p2d_example"} <= set(preset_names())


def test_companion_tables_converted_to_si(companion):
    c = companion.cell
    # constants table, entered in um / pmol units
    assert c.temperature == 298.15
    assert c.faraday_constant == pytest.approx(96487.0, rel=1e-12)
    assert c.gas_constant == pytest.approx(8.314, rel=1e-12)
    assert c.electrode_area == pytest.approx(2.05, rel=1e-12)
    assert c.Rp_p == pytest.approx(2e-6, rel=1e-12) and c.Rp_n == pytest.approx(2e-6, rel=1e-12)
    assert c.cmax_p == pytest.approx(51554.0, rel=1e-12)
    assert c.cmax_n == pytest.approx(30555.0, rel=1e-12)
    assert (c.theta_p_min, c.theta_p_max) == (0.99174, 0.49550)
    assert companion.x0.ce[0] == pytest.approx(1000.0, rel=1e-12)
    # estimated-parameter table (true and initial columns)
    t, i = companion.phi_true, companion.phi_init
    assert t.Dsp == pytest.approx(0.01e-12) and i.Dsp == pytest.approx(0.0055e-12)
    assert t.Dsn == pytest.approx(0.039e-12) and i.Dsn == pytest.approx(0.0457e-12)
    assert t.kp == pytest.approx(0.0233e-9) and i.kp == pytest.approx(0.0248e-9)
    assert t.kn == pytest.approx(0.0503e-9) and i.kn == pytest.approx(0.0372e-9)
    # OCP coefficient tables
    assert c.ocp_positive.coeffs == (-4.656, 88.669, -401.119, 342.909, -462.471, 433.434,
                                     -1.0, 18.933, -79.532, 37.311, -73.083, 95.96)
    assert c.ocp_negative.coeffs == (0.722, 0.138, 0.029, -0.0172, 0.0019, 0.2808,
                                     0.9, -15.0, -0.798, 0.4465, -0.4108)


def test_paper_preset_settings(paper):
    c = paper.campaign
    assert (c.n_experiments, c.experiment_duration, c.M, c.t_s, c.sigma_y2) == (10, 1000.0, 4, 5.0, 0.09e-6)
    assert (paper.design.v_min, paper.design.v_max, paper.design.i_max_c) == (2.5, 4.35, 1.0)
    assert paper.phi_true.p == 1.5 and paper.phi_init.p == 1.6613


@pytest.mark.parametrize("name", ["paper", "companion", "p2d_example"])
def test_round_trip_is_value_identical(name, tmp_path):
    cfg = load_config(name)
    path = tmp_path / "c.toml"
    save_config(cfg, path)
    again = load_config(path)
    assert again == cfg
    assert dumps_config(again) == dumps_config(cfg)


def _without(text, key):
    return "\n".join(l for l in text.splitlines() if not l.strip().startswith(key + " "))


def test_missing_one_c_current_is_an_error():
    text = _without(preset_text("paper"), "one_c_current")
    with pytest.raises(ConfigError) as err:
        config_from_dict(tomllib.loads(text), text)
    assert any("one_c_current" in m for m in err.value.issues)


def test_porosity_out_of_range_reports_field_and_line():
    text = preset_text("paper").replace("eps_p = 0.385", "eps_p = 1.5")
    with pytest.raises(ConfigError) as err:
        config_from_dict(tomllib.loads(text), text)
    line = next(i + 1 for i, l in enumerate(text.splitlines()) if l.startswith("eps_p"))
    assert err.value.issues == [f"cell.eps_p: porosity must lie in (0, 1), got 1.5 [line {line}]"]


def test_all_failures_are_listed_not_first_only():
    text = (preset_text("paper").replace("eps_p = 0.385", "eps_p = 1.5")
            .replace("t_plus = 0.363", "t_plus = 1.2").replace("M = 4", "M = 7"))
    with pytest.raises(ConfigError) as err:
        config_from_dict(tomllib.loads(text), text)
    joined = "\n".join(err.value.issues)
    for field in ("cell.eps_p", "parameters.true.t_plus", "design.M", "campaign.M"):
        assert field in joined


def test_bad_unit_annotation_rejected():
    text = preset_text("companion").replace('unit = "m^2/s"', 'unit = "furlong"', 1)
    with pytest.raises(ConfigError) as err:
        config_from_dict(tomllib.loads(text), text)
    assert any("furlong" in m for m in err.value.issues)


def test_unit_annotation_converts():
    text = preset_text("paper").replace("De = 2.44e-10", 'De = { value = 2.44e-6, unit = "cm^2/s" }')
    cfg = config_from_dict(tomllib.loads(text), text)
    assert cfg.phi_true.De == pytest.approx(2.44e-10, rel=1e-12)


def test_malformed_toml_is_config_error(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[cell\nfoo = ")
    with pytest.raises(ConfigError, match="malformed TOML"):
        load_config(p)


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.toml")


def test_env_var_default(monkeypatch, paper):
    monkeypatch.setenv("SPMEDOE_CONFIG", "paper")
    assert load_config() == paper
    monkeypatch.delenv("SPMEDOE_CONFIG")
    with pytest.raises(ConfigError):
        load_config()


def test_p2d_plant_without_section_is_rejected():
    text = preset_text("paper").replace('plant = "spme"', 'plant = "p2d"')
    with pytest.raises(ConfigError, match="P2D cell parameters required"):
        config_from_dict(tomllib.loads(text), text)


def test_replace_nested(paper):
    cfg = replace(paper, campaign__n_experiments=3, design__M=2)
    assert cfg.campaign.n_experiments == 3 and cfg.design.M == 2
    assert cfg.cell == paper.cell


def test_parameter_vector_array_order():
    v = ParameterVector.from_array(np.arange(1, 8))
    assert [getattr(v, n) for n in PARAMETER_NAMES] == list(range(1, 8))
    with pytest.raises(ValueError):
        ParameterVector.from_array([1, 2])


@given(st.lists(st.floats(0.2, 5.0), min_size=7, max_size=7),
       st.floats(0.05, 0.95), st.integers(1, 50))
def test_round_trip_property(scales, eps_p, n_exp):
    base = load_config("paper")
    phi = ParameterVector.from_array(base.phi_true.as_array() * np.array(scales))
    if not 0 < phi.t_plus < 1:
        phi = ParameterVector.from_array(np.r_[phi.p, 0.5, phi.as_array()[2:]])
    cfg = replace(base, phi_true=phi, campaign__n_experiments=n_exp,
                  cell=replace(base.cell, eps_p=eps_p) if eps_p + base.cell.epsf_p < 1 else base.cell)
    again = config_from_dict(tomllib.loads(dumps_config(cfg)))
    assert again == cfg
    assert all(math.isclose(a, b, rel_tol=0, abs_tol=0)
               for a, b in zip(again.phi_true.as_array(), cfg.phi_true.as_array()))


def test_config_to_dict_is_si(companion):
    d = config_to_dict(companion)
    assert d["unit_system"] == "SI"
    assert d["cell"]["cmax_p"] == pytest.approx(51554.0)
