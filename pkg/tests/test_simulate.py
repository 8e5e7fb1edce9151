import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from spmedoe.config import IntegratorConfig, load_preset
from spmedoe.errors import SaturationError
from spmedoe.model import electrolyte_lithium, output_voltage, spme_rhs
from spmedoe.simulate import (advance, propagate_states, read_series, simulate, transition,
                              write_trajectory)


def cc(cfg, seconds, rate=1.0):
    return np.full(int(seconds / 5), rate * cfg.cell.one_c_current)


@pytest.mark.parametrize("method", ["exact", "bdf1", "bdf2"])
def test_zero_input_is_constant(paper, method):
    """Rest from equilibrium stays put to a few ulps over 1000 samples."""
    x0 = paper.x0.as_array()
    tr = simulate(paper.x0, np.zeros(1000), paper.phi_true, paper.cell, 5.0, IntegratorConfig(method))
    ulp = np.spacing(np.abs(x0))
    assert np.all(np.abs(tr.states - x0) <= 8 * ulp)
    v_ocv = output_voltage(x0, 0.0, paper.phi_true, paper.cell)
    np.testing.assert_allclose(tr.outputs, v_ocv, rtol=0, atol=1e-13)


def test_trajectory_shapes_and_times(paper):
    tr = simulate(paper.x0, cc(paper, 100), paper.phi_true, paper.cell, 5.0)
    assert len(tr) == 20 and tr.states.shape == (20, paper.cell.n_state)
    np.testing.assert_array_equal(np.diff(tr.times), 5.0)
    assert tr.times[0] == 0.0


@given(st.lists(st.floats(-40, 40), min_size=1, max_size=60))
def test_cathode_average_is_charge_integral(u):
    cfg = load_preset("paper")
    c = cfg.cell
    u = np.asarray(u)
    X = propagate_states(cfg.x0, u, cfg.phi_true, c, 5.0)
    expected = 3.0 / (c.Rp_p * c.faraday_constant * c.electrode_area * c.L_p * c.a_p) * np.sum(u) * 5.0
    assert X[-1, 0] - X[0, 0] == pytest.approx(expected, rel=1e-9, abs=1e-9 * X[0, 0])


@given(st.lists(st.floats(-40, 40), min_size=1, max_size=40))
def test_electrolyte_lithium_conserved_along_trajectory(u):
    cfg = load_preset("paper")
    X = propagate_states(cfg.x0, np.asarray(u), cfg.phi_true, cfg.cell, 5.0)
    total = [electrolyte_lithium(x, cfg.cell) for x in X]
    assert np.max(np.abs(np.diff(total))) <= 1e-8 * total[0]


def test_exact_map_matches_independent_ode_solver(paper):
    """Zero-order-hold map against scipy's Radau with tight tolerances."""
    x0 = paper.x0.as_array()
    I = paper.cell.one_c_current
    sol = solve_ivp(lambda t, x: spme_rhs(x, I, paper.phi_true, paper.cell), (0, 200.0), x0,
                    method="Radau", rtol=1e-11, atol=1e-9)
    x_exact = advance(x0, I, 200.0, paper.phi_true, paper.cell)
    np.testing.assert_allclose(x_exact, sol.y[:, -1], rtol=1e-7, atol=1e-6)


def rms(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


def test_cc_discharge_self_convergence_exact(paper):
    """1C, 1000 s with the default map vs the same map composed over 0.5 s substeps."""
    u = cc(paper, 1000)
    coarse = simulate(paper.x0, u, paper.phi_true, paper.cell, 5.0).outputs
    fine = simulate(paper.x0, np.repeat(u, 10), paper.phi_true, paper.cell, 0.5).outputs[::10]
    assert rms(coarse, fine) < 1e-6


@pytest.mark.parametrize("method", ["bdf1", "bdf2"])
def test_cc_discharge_self_convergence_bdf(paper, method):
    """Default internal step vs a 10x finer one, 1C for 1000 s."""
    u = cc(paper, 1000)
    dt = IntegratorConfig().dt
    coarse = simulate(paper.x0, u, paper.phi_true, paper.cell, 5.0, IntegratorConfig(method, dt=dt)).outputs
    fine = simulate(paper.x0, u, paper.phi_true, paper.cell, 5.0, IntegratorConfig(method, dt=dt / 10)).outputs
    tol = 1e-6 if method == "bdf2" else 1e-4
    assert rms(coarse, fine) < tol


@pytest.mark.parametrize("method,order", [("bdf1", 1.0), ("bdf2", 2.0)])
def test_observed_order(paper, method, order):
    u = cc(paper, 200)
    ref = simulate(paper.x0, u, paper.phi_true, paper.cell, 5.0).outputs
    errs = [np.max(np.abs(simulate(paper.x0, u, paper.phi_true, paper.cell, 5.0,
                                   IntegratorConfig(method, dt=dt)).outputs - ref))
            for dt in (1.0, 0.5, 0.25)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > order - 0.3)


def test_halving_step_changes_output_below_tolerance(paper):
    u = cc(paper, 500)
    a = simulate(paper.x0, u, paper.phi_true, paper.cell, 5.0, IntegratorConfig("bdf2", dt=0.25)).outputs
    b = simulate(paper.x0, u, paper.phi_true, paper.cell, 5.0, IntegratorConfig("bdf2", dt=0.125)).outputs
    assert rms(a, b) < 1e-6


def test_transition_is_cached(paper):
    a = transition(paper.phi_true, paper.cell, 5.0)
    assert transition(paper.phi_true, paper.cell, 5.0) is a
    assert not a[0].flags.writeable


def test_saturation_reports_time(paper):
    with pytest.raises(SaturationError) as err:
        simulate(paper.x0, cc(paper, 2000, rate=3.0), paper.phi_true, paper.cell, 5.0)
    assert err.value.time is not None and 0 < err.value.time < 2000


def test_trajectory_file_round_trip(paper, tmp_path):
    tr = simulate(paper.x0, cc(paper, 50), paper.phi_true, paper.cell, 5.0)
    path = tmp_path / "t.csv"
    write_trajectory(path, tr, paper.cell, include_states=True)
    head = path.read_text().splitlines()[0].split(",")
    assert head[:4] == ["time_s", "current_A", "voltage_V", "soc_pct"]
    data = read_series(path)
    np.testing.assert_array_equal(data["voltage_V"], tr.outputs)
    np.testing.assert_array_equal(data["x0"], tr.states[:, 0])
